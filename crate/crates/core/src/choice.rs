//! Demand families and their choice probabilities, expected revenue, and
//! elasticity matrices.
//!
//! Five families are supported: multinomial logit (MNL), nested logit (NL),
//! finite-mixture MNL, iso-elastic, and linear demand. Logit families carry a
//! no-purchase outside option with utility 0; iso-elastic and linear demand
//! treat the residual mass as the outside share, rescaling when inside demand
//! exceeds one.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema version written into serialized spec documents.
pub const SPEC_SCHEMA_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum ChoiceError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("non-positive price {price} for iso-elastic product {index}")]
    NonPositivePrice { index: usize, price: f64 },
    #[error("analytic elasticity is only available for MNL")]
    UnsupportedMode,
    #[error("singular demand: q_{0} = 0, elasticity undefined")]
    SingularDemand(usize),
    #[error("price vector length {got} does not match K = {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("schema version {0} not supported (expected {SPEC_SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("spec document parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// One component of a finite MNL mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub alpha: Vec<f64>,
    pub beta: f64,
}

/// Demand family plus its parameters.
///
/// Logit families use the convention `utility = alpha_k - beta * p_k` with
/// `beta > 0`. Loaders for the opposite sign convention (`alpha + beta * p`
/// with negative beta) should negate beta at the boundary; see
/// [`ChoiceModelSpec::nested_logit_signed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ChoiceModelSpec {
    #[serde(rename = "MNL")]
    Mnl { alpha: Vec<f64>, beta: f64 },
    NestedLogit {
        alpha: Vec<f64>,
        beta: f64,
        nest_assignments: Vec<usize>,
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau_nest: Option<BTreeMap<usize, f64>>,
    },
    #[serde(rename = "MixedMNL")]
    MixedMnl { mixture: Vec<MixtureComponent> },
    IsoElastic {
        /// Per-product (a_k, e_k) with a_k > 0, e_k < 0; demand a_k * p^e_k.
        iso_coeffs: Vec<(f64, f64)>,
    },
    Linear {
        /// Per-product (a_k, b_k) with b_k > 0; demand a_k - b_k * p.
        linear_coeffs: Vec<(f64, f64)>,
    },
}

/// Versioned wrapper used for on-disk spec documents.
#[derive(Serialize, Deserialize)]
struct SpecDocument {
    schema_version: u32,
    #[serde(flatten)]
    spec: ChoiceModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceProbabilities {
    pub inside: Vec<f64>,
    pub outside: f64,
}

/// K x K matrix with `E[j][k] = (p_k / q_j) * dq_j/dp_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityMatrix {
    pub e: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElasticityMode {
    Analytic,
    FiniteDifference,
}

impl ElasticityMatrix {
    pub fn k(&self) -> usize {
        self.e.len()
    }

    /// Own-price elasticities (the diagonal).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.e.len()).map(|i| self.e[i][i]).collect()
    }
}

impl ChoiceModelSpec {
    /// Number of products.
    pub fn k(&self) -> usize {
        match self {
            ChoiceModelSpec::Mnl { alpha, .. } => alpha.len(),
            ChoiceModelSpec::NestedLogit { alpha, .. } => alpha.len(),
            ChoiceModelSpec::MixedMnl { mixture } => {
                mixture.first().map_or(0, |c| c.alpha.len())
            }
            ChoiceModelSpec::IsoElastic { iso_coeffs } => iso_coeffs.len(),
            ChoiceModelSpec::Linear { linear_coeffs } => linear_coeffs.len(),
        }
    }

    /// Builds a nested-logit spec from the signed convention where utility is
    /// `alpha + beta * p` with every beta negative. Scalar beta only.
    pub fn nested_logit_signed(
        alpha: Vec<f64>,
        beta_signed: f64,
        nest_assignments: Vec<usize>,
        lambda: f64,
        tau_nest: Option<BTreeMap<usize, f64>>,
    ) -> Result<Self, ChoiceError> {
        if beta_signed >= 0.0 {
            return Err(ChoiceError::InvalidSpec(
                "signed convention requires beta < 0".into(),
            ));
        }
        let spec = ChoiceModelSpec::NestedLogit {
            alpha,
            beta: -beta_signed,
            nest_assignments,
            lambda,
            tau_nest,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ChoiceError> {
        if self.k() == 0 {
            return Err(ChoiceError::InvalidSpec("K must be >= 1".into()));
        }
        match self {
            ChoiceModelSpec::Mnl { beta, .. } => {
                if *beta <= 0.0 {
                    return Err(ChoiceError::InvalidSpec("beta must be > 0".into()));
                }
            }
            ChoiceModelSpec::NestedLogit {
                alpha,
                beta,
                nest_assignments,
                lambda,
                ..
            } => {
                if *beta <= 0.0 {
                    return Err(ChoiceError::InvalidSpec("beta must be > 0".into()));
                }
                if !(*lambda > 0.0 && *lambda <= 1.0) {
                    return Err(ChoiceError::InvalidSpec(
                        "lambda must lie in (0, 1]".into(),
                    ));
                }
                if nest_assignments.len() != alpha.len() {
                    return Err(ChoiceError::InvalidSpec(
                        "nest_assignments length must equal K".into(),
                    ));
                }
            }
            ChoiceModelSpec::MixedMnl { mixture } => {
                if mixture.is_empty() {
                    return Err(ChoiceError::InvalidSpec("empty mixture".into()));
                }
                let wsum: f64 = mixture.iter().map(|c| c.weight).sum();
                if (wsum - 1.0).abs() > 1e-9 {
                    return Err(ChoiceError::InvalidSpec(format!(
                        "mixture weights sum to {wsum}, expected 1"
                    )));
                }
                let k = mixture[0].alpha.len();
                for c in mixture {
                    if c.alpha.len() != k {
                        return Err(ChoiceError::InvalidSpec(
                            "mixture components disagree on K".into(),
                        ));
                    }
                    if c.beta <= 0.0 {
                        return Err(ChoiceError::InvalidSpec("beta must be > 0".into()));
                    }
                }
            }
            ChoiceModelSpec::IsoElastic { iso_coeffs } => {
                for (i, (a, e)) in iso_coeffs.iter().enumerate() {
                    if *a <= 0.0 {
                        return Err(ChoiceError::InvalidSpec(format!(
                            "iso coefficient a_{i} must be > 0"
                        )));
                    }
                    if *e >= 0.0 {
                        return Err(ChoiceError::InvalidSpec(format!(
                            "iso exponent e_{i} must be < 0"
                        )));
                    }
                }
            }
            ChoiceModelSpec::Linear { linear_coeffs } => {
                for (i, (_, b)) in linear_coeffs.iter().enumerate() {
                    if *b <= 0.0 {
                        return Err(ChoiceError::InvalidSpec(format!(
                            "linear slope b_{i} must be > 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes to a versioned JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SpecDocument {
            schema_version: SPEC_SCHEMA_VERSION,
            spec: self.clone(),
        })
        .expect("spec serialization cannot fail")
    }

    /// Parses a versioned JSON document written by [`Self::to_json`].
    pub fn from_json(text: &str) -> Result<Self, ChoiceError> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        if doc.schema_version != SPEC_SCHEMA_VERSION {
            return Err(ChoiceError::SchemaVersion(doc.schema_version));
        }
        doc.spec.validate()?;
        Ok(doc.spec)
    }
}

fn check_dims(spec: &ChoiceModelSpec, p: &[f64]) -> Result<(), ChoiceError> {
    spec.validate()?;
    if p.len() != spec.k() {
        return Err(ChoiceError::DimensionMismatch {
            got: p.len(),
            expected: spec.k(),
        });
    }
    Ok(())
}

fn mnl_probs(alpha: &[f64], beta: f64, p: &[f64]) -> ChoiceProbabilities {
    // Outside utility is 0; shift by the max utility for overflow safety.
    let utils: Vec<f64> = alpha
        .iter()
        .zip(p)
        .map(|(a, pk)| a - beta * pk)
        .collect();
    let m = utils.iter().copied().fold(0.0f64, f64::max);
    let exps: Vec<f64> = utils.iter().map(|u| (u - m).exp()).collect();
    let denom = (-m).exp() + exps.iter().sum::<f64>();
    ChoiceProbabilities {
        inside: exps.iter().map(|e| e / denom).collect(),
        outside: (-m).exp() / denom,
    }
}

fn nested_logit_probs(
    alpha: &[f64],
    beta: f64,
    nest_assignments: &[usize],
    lambda: f64,
    tau_nest: Option<&BTreeMap<usize, f64>>,
    p: &[f64],
) -> ChoiceProbabilities {
    let k = alpha.len();
    let mut alpha_eff = alpha.to_vec();
    if let Some(taus) = tau_nest {
        for (i, &nest) in nest_assignments.iter().enumerate() {
            if let Some(tau) = taus.get(&nest) {
                alpha_eff[i] *= 1.0 + tau;
            }
        }
    }
    let utils: Vec<f64> = alpha_eff
        .iter()
        .zip(p)
        .map(|(a, pk)| a - beta * pk)
        .collect();

    let mut nests: Vec<usize> = nest_assignments.to_vec();
    nests.sort_unstable();
    nests.dedup();

    // Within-nest softmax at temperature lambda, nest shares via S_m^lambda.
    let mut cond = vec![0.0; k];
    let mut nest_sums = Vec::with_capacity(nests.len());
    for &m in &nests {
        let idx: Vec<usize> = nest_assignments
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == m)
            .map(|(i, _)| i)
            .collect();
        let s: f64 = idx.iter().map(|&i| (utils[i] / lambda).exp()).sum();
        for &i in &idx {
            cond[i] = (utils[i] / lambda).exp() / s;
        }
        nest_sums.push((m, s));
    }
    let denom: f64 = nest_sums.iter().map(|(_, s)| s.powf(lambda)).sum::<f64>() + 1.0;
    let mut inside = vec![0.0; k];
    for (m, s) in &nest_sums {
        let nest_share = s.powf(lambda) / denom;
        for (i, &n) in nest_assignments.iter().enumerate() {
            if n == *m {
                inside[i] = nest_share * cond[i];
            }
        }
    }
    ChoiceProbabilities {
        inside,
        outside: 1.0 / denom,
    }
}

/// Raw per-product demands clamped to [0, 1]; rescaled when inside mass
/// exceeds one so that q remains a probability vector with a residual
/// outside share.
fn residual_mass(raw: Vec<f64>) -> ChoiceProbabilities {
    let clamped: Vec<f64> = raw.iter().map(|q| q.clamp(0.0, 1.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total > 1.0 {
        let inside: Vec<f64> = clamped.iter().map(|q| q / total).collect();
        ChoiceProbabilities {
            inside,
            outside: 0.0,
        }
    } else {
        ChoiceProbabilities {
            inside: clamped,
            outside: (1.0 - total).max(0.0),
        }
    }
}

/// Choice probabilities of every inside product plus the outside option.
pub fn choice_probs(
    spec: &ChoiceModelSpec,
    p: &[f64],
) -> Result<ChoiceProbabilities, ChoiceError> {
    check_dims(spec, p)?;
    match spec {
        ChoiceModelSpec::Mnl { alpha, beta } => Ok(mnl_probs(alpha, *beta, p)),
        ChoiceModelSpec::NestedLogit {
            alpha,
            beta,
            nest_assignments,
            lambda,
            tau_nest,
        } => Ok(nested_logit_probs(
            alpha,
            *beta,
            nest_assignments,
            *lambda,
            tau_nest.as_ref(),
            p,
        )),
        ChoiceModelSpec::MixedMnl { mixture } => {
            let k = spec.k();
            let mut inside = vec![0.0; k];
            let mut outside = 0.0;
            for c in mixture {
                let probs = mnl_probs(&c.alpha, c.beta, p);
                for (acc, q) in inside.iter_mut().zip(&probs.inside) {
                    *acc += c.weight * q;
                }
                outside += c.weight * probs.outside;
            }
            Ok(ChoiceProbabilities { inside, outside })
        }
        ChoiceModelSpec::IsoElastic { iso_coeffs } => {
            for (i, pk) in p.iter().enumerate() {
                if *pk <= 0.0 {
                    return Err(ChoiceError::NonPositivePrice {
                        index: i,
                        price: *pk,
                    });
                }
            }
            let raw = iso_coeffs
                .iter()
                .zip(p)
                .map(|((a, e), pk)| a * pk.powf(*e))
                .collect();
            Ok(residual_mass(raw))
        }
        ChoiceModelSpec::Linear { linear_coeffs } => {
            let raw = linear_coeffs
                .iter()
                .zip(p)
                .map(|((a, b), pk)| a - b * pk)
                .collect();
            Ok(residual_mass(raw))
        }
    }
}

/// Expected per-transaction revenue `sum_k p_k * q_k(p)`.
pub fn expected_revenue(spec: &ChoiceModelSpec, p: &[f64]) -> Result<f64, ChoiceError> {
    let q = choice_probs(spec, p)?;
    Ok(p.iter().zip(&q.inside).map(|(pk, qk)| pk * qk).sum())
}

/// Finite-difference step for price coordinate `p_k`.
pub fn fd_step(pk: f64) -> f64 {
    (1e-5f64).max(1e-5 * pk.abs())
}

/// Demand elasticity matrix, analytic (MNL only) or by central differences.
pub fn elasticity_matrix(
    spec: &ChoiceModelSpec,
    p: &[f64],
    mode: ElasticityMode,
) -> Result<ElasticityMatrix, ChoiceError> {
    check_dims(spec, p)?;
    let k = spec.k();
    match mode {
        ElasticityMode::Analytic => match spec {
            ChoiceModelSpec::Mnl { beta, .. } => {
                let q = choice_probs(spec, p)?;
                let mut e = vec![vec![0.0; k]; k];
                for j in 0..k {
                    if q.inside[j] == 0.0 {
                        return Err(ChoiceError::SingularDemand(j));
                    }
                    for col in 0..k {
                        e[j][col] = if j == col {
                            -beta * p[col] * (1.0 - q.inside[col])
                        } else {
                            beta * p[col] * q.inside[col]
                        };
                    }
                }
                Ok(ElasticityMatrix { e })
            }
            _ => Err(ChoiceError::UnsupportedMode),
        },
        ElasticityMode::FiniteDifference => {
            let q = choice_probs(spec, p)?;
            for (j, qj) in q.inside.iter().enumerate() {
                if *qj == 0.0 {
                    return Err(ChoiceError::SingularDemand(j));
                }
            }
            let mut e = vec![vec![0.0; k]; k];
            let mut work = p.to_vec();
            for col in 0..k {
                let h = fd_step(p[col]);
                work[col] = p[col] + h;
                let plus = choice_probs(spec, &work)?;
                work[col] = p[col] - h;
                let minus = choice_probs(spec, &work)?;
                work[col] = p[col];
                for j in 0..k {
                    let dq = (plus.inside[j] - minus.inside[j]) / (2.0 * h);
                    e[j][col] = p[col] / q.inside[j] * dq;
                }
            }
            Ok(ElasticityMatrix { e })
        }
    }
}

/// Samples one chosen alternative; 0 is the outside option, inside products
/// are 1..=K.
pub fn simulate_choice<R: Rng>(
    spec: &ChoiceModelSpec,
    p: &[f64],
    rng: &mut R,
) -> Result<usize, ChoiceError> {
    let q = choice_probs(spec, p)?;
    let u: f64 = rng.gen();
    let mut acc = q.outside;
    if u < acc {
        return Ok(0);
    }
    for (i, qk) in q.inside.iter().enumerate() {
        acc += qk;
        if u < acc {
            return Ok(i + 1);
        }
    }
    // Rounding can leave a sliver at the top; attribute it to the last
    // positive-probability alternative.
    Ok(q.inside
        .iter()
        .rposition(|&qk| qk > 0.0)
        .map(|i| i + 1)
        .unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mnl(alpha: Vec<f64>, beta: f64) -> ChoiceModelSpec {
        ChoiceModelSpec::Mnl { alpha, beta }
    }

    #[test]
    fn mnl_single_product_symmetric() {
        let q = choice_probs(&mnl(vec![0.0], 1.0), &[0.0]).unwrap();
        assert_abs_diff_eq!(q.inside[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(q.outside, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mnl_equal_utilities_split_three_ways() {
        let q = choice_probs(&mnl(vec![1.0, 1.0], 1.0), &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(q.inside[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.inside[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.outside, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn nl_single_nest_unit_lambda_matches_mnl() {
        let alpha = vec![0.3, -0.2, 1.1];
        let nl = ChoiceModelSpec::NestedLogit {
            alpha: alpha.clone(),
            beta: 1.3,
            nest_assignments: vec![0, 0, 0],
            lambda: 1.0,
            tau_nest: None,
        };
        let m = mnl(alpha, 1.3);
        for p in [[0.5, 1.0, 2.0], [0.0, 0.0, 0.0], [3.0, 0.1, 1.7]] {
            let qn = choice_probs(&nl, &p).unwrap();
            let qm = choice_probs(&m, &p).unwrap();
            for (a, b) in qn.inside.iter().zip(&qm.inside) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(qn.outside, qm.outside, epsilon = 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one_for_logit_families() {
        let specs = vec![
            mnl(vec![1.0, -0.5, 0.2], 2.0),
            ChoiceModelSpec::NestedLogit {
                alpha: vec![1.0, -0.5, 0.2],
                beta: 2.0,
                nest_assignments: vec![0, 1, 0],
                lambda: 0.6,
                tau_nest: None,
            },
            ChoiceModelSpec::MixedMnl {
                mixture: vec![
                    MixtureComponent {
                        weight: 0.4,
                        alpha: vec![1.0, 0.0, 0.5],
                        beta: 1.0,
                    },
                    MixtureComponent {
                        weight: 0.6,
                        alpha: vec![-0.3, 0.8, 0.1],
                        beta: 2.5,
                    },
                ],
            },
        ];
        for spec in &specs {
            let q = choice_probs(spec, &[0.7, 1.2, 0.4]).unwrap();
            let total = q.outside + q.inside.iter().sum::<f64>();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn expected_revenue_examples() {
        assert_abs_diff_eq!(
            expected_revenue(&mnl(vec![0.0], 1.0), &[0.0]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            expected_revenue(&mnl(vec![1.0, 1.0], 1.0), &[1.0, 1.0]).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        // p * e^{-p} / (1 + e^{-p}) at p = 1.2785.
        let p: f64 = 1.2785;
        let expected = p * (-p).exp() / (1.0 + (-p).exp());
        assert_abs_diff_eq!(
            expected_revenue(&mnl(vec![0.0], 1.0), &[p]).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected, 0.2785, epsilon = 2e-4);
    }

    #[test]
    fn own_elasticity_is_minus_one_at_the_single_product_optimum() {
        let e = elasticity_matrix(&mnl(vec![0.0], 1.0), &[1.2785], ElasticityMode::Analytic)
            .unwrap();
        assert_abs_diff_eq!(e.e[0][0], -1.0, epsilon = 1e-3);
    }

    #[test]
    fn cross_elasticities_are_positive_for_mnl() {
        let e = elasticity_matrix(
            &mnl(vec![0.5, -0.2], 1.5),
            &[0.8, 1.3],
            ElasticityMode::Analytic,
        )
        .unwrap();
        assert!(e.e[0][1] > 0.0);
        assert!(e.e[1][0] > 0.0);
    }

    #[test]
    fn analytic_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = rng.gen_range(1..=4);
            let alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let beta = rng.gen_range(0.5..3.0);
            let p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..2.5)).collect();
            let spec = mnl(alpha, beta);
            let a = elasticity_matrix(&spec, &p, ElasticityMode::Analytic).unwrap();
            let f = elasticity_matrix(&spec, &p, ElasticityMode::FiniteDifference).unwrap();
            for j in 0..k {
                for col in 0..k {
                    assert_abs_diff_eq!(a.e[j][col], f.e[j][col], epsilon = 1e-4);
                }
            }
        }
    }

    #[test]
    fn iso_elastic_fd_own_elasticity_matches_exponent() {
        let spec = ChoiceModelSpec::IsoElastic {
            iso_coeffs: vec![(0.5, -2.0)],
        };
        // Clamp inactive: q = 0.5 * p^-2 < 1 at p = 1.5.
        let e = elasticity_matrix(&spec, &[1.5], ElasticityMode::FiniteDifference).unwrap();
        assert_abs_diff_eq!(e.e[0][0], -2.0, epsilon = 1e-3);
    }

    #[test]
    fn iso_elastic_rejects_non_positive_price() {
        let spec = ChoiceModelSpec::IsoElastic {
            iso_coeffs: vec![(0.5, -2.0)],
        };
        assert!(matches!(
            choice_probs(&spec, &[0.0]),
            Err(ChoiceError::NonPositivePrice { .. })
        ));
    }

    #[test]
    fn empty_mixture_is_invalid() {
        let spec = ChoiceModelSpec::MixedMnl { mixture: vec![] };
        assert!(matches!(
            choice_probs(&spec, &[]),
            Err(ChoiceError::InvalidSpec(_))
        ));
    }

    #[test]
    fn analytic_unsupported_for_non_mnl() {
        let spec = ChoiceModelSpec::Linear {
            linear_coeffs: vec![(1.0, 0.5)],
        };
        assert!(matches!(
            elasticity_matrix(&spec, &[1.0], ElasticityMode::Analytic),
            Err(ChoiceError::UnsupportedMode)
        ));
    }

    #[test]
    fn probabilities_nonincreasing_in_own_price() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = mnl(vec![0.4, 1.1], 1.7);
        for _ in 0..50 {
            let lo = rng.gen_range(0.0..2.0);
            let hi = lo + rng.gen_range(0.01..1.0);
            let other = rng.gen_range(0.0..2.0);
            let q_lo = choice_probs(&spec, &[lo, other]).unwrap();
            let q_hi = choice_probs(&spec, &[hi, other]).unwrap();
            assert!(q_hi.inside[0] <= q_lo.inside[0]);
        }
    }

    #[test]
    fn simulate_choice_degenerate_and_deterministic() {
        // Prices so high the outside option dominates completely.
        let spec = mnl(vec![0.0, 0.0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(simulate_choice(&spec, &[800.0, 800.0], &mut rng).unwrap(), 0);
        }
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| simulate_choice(&spec, &[1.0, 1.5], &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn simulate_choice_frequencies_match_probabilities() {
        let spec = mnl(vec![1.0, 1.0], 1.0);
        let p = [1.0, 1.0]; // thirds
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[simulate_choice(&spec, &p, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert_abs_diff_eq!(c as f64 / n as f64, 1.0 / 3.0, epsilon = 0.01);
        }
    }

    #[test]
    fn spec_json_round_trip_with_schema_version() {
        let spec = ChoiceModelSpec::NestedLogit {
            alpha: vec![1.0, 2.0],
            beta: 0.8,
            nest_assignments: vec![0, 1],
            lambda: 0.5,
            tau_nest: None,
        };
        let text = spec.to_json();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("\"family\": \"NestedLogit\""));
        assert_eq!(ChoiceModelSpec::from_json(&text).unwrap(), spec);
    }

    #[test]
    fn signed_loader_negates_beta() {
        let spec = ChoiceModelSpec::nested_logit_signed(
            vec![0.0],
            -1.0,
            vec![0],
            1.0,
            None,
        )
        .unwrap();
        match spec {
            ChoiceModelSpec::NestedLogit { beta, .. } => assert_eq!(beta, 1.0),
            _ => unreachable!(),
        }
        assert!(ChoiceModelSpec::nested_logit_signed(vec![0.0], 1.0, vec![0], 1.0, None)
            .is_err());
    }
}
