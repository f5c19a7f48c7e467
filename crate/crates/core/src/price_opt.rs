//! Optimal price labels for the demand families and checks of the optimality
//! conditions.
//!
//! MNL and nested-logit labels come from a damped fixed-point search on
//! aggregate revenue (exact for MNL, a fast heuristic for NL). The remaining
//! families use multi-start Nelder-Mead inside a box. `foc_residual` and
//! `lerner_gap` verify first-order optimality of any candidate price.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{
    choice_probs, elasticity_matrix, expected_revenue, fd_step, ChoiceError, ChoiceModelSpec,
    ElasticityMode,
};

#[derive(Error, Debug)]
pub enum PriceOptError {
    #[error("fixed-point solver only supports MNL and NestedLogit")]
    UnsupportedFamily,
    #[error("failed to bracket the aggregate-revenue fixed point")]
    BracketingFailed,
    #[error("invalid bounds: lower {lower} > upper {upper} at index {index}")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("price equals cost for product {0}; Lerner gap undefined")]
    PriceEqualsCost(usize),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    FixedPoint,
    Bisection,
    NelderMead,
}

/// A solved price recommendation with its realized shares and revenue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceLabel {
    pub price: Vec<f64>,
    pub revenue: f64,
    pub q_in: Vec<f64>,
    pub q_out: f64,
    pub method: SolveMethod,
}

/// Unit costs; defaults to all-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    pub c: Vec<f64>,
}

impl CostVector {
    pub fn zero(k: usize) -> Self {
        CostVector { c: vec![0.0; k] }
    }
}

const FP_DAMPING: f64 = 0.5;
const FP_TOL: f64 = 1e-10;
const FP_MAXIT: usize = 10_000;
const BRACKET_TRIES: usize = 60;
const BISECT_STEPS: usize = 200;

/// Solves for revenue-maximizing prices in the logit families via a damped
/// fixed-point iteration on the aggregate revenue R, with candidate prices
/// p_k = R + 1/beta. Falls back to bracketing plus bisection on
/// F(R) = ER(R) - R when the iteration does not converge.
///
/// Exact for MNL; a fast heuristic for NL.
pub fn solve_logit_fixed_point(spec: &ChoiceModelSpec) -> Result<PriceLabel, PriceOptError> {
    spec.validate()?;
    let beta = match spec {
        ChoiceModelSpec::Mnl { beta, .. } => *beta,
        ChoiceModelSpec::NestedLogit { beta, .. } => *beta,
        _ => return Err(PriceOptError::UnsupportedFamily),
    };
    let k = spec.k();

    let eval = |r: f64| -> Result<(f64, Vec<f64>), PriceOptError> {
        let p = vec![r + 1.0 / beta; k];
        let er = expected_revenue(spec, &p)?;
        Ok((er, p))
    };

    let mut r = (1.0 / beta).max(1e-6);
    let mut method = SolveMethod::FixedPoint;
    let mut converged = false;
    for _ in 0..FP_MAXIT {
        let (er, _) = eval(r)?;
        let r_next = (1.0 - FP_DAMPING) * r + FP_DAMPING * er;
        if (r_next - r).abs() <= FP_TOL * r.abs().max(1.0) {
            r = r_next;
            converged = true;
            break;
        }
        r = r_next;
    }

    if !converged {
        method = SolveMethod::Bisection;
        let f = |x: f64| -> Result<f64, PriceOptError> { Ok(eval(x)?.0 - x) };
        let mut a = 0.0;
        let mut b = (r * 4.0 + 10.0).max(10.0);
        let fa = f(a)?;
        let mut fb = f(b)?;
        let mut tries = 0;
        while fa * fb > 0.0 && tries < BRACKET_TRIES {
            b = b * 2.0 + 10.0;
            fb = f(b)?;
            tries += 1;
        }
        if fa * fb > 0.0 {
            return Err(PriceOptError::BracketingFailed);
        }
        let mut fa = fa;
        for _ in 0..BISECT_STEPS {
            let mid = 0.5 * (a + b);
            let fm = f(mid)?;
            if fm.abs() < 1e-12 || (b - a).abs() < 1e-12 {
                r = mid;
                break;
            }
            if fa * fm < 0.0 {
                b = mid;
            } else {
                a = mid;
                fa = fm;
            }
            r = mid;
        }
    }

    let (revenue, price) = eval(r)?;
    let q = choice_probs(spec, &price)?;
    Ok(PriceLabel {
        price,
        revenue,
        q_in: q.inside,
        q_out: q.outside,
        method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn validate(&self) -> Result<(), PriceOptError> {
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo > hi || !lo.is_finite() || !hi.is_finite() {
                return Err(PriceOptError::InvalidBounds {
                    index: i,
                    lower: *lo,
                    upper: *hi,
                });
            }
        }
        Ok(())
    }

    fn clip(&self, p: &mut [f64]) {
        for ((x, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(*lo, *hi);
        }
    }

    fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

const NM_REFLECTION: f64 = 1.0;
const NM_EXPANSION: f64 = 2.0;
const NM_CONTRACTION: f64 = 0.5;
const NM_SHRINK: f64 = 0.5;
const NM_TOL: f64 = 1e-8;
const NM_MAXIT: usize = 2000;
const NM_STARTS: usize = 8;

/// Maximizes expected revenue over a box with multi-start Nelder-Mead.
///
/// Eight deterministic start points (the box center, the optional caller
/// start, and seeded uniform draws) feed independent simplex searches; the
/// best result is clipped to the bounds. Never returns a revenue below the
/// best start point.
pub fn solve_nonlinear(
    spec: &ChoiceModelSpec,
    bounds: &Bounds,
    start: Option<&[f64]>,
) -> Result<PriceLabel, PriceOptError> {
    spec.validate()?;
    bounds.validate()?;
    let k = spec.k();

    // Iso-elastic demand is undefined at p <= 0; keep evaluations interior.
    let eps_floor = 1e-9;
    let objective = |p: &[f64]| -> f64 {
        let q: Vec<f64> = p
            .iter()
            .zip(&bounds.lower)
            .zip(&bounds.upper)
            .map(|((x, lo), hi)| x.clamp(lo.max(eps_floor), *hi))
            .collect();
        expected_revenue(spec, &q).unwrap_or(f64::NEG_INFINITY)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut starts: Vec<Vec<f64>> = vec![bounds.center()];
    if let Some(s) = start {
        let mut s = s.to_vec();
        bounds.clip(&mut s);
        starts.push(s);
    }
    while starts.len() < NM_STARTS {
        let p: Vec<f64> = (0..k)
            .map(|i| rng.gen_range(bounds.lower[i]..=bounds.upper[i]))
            .collect();
        starts.push(p);
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let f0 = objective(s);
        let (x, fx) = nelder_mead(&objective, s, bounds);
        let (cand, fcand) = if fx >= f0 {
            (x, fx)
        } else {
            (s.clone(), f0)
        };
        if best.as_ref().map_or(true, |(_, fb)| fcand > *fb) {
            best = Some((cand, fcand));
        }
    }
    let (mut price, _) = best.expect("at least one start point");
    for (x, lo) in price.iter_mut().zip(&bounds.lower) {
        *x = x.max(lo.max(eps_floor));
    }
    bounds.clip(&mut price);
    let revenue = expected_revenue(spec, &price)?;
    let q = choice_probs(spec, &price)?;
    Ok(PriceLabel {
        price,
        revenue,
        q_in: q.inside,
        q_out: q.outside,
        method: SolveMethod::NelderMead,
    })
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], bounds: &Bounds) -> (Vec<f64>, f64) {
    let k = start.len();
    // Initial simplex: start plus per-coordinate offsets scaled to the box.
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..k {
        let mut v = start.to_vec();
        let span = (bounds.upper[i] - bounds.lower[i]).max(1e-3);
        v[i] += 0.05 * span;
        if v[i] > bounds.upper[i] {
            v[i] = start[i] - 0.05 * span;
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..NM_MAXIT {
        // Sort descending by value (maximization).
        let mut order: Vec<usize> = (0..simplex.len()).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
        let simplex_sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let values_sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = simplex_sorted;
        values = values_sorted;

        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if diameter < NM_TOL {
            break;
        }

        let worst = simplex.len() - 1;
        let centroid: Vec<f64> = (0..k)
            .map(|i| simplex[..worst].iter().map(|v| v[i]).sum::<f64>() / worst as f64)
            .collect();

        let reflect: Vec<f64> = (0..k)
            .map(|i| centroid[i] + NM_REFLECTION * (centroid[i] - simplex[worst][i]))
            .collect();
        let f_reflect = f(&reflect);

        if f_reflect > values[0] {
            let expand: Vec<f64> = (0..k)
                .map(|i| centroid[i] + NM_EXPANSION * (reflect[i] - centroid[i]))
                .collect();
            let f_expand = f(&expand);
            if f_expand > f_reflect {
                simplex[worst] = expand;
                values[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                values[worst] = f_reflect;
            }
        } else if f_reflect > values[worst - 1] {
            simplex[worst] = reflect;
            values[worst] = f_reflect;
        } else {
            let contract: Vec<f64> = (0..k)
                .map(|i| centroid[i] + NM_CONTRACTION * (simplex[worst][i] - centroid[i]))
                .collect();
            let f_contract = f(&contract);
            if f_contract > values[worst] {
                simplex[worst] = contract;
                values[worst] = f_contract;
            } else {
                let best = simplex[0].clone();
                for v in simplex.iter_mut().skip(1) {
                    for (x, b) in v.iter_mut().zip(&best) {
                        *x = b + NM_SHRINK * (*x - b);
                    }
                }
                for (i, v) in simplex.iter().enumerate().skip(1) {
                    values[i] = f(v);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..simplex.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    (simplex[order[0]].clone(), values[order[0]])
}

/// First-order-condition residual `q_k + sum_j (p_j - c_j) dq_j/dp_k` per
/// product; zero at an interior optimum. Analytic derivatives for MNL,
/// central differences otherwise.
pub fn foc_residual(
    spec: &ChoiceModelSpec,
    p: &[f64],
    c: &CostVector,
) -> Result<Vec<f64>, PriceOptError> {
    spec.validate()?;
    let k = spec.k();
    let q = choice_probs(spec, p)?;

    // dq[j][col] = dq_j / dp_col
    let dq: Vec<Vec<f64>> = match spec {
        ChoiceModelSpec::Mnl { beta, .. } => (0..k)
            .map(|j| {
                (0..k)
                    .map(|col| {
                        if j == col {
                            -beta * q.inside[j] * (1.0 - q.inside[j])
                        } else {
                            beta * q.inside[j] * q.inside[col]
                        }
                    })
                    .collect()
            })
            .collect(),
        _ => {
            let mut d = vec![vec![0.0; k]; k];
            let mut work = p.to_vec();
            for col in 0..k {
                let h = fd_step(p[col]);
                work[col] = p[col] + h;
                let plus = choice_probs(spec, &work)?;
                work[col] = p[col] - h;
                let minus = choice_probs(spec, &work)?;
                work[col] = p[col];
                for (j, row) in d.iter_mut().enumerate() {
                    row[col] = (plus.inside[j] - minus.inside[j]) / (2.0 * h);
                }
            }
            d
        }
    };

    Ok((0..k)
        .map(|col| {
            q.inside[col]
                + (0..k)
                    .map(|j| (p[j] - c.c[j]) * dq[j][col])
                    .sum::<f64>()
        })
        .collect())
}

/// Gap from the pricing optimality identity per product.
///
/// MNL: `p_k - 1 / (beta (1 - Q))` where Q is the total inside share, zero
/// at the optimum (where the optimal price is uniform and equals
/// `(1 + beta R) / beta`). Other families: the general Lerner form
/// `E_kk + p_k / (p_k - c_k)` with finite-difference elasticities.
pub fn lerner_gap(
    spec: &ChoiceModelSpec,
    p: &[f64],
    c: &CostVector,
) -> Result<Vec<f64>, PriceOptError> {
    spec.validate()?;
    match spec {
        ChoiceModelSpec::Mnl { beta, .. } => {
            let q = choice_probs(spec, p)?;
            let inside_total: f64 = q.inside.iter().sum();
            Ok(p.iter()
                .map(|pk| pk - 1.0 / (beta * (1.0 - inside_total)))
                .collect())
        }
        _ => {
            for (i, (pk, ck)) in p.iter().zip(&c.c).enumerate() {
                if (pk - ck).abs() < 1e-300 {
                    return Err(PriceOptError::PriceEqualsCost(i));
                }
            }
            let e = elasticity_matrix(spec, p, ElasticityMode::FiniteDifference)?;
            Ok((0..spec.k())
                .map(|i| e.e[i][i] + p[i] / (p[i] - c.c[i]))
                .collect())
        }
    }
}

/// FOC residual threshold above which an NL fixed-point label is refined by
/// Nelder-Mead.
pub const NL_REFINE_THRESHOLD: f64 = 1e-4;

/// Fixed-point label with an NL refinement fallback: when the heuristic's
/// FOC residual exceeds [`NL_REFINE_THRESHOLD`] the label is polished with
/// Nelder-Mead around the fixed-point answer, keeping whichever revenue wins.
pub fn solve_logit_refined(spec: &ChoiceModelSpec) -> Result<PriceLabel, PriceOptError> {
    let label = solve_logit_fixed_point(spec)?;
    let k = spec.k();
    let residual = foc_residual(spec, &label.price, &CostVector::zero(k))?;
    let max_res = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if max_res <= NL_REFINE_THRESHOLD {
        return Ok(label);
    }
    let span: f64 = label.price.iter().cloned().fold(0.0, f64::max).max(1.0);
    let bounds = Bounds {
        lower: vec![1e-6; k],
        upper: vec![4.0 * span; k],
    };
    let refined = solve_nonlinear(spec, &bounds, Some(&label.price))?;
    Ok(if refined.revenue > label.revenue {
        refined
    } else {
        label
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mnl(alpha: Vec<f64>, beta: f64) -> ChoiceModelSpec {
        ChoiceModelSpec::Mnl { alpha, beta }
    }

    /// Independent bisection oracle for the single-product MNL optimum:
    /// p = 1/beta + e^{alpha - beta p} / beta, solved on p directly.
    fn single_product_oracle(alpha: f64, beta: f64) -> f64 {
        let g = |p: f64| 1.0 / beta * (1.0 + (alpha - beta * p).exp()) - p;
        let mut lo = 0.0;
        let mut hi = 100.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn single_product_fixed_point_matches_bisection_oracle() {
        let label = solve_logit_fixed_point(&mnl(vec![0.0], 1.0)).unwrap();
        let oracle = single_product_oracle(0.0, 1.0);
        assert_abs_diff_eq!(label.price[0], oracle, epsilon = 1e-8);
        assert_abs_diff_eq!(label.price[0], 1.2785, epsilon = 1e-4);
        // Theorem identity at the solution.
        let gap = label.price[0] - 1.0 / (1.0 * (1.0 - label.q_in[0]));
        assert_abs_diff_eq!(gap, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn own_elasticity_is_minus_one_at_single_product_optimum() {
        let spec = mnl(vec![0.0], 1.0);
        let label = solve_logit_fixed_point(&spec).unwrap();
        let e = elasticity_matrix(&spec, &label.price, ElasticityMode::Analytic).unwrap();
        assert_abs_diff_eq!(e.e[0][0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn theorem_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.gen_range(1..=6);
            let alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let beta = rng.gen_range(0.5..3.0);
            let spec = mnl(alpha, beta);
            let label = solve_logit_fixed_point(&spec).unwrap();
            // Optimality identity: uniform p* = 1 / (beta * q_out).
            for pk in &label.price {
                assert_abs_diff_eq!(pk - 1.0 / (beta * label.q_out), 0.0, epsilon = 1e-6);
            }
            let res = foc_residual(&spec, &label.price, &CostVector::zero(k)).unwrap();
            for r in res {
                assert_abs_diff_eq!(r, 0.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn listing_style_port_agrees_with_internal_path() {
        // Test-only reimplementation of the fixed-point search in the
        // opposite sign convention (utility = alpha + beta * p, beta < 0).
        fn listing_fixed_point(alpha: &[f64], beta_signed: f64) -> Vec<f64> {
            let n = alpha.len();
            let probs = |p: &[f64]| -> Vec<f64> {
                let u: Vec<f64> =
                    alpha.iter().zip(p).map(|(a, pk)| a + beta_signed * pk).collect();
                let s: f64 = u.iter().map(|x| x.exp()).sum();
                let denom = s + 1.0;
                u.iter().map(|x| x.exp() / denom).collect()
            };
            let er_given_r = |r: f64| -> (f64, Vec<f64>) {
                let p = vec![r - 1.0 / beta_signed; n];
                let q = probs(&p);
                let er: f64 = p.iter().zip(&q).map(|(pk, qk)| pk * qk).sum();
                (er, p)
            };
            let mut r = (1.0 / (-beta_signed)).max(1e-6);
            for _ in 0..10_000 {
                let (er, _) = er_given_r(r);
                let r_next = 0.5 * r + 0.5 * er;
                if (r_next - r).abs() <= 1e-10 * r.abs().max(1.0) {
                    r = r_next;
                    break;
                }
                r = r_next;
            }
            er_given_r(r).1
        }

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let k = rng.gen_range(1..=5);
            let alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let beta = rng.gen_range(0.5..3.0);
            let ported = listing_fixed_point(&alpha, -beta);
            let internal = solve_logit_fixed_point(&mnl(alpha, beta)).unwrap();
            for (a, b) in ported.iter().zip(&internal.price) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn nl_fixed_point_close_to_derivative_free_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let alpha: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let spec = ChoiceModelSpec::NestedLogit {
            alpha,
            beta: 1.0,
            nest_assignments: vec![0, 0, 1, 1],
            lambda: 0.5,
            tau_nest: None,
        };
        let fp = solve_logit_fixed_point(&spec).unwrap();
        // Grid + Nelder-Mead refinement oracle.
        let span = fp.price.iter().cloned().fold(1.0, f64::max);
        let bounds = Bounds {
            lower: vec![1e-6; 4],
            upper: vec![4.0 * span; 4],
        };
        let nm = solve_nonlinear(&spec, &bounds, Some(&fp.price)).unwrap();
        let rel = (nm.revenue - fp.revenue).abs() / nm.revenue.abs().max(1e-12);
        assert!(rel < 5e-3, "fixed point vs NM revenue gap {rel}");
    }

    #[test]
    fn nonlinear_linear_single_product_vertex() {
        let spec = ChoiceModelSpec::Linear {
            linear_coeffs: vec![(1.0, 0.5)],
        };
        let bounds = Bounds {
            lower: vec![0.0],
            upper: vec![2.0],
        };
        let label = solve_nonlinear(&spec, &bounds, None).unwrap();
        assert_abs_diff_eq!(label.price[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn nonlinear_matches_fixed_point_for_mnl() {
        let spec = mnl(vec![0.0], 1.0);
        let bounds = Bounds {
            lower: vec![0.0],
            upper: vec![3.0],
        };
        let nm = solve_nonlinear(&spec, &bounds, None).unwrap();
        let fp = solve_logit_fixed_point(&spec).unwrap();
        assert_abs_diff_eq!(nm.price[0], fp.price[0], epsilon = 1e-4);
    }

    #[test]
    fn nonlinear_iso_elastic_monotone_hits_lower_bound() {
        // Elastic demand, clamp inactive inside the box: revenue
        // 0.1 * p^{-1} decreases in p, so the lower bound binds.
        let spec = ChoiceModelSpec::IsoElastic {
            iso_coeffs: vec![(0.1, -2.0)],
        };
        let bounds = Bounds {
            lower: vec![0.5],
            upper: vec![2.0],
        };
        let label = solve_nonlinear(&spec, &bounds, None).unwrap();
        assert_abs_diff_eq!(label.price[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn nonlinear_iso_elastic_optimum_at_clamp_knee() {
        // q = min(0.5 p^{-2}, 1): revenue is p below the knee at
        // p = sqrt(0.5) and 0.5 / p above it, so the knee is the maximizer.
        let spec = ChoiceModelSpec::IsoElastic {
            iso_coeffs: vec![(0.5, -2.0)],
        };
        let bounds = Bounds {
            lower: vec![0.1],
            upper: vec![2.0],
        };
        let label = solve_nonlinear(&spec, &bounds, None).unwrap();
        assert_abs_diff_eq!(label.price[0], 0.5f64.sqrt(), epsilon = 1e-4);
    }

    #[test]
    fn nonlinear_rejects_infeasible_bounds() {
        let spec = mnl(vec![0.0], 1.0);
        let bounds = Bounds {
            lower: vec![2.0],
            upper: vec![1.0],
        };
        assert!(matches!(
            solve_nonlinear(&spec, &bounds, None),
            Err(PriceOptError::InvalidBounds { .. })
        ));
    }

    #[test]
    fn foc_residual_large_away_from_optimum() {
        let spec = mnl(vec![0.5, 0.5], 1.0);
        let label = solve_logit_fixed_point(&spec).unwrap();
        let far: Vec<f64> = label.price.iter().map(|p| p + 1.0).collect();
        let res = foc_residual(&spec, &far, &CostVector::zero(2)).unwrap();
        assert!(res.iter().any(|r| r.abs() > 1e-3));
    }

    #[test]
    fn lerner_identity_with_cost() {
        // Single-product MNL with cost c: at the profit optimum,
        // E(p*) = -p* / (p* - c), i.e. the FOC residual of the margin
        // objective is zero exactly when the Lerner identity holds.
        let beta = 1.0;
        let c = 0.4;
        let spec = mnl(vec![0.0], beta);
        // Profit optimum by bisection on q + (p - c) q'(p) = 0.
        let g = |p: f64| {
            let q = choice_probs(&spec, &[p]).unwrap().inside[0];
            q + (p - c) * (-beta * q * (1.0 - q))
        };
        let mut lo = c + 1e-6;
        let mut hi = 100.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p_star = 0.5 * (lo + hi);
        let e = elasticity_matrix(&spec, &[p_star], ElasticityMode::Analytic).unwrap();
        assert_abs_diff_eq!(e.e[0][0], -p_star / (p_star - c), epsilon = 1e-6);
    }

    #[test]
    fn lerner_gap_zero_at_optimum_and_positive_when_doubled() {
        let spec = mnl(vec![0.2, -0.1], 1.5);
        let label = solve_logit_fixed_point(&spec).unwrap();
        let zero = CostVector::zero(2);
        let at_opt = lerner_gap(&spec, &label.price, &zero).unwrap();
        for g in &at_opt {
            assert_abs_diff_eq!(*g, 0.0, epsilon = 1e-6);
        }
        let doubled: Vec<f64> = label.price.iter().map(|p| 2.0 * p).collect();
        for g in lerner_gap(&spec, &doubled, &zero).unwrap() {
            assert!(g > 0.0);
        }
    }

    #[test]
    fn lerner_gap_general_form_errors_on_price_equal_cost() {
        let spec = ChoiceModelSpec::Linear {
            linear_coeffs: vec![(1.0, 0.5)],
        };
        let c = CostVector { c: vec![1.0] };
        assert!(matches!(
            lerner_gap(&spec, &[1.0], &c),
            Err(PriceOptError::PriceEqualsCost(0))
        ));
    }

    #[test]
    fn profit_weighted_shares_sum_to_one_at_zero_cost() {
        let spec = mnl(vec![0.3, 0.9, -0.4], 1.2);
        let p = [1.1, 0.9, 1.4];
        let q = choice_probs(&spec, &p).unwrap();
        let revenue: f64 = p.iter().zip(&q.inside).map(|(pk, qk)| pk * qk).sum();
        let shares: f64 = p
            .iter()
            .zip(&q.inside)
            .map(|(pk, qk)| pk * qk / revenue)
            .sum();
        assert_abs_diff_eq!(shares, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fixed_point_deterministic_and_serializable() {
        let spec = mnl(vec![0.1, 0.7], 2.0);
        let a = solve_logit_fixed_point(&spec).unwrap();
        let b = solve_logit_fixed_point(&spec).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"method\":\"fixed_point\""));
        let back: PriceLabel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn label_revenue_consistent_with_price_and_shares() {
        let spec = mnl(vec![0.4], 1.0);
        let label = solve_logit_fixed_point(&spec).unwrap();
        let dot: f64 = label.price.iter().zip(&label.q_in).map(|(p, q)| p * q).sum();
        assert_abs_diff_eq!(label.revenue, dot, epsilon = 1e-8);
        assert_abs_diff_eq!(
            label.q_out + label.q_in.iter().sum::<f64>(),
            1.0,
            epsilon = 1e-9
        );
    }
}
