//! Simulated training/evaluation corpus: sampled demand environments,
//! segment heterogeneity over seven binary customer attributes, what-if
//! counterfactual (price, expected revenue) pairs, and optimal price labels.
//!
//! One dataset is 128 rows (every attribute combination), each row holding
//! the segment bits, 50 what-if pairs, and the label price vector, for
//! `L + 50 * (K + 1) + K` columns.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{
    elasticity_matrix, expected_revenue, ChoiceError, ChoiceModelSpec, ElasticityMode,
    MixtureComponent,
};
use crate::price_opt::{solve_logit_refined, solve_nonlinear, Bounds, PriceOptError};

/// Number of binary customer attributes.
pub const NUM_ATTRIBUTES: usize = 7;
/// Segments per dataset: every combination of the attribute bits.
pub const NUM_SEGMENTS: usize = 1 << NUM_ATTRIBUTES;
/// What-if counterfactual pairs per row.
pub const NUM_WHATIF: usize = 50;
/// Accepted range for the mean own-price elasticity at the what-if mean
/// price.
pub const ELASTICITY_RANGE: (f64, f64) = (-3.0, -1.0);
/// What-if prices are clipped to this interval.
pub const WHATIF_PRICE_RANGE: (f64, f64) = (0.0, 2.0);

const REJECTION_BUDGET: usize = 1000;
/// Full-scale corpus size; desk-scale runs default to 100.
pub const FULL_SCALE_DATASETS: usize = 13_000;
pub const DESK_SCALE_DATASETS: usize = 100;

#[derive(Error, Debug)]
pub enum DatagenError {
    #[error("rejection budget exhausted while sampling a spec for family {0:?}")]
    SamplingFailure(Family),
    #[error("invalid baseline {0}; must be > 0")]
    InvalidBaseline(f64),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error(transparent)]
    PriceOpt(#[from] PriceOptError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset parse error: {0}")]
    Parse(String),
    #[error("meta json error: {0}")]
    MetaJson(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Mnl,
    NestedLogit,
    MixedMnl,
    IsoElastic,
    Linear,
}

/// Family mix used when no family is requested.
pub const FAMILY_MIX: [(Family, f64); 5] = [
    (Family::Mnl, 0.16),
    (Family::NestedLogit, 0.16),
    (Family::MixedMnl, 0.27),
    (Family::IsoElastic, 0.27),
    (Family::Linear, 0.14),
];

impl Family {
    pub fn of(spec: &ChoiceModelSpec) -> Family {
        match spec {
            ChoiceModelSpec::Mnl { .. } => Family::Mnl,
            ChoiceModelSpec::NestedLogit { .. } => Family::NestedLogit,
            ChoiceModelSpec::MixedMnl { .. } => Family::MixedMnl,
            ChoiceModelSpec::IsoElastic { .. } => Family::IsoElastic,
            ChoiceModelSpec::Linear { .. } => Family::Linear,
        }
    }
}

/// Seven binary customer attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentAttributes {
    pub z: [u8; NUM_ATTRIBUTES],
}

impl SegmentAttributes {
    /// Segment `index` in 0..128, bit i of the index becoming z_i.
    pub fn from_index(index: usize) -> Self {
        let mut z = [0u8; NUM_ATTRIBUTES];
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = ((index >> i) & 1) as u8;
        }
        SegmentAttributes { z }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub z: SegmentAttributes,
    /// 50 counterfactual (price vector, expected revenue) pairs.
    pub whatif: Vec<(Vec<f64>, f64)>,
    /// Label: recommended price vector.
    pub label: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub family: Family,
    pub k: usize,
    pub seed: u64,
    pub elasticity_range: (f64, f64),
    /// Identifies the normalization baseline convention for downstream
    /// consumers ("icl_max" for the scaling applied before prediction).
    pub normalization_baseline: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    pub meta: DatasetMeta,
    pub rows: Vec<DatasetRow>,
}

impl ChoiceDataset {
    /// Total column count of the tabular form.
    pub fn width(&self) -> usize {
        row_width(self.meta.k)
    }
}

/// `L + 50 * (K + 1) + K`.
pub fn row_width(k: usize) -> usize {
    NUM_ATTRIBUTES + NUM_WHATIF * (k + 1) + k
}

fn pick_family<R: Rng>(rng: &mut R) -> Family {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (f, w) in FAMILY_MIX {
        acc += w;
        if u < acc {
            return f;
        }
    }
    FAMILY_MIX[FAMILY_MIX.len() - 1].0
}

/// Mean own-price elasticity at the what-if mean price (all-ones vector).
fn mean_own_elasticity(spec: &ChoiceModelSpec) -> Result<f64, ChoiceError> {
    let p = vec![1.0; spec.k()];
    let e = elasticity_matrix(spec, &p, ElasticityMode::FiniteDifference)?;
    Ok(e.diagonal().iter().sum::<f64>() / spec.k() as f64)
}

fn in_elasticity_range(spec: &ChoiceModelSpec) -> bool {
    matches!(mean_own_elasticity(spec),
        Ok(e) if e > ELASTICITY_RANGE.0 && e < ELASTICITY_RANGE.1)
}

fn draw_candidate<R: Rng>(rng: &mut R, family: Family, k: usize) -> ChoiceModelSpec {
    match family {
        Family::Mnl => ChoiceModelSpec::Mnl {
            alpha: (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect(),
            beta: rng.gen_range(0.5..3.0),
        },
        Family::NestedLogit => {
            let n_nests = rng.gen_range(1..=k.min(3));
            let mut nest_assignments: Vec<usize> =
                (0..k).map(|i| i % n_nests).collect();
            for i in (1..k).rev() {
                nest_assignments.swap(i, rng.gen_range(0..=i));
            }
            ChoiceModelSpec::NestedLogit {
                alpha: (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect(),
                beta: rng.gen_range(0.5..3.0),
                nest_assignments,
                lambda: rng.gen_range(0.3..1.0),
                tau_nest: None,
            }
        }
        Family::MixedMnl => {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mixture = raw
                .into_iter()
                .map(|w| MixtureComponent {
                    weight: w / total,
                    alpha: (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect(),
                    beta: rng.gen_range(0.5..3.0),
                })
                .collect();
            ChoiceModelSpec::MixedMnl { mixture }
        }
        Family::IsoElastic => {
            // Keep total demand below one at the mean price so the
            // rescaling branch stays inactive.
            let cap = 0.8 / k as f64;
            ChoiceModelSpec::IsoElastic {
                iso_coeffs: (0..k)
                    .map(|_| {
                        (
                            rng.gen_range(0.05..cap),
                            rng.gen_range(-3.2..-0.9),
                        )
                    })
                    .collect(),
            }
        }
        Family::Linear => {
            let cap = 0.9 / k as f64;
            ChoiceModelSpec::Linear {
                linear_coeffs: (0..k)
                    .map(|_| {
                        let b = rng.gen_range(0.05..cap);
                        // a between ~4b/3 and 2b puts |E| at p=1 in (1,3).
                        let a = b * rng.gen_range(1.3..2.1);
                        (a, b)
                    })
                    .collect(),
            }
        }
    }
}

/// Samples a demand environment, rejecting until the mean own elasticity at
/// the what-if mean price lies in the training range.
pub fn sample_spec<R: Rng>(
    rng: &mut R,
    family: Option<Family>,
) -> Result<ChoiceModelSpec, DatagenError> {
    let family = family.unwrap_or_else(|| pick_family(rng));
    let k = rng.gen_range(2..=6);
    for _ in 0..REJECTION_BUDGET {
        let spec = draw_candidate(rng, family, k);
        if spec.validate().is_ok() && in_elasticity_range(&spec) {
            return Ok(spec);
        }
    }
    Err(DatagenError::SamplingFailure(family))
}

/// 50 what-if price vectors: Normal(1, 1) entries clipped to [0, 2].
pub fn sample_whatif_prices<R: Rng>(rng: &mut R, k: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(1.0, 1.0).expect("valid normal");
    (0..NUM_WHATIF)
        .map(|_| {
            (0..k)
                .map(|_| {
                    let x: f64 = normal.sample(rng);
                    x.clamp(WHATIF_PRICE_RANGE.0, WHATIF_PRICE_RANGE.1)
                })
                .collect()
        })
        .collect()
}

/// Deterministic sub-seed for dataset `index` (splitmix64 over the pair).
pub fn derive_subseed(seed: u64, index: u64) -> u64 {
    let mut x = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-dataset linear maps from segment bits to parameter shifts: additive
/// on intercept-like parameters, multiplicative on sensitivity-like ones.
struct SegmentMap {
    alpha_shift: Vec<Vec<f64>>, // K x L
    beta_logfac: Vec<f64>,      // L
}

impl SegmentMap {
    fn draw<R: Rng>(rng: &mut R, k: usize) -> Self {
        SegmentMap {
            alpha_shift: (0..k)
                .map(|_| {
                    (0..NUM_ATTRIBUTES)
                        .map(|_| rng.gen_range(-0.08..0.08))
                        .collect()
                })
                .collect(),
            beta_logfac: (0..NUM_ATTRIBUTES)
                .map(|_| rng.gen_range(-0.05..0.05))
                .collect(),
        }
    }

    fn apply(&self, base: &ChoiceModelSpec, z: &SegmentAttributes, scale: f64) -> ChoiceModelSpec {
        let dot = |v: &[f64]| -> f64 {
            v.iter()
                .zip(&z.z)
                .map(|(w, &b)| w * b as f64)
                .sum::<f64>()
        };
        let beta_factor = (scale * dot(&self.beta_logfac)).exp();
        let shift_alpha = |alpha: &[f64]| -> Vec<f64> {
            alpha
                .iter()
                .enumerate()
                .map(|(i, a)| a + scale * dot(&self.alpha_shift[i]))
                .collect()
        };
        match base {
            ChoiceModelSpec::Mnl { alpha, beta } => ChoiceModelSpec::Mnl {
                alpha: shift_alpha(alpha),
                beta: beta * beta_factor,
            },
            ChoiceModelSpec::NestedLogit {
                alpha,
                beta,
                nest_assignments,
                lambda,
                tau_nest,
            } => ChoiceModelSpec::NestedLogit {
                alpha: shift_alpha(alpha),
                beta: beta * beta_factor,
                nest_assignments: nest_assignments.clone(),
                lambda: *lambda,
                tau_nest: tau_nest.clone(),
            },
            ChoiceModelSpec::MixedMnl { mixture } => ChoiceModelSpec::MixedMnl {
                mixture: mixture
                    .iter()
                    .map(|c| MixtureComponent {
                        weight: c.weight,
                        alpha: shift_alpha(&c.alpha),
                        beta: c.beta * beta_factor,
                    })
                    .collect(),
            },
            ChoiceModelSpec::IsoElastic { iso_coeffs } => ChoiceModelSpec::IsoElastic {
                iso_coeffs: iso_coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, (a, e))| {
                        (
                            (a + 0.1 * scale * dot(&self.alpha_shift[i])).max(0.01),
                            e * beta_factor,
                        )
                    })
                    .collect(),
            },
            ChoiceModelSpec::Linear { linear_coeffs } => ChoiceModelSpec::Linear {
                linear_coeffs: linear_coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, (a, b))| {
                        (
                            (a + 0.1 * scale * dot(&self.alpha_shift[i])).max(0.01),
                            b * beta_factor,
                        )
                    })
                    .collect(),
            },
        }
    }
}

fn label_for(spec: &ChoiceModelSpec) -> Result<Vec<f64>, PriceOptError> {
    match spec {
        ChoiceModelSpec::Mnl { .. } | ChoiceModelSpec::NestedLogit { .. } => {
            Ok(solve_logit_refined(spec)?.price)
        }
        _ => {
            let k = spec.k();
            let bounds = Bounds {
                lower: vec![0.01; k],
                upper: vec![5.0; k],
            };
            Ok(solve_nonlinear(spec, &bounds, None)?.price)
        }
    }
}

/// Builds one 128-row dataset from a seed. A solver failure on any segment
/// discards the attempt and retries with a fresh sub-seed.
pub fn build_dataset(seed: u64) -> Result<ChoiceDataset, DatagenError> {
    build_dataset_with_family(seed, None)
}

/// [`build_dataset`] restricted to one demand family (used for family-pure
/// evaluation sets).
pub fn build_dataset_with_family(
    seed: u64,
    family: Option<Family>,
) -> Result<ChoiceDataset, DatagenError> {
    build_dataset_detailed(seed, family).map(|(ds, _)| ds)
}

/// [`build_dataset_with_family`] that also returns the per-segment specs the
/// rows were generated from, for simulation-based evaluation.
pub fn build_dataset_detailed(
    seed: u64,
    family: Option<Family>,
) -> Result<(ChoiceDataset, Vec<ChoiceModelSpec>), DatagenError> {
    const ATTEMPTS: usize = 8;
    let mut last_err = None;
    for attempt in 0..ATTEMPTS {
        let sub = derive_subseed(seed, attempt as u64);
        match try_build_dataset(sub, seed, family) {
            Ok(out) => return Ok(out),
            Err(e) => {
                log::warn!("dataset seed {seed} attempt {attempt} failed: {e}; regenerating");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

fn try_build_dataset(
    sub_seed: u64,
    seed: u64,
    family: Option<Family>,
) -> Result<(ChoiceDataset, Vec<ChoiceModelSpec>), DatagenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
    let base = sample_spec(&mut rng, family)?;
    let k = base.k();
    let family = Family::of(&base);
    let map = SegmentMap::draw(&mut rng, k);

    let mut rows = Vec::with_capacity(NUM_SEGMENTS);
    let mut specs = Vec::with_capacity(NUM_SEGMENTS);
    for seg in 0..NUM_SEGMENTS {
        let z = SegmentAttributes::from_index(seg);
        // Shrink the segment perturbation until the elasticity filter
        // re-accepts; at scale 0 the base spec passes by construction.
        let mut spec = base.clone();
        let mut scale = 1.0;
        for _ in 0..6 {
            let candidate = map.apply(&base, &z, scale);
            if candidate.validate().is_ok() && in_elasticity_range(&candidate) {
                spec = candidate;
                break;
            }
            scale *= 0.5;
        }

        let mut prices = sample_whatif_prices(&mut rng, k);
        if matches!(spec, ChoiceModelSpec::IsoElastic { .. }) {
            // Iso-elastic demand is undefined at p = 0; keep the clip
            // interval but floor at a positive epsilon.
            for p in &mut prices {
                for x in p.iter_mut() {
                    *x = x.max(1e-3);
                }
            }
        }
        let whatif: Vec<(Vec<f64>, f64)> = prices
            .into_iter()
            .map(|p| {
                let r = expected_revenue(&spec, &p)?;
                Ok((p, r))
            })
            .collect::<Result<_, ChoiceError>>()?;
        let label = label_for(&spec)?;
        rows.push(DatasetRow { z, whatif, label });
        specs.push(spec);
    }

    let ds = ChoiceDataset {
        meta: DatasetMeta {
            family,
            k,
            seed,
            elasticity_range: ELASTICITY_RANGE,
            normalization_baseline: "icl_max".to_string(),
        },
        rows,
    };
    Ok((ds, specs))
}

/// Normalized prices relative to a positive baseline: `p / baseline - 1`.
pub fn normalize_prices(p: &[f64], baseline: f64) -> Result<Vec<f64>, DatagenError> {
    if baseline <= 0.0 {
        return Err(DatagenError::InvalidBaseline(baseline));
    }
    Ok(p.iter().map(|x| x / baseline - 1.0).collect())
}

/// Scales of one corpus derived from an ICL reference set: attribute
/// features, prices, and revenues are each divided by the maximum seen in
/// the ICL datasets. An all-zero column keeps scale 1 (with a warning).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IclScales {
    pub feature_max: f64,
    pub price_max: f64,
    pub revenue_max: f64,
}

pub fn icl_scales(icl_set: &[ChoiceDataset]) -> IclScales {
    let mut feature_max: f64 = 0.0;
    let mut price_max: f64 = 0.0;
    let mut revenue_max: f64 = 0.0;
    for ds in icl_set {
        for row in &ds.rows {
            for &b in &row.z.z {
                feature_max = feature_max.max(b as f64);
            }
            for (p, r) in &row.whatif {
                for &x in p {
                    price_max = price_max.max(x);
                }
                revenue_max = revenue_max.max(*r);
            }
            for &x in &row.label {
                price_max = price_max.max(x);
            }
        }
    }
    let guard = |name: &str, v: f64| {
        if v == 0.0 {
            log::warn!("ICL max for {name} is 0; leaving scale at 1");
            1.0
        } else {
            v
        }
    };
    IclScales {
        feature_max: guard("features", feature_max),
        price_max: guard("prices", price_max),
        revenue_max: guard("revenues", revenue_max),
    }
}

/// Applies ICL-max scaling to a dataset in place.
pub fn scale_by_icl_max(dataset: &mut ChoiceDataset, scales: &IclScales) {
    for row in &mut dataset.rows {
        for (p, r) in &mut row.whatif {
            for x in p.iter_mut() {
                *x /= scales.price_max;
            }
            *r /= scales.revenue_max;
        }
        for x in &mut row.label {
            *x /= scales.price_max;
        }
    }
}

/// Train/ICL/eval split sizes preserving the full-scale ratios
/// (12000 / 13 / 987 out of 13000) at any corpus size.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    if n == 0 {
        return (0, 0, 0);
    }
    let icl = ((n as f64 * 13.0 / 13_000.0).round() as usize).max(1).min(n);
    let train = ((n as f64 * 12_000.0 / 13_000.0).round() as usize).min(n - icl);
    let eval = n - train - icl;
    (train, icl, eval)
}

/// Local finite-difference estimate of own-price elasticity from a row's
/// what-if pairs around the label price. Uses the primary product's price
/// and total revenue as the demand proxy; this is the elasticity-head
/// training target.
pub fn whatif_own_elasticity(row: &DatasetRow) -> Option<f64> {
    // The probes perturb every product's price at once, so any two-point
    // difference is dominated by cross-price noise. A log-log regression
    // over all probes averages that noise out; the slope of log q on
    // log p_1 (q = r / p_1 as the demand proxy) is the elasticity estimate.
    let mut xs = Vec::with_capacity(row.whatif.len());
    let mut ys = Vec::with_capacity(row.whatif.len());
    for (p, r) in &row.whatif {
        let p0 = p[0];
        if p0 < 1e-6 || *r < 1e-9 {
            continue;
        }
        xs.push(p0.ln());
        ys.push((r / p0).ln());
    }
    if xs.len() < 5 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx < 1e-9 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    // Winsorize: own-price demand elasticities outside this band are
    // estimator artifacts, not economics.
    Some((sxy / sxx).clamp(-6.0, 0.0))
}

// ---------------------------------------------------------------------------
// Tabular I/O

/// Writes the dataset as CSV: z_1..z_7, then 50 blocks of p_1..p_K,r, then
/// y_1..y_K.
pub fn write_dataset_csv(ds: &ChoiceDataset, path: &Path) -> Result<(), DatagenError> {
    let mut w = csv::Writer::from_path(path)?;
    let k = ds.meta.k;
    let mut header = Vec::with_capacity(row_width(k));
    for i in 1..=NUM_ATTRIBUTES {
        header.push(format!("z_{i}"));
    }
    for _ in 0..NUM_WHATIF {
        for i in 1..=k {
            header.push(format!("p_{i}"));
        }
        header.push("r".to_string());
    }
    for i in 1..=k {
        header.push(format!("y_{i}"));
    }
    w.write_record(&header)?;
    for row in &ds.rows {
        let mut rec = Vec::with_capacity(row_width(k));
        for &b in &row.z.z {
            rec.push(b.to_string());
        }
        for (p, r) in &row.whatif {
            for x in p {
                rec.push(format!("{x:?}"));
            }
            rec.push(format!("{r:?}"));
        }
        for x in &row.label {
            rec.push(format!("{x:?}"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_meta(ds: &ChoiceDataset, path: &Path) -> Result<(), DatagenError> {
    let mut f = fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(&ds.meta)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads a dataset CSV produced by [`write_dataset_csv`] together with its
/// sidecar meta JSON.
pub fn read_dataset(csv_path: &Path, meta_path: &Path) -> Result<ChoiceDataset, DatagenError> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
    let k = meta.k;
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let expected = row_width(k);
        if record.len() != expected {
            return Err(DatagenError::Parse(format!(
                "row has {} columns, expected {expected}",
                record.len()
            )));
        }
        let mut it = record.iter();
        let mut z = [0u8; NUM_ATTRIBUTES];
        for zi in z.iter_mut() {
            *zi = it
                .next()
                .unwrap()
                .parse::<u8>()
                .map_err(|e| DatagenError::Parse(e.to_string()))?;
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| DatagenError::Parse(e.to_string()))
        };
        let mut whatif = Vec::with_capacity(NUM_WHATIF);
        for _ in 0..NUM_WHATIF {
            let mut p = Vec::with_capacity(k);
            for _ in 0..k {
                p.push(parse(it.next().unwrap())?);
            }
            let r = parse(it.next().unwrap())?;
            whatif.push((p, r));
        }
        let mut label = Vec::with_capacity(k);
        for _ in 0..k {
            label.push(parse(it.next().unwrap())?);
        }
        rows.push(DatasetRow {
            z: SegmentAttributes { z },
            whatif,
            label,
        });
    }
    Ok(ChoiceDataset { meta, rows })
}
