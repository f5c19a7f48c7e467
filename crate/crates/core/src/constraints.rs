//! Business constraints on price vectors: box bounds, inter-choice ordering
//! with minimum gaps, and a single average-price constraint.
//!
//! Two enforcement routes exist. `softplus_chain` builds ordering-feasible
//! prices by construction from unconstrained network outputs; the
//! clamp-and-redistribute projection repairs arbitrary price vectors in price
//! space. `violation_report` and `soft_penalty` measure what remains.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConstraintError {
    #[error("infeasible constraint set: {0}")]
    Infeasible(String),
    #[error("ordering chain violated at position {position}: gap {gap} <= 0")]
    NotInvertible { position: usize, gap: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AvgSense {
    AtLeast,
    AtMost,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvgPriceConstraint {
    pub target: f64,
    pub sense: AvgSense,
}

/// Inter-choice ordering: prices along the permutation `pi` must each exceed
/// their predecessor by at least the corresponding gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingConstraint {
    /// Product indices in ascending price order.
    pub pi: Vec<usize>,
    /// Minimum gaps, one per consecutive pair (length K - 1).
    pub gaps: Vec<f64>,
}

impl OrderingConstraint {
    pub fn identity(k: usize, gap: f64) -> Self {
        OrderingConstraint {
            pi: (0..k).collect(),
            gaps: vec![gap; k.saturating_sub(1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<OrderingConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_price: Option<AvgPriceConstraint>,
}

impl ConstraintSet {
    pub fn box_only(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        ConstraintSet {
            lower,
            upper,
            ordering: None,
            avg_price: None,
        }
    }

    pub fn k(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if self.lower.len() != self.upper.len() {
            return Err(ConstraintError::DimensionMismatch {
                expected: self.lower.len(),
                got: self.upper.len(),
            });
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo > hi {
                return Err(ConstraintError::Infeasible(format!(
                    "lower {lo} > upper {hi} at index {i}"
                )));
            }
        }
        if let Some(ord) = &self.ordering {
            let k = self.k();
            if ord.pi.len() != k || ord.gaps.len() + 1 != k {
                return Err(ConstraintError::Infeasible(
                    "ordering permutation/gaps sized inconsistently with box".into(),
                ));
            }
            let mut seen = vec![false; k];
            for &i in &ord.pi {
                if i >= k || seen[i] {
                    return Err(ConstraintError::Infeasible(
                        "ordering pi is not a permutation".into(),
                    ));
                }
                seen[i] = true;
            }
            if ord.gaps.iter().any(|g| *g < 0.0) {
                return Err(ConstraintError::Infeasible("negative ordering gap".into()));
            }
            // The chain must fit inside the box: starting from the lowest
            // feasible first price, the cumulative gaps must stay below the
            // final upper bound.
            let mut floor = self.lower[ord.pi[0]];
            for (step, &i) in ord.pi.iter().enumerate().skip(1) {
                floor = (floor + ord.gaps[step - 1]).max(self.lower[i]);
                if floor > self.upper[i] + 1e-12 {
                    return Err(ConstraintError::Infeasible(format!(
                        "ordering chain cannot fit inside the box at product {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    // log1p(exp(x)) with the standard large-x shortcut.
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Builds an ordering-feasible price vector from unconstrained values:
/// the first price along `pi` is `z[0]`, each later one exceeds its
/// predecessor by the gap plus `softplus(z[k])`, hence the ordering holds
/// strictly for every `z`.
pub fn softplus_chain(z: &[f64], ordering: &OrderingConstraint) -> Vec<f64> {
    assert_eq!(z.len(), ordering.pi.len());
    let mut p = vec![0.0; z.len()];
    let mut prev = z[0];
    p[ordering.pi[0]] = prev;
    for (step, &i) in ordering.pi.iter().enumerate().skip(1) {
        prev = prev + ordering.gaps[step - 1] + softplus(z[step]);
        p[i] = prev;
    }
    p
}

/// Minimum representable slack used when inverting a near-tight chain; gaps
/// at or below this are floored before taking `log(e^g - 1)`.
pub const INVERSE_GAP_FLOOR: f64 = 1e-12;

/// Recovers the unconstrained values that reproduce `p` under
/// [`softplus_chain`]. Near-tight gaps are floored at [`INVERSE_GAP_FLOOR`]
/// to keep the log finite; a non-positive gap is an error.
pub fn inverse_softplus_chain(
    p: &[f64],
    ordering: &OrderingConstraint,
) -> Result<Vec<f64>, ConstraintError> {
    assert_eq!(p.len(), ordering.pi.len());
    let mut z = vec![0.0; p.len()];
    z[0] = p[ordering.pi[0]];
    for (step, &i) in ordering.pi.iter().enumerate().skip(1) {
        let prev = p[ordering.pi[step - 1]];
        let g = p[i] - prev - ordering.gaps[step - 1];
        if g <= 0.0 {
            return Err(ConstraintError::NotInvertible {
                position: step,
                gap: g,
            });
        }
        let g = g.max(INVERSE_GAP_FLOOR);
        // inverse softplus: log(e^g - 1)
        z[step] = g.exp_m1().ln();
    }
    Ok(z)
}

/// Convergence is typically reached within ten passes; the loop continues
/// past that only to polish the last floating-point digits so re-projection
/// is a bit-exact no-op.
const REDISTRIBUTE_HARD_CAP: usize = 256;
const AVG_TOL: f64 = 1e-9;

/// Deterministic projection of a price vector towards the constraint set.
///
/// Clamps into the box, sweeps the ordering chain lifting violated prices
/// (re-clamped to the upper bound, so a tight box may leave a residual
/// ordering violation that is reported rather than hidden), then spreads any
/// average-price deficit or surplus across products in proportion to each
/// product's feasible movement capacity (distance to the binding box bound,
/// limited by the ordering chain so the chain never re-breaks). The sequence
/// repeats until a bit-exact fixed point, which makes the projection
/// idempotent.
pub fn clamp_redistribute(p: &[f64], cs: &ConstraintSet) -> Result<Vec<f64>, ConstraintError> {
    cs.validate()?;
    if p.len() != cs.k() {
        return Err(ConstraintError::DimensionMismatch {
            expected: cs.k(),
            got: p.len(),
        });
    }
    let k = cs.k();
    let mut x = p.to_vec();
    let mut previous: Option<Vec<f64>> = None;
    for pass in 0..REDISTRIBUTE_HARD_CAP {
        let before = x.clone();

        // Pass 1: box clamp.
        for i in 0..k {
            x[i] = x[i].clamp(cs.lower[i], cs.upper[i]);
        }

        // Pass 2: ordering sweep in pi order, lift then re-clamp to upper.
        if let Some(ord) = &cs.ordering {
            for (step, &i) in ord.pi.iter().enumerate().skip(1) {
                let floor = x[ord.pi[step - 1]] + ord.gaps[step - 1];
                if x[i] < floor {
                    x[i] = floor.min(cs.upper[i]);
                }
            }
        }

        // Pass 3: average-price redistribution proportional to headroom.
        if let Some(avg) = &cs.avg_price {
            let mean = x.iter().sum::<f64>() / k as f64;
            let deficit = match avg.sense {
                AvgSense::AtLeast => {
                    if mean < avg.target - AVG_TOL {
                        (avg.target - mean) * k as f64
                    } else {
                        0.0
                    }
                }
                AvgSense::AtMost => {
                    if mean > avg.target + AVG_TOL {
                        (avg.target - mean) * k as f64
                    } else {
                        0.0
                    }
                }
                AvgSense::Equal => {
                    if (mean - avg.target).abs() > AVG_TOL {
                        (avg.target - mean) * k as f64
                    } else {
                        0.0
                    }
                }
            };
            if deficit != 0.0 {
                // Feasible movement capacity per product: the distance to
                // the binding box bound, further limited by the ordering
                // chain. A product below (above) a chain neighbor can only
                // move as far as its pair slack plus whatever that neighbor
                // moves, so capacities accumulate along the sweep. Moving
                // every product by the same fraction of its capacity then
                // keeps the ordering intact by construction.
                let mut capacity: Vec<f64> = if deficit > 0.0 {
                    (0..k).map(|i| cs.upper[i] - x[i]).collect()
                } else {
                    (0..k).map(|i| x[i] - cs.lower[i]).collect()
                };
                if let Some(ord) = &cs.ordering {
                    if deficit > 0.0 {
                        for step in (0..k - 1).rev() {
                            let i = ord.pi[step];
                            let succ = ord.pi[step + 1];
                            let slack = (x[succ] - x[i] - ord.gaps[step]).max(0.0);
                            capacity[i] = capacity[i].min(slack + capacity[succ]);
                        }
                    } else {
                        for step in 1..k {
                            let i = ord.pi[step];
                            let pred = ord.pi[step - 1];
                            let slack = (x[i] - x[pred] - ord.gaps[step - 1]).max(0.0);
                            capacity[i] = capacity[i].min(slack + capacity[pred]);
                        }
                    }
                }
                let total: f64 = capacity.iter().sum();
                if total > 0.0 {
                    let applied = deficit.abs().min(total);
                    for i in 0..k {
                        let delta = applied * capacity[i] / total;
                        x[i] += delta.copysign(deficit);
                        x[i] = x[i].clamp(cs.lower[i], cs.upper[i]);
                    }
                }
            }
        }

        if x == before {
            break;
        }
        // A bit-exact 2-cycle cannot improve further; settle on the current
        // iterate so re-projection reproduces it.
        if previous.as_deref() == Some(x.as_slice()) {
            break;
        }
        previous = Some(before);
        if pass + 1 == REDISTRIBUTE_HARD_CAP {
            log::warn!("clamp_redistribute did not reach a fixed point");
        }
    }
    Ok(x)
}

/// Violation magnitudes for one constraint type over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ViolationStats {
    pub abs_mean: f64,
    pub abs_std: f64,
    pub abs_max: f64,
    pub pct_mean: f64,
    pub pct_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ViolationReport {
    pub boxed: ViolationStats,
    pub order: ViolationStats,
    pub avg_price: ViolationStats,
}

fn stats(abs: &[f64], pct: &[f64]) -> ViolationStats {
    if abs.is_empty() {
        return ViolationStats::default();
    }
    let n = abs.len() as f64;
    let mean = abs.iter().sum::<f64>() / n;
    let var = abs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let pmean = pct.iter().sum::<f64>() / n;
    let pvar = pct.iter().map(|v| (v - pmean).powi(2)).sum::<f64>() / n;
    ViolationStats {
        abs_mean: mean,
        abs_std: var.sqrt(),
        abs_max: abs.iter().cloned().fold(0.0, f64::max),
        pct_mean: pmean,
        pct_std: pvar.sqrt(),
    }
}

/// Per-type violation statistics over a batch of price vectors. Percentage
/// scales: box span for Box, gap + 1 for Order, the target for AvgPrc.
pub fn violation_report(
    batch: &[Vec<f64>],
    cs: &ConstraintSet,
) -> Result<ViolationReport, ConstraintError> {
    cs.validate()?;
    if batch.is_empty() {
        return Err(ConstraintError::EmptyBatch);
    }
    let k = cs.k();
    let mut box_abs = Vec::new();
    let mut box_pct = Vec::new();
    let mut ord_abs = Vec::new();
    let mut ord_pct = Vec::new();
    let mut avg_abs = Vec::new();
    let mut avg_pct = Vec::new();

    for p in batch {
        if p.len() != k {
            return Err(ConstraintError::DimensionMismatch {
                expected: k,
                got: p.len(),
            });
        }
        for i in 0..k {
            let v = (cs.lower[i] - p[i]).max(0.0) + (p[i] - cs.upper[i]).max(0.0);
            let scale = (cs.upper[i] - cs.lower[i]).max(1e-12);
            box_abs.push(v);
            box_pct.push(v / scale);
        }
        if let Some(ord) = &cs.ordering {
            for (step, &i) in ord.pi.iter().enumerate().skip(1) {
                let gap = ord.gaps[step - 1];
                let v = (p[ord.pi[step - 1]] + gap - p[i]).max(0.0);
                ord_abs.push(v);
                ord_pct.push(v / (gap + 1.0));
            }
        }
        if let Some(avg) = &cs.avg_price {
            let mean = p.iter().sum::<f64>() / k as f64;
            let v = match avg.sense {
                AvgSense::AtLeast => (avg.target - mean).max(0.0),
                AvgSense::AtMost => (mean - avg.target).max(0.0),
                AvgSense::Equal => (mean - avg.target).abs(),
            };
            avg_abs.push(v);
            avg_pct.push(v / avg.target.abs().max(1e-12));
        }
    }

    Ok(ViolationReport {
        boxed: stats(&box_abs, &box_pct),
        order: stats(&ord_abs, &ord_pct),
        avg_price: stats(&avg_abs, &avg_pct),
    })
}

/// Sum of hinge losses over every constraint; zero iff feasible, piecewise
/// differentiable elsewhere. Used as the training penalty.
pub fn soft_penalty(p: &[f64], cs: &ConstraintSet) -> f64 {
    let k = cs.k();
    let mut total = 0.0;
    for i in 0..k {
        total += (cs.lower[i] - p[i]).max(0.0) + (p[i] - cs.upper[i]).max(0.0);
    }
    if let Some(ord) = &cs.ordering {
        for (step, &i) in ord.pi.iter().enumerate().skip(1) {
            total += (p[ord.pi[step - 1]] + ord.gaps[step - 1] - p[i]).max(0.0);
        }
    }
    if let Some(avg) = &cs.avg_price {
        let mean = p.iter().sum::<f64>() / k as f64;
        total += match avg.sense {
            AvgSense::AtLeast => (avg.target - mean).max(0.0),
            AvgSense::AtMost => (mean - avg.target).max(0.0),
            AvgSense::Equal => (mean - avg.target).abs(),
        };
    }
    total
}

/// Total absolute violation of a single vector: batch-report totals with
/// unit weights, used for before/after comparisons.
pub fn total_violation(p: &[f64], cs: &ConstraintSet) -> f64 {
    soft_penalty(p, cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_chain_example() {
        let ord = OrderingConstraint::identity(2, 0.5);
        let p = softplus_chain(&[1.0, 0.0], &ord);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.5 + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn softplus_chain_strict_even_for_very_negative_z() {
        let ord = OrderingConstraint::identity(2, 0.0);
        let p = softplus_chain(&[0.0, -40.0], &ord);
        let gap = p[1] - p[0];
        assert!(gap > 0.0);
        assert!(gap < 1e-17);
    }

    #[test]
    fn inverse_round_trip_and_ln2_anchor() {
        let ord = OrderingConstraint {
            pi: vec![2, 0, 1],
            gaps: vec![0.1, 0.3],
        };
        let z = vec![0.4, -1.2, 2.0];
        let p = softplus_chain(&z, &ord);
        let z_back = inverse_softplus_chain(&p, &ord).unwrap();
        for (a, b) in z.iter().zip(&z_back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        // A gap of exactly delta + ln 2 inverts to z = 0.
        let ord2 = OrderingConstraint::identity(2, 0.25);
        let p2 = vec![1.0, 1.25 + 2f64.ln()];
        let z2 = inverse_softplus_chain(&p2, &ord2).unwrap();
        assert_abs_diff_eq!(z2[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_rejects_violated_chain() {
        let ord = OrderingConstraint::identity(2, 0.5);
        assert!(matches!(
            inverse_softplus_chain(&[1.0, 1.2], &ord),
            Err(ConstraintError::NotInvertible { .. })
        ));
    }

    proptest! {
        #[test]
        fn softplus_chain_strict_ordering_property(
            z in proptest::collection::vec(-50.0f64..50.0, 2..6)
        ) {
            let ord = OrderingConstraint::identity(z.len(), 0.1);
            let p = softplus_chain(&z, &ord);
            for w in 1..z.len() {
                prop_assert!(p[w] > p[w - 1]);
                // Gap satisfaction up to one rounding ulp at this magnitude.
                let tol = 1e-12 * p[w].abs().max(1.0);
                prop_assert!(p[w] >= p[w - 1] + 0.1 - tol);
            }
        }

        #[test]
        fn inverse_round_trip_property(
            z in proptest::collection::vec(-20.0f64..20.0, 2..6)
        ) {
            let ord = OrderingConstraint::identity(z.len(), 0.05);
            let p = softplus_chain(&z, &ord);
            let z_back = inverse_softplus_chain(&p, &ord).unwrap();
            let p_back = softplus_chain(&z_back, &ord);
            for (a, b) in p.iter().zip(&p_back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clamp_pure_box() {
        let cs = ConstraintSet::box_only(vec![0.0, 0.0], vec![1.0, 1.0]);
        let out = clamp_redistribute(&[1.5, 0.2], &cs).unwrap();
        assert_eq!(out, vec![1.0, 0.2]);
    }

    #[test]
    fn clamp_single_ordering_lift() {
        let cs = ConstraintSet {
            lower: vec![0.0, 0.0],
            upper: vec![2.0, 2.0],
            ordering: Some(OrderingConstraint::identity(2, 0.1)),
            avg_price: None,
        };
        let out = clamp_redistribute(&[1.0, 0.2], &cs).unwrap();
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 1.1, epsilon = 1e-12);
    }

    #[test]
    fn clamp_avg_redistribution_proportional_to_headroom() {
        let cs = ConstraintSet {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            ordering: None,
            avg_price: Some(AvgPriceConstraint {
                target: 0.7,
                sense: AvgSense::AtLeast,
            }),
        };
        let out = clamp_redistribute(&[0.4, 0.8], &cs).unwrap();
        assert_abs_diff_eq!(out[0], 0.55, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.85, epsilon = 1e-12);
        let mean = (out[0] + out[1]) / 2.0;
        assert_abs_diff_eq!(mean, 0.7, epsilon = 1e-9);
    }

    #[test]
    fn clamp_rejects_infeasible_set() {
        let cs = ConstraintSet::box_only(vec![2.0], vec![1.0]);
        assert!(matches!(
            clamp_redistribute(&[0.5], &cs),
            Err(ConstraintError::Infeasible(_))
        ));
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, ConstraintSet) {
        let k = rng.gen_range(2..=6);
        let lower: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..0.5)).collect();
        let upper: Vec<f64> = lower.iter().map(|lo| lo + rng.gen_range(1.0..3.0)).collect();
        let ordering = if rng.gen_bool(0.7) {
            // Small gaps keep the chain feasible inside the box.
            let gaps: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.0..0.1)).collect();
            let mut pi: Vec<usize> = (0..k).collect();
            for i in (1..k).rev() {
                pi.swap(i, rng.gen_range(0..=i));
            }
            Some(OrderingConstraint { pi, gaps })
        } else {
            None
        };
        let avg_price = if rng.gen_bool(0.6) {
            let lo_mean = lower.iter().sum::<f64>() / k as f64;
            let hi_mean = upper.iter().sum::<f64>() / k as f64;
            Some(AvgPriceConstraint {
                target: rng.gen_range(lo_mean..hi_mean),
                sense: match rng.gen_range(0..3) {
                    0 => AvgSense::AtLeast,
                    1 => AvgSense::AtMost,
                    _ => AvgSense::Equal,
                },
            })
        } else {
            None
        };
        let cs = ConstraintSet {
            lower,
            upper,
            ordering,
            avg_price,
        };
        let p: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..4.0)).collect();
        (p, cs)
    }

    #[test]
    fn clamp_is_idempotent_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let (p, cs) = random_case(&mut rng);
            if cs.validate().is_err() {
                continue;
            }
            let once = clamp_redistribute(&p, &cs).unwrap();
            let twice = clamp_redistribute(&once, &cs).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn clamp_reduces_total_violation_by_more_than_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut count = 0;
        let mut before_total = 0.0;
        let mut after_total = 0.0;
        while count < 1000 {
            let (p, cs) = random_case(&mut rng);
            if cs.validate().is_err() {
                continue;
            }
            let before = total_violation(&p, &cs);
            if before < 1e-6 {
                continue;
            }
            count += 1;
            let projected = clamp_redistribute(&p, &cs).unwrap();
            before_total += before;
            after_total += total_violation(&projected, &cs);
            // Box violation is exactly zero after projection.
            let report = violation_report(&[projected], &cs).unwrap();
            assert_eq!(report.boxed.abs_mean, 0.0);
            assert_eq!(report.boxed.abs_max, 0.0);
        }
        assert!(
            after_total < 0.5 * before_total,
            "violation {before_total} -> {after_total} not halved"
        );
    }

    #[test]
    fn report_example_arithmetic() {
        let cs = ConstraintSet::box_only(vec![0.0, 0.0], vec![1.0, 1.0]);
        let report = violation_report(&[vec![1.19, 0.5]], &cs).unwrap();
        assert_abs_diff_eq!(report.boxed.abs_mean, 0.095, epsilon = 1e-12);
        assert_abs_diff_eq!(report.boxed.abs_max, 0.19, epsilon = 1e-12);
    }

    #[test]
    fn report_all_feasible_is_zero_and_empty_batch_errors() {
        let cs = ConstraintSet {
            lower: vec![0.0, 0.0],
            upper: vec![2.0, 2.0],
            ordering: Some(OrderingConstraint::identity(2, 0.1)),
            avg_price: Some(AvgPriceConstraint {
                target: 1.0,
                sense: AvgSense::AtMost,
            }),
        };
        let report = violation_report(&[vec![0.5, 0.9]], &cs).unwrap();
        assert_eq!(report.boxed.abs_mean, 0.0);
        assert_eq!(report.order.abs_mean, 0.0);
        assert_eq!(report.avg_price.abs_mean, 0.0);
        assert!(matches!(
            violation_report(&[], &cs),
            Err(ConstraintError::EmptyBatch)
        ));
    }

    #[test]
    fn soft_penalty_matches_report_totals() {
        let cs = ConstraintSet {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            ordering: Some(OrderingConstraint::identity(2, 0.2)),
            avg_price: Some(AvgPriceConstraint {
                target: 0.9,
                sense: AvgSense::AtLeast,
            }),
        };
        let p = vec![1.3, 0.1];
        let pen = soft_penalty(&p, &cs);
        let rep = violation_report(&[p.clone()], &cs).unwrap();
        let total = rep.boxed.abs_mean * 2.0 + rep.order.abs_mean + rep.avg_price.abs_mean;
        assert_abs_diff_eq!(pen, total, epsilon = 1e-12);
        // Feasible input (mean 0.9, ordering gap met): zero. Box breach by
        // epsilon: epsilon.
        assert_eq!(soft_penalty(&[0.8, 1.0], &cs), 0.0);
        let cs2 = ConstraintSet::box_only(vec![0.0], vec![1.0]);
        assert_abs_diff_eq!(soft_penalty(&[1.0 + 0.125], &cs2), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn tight_box_leaves_residual_ordering_violation_reported() {
        let cs = ConstraintSet {
            lower: vec![0.0, 0.0],
            upper: vec![2.0, 0.5],
            ordering: Some(OrderingConstraint::identity(2, 0.0)),
            avg_price: None,
        };
        // Feasible chain exists (e.g. 0.1, 0.2) so the set validates, but
        // this input forces the lift into the upper bound.
        let out = clamp_redistribute(&[1.8, 0.1], &cs).unwrap();
        assert_eq!(out, vec![1.8, 0.5]);
        let rep = violation_report(&[out], &cs).unwrap();
        assert!(rep.order.abs_max > 0.0);
        assert_eq!(rep.boxed.abs_max, 0.0);
    }
}

