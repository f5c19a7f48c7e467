//! Model-free evaluation of a pricing policy against realized wins and
//! losses: price increase/decrease recall, booking regret, MAE, and the
//! composite KPI min(PDR, PIR).
//!
//! Definitions (strict inequalities, primary-product comparison by default):
//! PIR is the share of wins where the recommendation exceeded the actual
//! price; PDR the share of losses where it was below; BR the missed upsell
//! on wins normalized by total won revenue. Empty denominators report as
//! undefined rather than zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{choice_probs, ChoiceError, ChoiceModelSpec};

#[derive(Error, Debug)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("record {index}: recommended/actual price shapes differ")]
    ShapeMismatch { index: usize },
    #[error(transparent)]
    Choice(#[from] ChoiceError),
}

/// One evaluated transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub actual_price: Vec<f64>,
    pub recommended_price: Vec<f64>,
    pub won: bool,
    pub actual_revenue: f64,
    /// Oracle label prices, when the environment is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_price: Option<Vec<f64>>,
}

/// PDR/PIR classification threshold; both above this is "strong".
pub const STRONG_THRESHOLD: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Price decrease recall; None when there are no losses.
    pub pdr: Option<f64>,
    /// Price increase recall; None when there are no wins.
    pub pir: Option<f64>,
    pub br: f64,
    pub mae: f64,
    /// min(PDR, PIR); None when either is undefined.
    pub kpi: Option<f64>,
    pub n_wins: usize,
    pub n_losses: usize,
    /// True when both recalls exceed [`STRONG_THRESHOLD`].
    pub strong: bool,
    /// Set when the experimental extended-BR mode contributed loss terms.
    pub br_extended: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricsOptions {
    /// Compare every product's price instead of only the primary one.
    pub per_product: bool,
    /// Experimental: add an avoidable-loss proxy to BR on losses priced at
    /// or above the actual offer.
    pub extended_br: bool,
}

fn primary(p: &[f64]) -> f64 {
    p[0]
}

/// Computes the report over a batch of records; a single associative pass,
/// permutation-invariant.
pub fn compute_metrics(
    records: &[EvalRecord],
    opts: MetricsOptions,
) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut n_wins = 0usize;
    let mut n_losses = 0usize;
    let mut pir_hits = 0usize;
    let mut pdr_hits = 0usize;
    let mut missed_upsell = 0.0;
    let mut won_actual = 0.0;
    let mut avoidable_loss = 0.0;
    let mut abs_err = 0.0;
    let mut n_err = 0usize;

    for (i, r) in records.iter().enumerate() {
        if r.recommended_price.len() != r.actual_price.len()
            || r.actual_price.is_empty()
        {
            return Err(MetricsError::ShapeMismatch { index: i });
        }
        let (rec, act) = (primary(&r.recommended_price), primary(&r.actual_price));
        if r.won {
            n_wins += 1;
            won_actual += act;
            if rec > act {
                pir_hits += 1;
            }
            if rec < act {
                missed_upsell += act - rec;
            }
        } else {
            n_losses += 1;
            if rec < act {
                pdr_hits += 1;
            }
            if opts.extended_br && rec >= act {
                avoidable_loss += r.actual_revenue;
            }
        }
        let target: &[f64] = r.label_price.as_deref().unwrap_or(&r.actual_price);
        if opts.per_product {
            for (a, b) in r.recommended_price.iter().zip(target) {
                abs_err += (a - b).abs();
                n_err += 1;
            }
        } else {
            abs_err += (rec - primary(target)).abs();
            n_err += 1;
        }
    }

    let pir = (n_wins > 0).then(|| pir_hits as f64 / n_wins as f64);
    let pdr = (n_losses > 0).then(|| pdr_hits as f64 / n_losses as f64);
    let kpi = match (pdr, pir) {
        (Some(a), Some(b)) => Some(a.min(b)),
        _ => None,
    };
    let br = if won_actual > 0.0 {
        (missed_upsell + avoidable_loss) / won_actual
    } else {
        0.0
    };
    Ok(MetricsReport {
        pdr,
        pir,
        br,
        mae: abs_err / n_err as f64,
        kpi,
        n_wins,
        n_losses,
        strong: matches!((pdr, pir), (Some(d), Some(i)) if d > STRONG_THRESHOLD && i > STRONG_THRESHOLD),
        br_extended: opts.extended_br,
    })
}

/// Average purchase probability `1 - q_outside` at the recommended prices
/// under a known ground-truth spec. Controlled experiments only.
pub fn estimated_win_rate(
    policy_prices: &[Vec<f64>],
    spec: &ChoiceModelSpec,
) -> Result<f64, MetricsError> {
    if policy_prices.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut total = 0.0;
    for p in policy_prices {
        total += 1.0 - choice_probs(spec, p)?.outside;
    }
    Ok(total / policy_prices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::simulate_choice;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(actual: f64, rec: f64, won: bool) -> EvalRecord {
        EvalRecord {
            actual_price: vec![actual],
            recommended_price: vec![rec],
            won,
            actual_revenue: if won { actual } else { 0.0 },
            label_price: None,
        }
    }

    #[test]
    fn hand_counted_example() {
        let records = vec![
            record(1.0, 1.2, true),
            record(1.0, 0.8, true),
            record(1.0, 0.9, false),
            record(1.0, 1.1, false),
        ];
        let m = compute_metrics(&records, MetricsOptions::default()).unwrap();
        assert_eq!(m.pir, Some(0.5));
        assert_eq!(m.pdr, Some(0.5));
        assert_abs_diff_eq!(m.br, 0.1, epsilon = 1e-12);
        assert_eq!(m.kpi, Some(0.5));
        assert!(!m.strong);
    }

    #[test]
    fn identical_recommendations_score_zero() {
        let records = vec![record(1.0, 1.0, true), record(2.0, 2.0, false)];
        let m = compute_metrics(&records, MetricsOptions::default()).unwrap();
        assert_eq!(m.pir, Some(0.0));
        assert_eq!(m.pdr, Some(0.0));
        assert_eq!(m.br, 0.0);
        assert_eq!(m.mae, 0.0);
    }

    #[test]
    fn strong_threshold_fires_above_0_55() {
        // 3 of 5 wins raised (0.6), 3 of 5 losses lowered (0.6).
        let mut records = Vec::new();
        for i in 0..5 {
            records.push(record(1.0, if i < 3 { 1.2 } else { 0.9 }, true));
            records.push(record(1.0, if i < 3 { 0.8 } else { 1.1 }, false));
        }
        let m = compute_metrics(&records, MetricsOptions::default()).unwrap();
        assert_eq!(m.pir, Some(0.6));
        assert_eq!(m.pdr, Some(0.6));
        assert!(m.strong);
    }

    #[test]
    fn all_wins_reports_undefined_pdr_not_zero() {
        let records = vec![record(1.0, 1.2, true)];
        let m = compute_metrics(&records, MetricsOptions::default()).unwrap();
        assert_eq!(m.pdr, None);
        assert_eq!(m.pir, Some(1.0));
        assert_eq!(m.kpi, None);
        assert!(matches!(
            compute_metrics(&[], MetricsOptions::default()),
            Err(MetricsError::EmptyInput)
        ));
    }

    #[test]
    fn scaling_prices_preserves_recalls_and_scales_mae() {
        let records = vec![
            record(1.0, 1.3, true),
            record(1.5, 1.1, true),
            record(0.8, 0.7, false),
            record(1.2, 1.4, false),
        ];
        let lambda = 3.7;
        let scaled: Vec<EvalRecord> = records
            .iter()
            .map(|r| EvalRecord {
                actual_price: r.actual_price.iter().map(|p| p * lambda).collect(),
                recommended_price: r.recommended_price.iter().map(|p| p * lambda).collect(),
                won: r.won,
                actual_revenue: r.actual_revenue * lambda,
                label_price: None,
            })
            .collect();
        let a = compute_metrics(&records, MetricsOptions::default()).unwrap();
        let b = compute_metrics(&scaled, MetricsOptions::default()).unwrap();
        assert_eq!(a.pir, b.pir);
        assert_eq!(a.pdr, b.pdr);
        assert_abs_diff_eq!(a.br, b.br, epsilon = 1e-12);
        assert_abs_diff_eq!(b.mae, lambda * a.mae, epsilon = 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let records = vec![
            record(1.0, 1.2, true),
            record(1.0, 0.8, true),
            record(1.0, 0.9, false),
        ];
        let mut reversed = records.clone();
        reversed.reverse();
        assert_eq!(
            compute_metrics(&records, MetricsOptions::default()).unwrap(),
            compute_metrics(&reversed, MetricsOptions::default()).unwrap()
        );
    }

    #[test]
    fn mae_uses_labels_when_present() {
        let mut r = record(1.0, 1.5, true);
        r.label_price = Some(vec![1.3]);
        let m = compute_metrics(&[r], MetricsOptions::default()).unwrap();
        assert_abs_diff_eq!(m.mae, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn extended_br_adds_avoidable_losses() {
        let records = vec![
            record(1.0, 0.8, true),      // missed upsell 0.2
            {
                let mut r = record(1.0, 1.2, false); // rec >= actual on a loss
                r.actual_revenue = 0.5;
                r
            },
        ];
        let base = compute_metrics(&records, MetricsOptions::default()).unwrap();
        let ext = compute_metrics(
            &records,
            MetricsOptions {
                extended_br: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(base.br, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(ext.br, (0.2 + 0.5) / 1.0, epsilon = 1e-12);
        assert!(ext.br_extended);
    }

    #[test]
    fn win_rate_trivial_points() {
        let spec = ChoiceModelSpec::Mnl {
            alpha: vec![0.0],
            beta: 1.0,
        };
        let wr = estimated_win_rate(&[vec![0.0]], &spec).unwrap();
        assert_abs_diff_eq!(wr, 0.5, epsilon = 1e-12);
        let wr_far = estimated_win_rate(&[vec![50.0]], &spec).unwrap();
        assert!(wr_far < 1e-6);
    }

    #[test]
    fn win_rate_matches_monte_carlo() {
        let spec = ChoiceModelSpec::Mnl {
            alpha: vec![0.7, -0.1],
            beta: 1.3,
        };
        let p = vec![0.9, 1.4];
        let wr = estimated_win_rate(&[p.clone()], &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut wins = 0usize;
        for _ in 0..n {
            if simulate_choice(&spec, &p, &mut rng).unwrap() != 0 {
                wins += 1;
            }
        }
        assert_abs_diff_eq!(wins as f64 / n as f64, wr, epsilon = 0.01);
    }
}
