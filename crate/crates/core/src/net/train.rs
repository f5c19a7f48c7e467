//! Loss assembly, the AdamW training loop, gradient checking, and
//! checkpoint serialization.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::model::{context_indices, C3poModel, ModelError, TapeParams, K_MAX};
use super::tape::{Tape, TapeError, TensorId};
use super::Ablation;
use crate::constraints::{AvgSense, ConstraintSet};
use crate::datagen::{whatif_own_elasticity, ChoiceDataset, DatasetRow};

const CKPT_MAGIC: &[u8; 8] = b"C3PONET\0";
const CKPT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("non-finite loss at step {step}; state snapshot written to {snapshot}")]
    Diverged { step: usize, snapshot: PathBuf },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("config serialization: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub ablation: Ablation,
    /// Optional business constraint applied as a soft penalty during
    /// training (hard projection happens at prediction time).
    pub constraint: Option<ConstraintSet>,
    /// Directory for the divergence snapshot; temp dir when unset.
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Total loss per optimization step, in execution order.
    pub loss_trace: Vec<f64>,
    pub steps: usize,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    fn new(n: usize) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, b1: f64, b2: f64, wd: f64) {
        self.t += 1;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * wd * params[i];
            params[i] -= lr * mhat / (vhat.sqrt() + 1e-8);
        }
    }
}

/// Builds the full training loss for one query batch on a fresh tape.
/// Returns the tape, the live parameter handles, and the scalar loss node.
fn batch_loss(
    model: &C3poModel,
    ctx: &[&DatasetRow],
    qry: &[&DatasetRow],
    k: usize,
    prior: (f64, f64),
    constraint: Option<&ConstraintSet>,
    ablation: Ablation,
    step: usize,
) -> Result<(Tape, TapeParams, TensorId), TrainError> {
    let w = &model.config.weights;
    let n = qry.len();
    let mut tape = Tape::new();
    let tp = model.params.push_all(&mut tape);
    let fwd = model.forward(&mut tape, &tp, ctx, qry, k, prior, ablation)?;

    // Supervised price imitation.
    let labels: Vec<f64> = qry.iter().flat_map(|r| r.label.iter().cloned()).collect();
    let price_loss = tape.smooth_l1(fwd.price, &labels)?;
    let mut total = tape.scale(price_loss, w.price);

    if !ablation.imitation_only {
        // Supervised revenue: predict the outcome of one what-if probe per
        // query through the revenue head.
        let mut probe_prices = vec![0.0; n * K_MAX];
        let mut probe_rev = vec![0.0; n];
        for (qi, row) in qry.iter().enumerate() {
            let wi = (step * 7 + qi) % row.whatif.len();
            let (p, r) = &row.whatif[wi];
            for (j, pj) in p.iter().enumerate() {
                probe_prices[qi * K_MAX + j] = *pj;
            }
            probe_rev[qi] = *r;
        }
        let probe = tape.leaf(n, K_MAX, probe_prices);
        let rev_pred = model.revenue(&mut tape, &tp, fwd.hidden, probe)?;
        let rev_loss = tape.smooth_l1(rev_pred, &probe_rev)?;
        let term = tape.scale(rev_loss, w.revenue);
        total = tape.add(total, term)?;

        // Reward: the revenue head, with its parameters and the query
        // representation frozen, scores the predicted price. Maximizing it
        // pulls gradients only into the price pathway.
        let frozen = model.params.push_all(&mut tape);
        let hidden_const = {
            let (hr, hc) = tape.shape(fwd.hidden);
            let v = tape.value(fwd.hidden).to_vec();
            tape.leaf(hr, hc, v)
        };
        let price_pad = if k < K_MAX {
            let zeros = tape.leaf(n, K_MAX - k, vec![0.0; n * (K_MAX - k)]);
            tape.concat_cols(&[fwd.price, zeros])?
        } else {
            fwd.price
        };
        let reward = model.revenue(&mut tape, &frozen, hidden_const, price_pad)?;
        let reward_mean = tape.mean_all(reward);
        let term = tape.scale(reward_mean, -w.reward);
        total = tape.add(total, term)?;

        // Supervised elasticity on the primary product, where a finite
        // difference target is available from the what-if probes.
        let mut el_ids = Vec::new();
        let mut el_targets = Vec::new();
        let e_first = tape.slice_cols(fwd.elasticity, 0, 1)?;
        for (qi, row) in qry.iter().enumerate() {
            if let Some(t) = whatif_own_elasticity(row) {
                el_ids.push(tape.slice_rows(e_first, qi, 1)?);
                el_targets.push(t);
            }
        }
        if !el_ids.is_empty() {
            let e_sup = tape.concat_rows(&el_ids)?;
            let el_loss = tape.smooth_l1(e_sup, &el_targets)?;
            let term = tape.scale(el_loss, w.elasticity);
            total = tape.add(total, term)?;
        }

        // Anchor: penalize elasticity magnitudes drifting from 1.
        let ones = tape.leaf(n, k, vec![1.0; n * k]);
        let e_abs = tape.abs(fwd.elasticity);
        let dev = tape.sub(e_abs, ones)?;
        let dev = tape.abs(dev);
        let anchor = tape.mean_all(dev);
        let term = tape.scale(anchor, w.anchor);
        total = tape.add(total, term)?;

        // Prior: hinge on elasticity predictions leaving the prior range.
        if !ablation.prior_off {
            let low = tape.leaf(n, k, vec![prior.0; n * k]);
            let high = tape.leaf(n, k, vec![prior.1; n * k]);
            let below = tape.sub(low, fwd.elasticity)?;
            let below = tape.relu(below);
            let above = tape.sub(fwd.elasticity, high)?;
            let above = tape.relu(above);
            let pen = tape.add(below, above)?;
            let pen = tape.mean_all(pen);
            let term = tape.scale(pen, w.prior);
            total = tape.add(total, term)?;
        }
    }

    if let Some(cs) = constraint {
        let pen = soft_penalty_on_tape(&mut tape, fwd.price, n, k, cs)?;
        let term = tape.scale(pen, w.constraint / n as f64);
        total = tape.add(total, term)?;
    }

    Ok((tape, tp, total))
}

/// Differentiable version of the hinge penalty in `constraints`, summed
/// over the batch rows of `price` (`[n, k]`).
fn soft_penalty_on_tape(
    tape: &mut Tape,
    price: TensorId,
    n: usize,
    k: usize,
    cs: &ConstraintSet,
) -> Result<TensorId, TapeError> {
    let mut terms = Vec::new();
    let lower = tape.leaf(1, k, cs.lower.clone());
    let upper = tape.leaf(1, k, cs.upper.clone());
    let neg_p = tape.scale(price, -1.0);
    let below = tape.add_row(neg_p, lower)?;
    let below = tape.relu(below);
    terms.push(tape.sum_all(below));
    let neg_u = tape.scale(upper, -1.0);
    let above = tape.add_row(price, neg_u)?;
    let above = tape.relu(above);
    terms.push(tape.sum_all(above));

    if let Some(ord) = &cs.ordering {
        for (step, &i) in ord.pi.iter().enumerate().skip(1) {
            let prev = tape.slice_cols(price, ord.pi[step - 1], 1)?;
            let cur = tape.slice_cols(price, i, 1)?;
            let diff = tape.sub(prev, cur)?;
            let gap = tape.leaf(n, 1, vec![ord.gaps[step - 1]; n]);
            let v = tape.add(diff, gap)?;
            let v = tape.relu(v);
            terms.push(tape.sum_all(v));
        }
    }

    if let Some(avg) = &cs.avg_price {
        let ones = tape.leaf(k, 1, vec![1.0 / k as f64; k]);
        let mean = tape.matmul(price, ones)?;
        let target = tape.leaf(n, 1, vec![avg.target; n]);
        let diff = tape.sub(mean, target)?;
        let pen = match avg.sense {
            AvgSense::AtLeast => {
                let d = tape.scale(diff, -1.0);
                tape.relu(d)
            }
            AvgSense::AtMost => tape.relu(diff),
            AvgSense::Equal => tape.abs(diff),
        };
        terms.push(tape.sum_all(pen));
    }

    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t)?;
    }
    Ok(total)
}

/// Sequential training over the given datasets. The loss trace is fully
/// deterministic for a fixed config, dataset list, and options.
pub fn train(
    model: &mut C3poModel,
    datasets: &[ChoiceDataset],
    opts: &TrainOptions,
) -> Result<TrainReport, TrainError> {
    let cfg = model.config.clone();
    let mut opt = AdamW::new(model.params.count());
    let mut trace = Vec::new();
    let mut global_step = 0usize;

    for ds in datasets {
        let n = ds.rows.len();
        let ctx_idx = context_indices(n, &cfg, opts.ablation, ds.meta.seed);
        let ctx: Vec<&DatasetRow> = ctx_idx.iter().map(|&i| &ds.rows[i]).collect();
        let mut pool: Vec<usize> = (0..n).filter(|i| !ctx_idx.contains(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ds.meta.seed.rotate_left(17));

        for _ in 0..cfg.steps_per_dataset {
            for i in (1..pool.len()).rev() {
                let j = rng.gen_range(0..=i);
                pool.swap(i, j);
            }
            let take = cfg.batch_size.min(pool.len()).max(1);
            let qry: Vec<&DatasetRow> = pool[..take].iter().map(|&i| &ds.rows[i]).collect();

            let (mut tape, tp, loss) = batch_loss(
                model,
                &ctx,
                &qry,
                ds.meta.k,
                ds.meta.elasticity_range,
                opts.constraint.as_ref(),
                opts.ablation,
                global_step,
            )?;
            let loss_val = tape.scalar_value(loss);
            if !loss_val.is_finite() {
                let dir = opts
                    .snapshot_dir
                    .clone()
                    .unwrap_or_else(std::env::temp_dir);
                let snapshot = dir.join(format!("c3po-diverged-step{global_step}.ckpt"));
                save_checkpoint(model, &snapshot)?;
                return Err(TrainError::Diverged {
                    step: global_step,
                    snapshot,
                });
            }
            log::debug!("step {global_step} loss {loss_val:.6}");
            trace.push(loss_val);

            let node_grads = tape.backward(loss);
            let grads = model.params.collect_grads(&tp, &node_grads);
            opt.step(
                &mut model.params.data,
                &grads,
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.weight_decay,
            );
            global_step += 1;
        }
    }

    Ok(TrainReport {
        steps: global_step,
        loss_trace: trace,
    })
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Central finite-difference check of the full training loss against the
/// reverse-mode gradient on up to `max_params` randomly sampled parameters.
pub fn grad_check(
    model: &mut C3poModel,
    dataset: &ChoiceDataset,
    max_params: usize,
) -> Result<GradCheckReport, TrainError> {
    let ctx: Vec<&DatasetRow> = dataset.rows[..4.min(dataset.rows.len())].iter().collect();
    let qry: Vec<&DatasetRow> = dataset.rows[4..6.min(dataset.rows.len())].iter().collect();
    let k = dataset.meta.k;
    let prior = dataset.meta.elasticity_range;
    let ab = Ablation::standard();

    // The reward term deliberately stops gradients at the frozen revenue
    // head and the detached query representation, so a finite-difference
    // probe (which re-evaluates both) would disagree by design. Check the
    // differentiable-consistent part of the loss.
    let saved_reward = model.config.weights.reward;
    model.config.weights.reward = 0.0;

    let (mut tape, tp, loss) = batch_loss(model, &ctx, &qry, k, prior, None, ab, 0)?;
    let node_grads = tape.backward(loss);
    let grads = model.params.collect_grads(&tp, &node_grads);

    let n = model.params.count();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    let mut picked: Vec<usize> = (0..max_params.min(n)).map(|_| rng.gen_range(0..n)).collect();
    picked.sort_unstable();
    picked.dedup();

    let h = 1e-4;
    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;
    let eval_at = |model: &mut C3poModel, i: usize, x: f64| -> Result<f64, TrainError> {
        let orig = model.params.data[i];
        model.params.data[i] = x;
        let out = batch_loss(model, &ctx, &qry, k, prior, None, ab, 0);
        model.params.data[i] = orig;
        let (tape, _, l) = out?;
        Ok(tape.scalar_value(l))
    };
    for &i in &picked {
        let orig = model.params.data[i];
        let fd = |h: f64, model: &mut C3poModel| -> Result<f64, TrainError> {
            let fp = eval_at(model, i, orig + h)?;
            let fm = eval_at(model, i, orig - h)?;
            Ok((fp - fm) / (2.0 * h))
        };
        let fd_h = fd(h, model)?;
        let fd_h2 = fd(h / 2.0, model)?;
        // Central differences at two step sizes must agree for the probe
        // itself to be trustworthy; when a ReLU or abs kink falls inside
        // the stencil they diverge, and that coordinate certifies nothing
        // either way, so it is skipped rather than compared.
        let fd_gap = (fd_h - fd_h2).abs() / (fd_h.abs() + fd_h2.abs()).max(1e-3);
        if fd_gap > 1e-3 {
            continue;
        }
        let ad = grads[i];
        let rel = (fd_h2 - ad).abs() / (fd_h2.abs() + ad.abs()).max(1e-3);
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    model.config.weights.reward = saved_reward;
    Ok(GradCheckReport {
        checked,
        max_rel_err: max_rel,
    })
}

/// Binary checkpoint: magic, version, config as JSON, then the parameter
/// vector as little-endian f64.
pub fn save_checkpoint(model: &C3poModel, path: &Path) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(CKPT_MAGIC)?;
    f.write_all(&CKPT_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(&model.config)?;
    f.write_all(&(cfg.len() as u32).to_le_bytes())?;
    f.write_all(&cfg)?;
    f.write_all(&(model.params.count() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(model.params.count() * 8);
    for x in &model.params.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<C3poModel, TrainError> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(TrainError::Format("bad magic bytes".into()));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CKPT_VERSION {
        return Err(TrainError::Format(format!("unsupported version {version}")));
    }
    f.read_exact(&mut u32buf)?;
    let cfg_len = u32::from_le_bytes(u32buf) as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    f.read_exact(&mut cfg_buf)?;
    let config: super::C3poConfig = serde_json::from_slice(&cfg_buf)?;
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let mut model = C3poModel::new(config);
    if model.params.count() != count {
        return Err(TrainError::Format(format!(
            "parameter count {} does not match config-derived count {}",
            count,
            model.params.count()
        )));
    }
    let mut buf = vec![0u8; count * 8];
    f.read_exact(&mut buf)?;
    for (i, chunk) in buf.chunks_exact(8).enumerate() {
        model.params.data[i] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    Ok(model)
}
