//! Parameter storage and the forward pass.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tape::{prefix_mask, Tape, TapeError, TensorId};
use super::{Ablation, C3poConfig};
use crate::datagen::{ChoiceDataset, DatasetRow, NUM_ATTRIBUTES};

/// Maximum products per category the token layout supports.
pub const K_MAX: usize = 6;

/// Width of one input token: two type flags, one attribute value slot,
/// `K_MAX` price slots, one revenue slot, one product-count slot.
const IN_W: usize = 2 + 1 + K_MAX + 1 + 1;
/// Width of a context label embedding input: `K_MAX` prices plus the
/// product-count slot.
const LABEL_W: usize = K_MAX + 1;
/// Elasticity prior channel width (range low, high).
const PRIOR_W: usize = 2;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("category has {k} products, exceeding the configured capacity {max}")]
    Capacity { k: usize, max: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("constraint projection failed: {0}")]
    Constraint(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Named parameter matrices stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, usize, usize, usize)>, // name, rows, cols, offset
    index: HashMap<String, usize>,
    pub data: Vec<f64>,
}

enum Init {
    Xavier,
    Const(f64),
}

impl ParamSet {
    fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    fn register<R: Rng>(&mut self, rng: &mut R, name: &str, rows: usize, cols: usize, init: Init) {
        let offset = self.data.len();
        match init {
            Init::Xavier => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                self.data
                    .extend((0..rows * cols).map(|_| rng.gen_range(-bound..bound)));
            }
            Init::Const(c) => self.data.extend(std::iter::repeat(c).take(rows * cols)),
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), rows, cols, offset));
    }

    pub fn count(&self) -> usize {
        self.data.len()
    }

    /// (offset, length) of one named matrix in the flat vector.
    pub fn range_of(&self, name: &str) -> Option<(usize, usize)> {
        self.index.get(name).map(|&i| {
            let (_, rows, cols, offset) = self.entries[i];
            (offset, rows * cols)
        })
    }

    /// Pushes every parameter matrix onto a tape as a leaf. Called a second
    /// time, the returned handles form an independent (frozen) copy whose
    /// gradients can simply be ignored.
    pub fn push_all(&self, tape: &mut Tape) -> TapeParams {
        let ids = self
            .entries
            .iter()
            .map(|(_, rows, cols, offset)| {
                tape.leaf(*rows, *cols, self.data[*offset..offset + rows * cols].to_vec())
            })
            .collect();
        TapeParams { ids }
    }

    /// Flattens per-node gradients back into parameter order.
    pub fn collect_grads(&self, tp: &TapeParams, node_grads: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for (entry, id) in self.entries.iter().zip(&tp.ids) {
            let (_, rows, cols, offset) = entry;
            out[*offset..offset + rows * cols].copy_from_slice(&node_grads[id.0]);
        }
        out
    }
}

/// Tape handles for one pushed copy of a [`ParamSet`].
pub struct TapeParams {
    ids: Vec<TensorId>,
}

/// Output of one forward pass over a query batch.
#[derive(Debug)]
pub struct ForwardOut {
    /// Predicted prices, `[n_query, k]`, positive by construction.
    pub price: TensorId,
    /// Per-product elasticity predictions, `[n_query, k]`.
    pub elasticity: TensorId,
    /// Query representations feeding the heads, `[n_query, d_model]`.
    pub hidden: TensorId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct C3poModel {
    pub config: C3poConfig,
    pub params: ParamSet,
}

impl C3poModel {
    pub fn new(config: C3poConfig) -> Self {
        assert!(
            config.d_model % config.n_heads == 0,
            "d_model must be divisible by n_heads"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc3b0);
        let d = config.d_model;
        let f = d * config.ffn_mult;
        let mut p = ParamSet::new();
        p.register(&mut rng, "embed.w", IN_W, d, Init::Xavier);
        p.register(&mut rng, "embed.b", 1, d, Init::Const(0.0));
        p.register(&mut rng, "prior.w", d + PRIOR_W, d, Init::Xavier);
        p.register(&mut rng, "prior.b", 1, d, Init::Const(0.0));
        p.register(&mut rng, "label.w", LABEL_W, d, Init::Xavier);
        p.register(&mut rng, "label.b", 1, d, Init::Const(0.0));
        let blocks = [
            ("intra", config.n_layers_intra),
            ("cross", config.n_layers_cross),
            ("icl", config.n_layers_icl),
        ];
        for (stage, layers) in blocks {
            for l in 0..layers {
                for mat in ["wq", "wk", "wv", "wo"] {
                    p.register(&mut rng, &format!("{stage}.{l}.{mat}"), d, d, Init::Xavier);
                }
                for bias in ["bq", "bk", "bv", "bo"] {
                    p.register(&mut rng, &format!("{stage}.{l}.{bias}"), 1, d, Init::Const(0.0));
                }
                p.register(&mut rng, &format!("{stage}.{l}.ff1.w"), d, f, Init::Xavier);
                p.register(&mut rng, &format!("{stage}.{l}.ff1.b"), 1, f, Init::Const(0.0));
                p.register(&mut rng, &format!("{stage}.{l}.ff2.w"), f, d, Init::Xavier);
                p.register(&mut rng, &format!("{stage}.{l}.ff2.b"), 1, d, Init::Const(0.0));
            }
        }
        p.register(&mut rng, "price.w", d, K_MAX, Init::Xavier);
        // Bias so initial prices start near softplus(1) ~ 1.31, inside the
        // what-if price range, instead of near zero.
        p.register(&mut rng, "price.b", 1, K_MAX, Init::Const(1.0));
        p.register(&mut rng, "elast.w", d, K_MAX, Init::Xavier);
        p.register(&mut rng, "elast.b", 1, K_MAX, Init::Const(-1.0));
        p.register(&mut rng, "rev1.w", d + K_MAX, d, Init::Xavier);
        p.register(&mut rng, "rev1.b", 1, d, Init::Const(0.0));
        p.register(&mut rng, "rev2.w", d, 1, Init::Xavier);
        p.register(&mut rng, "rev2.b", 1, 1, Init::Const(0.0));
        C3poModel { config, params: p }
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn id(&self, tp: &TapeParams, name: &str) -> TensorId {
        let i = *self
            .params
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        tp.ids[i]
    }

    /// Linear layer `x @ w + b` with named weights.
    fn linear(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        x: TensorId,
        w: &str,
        b: &str,
    ) -> Result<TensorId, TapeError> {
        let y = tape.matmul(x, self.id(tp, w))?;
        tape.add_row(y, self.id(tp, b))
    }

    /// Pre-norm transformer layer: multi-head self-attention plus a two
    /// layer feed-forward block, both with residual connections.
    fn layer(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        x: TensorId,
        stage: &str,
        l: usize,
        mask: Option<&[f64]>,
    ) -> Result<TensorId, TapeError> {
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let n = format!("{stage}.{l}");

        let ln = tape.layer_norm_rows(x);
        let q = self.linear(tape, tp, ln, &format!("{n}.wq"), &format!("{n}.bq"))?;
        let k = self.linear(tape, tp, ln, &format!("{n}.wk"), &format!("{n}.bk"))?;
        let v = self.linear(tape, tp, ln, &format!("{n}.wv"), &format!("{n}.bv"))?;
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            head_outs.push(tape.attention(qh, kh, vh, mask)?);
        }
        let cat = tape.concat_cols(&head_outs)?;
        let proj = self.linear(tape, tp, cat, &format!("{n}.wo"), &format!("{n}.bo"))?;
        let x = tape.add(x, proj)?;

        let ln2 = tape.layer_norm_rows(x);
        let h1 = self.linear(tape, tp, ln2, &format!("{n}.ff1.w"), &format!("{n}.ff1.b"))?;
        let h1 = tape.relu(h1);
        let h2 = self.linear(tape, tp, h1, &format!("{n}.ff2.w"), &format!("{n}.ff2.b"))?;
        tape.add(x, h2)
    }

    /// Tokenizes one row: one token per customer attribute, one per what-if
    /// probe. The set is order-free; mean pooling follows the encoder.
    fn row_tokens(row: &DatasetRow, k: usize) -> (usize, Vec<f64>) {
        let k_slot = k as f64 / K_MAX as f64;
        let n_tok = NUM_ATTRIBUTES + row.whatif.len();
        let mut data = Vec::with_capacity(n_tok * IN_W);
        for &zi in row.z.z.iter() {
            let mut tok = vec![0.0; IN_W];
            tok[0] = 1.0;
            tok[2] = zi as f64;
            tok[IN_W - 1] = k_slot;
            data.extend(tok);
        }
        for (p, r) in &row.whatif {
            let mut tok = vec![0.0; IN_W];
            tok[1] = 1.0;
            for (j, pj) in p.iter().enumerate() {
                tok[3 + j] = *pj;
            }
            tok[3 + K_MAX] = *r;
            tok[IN_W - 1] = k_slot;
            data.extend(tok);
        }
        (n_tok, data)
    }

    /// Encodes one row to a `[1, d_model]` vector, conditioned on the
    /// elasticity prior channel.
    fn encode_row(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        row: &DatasetRow,
        k: usize,
        prior: (f64, f64),
    ) -> Result<TensorId, TapeError> {
        let (n_tok, data) = Self::row_tokens(row, k);
        let toks = tape.leaf(n_tok, IN_W, data);
        let mut x = self.linear(tape, tp, toks, "embed.w", "embed.b")?;
        for l in 0..self.config.n_layers_intra {
            x = self.layer(tape, tp, x, "intra", l, None)?;
        }
        let pooled = tape.mean_rows(x);
        // Prior ranges live around [-3, 0]; scale to unit order.
        let pc = tape.leaf(1, PRIOR_W, vec![prior.0 / 3.0, prior.1 / 3.0]);
        let with_prior = tape.concat_cols(&[pooled, pc])?;
        self.linear(tape, tp, with_prior, "prior.w", "prior.b")
    }

    /// Full forward pass: encodes context and query rows, mixes context
    /// through the permutation-invariant block, runs the masked in-context
    /// block, and applies the price and elasticity heads.
    pub fn forward(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        ctx: &[&DatasetRow],
        qry: &[&DatasetRow],
        k: usize,
        prior: (f64, f64),
        ablation: Ablation,
    ) -> Result<ForwardOut, ModelError> {
        if k > K_MAX {
            return Err(ModelError::Capacity { k, max: K_MAX });
        }
        if qry.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let prior = if ablation.prior_off { (0.0, 0.0) } else { prior };
        let ctx: &[&DatasetRow] = if ablation.icl_off { &[] } else { ctx };

        let q_encs: Vec<TensorId> = qry
            .iter()
            .map(|r| self.encode_row(tape, tp, r, k, prior))
            .collect::<Result<_, _>>()?;
        let q_block = tape.concat_rows(&q_encs)?;

        let seq = if ctx.is_empty() {
            q_block
        } else {
            let c_encs: Vec<TensorId> = ctx
                .iter()
                .map(|r| self.encode_row(tape, tp, r, k, prior))
                .collect::<Result<_, _>>()?;
            let mut c_block = tape.concat_rows(&c_encs)?;
            for l in 0..self.config.n_layers_cross {
                c_block = self.layer(tape, tp, c_block, "cross", l, None)?;
            }
            // Inject the context labels so the in-context block sees
            // worked examples rather than bare encodings.
            let k_slot = k as f64 / K_MAX as f64;
            let mut lab = Vec::with_capacity(ctx.len() * LABEL_W);
            for r in ctx {
                let mut row = vec![0.0; LABEL_W];
                for (j, pj) in r.label.iter().enumerate() {
                    row[j] = *pj;
                }
                row[LABEL_W - 1] = k_slot;
                lab.extend(row);
            }
            let lab = tape.leaf(ctx.len(), LABEL_W, lab);
            let lab_emb = self.linear(tape, tp, lab, "label.w", "label.b")?;
            let c_tok = tape.add(c_block, lab_emb)?;
            tape.concat_rows(&[c_tok, q_block])?
        };

        let mask = prefix_mask(ctx.len(), qry.len());
        let mut s = seq;
        for l in 0..self.config.n_layers_icl {
            s = self.layer(tape, tp, s, "icl", l, Some(&mask))?;
        }
        let hidden = tape.slice_rows(s, ctx.len(), qry.len())?;

        let price_raw = self.linear(tape, tp, hidden, "price.w", "price.b")?;
        let price_pos = tape.softplus(price_raw);
        let price = tape.slice_cols(price_pos, 0, k)?;
        let el_raw = self.linear(tape, tp, hidden, "elast.w", "elast.b")?;
        let elasticity = tape.slice_cols(el_raw, 0, k)?;
        Ok(ForwardOut {
            price,
            elasticity,
            hidden,
        })
    }

    /// Revenue head: predicts expected revenue for query representations at
    /// the given prices (`[n, K_MAX]`, zero-padded).
    pub fn revenue(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        hidden: TensorId,
        price_pad: TensorId,
    ) -> Result<TensorId, TapeError> {
        let x = tape.concat_cols(&[hidden, price_pad])?;
        let h = self.linear(tape, tp, x, "rev1.w", "rev1.b")?;
        let h = tape.relu(h);
        self.linear(tape, tp, h, "rev2.w", "rev2.b")
    }

    /// Predicted prices for every row of a dataset. Context rows are chosen
    /// by the configured fraction from a seed-deterministic shuffle; all
    /// rows are scored as queries (queries never see each other).
    pub fn predict(
        &self,
        dataset: &ChoiceDataset,
        prior: (f64, f64),
        ablation: Ablation,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let n = dataset.rows.len();
        if n == 0 {
            return Err(ModelError::EmptyDataset);
        }
        let ctx_idx = context_indices(
            n,
            &self.config,
            ablation,
            dataset.meta.seed,
        );
        let ctx: Vec<&DatasetRow> = ctx_idx.iter().map(|&i| &dataset.rows[i]).collect();
        let k = dataset.meta.k;
        let mut out = Vec::with_capacity(n);
        for chunk in (0..n).collect::<Vec<_>>().chunks(self.config.batch_size.max(1)) {
            let qry: Vec<&DatasetRow> = chunk.iter().map(|&i| &dataset.rows[i]).collect();
            let mut tape = Tape::new();
            let tp = self.params.push_all(&mut tape);
            let fwd = self.forward(&mut tape, &tp, &ctx, &qry, k, prior, ablation)?;
            let v = tape.value(fwd.price);
            for i in 0..qry.len() {
                out.push(v[i * k..(i + 1) * k].to_vec());
            }
        }
        Ok(out)
    }

    /// [`C3poModel::predict`] followed by a hard projection onto the
    /// constraint set, so the emitted prices are exactly feasible.
    pub fn predict_projected(
        &self,
        dataset: &ChoiceDataset,
        prior: (f64, f64),
        ablation: Ablation,
        cs: &crate::constraints::ConstraintSet,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let raw = self.predict(dataset, prior, ablation)?;
        raw.into_iter()
            .map(|p| {
                crate::constraints::clamp_redistribute(&p, cs)
                    .map_err(|e| ModelError::Constraint(e.to_string()))
            })
            .collect()
    }
}

/// Deterministic context-row selection for one dataset.
pub(crate) fn context_indices(
    n: usize,
    config: &C3poConfig,
    ablation: Ablation,
    dataset_seed: u64,
) -> Vec<usize> {
    if ablation.icl_off {
        return Vec::new();
    }
    let mut want = ((n as f64) * config.context_fraction).round() as usize;
    want = want.min(n.saturating_sub(1)).min(config.max_context);
    if ablation.simple_icl {
        want = want.min(100);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed ^ 0x1c1);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx.truncate(want);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::build_dataset;

    #[test]
    fn default_config_parameter_count_near_target() {
        let model = C3poModel::new(C3poConfig::default());
        let count = model.param_count() as f64;
        let target = 337_000.0;
        assert!(
            (count - target).abs() / target < 0.10,
            "parameter count {count} not within 10% of {target}"
        );
    }

    #[test]
    fn desk_scale_is_small() {
        let model = C3poModel::new(C3poConfig::desk_scale());
        assert!(model.param_count() < 30_000, "{}", model.param_count());
    }

    #[test]
    fn forward_shapes_and_positivity() {
        let ds = build_dataset(41).unwrap();
        let model = C3poModel::new(C3poConfig::desk_scale());
        let k = ds.meta.k;
        let ctx: Vec<&DatasetRow> = ds.rows[..8].iter().collect();
        let qry: Vec<&DatasetRow> = ds.rows[8..12].iter().collect();
        let mut tape = Tape::new();
        let tp = model.params.push_all(&mut tape);
        let out = model
            .forward(&mut tape, &tp, &ctx, &qry, k, (-3.0, -1.0), Ablation::standard())
            .unwrap();
        assert_eq!(tape.shape(out.price), (4, k));
        assert_eq!(tape.shape(out.elasticity), (4, k));
        assert!(tape.value(out.price).iter().all(|p| *p > 0.0));
    }

    #[test]
    fn capacity_error_when_k_exceeds_token_width() {
        let ds = build_dataset(42).unwrap();
        let model = C3poModel::new(C3poConfig::desk_scale());
        let qry: Vec<&DatasetRow> = ds.rows[..2].iter().collect();
        let mut tape = Tape::new();
        let tp = model.params.push_all(&mut tape);
        let err = model
            .forward(&mut tape, &tp, &[], &qry, K_MAX + 1, (-3.0, -1.0), Ablation::standard())
            .unwrap_err();
        assert!(matches!(err, ModelError::Capacity { .. }));
    }

    #[test]
    fn context_permutation_leaves_query_predictions_unchanged() {
        let ds = build_dataset(43).unwrap();
        let model = C3poModel::new(C3poConfig::desk_scale());
        let k = ds.meta.k;
        let ctx: Vec<&DatasetRow> = ds.rows[..10].iter().collect();
        let mut ctx_perm = ctx.clone();
        ctx_perm.reverse();
        ctx_perm.swap(1, 4);
        let qry: Vec<&DatasetRow> = ds.rows[10..14].iter().collect();

        let run = |ctx: &[&DatasetRow]| {
            let mut tape = Tape::new();
            let tp = model.params.push_all(&mut tape);
            let out = model
                .forward(&mut tape, &tp, ctx, &qry, k, (-3.0, -1.0), Ablation::standard())
                .unwrap();
            tape.value(out.price).to_vec()
        };
        let a = run(&ctx);
        let b = run(&ctx_perm);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn icl_off_ignores_context_entirely() {
        let ds = build_dataset(44).unwrap();
        let model = C3poModel::new(C3poConfig::desk_scale());
        let ab = Ablation {
            icl_off: true,
            ..Ablation::standard()
        };
        let k = ds.meta.k;
        let qry: Vec<&DatasetRow> = ds.rows[20..24].iter().collect();
        let run = |ctx: &[&DatasetRow]| {
            let mut tape = Tape::new();
            let tp = model.params.push_all(&mut tape);
            let out = model
                .forward(&mut tape, &tp, ctx, &qry, k, (-3.0, -1.0), ab)
                .unwrap();
            tape.value(out.price).to_vec()
        };
        let with_ctx: Vec<&DatasetRow> = ds.rows[..10].iter().collect();
        let mut shuffled = with_ctx.clone();
        shuffled.reverse();
        assert_eq!(run(&with_ctx), run(&shuffled));
        assert_eq!(run(&with_ctx), run(&[]));
    }

    #[test]
    fn queries_do_not_influence_each_other() {
        let ds = build_dataset(45).unwrap();
        let model = C3poModel::new(C3poConfig::desk_scale());
        let k = ds.meta.k;
        let ctx: Vec<&DatasetRow> = ds.rows[..6].iter().collect();
        let run = |qry: &[&DatasetRow]| {
            let mut tape = Tape::new();
            let tp = model.params.push_all(&mut tape);
            let out = model
                .forward(&mut tape, &tp, &ctx, qry, k, (-3.0, -1.0), Ablation::standard())
                .unwrap();
            tape.value(out.price)[..k].to_vec()
        };
        let solo = run(&[&ds.rows[30]]);
        let paired = run(&[&ds.rows[30], &ds.rows[31], &ds.rows[32]]);
        assert_eq!(solo, paired[..k].to_vec());
    }

    #[test]
    fn simple_icl_caps_context_at_100() {
        let config = C3poConfig {
            context_fraction: 0.9,
            ..C3poConfig::desk_scale()
        };
        let ab = Ablation {
            simple_icl: true,
            ..Ablation::standard()
        };
        let idx = context_indices(200, &config, ab, 7);
        assert_eq!(idx.len(), 100);
        let idx = context_indices(200, &config, Ablation::standard(), 7);
        assert_eq!(idx.len(), 180);
    }
}
