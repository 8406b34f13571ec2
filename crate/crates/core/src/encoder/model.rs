//! Pre-norm transformer encoder with a next-item head and a CLS classifier head.
//!
//! Row 0 of every sequence is the CLS token; rows `1..=n` are events; any
//! trailing rows are padding, masked out as attention keys. In causal mode row
//! `i` attends to rows `j <= i`, so the CLS row only sees itself. In
//! bidirectional mode every row attends to every non-padding row.

use std::borrow::Cow;
use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::features::{FeatureSpace, Numeric, Token, TokenSequence};
use super::weights::{LayerWeights, Weights};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionMode {
    Causal,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedHeads {
    pub next_item: bool,
    pub classifier: bool,
}

#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub space: FeatureSpace,
    pub weights: Weights,
    /// Tensor names excluded from optimization and gradient checks.
    pub frozen: BTreeSet<String>,
    pub trained: TrainedHeads,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Final encodings for every row, `rows x d`.
    pub encodings: Array2<f64>,
    /// `n x n_skus` logits for the item following each event.
    pub next_logits: Option<Array2<f64>>,
    pub class_logits: [f64; 2],
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    ln1: LnCache,
    h: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln2: LnCache,
    h2: Array2<f64>,
    u: Array2<f64>,
    r: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

pub(crate) struct ForwardCache {
    price_in: Option<Array2<f64>>,
    time_in: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    z: Array2<f64>,
}

fn ln_forward(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        let i = *inv;
        row.mapv_inplace(|v| (v - mean) * i);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array2<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let dh = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_dh = dh.sum() / d;
        let mean_dhx = dh.dot(&xh) / d;
        let inv = cache.inv_std[r];
        for c in 0..dy.ncols() {
            dx[[r, c]] = inv * (dh[c] - mean_dh - xh[c] * mean_dhx);
        }
    }
    dx
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
}

/// Softmax over each row restricted to keys allowed by the mask.
fn masked_softmax(scores: &mut Array2<f64>, n_valid: usize, mode: AttentionMode) {
    let rows = scores.nrows();
    for i in 0..rows {
        let limit = match mode {
            AttentionMode::Causal => (i + 1).min(n_valid),
            AttentionMode::Bidirectional => n_valid,
        };
        let mut row = scores.row_mut(i);
        let max = row
            .iter()
            .take(limit)
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for j in 0..rows {
            if j < limit {
                let e = (row[j] - max).exp();
                row[j] = e;
                sum += e;
            } else {
                row[j] = 0.0;
            }
        }
        for j in 0..limit {
            row[j] /= sum;
        }
    }
}

fn add_row(dst: &mut Array2<f64>, r: usize, src: ndarray::ArrayView1<f64>) {
    let mut row = dst.row_mut(r);
    row += &src;
}

/// Canonical token order, used when the classifier has no order signal so that
/// reordering events cannot change floating-point summation order.
fn canonical_order(a: &Token, b: &Token) -> std::cmp::Ordering {
    a.cats
        .cmp(&b.cats)
        .then(a.sku.cmp(&b.sku))
        .then(a.price.total_cmp(&b.price))
        .then(a.time.total_cmp(&b.time))
}

impl EncoderModel {
    pub fn new(config: EncoderConfig, space: FeatureSpace) -> Result<Self> {
        config.validate()?;
        if space.vocab_sizes.len() != config.cat_features.len() {
            return Err(Error::Config("feature space does not match config".into()));
        }
        let weights = Weights::init(&config, &space);
        Ok(EncoderModel {
            config,
            space,
            weights,
            frozen: BTreeSet::new(),
            trained: TrainedHeads::default(),
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn n_skus(&self) -> usize {
        self.space.n_skus
    }

    /// Frozen flags aligned with [`Weights::named`].
    pub fn frozen_mask(&self) -> Vec<bool> {
        self.weights
            .names()
            .iter()
            .map(|n| self.frozen.contains(n))
            .collect()
    }

    fn check(&self, seq: &TokenSequence) -> Result<()> {
        if seq.len() > self.config.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence of {} events exceeds max_seq_len {}",
                seq.len(),
                self.config.max_seq_len
            )));
        }
        for t in &seq.tokens {
            if t.cats.len() != self.config.cat_features.len() {
                return Err(Error::invalid("token feature count does not match the model"));
            }
            for ((&code, &size), f) in t.cats.iter().zip(&self.space.vocab_sizes).zip(&self.config.cat_features) {
                if code as usize >= size {
                    return Err(Error::OutOfVocabulary {
                        feature: f.as_str().to_string(),
                        value: code.to_string(),
                    });
                }
            }
        }
        for (i, &c) in seq.cls.iter().enumerate() {
            if c as usize >= self.space.cls_vocab[i].len() {
                return Err(Error::OutOfVocabulary {
                    feature: super::features::CLS_FEATURES[i].to_string(),
                    value: c.to_string(),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn prepare<'a>(&self, seq: &'a TokenSequence, mode: AttentionMode) -> Cow<'a, TokenSequence> {
        if mode == AttentionMode::Bidirectional && !self.config.has_order_signal() {
            let mut sorted = seq.clone();
            sorted.tokens.sort_by(canonical_order);
            Cow::Owned(sorted)
        } else {
            Cow::Borrowed(seq)
        }
    }

    fn numeric_inputs(&self, seq: &TokenSequence, which: Numeric) -> Array2<f64> {
        let width = self.space.numeric_width(self.config.numeric_encoding, which);
        let mut m = Array2::zeros((seq.rows(), width));
        for (i, t) in seq.tokens.iter().enumerate() {
            let x = match which {
                Numeric::Price => t.price,
                Numeric::Time => t.time,
            };
            let v = self.space.numeric_input(self.config.numeric_encoding, which, x);
            for (c, val) in v.into_iter().enumerate() {
                m[[i + 1, c]] = val;
            }
        }
        m
    }

    fn embed(&self, seq: &TokenSequence) -> (Array2<f64>, Option<Array2<f64>>, Option<Array2<f64>>) {
        let w = &self.weights;
        let d = self.config.d_model;
        let n = seq.len();
        let mut x = Array2::zeros((seq.rows(), d));
        add_row(&mut x, 0, w.cls_base.row(0));
        for (table, &code) in w.cls_tables.iter().zip(&seq.cls) {
            add_row(&mut x, 0, table.row(code as usize));
        }
        for (i, t) in seq.tokens.iter().enumerate() {
            for (table, &code) in w.cat_tables.iter().zip(&t.cats) {
                add_row(&mut x, i + 1, table.row(code as usize));
            }
        }
        let mut numeric = |table: &Option<Array2<f64>>, which| {
            table.as_ref().map(|tw| {
                let inputs = self.numeric_inputs(seq, which);
                x += &inputs.dot(tw);
                inputs
            })
        };
        let price_in = numeric(&w.price, Numeric::Price);
        let time_in = numeric(&w.time, Numeric::Time);
        if let Some(pos) = &w.position {
            for r in 0..=n {
                add_row(&mut x, r, pos.row(r));
            }
        }
        (x, price_in, time_in)
    }

    /// Summed input vectors (before the first layer), `rows x d`.
    pub fn input_vectors(&self, seq: &TokenSequence) -> Result<Array2<f64>> {
        self.check(seq)?;
        Ok(self.embed(seq).0)
    }

    fn layer_forward(
        &self,
        lw: &LayerWeights,
        x: &Array2<f64>,
        n_valid: usize,
        mode: AttentionMode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, LayerCache) {
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rows = x.nrows();
        let p = self.config.dropout;

        let (h, ln1) = ln_forward(x, &lw.ln1_g, &lw.ln1_b);
        let q = h.dot(&lw.wq);
        let k = h.dot(&lw.wk);
        let v = h.dot(&lw.wv);
        let mut o = Array2::zeros((rows, self.config.d_model));
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores *= scale;
            masked_softmax(&mut scores, n_valid, mode);
            o.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let mut a = o.dot(&lw.wo);
        let drop1 = match rng.as_deref_mut() {
            Some(r) if p > 0.0 => {
                let m = dropout_mask(rows, a.ncols(), p, r);
                a *= &m;
                Some(m)
            }
            _ => None,
        };
        let x1 = x + &a;
        let (h2, ln2) = ln_forward(&x1, &lw.ln2_g, &lw.ln2_b);
        let u = h2.dot(&lw.w1) + &lw.b1;
        let r = u.mapv(|t| t.max(0.0));
        let mut f = r.dot(&lw.w2) + &lw.b2;
        let drop2 = match rng {
            Some(rg) if p > 0.0 => {
                let m = dropout_mask(rows, f.ncols(), p, rg);
                f *= &m;
                Some(m)
            }
            _ => None,
        };
        let x2 = x1 + &f;
        let cache = LayerCache {
            ln1,
            h,
            q,
            k,
            v,
            probs,
            o,
            drop1,
            ln2,
            h2,
            u,
            r,
            drop2,
        };
        (x2, cache)
    }

    /// Core forward pass. `rng` enables dropout (training only).
    pub(crate) fn run(
        &self,
        seq: &TokenSequence,
        mode: AttentionMode,
        want_next: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(ForwardOutput, ForwardCache)> {
        self.check(seq)?;
        let n = seq.len();
        let n_valid = n + 1;
        let (mut x, price_in, time_in) = self.embed(seq);
        let mut layers = Vec::with_capacity(self.weights.layers.len());
        for lw in &self.weights.layers {
            let (x_next, cache) = self.layer_forward(lw, &x, n_valid, mode, rng.as_deref_mut());
            x = x_next;
            layers.push(cache);
        }
        let (z, final_ln) = ln_forward(&x, &self.weights.final_g, &self.weights.final_b);
        let next_logits = want_next.then(|| z.slice(s![1..=n, ..]).dot(&self.weights.next_w) + &self.weights.next_b);
        let c = z.row(0).dot(&self.weights.cls_w);
        let class_logits = [c[0] + self.weights.cls_b[[0, 0]], c[1] + self.weights.cls_b[[0, 1]]];
        let out = ForwardOutput {
            encodings: z.clone(),
            next_logits,
            class_logits,
        };
        Ok((
            out,
            ForwardCache {
                price_in,
                time_in,
                layers,
                final_ln,
                z,
            },
        ))
    }

    /// Forward pass computing both heads.
    pub fn forward(&self, seq: &TokenSequence, mode: AttentionMode) -> Result<ForwardOutput> {
        let seq = self.prepare(seq, mode);
        Ok(self.run(&seq, mode, true, None)?.0)
    }

    /// Final encodings (`rows x d`) without the next-item projection.
    pub fn encodings(&self, seq: &TokenSequence, mode: AttentionMode) -> Result<Array2<f64>> {
        let seq = self.prepare(seq, mode);
        Ok(self.run(&seq, mode, false, None)?.0.encodings)
    }

    /// Class probabilities `[non-designer, designer]` from the CLS encoding.
    pub fn class_probs(&self, seq: &TokenSequence) -> Result<[f64; 2]> {
        let seq = self.prepare(seq, AttentionMode::Bidirectional);
        let (out, _) = self.run(&seq, AttentionMode::Bidirectional, false, None)?;
        Ok(softmax2(out.class_logits))
    }

    /// Probability of the positive (designer) class.
    pub fn score(&self, seq: &TokenSequence) -> Result<f64> {
        if !self.trained.classifier {
            return Err(Error::Untrained("classifier"));
        }
        Ok(self.class_probs(seq)?[1])
    }

    pub fn score_batch(&self, seqs: &[TokenSequence]) -> Result<Vec<f64>> {
        seqs.iter().map(|s| self.score(s)).collect()
    }

    /// Next-item logits after the last event.
    pub fn last_position_logits(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        if seq.is_empty() {
            return Err(Error::invalid("empty sequence"));
        }
        let (out, _) = self.run(seq, AttentionMode::Causal, false, None)?;
        let z = out.encodings.row(seq.len());
        let logits = z.dot(&self.weights.next_w) + &self.weights.next_b.row(0);
        Ok(logits.to_vec())
    }

    /// Backpropagates head gradients through the network, accumulating into `grads`.
    pub(crate) fn backward(
        &self,
        seq: &TokenSequence,
        cache: &ForwardCache,
        dnext: Option<&Array2<f64>>,
        dclass: Option<[f64; 2]>,
        grads: &mut Weights,
    ) {
        let w = &self.weights;
        let n = seq.len();
        let mut dz = Array2::zeros(cache.z.raw_dim());
        if let Some(dl) = dnext {
            let zs = cache.z.slice(s![1..=n, ..]);
            grads.next_w += &zs.t().dot(dl);
            grads.next_b += &dl.sum_axis(Axis(0)).insert_axis(Axis(0));
            dz.slice_mut(s![1..=n, ..]).assign(&dl.dot(&w.next_w.t()));
        }
        if let Some(dc) = dclass {
            let z0 = cache.z.row(0);
            for c in 0..2 {
                grads.cls_b[[0, c]] += dc[c];
                for j in 0..z0.len() {
                    grads.cls_w[[j, c]] += z0[j] * dc[c];
                }
            }
            let mut row = dz.row_mut(0);
            for j in 0..row.len() {
                row[j] += w.cls_w[[j, 0]] * dc[0] + w.cls_w[[j, 1]] * dc[1];
            }
        }
        let mut dx = ln_backward(&dz, &cache.final_ln, &w.final_g, &mut grads.final_g, &mut grads.final_b);
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            dx = self.layer_backward(&w.layers[l], lc, dx, &mut grads.layers[l]);
        }
        self.embed_backward(seq, cache, &dx, grads);
    }

    fn layer_backward(
        &self,
        lw: &LayerWeights,
        c: &LayerCache,
        dx2: Array2<f64>,
        g: &mut LayerWeights,
    ) -> Array2<f64> {
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // feed-forward branch
        let mut df = dx2.clone();
        if let Some(m) = &c.drop2 {
            df *= m;
        }
        g.w2 += &c.r.t().dot(&df);
        g.b2 += &df.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut du = df.dot(&lw.w2.t());
        ndarray::Zip::from(&mut du).and(&c.u).for_each(|d, &u| {
            if u <= 0.0 {
                *d = 0.0;
            }
        });
        g.w1 += &c.h2.t().dot(&du);
        g.b1 += &du.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dh2 = du.dot(&lw.w1.t());
        let mut dx1 = dx2;
        dx1 += &ln_backward(&dh2, &c.ln2, &lw.ln2_g, &mut g.ln2_g, &mut g.ln2_b);

        // attention branch
        let mut da = dx1.clone();
        if let Some(m) = &c.drop1 {
            da *= m;
        }
        g.wo += &c.o.t().dot(&da);
        let d_o = da.dot(&lw.wo.t());
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for hd in 0..heads {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            let p = &c.probs[hd];
            let doh = d_o.slice(cols);
            let dp = doh.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&doh));
            let mut ds = &dp * p;
            for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = ds_row.sum();
                ds_row.zip_mut_with(&p_row, |d, &pv| *d -= pv * dot);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        g.wq += &c.h.t().dot(&dq);
        g.wk += &c.h.t().dot(&dk);
        g.wv += &c.h.t().dot(&dv);
        let dh1 = dq.dot(&lw.wq.t()) + dk.dot(&lw.wk.t()) + dv.dot(&lw.wv.t());
        dx1 += &ln_backward(&dh1, &c.ln1, &lw.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
        dx1
    }

    fn embed_backward(&self, seq: &TokenSequence, cache: &ForwardCache, dx: &Array2<f64>, g: &mut Weights) {
        let n = seq.len();
        add_row(&mut g.cls_base, 0, dx.row(0));
        for (table, &code) in g.cls_tables.iter_mut().zip(&seq.cls) {
            add_row(table, code as usize, dx.row(0));
        }
        for (i, t) in seq.tokens.iter().enumerate() {
            for (table, &code) in g.cat_tables.iter_mut().zip(&t.cats) {
                add_row(table, code as usize, dx.row(i + 1));
            }
        }
        let real: ArrayView2<f64> = dx.slice(s![0..=n, ..]);
        if let (Some(gp), Some(inp)) = (&mut g.price, &cache.price_in) {
            *gp += &inp.slice(s![0..=n, ..]).t().dot(&real);
        }
        if let (Some(gt), Some(inp)) = (&mut g.time, &cache.time_in) {
            *gt += &inp.slice(s![0..=n, ..]).t().dot(&real);
        }
        if let Some(gp) = &mut g.position {
            for r in 0..=n {
                add_row(gp, r, dx.row(r));
            }
        }
    }
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
