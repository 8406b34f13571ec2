//! Parameter tensors, initialization and the Adam optimizer.

use ndarray::Array2;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::config::{EncoderConfig, NumericEncoding};
use super::features::{FeatureSpace, Numeric};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// Every trainable tensor. Vectors are stored as `1 x n` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    /// One table per configured categorical feature, `vocab x d`.
    pub cat_tables: Vec<Array2<f64>>,
    pub cls_base: Array2<f64>,
    pub cls_tables: Vec<Array2<f64>>,
    /// `width x d`; width 1 for scaled embeddings, bin count for PLE.
    pub price: Option<Array2<f64>>,
    pub time: Option<Array2<f64>>,
    pub position: Option<Array2<f64>>,
    pub layers: Vec<LayerWeights>,
    pub final_g: Array2<f64>,
    pub final_b: Array2<f64>,
    pub next_w: Array2<f64>,
    pub next_b: Array2<f64>,
    pub cls_w: Array2<f64>,
    pub cls_b: Array2<f64>,
}

fn uniform(rows: usize, cols: usize, bound: f64, seed: u64, name: &str) -> Array2<f64> {
    let mut rng = seed::rng_for(seed, name);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl Weights {
    /// Fan-in scaled uniform initialization; each tensor draws from its own
    /// stream keyed by name.
    pub fn init(config: &EncoderConfig, space: &FeatureSpace) -> Self {
        let d = config.d_model;
        let s = config.seed;
        let emb_bound = 1.0 / (d as f64).sqrt();
        let lin = |rows: usize, cols: usize, name: &str| uniform(rows, cols, 1.0 / (rows as f64).sqrt(), s, name);
        let cat_tables = config
            .cat_features
            .iter()
            .zip(&space.vocab_sizes)
            .map(|(f, &n)| uniform(n, d, emb_bound, s, &format!("emb.{}", f.as_str())))
            .collect();
        let cls_tables = space
            .cls_vocab
            .iter()
            .enumerate()
            .map(|(i, v)| uniform(v.len(), d, emb_bound, s, &format!("cls.{i}")))
            .collect();
        let numeric = |which: Numeric, name: &str| {
            let width = space.numeric_width(config.numeric_encoding, which);
            let bound = match config.numeric_encoding {
                NumericEncoding::ScaledEmbedding => emb_bound,
                NumericEncoding::PiecewiseLinear => emb_bound / (width as f64).sqrt(),
            };
            uniform(width, d, bound, s, name)
        };
        let layers = (0..config.n_layers)
            .map(|l| LayerWeights {
                ln1_g: Array2::ones((1, d)),
                ln1_b: Array2::zeros((1, d)),
                wq: lin(d, d, &format!("layer{l}.wq")),
                wk: lin(d, d, &format!("layer{l}.wk")),
                wv: lin(d, d, &format!("layer{l}.wv")),
                wo: lin(d, d, &format!("layer{l}.wo")),
                ln2_g: Array2::ones((1, d)),
                ln2_b: Array2::zeros((1, d)),
                w1: lin(d, config.d_ff, &format!("layer{l}.w1")),
                b1: Array2::zeros((1, config.d_ff)),
                w2: lin(config.d_ff, d, &format!("layer{l}.w2")),
                b2: Array2::zeros((1, d)),
            })
            .collect();
        Weights {
            cat_tables,
            cls_base: uniform(1, d, emb_bound, s, "cls.base"),
            cls_tables,
            price: config.use_price.then(|| numeric(Numeric::Price, "num.price")),
            time: config.use_timestamp.then(|| numeric(Numeric::Time, "num.time")),
            position: config
                .use_position
                .then(|| uniform(config.max_seq_len + 1, d, emb_bound, s, "pos")),
            layers,
            final_g: Array2::ones((1, d)),
            final_b: Array2::zeros((1, d)),
            next_w: lin(d, space.n_skus, "head.next.w"),
            next_b: Array2::zeros((1, space.n_skus)),
            cls_w: lin(d, 2, "head.cls.w"),
            cls_b: Array2::zeros((1, 2)),
        }
    }

    /// Tensors in a fixed order with stable names.
    pub fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = Vec::new();
        for (i, t) in self.cat_tables.iter().enumerate() {
            out.push((format!("emb.{i}"), t));
        }
        out.push(("cls.base".into(), &self.cls_base));
        for (i, t) in self.cls_tables.iter().enumerate() {
            out.push((format!("cls.{i}"), t));
        }
        if let Some(t) = &self.price {
            out.push(("num.price".into(), t));
        }
        if let Some(t) = &self.time {
            out.push(("num.time".into(), t));
        }
        if let Some(t) = &self.position {
            out.push(("pos".into(), t));
        }
        for (l, lw) in self.layers.iter().enumerate() {
            for (n, t) in [
                ("ln1.g", &lw.ln1_g),
                ("ln1.b", &lw.ln1_b),
                ("wq", &lw.wq),
                ("wk", &lw.wk),
                ("wv", &lw.wv),
                ("wo", &lw.wo),
                ("ln2.g", &lw.ln2_g),
                ("ln2.b", &lw.ln2_b),
                ("w1", &lw.w1),
                ("b1", &lw.b1),
                ("w2", &lw.w2),
                ("b2", &lw.b2),
            ] {
                out.push((format!("layer{l}.{n}"), t));
            }
        }
        out.push(("final.g".into(), &self.final_g));
        out.push(("final.b".into(), &self.final_b));
        out.push(("head.next.w".into(), &self.next_w));
        out.push(("head.next.b".into(), &self.next_b));
        out.push(("head.cls.w".into(), &self.cls_w));
        out.push(("head.cls.b".into(), &self.cls_b));
        out
    }

    /// Mutable tensors, same order as [`Weights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        out.extend(self.cat_tables.iter_mut());
        out.push(&mut self.cls_base);
        out.extend(self.cls_tables.iter_mut());
        if let Some(t) = &mut self.price {
            out.push(t);
        }
        if let Some(t) = &mut self.time {
            out.push(t);
        }
        if let Some(t) = &mut self.position {
            out.push(t);
        }
        for lw in &mut self.layers {
            out.extend([
                &mut lw.ln1_g,
                &mut lw.ln1_b,
                &mut lw.wq,
                &mut lw.wk,
                &mut lw.wv,
                &mut lw.wo,
                &mut lw.ln2_g,
                &mut lw.ln2_b,
                &mut lw.w1,
                &mut lw.b1,
                &mut lw.w2,
                &mut lw.b2,
            ]);
        }
        out.extend([
            &mut self.final_g,
            &mut self.final_b,
            &mut self.next_w,
            &mut self.next_b,
            &mut self.cls_w,
            &mut self.cls_b,
        ]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.fill(v);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named() {
            h.update(name.as_bytes());
            h.update((t.nrows() as u64).to_le_bytes());
            h.update((t.ncols() as u64).to_le_bytes());
            for x in t.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Adam with bias correction. Frozen tensors (by index) are skipped.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Weights,
    v: Weights,
}

impl Adam {
    pub fn new(like: &Weights, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn step(&mut self, weights: &mut Weights, grads: &mut Weights, frozen: &[bool]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = weights
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors_mut())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for (i, ((w, g), (m, v))) in tensors.enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            ndarray::Zip::from(w)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &mut g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
