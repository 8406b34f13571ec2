//! Turning events into model tokens.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::{CatFeature, EncoderConfig, NumericEncoding};
use crate::domain::{Catalog, ConsumerFeatures, InteractionEvent};
use crate::error::{Error, Result};

pub const UNKNOWN: &str = "<unk>";

/// CLS feature order: age segment, gender preference, sales channel.
pub const CLS_FEATURES: [&str; 3] = ["age_segment", "gender_preference", "sales_channel"];

/// Data-derived encoding state: vocabulary sizes, CLS vocabularies,
/// numeric ranges and piecewise-linear bin boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub vocab_sizes: Vec<usize>,
    pub n_skus: usize,
    pub cls_vocab: Vec<Vec<String>>,
    pub price_range: (f64, f64),
    pub time_range: (i64, i64),
    pub price_bins: Vec<f64>,
    pub time_bins: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub cats: Vec<u32>,
    /// Price normalized to [0, 1].
    pub price: f64,
    /// Timestamp normalized to [0, 1].
    pub time: f64,
    /// Catalog index of the item.
    pub sku: u32,
}

/// A tokenized sequence; the CLS token is implicit at position 0 and `pad`
/// masked padding slots follow the real tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub cls: [u32; 3],
    pub tokens: Vec<Token>,
    pub pad: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Total rows fed to the transformer (CLS + tokens + padding).
    pub fn rows(&self) -> usize {
        1 + self.tokens.len() + self.pad
    }

    pub fn with_padding(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }
}

fn cat_vocab_size(feature: CatFeature, catalog: &Catalog) -> usize {
    match feature {
        CatFeature::Sku => catalog.len(),
        CatFeature::Designer | CatFeature::Followed => 2,
        CatFeature::Action => 4,
        other => catalog.vocab().size(other.attribute().expect("attribute feature")),
    }
}

fn cls_values(f: &ConsumerFeatures) -> [&str; 3] {
    [&f.age_segment, &f.gender_preference, &f.sales_channel]
}

/// Quantile boundaries of `values` (already in [0, 1]), strictly increasing.
pub fn quantile_boundaries(values: &mut [f64], bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(bins + 1);
    if values.is_empty() {
        return vec![0.0, 1.0];
    }
    for i in 0..=bins {
        let pos = (values.len() - 1) as f64 * i as f64 / bins as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let q = values[lo] + (values[hi] - values[lo]) * (pos - lo as f64);
        if out.last().map_or(true, |&last| q > last) {
            out.push(q);
        }
    }
    if out.len() < 2 {
        return vec![0.0, 1.0];
    }
    out
}

/// Piecewise-linear encoding: component `t` is 0 below bin `t`, 1 above it,
/// and the linear position within it otherwise.
pub fn ple_encode(x: f64, boundaries: &[f64]) -> Vec<f64> {
    boundaries
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            if x >= hi {
                1.0
            } else if x < lo {
                0.0
            } else {
                (x - lo) / (hi - lo)
            }
        })
        .collect()
}

fn normalize(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

impl FeatureSpace {
    /// Fits vocabularies and numeric ranges on training sequences.
    pub fn fit<'a>(
        config: &EncoderConfig,
        catalog: &Catalog,
        sequences: impl IntoIterator<Item = (&'a [InteractionEvent], &'a ConsumerFeatures)>,
    ) -> Result<Self> {
        let vocab_sizes: Vec<usize> = config
            .cat_features
            .iter()
            .map(|&f| cat_vocab_size(f, catalog))
            .collect();
        if let Some((f, _)) = config
            .cat_features
            .iter()
            .zip(&vocab_sizes)
            .find(|(_, &n)| n == 0)
        {
            return Err(Error::Config(format!("feature `{}` has an empty vocabulary", f.as_str())));
        }
        let mut cls_sets: [BTreeSet<String>; 3] = Default::default();
        let mut times: Vec<i64> = Vec::new();
        let mut prices_seen: Vec<f64> = Vec::new();
        for (events, features) in sequences {
            for (set, v) in cls_sets.iter_mut().zip(cls_values(features)) {
                set.insert(v.to_string());
            }
            for e in events {
                times.push(e.timestamp);
                let idx = catalog
                    .position(&e.sku)
                    .ok_or_else(|| Error::invalid(format!("unknown sku `{}`", e.sku)))?;
                prices_seen.push(catalog.item(idx).price);
            }
        }
        let cls_vocab = cls_sets
            .into_iter()
            .map(|s| {
                std::iter::once(UNKNOWN.to_string())
                    .chain(s.into_iter().filter(|v| v != UNKNOWN))
                    .collect()
            })
            .collect();
        let price_range = catalog
            .items()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(i.price), hi.max(i.price)));
        let price_range = if price_range.0.is_finite() { price_range } else { (0.0, 1.0) };
        let time_range = (
            times.iter().copied().min().unwrap_or(0),
            times.iter().copied().max().unwrap_or(1),
        );
        let (price_bins, time_bins) = if config.numeric_encoding == NumericEncoding::PiecewiseLinear {
            let mut p: Vec<f64> = prices_seen
                .iter()
                .map(|&x| normalize(x, price_range.0, price_range.1))
                .collect();
            let mut t: Vec<f64> = times
                .iter()
                .map(|&x| normalize(x as f64, time_range.0 as f64, time_range.1 as f64))
                .collect();
            (
                quantile_boundaries(&mut p, config.ple_bins),
                quantile_boundaries(&mut t, config.ple_bins),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(FeatureSpace {
            vocab_sizes,
            n_skus: catalog.len(),
            cls_vocab,
            price_range,
            time_range,
            price_bins,
            time_bins,
        })
    }

    pub fn cls_codes(&self, features: &ConsumerFeatures) -> [u32; 3] {
        let mut codes = [0u32; 3];
        for (i, v) in cls_values(features).into_iter().enumerate() {
            codes[i] = self.cls_vocab[i].iter().position(|x| x == v).unwrap_or(0) as u32;
        }
        codes
    }

    pub fn normalize_price(&self, price: f64) -> f64 {
        normalize(price, self.price_range.0, self.price_range.1)
    }

    pub fn normalize_time(&self, ts: i64) -> f64 {
        normalize(ts as f64, self.time_range.0 as f64, self.time_range.1 as f64)
    }

    /// Width of the numeric-feature embedding input: 1 for scaled embeddings,
    /// the bin count for piecewise-linear encoding.
    pub fn numeric_width(&self, encoding: NumericEncoding, which: Numeric) -> usize {
        match encoding {
            NumericEncoding::ScaledEmbedding => 1,
            NumericEncoding::PiecewiseLinear => self.bins(which).len() - 1,
        }
    }

    pub fn bins(&self, which: Numeric) -> &[f64] {
        match which {
            Numeric::Price => &self.price_bins,
            Numeric::Time => &self.time_bins,
        }
    }

    /// Encoder input vector of a normalized numeric value.
    pub fn numeric_input(&self, encoding: NumericEncoding, which: Numeric, x: f64) -> Vec<f64> {
        match encoding {
            NumericEncoding::ScaledEmbedding => vec![x],
            NumericEncoding::PiecewiseLinear => ple_encode(x, self.bins(which)),
        }
    }

    pub fn token(&self, config: &EncoderConfig, catalog: &Catalog, event: &InteractionEvent) -> Result<Token> {
        let idx = catalog
            .position(&event.sku)
            .ok_or_else(|| Error::OutOfVocabulary {
                feature: "sku".into(),
                value: event.sku.0.clone(),
            })?;
        let item = catalog.item(idx);
        let cats = config
            .cat_features
            .iter()
            .map(|&f| {
                Ok(match f {
                    CatFeature::Sku => idx as u32,
                    CatFeature::Designer => item.is_designer as u32,
                    CatFeature::Followed => event.followed as u32,
                    CatFeature::Action => event.action.index() as u32,
                    other => catalog.code(idx, other.attribute().expect("attribute feature"))?,
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        if item.price < 0.0 {
            return Err(Error::invalid(format!("negative price for `{}`", item.sku)));
        }
        Ok(Token {
            cats,
            price: self.normalize_price(item.price),
            time: self.normalize_time(event.timestamp),
            sku: idx as u32,
        })
    }

    /// Tokenizes the most recent `max_seq_len` events.
    pub fn tokenize(
        &self,
        config: &EncoderConfig,
        catalog: &Catalog,
        events: &[InteractionEvent],
        features: &ConsumerFeatures,
    ) -> Result<TokenSequence> {
        let start = events.len().saturating_sub(config.max_seq_len);
        let tokens = events[start..]
            .iter()
            .map(|e| self.token(config, catalog, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenSequence {
            cls: self.cls_codes(features),
            tokens,
            pad: 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Numeric {
    Price,
    Time,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ple_reference_example() {
        let v = ple_encode(0.6, &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let expected = [1.0, 1.0, 0.4, 0.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
        assert_eq!(ple_encode(1.0, &[0.0, 0.5, 1.0]), vec![1.0, 1.0]);
        assert_eq!(ple_encode(0.0, &[0.0, 0.5, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn quantile_boundaries_dedupe() {
        let mut v = vec![0.0, 0.0, 0.0, 1.0];
        let b = quantile_boundaries(&mut v, 4);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*b.first().unwrap(), 0.0);
        assert_eq!(*b.last().unwrap(), 1.0);
        let mut constant = vec![0.3; 10];
        assert_eq!(quantile_boundaries(&mut constant, 16), vec![0.0, 1.0]);
    }
}
