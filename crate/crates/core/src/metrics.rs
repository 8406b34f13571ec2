//! Scalar evaluation machinery.
//!
//! Style similarity between two consumers is a weighted sum over item
//! attributes of `1 - JSd(P(a, u1) || P(a, u2))`, where `P(a, u)` is the
//! empirical distribution of attribute `a` over the consumer's events and the
//! divergence uses base-2 logarithms (so it lies in `[0, 1]`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Attribute, Catalog, ConsumerHistory, Sku};
use crate::error::{Error, Result};
use crate::seed;

const NORMALIZATION_TOL: f64 = 1e-6;

/// Empirical distribution of one attribute's values.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeDistribution {
    pub attribute: Attribute,
    pub probs: BTreeMap<String, f64>,
}

impl AttributeDistribution {
    pub fn from_counts(attribute: Attribute, counts: BTreeMap<String, usize>) -> Result<Self> {
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(Error::invalid("attribute distribution over zero events"));
        }
        let probs = counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / total as f64))
            .collect();
        Ok(AttributeDistribution { attribute, probs })
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }
}

pub fn attribute_distribution(
    history: &ConsumerHistory,
    attribute: Attribute,
    catalog: &Catalog,
) -> Result<AttributeDistribution> {
    if history.is_empty() {
        return Err(Error::invalid(format!(
            "empty history for consumer {}",
            history.consumer_id
        )));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &history.events {
        let item = catalog
            .get(&e.sku)
            .ok_or_else(|| Error::invalid(format!("unknown sku `{}`", e.sku)))?;
        *counts.entry(item.attribute(attribute).to_string()).or_default() += 1;
    }
    AttributeDistribution::from_counts(attribute, counts)
}

fn xlog2_ratio(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).log2()
    }
}

/// Jensen-Shannon divergence with base-2 logs over the union of supports.
pub fn js_divergence(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> Result<f64> {
    for (name, d) in [("P", p), ("Q", q)] {
        let total: f64 = d.values().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL || d.values().any(|&v| v < 0.0) {
            return Err(Error::invalid(format!(
                "{name} is not a probability distribution (sum {total})"
            )));
        }
    }
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for key in p.keys().chain(q.keys().filter(|k| !p.contains_key(*k))) {
        let pv = p.get(key).copied().unwrap_or(0.0);
        let qv = q.get(key).copied().unwrap_or(0.0);
        let m = 0.5 * (pv + qv);
        kl_p += xlog2_ratio(pv, m);
        kl_q += xlog2_ratio(qv, m);
    }
    Ok((0.5 * kl_p + 0.5 * kl_q).clamp(0.0, 1.0))
}

/// Per-attribute weights, normalized to sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeWeights {
    weights: BTreeMap<Attribute, f64>,
}

impl AttributeWeights {
    pub fn new(weights: BTreeMap<Attribute, f64>) -> Result<Self> {
        if weights.values().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("attribute weights must be nonnegative".into()));
        }
        let total: f64 = weights.values().sum();
        if total <= 0.0 {
            return Err(Error::Config("attribute weights sum to zero".into()));
        }
        Ok(AttributeWeights {
            weights: weights.into_iter().map(|(a, w)| (a, w / total)).collect(),
        })
    }

    pub fn uniform(attributes: &[Attribute]) -> Self {
        Self::new(attributes.iter().map(|a| (*a, 1.0)).collect()).expect("nonempty uniform weights")
    }

    pub fn get(&self, a: Attribute) -> Option<f64> {
        self.weights.get(&a).copied()
    }

    pub fn attributes(&self) -> impl Iterator<Item = Attribute> + '_ {
        self.weights.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Attribute, f64)> + '_ {
        self.weights.iter().map(|(a, w)| (*a, *w))
    }
}

impl Default for AttributeWeights {
    /// Brand, commodity group, color and silhouette at 0.25 each.
    fn default() -> Self {
        Self::uniform(&STYLE_ATTRIBUTES)
    }
}

pub const STYLE_ATTRIBUTES: [Attribute; 4] = [
    Attribute::Brand,
    Attribute::CommodityGroup,
    Attribute::Color,
    Attribute::Silhouette,
];

/// Precomputed attribute distributions of one history.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleProfile {
    pub dists: BTreeMap<Attribute, BTreeMap<String, f64>>,
}

impl StyleProfile {
    pub fn from_history(history: &ConsumerHistory, attributes: &[Attribute], catalog: &Catalog) -> Result<Self> {
        let dists = attributes
            .iter()
            .map(|&a| Ok((a, attribute_distribution(history, a, catalog)?.probs)))
            .collect::<Result<_>>()?;
        Ok(StyleProfile { dists })
    }
}

/// Style similarity between two precomputed profiles.
pub fn style_similarity_profiles(a: &StyleProfile, b: &StyleProfile, weights: &AttributeWeights) -> Result<f64> {
    let mut s = 0.0;
    for (attr, w) in weights.iter() {
        let (Some(p), Some(q)) = (a.dists.get(&attr), b.dists.get(&attr)) else {
            return Err(Error::invalid(format!("profile lacks attribute {attr}")));
        };
        s += w * (1.0 - js_divergence(p, q)?);
    }
    Ok(s)
}

pub fn style_similarity(
    u1: &ConsumerHistory,
    u2: &ConsumerHistory,
    weights: &AttributeWeights,
    attributes: &[Attribute],
    catalog: &Catalog,
) -> Result<f64> {
    for a in attributes {
        if weights.get(*a).is_none() {
            return Err(Error::invalid(format!("attribute {a} has no weight")));
        }
    }
    let used: Vec<Attribute> = weights.attributes().collect();
    for a in &used {
        if !attributes.contains(a) {
            return Err(Error::invalid(format!("weighted attribute {a} not in attribute set")));
        }
    }
    let p1 = StyleProfile::from_history(u1, &used, catalog)?;
    let p2 = StyleProfile::from_history(u2, &used, catalog)?;
    style_similarity_profiles(&p1, &p2, weights)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("pearson needs two equal-length series of length >= 2"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson undefined for zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties share the mean of their positions.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney ROC-AUC: probability that a random positive outscores a random
/// negative, counting ties as one half.
pub fn pair_roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("roc auc needs both classes"));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn fbeta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

pub fn f2(precision: f64, recall: f64) -> f64 {
    fbeta(precision, recall, 2.0)
}

/// Precision and recall from confusion counts; precision is 0 with no predicted positives.
pub fn precision_recall(tp: usize, fp: usize, n_pos: usize) -> (f64, f64) {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    (precision, tp as f64 / n_pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f2: f64,
    pub average_precision: f64,
}

/// Step-function average precision: sum over descending score groups of
/// recall increment times precision at the group's end.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::invalid("average precision needs positives"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut group_pos = 0;
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_pos += 1;
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        if group_pos > 0 {
            ap += (group_pos as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        i = j;
    }
    Ok(ap)
}

/// Metrics for predictions `score > tau`.
pub fn classification_metrics(scores: &[f64], labels: &[bool], tau: f64) -> Result<ClassificationMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("threshold {tau} outside [0, 1]")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::invalid("no ground-truth positives"));
    }
    let (mut tp, mut fp) = (0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        if s > tau {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let (precision, recall) = precision_recall(tp, fp, n_pos);
    Ok(ClassificationMetrics {
        precision,
        recall,
        f2: f2(precision, recall),
        average_precision: average_precision(scores, labels)?,
    })
}

/// nDCG@k with linear gains and `log2(rank + 1)` discount. The ideal ordering
/// ranks every item in `relevance`; zero total relevance yields 0.
pub fn ndcg<T: Eq + Hash>(ranked: &[T], relevance: &HashMap<T, f64>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("ndcg cutoff k must be >= 1"));
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, item)| relevance.get(item).copied().unwrap_or(0.0) * discount(i))
        .sum();
    let mut ideal: Vec<f64> = relevance.values().copied().filter(|&r| r > 0.0).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, r)| r * discount(i)).sum();
    Ok(if idcg == 0.0 { 0.0 } else { dcg / idcg })
}

pub fn overlap_coefficient<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("overlap coefficient of an empty set"));
    }
    let inter = a.intersection(b).count();
    Ok(inter as f64 / a.len().min(b.len()) as f64)
}

/// Shannon entropy of an attribute over a list of items, normalized by the
/// log of the number of distinct values observed. A single value gives 0.
pub fn diversity(items: &[Sku], attribute: Attribute, catalog: &Catalog) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("diversity of an empty list"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sku in items {
        let item = catalog
            .get(sku)
            .ok_or_else(|| Error::invalid(format!("unknown sku `{sku}`")))?;
        *counts.entry(item.attribute(attribute)).or_default() += 1;
    }
    if counts.len() <= 1 {
        return Ok(0.0);
    }
    let n = items.len() as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    Ok(h / (counts.len() as f64).log2())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dot,
    Cosine,
    Euclidean,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dot, Metric::Cosine, Metric::Euclidean];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Dot => "dot",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Dot product, cosine similarity, or euclidean distance.
pub fn distance(u: &[f64], v: &[f64], metric: Metric) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "vector lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    match metric {
        Metric::Dot => Ok(dot(u, v)),
        Metric::Cosine => cosine(u, v),
        Metric::Euclidean => Ok(euclidean(u, v)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub style_similarity: f64,
    pub dot: f64,
    pub cosine: f64,
    pub euclidean: f64,
    #[serde(default)]
    pub same_segment: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpaceReport {
    pub n_pairs: usize,
    pub dot: f64,
    pub cosine: f64,
    pub euclidean: f64,
    #[serde(skip)]
    pub pairs: Vec<PairSample>,
}

impl EmbeddingSpaceReport {
    pub fn correlation(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Dot => self.dot,
            Metric::Cosine => self.cosine,
            Metric::Euclidean => self.euclidean,
        }
    }
}

/// Draws `n_pairs` distinct-index pairs uniformly with a seeded generator.
pub fn sample_pairs(n: usize, n_pairs: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::invalid("need at least two items to sample pairs"));
    }
    let mut rng = seed::rng(seed);
    Ok((0..n_pairs)
        .map(|_| {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        })
        .collect())
}

/// Pearson correlation between style similarity and each embedding-space metric
/// over randomly sampled pairs.
pub fn evaluate_embedding_space(
    embeddings: &[Vec<f64>],
    profiles: &[StyleProfile],
    weights: &AttributeWeights,
    n_pairs: usize,
    seed: u64,
) -> Result<EmbeddingSpaceReport> {
    if embeddings.len() != profiles.len() {
        return Err(Error::invalid("embeddings and profiles differ in length"));
    }
    let pairs = sample_pairs(embeddings.len(), n_pairs, seed)?
        .into_iter()
        .map(|(a, b)| {
            let (u, v) = (&embeddings[a], &embeddings[b]);
            Ok(PairSample {
                a,
                b,
                style_similarity: style_similarity_profiles(&profiles[a], &profiles[b], weights)?,
                dot: dot(u, v),
                cosine: cosine(u, v)?,
                euclidean: euclidean(u, v),
                same_segment: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let s: Vec<f64> = pairs.iter().map(|p| p.style_similarity).collect();
    let col = |f: fn(&PairSample) -> f64| pairs.iter().map(f).collect::<Vec<f64>>();
    Ok(EmbeddingSpaceReport {
        n_pairs,
        dot: pearson(&s, &col(|p| p.dot))?,
        cosine: pearson(&s, &col(|p| p.cosine))?,
        euclidean: pearson(&s, &col(|p| p.euclidean))?,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{history, simple_catalog};
    use proptest::prelude::*;
    use rand::Rng;

    fn dist(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn attribute_distribution_counts_events() {
        let catalog = simple_catalog();
        // brands of S0..S3 are b0,b0,b1,b2
        let h = history("c", &["S0", "S1", "S2", "S3"]);
        let d = attribute_distribution(&h, Attribute::Brand, &catalog).unwrap();
        assert_eq!(d.probs, dist(&[("b0", 0.5), ("b1", 0.25), ("b2", 0.25)]));
        assert!((d.total() - 1.0).abs() < 1e-12);
        let single = history("c", &["S2"]);
        let d = attribute_distribution(&single, Attribute::Brand, &catalog).unwrap();
        assert_eq!(d.probs, dist(&[("b1", 1.0)]));
        assert!(attribute_distribution(&history("c", &[]), Attribute::Brand, &catalog).is_err());
    }

    #[test]
    fn js_divergence_examples() {
        let p = dist(&[("a", 0.5), ("b", 0.5)]);
        assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
        let a = dist(&[("a", 1.0)]);
        let b = dist(&[("b", 1.0)]);
        assert!((js_divergence(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let v = js_divergence(&p, &a).unwrap();
        assert!((v - 0.31128).abs() < 1e-5, "{v}");
        assert!(js_divergence(&dist(&[("a", 0.7)]), &a).is_err());
    }

    #[test]
    fn style_similarity_examples() {
        let catalog = simple_catalog();
        let w = AttributeWeights::default();
        let h = history("c", &["S0", "S2", "S3"]);
        let s = style_similarity(&h, &h, &w, &STYLE_ATTRIBUTES, &catalog).unwrap();
        assert!((s - 1.0).abs() < 1e-12);

        // S4 and S5 differ from S0 in every style attribute
        let a = history("a", &["S0"]);
        let b = history("b", &["S5"]);
        let s = style_similarity(&a, &b, &w, &STYLE_ATTRIBUTES, &catalog).unwrap();
        assert!(s.abs() < 1e-12, "{s}");

        // one attribute, weight 1: brands (b0, b1) vs (b0)
        let w = AttributeWeights::uniform(&[Attribute::Brand]);
        let a = history("a", &["S0", "S2"]);
        let b = history("b", &["S0", "S1"]);
        let s = style_similarity(&a, &b, &w, &[Attribute::Brand], &catalog).unwrap();
        assert!((s - 0.68872).abs() < 1e-5, "{s}");

        let err = style_similarity(&a, &b, &w, &[Attribute::Brand, Attribute::Color], &catalog);
        assert!(err.is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // sxy = 5, sxx = 2, syy = 114/9  =>  r = 5 / sqrt(228/9)
        let r = pearson(&x, &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - 0.99340).abs() < 1e-5, "{r}");
        assert!(pearson(&x, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn roc_auc_examples() {
        let labels = [false, false, true, true];
        assert_eq!(pair_roc_auc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert_eq!(pair_roc_auc(&[0.1, 0.2, 0.3, 0.4], &labels).unwrap(), 1.0);
        assert_eq!(pair_roc_auc(&[0.5, 0.5, 0.5, 0.5], &labels).unwrap(), 0.5);
        assert!(pair_roc_auc(&[0.1, 0.2], &[true, true]).is_err());

        let mut rng = seed::rng(3);
        let n = 20_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let auc = pair_roc_auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.02, "{auc}");
    }

    #[test]
    fn f2_examples() {
        assert!((f2(0.02, 0.5) - 0.08621).abs() < 1e-5);
        assert_eq!(f2(1.0, 1.0), 1.0);
        assert_eq!(f2(1.0, 0.0), 0.0);
        assert_eq!(f2(0.0, 0.0), 0.0);
    }

    #[test]
    fn classification_metrics_strict_threshold() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5];
        let labels = [true, true, false, true, false];
        let m = classification_metrics(&scores, &labels, 0.8).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 1.0 / 3.0));
        let m = classification_metrics(&scores, &labels, 1.0).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f2, 0.0);
        // AP = (1 + 1 + 3/4) / 3
        assert!((m.average_precision - (2.75 / 3.0)).abs() < 1e-15);
        assert!(classification_metrics(&scores, &[false; 5], 0.5).is_err());
        assert!(classification_metrics(&scores, &labels, 1.5).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let rel: HashMap<&str, f64> = [("a", 0.0), ("b", 1.0)].into_iter().collect();
        let v = ndcg(&["a", "b"], &rel, 2).unwrap();
        assert!((v - 0.63093).abs() < 1e-5, "{v}");
        assert_eq!(ndcg(&["b", "a"], &rel, 2).unwrap(), 1.0);
        let zero: HashMap<&str, f64> = [("a", 0.0)].into_iter().collect();
        assert_eq!(ndcg(&["a"], &zero, 1).unwrap(), 0.0);
        assert!(ndcg(&["a"], &zero, 0).is_err());
    }

    #[test]
    fn overlap_examples() {
        let set = |xs: &[i32]| xs.iter().copied().collect::<HashSet<_>>();
        assert_eq!(overlap_coefficient(&set(&[1, 2]), &set(&[1, 2])).unwrap(), 1.0);
        assert_eq!(overlap_coefficient(&set(&[1]), &set(&[2])).unwrap(), 0.0);
        let v = overlap_coefficient(&set(&[1, 2, 3]), &set(&[2, 3, 4, 5])).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert!(overlap_coefficient(&set(&[]), &set(&[1])).is_err());
    }

    #[test]
    fn diversity_examples() {
        let catalog = simple_catalog();
        let skus = |xs: &[&str]| xs.iter().map(|s| Sku::from(*s)).collect::<Vec<_>>();
        assert_eq!(diversity(&skus(&["S0", "S1"]), Attribute::Brand, &catalog).unwrap(), 0.0);
        let uniform = diversity(&skus(&["S0", "S2", "S3", "S5"]), Attribute::Brand, &catalog).unwrap();
        assert!((uniform - 1.0).abs() < 1e-12);
        let v = diversity(&skus(&["S0", "S1", "S2"]), Attribute::Brand, &catalog).unwrap();
        assert!((v - 0.91830).abs() < 1e-5, "{v}");
    }

    #[test]
    fn distance_examples() {
        assert!((distance(&[3.0, 4.0], &[3.0, 4.0], Metric::Cosine).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap(), 0.0);
        let c = distance(&[1.0, 0.0], &[1.0, 1.0], Metric::Cosine).unwrap();
        assert!((c - 0.70711).abs() < 1e-5);
        assert!(distance(&[0.0, 0.0], &[1.0, 1.0], Metric::Cosine).is_err());
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0], Metric::Euclidean).unwrap(), 5.0);
        assert_eq!(distance(&[1.0, 2.0], &[3.0, 4.0], Metric::Dot).unwrap(), 11.0);
        assert!(distance(&[1.0], &[1.0, 2.0], Metric::Dot).is_err());
    }

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    fn distribution() -> impl Strategy<Value = BTreeMap<String, f64>> {
        prop::collection::vec(0.0f64..1.0, 1..6).prop_filter_map("nonzero", |w| {
            let total: f64 = w.iter().sum();
            (total > 1e-3).then(|| {
                w.iter()
                    .enumerate()
                    .map(|(i, x)| (format!("v{i}"), x / total))
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn js_is_symmetric_and_bounded(p in distribution(), q in distribution()) {
            let a = js_divergence(&p, &q).unwrap();
            let b = js_divergence(&q, &p).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn auc_matches_pair_counting(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let fast = pair_roc_auc(&scores, &labels).unwrap();
            let slow = brute_auc(&scores, &labels);
            prop_assert!((fast - slow).abs() < 1e-12);
        }

        #[test]
        fn pearson_affine_invariant(
            xs in prop::collection::vec(-100.0f64..100.0, 3..50),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x.sin() + i as f64).collect();
            prop_assume!(pearson(&xs, &ys).is_ok());
            let zs: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let r1 = pearson(&xs, &ys).unwrap();
            let r2 = pearson(&zs, &ys).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-12);
        }
    }
}
