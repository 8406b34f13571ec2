//! Data-driven segments: embedding extraction, spherical k-means, cluster
//! statistics, length-scale fitting and representative items.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Catalog, ConsumerHistory, Sku};
use crate::encoder::{AttentionMode, EncoderModel, TokenSequence};
use crate::error::{Error, Result};
use crate::{io, metrics, seed};

/// Mean of the final encoder outputs over the event tokens (CLS and padding
/// excluded), computed with the causal next-item model.
pub fn extract_embedding(model: &EncoderModel, seq: &TokenSequence) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::invalid("cannot embed an empty sequence"));
    }
    let z = model.encodings(seq, AttentionMode::Causal)?;
    let rows = z.slice(ndarray::s![1..=seq.len(), ..]);
    Ok(rows.mean_axis(ndarray::Axis(0)).expect("nonempty").to_vec())
}

/// Consumer embeddings tagged with the checkpoint that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub checkpoint_id: String,
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Binary layout: `u64 n`, `u64 d`, `u32` length + checkpoint id bytes,
    /// `n * d` little-endian f32 values row-major, then `n` ids as `u32`
    /// length + bytes.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let d = self.dim();
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u64::<LittleEndian>(d as u64)?;
        w.write_u32::<LittleEndian>(self.checkpoint_id.len() as u32)?;
        w.write_all(self.checkpoint_id.as_bytes())?;
        for v in &self.vectors {
            for &x in v {
                w.write_f32::<LittleEndian>(x as f32)?;
            }
        }
        for id in &self.ids {
            w.write_u32::<LittleEndian>(id.len() as u32)?;
            w.write_all(id.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> std::io::Result<Self> {
        let n = r.read_u64::<LittleEndian>()? as usize;
        let d = r.read_u64::<LittleEndian>()? as usize;
        let read_string = |r: &mut dyn Read| -> std::io::Result<String> {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        };
        let checkpoint_id = read_string(&mut r)?;
        let mut vectors = Vec::with_capacity(n);
        let mut row = vec![0f32; d];
        for _ in 0..n {
            r.read_f32_into::<LittleEndian>(&mut row)?;
            vectors.push(row.iter().map(|&x| x as f64).collect());
        }
        let ids = (0..n).map(|_| read_string(&mut r)).collect::<std::io::Result<_>>()?;
        Ok(EmbeddingSet {
            checkpoint_id,
            ids,
            vectors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = io::create(path)?;
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = io::open(path)?;
        Self::read_from(r).map_err(|e| Error::format(path.display().to_string(), e))
    }
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = metrics::norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric("zero or non-finite vector cannot be normalized".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn argmax_cosine(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let s = metrics::dot(x, centroid);
        if s > best_sim {
            best_sim = s;
            best = c;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub k: usize,
    /// Unit-norm centroids.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Mean cosine distance to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Inertia after seeding and after each iteration.
    pub inertia_history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { max_iter: 100, tol: 1e-6 }
    }
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
    let total: f64 = points
        .iter()
        .zip(assign)
        .map(|(x, &c)| 1.0 - metrics::dot(x, &centroids[c]))
        .sum();
    total / points.len() as f64
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|x| (1.0 - metrics::dot(x, &centroids[0])).max(0.0))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (d, x) in dist.iter_mut().zip(points) {
            *d = d.min((1.0 - metrics::dot(x, &c)).max(0.0));
        }
        centroids.push(c);
    }
    centroids
}

/// Spherical k-means with k-means++ seeding. Empty clusters are re-seeded
/// with the point farthest from its own centroid.
pub fn kmeans(embeddings: &[Vec<f64>], k: usize, seed: u64, params: KMeansParams) -> Result<KMeansResult> {
    let n = embeddings.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|v| v.len() != d) {
        return Err(Error::invalid("embeddings have inconsistent dimensions"));
    }
    let points = embeddings.iter().map(|v| normalized(v)).collect::<Result<Vec<_>>>()?;
    let mut rng = seed::rng_for(seed, "kmeans");
    let mut centroids = kmeans_pp(&points, k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|x| argmax_cosine(x, &centroids)).collect();
    let mut history = vec![inertia(&points, &centroids, &assign)];
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut used = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                if let Ok(u) = normalized(&sums[c]) {
                    centroids[c] = u;
                    continue;
                }
            }
            // empty (or degenerate) cluster: farthest point from its centroid
            let far = (0..n)
                .filter(|&i| !used[i])
                .max_by(|&a, &b| {
                    let da = 1.0 - metrics::dot(&points[a], &centroids[assign[a]]);
                    let db = 1.0 - metrics::dot(&points[b], &centroids[assign[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap_or(0);
            used[far] = true;
            centroids[c] = points[far].clone();
        }
        let next: Vec<usize> = points.iter().map(|x| argmax_cosine(x, &centroids)).collect();
        let value = inertia(&points, &centroids, &next);
        let prev = *history.last().expect("seeded");
        history.push(value);
        let stable = next == assign;
        assign = next;
        if stable || prev - value < params.tol {
            break;
        }
    }
    Ok(KMeansResult {
        k,
        inertia: *history.last().expect("nonempty"),
        centroids,
        assignments: assign,
        iterations,
        seed,
        inertia_history: history,
    })
}

/// Distance used by [`silhouette`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SilhouetteMetric {
    /// `1 - cos(u, v)`.
    CosineDistance,
    Euclidean,
}

/// Mean silhouette coefficient. Singleton clusters contribute 0.
pub fn silhouette(embeddings: &[Vec<f64>], labels: &[usize], metric: SilhouetteMetric) -> Result<f64> {
    let n = embeddings.len();
    if labels.len() != n || n == 0 {
        return Err(Error::invalid("labels and embeddings differ in length or are empty"));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::invalid("silhouette needs at least two nonempty clusters"));
    }
    let points: Vec<Vec<f64>> = match metric {
        SilhouetteMetric::CosineDistance => embeddings.iter().map(|v| normalized(v)).collect::<Result<_>>()?,
        SilhouetteMetric::Euclidean => embeddings.to_vec(),
    };
    let dist = |a: &[f64], b: &[f64]| match metric {
        SilhouetteMetric::CosineDistance => 1.0 - metrics::dot(a, b),
        SilhouetteMetric::Euclidean => metrics::euclidean(a, b),
    };
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(&points[i], &points[j]);
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub sizes: Vec<usize>,
    pub mean_distance: Vec<f64>,
    /// Population standard deviation.
    pub std_distance: Vec<f64>,
    /// Pooled histogram of center distances: `(lower edge, upper edge, count)`.
    pub histogram: Vec<(f64, f64, usize)>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Cosine distance of every point to its own centroid.
pub fn center_distances(result: &KMeansResult, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    if embeddings.len() != result.assignments.len() {
        return Err(Error::invalid("embeddings do not match the clustering"));
    }
    embeddings
        .iter()
        .zip(&result.assignments)
        .map(|(v, &c)| Ok(1.0 - metrics::dot(&normalized(v)?, &result.centroids[c])))
        .collect()
}

pub fn center_distance_stats(result: &KMeansResult, embeddings: &[Vec<f64>]) -> Result<ClusterStats> {
    let dists = center_distances(result, embeddings)?;
    Ok(stats_from_distances(result.k, &result.assignments, &dists))
}

pub fn stats_from_distances(k: usize, labels: &[usize], dists: &[f64]) -> ClusterStats {
    let mut sizes = vec![0usize; k];
    let mut sum = vec![0.0; k];
    for (&c, &d) in labels.iter().zip(dists) {
        sizes[c] += 1;
        sum[c] += d;
    }
    let mean: Vec<f64> = (0..k)
        .map(|c| if sizes[c] > 0 { sum[c] / sizes[c] as f64 } else { 0.0 })
        .collect();
    let mut var = vec![0.0; k];
    for (&c, &d) in labels.iter().zip(dists) {
        var[c] += (d - mean[c]).powi(2);
    }
    let std = (0..k)
        .map(|c| if sizes[c] > 0 { (var[c] / sizes[c] as f64).sqrt() } else { 0.0 })
        .collect();
    let lo = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = dists.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut histogram = Vec::new();
    if lo.is_finite() {
        let width = if hi > lo { (hi - lo) / HISTOGRAM_BINS as f64 } else { 1.0 };
        let mut counts = vec![0usize; HISTOGRAM_BINS];
        for &d in dists {
            let b = (((d - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[b] += 1;
        }
        histogram = counts
            .into_iter()
            .enumerate()
            .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
            .collect();
    }
    ClusterStats {
        sizes,
        mean_distance: mean,
        std_distance: std,
        histogram,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthScaleFit {
    pub lambda: f64,
    pub amplitude: f64,
    /// `(bin center, mean similarity, pair count)` for nonempty bins.
    pub bins: Vec<(f64, f64, usize)>,
}

pub const LENGTH_SCALE_BINS: usize = 50;

/// Fits `s(d) = a * exp(-d / lambda)` to binned mean similarities by linear
/// regression of `ln s` on the bin center.
pub fn fit_length_scale(pairs: &[(f64, f64)], n_bins: usize) -> Result<LengthScaleFit> {
    if n_bins == 0 || pairs.is_empty() {
        return Err(Error::invalid("no pairs to fit"));
    }
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() || !(hi > lo) {
        return Err(Error::Numeric("distances span an empty range".into()));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for &(d, s) in pairs {
        let b = (((d - lo) / width) as usize).min(n_bins - 1);
        sum[b] += s;
        count[b] += 1;
    }
    let bins: Vec<(f64, f64, usize)> = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (lo + (b as f64 + 0.5) * width, sum[b] / count[b] as f64, count[b]))
        .collect();
    let usable: Vec<(f64, f64)> = bins
        .iter()
        .filter(|b| b.1 > 0.0)
        .map(|b| (b.0, b.1.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::Numeric("fewer than two bins with positive mean similarity".into()));
    }
    let m = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / m;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let scale = my.abs().max(1.0) / (hi - lo);
    if !(slope < -1e-9 * scale) {
        return Err(Error::Numeric(format!("no decay: fitted log-slope {slope}")));
    }
    Ok(LengthScaleFit {
        lambda: -1.0 / slope,
        amplitude: (my - slope * mx).exp(),
        bins,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepItemParams {
    pub top_n: usize,
    pub radius_quantile: f64,
    pub max_group_share: f64,
}

impl Default for RepItemParams {
    fn default() -> Self {
        RepItemParams {
            top_n: 100,
            radius_quantile: 0.5,
            max_group_share: 0.3,
        }
    }
}

impl RepItemParams {
    /// Slots any one commodity group may occupy.
    pub fn group_cap(&self) -> usize {
        ((self.max_group_share * self.top_n as f64) + 1e-9).floor().max(1.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepItem {
    pub sku: Sku,
    pub popularity: usize,
}

/// One member of a segment: its history, the gender used to split lists and
/// its distance to the segment center.
#[derive(Clone, Copy, Debug)]
pub struct SegmentMember<'a> {
    pub history: &'a ConsumerHistory,
    pub gender: &'a str,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeItems {
    pub segment_id: usize,
    /// Ranked list per gender.
    pub lists: BTreeMap<String, Vec<RepItem>>,
}

/// Nearest-rank quantile of `values`.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Greedy capped selection from candidates already in rank order.
pub fn select_capped(ranked: &[(Sku, usize)], catalog: &Catalog, params: &RepItemParams) -> Vec<RepItem> {
    let cap = params.group_cap();
    let mut per_group: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    for (sku, pop) in ranked {
        if out.len() >= params.top_n {
            break;
        }
        let group = catalog.get(sku).map_or("", |i| i.commodity_group.as_str());
        let used = per_group.entry(group).or_insert(0);
        if *used >= cap {
            continue;
        }
        *used += 1;
        out.push(RepItem {
            sku: sku.clone(),
            popularity: *pop,
        });
    }
    out
}

/// Most popular items (by significant actions) among members inside the
/// radius quantile, capped per commodity group and split by gender. Items
/// seen only through clicks fill underfull lists with popularity 0.
pub fn representative_items(
    segment_id: usize,
    members: &[SegmentMember],
    catalog: &Catalog,
    params: &RepItemParams,
) -> Result<RepresentativeItems> {
    let dists: Vec<f64> = members.iter().map(|m| m.distance).collect();
    let mut lists = BTreeMap::new();
    let Some(radius) = nearest_rank_quantile(&dists, params.radius_quantile) else {
        return Ok(RepresentativeItems { segment_id, lists });
    };
    let mut counts: BTreeMap<&str, BTreeMap<&Sku, usize>> = BTreeMap::new();
    for m in members.iter().filter(|m| m.distance <= radius) {
        let c = counts.entry(m.gender).or_default();
        for e in &m.history.events {
            let entry = c.entry(&e.sku).or_insert(0);
            if e.action.is_significant() {
                *entry += 1;
            }
        }
    }
    for (gender, c) in counts {
        let mut ranked: Vec<(Sku, usize)> = c.into_iter().map(|(s, n)| (s.clone(), n)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        lists.insert(gender.to_string(), select_capped(&ranked, catalog, params));
    }
    Ok(RepresentativeItems { segment_id, lists })
}

/// Significant-action counts per SKU over a set of histories.
pub fn popularity<'a>(histories: impl IntoIterator<Item = &'a ConsumerHistory>) -> BTreeMap<Sku, usize> {
    let mut out = BTreeMap::new();
    for h in histories {
        for e in &h.events {
            if matches!(e.action, Action::AddToCart | Action::AddToWishlist | Action::Checkout) {
                *out.entry(e.sku.clone()).or_insert(0) += 1;
            }
        }
    }
    out
}
