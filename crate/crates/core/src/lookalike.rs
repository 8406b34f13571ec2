//! Lookalike audience expansion: threshold sweep, F2-optimal threshold,
//! lookalike extraction and model-variant comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::{LabeledSequence, LookalikeDataset};
use crate::domain::{Catalog, ConsumerHistory, ConsumerId};
use crate::encoder::{
    train_classifier, EncoderConfig, EncoderModel, FeatureSpace, LabeledTokens, NumericEncoding, TokenSequence,
    TrainParams, TrainReport,
};
use crate::error::{Error, Result};
use crate::metrics::{self, ClassificationMetrics};
use crate::{io, seed};

pub const LOOKALIKES_FILE: &str = "lookalikes.csv";
pub const CURVE_FILE: &str = "threshold_curve.csv";
pub const VARIANT_REPORT_FILE: &str = "variant_report.csv";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub tau: f64,
    pub f2: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_lookalikes: usize,
}

/// Metrics at every candidate threshold, ordered by strictly increasing τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub points: Vec<ThresholdPoint>,
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("score {s} outside [0, 1]")));
    }
    Ok(())
}

/// Candidate thresholds: 0, 1 and the midpoints between consecutive unique scores.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut unique = scores.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let mut taus = vec![0.0];
    taus.extend(unique.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    taus.push(1.0);
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

/// Evaluates predictions `score > τ` at every candidate threshold.
pub fn sweep_thresholds(scores: &[f64], labels: &[bool]) -> Result<ThresholdCurve> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::invalid("threshold sweep needs both classes"));
    }
    let mut pos: Vec<f64> = scores.iter().zip(labels).filter(|x| *x.1).map(|x| *x.0).collect();
    let mut neg: Vec<f64> = scores.iter().zip(labels).filter(|x| !*x.1).map(|x| *x.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let above = |v: &[f64], tau: f64| v.len() - v.partition_point(|&s| s <= tau);
    let points = candidate_thresholds(scores)
        .into_iter()
        .map(|tau| {
            let (tp, fp) = (above(&pos, tau), above(&neg, tau));
            let (precision, recall) = metrics::precision_recall(tp, fp, n_pos);
            ThresholdPoint {
                tau,
                f2: metrics::f2(precision, recall),
                precision,
                recall,
                n_lookalikes: tp + fp,
            }
        })
        .collect();
    Ok(ThresholdCurve { points })
}

/// The F2-maximizing point; ties go to the larger threshold.
pub fn optimize_threshold(curve: &ThresholdCurve) -> Result<ThresholdPoint> {
    let mut best: Option<ThresholdPoint> = None;
    for p in &curve.points {
        if best.map_or(true, |b| p.f2 >= b.f2) {
            best = Some(*p);
        }
    }
    best.ok_or_else(|| Error::invalid("empty threshold curve"))
}

/// `{ l : l ∉ core ∧ score(l) > τ }`.
pub fn extract_lookalikes<'a>(
    scores: impl IntoIterator<Item = (&'a ConsumerId, f64)>,
    core: &BTreeSet<ConsumerId>,
    tau: f64,
) -> BTreeSet<ConsumerId> {
    scores
        .into_iter()
        .filter(|(id, p)| *p > tau && !core.contains(*id))
        .map(|(id, _)| id.clone())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookalikeResult {
    pub tau: f64,
    pub lookalikes: BTreeSet<ConsumerId>,
    pub scores: BTreeMap<ConsumerId, f64>,
    pub metrics: Option<ClassificationMetrics>,
}

impl LookalikeResult {
    pub fn new(scores: BTreeMap<ConsumerId, f64>, core: &BTreeSet<ConsumerId>, tau: f64) -> Self {
        let lookalikes = extract_lookalikes(scores.iter().map(|(k, v)| (k, *v)), core, tau);
        LookalikeResult {
            tau,
            lookalikes,
            scores,
            metrics: None,
        }
    }

    /// Rows of `lookalikes.csv`, ordered by consumer id.
    pub fn rows(&self) -> Vec<LookalikeRow> {
        self.lookalikes
            .iter()
            .map(|id| LookalikeRow {
                consumer_id: id.clone(),
                score: self.scores[id],
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookalikeRow {
    pub consumer_id: ConsumerId,
    pub score: f64,
}

/// Designer-brand event count per consumer.
pub fn designer_event_counts(histories: &[ConsumerHistory], catalog: &Catalog) -> BTreeMap<ConsumerId, usize> {
    let mut out: BTreeMap<ConsumerId, usize> = BTreeMap::new();
    for h in histories {
        *out.entry(h.consumer_id.clone()).or_default() +=
            h.events.iter().filter(|e| catalog.is_designer(&e.sku)).count();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreGroup {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// `n_bins + 1` edges from 0 to 1; the last bin is closed.
    pub edges: Vec<f64>,
    pub groups: Vec<ScoreGroup>,
}

pub const SCORE_GROUPS: [&str; 3] = ["core", "non_core_zero_designer", "non_core_with_designer"];

/// Score histograms for core consumers, non-core consumers without designer
/// events and non-core consumers with designer events.
pub fn score_distribution_report<'a>(
    scores: impl IntoIterator<Item = (&'a ConsumerId, f64)>,
    core: &BTreeSet<ConsumerId>,
    designer_counts: &BTreeMap<ConsumerId, usize>,
    n_bins: usize,
) -> Result<ScoreReport> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be positive"));
    }
    let edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    let mut groups: Vec<ScoreGroup> = SCORE_GROUPS
        .iter()
        .map(|name| ScoreGroup {
            name: name.to_string(),
            n: 0,
            mean: 0.0,
            counts: vec![0; n_bins],
        })
        .collect();
    for (id, p) in scores {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("score {p} of {id} outside [0, 1]")));
        }
        let g = if core.contains(id) {
            0
        } else if designer_counts.get(id).copied().unwrap_or(0) == 0 {
            1
        } else {
            2
        };
        let bin = ((p * n_bins as f64) as usize).min(n_bins - 1);
        let group = &mut groups[g];
        group.counts[bin] += 1;
        group.n += 1;
        group.mean += p;
    }
    for g in &mut groups {
        if g.n > 0 {
            g.mean /= g.n as f64;
        }
    }
    Ok(ScoreReport { edges, groups })
}

/// Classifier variants: 1 base, 2 class weighting, 3 piecewise-linear
/// numeric encoding, 4 both, 5 without the timestamp feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelVariant(u8);

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [ModelVariant(1), ModelVariant(2), ModelVariant(3), ModelVariant(4), ModelVariant(5)];

    pub fn new(n: u8) -> Result<Self> {
        if (1..=5).contains(&n) {
            Ok(ModelVariant(n))
        } else {
            Err(Error::Config(format!("model variant {n} outside 1..=5")))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn class_weighting(self) -> bool {
        matches!(self.0, 2 | 4)
    }

    pub fn piecewise_linear(self) -> bool {
        matches!(self.0, 3 | 4)
    }

    pub fn use_timestamp(self) -> bool {
        self.0 != 5
    }

    /// `base` with this variant's flags applied.
    pub fn apply(self, base: &EncoderConfig) -> EncoderConfig {
        EncoderConfig {
            class_weighting: self.class_weighting(),
            numeric_encoding: if self.piecewise_linear() {
                NumericEncoding::PiecewiseLinear
            } else {
                NumericEncoding::ScaledEmbedding
            },
            use_timestamp: self.use_timestamp(),
            ..base.clone()
        }
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches(|c: char| c.is_ascii_alphabetic() || c == '_' || c == '-');
        let n: u8 = digits
            .parse()
            .map_err(|_| Error::Config(format!("unknown model variant `{s}`")))?;
        ModelVariant::new(n)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "variant_{}", self.0)
    }
}

/// Tokenizes sequences with their consumer features.
pub fn tokenize(
    model_config: &EncoderConfig,
    space: &FeatureSpace,
    catalog: &Catalog,
    seqs: &[LabeledSequence],
) -> Result<Vec<TokenSequence>> {
    seqs.iter()
        .map(|s| space.tokenize(model_config, catalog, &s.events, &s.features))
        .collect()
}

fn labels_of(seqs: &[LabeledSequence]) -> Result<Vec<bool>> {
    seqs.iter()
        .map(|s| {
            s.label
                .map(|l| l.is_core())
                .ok_or_else(|| Error::invalid(format!("sequence of {} has no label", s.consumer_id)))
        })
        .collect()
}

/// Fits the feature space on `train` and trains a fresh classifier.
pub fn train_lookalike_model(
    config: &EncoderConfig,
    catalog: &Catalog,
    train: &[LabeledSequence],
    params: &TrainParams,
) -> Result<(EncoderModel, TrainReport)> {
    config.validate()?;
    let labels = labels_of(train)?;
    let space = FeatureSpace::fit(config, catalog, train.iter().map(|s| (s.events.as_slice(), &s.features)))?;
    let tokens = tokenize(config, &space, catalog, train)?;
    let data: Vec<LabeledTokens> = tokens
        .into_iter()
        .zip(labels)
        .map(|(seq, label)| LabeledTokens { seq, label })
        .collect();
    let mut model = EncoderModel::new(config.clone(), space)?;
    let report = train_classifier(&mut model, &data, params)?;
    Ok((model, report))
}

/// Core-membership probabilities of `seqs`.
pub fn score_sequences(model: &EncoderModel, catalog: &Catalog, seqs: &[LabeledSequence]) -> Result<Vec<f64>> {
    let tokens = tokenize(&model.config, &model.space, catalog, seqs)?;
    model.score_batch(&tokens)
}

/// Uniform random scores evaluated at τ = 0.5.
pub fn random_baseline(labels: &[bool], seed: u64) -> Result<ClassificationMetrics> {
    let mut rng = seed::rng_for(seed, "random-baseline");
    let scores: Vec<f64> = labels.iter().map(|_| rng.gen::<f64>()).collect();
    metrics::classification_metrics(&scores, labels, 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub model: String,
    pub f2: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub average_precision: Option<f64>,
    pub tau: Option<f64>,
    pub train_secs: Option<f64>,
    pub error: Option<String>,
}

impl VariantRow {
    fn ok(model: String, m: &ClassificationMetrics, tau: f64, train_secs: Option<f64>) -> Self {
        VariantRow {
            model,
            f2: Some(m.f2),
            precision: Some(m.precision),
            recall: Some(m.recall),
            average_precision: Some(m.average_precision),
            tau: Some(tau),
            train_secs,
            error: None,
        }
    }

    fn failed(model: String, e: &Error) -> Self {
        VariantRow {
            model,
            f2: None,
            precision: None,
            recall: None,
            average_precision: None,
            tau: None,
            train_secs: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub rows: Vec<VariantRow>,
}

impl VariantReport {
    pub fn row(&self, model: &str) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

pub const RANDOM_ROW: &str = "random";

/// Trains and evaluates one classifier: metrics on `eval` at the
/// F2-optimal threshold of the eval curve.
pub fn evaluate_variant(
    variant: ModelVariant,
    base: &EncoderConfig,
    params: &TrainParams,
    catalog: &Catalog,
    dataset: &LookalikeDataset,
) -> Result<(ClassificationMetrics, f64, f64)> {
    let start = Instant::now();
    let (model, _) = train_lookalike_model(&variant.apply(base), catalog, &dataset.train, params)?;
    let secs = start.elapsed().as_secs_f64();
    let labels = labels_of(&dataset.eval)?;
    let scores = score_sequences(&model, catalog, &dataset.eval)?;
    let best = optimize_threshold(&sweep_thresholds(&scores, &labels)?)?;
    Ok((metrics::classification_metrics(&scores, &labels, best.tau)?, best.tau, secs))
}

/// One row per variant plus the random baseline; a failing variant yields
/// a row carrying its error.
pub fn run_variant_comparison(
    dataset: &LookalikeDataset,
    catalog: &Catalog,
    variants: &[ModelVariant],
    base: &EncoderConfig,
    params: &TrainParams,
    seed: u64,
) -> Result<VariantReport> {
    let labels = labels_of(&dataset.eval)?;
    let mut rows = vec![VariantRow::ok(RANDOM_ROW.into(), &random_baseline(&labels, seed)?, 0.5, None)];
    for &v in variants {
        let row = match evaluate_variant(v, base, params, catalog, dataset) {
            Ok((m, tau, secs)) => VariantRow::ok(v.to_string(), &m, tau, Some(secs)),
            Err(e) => VariantRow::failed(v.to_string(), &e),
        };
        rows.push(row);
    }
    Ok(VariantReport { rows })
}

pub fn write_lookalikes(path: &Path, rows: &[LookalikeRow]) -> Result<()> {
    io::write_csv(path, rows)
}

pub fn read_lookalikes(path: &Path) -> Result<Vec<LookalikeRow>> {
    io::read_csv(path)
}

pub fn write_curve(path: &Path, curve: &ThresholdCurve) -> Result<()> {
    io::write_csv(path, &curve.points)
}

pub fn read_curve(path: &Path) -> Result<ThresholdCurve> {
    Ok(ThresholdCurve {
        points: io::read_csv(path)?,
    })
}

pub fn write_variant_report(path: &Path, report: &VariantReport) -> Result<()> {
    io::write_csv(path, &report.rows)
}
