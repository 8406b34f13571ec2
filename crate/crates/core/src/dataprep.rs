//! Model-ready sequences: style data variants, lookalike labeling and
//! window sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    days, Action, Catalog, ConsumerFeatures, ConsumerHistory, ConsumerId, ConsumerProfile, InteractionEvent,
    Timestamp,
};
use crate::error::{Error, Result};
use crate::{io, seed};

pub const SEQUENCES_FILE: &str = "sequences.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    V1,
    V2,
    V3,
    V4,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Baseline, Variant::V1, Variant::V2, Variant::V3, Variant::V4];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
            Variant::V4 => "v4",
        }
    }

    pub fn filters_silhouettes(self) -> bool {
        self != Variant::Baseline
    }

    pub fn splits_gender(self) -> bool {
        matches!(self, Variant::V2 | Variant::V4)
    }

    pub fn drops_single_silhouette(self) -> bool {
        matches!(self, Variant::V3 | Variant::V4)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown data variant `{s}` (expected baseline, v1, v2, v3 or v4)")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant: Variant,
    pub style_relevant_silhouettes: BTreeSet<String>,
    pub lookback_days: i64,
}

impl VariantSpec {
    /// Spec whose relevant silhouettes are those flagged in the catalog.
    pub fn from_catalog(variant: Variant, catalog: &Catalog, lookback_days: i64) -> Self {
        let style_relevant_silhouettes = catalog
            .items()
            .iter()
            .filter(|i| i.style_relevant)
            .map(|i| i.silhouette.clone())
            .collect();
        VariantSpec {
            variant,
            style_relevant_silhouettes,
            lookback_days,
        }
    }
}

fn item_of<'a>(catalog: &'a Catalog, e: &InteractionEvent) -> Result<&'a crate::domain::CatalogItem> {
    catalog
        .get(&e.sku)
        .ok_or_else(|| Error::invalid(format!("event of {} references unknown sku {}", e.consumer_id, e.sku)))
}

fn distinct_silhouettes(catalog: &Catalog, events: &[InteractionEvent]) -> Result<usize> {
    let mut set = BTreeSet::new();
    for e in events {
        set.insert(item_of(catalog, e)?.silhouette.as_str());
    }
    Ok(set.len())
}

/// Applies the lookback window and the variant's filters; empty histories
/// are dropped. Gender-split outputs carry the item gender in `gender_split`.
pub fn apply_variant(
    histories: &[ConsumerHistory],
    catalog: &Catalog,
    spec: &VariantSpec,
    now: Timestamp,
) -> Result<Vec<ConsumerHistory>> {
    if spec.lookback_days < 0 {
        return Err(Error::Config(format!("lookback_days = {} must be ≥ 0", spec.lookback_days)));
    }
    let from = now - days(spec.lookback_days);
    let mut out = Vec::new();
    for h in histories {
        let mut kept = Vec::new();
        for e in &h.events {
            let item = item_of(catalog, e)?;
            if e.timestamp < from || e.timestamp > now {
                continue;
            }
            if spec.variant.filters_silhouettes() && !spec.style_relevant_silhouettes.contains(&item.silhouette) {
                continue;
            }
            kept.push(e.clone());
        }
        let parts: Vec<(Option<String>, Vec<InteractionEvent>)> = if spec.variant.splits_gender() {
            let mut by_gender: BTreeMap<String, Vec<InteractionEvent>> = BTreeMap::new();
            for e in kept {
                by_gender.entry(item_of(catalog, &e)?.gender.clone()).or_default().push(e);
            }
            by_gender.into_iter().map(|(g, ev)| (Some(g), ev)).collect()
        } else {
            vec![(h.gender_split.clone(), kept)]
        };
        for (gender, events) in parts {
            if events.is_empty() {
                continue;
            }
            if spec.variant.drops_single_silhouette() && distinct_silhouettes(catalog, &events)? <= 1 {
                continue;
            }
            out.push(ConsumerHistory {
                consumer_id: h.consumer_id.clone(),
                gender_split: gender,
                events,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LookalikeDatasetSpec {
    pub min_designer_interactions: usize,
    pub core_lookback_days: i64,
    pub window_len: usize,
    pub max_windows_per_core: usize,
    pub train_lookback_days: i64,
    pub min_account_age_days: i64,
    pub allowed_actions: Vec<Action>,
    /// Windows with fewer events are dropped.
    pub min_events: usize,
    /// Fraction of consumers per class held out for evaluation.
    pub eval_fraction: f64,
    /// Fraction of eligible non-core consumers sampled as negatives.
    pub negative_fraction: f64,
}

impl Default for LookalikeDatasetSpec {
    fn default() -> Self {
        LookalikeDatasetSpec {
            min_designer_interactions: 5,
            core_lookback_days: 365,
            window_len: 100,
            max_windows_per_core: 5,
            train_lookback_days: 120,
            min_account_age_days: 7,
            allowed_actions: vec![Action::Click, Action::AddToWishlist],
            min_events: 3,
            eval_fraction: 0.1,
            negative_fraction: 1.0,
        }
    }
}

impl LookalikeDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::Config("window_len must be > 0".into()));
        }
        if self.max_windows_per_core == 0 {
            return Err(Error::Config("max_windows_per_core must be ≥ 1".into()));
        }
        if self.allowed_actions.is_empty() {
            return Err(Error::Config("allowed_actions must not be empty".into()));
        }
        for (name, v) in [("eval_fraction", self.eval_fraction), ("negative_fraction", self.negative_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        for (name, v) in [
            ("core_lookback_days", self.core_lookback_days),
            ("train_lookback_days", self.train_lookback_days),
            ("min_account_age_days", self.min_account_age_days),
        ] {
            if v < 0 {
                return Err(Error::Config(format!("{name} = {v} must be ≥ 0")));
            }
        }
        Ok(())
    }

    fn allowed(&self, e: &InteractionEvent) -> bool {
        self.allowed_actions.contains(&e.action)
    }
}

/// Consumers with at least `min_designer_interactions` designer-brand events
/// in `[now - core_lookback_days, now]`.
pub fn label_core_designers(
    histories: &[ConsumerHistory],
    catalog: &Catalog,
    spec: &LookalikeDatasetSpec,
    now: Timestamp,
) -> BTreeSet<ConsumerId> {
    let from = now - days(spec.core_lookback_days);
    let mut counts: BTreeMap<&ConsumerId, usize> = BTreeMap::new();
    for h in histories {
        let n = h
            .events
            .iter()
            .filter(|e| e.timestamp >= from && e.timestamp <= now && catalog.is_designer(&e.sku))
            .count();
        *counts.entry(&h.consumer_id).or_default() += n;
    }
    counts
        .into_iter()
        .filter(|&(_, n)| n >= spec.min_designer_interactions)
        .map(|(id, _)| id.clone())
        .collect()
}

/// Time-split protocol: histories truncated to events at or before `cutoff`,
/// and the consumers meeting the core rule on events in
/// `(cutoff, cutoff + horizon_days]`.
pub fn time_split(
    histories: &[ConsumerHistory],
    catalog: &Catalog,
    spec: &LookalikeDatasetSpec,
    cutoff: Timestamp,
    horizon_days: i64,
) -> (Vec<ConsumerHistory>, BTreeSet<ConsumerId>) {
    let end = cutoff + days(horizon_days);
    let mut past = Vec::new();
    let mut future_core = BTreeSet::new();
    for h in histories {
        let (before, after): (Vec<&InteractionEvent>, Vec<&InteractionEvent>) =
            h.events.iter().partition(|e| e.timestamp <= cutoff);
        let n = after
            .iter()
            .filter(|e| e.timestamp <= end && catalog.is_designer(&e.sku))
            .count();
        if n >= spec.min_designer_interactions {
            future_core.insert(h.consumer_id.clone());
        }
        if !before.is_empty() {
            past.push(ConsumerHistory {
                consumer_id: h.consumer_id.clone(),
                gender_split: h.gender_split.clone(),
                events: before.into_iter().cloned().collect(),
            });
        }
    }
    (past, future_core)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceLabel {
    Core,
    Negative,
}

impl SequenceLabel {
    pub fn is_core(self) -> bool {
        self == SequenceLabel::Core
    }
}

/// One model input: a contiguous window of a consumer's history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub consumer_id: ConsumerId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_split: Option<String>,
    pub label: Option<SequenceLabel>,
    pub events: Vec<InteractionEvent>,
    pub features: ConsumerFeatures,
}

impl LabeledSequence {
    pub fn sequence_id(&self) -> String {
        match &self.gender_split {
            Some(g) => format!("{}@{}", self.consumer_id, g),
            None => self.consumer_id.0.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LookalikeDataset {
    pub train: Vec<LabeledSequence>,
    pub eval: Vec<LabeledSequence>,
}

fn profile_map(profiles: &[ConsumerProfile]) -> BTreeMap<&ConsumerId, &ConsumerProfile> {
    profiles.iter().map(|p| (&p.consumer_id, p)).collect()
}

fn features_of(map: &BTreeMap<&ConsumerId, &ConsumerProfile>, id: &ConsumerId) -> Result<ConsumerFeatures> {
    map.get(id)
        .map(|p| ConsumerFeatures::from(*p))
        .ok_or_else(|| Error::invalid(format!("consumer {id} has no profile")))
}

/// Start offsets of `n` non-overlapping windows of length `w` placed
/// uniformly at random in a sequence of length `m ≥ n·w`.
pub fn window_starts(m: usize, w: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(n * w <= m, "{n} windows of {w} do not fit in {m}");
    let slack = m - n * w;
    let mut picks = index::sample(rng, slack + n, n).into_vec();
    picks.sort_unstable();
    picks.iter().enumerate().map(|(i, &s)| s + i * (w - 1)).collect()
}

fn recent_allowed(h: &ConsumerHistory, spec: &LookalikeDatasetSpec, now: Timestamp) -> Vec<InteractionEvent> {
    let from = now - days(spec.train_lookback_days);
    h.events
        .iter()
        .filter(|e| e.timestamp >= from && e.timestamp <= now && spec.allowed(e))
        .cloned()
        .collect()
}

/// Windows of the core and sampled negative consumers, split by consumer
/// into train and eval sets (stratified by class).
pub fn build_lookalike_dataset(
    histories: &[ConsumerHistory],
    profiles: &[ConsumerProfile],
    core: &BTreeSet<ConsumerId>,
    spec: &LookalikeDatasetSpec,
    now: Timestamp,
    seed: u64,
) -> Result<LookalikeDataset> {
    spec.validate()?;
    if core.is_empty() {
        return Err(Error::invalid("core set is empty"));
    }
    let profiles = profile_map(profiles);
    let min_first = now - days(spec.min_account_age_days);
    let w = spec.window_len;
    let mut by_consumer: BTreeMap<(SequenceLabel, &ConsumerId), Vec<LabeledSequence>> = BTreeMap::new();
    for h in histories {
        let id = &h.consumer_id;
        let is_core = core.contains(id);
        let label = if is_core { SequenceLabel::Core } else { SequenceLabel::Negative };
        if !is_core {
            let Some(p) = profiles.get(id) else {
                return Err(Error::invalid(format!("consumer {id} has no profile")));
            };
            if p.first_activity_ts > min_first {
                continue;
            }
            if spec.negative_fraction < 1.0 && seed::unit_hash(seed, &format!("negative:{id}")) >= spec.negative_fraction {
                continue;
            }
        }
        let events = recent_allowed(h, spec, now);
        let m = events.len();
        if m < spec.min_events.max(1) {
            continue;
        }
        let mut rng = seed::rng_for(seed, &format!("windows:{id}"));
        let ranges: Vec<(usize, usize)> = if m <= w {
            vec![(0, m)]
        } else if is_core {
            let n = spec.max_windows_per_core.min((m / w).max(1));
            window_starts(m, w, n, &mut rng).into_iter().map(|s| (s, s + w)).collect()
        } else {
            let s = rng.gen_range(0..=m - w);
            vec![(s, s + w)]
        };
        let features = features_of(&profiles, id)?;
        let entry = by_consumer.entry((label, id)).or_default();
        for (a, b) in ranges {
            entry.push(LabeledSequence {
                consumer_id: id.clone(),
                gender_split: h.gender_split.clone(),
                label: Some(label),
                events: events[a..b].to_vec(),
                features: features.clone(),
            });
        }
    }

    let mut eval_ids: BTreeSet<&ConsumerId> = BTreeSet::new();
    for label in [SequenceLabel::Core, SequenceLabel::Negative] {
        let mut ids: Vec<(f64, &ConsumerId)> = by_consumer
            .keys()
            .filter(|(l, _)| *l == label)
            .map(|(_, id)| (seed::unit_hash(seed, &format!("split:{id}")), *id))
            .collect();
        ids.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let n_eval = (spec.eval_fraction * ids.len() as f64).ceil() as usize;
        eval_ids.extend(ids.iter().take(n_eval).map(|x| x.1));
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for ((_, id), seqs) in by_consumer {
        if eval_ids.contains(id) {
            eval.extend(seqs);
        } else {
            train.extend(seqs);
        }
    }
    Ok(LookalikeDataset { train, eval })
}

/// The most recent `window_len` allowed-action events of every non-core
/// consumer with at least one such event.
pub fn build_inference_sequences(
    histories: &[ConsumerHistory],
    profiles: &[ConsumerProfile],
    core: &BTreeSet<ConsumerId>,
    spec: &LookalikeDatasetSpec,
) -> Result<Vec<LabeledSequence>> {
    spec.validate()?;
    let profiles = profile_map(profiles);
    let mut out = Vec::new();
    for h in histories.iter().filter(|h| !core.contains(&h.consumer_id)) {
        let events: Vec<InteractionEvent> = h.events.iter().filter(|e| spec.allowed(e)).cloned().collect();
        if events.is_empty() {
            continue;
        }
        let start = events.len().saturating_sub(spec.window_len);
        out.push(LabeledSequence {
            consumer_id: h.consumer_id.clone(),
            gender_split: h.gender_split.clone(),
            label: None,
            events: events[start..].to_vec(),
            features: features_of(&profiles, &h.consumer_id)?,
        });
    }
    Ok(out)
}

/// Unlabeled sequences for the style path, one per (split) history.
pub fn style_sequences(histories: &[ConsumerHistory], profiles: &[ConsumerProfile]) -> Result<Vec<LabeledSequence>> {
    let profiles = profile_map(profiles);
    histories
        .iter()
        .map(|h| {
            Ok(LabeledSequence {
                consumer_id: h.consumer_id.clone(),
                gender_split: h.gender_split.clone(),
                label: None,
                events: h.events.clone(),
                features: features_of(&profiles, &h.consumer_id)?,
            })
        })
        .collect()
}

pub fn write_sequences(path: &Path, sequences: &[LabeledSequence]) -> Result<()> {
    io::write_jsonl(path, sequences)
}

pub fn read_sequences(path: &Path) -> Result<Vec<LabeledSequence>> {
    io::read_jsonl(path)
}
