//! Segment-aware recommendation strategies and their offline evaluation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Attribute, Catalog, ConsumerFeatures, ConsumerId, InteractionEvent, Sku};
use crate::encoder::{EncoderModel, FeatureSpace};
use crate::error::{Error, Result};
use crate::metrics;
use crate::segmentation::RepItem;
use crate::{io, seed};

pub const RECS_FILE: &str = "recs.csv";
pub const EVAL_REPORT_FILE: &str = "eval_report.csv";

/// Ranks SKUs for an input sequence; output is duplicate-free.
pub trait BaseRecommender {
    fn recommend(&self, events: &[InteractionEvent], features: &ConsumerFeatures, k: usize) -> Result<Vec<Sku>>;
}

/// Top-k SKUs by next-item logit at the last position.
pub struct NextItemRecommender<'a> {
    pub model: &'a EncoderModel,
    pub catalog: &'a Catalog,
}

impl<'a> NextItemRecommender<'a> {
    pub fn new(model: &'a EncoderModel, catalog: &'a Catalog) -> Result<Self> {
        if !model.trained.next_item {
            return Err(Error::Untrained("next-item head"));
        }
        if model.n_skus() != catalog.len() {
            return Err(Error::invalid(format!(
                "model predicts {} skus but the catalog has {}",
                model.n_skus(),
                catalog.len()
            )));
        }
        Ok(NextItemRecommender { model, catalog })
    }

    fn space(&self) -> &FeatureSpace {
        &self.model.space
    }
}

/// Indices of the `k` largest values; ties go to the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

impl BaseRecommender for NextItemRecommender<'_> {
    fn recommend(&self, events: &[InteractionEvent], features: &ConsumerFeatures, k: usize) -> Result<Vec<Sku>> {
        if events.is_empty() {
            return Err(Error::invalid("cannot recommend from an empty history"));
        }
        let seq = self.space().tokenize(&self.model.config, self.catalog, events, features)?;
        let logits = self.model.last_position_logits(&seq)?;
        Ok(top_k_indices(&logits, k)
            .into_iter()
            .map(|i| self.catalog.item(i).sku.clone())
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Base,
    Replace,
    Backfill,
    Interleave,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::Base, Approach::Replace, Approach::Backfill, Approach::Interleave];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Base => "base",
            Approach::Replace => "replace",
            Approach::Backfill => "backfill",
            Approach::Interleave => "interleave",
        }
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown approach `{s}`")))
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which history positions backfilling replaces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackfillPositions {
    #[default]
    Uniform,
    OldestFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecConfig {
    pub approach: Approach,
    pub backfill_fraction: f64,
    pub backfill_positions: BackfillPositions,
    pub k: usize,
    pub seed: u64,
}

impl Default for RecConfig {
    fn default() -> Self {
        RecConfig {
            approach: Approach::Backfill,
            backfill_fraction: 0.2,
            backfill_positions: BackfillPositions::Uniform,
            k: 10,
            seed: 0,
        }
    }
}

impl RecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.backfill_fraction) {
            return Err(Error::Config(format!(
                "backfill_fraction = {} must lie in [0, 1]",
                self.backfill_fraction
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// The first `k` representative items.
pub fn recommend_replace(rep: &[RepItem], k: usize) -> Vec<Sku> {
    let mut seen = HashSet::new();
    rep.iter()
        .filter(|r| seen.insert(&r.sku))
        .take(k)
        .map(|r| r.sku.clone())
        .collect()
}

/// Number of positions replaced when backfilling `n` events.
pub fn backfill_count(n: usize, fraction: f64) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// `events` with `⌈fraction·n⌉` positions replaced by representative items
/// sampled in proportion to popularity (uniformly when all are zero).
pub fn backfill_history(
    events: &[InteractionEvent],
    rep: &[RepItem],
    fraction: f64,
    positions: BackfillPositions,
    rng: &mut impl Rng,
) -> Result<Vec<InteractionEvent>> {
    let n = events.len();
    let m = backfill_count(n, fraction);
    let mut out = events.to_vec();
    if m == 0 {
        return Ok(out);
    }
    if rep.is_empty() {
        return Err(Error::invalid("backfilling needs representative items"));
    }
    let idx: Vec<usize> = match positions {
        BackfillPositions::Uniform => index::sample(rng, n, m).into_vec(),
        BackfillPositions::OldestFirst => (0..m).collect(),
    };
    let total: usize = rep.iter().map(|r| r.popularity).sum();
    let weights: Vec<f64> = rep
        .iter()
        .map(|r| if total == 0 { 1.0 } else { r.popularity as f64 })
        .collect();
    let sampler = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
    for i in idx {
        let e = &mut out[i];
        e.sku = rep[sampler.sample(rng)].sku.clone();
        e.action = Action::Click;
        e.followed = false;
    }
    Ok(out)
}

/// Base recommendations for a history partly backfilled with segment items.
pub fn recommend_backfill(
    consumer_id: &ConsumerId,
    events: &[InteractionEvent],
    features: &ConsumerFeatures,
    rep: &[RepItem],
    base: &dyn BaseRecommender,
    config: &RecConfig,
) -> Result<Vec<Sku>> {
    config.validate()?;
    if events.is_empty() {
        return Err(Error::invalid(format!("consumer {consumer_id} has an empty history")));
    }
    let mut rng = seed::rng_for(config.seed, &format!("backfill:{consumer_id}"));
    let input = backfill_history(events, rep, config.backfill_fraction, config.backfill_positions, &mut rng)?;
    base.recommend(&input, features, config.k)
}

/// Alternates base and representative items, starting with base, skipping
/// duplicates; once one list runs out the other continues. Truncated to `k`.
pub fn recommend_interleave(base_recs: &[Sku], rep: &[RepItem], k: usize) -> Vec<Sku> {
    let mut out = Vec::with_capacity(k);
    let mut seen = HashSet::new();
    let mut a = base_recs.iter();
    let mut b = rep.iter().map(|r| &r.sku);
    let mut from_base = true;
    while out.len() < k {
        let next = if from_base {
            a.next().or_else(|| b.next())
        } else {
            b.next().or_else(|| a.next())
        };
        let Some(s) = next else { break };
        if seen.insert(s) {
            out.push(s.clone());
        }
        from_base = !from_base;
    }
    out
}

/// Recommendations of one approach for one consumer.
pub fn recommend(
    consumer_id: &ConsumerId,
    events: &[InteractionEvent],
    features: &ConsumerFeatures,
    rep: &[RepItem],
    base: &dyn BaseRecommender,
    config: &RecConfig,
) -> Result<Vec<Sku>> {
    config.validate()?;
    match config.approach {
        Approach::Base => base.recommend(events, features, config.k),
        Approach::Replace => Ok(recommend_replace(rep, config.k)),
        Approach::Backfill => recommend_backfill(consumer_id, events, features, rep, base, config),
        Approach::Interleave => Ok(recommend_interleave(&base.recommend(events, features, config.k)?, rep, config.k)),
    }
}

/// Splits a history into model input and the SKUs clicked in the last
/// `holdout` events.
pub fn holdout_split(events: &[InteractionEvent], holdout: usize) -> (Vec<InteractionEvent>, HashSet<Sku>) {
    let cut = events.len().saturating_sub(holdout);
    let held = events[cut..]
        .iter()
        .filter(|e| e.action == Action::Click)
        .map(|e| e.sku.clone())
        .collect();
    (events[..cut].to_vec(), held)
}

/// One consumer's offline evaluation input.
#[derive(Clone, Debug)]
pub struct EvalCase<'a> {
    pub consumer_id: ConsumerId,
    pub events: Vec<InteractionEvent>,
    pub features: ConsumerFeatures,
    pub held_out: HashSet<Sku>,
    pub rep: &'a [RepItem],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproachReport {
    pub approach: Approach,
    pub n_consumers: usize,
    pub ndcg: f64,
    pub overlap: f64,
    pub brand_diversity: f64,
    pub commodity_group_diversity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecRow {
    pub consumer_id: ConsumerId,
    pub approach: Approach,
    pub rank: usize,
    pub sku: Sku,
}

pub fn rec_rows(consumer_id: &ConsumerId, approach: Approach, recs: &[Sku]) -> Vec<RecRow> {
    recs.iter()
        .enumerate()
        .map(|(i, sku)| RecRow {
            consumer_id: consumer_id.clone(),
            approach,
            rank: i + 1,
            sku: sku.clone(),
        })
        .collect()
}

/// Mean nDCG@k (relevance 1 for held-out clicks), overlap coefficient with
/// the held-out clicks and brand / commodity-group diversity per approach.
/// Consumers without held-out clicks or input events are skipped.
pub fn evaluate_approaches(
    cases: &[EvalCase<'_>],
    approaches: &[Approach],
    base: &dyn BaseRecommender,
    config: &RecConfig,
    catalog: &Catalog,
) -> Result<Vec<ApproachReport>> {
    config.validate()?;
    let usable: Vec<&EvalCase> = cases
        .iter()
        .filter(|c| !c.held_out.is_empty() && !c.events.is_empty())
        .collect();
    let mut out = Vec::with_capacity(approaches.len());
    for &approach in approaches {
        let cfg = RecConfig {
            approach,
            ..config.clone()
        };
        let (mut ndcg, mut overlap, mut brand, mut group) = (0.0, 0.0, 0.0, 0.0);
        let mut n = 0usize;
        for case in &usable {
            let recs = recommend(&case.consumer_id, &case.events, &case.features, case.rep, base, &cfg)?;
            if recs.is_empty() {
                continue;
            }
            let relevance: HashMap<Sku, f64> = case.held_out.iter().map(|s| (s.clone(), 1.0)).collect();
            ndcg += metrics::ndcg(&recs, &relevance, cfg.k)?;
            let set: HashSet<Sku> = recs.iter().cloned().collect();
            overlap += metrics::overlap_coefficient(&set, &case.held_out)?;
            brand += metrics::diversity(&recs, Attribute::Brand, catalog)?;
            group += metrics::diversity(&recs, Attribute::CommodityGroup, catalog)?;
            n += 1;
        }
        let d = n.max(1) as f64;
        out.push(ApproachReport {
            approach,
            n_consumers: n,
            ndcg: ndcg / d,
            overlap: overlap / d,
            brand_diversity: brand / d,
            commodity_group_diversity: group / d,
        });
    }
    Ok(out)
}

pub fn write_recs(path: &Path, rows: &[RecRow]) -> Result<()> {
    io::write_csv(path, rows)
}

pub fn write_eval_report(path: &Path, rows: &[ApproachReport]) -> Result<()> {
    io::write_csv(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{event, history, simple_catalog};
    use proptest::prelude::*;

    fn rep(skus: &[&str]) -> Vec<RepItem> {
        skus.iter()
            .enumerate()
            .map(|(i, s)| RepItem {
                sku: (*s).into(),
                popularity: 10 - i,
            })
            .collect()
    }

    fn skus(v: &[Sku]) -> Vec<&str> {
        v.iter().map(|s| s.as_str()).collect()
    }

    fn features() -> ConsumerFeatures {
        ConsumerFeatures {
            gender_preference: "female".into(),
            age_segment: "25-34".into(),
            sales_channel: "app".into(),
        }
    }

    /// Most recent distinct SKUs first, then the rest of the catalog.
    struct RecencyBase(Catalog);

    impl BaseRecommender for RecencyBase {
        fn recommend(&self, events: &[InteractionEvent], _: &ConsumerFeatures, k: usize) -> Result<Vec<Sku>> {
            let mut seen = HashSet::new();
            Ok(events
                .iter()
                .rev()
                .map(|e| e.sku.clone())
                .chain(self.0.items().iter().map(|i| i.sku.clone()))
                .filter(|s| seen.insert(s.clone()))
                .take(k)
                .collect())
        }
    }

    #[test]
    fn replace_is_a_prefix() {
        let r = rep(&["S0", "S1", "S2", "S3", "S4"]);
        assert_eq!(skus(&recommend_replace(&r, 3)), ["S0", "S1", "S2"]);
        assert_eq!(recommend_replace(&r, 10).len(), 5);
        let base = RecencyBase(simple_catalog());
        let cfg = RecConfig {
            approach: Approach::Replace,
            k: 3,
            ..Default::default()
        };
        let a = recommend(&"a".into(), &history("a", &["S5"]).events, &features(), &r, &base, &cfg).unwrap();
        let b = recommend(&"b".into(), &history("b", &["S2", "S1"]).events, &features(), &r, &base, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backfill_count_uses_ceiling() {
        assert_eq!(backfill_count(10, 0.2), 2);
        assert_eq!(backfill_count(10, 0.3), 3);
        assert_eq!(backfill_count(11, 0.2), 3);
        assert_eq!(backfill_count(10, 0.0), 0);
        assert_eq!(backfill_count(10, 1.0), 10);
    }

    #[test]
    fn backfill_replaces_exact_positions() {
        let h = history("a", &["S0", "S0", "S0", "S0", "S0", "S0", "S0", "S0", "S0", "S0"]);
        let r = rep(&["S5"]);
        let mut rng = seed::rng(1);
        let out = backfill_history(&h.events, &r, 0.2, BackfillPositions::Uniform, &mut rng).unwrap();
        assert_eq!(out.iter().filter(|e| e.sku.as_str() == "S5").count(), 2);
        let ts: Vec<i64> = out.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, h.events.iter().map(|e| e.timestamp).collect::<Vec<_>>());
        let out = backfill_history(&h.events, &r, 0.2, BackfillPositions::OldestFirst, &mut rng).unwrap();
        assert_eq!(skus(&out.iter().map(|e| e.sku.clone()).collect::<Vec<_>>())[..3], ["S5", "S5", "S0"]);
        let all = backfill_history(&h.events, &rep(&["S4", "S5"]), 1.0, BackfillPositions::Uniform, &mut rng).unwrap();
        assert!(all.iter().all(|e| e.sku.as_str() == "S4" || e.sku.as_str() == "S5"));
    }

    #[test]
    fn backfill_samples_by_popularity() {
        let h = history("a", &["S0"; 1]);
        let r = vec![
            RepItem { sku: "S1".into(), popularity: 3 },
            RepItem { sku: "S2".into(), popularity: 1 },
            RepItem { sku: "S3".into(), popularity: 0 },
        ];
        let mut rng = seed::rng(2);
        let mut counts = HashMap::new();
        for _ in 0..4000 {
            let out = backfill_history(&h.events, &r, 1.0, BackfillPositions::Uniform, &mut rng).unwrap();
            *counts.entry(out[0].sku.clone()).or_insert(0usize) += 1;
        }
        let share = counts[&Sku::from("S1")] as f64 / 4000.0;
        assert!((share - 0.75).abs() < 0.03, "{share}");
        assert!(!counts.contains_key(&Sku::from("S3")));
    }

    #[test]
    fn backfill_zero_is_identical_to_base() {
        let base = RecencyBase(simple_catalog());
        let cfg = RecConfig {
            backfill_fraction: 0.0,
            k: 4,
            ..Default::default()
        };
        let h = history("a", &["S1", "S4", "S2"]);
        let out = recommend_backfill(&"a".into(), &h.events, &features(), &rep(&["S5"]), &base, &cfg).unwrap();
        assert_eq!(out, base.recommend(&h.events, &features(), 4).unwrap());
    }

    #[test]
    fn backfill_is_seeded_per_consumer() {
        let base = RecencyBase(simple_catalog());
        let cfg = RecConfig {
            backfill_fraction: 0.5,
            k: 6,
            seed: 9,
            ..Default::default()
        };
        let h = history("a", &["S0", "S1", "S2", "S3", "S4", "S0", "S1", "S2"]);
        let r = rep(&["S5", "S3"]);
        let a = recommend_backfill(&"a".into(), &h.events, &features(), &r, &base, &cfg).unwrap();
        let b = recommend_backfill(&"a".into(), &h.events, &features(), &r, &base, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(recommend_backfill(&"a".into(), &[], &features(), &r, &base, &cfg).is_err());
    }

    #[test]
    fn interleave_examples() {
        let base: Vec<Sku> = vec!["A".into(), "B".into()];
        assert_eq!(skus(&recommend_interleave(&base, &rep(&["X", "Y"]), 4)), ["A", "X", "B", "Y"]);
        assert_eq!(skus(&recommend_interleave(&base, &rep(&["A", "Y"]), 4)), ["A", "B", "Y"]);
        assert_eq!(skus(&recommend_interleave(&base, &[], 1)), ["A"]);
        assert_eq!(skus(&recommend_interleave(&base, &[], 5)), ["A", "B"]);
        assert_eq!(skus(&recommend_interleave(&base, &rep(&["X", "Y", "Z"]), 10)), ["A", "X", "B", "Y", "Z"]);
    }

    proptest! {
        #[test]
        fn interleave_is_duplicate_free_and_order_preserving(
            a in prop::collection::vec(0u8..12, 0..10),
            b in prop::collection::vec(0u8..12, 0..10),
            k in 1usize..15,
        ) {
            let mut seen = HashSet::new();
            let base: Vec<Sku> = a.iter().filter(|x| seen.insert(**x)).map(|x| Sku(format!("s{x}"))).collect();
            let mut seen = HashSet::new();
            let r: Vec<RepItem> = b.iter().filter(|x| seen.insert(**x)).map(|x| RepItem { sku: Sku(format!("s{x}")), popularity: 1 }).collect();
            let out = recommend_interleave(&base, &r, k);
            prop_assert!(out.len() <= k);
            let uniq: HashSet<&Sku> = out.iter().collect();
            prop_assert_eq!(uniq.len(), out.len());
            let pos = |s: &Sku| out.iter().position(|x| x == s);
            if !base.iter().any(|s| r.iter().any(|x| &x.sku == s)) {
                for list in [base.clone(), r.iter().map(|x| x.sku.clone()).collect::<Vec<_>>()] {
                    let ps: Vec<usize> = list.iter().filter_map(pos).collect();
                    prop_assert!(ps.windows(2).all(|w| w[0] < w[1]));
                }
            }
            let full: HashSet<&Sku> = base.iter().chain(r.iter().map(|x| &x.sku)).collect();
            prop_assert_eq!(out.len(), k.min(full.len()));
        }
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k_indices(&[0.1, 0.5, 0.5, 0.2], 3), [1, 2, 3]);
    }

    #[test]
    fn holdout_split_keeps_clicks() {
        let mut h = history("a", &["S0", "S1", "S2", "S3"]);
        h.events[3].action = Action::Checkout;
        let (input, held) = holdout_split(&h.events, 2);
        assert_eq!(input.len(), 2);
        assert_eq!(held, [Sku::from("S2")].into());
    }

    #[test]
    fn evaluation_report() {
        let catalog = simple_catalog();
        let base = RecencyBase(catalog.clone());
        let r = rep(&["S3", "S4", "S5"]);
        let cases: Vec<EvalCase> = (0..4)
            .map(|i| {
                let id = format!("c{i}");
                EvalCase {
                    consumer_id: id.as_str().into(),
                    events: vec![event(&id, "S0", 1, Action::Click), event(&id, "S1", 2, Action::Click)],
                    features: features(),
                    held_out: [Sku::from("S1"), Sku::from("S0")].into(),
                    rep: &r,
                }
            })
            .collect();
        let cfg = RecConfig {
            k: 3,
            ..Default::default()
        };
        let report = evaluate_approaches(&cases, &Approach::ALL, &base, &cfg, &catalog).unwrap();
        assert_eq!(report.len(), 4);
        let by = |a: Approach| report.iter().find(|r| r.approach == a).unwrap();
        assert_eq!(by(Approach::Replace).ndcg, 0.0);
        assert!((by(Approach::Base).ndcg - 1.0).abs() < 1e-12);
        assert!(by(Approach::Backfill).ndcg >= by(Approach::Replace).ndcg);
        let rep_skus: Vec<Sku> = r.iter().map(|x| x.sku.clone()).collect();
        let expected = metrics::diversity(&rep_skus, Attribute::Brand, &catalog).unwrap();
        assert!((by(Approach::Replace).brand_diversity - expected).abs() < 1e-15);
        assert!(report.iter().all(|r| r.n_consumers == 4));
    }

    #[test]
    fn recs_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RECS_FILE);
        write_recs(&path, &rec_rows(&"c1".into(), Approach::Interleave, &["S1".into(), "S2".into()])).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "consumer_id,approach,rank,sku\nc1,interleave,1,S1\nc1,interleave,2,S2\n"
        );
    }
}
