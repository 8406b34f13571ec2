//! Synthetic catalogs and consumer histories with planted style prototypes
//! and designer affinity.
//!
//! A prototype is a Zipf-weighted distribution over the catalog items that
//! best match its preferred brands, silhouettes, colors and commodity groups.
//! Each consumer draws a personal item distribution from a Dirichlet centred
//! on its prototype and samples events from it. Core designer consumers mix in
//! designer-brand items and always reach the core threshold; everyone else
//! stays strictly below it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::domain::{
    days, Action, Attribute, Catalog, CatalogItem, ConsumerHistory, ConsumerId, ConsumerProfile, InteractionEvent,
    Sku, Timestamp, Vocabularies, Vocabulary, GENDERS,
};
use crate::error::{Error, Result};
use crate::io::{self, GroundTruthRow};
use crate::seed;

pub const AGE_SEGMENTS: [&str; 4] = ["18-24", "25-34", "35-44", "45+"];
pub const SALES_CHANNELS: [&str; 2] = ["app", "web"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_consumers: usize,
    pub n_skus: usize,
    pub n_prototypes: usize,
    pub n_brands: usize,
    pub n_colors: usize,
    pub n_silhouettes: usize,
    pub n_commodity_groups: usize,
    pub n_materials: usize,
    pub n_season_codes: usize,
    pub n_tags: usize,
    pub designer_brand_fraction: f64,
    pub designer_consumer_fraction: f64,
    pub events_min: usize,
    pub events_max: usize,
    /// Dirichlet concentration of a consumer around its prototype; larger is
    /// more faithful. `inf` reproduces the prototype exactly.
    pub concentration: f64,
    pub items_per_prototype: usize,
    pub zipf_exponent: f64,
    /// Probability that an item's style attribute comes from its style
    /// family's preferred values rather than uniformly from the vocabulary.
    pub style_coherence: f64,
    /// Share of a core consumer's events drawn from designer items.
    pub designer_mix: f64,
    pub min_designer_interactions: usize,
    /// Share of consumers whose whole history lies in the last week.
    pub new_consumer_fraction: f64,
    /// Share of silhouettes marked not style relevant.
    pub irrelevant_silhouette_fraction: f64,
    pub followed_prob: f64,
    /// Probabilities of click, add_to_wishlist, add_to_cart, checkout.
    pub action_probs: [f64; 4],
    /// Reference time; events fall in the `history_days` before it.
    pub now: Timestamp,
    pub history_days: i64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_consumers: 2000,
            n_skus: 1000,
            n_prototypes: 5,
            n_brands: 40,
            n_colors: 12,
            n_silhouettes: 15,
            n_commodity_groups: 8,
            n_materials: 6,
            n_season_codes: 4,
            n_tags: 10,
            designer_brand_fraction: 0.1,
            designer_consumer_fraction: 0.02,
            events_min: 50,
            events_max: 200,
            concentration: 500.0,
            items_per_prototype: 80,
            zipf_exponent: 0.8,
            style_coherence: 0.8,
            designer_mix: 0.3,
            min_designer_interactions: 5,
            new_consumer_fraction: 0.01,
            irrelevant_silhouette_fraction: 0.2,
            followed_prob: 0.1,
            action_probs: [0.70, 0.12, 0.12, 0.06],
            now: 1_700_000_000,
            history_days: 365,
            seed: 0,
        }
    }
}

fn in_open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_consumers", self.n_consumers),
            ("n_skus", self.n_skus),
            ("n_prototypes", self.n_prototypes),
            ("n_brands", self.n_brands),
            ("n_colors", self.n_colors),
            ("n_silhouettes", self.n_silhouettes),
            ("n_commodity_groups", self.n_commodity_groups),
            ("n_materials", self.n_materials),
            ("n_season_codes", self.n_season_codes),
            ("n_tags", self.n_tags),
            ("events_min", self.events_min),
            ("items_per_prototype", self.items_per_prototype),
            ("min_designer_interactions", self.min_designer_interactions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        for (name, v) in [
            ("designer_brand_fraction", self.designer_brand_fraction),
            ("designer_consumer_fraction", self.designer_consumer_fraction),
        ] {
            if !in_open_unit(v) {
                return Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        for (name, v) in [
            ("designer_mix", self.designer_mix),
            ("new_consumer_fraction", self.new_consumer_fraction),
            ("irrelevant_silhouette_fraction", self.irrelevant_silhouette_fraction),
            ("followed_prob", self.followed_prob),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        for (name, v) in [("style_coherence", self.style_coherence)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        if self.events_max < self.events_min {
            return Err(Error::Config("events_max must be >= events_min".into()));
        }
        if self.events_min < self.min_designer_interactions {
            return Err(Error::Config(
                "events_min must be >= min_designer_interactions so core consumers can qualify".into(),
            ));
        }
        if !(self.concentration > 0.0) || !(self.zipf_exponent >= 0.0) {
            return Err(Error::Config("concentration must be > 0 and zipf_exponent >= 0".into()));
        }
        let total: f64 = self.action_probs.iter().sum();
        if self.action_probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("action_probs must be nonnegative and sum to 1".into()));
        }
        if self.history_days < 8 || self.now <= days(self.history_days) {
            return Err(Error::Config("history_days must be >= 8 and fit before `now`".into()));
        }
        Ok(())
    }

    pub fn n_designer_brands(&self) -> usize {
        ((self.designer_brand_fraction * self.n_brands as f64) - 1e-9).ceil().max(1.0) as usize
    }
}

fn attribute_count(config: &GenConfig, attr: Attribute) -> usize {
    match attr {
        Attribute::Brand => config.n_brands,
        Attribute::Silhouette => config.n_silhouettes,
        Attribute::Color => config.n_colors,
        Attribute::CommodityGroup => config.n_commodity_groups,
        Attribute::Material => config.n_materials,
        Attribute::SeasonCode => config.n_season_codes,
        Attribute::Tag => config.n_tags,
        Attribute::Gender => GENDERS.len(),
    }
}

/// Preferred value indices per style family (one family per prototype) for
/// each of [`PROTOTYPE_ATTRIBUTES`]; disjoint across families while the
/// vocabulary allows.
fn style_slices(config: &GenConfig) -> Vec<Vec<Vec<usize>>> {
    let mut rng = seed::rng_for(config.seed, "styles");
    let mut out = vec![Vec::new(); config.n_prototypes];
    for attr in PROTOTYPE_ATTRIBUTES {
        let n = attribute_count(config, attr);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let per = (n / config.n_prototypes).clamp(1, 3);
        for (p, slice) in out.iter_mut().enumerate() {
            slice.push((0..per).map(|j| order[(p * per + j) % n]).collect());
        }
    }
    out
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("{prefix}_{i:0width$}")).collect()
}

/// Catalog with uniformly random attributes; exactly `ceil(f * n_brands)`
/// designer brands.
pub fn generate_catalog(config: &GenConfig) -> Result<Catalog> {
    config.validate()?;
    let mut rng = seed::rng_for(config.seed, "catalog");
    let brands = names("brand", config.n_brands);
    let colors = names("color", config.n_colors);
    let silhouettes = names("sil", config.n_silhouettes);
    let groups = names("cg", config.n_commodity_groups);
    let materials = names("mat", config.n_materials);
    let seasons = names("season", config.n_season_codes);
    let tags = names("tag", config.n_tags);

    let mut brand_order: Vec<usize> = (0..config.n_brands).collect();
    brand_order.shuffle(&mut rng);
    let designer: Vec<bool> = {
        let mut d = vec![false; config.n_brands];
        for &b in brand_order.iter().take(config.n_designer_brands()) {
            d[b] = true;
        }
        d
    };
    let mut sil_order: Vec<usize> = (0..config.n_silhouettes).collect();
    sil_order.shuffle(&mut rng);
    let n_irrelevant = ((config.irrelevant_silhouette_fraction * config.n_silhouettes as f64).round() as usize)
        .min(config.n_silhouettes - 1);
    let mut relevant = vec![true; config.n_silhouettes];
    for &s in sil_order.iter().take(n_irrelevant) {
        relevant[s] = false;
    }

    let slices = style_slices(config);
    let width = config.n_skus.saturating_sub(1).to_string().len().max(4);
    let items = (0..config.n_skus)
        .map(|i| {
            let family = &slices[rng.gen_range(0..slices.len())];
            let mut pick = |k: usize, n: usize| {
                if rng.gen::<f64>() < config.style_coherence {
                    family[k][rng.gen_range(0..family[k].len())]
                } else {
                    rng.gen_range(0..n)
                }
            };
            let b = pick(0, config.n_brands);
            let b = if i < config.n_brands { brand_order[i] } else { b };
            let s = pick(1, config.n_silhouettes);
            let color = pick(2, config.n_colors);
            let group = pick(3, config.n_commodity_groups);
            let g = rng.gen::<f64>();
            let gender = if g < 0.45 {
                GENDERS[0]
            } else if g < 0.9 {
                GENDERS[1]
            } else {
                GENDERS[2]
            };
            let price = (rng.gen_range(3.0f64..6.5)).exp().round();
            CatalogItem {
                sku: Sku(format!("SKU{i:0width$}")),
                brand: brands[b].clone(),
                color: colors[color].clone(),
                silhouette: silhouettes[s].clone(),
                commodity_group: groups[group].clone(),
                material: materials[rng.gen_range(0..materials.len())].clone(),
                season_code: seasons[rng.gen_range(0..seasons.len())].clone(),
                tag: tags[rng.gen_range(0..tags.len())].clone(),
                price,
                is_designer: designer[b],
                gender: gender.to_string(),
                style_relevant: relevant[s],
            }
        })
        .collect();
    let vocab = Vocabularies::new()
        .with(Attribute::Brand, Vocabulary::new(brands)?)
        .with(Attribute::Color, Vocabulary::new(colors)?)
        .with(Attribute::Silhouette, Vocabulary::new(silhouettes)?)
        .with(Attribute::CommodityGroup, Vocabulary::new(groups)?)
        .with(Attribute::Material, Vocabulary::new(materials)?)
        .with(Attribute::SeasonCode, Vocabulary::new(seasons)?)
        .with(Attribute::Tag, Vocabulary::new(tags)?);
    Ok(Catalog::new(vocab, items))
}

/// Attributes that define a prototype's style.
pub const PROTOTYPE_ATTRIBUTES: [Attribute; 4] = [
    Attribute::Brand,
    Attribute::Silhouette,
    Attribute::Color,
    Attribute::CommodityGroup,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylePrototype {
    pub prototype_id: usize,
    pub gender: String,
    /// `(catalog index, weight)`, weights summing to 1, most popular first.
    pub items: Vec<(usize, f64)>,
    /// Implied distribution of each style attribute.
    pub attribute_dists: BTreeMap<Attribute, BTreeMap<String, f64>>,
    /// Designer items weighted by this prototype's affinity.
    pub designer_items: Vec<(usize, f64)>,
    pub concentration: f64,
}

/// Attribute distributions implied by a weighted item set.
pub fn attribute_dists(
    items: &[(usize, f64)],
    catalog: &Catalog,
    attributes: &[Attribute],
) -> BTreeMap<Attribute, BTreeMap<String, f64>> {
    let total: f64 = items.iter().map(|x| x.1).sum();
    attributes
        .iter()
        .map(|&a| {
            let mut d: BTreeMap<String, f64> = BTreeMap::new();
            for &(i, w) in items {
                *d.entry(catalog.item(i).attribute(a).to_string()).or_insert(0.0) += w / total;
            }
            (a, d)
        })
        .collect()
}

pub fn build_prototypes(config: &GenConfig, catalog: &Catalog) -> Result<Vec<StylePrototype>> {
    config.validate()?;
    if catalog.is_empty() {
        return Err(Error::invalid("empty catalog"));
    }
    let mut prefs: Vec<Vec<Vec<String>>> = Vec::with_capacity(config.n_prototypes);
    for family in style_slices(config) {
        let mut pref = Vec::new();
        for (attr, idx) in PROTOTYPE_ATTRIBUTES.iter().zip(family) {
            let values = catalog.vocab().get(*attr).map(|v| v.values()).unwrap_or(&[]);
            if values.len() != attribute_count(config, *attr) {
                return Err(Error::invalid(format!("catalog {attr} vocabulary does not match the config")));
            }
            pref.push(idx.into_iter().map(|i| values[i].clone()).collect::<Vec<_>>());
        }
        prefs.push(pref);
    }
    let mut out = Vec::with_capacity(config.n_prototypes);
    for (p, pref) in prefs.into_iter().enumerate() {
        let gender = GENDERS[p % 2].to_string();
        let affinity = |item: &CatalogItem| {
            let mut a = 1.0;
            for (attr, values) in PROTOTYPE_ATTRIBUTES.iter().zip(&pref) {
                if !values.iter().any(|v| v == item.attribute(*attr)) {
                    a *= 0.1;
                }
            }
            if item.gender != gender && item.gender != GENDERS[2] {
                a *= 0.05;
            }
            a
        };
        let mut scored: Vec<(usize, f64)> = catalog
            .items()
            .iter()
            .enumerate()
            .map(|(i, it)| (i, affinity(it)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let m = config.items_per_prototype.min(scored.len());
        let mut items: Vec<(usize, f64)> = scored[..m]
            .iter()
            .enumerate()
            .map(|(rank, &(i, _))| (i, 1.0 / ((rank + 1) as f64).powf(config.zipf_exponent)))
            .collect();
        let total: f64 = items.iter().map(|x| x.1).sum();
        items.iter_mut().for_each(|x| x.1 /= total);
        let mut designer_items: Vec<(usize, f64)> = scored
            .iter()
            .filter(|(i, _)| catalog.item(*i).is_designer)
            .copied()
            .collect();
        let dt: f64 = designer_items.iter().map(|x| x.1).sum();
        designer_items.iter_mut().for_each(|x| x.1 /= dt);
        out.push(StylePrototype {
            prototype_id: p,
            gender,
            attribute_dists: attribute_dists(&items, catalog, &PROTOTYPE_ATTRIBUTES),
            items,
            designer_items,
            concentration: config.concentration,
        });
    }
    if out.iter().any(|p| p.designer_items.is_empty()) {
        return Err(Error::invalid("catalog has no designer items"));
    }
    Ok(out)
}

/// A consumer's personal item distribution: Dirichlet around the prototype.
pub fn consumer_item_distribution(proto: &StylePrototype, rng: &mut ChaCha8Rng) -> Vec<(usize, f64)> {
    if proto.concentration.is_infinite() {
        return proto.items.clone();
    }
    let mut draws: Vec<(usize, f64)> = proto
        .items
        .iter()
        .map(|&(i, w)| {
            let g = Gamma::new(proto.concentration * w, 1.0).expect("positive shape");
            (i, g.sample(rng))
        })
        .collect();
    let total: f64 = draws.iter().map(|x| x.1).sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| x.1 /= total);
        draws
    } else {
        proto.items.clone()
    }
}

fn sampler(items: &[(usize, f64)]) -> WeightedIndex<f64> {
    WeightedIndex::new(items.iter().map(|x| x.1)).expect("positive weights")
}

#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub catalog: Catalog,
    pub histories: Vec<ConsumerHistory>,
    pub profiles: Vec<ConsumerProfile>,
    pub ground_truth: Vec<GroundTruthRow>,
    pub prototypes: Vec<StylePrototype>,
}

pub fn consumer_id(i: usize) -> ConsumerId {
    ConsumerId(format!("c{i:06}"))
}

/// Histories, profiles and ground truth for `n_consumers` consumers.
pub fn generate_consumers(
    config: &GenConfig,
    catalog: &Catalog,
) -> Result<(Vec<ConsumerHistory>, Vec<ConsumerProfile>, Vec<GroundTruthRow>)> {
    let prototypes = build_prototypes(config, catalog)?;
    generate_consumers_with(config, catalog, &prototypes)
}

fn generate_consumers_with(
    config: &GenConfig,
    catalog: &Catalog,
    prototypes: &[StylePrototype],
) -> Result<(Vec<ConsumerHistory>, Vec<ConsumerProfile>, Vec<GroundTruthRow>)> {
    let actions = WeightedIndex::new(config.action_probs).map_err(|e| Error::Config(e.to_string()))?;
    let action_of = [Action::Click, Action::AddToWishlist, Action::AddToCart, Action::Checkout];
    let min = config.min_designer_interactions;
    let mut histories = Vec::with_capacity(config.n_consumers);
    let mut profiles = Vec::with_capacity(config.n_consumers);
    let mut truth = Vec::with_capacity(config.n_consumers);
    for c in 0..config.n_consumers {
        let id = consumer_id(c);
        let mut rng = seed::rng_for(config.seed, &format!("consumer:{id}"));
        let proto = &prototypes[rng.gen_range(0..prototypes.len())];
        let is_new = rng.gen::<f64>() < config.new_consumer_fraction;
        let is_core = !is_new && rng.gen::<f64>() < config.designer_consumer_fraction;
        let theta = consumer_item_distribution(proto, &mut rng);
        let theta_sampler = sampler(&theta);
        let designer_sampler = sampler(&proto.designer_items);
        let non_designer: Vec<(usize, f64)> = theta
            .iter()
            .copied()
            .filter(|(i, w)| !catalog.item(*i).is_designer && *w > 0.0)
            .collect();
        let non_designer_sampler = (!non_designer.is_empty()).then(|| sampler(&non_designer));
        let n_events = rng.gen_range(config.events_min..=config.events_max);

        let mut picks: Vec<usize> = Vec::with_capacity(n_events);
        let mut n_designer = 0;
        for _ in 0..n_events {
            let mut item = if is_core && rng.gen::<f64>() < config.designer_mix {
                proto.designer_items[designer_sampler.sample(&mut rng)].0
            } else {
                theta[theta_sampler.sample(&mut rng)].0
            };
            if !is_core && catalog.item(item).is_designer && n_designer + 1 >= min {
                item = match &non_designer_sampler {
                    Some(s) => non_designer[s.sample(&mut rng)].0,
                    None => fallback_non_designer(catalog)?,
                };
            }
            n_designer += catalog.item(item).is_designer as usize;
            picks.push(item);
        }
        if is_core && n_designer < min {
            let mut slots: Vec<usize> = (0..n_events).filter(|&k| !catalog.item(picks[k]).is_designer).collect();
            slots.shuffle(&mut rng);
            for &k in slots.iter().take(min - n_designer) {
                picks[k] = proto.designer_items[designer_sampler.sample(&mut rng)].0;
            }
        }

        let end = config.now;
        let start = if is_new { end - days(6) } else { end - days(config.history_days) + 1 };
        let events: Vec<InteractionEvent> = picks
            .into_iter()
            .map(|item| InteractionEvent {
                consumer_id: id.clone(),
                timestamp: rng.gen_range(start..=end),
                action: action_of[actions.sample(&mut rng)],
                sku: catalog.item(item).sku.clone(),
                followed: rng.gen::<f64>() < config.followed_prob,
            })
            .collect();
        let history = ConsumerHistory::new(id.clone(), events);
        profiles.push(ConsumerProfile {
            consumer_id: id.clone(),
            gender_preference: proto.gender.clone(),
            age_segment: AGE_SEGMENTS[rng.gen_range(0..AGE_SEGMENTS.len())].to_string(),
            sales_channel: SALES_CHANNELS[rng.gen_range(0..SALES_CHANNELS.len())].to_string(),
            first_activity_ts: history.events.first().map_or(end, |e| e.timestamp),
        });
        truth.push(GroundTruthRow {
            consumer_id: id,
            prototype_id: proto.prototype_id,
            is_core_designer: is_core,
        });
        histories.push(history);
    }
    Ok((histories, profiles, truth))
}

fn fallback_non_designer(catalog: &Catalog) -> Result<usize> {
    catalog
        .items()
        .iter()
        .position(|i| !i.is_designer)
        .ok_or_else(|| Error::invalid("catalog has only designer items"))
}

pub fn generate(config: &GenConfig) -> Result<GeneratedData> {
    let catalog = generate_catalog(config)?;
    let prototypes = build_prototypes(config, &catalog)?;
    let (histories, profiles, ground_truth) = generate_consumers_with(config, &catalog, &prototypes)?;
    Ok(GeneratedData {
        catalog,
        histories,
        profiles,
        ground_truth,
        prototypes,
    })
}

pub const CATALOG_FILE: &str = "catalog.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const CONSUMERS_FILE: &str = "consumers.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

/// Writes catalog, events, consumers and ground truth into `dir`.
pub fn write_dataset(dir: &Path, data: &GeneratedData) -> Result<()> {
    io::write_catalog(&dir.join(CATALOG_FILE), &data.catalog)?;
    let events: Vec<InteractionEvent> = data.histories.iter().flat_map(|h| h.events.iter().cloned()).collect();
    io::write_events(&dir.join(EVENTS_FILE), &events)?;
    io::write_profiles(&dir.join(CONSUMERS_FILE), &data.profiles)?;
    io::write_csv(&dir.join(GROUND_TRUTH_FILE), &data.ground_truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_catalog, validate_profiles};
    use crate::metrics::{self, AttributeWeights, StyleProfile};

    fn small() -> GenConfig {
        GenConfig {
            n_consumers: 300,
            n_skus: 400,
            designer_consumer_fraction: 0.1,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn catalog_is_deterministic_and_valid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let a = generate_catalog(&cfg).unwrap();
        let b = generate_catalog(&cfg).unwrap();
        io::write_catalog(&dir.path().join("a.csv"), &a).unwrap();
        io::write_catalog(&dir.path().join("b.csv"), &b).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("a.csv")).unwrap(),
            std::fs::read(dir.path().join("b.csv")).unwrap()
        );
        assert!(validate_catalog(&a).is_empty());
        assert_eq!(a.len(), 400);
    }

    #[test]
    fn designer_brand_count_is_ceiling() {
        let cfg = GenConfig {
            n_skus: 100,
            n_brands: 20,
            designer_brand_fraction: 0.1,
            ..small()
        };
        let cat = generate_catalog(&cfg).unwrap();
        let designer: std::collections::BTreeSet<&str> = cat
            .items()
            .iter()
            .filter(|i| i.is_designer)
            .map(|i| i.brand.as_str())
            .collect();
        assert_eq!(cfg.n_designer_brands(), 2);
        assert_eq!(designer.len(), 2);
        assert_eq!(GenConfig { n_brands: 21, ..cfg.clone() }.n_designer_brands(), 3);
        assert!(matches!(
            generate_catalog(&GenConfig { n_skus: 0, ..cfg }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_fractions_rejected() {
        for cfg in [
            GenConfig { designer_brand_fraction: 0.0, ..small() },
            GenConfig { designer_consumer_fraction: 1.0, ..small() },
            GenConfig { events_min: 10, events_max: 5, ..small() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn prototype_distributions_sum_to_one() {
        let cfg = small();
        let cat = generate_catalog(&cfg).unwrap();
        for p in build_prototypes(&cfg, &cat).unwrap() {
            for d in p.attribute_dists.values() {
                assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!((p.items.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn infinite_concentration_reproduces_prototype() {
        let cfg = GenConfig {
            concentration: f64::INFINITY,
            ..small()
        };
        let cat = generate_catalog(&cfg).unwrap();
        let protos = build_prototypes(&cfg, &cat).unwrap();
        let d1 = consumer_item_distribution(&protos[0], &mut seed::rng(1));
        let d2 = consumer_item_distribution(&protos[0], &mut seed::rng(2));
        let p1 = StyleProfile {
            dists: attribute_dists(&d1, &cat, &PROTOTYPE_ATTRIBUTES),
        };
        let p2 = StyleProfile {
            dists: attribute_dists(&d2, &cat, &PROTOTYPE_ATTRIBUTES),
        };
        assert_eq!(p1, p2);
        let s = metrics::style_similarity_profiles(&p1, &p2, &AttributeWeights::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn core_consumers_meet_rule_and_others_do_not() {
        let cfg = small();
        let data = generate(&cfg).unwrap();
        let cutoff = cfg.now - days(365);
        let mut n_core = 0;
        for (h, t) in data.histories.iter().zip(&data.ground_truth) {
            let designer = h
                .events
                .iter()
                .filter(|e| e.timestamp >= cutoff && e.timestamp <= cfg.now && data.catalog.is_designer(&e.sku))
                .count();
            if t.is_core_designer {
                n_core += 1;
                assert!(designer >= cfg.min_designer_interactions);
            } else {
                assert!(designer < cfg.min_designer_interactions);
            }
        }
        assert!(n_core > 0);
        assert!(validate_profiles(&data.profiles, &data.histories).is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig { n_consumers: 50, ..small() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.histories, b.histories);
    }

    #[test]
    fn empirical_distributions_converge_to_prototype() {
        let cfg = GenConfig {
            n_consumers: 60,
            events_min: 500,
            events_max: 500,
            designer_consumer_fraction: 0.01,
            concentration: 500.0,
            ..small()
        };
        let data = generate(&cfg).unwrap();
        let mut total = 0.0;
        let mut n = 0;
        for (h, t) in data.histories.iter().zip(&data.ground_truth) {
            let proto = &data.prototypes[t.prototype_id];
            for attr in PROTOTYPE_ATTRIBUTES {
                let emp = metrics::attribute_distribution(h, attr, &data.catalog).unwrap().probs;
                let target = &proto.attribute_dists[&attr];
                let keys: std::collections::BTreeSet<&String> = emp.keys().chain(target.keys()).collect();
                let tv: f64 = keys
                    .into_iter()
                    .map(|k| (emp.get(k).unwrap_or(&0.0) - target.get(k).unwrap_or(&0.0)).abs())
                    .sum::<f64>()
                    / 2.0;
                total += tv;
                n += 1;
            }
        }
        let mean_tv = total / n as f64;
        assert!(mean_tv < 0.1, "mean total variation {mean_tv}");
    }

    #[test]
    fn new_consumers_start_within_a_week() {
        let cfg = GenConfig {
            new_consumer_fraction: 0.2,
            n_consumers: 100,
            ..small()
        };
        let data = generate(&cfg).unwrap();
        let recent = data
            .profiles
            .iter()
            .filter(|p| p.first_activity_ts > cfg.now - days(7))
            .count();
        assert!(recent > 0);
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&GenConfig { n_consumers: 20, ..small() }).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let cat = io::read_catalog(&dir.path().join(CATALOG_FILE)).unwrap();
        assert_eq!(cat.items(), data.catalog.items());
        let raw = io::read_raw_events(&dir.path().join(EVENTS_FILE)).unwrap();
        assert_eq!(raw.len(), data.histories.iter().map(|h| h.len()).sum::<usize>());
        let gt: Vec<GroundTruthRow> = io::read_csv(&dir.path().join(GROUND_TRUTH_FILE)).unwrap();
        assert_eq!(gt, data.ground_truth);
    }
}
