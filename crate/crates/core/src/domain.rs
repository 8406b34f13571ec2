//! Core data model shared by every pipeline stage.
//!
//! Catalog vocabularies are declared up front so that embedding-table indices
//! stay stable across runs. Timestamps are integer epoch seconds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = i64;

pub const SECONDS_PER_DAY: i64 = 86_400;

pub fn days(n: i64) -> i64 {
    n * SECONDS_PER_DAY
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

string_id!(Sku);
string_id!(ConsumerId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Click,
    AddToCart,
    AddToWishlist,
    Checkout,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Click,
        Action::AddToCart,
        Action::AddToWishlist,
        Action::Checkout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Click => "click",
            Action::AddToCart => "add_to_cart",
            Action::AddToWishlist => "add_to_wishlist",
            Action::Checkout => "checkout",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// High-intent interaction; clicks are not significant.
    pub fn is_significant(self) -> bool {
        !matches!(self, Action::Click)
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown action `{s}`")))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Categorical item attributes with declared vocabularies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Brand,
    Color,
    Silhouette,
    CommodityGroup,
    Material,
    SeasonCode,
    Tag,
    Gender,
}

impl Attribute {
    pub const ALL: [Attribute; 8] = [
        Attribute::Brand,
        Attribute::Color,
        Attribute::Silhouette,
        Attribute::CommodityGroup,
        Attribute::Material,
        Attribute::SeasonCode,
        Attribute::Tag,
        Attribute::Gender,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Brand => "brand",
            Attribute::Color => "color",
            Attribute::Silhouette => "silhouette",
            Attribute::CommodityGroup => "commodity_group",
            Attribute::Material => "material",
            Attribute::SeasonCode => "season_code",
            Attribute::Tag => "tag",
            Attribute::Gender => "gender",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attribute `{s}`")))
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const GENDERS: [&str; 3] = ["female", "male", "unisex"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub sku: Sku,
    pub brand: String,
    pub color: String,
    pub silhouette: String,
    pub commodity_group: String,
    pub material: String,
    pub season_code: String,
    pub tag: String,
    pub price: f64,
    pub is_designer: bool,
    pub gender: String,
    pub style_relevant: bool,
}

impl CatalogItem {
    pub fn attribute(&self, attr: Attribute) -> &str {
        match attr {
            Attribute::Brand => &self.brand,
            Attribute::Color => &self.color,
            Attribute::Silhouette => &self.silhouette,
            Attribute::CommodityGroup => &self.commodity_group,
            Attribute::Material => &self.material,
            Attribute::SeasonCode => &self.season_code,
            Attribute::Tag => &self.tag,
            Attribute::Gender => &self.gender,
        }
    }
}

/// Ordered value list for one attribute; position is the embedding index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new<I, S>(values: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for v in values {
            let v = v.into();
            if vocab.index.contains_key(&v) {
                return Err(Error::invalid(format!("duplicate vocabulary value `{v}`")));
            }
            vocab.index.insert(v.clone(), vocab.values.len() as u32);
            vocab.values.push(v);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, value: &str) -> Option<u32> {
        self.index.get(value).copied()
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabularies {
    by_attr: BTreeMap<Attribute, Vocabulary>,
}

impl Vocabularies {
    pub fn new() -> Self {
        let mut v = Vocabularies::default();
        v.by_attr.insert(
            Attribute::Gender,
            Vocabulary::new(GENDERS).expect("static genders are unique"),
        );
        v
    }

    pub fn with(mut self, attr: Attribute, vocab: Vocabulary) -> Self {
        self.by_attr.insert(attr, vocab);
        self
    }

    pub fn set(&mut self, attr: Attribute, vocab: Vocabulary) {
        self.by_attr.insert(attr, vocab);
    }

    pub fn get(&self, attr: Attribute) -> Option<&Vocabulary> {
        self.by_attr.get(&attr)
    }

    /// Vocabulary size, zero when undeclared.
    pub fn size(&self, attr: Attribute) -> usize {
        self.get(attr).map_or(0, Vocabulary::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Attribute, &Vocabulary)> {
        self.by_attr.iter().map(|(a, v)| (*a, v))
    }
}

/// A set of items with declared attribute vocabularies.
///
/// Construction never fails on content problems; use [`validate_catalog`] to
/// obtain findings. Lookups by SKU resolve to the first occurrence.
#[derive(Clone, Debug)]
pub struct Catalog {
    vocab: Vocabularies,
    items: Vec<CatalogItem>,
    index: HashMap<Sku, usize>,
    codes: Vec<[Option<u32>; 8]>,
}

impl Catalog {
    pub fn new(vocab: Vocabularies, items: Vec<CatalogItem>) -> Self {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            index.entry(item.sku.clone()).or_insert(i);
        }
        let codes = items
            .iter()
            .map(|item| {
                let mut c = [None; 8];
                for attr in Attribute::ALL {
                    c[attr.index()] = vocab.get(attr).and_then(|v| v.get(item.attribute(attr)));
                }
                c
            })
            .collect();
        Catalog {
            vocab,
            items,
            index,
            codes,
        }
    }

    pub fn vocab(&self) -> &Vocabularies {
        &self.vocab
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, sku: &Sku) -> Option<usize> {
        self.index.get(sku).copied()
    }

    pub fn get(&self, sku: &Sku) -> Option<&CatalogItem> {
        self.position(sku).map(|i| &self.items[i])
    }

    pub fn item(&self, idx: usize) -> &CatalogItem {
        &self.items[idx]
    }

    /// Vocabulary index of an item attribute.
    pub fn code(&self, idx: usize, attr: Attribute) -> Result<u32> {
        self.codes[idx][attr.index()].ok_or_else(|| Error::OutOfVocabulary {
            feature: attr.as_str().to_string(),
            value: self.items[idx].attribute(attr).to_string(),
        })
    }

    pub fn designer_brands(&self) -> BTreeSet<&str> {
        self.items
            .iter()
            .filter(|i| i.is_designer)
            .map(|i| i.brand.as_str())
            .collect()
    }

    pub fn is_designer(&self, sku: &Sku) -> bool {
        self.get(sku).is_some_and(|i| i.is_designer)
    }
}

/// Raw timestamp as it appears on disk: epoch seconds or ISO-8601 text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawTimestamp {
    Epoch(i64),
    Text(String),
}

impl RawTimestamp {
    pub fn to_epoch(&self) -> Option<Timestamp> {
        match self {
            RawTimestamp::Epoch(t) => Some(*t),
            RawTimestamp::Text(s) => parse_iso8601(s),
        }
    }
}

pub fn parse_iso8601(s: &str) -> Option<Timestamp> {
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(t.and_utc().timestamp());
    }
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp())
}

/// An event line before validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub consumer_id: String,
    pub timestamp: RawTimestamp,
    pub action: String,
    pub sku: String,
    #[serde(default)]
    pub followed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub consumer_id: ConsumerId,
    pub timestamp: Timestamp,
    pub action: Action,
    pub sku: Sku,
    /// Whether the consumer follows the item's brand.
    #[serde(default)]
    pub followed: bool,
}

impl From<&InteractionEvent> for RawEvent {
    fn from(e: &InteractionEvent) -> Self {
        RawEvent {
            consumer_id: e.consumer_id.0.clone(),
            timestamp: RawTimestamp::Epoch(e.timestamp),
            action: e.action.as_str().to_string(),
            sku: e.sku.0.clone(),
            followed: e.followed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumerProfile {
    pub consumer_id: ConsumerId,
    pub gender_preference: String,
    pub age_segment: String,
    pub sales_channel: String,
    pub first_activity_ts: Timestamp,
}

/// Consumer-level features carried by the CLS token.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumerFeatures {
    pub gender_preference: String,
    pub age_segment: String,
    pub sales_channel: String,
}

impl From<&ConsumerProfile> for ConsumerFeatures {
    fn from(p: &ConsumerProfile) -> Self {
        ConsumerFeatures {
            gender_preference: p.gender_preference.clone(),
            age_segment: p.age_segment.clone(),
            sales_channel: p.sales_channel.clone(),
        }
    }
}

/// Time-ordered events of one consumer, optionally restricted to one item gender.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumerHistory {
    pub consumer_id: ConsumerId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_split: Option<String>,
    pub events: Vec<InteractionEvent>,
}

impl ConsumerHistory {
    pub fn new(consumer_id: ConsumerId, mut events: Vec<InteractionEvent>) -> Self {
        sort_events(&mut events);
        ConsumerHistory {
            consumer_id,
            gender_split: None,
            events,
        }
    }

    /// Identifier of this sequence: the consumer id, suffixed with the
    /// gender split when the history was split.
    pub fn sequence_id(&self) -> String {
        match &self.gender_split {
            Some(g) => format!("{}@{}", self.consumer_id, g),
            None => self.consumer_id.0.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Stable sort by timestamp; equal timestamps keep input order.
pub fn sort_events(events: &mut [InteractionEvent]) {
    events.sort_by_key(|e| e.timestamp);
}

/// Groups events by consumer (ordered by consumer id) and sorts each history.
pub fn group_histories(events: impl IntoIterator<Item = InteractionEvent>) -> Vec<ConsumerHistory> {
    let mut by_consumer: BTreeMap<ConsumerId, Vec<InteractionEvent>> = BTreeMap::new();
    for e in events {
        by_consumer.entry(e.consumer_id.clone()).or_default().push(e);
    }
    by_consumer
        .into_iter()
        .map(|(id, events)| ConsumerHistory::new(id, events))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Finding {
    DuplicateSku { sku: String, occurrences: usize },
    OutOfVocabulary { sku: String, attribute: Attribute, value: String },
    NegativePrice { sku: String, price: f64 },
    UnknownSku { line: usize, sku: String },
    UnknownAction { line: usize, action: String },
    BadTimestamp { line: usize, raw: String },
    FirstActivityAfterEvent { consumer_id: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateSku { sku, occurrences } => {
                write!(f, "duplicate sku `{sku}` ({occurrences} occurrences)")
            }
            Finding::OutOfVocabulary { sku, attribute, value } => {
                write!(f, "sku `{sku}`: {attribute} value `{value}` not in vocabulary")
            }
            Finding::NegativePrice { sku, price } => write!(f, "sku `{sku}`: negative price {price}"),
            Finding::UnknownSku { line, sku } => write!(f, "event {line}: unknown sku `{sku}`"),
            Finding::UnknownAction { line, action } => {
                write!(f, "event {line}: unknown action `{action}`")
            }
            Finding::BadTimestamp { line, raw } => write!(f, "event {line}: bad timestamp `{raw}`"),
            Finding::FirstActivityAfterEvent { consumer_id } => {
                write!(f, "consumer `{consumer_id}`: first_activity_ts after earliest event")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn count(&self, pred: impl Fn(&Finding) -> bool) -> usize {
        self.findings.iter().filter(|f| pred(f)).count()
    }

    /// Turns a non-empty report into an error listing the first few findings.
    pub fn into_result(self, what: &str) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        let shown: Vec<String> = self.findings.iter().take(5).map(ToString::to_string).collect();
        Err(Error::invalid(format!(
            "{what}: {} validation finding(s): {}",
            self.findings.len(),
            shown.join("; ")
        )))
    }
}

pub fn validate_catalog(catalog: &Catalog) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut counts: BTreeMap<&Sku, usize> = BTreeMap::new();
    for item in catalog.items() {
        *counts.entry(&item.sku).or_default() += 1;
    }
    for (sku, n) in counts {
        if n > 1 {
            report.findings.push(Finding::DuplicateSku {
                sku: sku.0.clone(),
                occurrences: n,
            });
        }
    }
    for item in catalog.items() {
        for attr in Attribute::ALL {
            let value = item.attribute(attr);
            let known = catalog.vocab().get(attr).is_some_and(|v| v.get(value).is_some());
            if !known {
                report.findings.push(Finding::OutOfVocabulary {
                    sku: item.sku.0.clone(),
                    attribute: attr,
                    value: value.to_string(),
                });
            }
        }
        if !(item.price >= 0.0) {
            report.findings.push(Finding::NegativePrice {
                sku: item.sku.0.clone(),
                price: item.price,
            });
        }
    }
    report
}

pub fn validate_events(events: &[RawEvent], catalog: &Catalog) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (line, e) in events.iter().enumerate() {
        if catalog.position(&Sku(e.sku.clone())).is_none() {
            report.findings.push(Finding::UnknownSku {
                line,
                sku: e.sku.clone(),
            });
        }
        if e.action.parse::<Action>().is_err() {
            report.findings.push(Finding::UnknownAction {
                line,
                action: e.action.clone(),
            });
        }
        match e.timestamp.to_epoch() {
            Some(t) if t > 0 => {}
            _ => report.findings.push(Finding::BadTimestamp {
                line,
                raw: match &e.timestamp {
                    RawTimestamp::Epoch(t) => t.to_string(),
                    RawTimestamp::Text(s) => s.clone(),
                },
            }),
        }
    }
    report
}

/// Checks `first_activity_ts` against each consumer's earliest event.
pub fn validate_profiles(profiles: &[ConsumerProfile], histories: &[ConsumerHistory]) -> ValidationReport {
    let earliest: HashMap<&ConsumerId, Timestamp> = histories
        .iter()
        .filter_map(|h| h.events.first().map(|e| (&h.consumer_id, e.timestamp)))
        .collect();
    let findings = profiles
        .iter()
        .filter(|p| earliest.get(&p.consumer_id).is_some_and(|&t| p.first_activity_ts > t))
        .map(|p| Finding::FirstActivityAfterEvent {
            consumer_id: p.consumer_id.0.clone(),
        })
        .collect();
    ValidationReport { findings }
}

/// Validates and converts raw events.
pub fn ingest_events(raw: &[RawEvent], catalog: &Catalog) -> Result<Vec<InteractionEvent>> {
    validate_events(raw, catalog).into_result("events")?;
    raw.iter()
        .map(|e| {
            Ok(InteractionEvent {
                consumer_id: ConsumerId(e.consumer_id.clone()),
                timestamp: e.timestamp.to_epoch().expect("validated"),
                action: e.action.parse()?,
                sku: Sku(e.sku.clone()),
                followed: e.followed,
            })
        })
        .collect()
}

/// One data-driven segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub segment_id: usize,
    pub members: BTreeSet<String>,
    pub centroid: Vec<f64>,
}

/// Hard assignment of sequences to segments; each member is in exactly one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentAssignment {
    pub segments: Vec<Segment>,
}

impl SegmentAssignment {
    pub fn from_labels(ids: &[String], labels: &[usize], centroids: &[Vec<f64>]) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::invalid("ids and labels differ in length"));
        }
        let mut segments: Vec<Segment> = centroids
            .iter()
            .enumerate()
            .map(|(segment_id, c)| Segment {
                segment_id,
                members: BTreeSet::new(),
                centroid: c.clone(),
            })
            .collect();
        for (id, &label) in ids.iter().zip(labels) {
            let seg = segments
                .get_mut(label)
                .ok_or_else(|| Error::invalid(format!("segment id {label} out of range")))?;
            seg.members.insert(id.clone());
        }
        Ok(SegmentAssignment { segments })
    }

    /// True when member sets are pairwise disjoint and cover `n` ids.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = BTreeSet::new();
        for s in &self.segments {
            for m in &s.members {
                if !seen.insert(m) {
                    return false;
                }
            }
        }
        seen.len() == n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_catalog(items: Vec<CatalogItem>) -> Catalog {
        let vocab = Vocabularies::new()
            .with(Attribute::Brand, Vocabulary::new(["b0", "b1"]).unwrap())
            .with(Attribute::Color, Vocabulary::new(["red"]).unwrap())
            .with(Attribute::Silhouette, Vocabulary::new(["dress", "shoe"]).unwrap())
            .with(Attribute::CommodityGroup, Vocabulary::new(["cg"]).unwrap())
            .with(Attribute::Material, Vocabulary::new(["cotton"]).unwrap())
            .with(Attribute::SeasonCode, Vocabulary::new(["s1"]).unwrap())
            .with(Attribute::Tag, Vocabulary::new(["t"]).unwrap());
        Catalog::new(vocab, items)
    }

    fn item(sku: &str, price: f64) -> CatalogItem {
        CatalogItem {
            sku: sku.into(),
            brand: "b0".into(),
            color: "red".into(),
            silhouette: "dress".into(),
            commodity_group: "cg".into(),
            material: "cotton".into(),
            season_code: "s1".into(),
            tag: "t".into(),
            price,
            is_designer: false,
            gender: "female".into(),
            style_relevant: true,
        }
    }

    fn raw(sku: &str, ts: i64, action: &str) -> RawEvent {
        RawEvent {
            consumer_id: "c1".into(),
            timestamp: RawTimestamp::Epoch(ts),
            action: action.into(),
            sku: sku.into(),
            followed: false,
        }
    }

    #[test]
    fn valid_catalog_has_empty_report() {
        let c = tiny_catalog(vec![item("S1", 10.0), item("S2", 0.0)]);
        assert!(validate_catalog(&c).is_empty());
    }

    #[test]
    fn duplicate_sku_reported_once() {
        let c = tiny_catalog(vec![item("S1", 10.0), item("S1", 12.0), item("S2", 1.0)]);
        let r = validate_catalog(&c);
        assert_eq!(r.len(), 1);
        assert!(matches!(&r.findings[0], Finding::DuplicateSku { sku, .. } if sku == "S1"));
    }

    #[test]
    fn negative_price_reported() {
        let c = tiny_catalog(vec![item("S1", -1.0)]);
        let r = validate_catalog(&c);
        assert_eq!(r.count(|f| matches!(f, Finding::NegativePrice { .. })), 1);
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn out_of_vocabulary_value_reported() {
        let mut it = item("S1", 1.0);
        it.color = "mauve".into();
        let r = validate_catalog(&tiny_catalog(vec![it]));
        assert_eq!(r.len(), 1);
        assert!(matches!(&r.findings[0], Finding::OutOfVocabulary { attribute: Attribute::Color, .. }));
    }

    #[test]
    fn event_validation() {
        let c = tiny_catalog(vec![item("S1", 1.0)]);
        assert!(validate_events(&[raw("S1", 5, "click")], &c).is_empty());

        let r = validate_events(&[raw("S1", 5, "click"), raw("UNKNOWN", 5, "click")], &c);
        assert_eq!(r.len(), 1);
        assert!(matches!(r.findings[0], Finding::UnknownSku { line: 1, .. }));

        let r = validate_events(&[raw("S1", 0, "click")], &c);
        assert_eq!(r.len(), 1);
        assert!(matches!(r.findings[0], Finding::BadTimestamp { .. }));

        let r = validate_events(&[raw("S1", 3, "purchase")], &c);
        assert!(matches!(r.findings[0], Finding::UnknownAction { .. }));
    }

    #[test]
    fn iso_timestamps_are_converted() {
        let c = tiny_catalog(vec![item("S1", 1.0)]);
        let mut e = raw("S1", 0, "checkout");
        e.timestamp = RawTimestamp::Text("2024-01-01T00:00:00Z".into());
        let events = ingest_events(&[e], &c).unwrap();
        assert_eq!(events[0].timestamp, 1_704_067_200);
        assert_eq!(parse_iso8601("2024-01-01"), Some(1_704_067_200));
    }

    #[test]
    fn sorting_is_stable_and_idempotent() {
        let mk = |sku: &str, ts| InteractionEvent {
            consumer_id: "c".into(),
            timestamp: ts,
            action: Action::Click,
            sku: sku.into(),
            followed: false,
        };
        let mut events = vec![mk("a", 3), mk("b", 1), mk("c", 3), mk("d", 1)];
        sort_events(&mut events);
        let order: Vec<_> = events.iter().map(|e| e.sku.0.as_str()).collect();
        assert_eq!(order, ["b", "d", "a", "c"]);
        let once = events.clone();
        sort_events(&mut events);
        assert_eq!(once, events);
    }

    #[test]
    fn assignment_partition() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let a = SegmentAssignment::from_labels(&ids, &[0, 1, 0], &[vec![1.0], vec![-1.0]]).unwrap();
        assert!(a.is_partition(3));
        assert_eq!(a.segments[0].members.len(), 2);
    }

    #[test]
    fn oov_code_names_feature() {
        let mut it = item("S1", 1.0);
        it.material = "silk".into();
        let c = tiny_catalog(vec![it]);
        let err = c.code(0, Attribute::Material).unwrap_err();
        assert!(err.to_string().contains("material"));
    }
}
