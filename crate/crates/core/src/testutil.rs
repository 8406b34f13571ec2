use crate::domain::{
    Action, Attribute, Catalog, CatalogItem, ConsumerHistory, InteractionEvent, Vocabularies, Vocabulary,
};

/// Six items; S5 shares no style attribute with S0.
pub fn simple_catalog() -> Catalog {
    let vocab = Vocabularies::new()
        .with(Attribute::Brand, Vocabulary::new(["b0", "b1", "b2", "b3"]).unwrap())
        .with(Attribute::Color, Vocabulary::new(["red", "blue", "green"]).unwrap())
        .with(Attribute::Silhouette, Vocabulary::new(["dress", "shoe", "coat", "bag"]).unwrap())
        .with(
            Attribute::CommodityGroup,
            Vocabulary::new(["tops", "shoes", "outer", "accessories"]).unwrap(),
        )
        .with(Attribute::Material, Vocabulary::new(["cotton", "leather"]).unwrap())
        .with(Attribute::SeasonCode, Vocabulary::new(["ss", "aw"]).unwrap())
        .with(Attribute::Tag, Vocabulary::new(["basic", "trend"]).unwrap());
    let rows = [
        ("S0", "b0", "red", "dress", "tops", "female", false),
        ("S1", "b0", "red", "dress", "tops", "female", false),
        ("S2", "b1", "blue", "shoe", "shoes", "male", false),
        ("S3", "b2", "red", "dress", "tops", "female", true),
        ("S4", "b1", "blue", "coat", "outer", "unisex", false),
        ("S5", "b3", "green", "bag", "accessories", "male", true),
    ];
    let items = rows
        .iter()
        .enumerate()
        .map(|(i, (sku, brand, color, sil, cg, gender, designer))| CatalogItem {
            sku: (*sku).into(),
            brand: (*brand).into(),
            color: (*color).into(),
            silhouette: (*sil).into(),
            commodity_group: (*cg).into(),
            material: if i % 2 == 0 { "cotton" } else { "leather" }.into(),
            season_code: if i < 3 { "ss" } else { "aw" }.into(),
            tag: "basic".into(),
            price: 10.0 * (i + 1) as f64,
            is_designer: *designer,
            gender: (*gender).into(),
            style_relevant: *sil != "bag",
        })
        .collect();
    Catalog::new(vocab, items)
}

pub fn event(consumer: &str, sku: &str, ts: i64, action: Action) -> InteractionEvent {
    InteractionEvent {
        consumer_id: consumer.into(),
        timestamp: ts,
        action,
        sku: sku.into(),
        followed: false,
    }
}

/// Click history with timestamps 1000, 2000, ...
pub fn history(consumer: &str, skus: &[&str]) -> ConsumerHistory {
    let events = skus
        .iter()
        .enumerate()
        .map(|(i, s)| event(consumer, s, 1000 * (i as i64 + 1), Action::Click))
        .collect();
    ConsumerHistory::new(consumer.into(), events)
}
