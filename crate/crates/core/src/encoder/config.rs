use serde::{Deserialize, Serialize};

use crate::domain::Attribute;
use crate::error::{Error, Result};

/// Categorical token features, each backed by its own embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatFeature {
    Sku,
    Brand,
    Color,
    Silhouette,
    CommodityGroup,
    Material,
    SeasonCode,
    Tag,
    Gender,
    Designer,
    Followed,
    Action,
}

impl CatFeature {
    pub fn as_str(self) -> &'static str {
        match self {
            CatFeature::Sku => "sku",
            CatFeature::Brand => "brand",
            CatFeature::Color => "color",
            CatFeature::Silhouette => "silhouette",
            CatFeature::CommodityGroup => "commodity_group",
            CatFeature::Material => "material",
            CatFeature::SeasonCode => "season_code",
            CatFeature::Tag => "tag",
            CatFeature::Gender => "gender",
            CatFeature::Designer => "designer",
            CatFeature::Followed => "followed",
            CatFeature::Action => "action",
        }
    }

    pub fn attribute(self) -> Option<Attribute> {
        Some(match self {
            CatFeature::Brand => Attribute::Brand,
            CatFeature::Color => Attribute::Color,
            CatFeature::Silhouette => Attribute::Silhouette,
            CatFeature::CommodityGroup => Attribute::CommodityGroup,
            CatFeature::Material => Attribute::Material,
            CatFeature::SeasonCode => Attribute::SeasonCode,
            CatFeature::Tag => Attribute::Tag,
            CatFeature::Gender => Attribute::Gender,
            _ => return None,
        })
    }

    /// Item features used by the next-item model.
    pub fn style_set() -> Vec<CatFeature> {
        vec![
            CatFeature::Sku,
            CatFeature::Brand,
            CatFeature::Color,
            CatFeature::Silhouette,
            CatFeature::CommodityGroup,
            CatFeature::Material,
            CatFeature::SeasonCode,
            CatFeature::Tag,
            CatFeature::Gender,
            CatFeature::Action,
        ]
    }

    /// Item features used by the lookalike classifier.
    pub fn lookalike_set() -> Vec<CatFeature> {
        vec![
            CatFeature::Brand,
            CatFeature::SeasonCode,
            CatFeature::Silhouette,
            CatFeature::Tag,
            CatFeature::Material,
            CatFeature::Designer,
            CatFeature::Followed,
            CatFeature::Action,
        ]
    }
}

/// How unit-interval numeric features (price, timestamp) become vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericEncoding {
    /// Value times one trainable vector.
    #[default]
    ScaledEmbedding,
    /// Piecewise-linear bin saturations times a trainable bin matrix.
    PiecewiseLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Maximum number of event tokens; one extra slot holds the CLS token.
    pub max_seq_len: usize,
    pub cat_features: Vec<CatFeature>,
    pub use_price: bool,
    pub use_timestamp: bool,
    /// Learned absolute positional embeddings.
    pub use_position: bool,
    pub numeric_encoding: NumericEncoding,
    pub ple_bins: usize,
    pub class_weighting: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            max_seq_len: 100,
            cat_features: CatFeature::style_set(),
            use_price: true,
            use_timestamp: true,
            use_position: true,
            numeric_encoding: NumericEncoding::ScaledEmbedding,
            ple_bins: 16,
            class_weighting: false,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Next-item model: style attributes, SKU ids and positional embeddings.
    pub fn next_item(seed: u64) -> Self {
        EncoderConfig {
            seed,
            ..Default::default()
        }
    }

    /// Lookalike classifier: no positional embeddings, the timestamp is the
    /// only order signal.
    pub fn lookalike(seed: u64) -> Self {
        EncoderConfig {
            cat_features: CatFeature::lookalike_set(),
            use_position: false,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be >= 2".into()));
        }
        if self.n_layers > 0 && self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.numeric_encoding == NumericEncoding::PiecewiseLinear && self.ple_bins == 0 {
            return Err(Error::Config("ple_bins must be positive".into()));
        }
        let mut seen = self.cat_features.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.cat_features.len() {
            return Err(Error::Config("duplicate categorical feature".into()));
        }
        Ok(())
    }

    /// True when the classifier path carries any notion of event order.
    pub fn has_order_signal(&self) -> bool {
        self.use_position || self.use_timestamp
    }
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seed for batch order and dropout masks.
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}
