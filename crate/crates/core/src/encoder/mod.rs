//! Transformer sequence encoder with a next-item head and a CLS classifier
//! head, trained by hand-derived backpropagation in double precision.

pub mod checkpoint;
pub mod config;
pub mod features;
pub mod gradcheck;
pub mod model;
pub mod train;
pub mod weights;

pub use config::{CatFeature, EncoderConfig, NumericEncoding, TrainParams};
pub use features::{FeatureSpace, Token, TokenSequence};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{AttentionMode, EncoderModel, ForwardOutput, TrainedHeads};
pub use train::{
    class_weights, classifier_loss, next_item_loss, train_classifier, train_next_item, weighted_classifier_loss,
    LabeledTokens, TrainReport,
};
pub use weights::Weights;
