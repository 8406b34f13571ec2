//! Pipeline configuration: one JSON document, overridable from the command
//! line and (for the output directory and thread count) the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use unicon::dataprep::{LookalikeDatasetSpec, Variant};
use unicon::datagen::GenConfig;
use unicon::domain::Timestamp;
use unicon::encoder::{EncoderConfig, TrainParams};
use unicon::lookalike::ModelVariant;
use unicon::recsys::{Approach, RecConfig};
use unicon::seed::derive_seed;
use unicon::segmentation::{KMeansParams, RepItemParams};

use crate::error::{CliError, CliResult};

pub const ENV_OUT_DIR: &str = "UNICON_OUT_DIR";
pub const ENV_THREADS: &str = "UNICON_THREADS";

/// Input file locations; unset paths resolve inside the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub catalog: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub consumers: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleConfig {
    pub variant: Variant,
    pub lookback_days: i64,
    pub encoder: EncoderConfig,
    pub train: TrainParams,
    /// Number of segments written by `cluster`.
    pub k: usize,
    /// Segment counts evaluated by `eval-clusters`.
    pub k_list: Vec<usize>,
    pub kmeans: KMeansParams,
    pub n_pairs: usize,
    pub length_scale_bins: usize,
    pub rep_items: RepItemParams,
}

impl Default for StyleConfig {
    fn default() -> Self {
        StyleConfig {
            variant: Variant::V1,
            lookback_days: 60,
            encoder: EncoderConfig::next_item(0),
            train: TrainParams::default(),
            k: 5,
            k_list: vec![3, 4, 5, 6, 8],
            kmeans: KMeansParams::default(),
            n_pairs: 10_000,
            length_scale_bins: unicon::segmentation::LENGTH_SCALE_BINS,
            rep_items: RepItemParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LookalikeConfig {
    pub dataset: LookalikeDatasetSpec,
    pub encoder: EncoderConfig,
    pub train: TrainParams,
    pub variant: ModelVariant,
    /// Variants trained and compared by `train-lookalike`; empty skips the comparison.
    pub compare: Vec<ModelVariant>,
    pub score_bins: usize,
}

impl Default for LookalikeConfig {
    fn default() -> Self {
        LookalikeConfig {
            dataset: LookalikeDatasetSpec::default(),
            encoder: EncoderConfig::lookalike(0),
            train: TrainParams::default(),
            variant: ModelVariant::ALL[0],
            compare: Vec::new(),
            score_bins: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecSection {
    pub approaches: Vec<Approach>,
    pub backfill_fraction: f64,
    pub backfill_positions: unicon::recsys::BackfillPositions,
    pub k: usize,
    /// Most recent events per consumer held out for `eval-recs`.
    pub holdout_events: usize,
}

impl Default for RecSection {
    fn default() -> Self {
        let rec = RecConfig::default();
        RecSection {
            approaches: Approach::ALL.to_vec(),
            backfill_fraction: rec.backfill_fraction,
            backfill_positions: rec.backfill_positions,
            k: rec.k,
            holdout_events: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataPaths,
    /// Reference time; defaults to the generator's `now`.
    #[serde(default)]
    pub now: Option<Timestamp>,
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default)]
    pub style: StyleConfig,
    #[serde(default)]
    pub lookalike: LookalikeConfig,
    #[serde(default)]
    pub rec: RecSection,
    /// Reference mode: single-threaded numerics and no wall-clock values in
    /// artifacts, so reruns are byte-identical.
    #[serde(default = "default_reference")]
    pub reference: bool,
}

fn default_reference() -> bool {
    true
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// `dotted.path=value` assignments; values parse as JSON, else as strings.
    pub set: Vec<String>,
}

fn set_path(root: &mut Value, path: &str, value: Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::config(path, "empty path segment"));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::config(parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl PipelineConfig {
    /// Parses a JSON document, reporting the failing field path.
    pub fn from_value(value: Value) -> CliResult<Self> {
        let mut de = value;
        if let Value::Object(map) = &de {
            if !map.contains_key("seed") {
                return Err(CliError::config("seed", "missing field (a seed is mandatory)"));
            }
        }
        let cfg: PipelineConfig = serde_path_to_error::deserialize(std::mem::take(&mut de)).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(if path.is_empty() { ".".into() } else { path }, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or an empty document), applies the environment and the
    /// overrides, and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::config(p.display().to_string(), e))?;
                serde_json::from_str(&text).map_err(|e| CliError::config(p.display().to_string(), e))?
            }
            None => Value::Object(Default::default()),
        };
        if !value.is_object() {
            return Err(CliError::config(".", "config must be a JSON object"));
        }
        for assignment in &overrides.set {
            let (key, raw) = assignment
                .split_once('=')
                .ok_or_else(|| CliError::config(assignment.as_str(), "expected key=value"))?;
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key.trim(), v)?;
        }
        if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
            set_path(&mut value, "out_dir", Value::String(dir))?;
        }
        if let Some(seed) = overrides.seed {
            set_path(&mut value, "seed", Value::from(seed))?;
        }
        if let Some(dir) = &overrides.out_dir {
            set_path(&mut value, "out_dir", Value::String(dir.display().to_string()))?;
        }
        threads_from_env()?;
        Self::from_value(value)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.gen.validate().map_err(|e| CliError::config("gen", e))?;
        self.style.encoder.validate().map_err(|e| CliError::config("style.encoder", e))?;
        self.style.train.validate().map_err(|e| CliError::config("style.train", e))?;
        self.lookalike.encoder.validate().map_err(|e| CliError::config("lookalike.encoder", e))?;
        self.lookalike.train.validate().map_err(|e| CliError::config("lookalike.train", e))?;
        self.lookalike.dataset.validate().map_err(|e| CliError::config("lookalike.dataset", e))?;
        for (i, v) in std::iter::once(&self.lookalike.variant).chain(&self.lookalike.compare).enumerate() {
            let path = if i == 0 { "lookalike.variant".to_string() } else { format!("lookalike.compare[{}]", i - 1) };
            ModelVariant::new(v.number()).map_err(|e| CliError::config(path, e))?;
        }
        if self.style.lookback_days < 0 {
            return Err(CliError::config("style.lookback_days", "must be ≥ 0"));
        }
        if self.style.k < 1 {
            return Err(CliError::config("style.k", "must be ≥ 1"));
        }
        if let Some(i) = self.style.k_list.iter().position(|&k| k < 2) {
            return Err(CliError::config(format!("style.k_list[{i}]"), "silhouette needs k ≥ 2"));
        }
        if self.style.n_pairs == 0 {
            return Err(CliError::config("style.n_pairs", "must be positive"));
        }
        if self.style.length_scale_bins == 0 {
            return Err(CliError::config("style.length_scale_bins", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.style.rep_items.radius_quantile) {
            return Err(CliError::config("style.rep_items.radius_quantile", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.style.rep_items.max_group_share) {
            return Err(CliError::config("style.rep_items.max_group_share", "must lie in [0, 1]"));
        }
        if self.style.rep_items.top_n == 0 {
            return Err(CliError::config("style.rep_items.top_n", "must be positive"));
        }
        if self.lookalike.score_bins == 0 {
            return Err(CliError::config("lookalike.score_bins", "must be positive"));
        }
        self.rec_config(Approach::Base)
            .validate()
            .map_err(|e| CliError::config("rec", e))?;
        Ok(())
    }

    pub fn now(&self) -> Timestamp {
        self.now.unwrap_or(self.gen.now)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.data.catalog.clone().unwrap_or_else(|| self.path(unicon::datagen::CATALOG_FILE))
    }

    pub fn events_path(&self) -> PathBuf {
        self.data.events.clone().unwrap_or_else(|| self.path(unicon::datagen::EVENTS_FILE))
    }

    pub fn consumers_path(&self) -> PathBuf {
        self.data.consumers.clone().unwrap_or_else(|| self.path(unicon::datagen::CONSUMERS_FILE))
    }

    /// Seed for one pipeline component, derived from the global seed.
    pub fn seed_for(&self, component: &str) -> u64 {
        derive_seed(self.seed, component)
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            ..self.gen.clone()
        }
    }

    pub fn style_encoder(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.seed_for("style-encoder"),
            ..self.style.encoder.clone()
        }
    }

    pub fn style_train(&self) -> TrainParams {
        TrainParams {
            seed: self.seed_for("style-train"),
            ..self.style.train.clone()
        }
    }

    pub fn lookalike_encoder(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.seed_for("lookalike-encoder"),
            ..self.lookalike.encoder.clone()
        }
    }

    pub fn lookalike_train(&self) -> TrainParams {
        TrainParams {
            seed: self.seed_for("lookalike-train"),
            ..self.lookalike.train.clone()
        }
    }

    pub fn rec_config(&self, approach: Approach) -> RecConfig {
        RecConfig {
            approach,
            backfill_fraction: self.rec.backfill_fraction,
            backfill_positions: self.rec.backfill_positions,
            k: self.rec.k,
            seed: self.seed_for("recommend"),
        }
    }

    /// SHA-256 of the canonical JSON of everything that influences
    /// artifacts (the output directory excluded).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Worker threads requested through the environment; numerics always run
/// single-threaded, so this only validates the value.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var(ENV_THREADS) {
        Err(_) => Ok(1),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::config(ENV_THREADS, format!("`{v}` is not a positive integer"))),
        },
    }
}
