//! One function per subcommand. Every stage reads its inputs from the
//! output directory, writes its artifacts there and records them in the
//! manifest under the current config hash.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use unicon::dataprep::{self, LabeledSequence, VariantSpec};
use unicon::datagen;
use unicon::domain::{self, Catalog, ConsumerHistory, ConsumerId, ConsumerProfile, Sku};
use unicon::encoder::{checkpoint, train_next_item, EncoderModel, FeatureSpace, TokenSequence, TrainReport};
use unicon::io;
use unicon::lookalike::{self, LookalikeResult, ModelVariant};
use unicon::metrics::{self, AttributeWeights, StyleProfile, STYLE_ATTRIBUTES};
use unicon::recsys::{self, EvalCase, NextItemRecommender, RecRow};
use unicon::segmentation::{self, EmbeddingSet, KMeansResult, RepItem, SegmentMember, SilhouetteMetric};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

pub const HOLDOUT_FILE: &str = "holdout.jsonl";
pub const LOOKALIKE_TRAIN_FILE: &str = "lookalike_train.jsonl";
pub const LOOKALIKE_EVAL_FILE: &str = "lookalike_eval.jsonl";
pub const INFERENCE_FILE: &str = "inference_sequences.jsonl";
pub const CORE_FILE: &str = "core.csv";
pub const EMBEDDER_FILE: &str = "embedder.ckpt";
pub const EMBEDDER_REPORT_FILE: &str = "embedder_train.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const SEGMENTS_FILE: &str = "segments.csv";
pub const KMEANS_FILE: &str = "kmeans.json";
pub const CLUSTER_REPORT_FILE: &str = "cluster_report.csv";
pub const DISTANCE_HISTOGRAM_FILE: &str = "distance_histogram.csv";
pub const EMBEDDING_SPACE_FILE: &str = "embedding_space.csv";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const CLUSTER_SWEEP_FILE: &str = "cluster_sweep.csv";
pub const LENGTH_SCALE_FILE: &str = "length_scale.csv";
pub const LENGTH_SCALE_FIT_FILE: &str = "length_scale.json";
pub const LOOKALIKE_MODEL_FILE: &str = "lookalike.ckpt";
pub const LOOKALIKE_REPORT_FILE: &str = "lookalike_train.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const EVAL_SCORES_FILE: &str = "eval_scores.csv";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const SCORE_DISTRIBUTION_FILE: &str = "score_distribution.csv";
pub const REP_ITEMS_FILE: &str = "rep_items.csv";
pub const REPORT_FILE: &str = "report.md";

/// Subcommands in pipeline order.
pub const STAGES: [&str; 13] = [
    "gen-data",
    "prep",
    "train-embedder",
    "embed",
    "cluster",
    "eval-clusters",
    "train-lookalike",
    "score",
    "optimize-threshold",
    "rep-items",
    "recommend",
    "eval-recs",
    "report",
];

/// Runs one subcommand by name.
pub fn run(stage: &str, cfg: &PipelineConfig) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    match stage {
        "gen-data" => gen_data(cfg),
        "prep" => prep(cfg),
        "train-embedder" => train_embedder(cfg),
        "embed" => embed(cfg),
        "cluster" => cluster(cfg),
        "eval-clusters" => eval_clusters(cfg),
        "train-lookalike" => train_lookalike(cfg),
        "score" => score(cfg),
        "optimize-threshold" => optimize_threshold(cfg),
        "rep-items" => rep_items(cfg),
        "recommend" => recommend(cfg),
        "eval-recs" => eval_recs(cfg),
        "report" => report(cfg),
        other => Err(CliError::config("command", format!("unknown subcommand `{other}`"))),
    }
}

/// Runs every stage in order.
pub fn run_all(cfg: &PipelineConfig) -> CliResult<()> {
    for stage in STAGES {
        run(stage, cfg)?;
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(unicon::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn log(stage: &str, msg: impl AsRef<str>) {
    eprintln!("[{stage}] {}", msg.as_ref());
}

/// Path of an upstream artifact, or the error naming the command that makes it.
fn require(path: PathBuf, command: &'static str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        let artifact = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Err(CliError::MissingPrerequisite { artifact, command })
    }
}

fn input(cfg: &PipelineConfig, name: &str, command: &'static str) -> CliResult<PathBuf> {
    require(cfg.path(name), command)
}

fn record(cfg: &PipelineConfig, stage: &str, names: &[&str]) -> CliResult<()> {
    let mut manifest = Manifest::load(&cfg.out_dir)?;
    manifest.record(&cfg.out_dir, stage, &cfg.hash(), names)?;
    manifest.save(&cfg.out_dir)?;
    log(stage, format!("wrote {}", names.join(", ")));
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(unicon::Error::Format {
            source_name: path.display().to_string(),
            message: e.to_string(),
        })
    })
}

fn load_catalog(cfg: &PipelineConfig) -> CliResult<Catalog> {
    let path = require(cfg.catalog_path(), "gen-data")?;
    let catalog = io::read_catalog(&path)?;
    domain::validate_catalog(&catalog).into_result("catalog")?;
    Ok(catalog)
}

fn load_profiles(cfg: &PipelineConfig) -> CliResult<Vec<ConsumerProfile>> {
    Ok(io::read_profiles(&require(cfg.consumers_path(), "gen-data")?)?)
}

fn load_histories(cfg: &PipelineConfig, catalog: &Catalog) -> CliResult<Vec<ConsumerHistory>> {
    let raw = io::read_raw_events(&require(cfg.events_path(), "gen-data")?)?;
    Ok(domain::group_histories(domain::ingest_events(&raw, catalog)?))
}

fn load_sequences(cfg: &PipelineConfig, name: &str) -> CliResult<Vec<LabeledSequence>> {
    Ok(dataprep::read_sequences(&input(cfg, name, "prep")?)?)
}

fn load_model(cfg: &PipelineConfig, name: &str, command: &'static str) -> CliResult<EncoderModel> {
    Ok(checkpoint::load(&input(cfg, name, command)?)?.0)
}

fn history_of(seq: &LabeledSequence) -> ConsumerHistory {
    ConsumerHistory {
        consumer_id: seq.consumer_id.clone(),
        gender_split: seq.gender_split.clone(),
        events: seq.events.clone(),
    }
}

fn strip_timing(cfg: &PipelineConfig, mut report: TrainReport) -> TrainReport {
    if cfg.reference {
        report.wall_clock_secs = 0.0;
    }
    report
}

fn style_tokens(model: &EncoderModel, catalog: &Catalog, seqs: &[LabeledSequence]) -> CliResult<Vec<TokenSequence>> {
    Ok(seqs
        .iter()
        .map(|s| model.space.tokenize(&model.config, catalog, &s.events, &s.features))
        .collect::<unicon::Result<Vec<_>>>()?)
}

pub fn gen_data(cfg: &PipelineConfig) -> CliResult<()> {
    let gen = cfg.gen_config();
    let data = datagen::generate(&gen)?;
    datagen::write_dataset(&cfg.out_dir, &data)?;
    log(
        "gen-data",
        format!("{} consumers, {} skus", data.profiles.len(), data.catalog.len()),
    );
    record(
        cfg,
        "gen-data",
        &[
            datagen::CATALOG_FILE,
            datagen::EVENTS_FILE,
            datagen::CONSUMERS_FILE,
            datagen::GROUND_TRUTH_FILE,
        ],
    )
}

/// Clicked SKUs held out from the end of one style sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub sequence_id: String,
    pub held_out: Vec<Sku>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreRow {
    pub consumer_id: ConsumerId,
    pub core: bool,
    pub designer_events: usize,
}

pub fn prep(cfg: &PipelineConfig) -> CliResult<()> {
    let catalog = load_catalog(cfg)?;
    let histories = load_histories(cfg, &catalog)?;
    let profiles = load_profiles(cfg)?;
    domain::validate_profiles(&profiles, &histories).into_result("consumers")?;
    let now = cfg.now();

    let spec = VariantSpec::from_catalog(cfg.style.variant, &catalog, cfg.style.lookback_days);
    let variant = dataprep::apply_variant(&histories, &catalog, &spec, now)?;
    let mut style = Vec::new();
    let mut holdout = Vec::new();
    for seq in dataprep::style_sequences(&variant, &profiles)? {
        let (events, held) = recsys::holdout_split(&seq.events, cfg.rec.holdout_events);
        if events.is_empty() {
            continue;
        }
        let mut held_out: Vec<Sku> = held.into_iter().collect();
        held_out.sort();
        holdout.push(HoldoutRow {
            sequence_id: seq.sequence_id(),
            held_out,
        });
        style.push(LabeledSequence { events, ..seq });
    }
    if style.is_empty() {
        return Err(unicon::Error::InvalidInput(format!("variant {} leaves no style sequences", cfg.style.variant)).into());
    }
    dataprep::write_sequences(&cfg.path(dataprep::SEQUENCES_FILE), &style)?;
    io::write_jsonl(&cfg.path(HOLDOUT_FILE), &holdout)?;
    log("prep", format!("{} style sequences (variant {})", style.len(), cfg.style.variant));

    let ds = &cfg.lookalike.dataset;
    let core = dataprep::label_core_designers(&histories, &catalog, ds, now);
    let dataset = dataprep::build_lookalike_dataset(&histories, &profiles, &core, ds, now, cfg.seed_for("lookalike-split"))?;
    let inference = dataprep::build_inference_sequences(&histories, &profiles, &BTreeSet::new(), ds)?;
    dataprep::write_sequences(&cfg.path(LOOKALIKE_TRAIN_FILE), &dataset.train)?;
    dataprep::write_sequences(&cfg.path(LOOKALIKE_EVAL_FILE), &dataset.eval)?;
    dataprep::write_sequences(&cfg.path(INFERENCE_FILE), &inference)?;
    let counts = lookalike::designer_event_counts(&histories, &catalog);
    let rows: Vec<CoreRow> = counts
        .iter()
        .map(|(id, &n)| CoreRow {
            consumer_id: id.clone(),
            core: core.contains(id),
            designer_events: n,
        })
        .collect();
    io::write_csv(&cfg.path(CORE_FILE), &rows)?;
    log(
        "prep",
        format!(
            "{} core consumers; lookalike windows: {} train, {} eval; {} inference sequences",
            core.len(),
            dataset.train.len(),
            dataset.eval.len(),
            inference.len()
        ),
    );
    record(
        cfg,
        "prep",
        &[
            dataprep::SEQUENCES_FILE,
            HOLDOUT_FILE,
            LOOKALIKE_TRAIN_FILE,
            LOOKALIKE_EVAL_FILE,
            INFERENCE_FILE,
            CORE_FILE,
        ],
    )
}

pub fn train_embedder(cfg: &PipelineConfig) -> CliResult<()> {
    let catalog = load_catalog(cfg)?;
    let seqs = load_sequences(cfg, dataprep::SEQUENCES_FILE)?;
    let config = cfg.style_encoder();
    config.validate()?;
    let space = FeatureSpace::fit(&config, &catalog, seqs.iter().map(|s| (s.events.as_slice(), &s.features)))?;
    let mut model = EncoderModel::new(config, space)?;
    let tokens = style_tokens(&model, &catalog, &seqs)?;
    let report = train_next_item(&mut model, &tokens, &cfg.style_train())?;
    log(
        "train-embedder",
        format!("loss per epoch {:?} in {:.1}s", report.epoch_losses, report.wall_clock_secs),
    );
    checkpoint::save(&model, &cfg.path(EMBEDDER_FILE), Some(&cfg.hash()))?;
    write_json(&cfg.path(EMBEDDER_REPORT_FILE), &strip_timing(cfg, report))?;
    record(cfg, "train-embedder", &[EMBEDDER_FILE, EMBEDDER_REPORT_FILE])
}

pub fn embed(cfg: &PipelineConfig) -> CliResult<()> {
    let model = load_model(cfg, EMBEDDER_FILE, "train-embedder")?;
    let catalog = load_catalog(cfg)?;
    let seqs = load_sequences(cfg, dataprep::SEQUENCES_FILE)?;
    let tokens = style_tokens(&model, &catalog, &seqs)?;
    let vectors = tokens
        .iter()
        .map(|t| segmentation::extract_embedding(&model, t))
        .collect::<unicon::Result<Vec<_>>>()?;
    let set = EmbeddingSet {
        checkpoint_id: checkpoint::checkpoint_id(&model),
        ids: seqs.iter().map(LabeledSequence::sequence_id).collect(),
        vectors,
    };
    set.save(&cfg.path(EMBEDDINGS_FILE))?;
    log("embed", format!("{} embeddings of dimension {}", set.len(), set.dim()));
    record(cfg, "embed", &[EMBEDDINGS_FILE])
}

fn load_embeddings(cfg: &PipelineConfig) -> CliResult<EmbeddingSet> {
    Ok(EmbeddingSet::load(&input(cfg, EMBEDDINGS_FILE, "embed")?)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub sequence_id: String,
    pub segment_id: usize,
    pub center_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ClusterReportRow {
    segment_id: usize,
    size: usize,
    mean_distance: f64,
    std_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HistogramRow {
    lower: f64,
    upper: f64,
    count: usize,
}

pub fn cluster(cfg: &PipelineConfig) -> CliResult<()> {
    let emb = load_embeddings(cfg)?;
    let result = segmentation::kmeans(&emb.vectors, cfg.style.k, cfg.seed_for("kmeans"), cfg.style.kmeans)?;
    let dists = segmentation::center_distances(&result, &emb.vectors)?;
    let rows: Vec<SegmentRow> = emb
        .ids
        .iter()
        .zip(&result.assignments)
        .zip(&dists)
        .map(|((id, &s), &d)| SegmentRow {
            sequence_id: id.clone(),
            segment_id: s,
            center_distance: d,
        })
        .collect();
    io::write_csv(&cfg.path(SEGMENTS_FILE), &rows)?;
    write_json(&cfg.path(KMEANS_FILE), &result)?;
    let stats = segmentation::stats_from_distances(result.k, &result.assignments, &dists);
    let report: Vec<ClusterReportRow> = (0..result.k)
        .map(|s| ClusterReportRow {
            segment_id: s,
            size: stats.sizes[s],
            mean_distance: stats.mean_distance[s],
            std_distance: stats.std_distance[s],
        })
        .collect();
    io::write_csv(&cfg.path(CLUSTER_REPORT_FILE), &report)?;
    let hist: Vec<HistogramRow> = stats
        .histogram
        .iter()
        .map(|&(lower, upper, count)| HistogramRow { lower, upper, count })
        .collect();
    io::write_csv(&cfg.path(DISTANCE_HISTOGRAM_FILE), &hist)?;
    log(
        "cluster",
        format!("k = {}, sizes {:?}, inertia {:.4}", result.k, stats.sizes, result.inertia),
    );
    record(
        cfg,
        "cluster",
        &[SEGMENTS_FILE, KMEANS_FILE, CLUSTER_REPORT_FILE, DISTANCE_HISTOGRAM_FILE],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpaceRow {
    pub metric: String,
    pub pearson: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSweepRow {
    pub k: usize,
    pub silhouette: f64,
    pub roc_auc: f64,
    pub inertia: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LengthScaleRow {
    distance: f64,
    mean_similarity: f64,
    n_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthScaleSummary {
    pub lambda: f64,
    pub amplitude: f64,
    pub distance: String,
}

fn sequence_index(seqs: &[LabeledSequence]) -> HashMap<String, usize> {
    seqs.iter().enumerate().map(|(i, s)| (s.sequence_id(), i)).collect()
}

/// Sequences in embedding order.
fn align<'a>(emb: &EmbeddingSet, seqs: &'a [LabeledSequence]) -> CliResult<Vec<&'a LabeledSequence>> {
    let index = sequence_index(seqs);
    emb.ids
        .iter()
        .map(|id| {
            index.get(id).map(|&i| &seqs[i]).ok_or_else(|| {
                CliError::Core(unicon::Error::InvalidInput(format!(
                    "embedding id {id} not among the prepared sequences; rerun embed"
                )))
            })
        })
        .collect()
}

pub fn eval_clusters(cfg: &PipelineConfig) -> CliResult<()> {
    let emb = load_embeddings(cfg)?;
    let catalog = load_catalog(cfg)?;
    let seqs = load_sequences(cfg, dataprep::SEQUENCES_FILE)?;
    let aligned = align(&emb, &seqs)?;
    let profiles = aligned
        .iter()
        .map(|s| StyleProfile::from_history(&history_of(s), &STYLE_ATTRIBUTES, &catalog))
        .collect::<unicon::Result<Vec<_>>>()?;
    let weights = AttributeWeights::default();
    let space = metrics::evaluate_embedding_space(
        &emb.vectors,
        &profiles,
        &weights,
        cfg.style.n_pairs,
        cfg.seed_for("pairs"),
    )?;
    let rows: Vec<EmbeddingSpaceRow> = metrics::Metric::ALL
        .iter()
        .map(|&m| EmbeddingSpaceRow {
            metric: m.as_str().to_string(),
            pearson: space.correlation(m),
            n_pairs: space.n_pairs,
        })
        .collect();
    io::write_csv(&cfg.path(EMBEDDING_SPACE_FILE), &rows)?;
    log(
        "eval-clusters",
        format!(
            "pearson(S, ·): dot {:.3}, cosine {:.3}, euclidean {:.3}",
            space.dot, space.cosine, space.euclidean
        ),
    );

    let mut pairs = space.pairs.clone();
    let s: Vec<f64> = pairs.iter().map(|p| p.style_similarity).collect();
    let mut sweep = Vec::new();
    for &k in &cfg.style.k_list {
        if k > emb.len() {
            return Err(CliError::config("style.k_list", format!("k = {k} exceeds {} sequences", emb.len())));
        }
        let result = segmentation::kmeans(&emb.vectors, k, cfg.seed_for("kmeans"), cfg.style.kmeans)?;
        let sil = segmentation::silhouette(&emb.vectors, &result.assignments, SilhouetteMetric::CosineDistance)?;
        let same: Vec<bool> = pairs
            .iter()
            .map(|p| result.assignments[p.a] == result.assignments[p.b])
            .collect();
        let auc = metrics::pair_roc_auc(&s, &same).unwrap_or(f64::NAN);
        if k == cfg.style.k {
            for (p, &same) in pairs.iter_mut().zip(&same) {
                p.same_segment = Some(same);
            }
        }
        log("eval-clusters", format!("k = {k}: silhouette {sil:.4}, roc-auc {auc:.4}"));
        sweep.push(ClusterSweepRow {
            k,
            silhouette: sil,
            roc_auc: auc,
            inertia: result.inertia,
        });
    }
    io::write_csv(&cfg.path(CLUSTER_SWEEP_FILE), &sweep)?;
    io::write_csv(&cfg.path(PAIRS_FILE), &pairs)?;

    let dist_sim: Vec<(f64, f64)> = pairs.iter().map(|p| (1.0 - p.cosine, p.style_similarity)).collect();
    let fit = segmentation::fit_length_scale(&dist_sim, cfg.style.length_scale_bins)?;
    let rows: Vec<LengthScaleRow> = fit
        .bins
        .iter()
        .map(|&(distance, mean_similarity, n_pairs)| LengthScaleRow {
            distance,
            mean_similarity,
            n_pairs,
        })
        .collect();
    io::write_csv(&cfg.path(LENGTH_SCALE_FILE), &rows)?;
    write_json(
        &cfg.path(LENGTH_SCALE_FIT_FILE),
        &LengthScaleSummary {
            lambda: fit.lambda,
            amplitude: fit.amplitude,
            distance: "cosine_distance".into(),
        },
    )?;
    log("eval-clusters", format!("length scale λ = {:.4}", fit.lambda));
    record(
        cfg,
        "eval-clusters",
        &[
            EMBEDDING_SPACE_FILE,
            PAIRS_FILE,
            CLUSTER_SWEEP_FILE,
            LENGTH_SCALE_FILE,
            LENGTH_SCALE_FIT_FILE,
        ],
    )
}

pub fn train_lookalike(cfg: &PipelineConfig) -> CliResult<()> {
    let catalog = load_catalog(cfg)?;
    let train = load_sequences(cfg, LOOKALIKE_TRAIN_FILE)?;
    let base = cfg.lookalike_encoder();
    let params = cfg.lookalike_train();
    let config = cfg.lookalike.variant.apply(&base);
    let (model, report) = lookalike::train_lookalike_model(&config, &catalog, &train, &params)?;
    log(
        "train-lookalike",
        format!(
            "{}: loss per epoch {:?} in {:.1}s",
            cfg.lookalike.variant, report.epoch_losses, report.wall_clock_secs
        ),
    );
    checkpoint::save(&model, &cfg.path(LOOKALIKE_MODEL_FILE), Some(&cfg.hash()))?;
    write_json(&cfg.path(LOOKALIKE_REPORT_FILE), &strip_timing(cfg, report))?;
    let mut written = vec![LOOKALIKE_MODEL_FILE, LOOKALIKE_REPORT_FILE];
    if !cfg.lookalike.compare.is_empty() {
        let eval = load_sequences(cfg, LOOKALIKE_EVAL_FILE)?;
        let dataset = dataprep::LookalikeDataset { train, eval };
        let variants: Vec<ModelVariant> = cfg.lookalike.compare.clone();
        let mut report = lookalike::run_variant_comparison(
            &dataset,
            &catalog,
            &variants,
            &base,
            &params,
            cfg.seed_for("random-baseline"),
        )?;
        for row in &report.rows {
            log(
                "train-lookalike",
                format!(
                    "{}: f2 {:?} ap {:?} {}",
                    row.model,
                    row.f2,
                    row.average_precision,
                    row.error.as_deref().unwrap_or("")
                ),
            );
        }
        if cfg.reference {
            for row in &mut report.rows {
                row.train_secs = None;
            }
        }
        lookalike::write_variant_report(&cfg.path(lookalike::VARIANT_REPORT_FILE), &report)?;
        written.push(lookalike::VARIANT_REPORT_FILE);
    }
    record(cfg, "train-lookalike", &written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub consumer_id: ConsumerId,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalScoreRow {
    pub sequence_id: String,
    pub consumer_id: ConsumerId,
    pub core: bool,
    pub score: f64,
}

pub fn score(cfg: &PipelineConfig) -> CliResult<()> {
    let model = load_model(cfg, LOOKALIKE_MODEL_FILE, "train-lookalike")?;
    let catalog = load_catalog(cfg)?;
    let eval = load_sequences(cfg, LOOKALIKE_EVAL_FILE)?;
    let inference = load_sequences(cfg, INFERENCE_FILE)?;
    let eval_scores = lookalike::score_sequences(&model, &catalog, &eval)?;
    let rows: Vec<EvalScoreRow> = eval
        .iter()
        .zip(&eval_scores)
        .map(|(s, &score)| EvalScoreRow {
            sequence_id: s.sequence_id(),
            consumer_id: s.consumer_id.clone(),
            core: s.label.is_some_and(|l| l.is_core()),
            score,
        })
        .collect();
    io::write_csv(&cfg.path(EVAL_SCORES_FILE), &rows)?;
    let scores = lookalike::score_sequences(&model, &catalog, &inference)?;
    let mut by_consumer: BTreeMap<ConsumerId, f64> = BTreeMap::new();
    for (s, p) in inference.iter().zip(scores) {
        let e = by_consumer.entry(s.consumer_id.clone()).or_insert(p);
        *e = e.max(p);
    }
    let rows: Vec<ScoreRow> = by_consumer
        .into_iter()
        .map(|(consumer_id, score)| ScoreRow { consumer_id, score })
        .collect();
    io::write_csv(&cfg.path(SCORES_FILE), &rows)?;
    log("score", format!("{} eval windows, {} consumers scored", eval.len(), rows.len()));
    record(cfg, "score", &[EVAL_SCORES_FILE, SCORES_FILE])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub tau: f64,
    pub f2: f64,
    pub precision: f64,
    pub recall: f64,
    pub eval_windows: usize,
    pub scored_consumers: usize,
    pub core_consumers: usize,
    pub lookalikes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ScoreDistributionRow {
    group: String,
    lower: f64,
    upper: f64,
    count: usize,
}

fn load_core(cfg: &PipelineConfig) -> CliResult<Vec<CoreRow>> {
    Ok(io::read_csv(&input(cfg, CORE_FILE, "prep")?)?)
}

pub fn optimize_threshold(cfg: &PipelineConfig) -> CliResult<()> {
    let eval: Vec<EvalScoreRow> = io::read_csv(&input(cfg, EVAL_SCORES_FILE, "score")?)?;
    let scored: Vec<ScoreRow> = io::read_csv(&input(cfg, SCORES_FILE, "score")?)?;
    let core_rows = load_core(cfg)?;
    let s: Vec<f64> = eval.iter().map(|r| r.score).collect();
    let labels: Vec<bool> = eval.iter().map(|r| r.core).collect();
    let curve = lookalike::sweep_thresholds(&s, &labels)?;
    let best = lookalike::optimize_threshold(&curve)?;
    lookalike::write_curve(&cfg.path(lookalike::CURVE_FILE), &curve)?;

    let core: BTreeSet<ConsumerId> = core_rows.iter().filter(|r| r.core).map(|r| r.consumer_id.clone()).collect();
    let scores: BTreeMap<ConsumerId, f64> = scored.iter().map(|r| (r.consumer_id.clone(), r.score)).collect();
    let result = LookalikeResult::new(scores, &core, best.tau);
    lookalike::write_lookalikes(&cfg.path(lookalike::LOOKALIKES_FILE), &result.rows())?;

    let counts: BTreeMap<ConsumerId, usize> = core_rows
        .iter()
        .map(|r| (r.consumer_id.clone(), r.designer_events))
        .collect();
    let dist = lookalike::score_distribution_report(
        result.scores.iter().map(|(k, v)| (k, *v)),
        &core,
        &counts,
        cfg.lookalike.score_bins,
    )?;
    let rows: Vec<ScoreDistributionRow> = dist
        .groups
        .iter()
        .flat_map(|g| {
            g.counts.iter().enumerate().map(|(b, &count)| ScoreDistributionRow {
                group: g.name.clone(),
                lower: dist.edges[b],
                upper: dist.edges[b + 1],
                count,
            })
        })
        .collect();
    io::write_csv(&cfg.path(SCORE_DISTRIBUTION_FILE), &rows)?;
    let summary = ThresholdSummary {
        tau: best.tau,
        f2: best.f2,
        precision: best.precision,
        recall: best.recall,
        eval_windows: eval.len(),
        scored_consumers: result.scores.len(),
        core_consumers: core.len(),
        lookalikes: result.lookalikes.len(),
    };
    write_json(&cfg.path(THRESHOLD_FILE), &summary)?;
    log(
        "optimize-threshold",
        format!(
            "τ* = {:.4} (F2 {:.4}), {} lookalikes",
            best.tau,
            best.f2,
            result.lookalikes.len()
        ),
    );
    record(
        cfg,
        "optimize-threshold",
        &[
            lookalike::CURVE_FILE,
            lookalike::LOOKALIKES_FILE,
            SCORE_DISTRIBUTION_FILE,
            THRESHOLD_FILE,
        ],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepItemRow {
    pub segment_id: usize,
    pub gender: String,
    pub rank: usize,
    pub sku: Sku,
    pub popularity: usize,
}

fn load_segments(cfg: &PipelineConfig) -> CliResult<Vec<SegmentRow>> {
    Ok(io::read_csv(&input(cfg, SEGMENTS_FILE, "cluster")?)?)
}

fn sequence_gender<'a>(seq: &'a LabeledSequence) -> &'a str {
    seq.gender_split.as_deref().unwrap_or(&seq.features.gender_preference)
}

pub fn rep_items(cfg: &PipelineConfig) -> CliResult<()> {
    let catalog = load_catalog(cfg)?;
    let seqs = load_sequences(cfg, dataprep::SEQUENCES_FILE)?;
    let segments = load_segments(cfg)?;
    let kmeans: KMeansResult = read_json(&input(cfg, KMEANS_FILE, "cluster")?)?;
    let index = sequence_index(&seqs);
    let histories: Vec<ConsumerHistory> = seqs.iter().map(history_of).collect();
    let mut members: Vec<Vec<SegmentMember>> = vec![Vec::new(); kmeans.k];
    for row in &segments {
        let &i = index.get(&row.sequence_id).ok_or_else(|| {
            CliError::Core(unicon::Error::InvalidInput(format!(
                "segment member {} not among the prepared sequences; rerun embed and cluster",
                row.sequence_id
            )))
        })?;
        let list = members.get_mut(row.segment_id).ok_or_else(|| {
            CliError::Core(unicon::Error::InvalidInput(format!("segment id {} out of range", row.segment_id)))
        })?;
        list.push(SegmentMember {
            history: &histories[i],
            gender: sequence_gender(&seqs[i]),
            distance: row.center_distance,
        });
    }
    let mut rows = Vec::new();
    for (segment_id, m) in members.iter().enumerate() {
        let rep = segmentation::representative_items(segment_id, m, &catalog, &cfg.style.rep_items)?;
        for (gender, list) in &rep.lists {
            for (rank, item) in list.iter().enumerate() {
                rows.push(RepItemRow {
                    segment_id,
                    gender: gender.clone(),
                    rank: rank + 1,
                    sku: item.sku.clone(),
                    popularity: item.popularity,
                });
            }
        }
    }
    io::write_csv(&cfg.path(REP_ITEMS_FILE), &rows)?;
    log("rep-items", format!("{} rows over {} segments", rows.len(), kmeans.k));
    record(cfg, "rep-items", &[REP_ITEMS_FILE])
}

type RepLists = BTreeMap<(usize, String), Vec<RepItem>>;

/// Key of a segment's gender-merged list, used when a sequence's gender has no list.
const ANY_GENDER: &str = "*";

fn load_rep_items(cfg: &PipelineConfig) -> CliResult<RepLists> {
    let rows: Vec<RepItemRow> = io::read_csv(&input(cfg, REP_ITEMS_FILE, "rep-items")?)?;
    let mut out: RepLists = BTreeMap::new();
    let mut merged: BTreeMap<usize, BTreeMap<Sku, usize>> = BTreeMap::new();
    for r in rows {
        let best = merged.entry(r.segment_id).or_default().entry(r.sku.clone()).or_insert(0);
        *best = (*best).max(r.popularity);
        out.entry((r.segment_id, r.gender)).or_default().push(RepItem {
            sku: r.sku,
            popularity: r.popularity,
        });
    }
    for (segment, items) in merged {
        let mut list: Vec<RepItem> = items
            .into_iter()
            .map(|(sku, popularity)| RepItem { sku, popularity })
            .collect();
        list.sort_by(|a, b| b.popularity.cmp(&a.popularity).then_with(|| a.sku.cmp(&b.sku)));
        out.insert((segment, ANY_GENDER.to_string()), list);
    }
    Ok(out)
}

/// Style sequences paired with their segment's representative list.
fn rec_inputs<'a>(
    seqs: &'a [LabeledSequence],
    segments: &[SegmentRow],
    reps: &'a RepLists,
) -> Vec<(&'a LabeledSequence, &'a [RepItem])> {
    let seg: HashMap<&str, usize> = segments.iter().map(|r| (r.sequence_id.as_str(), r.segment_id)).collect();
    seqs.iter()
        .filter_map(|s| {
            let id = s.sequence_id();
            let &segment = seg.get(id.as_str())?;
            let rep = reps
                .get(&(segment, sequence_gender(s).to_string()))
                .or_else(|| reps.get(&(segment, ANY_GENDER.to_string())))
                .map_or(&[][..], Vec::as_slice);
            Some((s, rep))
        })
        .collect()
}

pub fn recommend(cfg: &PipelineConfig) -> CliResult<()> {
    let model = load_model(cfg, EMBEDDER_FILE, "train-embedder")?;
    let catalog = load_catalog(cfg)?;
    let seqs = load_sequences(cfg, dataprep::SEQUENCES_FILE)?;
    let segments = load_segments(cfg)?;
    let reps = load_rep_items(cfg)?;
    let base = NextItemRecommender::new(&model, &catalog)?;
    let mut rows: Vec<RecRow> = Vec::new();
    let inputs = rec_inputs(&seqs, &segments, &reps);
    for &approach in &cfg.rec.approaches {
        let rc = cfg.rec_config(approach);
        for (s, rep) in &inputs {
            let recs = recsys::recommend(&s.consumer_id, &s.events, &s.features, rep, &base, &rc)?;
            rows.extend(recsys::rec_rows(&s.consumer_id, approach, &recs));
        }
    }
    recsys::write_recs(&cfg.path(recsys::RECS_FILE), &rows)?;
    log("recommend", format!("{} rows for {} sequences", rows.len(), inputs.len()));
    record(cfg, "recommend", &[recsys::RECS_FILE])
}

pub fn eval_recs(cfg: &PipelineConfig) -> CliResult<()> {
    let model = load_model(cfg, EMBEDDER_FILE, "train-embedder")?;
    let catalog = load_catalog(cfg)?;
    let seqs = load_sequences(cfg, dataprep::SEQUENCES_FILE)?;
    let holdout: Vec<HoldoutRow> = io::read_jsonl(&input(cfg, HOLDOUT_FILE, "prep")?)?;
    let segments = load_segments(cfg)?;
    let reps = load_rep_items(cfg)?;
    let base = NextItemRecommender::new(&model, &catalog)?;
    let held: HashMap<&str, &[Sku]> = holdout
        .iter()
        .map(|h| (h.sequence_id.as_str(), h.held_out.as_slice()))
        .collect();
    let cases: Vec<EvalCase> = rec_inputs(&seqs, &segments, &reps)
        .into_iter()
        .map(|(s, rep)| EvalCase {
            consumer_id: s.consumer_id.clone(),
            events: s.events.clone(),
            features: s.features.clone(),
            held_out: held
                .get(s.sequence_id().as_str())
                .map_or_else(HashSet::new, |h| h.iter().cloned().collect()),
            rep,
        })
        .collect();
    let report = recsys::evaluate_approaches(
        &cases,
        &cfg.rec.approaches,
        &base,
        &cfg.rec_config(recsys::Approach::Base),
        &catalog,
    )?;
    for r in &report {
        log(
            "eval-recs",
            format!(
                "{}: ndcg {:.4}, overlap {:.4}, brand diversity {:.4}, group diversity {:.4} (n = {})",
                r.approach, r.ndcg, r.overlap, r.brand_diversity, r.commodity_group_diversity, r.n_consumers
            ),
        );
    }
    recsys::write_eval_report(&cfg.path(recsys::EVAL_REPORT_FILE), &report)?;
    record(cfg, "eval-recs", &[recsys::EVAL_REPORT_FILE])
}

/// CSV artifacts summarized by `report`, in pipeline order.
const REPORT_TABLES: [(&str, &str); 9] = [
    (EMBEDDING_SPACE_FILE, "Embedding space: Pearson correlation with style similarity"),
    (CLUSTER_SWEEP_FILE, "Cluster sweep"),
    (CLUSTER_REPORT_FILE, "Segments"),
    (LENGTH_SCALE_FILE, "Style similarity by embedding distance"),
    (lookalike::VARIANT_REPORT_FILE, "Lookalike model variants"),
    (lookalike::CURVE_FILE, "Threshold curve"),
    (SCORE_DISTRIBUTION_FILE, "Score distribution"),
    (recsys::EVAL_REPORT_FILE, "Recommendation approaches"),
    (DISTANCE_HISTOGRAM_FILE, "Center distance histogram"),
];

const REPORT_MAX_ROWS: usize = 25;

fn csv_table(path: &Path) -> CliResult<String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        CliError::Core(unicon::Error::Format {
            source_name: path.display().to_string(),
            message: e.to_string(),
        })
    })?;
    let fmt_err = |e: csv::Error| {
        CliError::Core(unicon::Error::Format {
            source_name: path.display().to_string(),
            message: e.to_string(),
        })
    };
    let headers = reader.headers().map_err(fmt_err)?.clone();
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", headers.iter().collect::<Vec<_>>().join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(headers.len()));
    let mut total = 0;
    for record in reader.records() {
        let record = record.map_err(fmt_err)?;
        total += 1;
        if total <= REPORT_MAX_ROWS {
            let cells: Vec<String> = record
                .iter()
                .map(|c| match c.parse::<f64>() {
                    Ok(x) if c.contains('.') => format!("{x:.4}"),
                    _ => c.to_string(),
                })
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
    }
    if total > REPORT_MAX_ROWS {
        let _ = writeln!(out, "\n{} of {total} rows shown.", REPORT_MAX_ROWS);
    }
    Ok(out)
}

pub fn report(cfg: &PipelineConfig) -> CliResult<()> {
    let manifest = Manifest::load(&cfg.out_dir)?;
    let hash = cfg.hash();
    manifest.check_consistent(&cfg.out_dir, &hash)?;
    let mut md = String::new();
    let _ = writeln!(md, "# Pipeline report\n");
    let _ = writeln!(md, "Config hash `{hash}`, seed {}.\n", cfg.seed);
    if let Ok(t) = read_json::<ThresholdSummary>(&cfg.path(THRESHOLD_FILE)) {
        let _ = writeln!(
            md,
            "Lookalike threshold τ* = {:.4} (F2 {:.4}, precision {:.4}, recall {:.4}); {} lookalikes among {} scored consumers, {} core consumers.\n",
            t.tau, t.f2, t.precision, t.recall, t.lookalikes, t.scored_consumers, t.core_consumers
        );
    }
    if let Ok(l) = read_json::<LengthScaleSummary>(&cfg.path(LENGTH_SCALE_FIT_FILE)) {
        let _ = writeln!(
            md,
            "Style length scale λ = {:.4} ({}), amplitude {:.4}.\n",
            l.lambda, l.distance, l.amplitude
        );
    }
    for (name, title) in REPORT_TABLES {
        let path = cfg.path(name);
        if path.exists() {
            let _ = writeln!(md, "## {title} (`{name}`)\n");
            md.push_str(&csv_table(&path)?);
            md.push('\n');
        }
    }
    let _ = writeln!(md, "## Artifacts\n");
    let _ = writeln!(md, "| file | stage | sha256 |\n|---|---|---|");
    for (name, rec) in &manifest.artifacts {
        if cfg.path(name).exists() {
            let _ = writeln!(md, "| {name} | {} | `{}` |", rec.stage, &rec.sha256[..16]);
        }
    }
    let path = cfg.path(REPORT_FILE);
    std::fs::write(&path, md).map_err(|e| io_err(&path, e))?;
    log("report", format!("wrote {REPORT_FILE}"));
    Ok(())
}
