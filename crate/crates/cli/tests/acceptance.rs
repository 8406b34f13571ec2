//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line with its measurements and runtime.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use unicon::dataprep::{self, LookalikeDatasetSpec};
use unicon::datagen::{self, GenConfig, GeneratedData};
use unicon::domain::{Attribute, Catalog, ConsumerFeatures, ConsumerHistory, ConsumerId, Sku};
use unicon::encoder::{
    grad_check, train_next_item, EncoderConfig, EncoderModel, FeatureSpace, LabeledTokens, NumericEncoding,
    TokenSequence, TrainParams,
};
use unicon::lookalike::{self, ModelVariant, RANDOM_ROW};
use unicon::metrics::{self, AttributeWeights, StyleProfile, STYLE_ATTRIBUTES};
use unicon::recsys::{self, Approach, BaseRecommender, NextItemRecommender, RecConfig};
use unicon::seed;
use unicon::segmentation::{self, KMeansParams, RepItemParams, SegmentMember, SilhouetteMetric};
use unicon_cli::config::PipelineConfig;

fn verdict(n: u32, name: &str, pass: bool, detail: String, elapsed: Duration, budget: Duration) {
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    let line = format!(
        "criterion {n}: {} - {name}: {detail} [{:.1}s, budget {:.0}s]\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    // Written to the raw handle so the line survives libtest output capture.
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
    assert!(in_time, "criterion {n} ({name}) exceeded its runtime budget");
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn truncate_recent(histories: &[ConsumerHistory], n: usize) -> Vec<ConsumerHistory> {
    histories
        .iter()
        .map(|h| {
            let start = h.events.len().saturating_sub(n);
            ConsumerHistory {
                consumer_id: h.consumer_id.clone(),
                gender_split: None,
                events: h.events[start..].to_vec(),
            }
        })
        .collect()
}

/// Fits a feature space on `histories` and tokenizes them.
fn tokenize_all(
    config: &EncoderConfig,
    catalog: &Catalog,
    histories: &[ConsumerHistory],
    features: &[ConsumerFeatures],
) -> (FeatureSpace, Vec<TokenSequence>) {
    let space = FeatureSpace::fit(
        config,
        catalog,
        histories.iter().zip(features).map(|(h, f)| (h.events.as_slice(), f)),
    )
    .unwrap();
    let seqs = histories
        .iter()
        .zip(features)
        .map(|(h, f)| space.tokenize(config, catalog, &h.events, f).unwrap())
        .collect();
    (space, seqs)
}

fn features_of(data: &GeneratedData) -> Vec<ConsumerFeatures> {
    data.profiles.iter().map(ConsumerFeatures::from).collect()
}

fn embeddings(model: &EncoderModel, seqs: &[TokenSequence]) -> Vec<Vec<f64>> {
    seqs.iter()
        .map(|s| segmentation::extract_embedding(model, s).unwrap())
        .collect()
}

#[test]
fn criterion_01_random_baseline_row() {
    let start = Instant::now();
    let n = 500_000;
    let n_pos = n / 50;
    let labels: Vec<bool> = (0..n).map(|i| i % 50 == 0).collect();
    assert_eq!(labels.iter().filter(|&&l| l).count(), n_pos);
    let m = lookalike::random_baseline(&labels, 2024).unwrap();
    let pass = within(m.precision, 0.020, 0.003) && within(m.recall, 0.50, 0.02) && within(m.f2, 0.086, 0.005);
    verdict(
        1,
        "random baseline at τ = 0.5",
        pass,
        format!(
            "n = {n}, prevalence 2%: precision {:.4}, recall {:.4}, F2 {:.4}",
            m.precision, m.recall, m.f2
        ),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_02_trained_variants_beat_random() {
    let start = Instant::now();
    let gen = GenConfig {
        n_consumers: 5000,
        events_min: 40,
        events_max: 150,
        designer_consumer_fraction: 0.04,
        seed: 21,
        ..Default::default()
    };
    let data = datagen::generate(&gen).unwrap();
    let spec = LookalikeDatasetSpec {
        window_len: 50,
        max_windows_per_core: 3,
        eval_fraction: 0.3,
        negative_fraction: 0.5,
        ..Default::default()
    };
    let core = dataprep::label_core_designers(&data.histories, &data.catalog, &spec, gen.now);
    let dataset =
        dataprep::build_lookalike_dataset(&data.histories, &data.profiles, &core, &spec, gen.now, 5).unwrap();
    let base = EncoderConfig {
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        max_seq_len: 50,
        ..EncoderConfig::lookalike(8)
    };
    let params = TrainParams {
        epochs: 2,
        batch_size: 32,
        learning_rate: 2e-3,
        seed: 9,
        ..Default::default()
    };
    let report =
        lookalike::run_variant_comparison(&dataset, &data.catalog, &ModelVariant::ALL, &base, &params, 13).unwrap();
    let random = report.row(RANDOM_ROW).unwrap();
    let random_ap = random.average_precision.unwrap();
    let mut pass = true;
    let mut detail = format!(
        "{} consumers, {} core, {} train / {} eval windows; random AP {:.4}",
        gen.n_consumers,
        core.len(),
        dataset.train.len(),
        dataset.eval.len(),
        random_ap
    );
    for row in report.rows.iter().filter(|r| r.model != RANDOM_ROW) {
        let (ap, f2) = (row.average_precision.unwrap_or(0.0), row.f2.unwrap_or(0.0));
        pass &= row.error.is_none() && ap >= 5.0 * random_ap && f2 >= 0.3;
        detail.push_str(&format!("; {}: AP {:.3} F2 {:.3}", row.model, ap, f2));
    }
    verdict(
        2,
        "variants 1-5 beat random",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(15 * 60),
    );
}

#[test]
fn criterion_03_gradient_check() {
    let start = Instant::now();
    let gen = GenConfig {
        n_consumers: 60,
        n_skus: 120,
        events_min: 10,
        events_max: 20,
        items_per_prototype: 20,
        seed: 3,
        ..Default::default()
    };
    let data = datagen::generate(&gen).unwrap();
    let features = features_of(&data);
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for batch in 0..5u64 {
        let config = EncoderConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 6,
            numeric_encoding: if batch % 2 == 0 {
                NumericEncoding::ScaledEmbedding
            } else {
                NumericEncoding::PiecewiseLinear
            },
            ple_bins: 4,
            ..EncoderConfig::next_item(100 + batch)
        };
        let (space, seqs) = tokenize_all(&config, &data.catalog, &data.histories, &features);
        let model = EncoderModel::new(config, space).unwrap();
        let mut rng = seed::rng(batch);
        let mut pick = |k: usize| -> Vec<usize> { (0..k).map(|_| rng.gen_range(0..seqs.len())).collect() };
        let next: Vec<TokenSequence> = pick(4).into_iter().map(|i| seqs[i].clone()).collect();
        let class: Vec<LabeledTokens> = pick(4)
            .into_iter()
            .enumerate()
            .map(|(j, i)| LabeledTokens {
                seq: seqs[i].clone(),
                label: j % 2 == 0,
            })
            .collect();
        let report = grad_check(&model, &next, &class, 4, batch).unwrap();
        worst = worst.max(report.max_rel_error);
        detail.push(format!("{:.1e}", report.max_rel_error));
    }
    verdict(
        3,
        "gradient check, both heads",
        worst < 1e-4,
        format!("max relative error per batch [{}]", detail.join(", ")),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_04_clustering_recovery() {
    let start = Instant::now();
    let gen = GenConfig {
        n_consumers: 2000,
        n_prototypes: 5,
        events_min: 200,
        events_max: 200,
        seed: 1,
        ..Default::default()
    };
    let data = datagen::generate(&gen).unwrap();
    let histories = truncate_recent(&data.histories, 100);
    let features = features_of(&data);
    let config = EncoderConfig {
        n_layers: 1,
        ..EncoderConfig::next_item(3)
    };
    let (space, seqs) = tokenize_all(&config, &data.catalog, &histories, &features);
    let mut model = EncoderModel::new(config, space).unwrap();
    let params = TrainParams {
        epochs: 2,
        batch_size: 32,
        seed: 4,
        ..Default::default()
    };
    train_next_item(&mut model, &seqs, &params).unwrap();
    let emb = embeddings(&model, &seqs);
    let truth: Vec<usize> = data.ground_truth.iter().map(|t| t.prototype_id).collect();
    let km = segmentation::kmeans(&emb, 5, 1, KMeansParams::default()).unwrap();

    let pairs = metrics::sample_pairs(emb.len(), 20_000, 9).unwrap();
    let scores: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| metrics::cosine(&emb[a], &emb[b]).unwrap())
        .collect();
    let same: Vec<bool> = pairs.iter().map(|&(a, b)| truth[a] == truth[b]).collect();
    let auc = metrics::pair_roc_auc(&scores, &same).unwrap();

    let sil = segmentation::silhouette(&emb, &km.assignments, SilhouetteMetric::CosineDistance).unwrap();
    let mut permuted = km.assignments.clone();
    permuted.shuffle(&mut seed::rng(77));
    let sil_perm = segmentation::silhouette(&emb, &permuted, SilhouetteMetric::CosineDistance).unwrap();
    let agree = pairs
        .iter()
        .filter(|&&(a, b)| (truth[a] == truth[b]) == (km.assignments[a] == km.assignments[b]))
        .count() as f64
        / pairs.len() as f64;
    verdict(
        4,
        "clustering recovery",
        auc >= 0.90 && sil > sil_perm,
        format!(
            "pair ROC-AUC {auc:.4}; silhouette {sil:.4} vs label-permuted {sil_perm:.4}; pairwise agreement with prototypes {agree:.3}"
        ),
        start.elapsed(),
        Duration::from_secs(600),
    );
}

#[test]
fn criterion_05_embedding_space_evaluation() {
    let start = Instant::now();
    let gen = GenConfig {
        n_consumers: 2000,
        n_prototypes: 30,
        style_coherence: 0.6,
        events_min: 200,
        events_max: 200,
        seed: 1,
        ..Default::default()
    };
    let data = datagen::generate(&gen).unwrap();
    let histories = truncate_recent(&data.histories, 100);
    let features = features_of(&data);
    let config = EncoderConfig {
        d_model: 16,
        d_ff: 32,
        n_layers: 1,
        ..EncoderConfig::next_item(3)
    };
    let (space, seqs) = tokenize_all(&config, &data.catalog, &histories, &features);
    let mut model = EncoderModel::new(config, space).unwrap();
    let profiles: Vec<StyleProfile> = histories
        .iter()
        .map(|h| StyleProfile::from_history(h, &STYLE_ATTRIBUTES, &data.catalog).unwrap())
        .collect();
    let weights = AttributeWeights::default();
    let untrained = metrics::evaluate_embedding_space(&embeddings(&model, &seqs), &profiles, &weights, 10_000, 5).unwrap();
    let params = TrainParams {
        epochs: 4,
        batch_size: 32,
        seed: 4,
        ..Default::default()
    };
    train_next_item(&mut model, &seqs, &params).unwrap();
    let trained = metrics::evaluate_embedding_space(&embeddings(&model, &seqs), &profiles, &weights, 10_000, 5).unwrap();
    let gap = trained.cosine - untrained.cosine;
    verdict(
        5,
        "embedding space vs style similarity",
        trained.cosine > 0.2 && gap >= 0.15 && trained.euclidean < 0.0,
        format!(
            "Pearson(S, cos) trained {:.4}, untrained {:.4}, gap {gap:.4}; Pearson(S, euclidean) {:.4}; Pearson(S, dot) {:.4}",
            trained.cosine, untrained.cosine, trained.euclidean, trained.dot
        ),
        start.elapsed(),
        Duration::from_secs(300),
    );
}

fn silhouette_reference(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let d = |a: &[f64], b: &[f64]| {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
    };
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..points.len() {
        let mean_to = |c: usize| {
            let others: Vec<usize> = (0..points.len()).filter(|&j| j != i && labels[j] == c).collect();
            if others.is_empty() {
                None
            } else {
                Some(others.iter().map(|&j| d(&points[i], &points[j])).sum::<f64>() / others.len() as f64)
            }
        };
        let Some(a) = mean_to(labels[i]) else { continue };
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .filter_map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

fn auc_reference(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn best_f2_reference(scores: &[f64], labels: &[bool]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut taus = vec![0.0, 1.0];
    taus.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    taus.iter()
        .map(|&t| {
            let tp = scores.iter().zip(labels).filter(|(s, l)| **s > t && **l).count() as f64;
            let pp = scores.iter().filter(|s| **s > t).count() as f64;
            let p = if pp > 0.0 { tp / pp } else { 0.0 };
            let r = tp / n_pos;
            if p + r > 0.0 {
                5.0 * p * r / (4.0 * p + r)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

fn spherical_objective(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let unit: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let n = (p[0] * p[0] + p[1] * p[1]).sqrt();
            [p[0] / n, p[1] / n]
        })
        .collect();
    let mut total = 0.0;
    for c in 0..k {
        let mut m = [0.0, 0.0];
        for (u, _) in unit.iter().zip(labels).filter(|(_, &l)| l == c) {
            m[0] += u[0];
            m[1] += u[1];
        }
        let n = (m[0] * m[0] + m[1] * m[1]).sqrt();
        if n == 0.0 {
            continue;
        }
        for (u, _) in unit.iter().zip(labels).filter(|(_, &l)| l == c) {
            total += 1.0 - (u[0] * m[0] + u[1] * m[1]) / n;
        }
    }
    total / points.len() as f64
}

fn dist(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn criterion_06_oracle_identities() {
    let start = Instant::now();
    let mut rng = seed::rng(6);
    let mut checks: Vec<(String, bool)> = Vec::new();

    let centres = [[1.0, 0.2, 0.0], [0.0, 1.0, 0.3], [0.2, 0.0, 1.0]];
    let labels: Vec<usize> = (0..200).map(|i| i % 3).collect();
    let points: Vec<Vec<f64>> = labels
        .iter()
        .map(|&c| centres[c].iter().map(|x| x + rng.gen_range(-0.6..0.6)).collect())
        .collect();
    let s = segmentation::silhouette(&points, &labels, SilhouetteMetric::CosineDistance).unwrap();
    let r = silhouette_reference(&points, &labels);
    checks.push((format!("silhouette n=200 {s:.6} vs {r:.6}"), within(s, r, 1e-12)));

    let scores: Vec<f64> = (0..1000).map(|_| (rng.gen::<f64>() * 50.0).round() / 50.0).collect();
    let auc_labels: Vec<bool> = scores.iter().map(|s| rng.gen::<f64>() < 0.3 + 0.4 * s).collect();
    let a = metrics::pair_roc_auc(&scores, &auc_labels).unwrap();
    let r = auc_reference(&scores, &auc_labels);
    checks.push((format!("pair AUC n=1000 {a:.6} vs {r:.6}"), within(a, r, 1e-12)));

    let mut thr_ok = true;
    for _ in 0..50 {
        let n = rng.gen_range(5..60);
        let s: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 20.0).round() / 20.0).collect();
        let mut l: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        l[0] = true;
        l[1] = false;
        let best = lookalike::optimize_threshold(&lookalike::sweep_thresholds(&s, &l).unwrap()).unwrap();
        thr_ok &= within(best.f2, best_f2_reference(&s, &l), 1e-12);
    }
    checks.push(("optimize_threshold vs exhaustive midpoints (50 cases)".into(), thr_ok));

    let angles = [0.2, 1.6, 3.5];
    let pts: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            let a: f64 = angles[i % 3] + rng.gen_range(-0.3..0.3);
            let r: f64 = rng.gen_range(0.5..2.0);
            vec![r * a.cos(), r * a.sin()]
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut lab = vec![0usize; 12];
    for code in 0..3usize.pow(12) {
        let mut c = code;
        for l in lab.iter_mut() {
            *l = c % 3;
            c /= 3;
        }
        best = best.min(spherical_objective(&pts, &lab, 3));
    }
    let km = segmentation::kmeans(&pts, 3, 1, KMeansParams::default()).unwrap();
    checks.push((
        format!("k-means 12 points k=3 {:.9} vs exhaustive {best:.9}", km.inertia),
        within(km.inertia, best, 1e-9),
    ));

    let jsd = metrics::js_divergence(&dist(&[("a", 0.5), ("b", 0.5)]), &dist(&[("a", 1.0)])).unwrap();
    checks.push((format!("JSd {jsd:.5}"), within(jsd, 0.31128, 1e-5)));
    checks.push((format!("S {:.5}", 1.0 - jsd), within(1.0 - jsd, 0.68872, 1e-5)));
    let f2 = metrics::f2(0.02, 0.5);
    checks.push((format!("F2 {f2:.5}"), within(f2, 0.08621, 1e-5)));
    checks.push(("F2(1,1)=1, F2(1,0)=0".into(), metrics::f2(1.0, 1.0) == 1.0 && metrics::f2(1.0, 0.0) == 0.0));
    let rel: HashMap<&str, f64> = [("x", 0.0), ("y", 1.0)].into_iter().collect();
    let ndcg = metrics::ndcg(&["x", "y"], &rel, 2).unwrap();
    checks.push((format!("nDCG {ndcg:.5}"), within(ndcg, 0.63093, 1e-5)));
    let a: HashSet<u32> = [1, 2, 3].into_iter().collect();
    let b: HashSet<u32> = [2, 3, 4, 5].into_iter().collect();
    let ov = metrics::overlap_coefficient(&a, &b).unwrap();
    checks.push((format!("overlap {ov:.5}"), within(ov, 2.0 / 3.0, 1e-12)));
    let p = metrics::pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
    let pearson_ref = 5.0 / (2.0f64 * 114.0 / 9.0).sqrt();
    checks.push((
        format!("Pearson {p:.5} (hand-derived {pearson_ref:.5})"),
        within(p, pearson_ref, 1e-12) && within(p, 0.99340, 1e-5),
    ));
    let auc = metrics::pair_roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    checks.push((format!("AUC example {auc}"), within(auc, 0.75, 1e-12)));
    let one_d: Vec<Vec<f64>> = [0.0, 1.0, 9.0, 10.0].iter().map(|&x| vec![x]).collect();
    let sil = segmentation::silhouette(&one_d, &[0, 0, 1, 1], SilhouetteMetric::Euclidean).unwrap();
    let sil_ref = (2.0 * (1.0 - 1.0 / 9.5) + 2.0 * (1.0 - 1.0 / 8.5)) / 4.0;
    checks.push((
        format!("silhouette 1D {sil:.5} (hand-derived {sil_ref:.5})"),
        within(sil, sil_ref, 1e-12) && within(sil, 0.88854, 1e-5),
    ));
    let cos = metrics::cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
    checks.push((format!("cosine {cos:.5}"), within(cos, 0.70711, 1e-5)));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    verdict(
        6,
        "oracle identities",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks: {}", checks.len(), checks.iter().map(|c| c.0.as_str()).collect::<Vec<_>>().join("; "))
        } else {
            format!("failed: {}", failed.join("; "))
        },
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_07_lookalike_and_similarity_structure() {
    let start = Instant::now();
    let mut rng = seed::rng(7);
    let mut violations = 0usize;
    for _ in 0..200 {
        let n = rng.gen_range(1..300);
        let scores: BTreeMap<ConsumerId, f64> = (0..n)
            .map(|i| (ConsumerId(format!("c{i}")), rng.gen::<f64>()))
            .collect();
        let core: BTreeSet<ConsumerId> = scores.keys().filter(|_| rng.gen::<f64>() < 0.2).cloned().collect();
        let tau = rng.gen::<f64>();
        let l = lookalike::extract_lookalikes(scores.iter().map(|(k, v)| (k, *v)), &core, tau);
        violations += l.iter().filter(|id| core.contains(*id) || scores[*id] <= tau).count();
        let expected = scores.iter().filter(|(k, v)| **v > tau && !core.contains(*k)).count();
        violations += usize::from(expected != l.len());
    }

    let gen = GenConfig {
        n_consumers: 400,
        events_min: 5,
        events_max: 60,
        seed: 17,
        ..Default::default()
    };
    let data = datagen::generate(&gen).unwrap();
    let weights = AttributeWeights::default();
    let total_weight: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut max_asym: f64 = 0.0;
    let mut max_self: f64 = 0.0;
    for _ in 0..1000 {
        let a = &data.histories[rng.gen_range(0..data.histories.len())];
        let b = &data.histories[rng.gen_range(0..data.histories.len())];
        let ab = metrics::style_similarity(a, b, &weights, &STYLE_ATTRIBUTES, &data.catalog).unwrap();
        let ba = metrics::style_similarity(b, a, &weights, &STYLE_ATTRIBUTES, &data.catalog).unwrap();
        let aa = metrics::style_similarity(a, a, &weights, &STYLE_ATTRIBUTES, &data.catalog).unwrap();
        max_asym = max_asym.max((ab - ba).abs());
        max_self = max_self.max((aa - 1.0).abs());
    }
    let pass = violations == 0 && max_asym <= 1e-12 && max_self <= 1e-12 && within(total_weight, 1.0, 1e-12);
    verdict(
        7,
        "lookalike definition and style similarity structure",
        pass,
        format!(
            "200 random extractions, {violations} violations; 1000 history pairs: max |S(a,b)-S(b,a)| {max_asym:.1e}, max |S(a,a)-1| {max_self:.1e}"
        ),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_08_length_scale_fit() {
    let start = Instant::now();
    let mut rng = seed::rng(8);
    let normal = rand_distr::Normal::new(0.0, 0.05).unwrap();
    let pairs: Vec<(f64, f64)> = (0..20_000)
        .map(|_| {
            let d = rng.gen_range(0.0..6.0);
            let noise: f64 = rng.sample(normal);
            (d, (-d / 2.0f64).exp() * (1.0 + noise))
        })
        .collect();
    let fit = segmentation::fit_length_scale(&pairs, segmentation::LENGTH_SCALE_BINS).unwrap();
    verdict(
        8,
        "length-scale fit",
        within(fit.lambda, 2.0, 0.1),
        format!("λ = {:.4}, amplitude {:.4} from {} pairs", fit.lambda, fit.amplitude, pairs.len()),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_09_recommendation_guards() {
    let start = Instant::now();
    let gen = GenConfig {
        n_consumers: 500,
        n_skus: 400,
        events_min: 20,
        events_max: 60,
        items_per_prototype: 40,
        seed: 19,
        ..Default::default()
    };
    let data = datagen::generate(&gen).unwrap();
    let histories = truncate_recent(&data.histories, 40);
    let features = features_of(&data);
    let config = EncoderConfig {
        d_model: 16,
        n_layers: 1,
        d_ff: 32,
        max_seq_len: 40,
        ..EncoderConfig::next_item(5)
    };
    let (space, seqs) = tokenize_all(&config, &data.catalog, &histories, &features);
    let mut model = EncoderModel::new(config, space).unwrap();
    let params = TrainParams {
        epochs: 1,
        batch_size: 32,
        seed: 2,
        ..Default::default()
    };
    train_next_item(&mut model, &seqs, &params).unwrap();
    let emb = embeddings(&model, &seqs);
    let km = segmentation::kmeans(&emb, 5, 3, KMeansParams::default()).unwrap();
    let dists = segmentation::center_distances(&km, &emb).unwrap();
    let rep_params = RepItemParams {
        top_n: 30,
        ..Default::default()
    };
    let mut reps: Vec<Vec<segmentation::RepItem>> = Vec::new();
    for s in 0..5 {
        let members: Vec<SegmentMember> = (0..histories.len())
            .filter(|&i| km.assignments[i] == s)
            .map(|i| SegmentMember {
                history: &histories[i],
                gender: "all",
                distance: dists[i],
            })
            .collect();
        let rep = segmentation::representative_items(s, &members, &data.catalog, &rep_params).unwrap();
        reps.push(rep.lists.get("all").cloned().unwrap_or_default());
    }
    let base = NextItemRecommender::new(&model, &data.catalog).unwrap();
    let k = 10;
    let (mut identical, mut div_equal, mut dup_free) = (0usize, 0usize, 0usize);
    let n = histories.len();
    for (i, h) in histories.iter().enumerate() {
        let rep = &reps[km.assignments[i]];
        let id = &h.consumer_id;
        let cfg = |approach, fraction| RecConfig {
            approach,
            backfill_fraction: fraction,
            k,
            seed: 31,
            ..Default::default()
        };
        let base_recs = base.recommend(&h.events, &features[i], k).unwrap();
        let zero = recsys::recommend(id, &h.events, &features[i], rep, &base, &cfg(Approach::Backfill, 0.0)).unwrap();
        identical += usize::from(zero == base_recs);

        let replace = recsys::recommend(id, &h.events, &features[i], rep, &base, &cfg(Approach::Replace, 0.2)).unwrap();
        let rep_skus: Vec<Sku> = rep.iter().take(k).map(|r| r.sku.clone()).collect();
        let equal = [Attribute::Brand, Attribute::CommodityGroup].iter().all(|&a| {
                metrics::diversity(&replace, a, &data.catalog).unwrap()
                    == metrics::diversity(&rep_skus, a, &data.catalog).unwrap()
            });
        div_equal += usize::from(equal);

        let mut all_unique = true;
        for approach in Approach::ALL {
            for fraction in [0.0, 0.2, 0.5, 1.0] {
                let recs = recsys::recommend(id, &h.events, &features[i], rep, &base, &cfg(approach, fraction)).unwrap();
                let set: HashSet<&Sku> = recs.iter().collect();
                all_unique &= set.len() == recs.len() && recs.len() <= k;
            }
        }
        dup_free += usize::from(all_unique);
    }
    verdict(
        9,
        "recommendation guards",
        identical == n && div_equal == n && dup_free == n,
        format!(
            "{n} consumers: backfill 0 identical to base {identical}/{n}; replace diversity equals rep-item diversity {div_equal}/{n}; duplicate-free {dup_free}/{n}"
        ),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

fn pipeline_config(out: &Path) -> PipelineConfig {
    let value = serde_json::json!({
        "seed": 42,
        "out_dir": out,
        "gen": {"n_consumers": 800, "n_skus": 500, "events_min": 40, "events_max": 120,
                "designer_consumer_fraction": 0.05},
        "style": {"encoder": {"d_model": 32, "n_layers": 1, "d_ff": 64, "max_seq_len": 50},
                  "train": {"epochs": 1, "batch_size": 32},
                  "k": 5, "k_list": [4, 5], "n_pairs": 5000},
        "lookalike": {"dataset": {"window_len": 50, "eval_fraction": 0.2},
                      "encoder": {"d_model": 32, "n_layers": 1, "d_ff": 64, "max_seq_len": 50},
                      "train": {"epochs": 1, "batch_size": 32}}
    });
    PipelineConfig::from_value(value).unwrap()
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        unicon_cli::run_all(&pipeline_config(dir)).unwrap();
    }
    let mut compared = Vec::new();
    let mut differing = Vec::new();
    for name in ["segments.csv", "lookalikes.csv", "embedder.ckpt", "lookalike.ckpt"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        compared.push(format!("{name} ({} bytes)", x.len()));
        if x != y || x.is_empty() {
            differing.push(name);
        }
    }
    let lookalikes = lookalike::read_lookalikes(&a.path().join("lookalikes.csv")).unwrap();
    verdict(
        10,
        "end-to-end determinism",
        differing.is_empty(),
        format!(
            "byte-identical: {}; {} lookalikes; differing: {:?}",
            compared.join(", "),
            lookalikes.len(),
            differing
        ),
        start.elapsed(),
        Duration::from_secs(600),
    );
}
