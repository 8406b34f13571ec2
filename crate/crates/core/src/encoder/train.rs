//! Loss functions and training loops for both heads.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainParams;
use super::features::TokenSequence;
use super::model::{log_softmax_rows, softmax2, AttentionMode, EncoderModel};
use super::weights::{Adam, Weights};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
    pub wall_clock_secs: f64,
    pub seed: u64,
}

/// A classifier training example.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTokens {
    pub seq: TokenSequence,
    pub label: bool,
}

/// Balanced class weights `(negative, positive)`: `n / (2 * n_class)`.
pub fn class_weights(labels: &[bool]) -> Result<(f64, f64)> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::invalid("classifier data contains a single class"));
    }
    Ok((n / (2.0 * neg), n / (2.0 * pos)))
}

fn next_item_targets(seq: &TokenSequence) -> usize {
    seq.len().saturating_sub(1)
}

/// Forward/backward for next-item cross entropy on one sequence. Gradients are
/// scaled by `scale`; returns the summed (unscaled) loss.
fn next_item_step(
    model: &EncoderModel,
    seq: &TokenSequence,
    scale: f64,
    grads: Option<&mut Weights>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let n = seq.len();
    if n < 2 {
        return Ok(0.0);
    }
    let (out, cache) = model.run(seq, AttentionMode::Causal, true, rng)?;
    let logits = out.next_logits.expect("next logits requested");
    let logp = log_softmax_rows(&logits);
    let mut loss = 0.0;
    for i in 0..n - 1 {
        loss -= logp[[i, seq.tokens[i + 1].sku as usize]];
    }
    if let Some(g) = grads {
        let mut d: Array2<f64> = logp.mapv(f64::exp);
        d.row_mut(n - 1).fill(0.0);
        for i in 0..n - 1 {
            d[[i, seq.tokens[i + 1].sku as usize]] -= 1.0;
        }
        d *= scale;
        model.backward(seq, &cache, Some(&d), None, g);
    }
    Ok(loss)
}

fn classifier_step(
    model: &EncoderModel,
    seq: &TokenSequence,
    label: bool,
    weight: f64,
    scale: f64,
    grads: Option<&mut Weights>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let seq = model.prepare(seq, AttentionMode::Bidirectional);
    let (out, cache) = model.run(&seq, AttentionMode::Bidirectional, false, rng)?;
    let p = softmax2(out.class_logits);
    let y = label as usize;
    let m = out.class_logits[0].max(out.class_logits[1]);
    let lse = m + ((out.class_logits[0] - m).exp() + (out.class_logits[1] - m).exp()).ln();
    let loss = weight * (lse - out.class_logits[y]);
    if let Some(g) = grads {
        let mut d = p;
        d[y] -= 1.0;
        let f = weight * scale;
        model.backward(&seq, &cache, None, Some([d[0] * f, d[1] * f]), g);
    }
    Ok(loss)
}

/// Mean next-item cross entropy over all predicted positions.
pub fn next_item_loss(model: &EncoderModel, seqs: &[TokenSequence]) -> Result<f64> {
    let count: usize = seqs.iter().map(next_item_targets).sum();
    if count == 0 {
        return Err(Error::invalid("no next-item targets (sequences need at least 2 events)"));
    }
    let mut total = 0.0;
    for s in seqs {
        total += next_item_step(model, s, 0.0, None, None)?;
    }
    Ok(total / count as f64)
}

/// Next-item loss and its gradient (mean over predicted positions).
pub fn next_item_loss_and_grad(model: &EncoderModel, seqs: &[&TokenSequence]) -> Result<(f64, Weights)> {
    let mut grads = model.weights.zeros_like();
    let count: usize = seqs.iter().map(|s| next_item_targets(s)).sum();
    if count == 0 {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for s in seqs {
        total += next_item_step(model, s, scale, Some(&mut grads), None)?;
    }
    Ok((total * scale, grads))
}

/// Weighted mean cross entropy `sum(w * l) / sum(w)` of the classifier head.
pub fn weighted_classifier_loss(model: &EncoderModel, data: &[LabeledTokens], weights: &[f64]) -> Result<f64> {
    let wsum: f64 = weights.iter().sum();
    if data.is_empty() || !(wsum > 0.0) {
        return Err(Error::invalid("empty classifier batch"));
    }
    let mut total = 0.0;
    for (ex, &w) in data.iter().zip(weights) {
        total += classifier_step(model, &ex.seq, ex.label, w, 0.0, None, None)?;
    }
    Ok(total / wsum)
}

/// Classifier loss using the model's class-weighting setting.
pub fn classifier_loss(model: &EncoderModel, data: &[LabeledTokens]) -> Result<f64> {
    let w = example_weights(model, data)?;
    weighted_classifier_loss(model, data, &w)
}

/// Classifier loss and gradient with unit example weights.
pub fn classifier_loss_and_grad(model: &EncoderModel, data: &[&LabeledTokens]) -> Result<(f64, Weights)> {
    let mut grads = model.weights.zeros_like();
    if data.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / data.len() as f64;
    let mut total = 0.0;
    for ex in data {
        total += classifier_step(model, &ex.seq, ex.label, 1.0, scale, Some(&mut grads), None)?;
    }
    Ok((total * scale, grads))
}

fn example_weights(model: &EncoderModel, data: &[LabeledTokens]) -> Result<Vec<f64>> {
    let labels: Vec<bool> = data.iter().map(|e| e.label).collect();
    let (wn, wp) = class_weights(&labels)?;
    Ok(if model.config.class_weighting {
        labels.iter().map(|&l| if l { wp } else { wn }).collect()
    } else {
        vec![1.0; labels.len()]
    })
}

fn check_finite(model: &EncoderModel, loss: f64, epoch: usize, step: usize) -> Result<()> {
    if !loss.is_finite() || !model.weights.all_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss or weights at epoch {epoch}, step {step} (loss = {loss})"
        )));
    }
    Ok(())
}

/// Trains the next-item head with shuffled mini-batches and Adam.
pub fn train_next_item(model: &mut EncoderModel, seqs: &[TokenSequence], params: &TrainParams) -> Result<TrainReport> {
    params.validate()?;
    let trainable: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].len() >= 2).collect();
    if trainable.is_empty() {
        return Err(Error::invalid("no sequence has at least 2 events"));
    }
    let start = Instant::now();
    let frozen = model.frozen_mask();
    let mut adam = Adam::new(&model.weights, params.learning_rate, params.beta1, params.beta2, params.eps);
    let mut order_rng = seed::rng_for(params.seed, "batch-order");
    let mut drop_rng = seed::rng_for(params.seed, "dropout");
    let mut order = trainable;
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut steps = 0;
    for epoch in 0..params.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        for batch in order.chunks(params.batch_size) {
            let count: usize = batch.iter().map(|&i| next_item_targets(&seqs[i])).sum();
            let scale = 1.0 / count as f64;
            let mut grads = model.weights.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += next_item_step(model, &seqs[i], scale, Some(&mut grads), Some(&mut drop_rng))?;
            }
            check_finite(model, batch_loss, epoch, steps)?;
            adam.step(&mut model.weights, &mut grads, &frozen);
            steps += 1;
            check_finite(model, batch_loss, epoch, steps)?;
            loss_sum += batch_loss;
            loss_count += count;
        }
        epoch_losses.push(loss_sum / loss_count as f64);
    }
    model.trained.next_item = true;
    Ok(TrainReport {
        final_loss: *epoch_losses.last().expect("at least one epoch"),
        epoch_losses,
        steps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        seed: params.seed,
    })
}

/// Trains the CLS classifier head, class-weighted when the config asks for it.
pub fn train_classifier(
    model: &mut EncoderModel,
    data: &[LabeledTokens],
    params: &TrainParams,
) -> Result<TrainReport> {
    params.validate()?;
    if data.iter().any(|e| e.seq.is_empty()) {
        return Err(Error::invalid("empty sequence in classifier data"));
    }
    let weights = example_weights(model, data)?;
    let start = Instant::now();
    let frozen = model.frozen_mask();
    let mut adam = Adam::new(&model.weights, params.learning_rate, params.beta1, params.beta2, params.eps);
    let mut order_rng = seed::rng_for(params.seed, "batch-order");
    let mut drop_rng = seed::rng_for(params.seed, "dropout");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut steps = 0;
    for epoch in 0..params.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for batch in order.chunks(params.batch_size) {
            let wsum: f64 = batch.iter().map(|&i| weights[i]).sum();
            let scale = 1.0 / wsum;
            let mut grads = model.weights.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &data[i];
                batch_loss += classifier_step(
                    model,
                    &ex.seq,
                    ex.label,
                    weights[i],
                    scale,
                    Some(&mut grads),
                    Some(&mut drop_rng),
                )?;
            }
            check_finite(model, batch_loss, epoch, steps)?;
            adam.step(&mut model.weights, &mut grads, &frozen);
            steps += 1;
            check_finite(model, batch_loss, epoch, steps)?;
            loss_sum += batch_loss;
            weight_sum += wsum;
        }
        epoch_losses.push(loss_sum / weight_sum);
    }
    model.trained.classifier = true;
    Ok(TrainReport {
        final_loss: *epoch_losses.last().expect("at least one epoch"),
        epoch_losses,
        steps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        seed: params.seed,
    })
}
