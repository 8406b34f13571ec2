//! Finite-difference verification of the analytic gradients.

use rand::Rng;

use super::features::TokenSequence;
use super::model::EncoderModel;
use super::train::{classifier_loss_and_grad, next_item_loss_and_grad, LabeledTokens};
use crate::error::Result;
use crate::seed;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn checked_tensors(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.entries.iter().map(|e| e.tensor.as_str()).collect();
        names.dedup();
        names
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn combined_loss(model: &EncoderModel, next: &[&TokenSequence], class: &[&LabeledTokens]) -> Result<f64> {
    Ok(next_item_loss_and_grad(model, next)?.0 + classifier_loss_and_grad(model, class)?.0)
}

/// Compares analytic gradients of the summed next-item and classifier losses
/// with central differences on `per_tensor` random entries of each unfrozen
/// tensor.
pub fn grad_check(
    model: &EncoderModel,
    next: &[TokenSequence],
    class: &[LabeledTokens],
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let next: Vec<&TokenSequence> = next.iter().collect();
    let class: Vec<&LabeledTokens> = class.iter().collect();
    let (_, g1) = next_item_loss_and_grad(model, &next)?;
    let (_, g2) = classifier_loss_and_grad(model, &class)?;
    let analytic: Vec<ndarray::Array2<f64>> = g1
        .named()
        .into_iter()
        .zip(g2.named())
        .map(|((_, a), (_, b))| a + b)
        .collect();

    let mut rng = seed::rng_for(seed, "grad-check");
    let mut probe = model.clone();
    let mut entries = Vec::new();
    let names = model.weights.names();
    for (ti, name) in names.iter().enumerate() {
        if model.frozen.contains(name) {
            continue;
        }
        let shape = analytic[ti].dim();
        for _ in 0..per_tensor {
            let idx = (rng.gen_range(0..shape.0), rng.gen_range(0..shape.1));
            let orig = probe.weights.tensors_mut()[ti][idx];
            probe.weights.tensors_mut()[ti][idx] = orig + FD_STEP;
            let plus = combined_loss(&probe, &next, &class)?;
            probe.weights.tensors_mut()[ti][idx] = orig - FD_STEP;
            let minus = combined_loss(&probe, &next, &class)?;
            probe.weights.tensors_mut()[ti][idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[ti][idx];
            entries.push(GradCheckEntry {
                tensor: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, entries })
}
