use ndarray::Array2;

use crate::encoding::Task;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default class weights: 1 for every class except the cue pad class.
pub fn default_class_weights(task: Task) -> Vec<f64> {
    task.class_order()
        .iter()
        .map(|&l| if task == Task::Cue && l == task.pad_label() { 0.0 } else { 1.0 })
        .collect()
}

/// Positions that contribute to the loss, with their weight.
///
/// A position is skipped when its class weight is 0 or, if a mask is given,
/// when the mask is false. Skipped positions are never read.
pub fn active_positions<'a>(
    class_indices: &'a [usize],
    weights: &'a [f64],
    mask: Option<&'a [bool]>,
) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    class_indices.iter().enumerate().filter_map(move |(i, &c)| {
        let w = weights[c];
        let masked = mask.is_some_and(|m| !m[i]);
        (w != 0.0 && !masked).then_some((i, c, w))
    })
}

/// Weighted categorical cross entropy over `probs` rows:
/// Σ w[y]·(−ln max(p[y], floor)) / Σ w[y] over active positions, 0 if none.
pub fn weighted_ce_loss(probs: &Array2<f64>, class_indices: &[usize], weights: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let (sum, wsum) = weighted_ce_sums(probs, class_indices, weights, mask)?;
    Ok(if wsum > 0.0 { sum / wsum } else { 0.0 })
}

/// Unnormalized (Σ w·nll, Σ w), for normalizing across a batch.
pub fn weighted_ce_sums(
    probs: &Array2<f64>,
    class_indices: &[usize],
    weights: &[f64],
    mask: Option<&[bool]>,
) -> Result<(f64, f64)> {
    if class_indices.len() > probs.nrows() {
        return Err(Error::Input(format!(
            "{} labels for {} probability rows",
            class_indices.len(),
            probs.nrows()
        )));
    }
    if weights.len() != probs.ncols() {
        return Err(Error::Input(format!(
            "{} class weights for {} classes",
            weights.len(),
            probs.ncols()
        )));
    }
    if let Some(&c) = class_indices.iter().find(|&&c| c >= weights.len()) {
        return Err(Error::Input(format!("class index {c} out of range")));
    }
    if mask.is_some_and(|m| m.len() < class_indices.len()) {
        return Err(Error::Input("mask shorter than labels".into()));
    }
    let mut sum = 0.0;
    let mut wsum = 0.0;
    for (i, c, w) in active_positions(class_indices, weights, mask) {
        sum += w * -probs[[i, c]].max(PROB_FLOOR).ln();
        wsum += w;
    }
    Ok((sum, wsum))
}
