//! Brute-force k-nearest-neighbor classifier, the comparison baseline for
//! the disc classification experiment.

use crate::data::{argmax, Dataset, Task};
use crate::error::{Error, Result};
use rayon::prelude::*;

fn label_id(target: &[f64], task: Task) -> Result<usize> {
    match task {
        Task::Binary => Ok(if target[0] >= 0.5 { 1 } else { 0 }),
        Task::Multiclass => Ok(argmax(target)),
        Task::Regression => Err(Error::UnsupportedTask(
            "nearest-neighbor voting needs discrete labels".into(),
        )),
    }
}

fn label_vec(id: usize, dim: usize, task: Task) -> Vec<f64> {
    match task {
        Task::Binary => vec![id as f64],
        _ => {
            let mut v = vec![0.0; dim];
            v[id] = 1.0;
            v
        }
    }
}

/// Majority label among the k training points nearest to `query` (Euclidean
/// distance; ties on distance go to the lower sample index, voting ties to
/// the lower label id — impossible for odd k on binary tasks).
pub fn knn_predict(train: &Dataset, query: &[f64], k: usize) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::EmptyBatch("knn over an empty training set".into()));
    }
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be odd and positive"
        )));
    }
    if k > train.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} training samples",
            train.len()
        )));
    }
    if query.len() != train.input_dim() {
        return Err(Error::Shape(format!(
            "query has dimension {}, training data has {}",
            query.len(),
            train.input_dim()
        )));
    }
    let mut dist: Vec<(f64, usize)> = train
        .inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let d2: f64 = x
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2, i)
        })
        .collect();
    dist.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));

    let mut votes = std::collections::BTreeMap::new();
    for &(_, i) in dist.iter().take(k) {
        let id = label_id(&train.targets[i], train.task)?;
        *votes.entry(id).or_insert(0usize) += 1;
    }
    // BTreeMap iterates labels in ascending order, so strict > breaks
    // voting ties toward the lower label id.
    let mut best = (usize::MAX, 0usize);
    for (&id, &count) in &votes {
        if count > best.1 {
            best = (id, count);
        }
    }
    Ok(label_vec(best.0, train.target_dim(), train.task))
}

/// Evaluate the classifier on a validation set, returning the halved mean
/// squared error of the hard predictions and the accuracy.
pub fn knn_evaluate(train: &Dataset, val: &Dataset, k: usize) -> Result<(f64, f64)> {
    let preds: Vec<Vec<f64>> = val
        .inputs
        .par_iter()
        .map(|q| knn_predict(train, q, k))
        .collect::<Result<_>>()?;
    let loss = crate::adjoint::minibatch_loss(&preds, &val.targets)?;
    let acc = crate::data::accuracy(&preds, &val.targets, val.task)?;
    Ok((loss, acc))
}
