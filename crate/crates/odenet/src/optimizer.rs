//! Minibatch gradient descent over parameter paths.
//!
//! One epoch shuffles the sample indices, partitions them into batches, and
//! for each batch in turn runs forward simulation, the backward adjoint,
//! gradient assembly, and a parameter update (plain or momentum). Batches
//! are strictly sequential; per-sample work inside a batch is parallel with
//! a fixed reduction order, so a seed pins the entire run bitwise.
//!
//! Training stops after `max_epochs`, or earlier once the largest per-family
//! Frobenius change of the parameters over an epoch drops below `eta_stop`
//! (0 disables the rule).

use crate::adjoint::{adjoint_backward, assemble_gradients, minibatch_loss, AdjointPath};
use crate::data::{accuracy, Dataset, Task};
use crate::error::{Error, Result};
use crate::forward::{batch_forward, Trajectory};
use crate::model::{Gradients, OdeNetSpec, ParamPath};
use crate::rng::Rng;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Sgd,
    Momentum,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s.trim() {
            "sgd" => Ok(Method::Sgd),
            "momentum" => Ok(Method::Momentum),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerConfig {
    /// Learning rate τ.
    pub tau: f64,
    /// Momentum rate τ₁ in [0, 1); ignored by plain SGD.
    pub tau1: f64,
    /// Stopping threshold η on the per-epoch parameter change; 0 disables.
    pub eta_stop: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Seed of the shuffle generator.
    pub seed: u64,
    pub method: Method,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate tau = {} must be positive",
                self.tau
            )));
        }
        if !(0.0..1.0).contains(&self.tau1) {
            return Err(Error::InvalidArgument(format!(
                "momentum rate tau1 = {} outside [0, 1)",
                self.tau1
            )));
        }
        if self.eta_stop < 0.0 || !self.eta_stop.is_finite() {
            return Err(Error::InvalidArgument("eta_stop must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamPath,
    /// Parameters before the most recent update; the momentum buffer.
    pub prev_params: ParamPath,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Shuffled disjoint cover of 0..k in batches of `batch_size` (the last one
/// possibly smaller).
pub fn partition_batches(k: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..k).collect();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}

/// params - τ·grads, every family at every grid index.
pub fn sgd_step(params: &ParamPath, grads: &Gradients, tau: f64) -> Result<ParamPath> {
    let mut next = params.clone();
    apply_sgd(&mut next, grads, tau)?;
    Ok(next)
}

/// params - τ·grads + τ₁·(params - prev_params).
pub fn momentum_step(
    params: &ParamPath,
    prev_params: &ParamPath,
    grads: &Gradients,
    tau: f64,
    tau1: f64,
) -> Result<ParamPath> {
    let mut next = params.clone();
    apply_momentum(&mut next, params, prev_params, grads, tau, tau1)?;
    Ok(next)
}

fn check_grad_shape(params: &ParamPath, grads: &Gradients) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameter samples vs {} gradient samples",
            params.len(),
            grads.len()
        )));
    }
    for l in 0..params.len() {
        if params.alpha[l].len() != grads.g_alpha[l].len()
            || params.gamma[l].len() != grads.g_gamma[l].len()
            || params.beta[l].rows() != grads.g_beta[l].rows()
            || params.beta[l].cols() != grads.g_beta[l].cols()
        {
            return Err(Error::Shape(format!("gradient shape differs at index {l}")));
        }
    }
    Ok(())
}

fn apply_sgd(params: &mut ParamPath, grads: &Gradients, tau: f64) -> Result<()> {
    check_grad_shape(params, grads)?;
    for l in 0..params.len() {
        for (p, g) in params.alpha[l].iter_mut().zip(&grads.g_alpha[l]) {
            *p -= tau * g;
        }
        for (p, g) in params.beta[l]
            .data_mut()
            .iter_mut()
            .zip(grads.g_beta[l].data())
        {
            *p -= tau * g;
        }
        for (p, g) in params.gamma[l].iter_mut().zip(&grads.g_gamma[l]) {
            *p -= tau * g;
        }
    }
    Ok(())
}

/// Writes the updated parameters into `out` (which may alias the momentum
/// buffer being consumed, since each entry is read before it is written).
fn apply_momentum(
    out: &mut ParamPath,
    params: &ParamPath,
    prev: &ParamPath,
    grads: &Gradients,
    tau: f64,
    tau1: f64,
) -> Result<()> {
    check_grad_shape(params, grads)?;
    if prev.len() != params.len() {
        return Err(Error::Shape("prev_params length mismatch".into()));
    }
    for l in 0..params.len() {
        for i in 0..params.alpha[l].len() {
            let p = params.alpha[l][i];
            out.alpha[l][i] = p - tau * grads.g_alpha[l][i] + tau1 * (p - prev.alpha[l][i]);
        }
        let (pb, gb) = (params.beta[l].data(), grads.g_beta[l].data());
        let prevb = prev.beta[l].data();
        let ob = out.beta[l].data_mut();
        for i in 0..pb.len() {
            ob[i] = pb[i] - tau * gb[i] + tau1 * (pb[i] - prevb[i]);
        }
        for i in 0..params.gamma[l].len() {
            let p = params.gamma[l][i];
            out.gamma[l][i] = p - tau * grads.g_gamma[l][i] + tau1 * (p - prev.gamma[l][i]);
        }
    }
    Ok(())
}

/// Forward + adjoint + assembly for one batch with plain y_L residuals.
fn batch_gradients(
    spec: &OdeNetSpec,
    params: &ParamPath,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<Gradients> {
    let b = inputs.len();
    let trajs = batch_forward(spec, params, inputs)?;
    let residuals: Vec<Vec<f64>> = trajs
        .iter()
        .zip(targets)
        .map(|(traj, f)| {
            traj.y
                .last()
                .expect("nonempty trajectory")
                .iter()
                .zip(f)
                .map(|(y, t)| y - t)
                .collect()
        })
        .collect();
    let adjoints: Vec<AdjointPath> = trajs
        .par_iter()
        .zip(residuals.par_iter())
        .enumerate()
        .map(|(k, (traj, res))| {
            adjoint_backward(spec, params, traj, res, b).map_err(|e| e.with_sample(k))
        })
        .collect::<Result<_>>()?;
    assemble_gradients(spec, params, &trajs, &adjoints, &residuals, b)
}

fn predictions(trajs: &[Trajectory]) -> Vec<Vec<f64>> {
    trajs
        .iter()
        .map(|t| t.y.last().expect("nonempty trajectory").clone())
        .collect()
}

fn eval_metrics(
    spec: &OdeNetSpec,
    params: &ParamPath,
    ds: &Dataset,
) -> Result<(f64, Option<f64>)> {
    let trajs = batch_forward(spec, params, &ds.inputs)?;
    let preds = predictions(&trajs);
    let loss = minibatch_loss(&preds, &ds.targets)?;
    let acc = match ds.task {
        Task::Regression => None,
        task => Some(accuracy(&preds, &ds.targets, task)?),
    };
    Ok((loss, acc))
}

/// Run the epoch loop. `on_epoch` observes each record as soon as it is
/// complete (the metrics CSV writer hooks in here and flushes per epoch).
pub fn train(
    spec: &OdeNetSpec,
    init: &ParamPath,
    dataset: &Dataset,
    valset: Option<&Dataset>,
    cfg: &OptimizerConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    init.validate(spec)?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyBatch("training dataset is empty".into()));
    }
    if dataset.input_dim() != spec.input_dim() || dataset.target_dim() != spec.output_dim() {
        return Err(Error::Shape(format!(
            "dataset is {}->{}, spec is {}->{}",
            dataset.input_dim(),
            dataset.target_dim(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    if let Some(val) = valset {
        val.validate()?;
    }

    let mut rng = Rng::seed_from(cfg.seed);
    let mut params = init.clone();
    let mut prev_params = init.clone();
    let mut scratch = init.clone();
    let mut history = Vec::new();
    let mut completed = 0;

    for epoch in 1..=cfg.max_epochs {
        let epoch_start = params.clone();
        let batches = partition_batches(dataset.len(), cfg.batch_size, &mut rng);
        for (bi, batch) in batches.iter().enumerate() {
            let inputs: Vec<Vec<f64>> =
                batch.iter().map(|&k| dataset.inputs[k].clone()).collect();
            let targets: Vec<Vec<f64>> =
                batch.iter().map(|&k| dataset.targets[k].clone()).collect();
            let grads = batch_gradients(spec, &params, &inputs, &targets)
                .map_err(|e| e.with_epoch_batch(epoch, bi))?;
            match cfg.method {
                Method::Sgd => {
                    prev_params.clone_from(&params);
                    apply_sgd(&mut params, &grads, cfg.tau)?;
                }
                Method::Momentum => {
                    apply_momentum(
                        &mut scratch,
                        &params,
                        &prev_params,
                        &grads,
                        cfg.tau,
                        cfg.tau1,
                    )?;
                    std::mem::swap(&mut prev_params, &mut params);
                    std::mem::swap(&mut params, &mut scratch);
                }
            }
        }

        let (train_loss, train_acc) = eval_metrics(spec, &params, dataset)
            .map_err(|e| e.with_epoch_batch(epoch, usize::MAX))?;
        let (val_loss, val_acc) = match valset {
            Some(val) => {
                let (l, a) = eval_metrics(spec, &params, val)
                    .map_err(|e| e.with_epoch_batch(epoch, usize::MAX))?;
                (Some(l), a)
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_acc,
            val_acc,
        };
        on_epoch(&record)?;
        history.push(record);
        completed = epoch;

        if cfg.eta_stop > 0.0 {
            let (da, db, dg) = params.family_deltas(&epoch_start)?;
            if da.max(db).max(dg) < cfg.eta_stop {
                break;
            }
        }
    }

    Ok(TrainState {
        params,
        prev_params,
        epoch: completed,
        history,
    })
}
