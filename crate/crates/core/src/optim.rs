//! Gradient descent over the trainable blocks, full-batch or per-sample.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::datasets::{label_of, Dataset, Task};
use crate::error::{Error, Result};
use crate::grad::{grad_sample, loss_value, GradBundle};
use crate::loss::LossSpec;
use crate::model::{Block, Model};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// One update per epoch with the averaged gradient.
    Full,
    /// One update per sample, in a freshly shuffled order each epoch.
    Stochastic,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Full => "full",
            TrainMode::Stochastic => "stochastic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(TrainMode::Full),
            "stochastic" => Some(TrainMode::Stochastic),
            _ => None,
        }
    }
}

fn checked(g: GradBundle, sample: usize) -> Result<GradBundle> {
    match g.non_finite_block() {
        Some(b) => Err(Error::NonFiniteGradient {
            sample,
            block: b.name(),
        }),
        None => Ok(g),
    }
}

/// Gradient of one sample with error context attached.
pub fn sample_gradient(model: &Model, loss: &LossSpec, data: &Dataset, i: usize, cfg: &SolverConfig) -> Result<GradBundle> {
    let g = grad_sample(model, loss, &data.inputs[i], &data.targets[i], cfg).map_err(|e| e.in_sample(i, "adjoint"))?;
    checked(g, i)
}

/// Averaged gradient over the whole dataset. Per-sample work runs in
/// parallel; the reduction is sequential in sample order, so the result does
/// not depend on scheduling.
pub fn batch_gradient(model: &Model, loss: &LossSpec, data: &Dataset, cfg: &SolverConfig) -> Result<GradBundle> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let grads: Vec<GradBundle> = (0..data.len())
        .into_par_iter()
        .map(|i| sample_gradient(model, loss, data, i, cfg))
        .collect::<Result<_>>()?;
    let mut total = GradBundle::zeros_like(model);
    for g in &grads {
        total.add_assign(g);
    }
    total.scale(1.0 / data.len() as f64);
    Ok(total)
}

/// `θ ← θ − η·g` on every trainable block, then projection onto the
/// admissible set.
pub fn gd_step(model: &mut Model, g: &GradBundle, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {eta}")));
    }
    for b in Block::ALL {
        if !model.train.get(b) {
            continue;
        }
        let updated: Vec<f64> = model.block(b).iter().zip(g.block(b)).map(|(t, d)| t - eta * d).collect();
        model.set_block(b, &updated)?;
    }
    model.project();
    Ok(())
}

/// One full-batch update; returns the mean loss before the update.
pub fn gd_epoch(model: &mut Model, loss: &LossSpec, data: &Dataset, eta: f64, cfg: &SolverConfig) -> Result<f64> {
    let g = batch_gradient(model, loss, data, cfg)?;
    gd_step(model, &g, eta)?;
    Ok(g.loss)
}

/// One pass of per-sample updates in shuffled order; returns the mean of
/// the per-sample losses seen along the way.
pub fn sgd_epoch<R: Rng>(model: &mut Model, loss: &LossSpec, data: &Dataset, eta: f64, cfg: &SolverConfig, rng: &mut R) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for i in order {
        let g = sample_gradient(model, loss, data, i, cfg)?;
        total += g.loss;
        gd_step(model, &g, eta)?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean loss including the regularizer.
    pub mean_loss: f64,
    /// Mean of `‖ŷ − y‖²` over samples.
    pub mse: f64,
    /// Fraction of correct labels; `None` for regression.
    pub accuracy: Option<f64>,
}

/// Loss, squared error and accuracy over a dataset from forward solves only.
pub fn evaluate(model: &Model, loss: &LossSpec, data: &Dataset, cfg: &SolverConfig) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let rows: Vec<(f64, f64, bool)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (u, y) = (&data.inputs[i], &data.targets[i]);
            let l = loss_value(model, loss, u, y, cfg).map_err(|e| e.in_sample(i, "forward"))?;
            let y_hat = model.predict(u, cfg).map_err(|e| e.in_sample(i, "forward"))?;
            let se: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((l, se, label_of(&y_hat) == label_of(y)))
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let mean_loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mse = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let accuracy = match data.task {
        Task::Classification => Some(rows.iter().filter(|r| r.2).count() as f64 / n),
        Task::Regression => None,
    };
    Ok(Metrics {
        mean_loss,
        mse,
        accuracy,
    })
}
