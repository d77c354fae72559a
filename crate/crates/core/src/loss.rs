//! Output losses and the loss configuration used for training.

use crate::error::{check_len, Error, Result};

/// Default weight of the terminal-field regularizer.
pub const DEFAULT_GAMMA: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputLoss {
    /// `½‖ŷ − y‖²`
    Quadratic,
    /// `−Σ yᵢ log softmax(ŷ)ᵢ` on one-hot targets.
    CrossEntropy,
}

fn check_finite(what: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(what))
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|a| (a - lse).exp()).collect()
}

impl OutputLoss {
    pub fn value(self, y_hat: &[f64], y: &[f64]) -> Result<f64> {
        check_len("target", y_hat.len(), y.len())?;
        check_finite("prediction", y_hat)?;
        check_finite("target", y)?;
        Ok(match self {
            OutputLoss::Quadratic => 0.5 * y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            OutputLoss::CrossEntropy => {
                let lse = log_sum_exp(y_hat);
                -y_hat.iter().zip(y).map(|(a, t)| t * (a - lse)).sum::<f64>()
            }
        })
    }

    /// `∂ℓ/∂ŷ`.
    pub fn grad(self, y_hat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_len("target", y_hat.len(), y.len())?;
        check_finite("prediction", y_hat)?;
        check_finite("target", y)?;
        Ok(match self {
            OutputLoss::Quadratic => y_hat.iter().zip(y).map(|(a, b)| a - b).collect(),
            OutputLoss::CrossEntropy => {
                let total: f64 = y.iter().sum();
                softmax(y_hat).iter().zip(y).map(|(p, t)| total * p - t).collect()
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputLoss::Quadratic => "quadratic",
            OutputLoss::CrossEntropy => "cross_entropy",
        }
    }
}

/// What the running cost of a back-propagated loss is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageTarget {
    /// `g(h_y(x(τ)), y)`
    Output,
    /// `g(x(τ), y)`; needs `n_y = n_x`.
    State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `ℓ = g(h_y(x(S)), y)`
    Terminal(OutputLoss),
    /// `ℓ = ∫₀ˢ g dτ`
    Backprop { stage: OutputLoss, on: StageTarget },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight of `(γ/2)‖f(x(S))‖²`.
    pub gamma: f64,
}

impl LossSpec {
    pub fn terminal(loss: OutputLoss, gamma: f64) -> Self {
        Self {
            kind: LossKind::Terminal(loss),
            gamma,
        }
    }

    pub fn backprop(stage: OutputLoss, gamma: f64) -> Self {
        Self {
            kind: LossKind::Backprop {
                stage,
                on: StageTarget::Output,
            },
            gamma,
        }
    }

    pub fn output_loss(&self) -> OutputLoss {
        match self.kind {
            LossKind::Terminal(l) => l,
            LossKind::Backprop { stage, .. } => stage,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.kind, LossKind::Terminal(_))
    }

    pub fn validate(&self, n_x: usize, n_y: usize) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        let width = match self.kind {
            LossKind::Backprop {
                on: StageTarget::State,
                ..
            } => {
                if n_y != n_x {
                    return Err(Error::InvalidArgument(format!(
                        "a running cost on the raw state needs n_y = n_x, got {n_y} and {n_x}"
                    )));
                }
                n_x
            }
            _ => n_y,
        };
        if self.output_loss() == OutputLoss::CrossEntropy && width < 2 {
            return Err(Error::InvalidArgument("cross-entropy needs at least two outputs".into()));
        }
        Ok(())
    }
}

/// Checks that `y` is a valid one-hot vector.
pub fn is_one_hot(y: &[f64]) -> bool {
    y.iter().all(|&v| v == 0.0 || v == 1.0) && y.iter().filter(|&&v| v == 1.0).count() == 1
}
