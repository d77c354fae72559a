//! Per-sample loss gradients for every trainable block.
//!
//! Terminal cost: `λ(S) = ∂ℓ/∂x(S)`, `dℓ/dw = μ(0)`, `dℓ/dS = λ(S)·f(x(S))`.
//! Back-propagated cost: `λ(S)` carries only the regularizer seed, the
//! running cost enters the costate equation, and `dℓ/dS = g(x(S)) + λ(S)·f(x(S))`.
//! In both settings `dℓ/dv_u = λ(0)ᵀ ∂h_u/∂v_u`.

use crate::adjoint::{solve_adjoint, solve_forward, FlowSystem, StageCost, StageEval};
use crate::affine::Projection;
use crate::dynamics::FieldSpec;
use crate::error::{check_len, Result};
use crate::loss::{LossKind, LossSpec, OutputLoss, StageTarget};
use crate::model::{Block, Model, TrainFlags};
use crate::solver::{integrate, OdeSystem, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub loss: f64,
    pub g_w: Vec<f64>,
    pub g_vu: Vec<f64>,
    pub g_vy: Vec<f64>,
    pub g_s: f64,
    /// `‖x_backward(0) − x(0)‖∞` from the adjoint pass.
    pub drift: f64,
}

impl GradBundle {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            loss: 0.0,
            g_w: vec![0.0; model.block_len(Block::W)],
            g_vu: vec![0.0; model.block_len(Block::Vu)],
            g_vy: vec![0.0; model.block_len(Block::Vy)],
            g_s: 0.0,
            drift: 0.0,
        }
    }

    pub fn block(&self, b: Block) -> &[f64] {
        match b {
            Block::W => &self.g_w,
            Block::Vu => &self.g_vu,
            Block::Vy => &self.g_vy,
            Block::Horizon => std::slice::from_ref(&self.g_s),
        }
    }

    fn block_mut(&mut self, b: Block) -> &mut [f64] {
        match b {
            Block::W => &mut self.g_w,
            Block::Vu => &mut self.g_vu,
            Block::Vy => &mut self.g_vy,
            Block::Horizon => std::slice::from_mut(&mut self.g_s),
        }
    }

    /// Zeroes every block whose trainable flag is off.
    pub fn mask(&mut self, flags: TrainFlags) {
        for b in Block::ALL {
            if !flags.get(b) {
                self.block_mut(b).iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// First block holding a non-finite entry, if any.
    pub fn non_finite_block(&self) -> Option<Block> {
        Block::ALL
            .into_iter()
            .find(|&b| self.block(b).iter().any(|v| !v.is_finite()))
    }

    pub fn add_assign(&mut self, o: &GradBundle) {
        self.loss += o.loss;
        for b in Block::ALL {
            for (a, v) in self.block_mut(b).iter_mut().zip(o.block(b)) {
                *a += v;
            }
        }
        self.drift = self.drift.max(o.drift);
    }

    pub fn scale(&mut self, k: f64) {
        self.loss *= k;
        for b in Block::ALL {
            self.block_mut(b).iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// `(γ/2)‖f(x(S))‖²`.
pub fn regularizer(field: &FieldSpec, u: &[f64], w: &[f64], x_s: &[f64], gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let f = field.eval(u, x_s, w)?;
    Ok(0.5 * gamma * f.iter().map(|v| v * v).sum::<f64>())
}

/// Adds the terminal-field regularizer to a base loss value.
pub fn loss_regularized(model: &Model, loss: &LossSpec, u: &[f64], x_s: &[f64], base: f64) -> Result<f64> {
    Ok(base + regularizer(&model.field, u, &model.w, x_s, loss.gamma)?)
}

/// `dℓ/dS` for a terminal cost: `(∂ℓ/∂x(S))·f(x(S))`.
pub fn grad_horizon(field: &FieldSpec, u: &[f64], w: &[f64], loss_grad_xs: &[f64], x_s: &[f64]) -> Result<f64> {
    let f = field.eval(u, x_s, w)?;
    check_len("terminal costate", f.len(), loss_grad_xs.len())?;
    Ok(loss_grad_xs.iter().zip(&f).map(|(a, b)| a * b).sum())
}

/// Running cost evaluated on the projected output (or the raw state).
pub(crate) struct ProjectedStage<'a> {
    pub loss: OutputLoss,
    pub on: StageTarget,
    pub h_y: &'a Projection,
    pub y: &'a [f64],
    pub track_vy: bool,
}

impl StageCost for ProjectedStage<'_> {
    fn n_vy(&self) -> usize {
        if self.track_vy && self.on == StageTarget::Output {
            self.h_y.param_count()
        } else {
            0
        }
    }

    fn eval(&self, x: &[f64]) -> Result<StageEval> {
        match self.on {
            StageTarget::State => Ok(StageEval {
                g: self.loss.value(x, self.y)?,
                grad_x: self.loss.grad(x, self.y)?,
                grad_vy: Vec::new(),
            }),
            StageTarget::Output => {
                let y_hat = self.h_y.apply(x)?;
                let gy = self.loss.grad(&y_hat, self.y)?;
                let grad_vy = if self.n_vy() > 0 {
                    self.h_y.vjp_params(x, &gy)?
                } else {
                    Vec::new()
                };
                Ok(StageEval {
                    g: self.loss.value(&y_hat, self.y)?,
                    grad_x: self.h_y.vjp_input(&gy)?,
                    grad_vy,
                })
            }
        }
    }
}

/// Regularizer contributions at `x(S)`: value, `λ(S)` seed, direct `w` term,
/// and the field value itself.
struct TerminalReg {
    value: f64,
    lambda: Vec<f64>,
    g_w: Vec<f64>,
    f: Vec<f64>,
}

fn terminal_regularizer(model: &Model, u: &[f64], x_s: &[f64], gamma: f64) -> Result<TerminalReg> {
    let f = model.field.eval(u, x_s, &model.w)?;
    if gamma == 0.0 {
        return Ok(TerminalReg {
            value: 0.0,
            lambda: vec![0.0; f.len()],
            g_w: vec![0.0; model.w.len()],
            f,
        });
    }
    let p = model.field.products(u, x_s, &model.w, &f, true)?;
    Ok(TerminalReg {
        value: 0.5 * gamma * f.iter().map(|v| v * v).sum::<f64>(),
        lambda: p.vjp_x.iter().map(|v| gamma * v).collect(),
        g_w: p.vjp_w.iter().map(|v| gamma * v).collect(),
        f,
    })
}

fn drift(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Terminal-cost gradients via the adjoint system.
pub fn grad_terminal(model: &Model, loss: &LossSpec, u: &[f64], y: &[f64], cfg: &SolverConfig) -> Result<GradBundle> {
    let out = match loss.kind {
        LossKind::Terminal(l) => l,
        LossKind::Backprop { .. } => return grad_backprop(model, loss, u, y, cfg),
    };
    let x0 = model.initial_state(u)?;
    let x_s = solve_forward(&model.field, u, &model.w, &x0, model.horizon, cfg, false)?
        .last_state()
        .to_vec();
    let y_hat = model.h_y.apply(&x_s)?;
    let base = out.value(&y_hat, y)?;
    let gy = out.grad(&y_hat, y)?;
    let reg = terminal_regularizer(model, u, &x_s, loss.gamma)?;
    let lambda_s: Vec<f64> = model
        .h_y
        .vjp_input(&gy)?
        .iter()
        .zip(&reg.lambda)
        .map(|(a, b)| a + b)
        .collect();
    let adj = solve_adjoint(&model.field, u, &model.w, &x_s, &lambda_s, model.horizon, cfg, None)?;
    let mut g = GradBundle {
        loss: base + reg.value,
        g_w: adj.mu0.iter().zip(&reg.g_w).map(|(a, b)| a + b).collect(),
        g_vu: model.h_u.vjp_params(u, &adj.lambda0)?,
        g_vy: model.h_y.vjp_params(&x_s, &gy)?,
        g_s: lambda_s.iter().zip(&reg.f).map(|(a, b)| a * b).sum(),
        drift: drift(&adj.x0, &x0),
    };
    g.mask(model.train);
    Ok(g)
}

/// Back-propagated (integral) cost gradients; the running cost itself is
/// accumulated by the same backward pass.
pub fn grad_backprop(model: &Model, loss: &LossSpec, u: &[f64], y: &[f64], cfg: &SolverConfig) -> Result<GradBundle> {
    let (stage_loss, on) = match loss.kind {
        LossKind::Backprop { stage, on } => (stage, on),
        LossKind::Terminal(_) => return grad_terminal(model, loss, u, y, cfg),
    };
    let x0 = model.initial_state(u)?;
    let x_s = solve_forward(&model.field, u, &model.w, &x0, model.horizon, cfg, false)?
        .last_state()
        .to_vec();
    let reg = terminal_regularizer(model, u, &x_s, loss.gamma)?;
    let stage = ProjectedStage {
        loss: stage_loss,
        on,
        h_y: &model.h_y,
        y,
        track_vy: model.train.v_y,
    };
    let adj = solve_adjoint(&model.field, u, &model.w, &x_s, &reg.lambda, model.horizon, cfg, Some(&stage))?;
    let g_end = stage.eval(&x_s)?.g;
    let mut g_vy = adj.vy_grad;
    g_vy.resize(model.h_y.param_count(), 0.0);
    let mut g = GradBundle {
        loss: adj.running_cost + reg.value,
        g_w: adj.mu0.iter().zip(&reg.g_w).map(|(a, b)| a + b).collect(),
        g_vu: model.h_u.vjp_params(u, &adj.lambda0)?,
        g_vy,
        g_s: g_end + reg.lambda.iter().zip(&reg.f).map(|(a, b)| a * b).sum::<f64>(),
        drift: drift(&adj.x0, &x0),
    };
    g.mask(model.train);
    Ok(g)
}

/// Dispatches on the loss kind.
pub fn grad_sample(model: &Model, loss: &LossSpec, u: &[f64], y: &[f64], cfg: &SolverConfig) -> Result<GradBundle> {
    match loss.kind {
        LossKind::Terminal(_) => grad_terminal(model, loss, u, y, cfg),
        LossKind::Backprop { .. } => grad_backprop(model, loss, u, y, cfg),
    }
}

/// Forward flow augmented with the running cost `c` and, when asked, with
/// `χ = ∫ ∂g/∂x dτ`.
struct CostSystem<'a> {
    flow: FlowSystem<'a>,
    stage: &'a ProjectedStage<'a>,
    with_chi: bool,
}

impl OdeSystem for CostSystem<'_> {
    fn dim(&self) -> usize {
        let n = self.flow.dim();
        n + 1 + if self.with_chi { n } else { 0 }
    }

    fn rhs(&self, s: f64, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let n = self.flow.dim();
        self.flow.rhs(s, &z[..n], &mut dz[..n])?;
        let e = self.stage.eval(&z[..n])?;
        dz[n] = e.g;
        if self.with_chi {
            dz[n + 1..].copy_from_slice(&e.grad_x);
        }
        Ok(())
    }
}

/// Loss value by forward integration only, independent of the adjoint path.
pub fn loss_value(model: &Model, loss: &LossSpec, u: &[f64], y: &[f64], cfg: &SolverConfig) -> Result<f64> {
    let x0 = model.initial_state(u)?;
    match loss.kind {
        LossKind::Terminal(out) => {
            let x_s = solve_forward(&model.field, u, &model.w, &x0, model.horizon, cfg, false)?
                .last_state()
                .to_vec();
            let base = out.value(&model.h_y.apply(&x_s)?, y)?;
            loss_regularized(model, loss, u, &x_s, base)
        }
        LossKind::Backprop { stage, on } => {
            let (c, x_s, _) = integrate_running_cost(model, stage, on, u, y, &x0, cfg, false)?;
            loss_regularized(model, loss, u, &x_s, c)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_running_cost(
    model: &Model,
    stage: OutputLoss,
    on: StageTarget,
    u: &[f64],
    y: &[f64],
    x0: &[f64],
    cfg: &SolverConfig,
    with_chi: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let stage = ProjectedStage {
        loss: stage,
        on,
        h_y: &model.h_y,
        y,
        track_vy: false,
    };
    let sys = CostSystem {
        flow: FlowSystem {
            field: &model.field,
            u,
            w: &model.w,
        },
        stage: &stage,
        with_chi,
    };
    let mut z0 = x0.to_vec();
    z0.resize(sys.dim(), 0.0);
    let t = integrate(&sys, 0.0, &z0, model.horizon, cfg, false)?;
    let z = t.last_state();
    let n = x0.len();
    Ok((z[n], z[..n].to_vec(), z[n + 1..].to_vec()))
}
