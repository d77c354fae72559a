//! Forward flows and the backward augmented adjoint system.
//!
//! The backward pass integrates `(x, λ, μ[, c, ν])` from `S` to 0 and
//! reconstructs `x` on the way instead of storing the forward trajectory:
//!
//! ```text
//! ẋ = f               λ̇ᵀ = −λᵀ∂f/∂x − ∂g/∂x      μ̇ᵀ = −λᵀ∂f/∂w
//! ċ = −g              ν̇ᵀ = −∂g/∂v_y
//! ```
//!
//! `c` and `ν` exist only when a running cost `g` is present; at `s = 0`
//! they hold `∫g` and its output-projection gradient.

use crate::dynamics::FieldSpec;
use crate::error::{check_len, Error, Result};
use crate::solver::{integrate, OdeSystem, SolveStats, SolverConfig, Trajectory};

pub struct FlowSystem<'a> {
    pub field: &'a FieldSpec,
    pub u: &'a [f64],
    pub w: &'a [f64],
}

impl OdeSystem for FlowSystem<'_> {
    fn dim(&self) -> usize {
        self.field.n_x()
    }

    fn rhs(&self, _s: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy.copy_from_slice(&self.field.eval(self.u, y, self.w)?);
        Ok(())
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("depth horizon must be positive, got {horizon}")))
    }
}

/// Integrates `ẋ = f(u, x, w)` over `[0, horizon]`.
pub fn solve_forward(field: &FieldSpec, u: &[f64], w: &[f64], x0: &[f64], horizon: f64, cfg: &SolverConfig, dense: bool) -> Result<Trajectory> {
    check_horizon(horizon)?;
    check_len("initial state", field.n_x(), x0.len())?;
    check_len("field parameters", field.param_count(), w.len())?;
    integrate(&FlowSystem { field, u, w }, 0.0, x0, horizon, cfg, dense)
}

/// Running cost `g(x)` with its state gradient and, optionally, a gradient
/// with respect to output-projection parameters.
pub trait StageCost {
    /// Length of the output-projection gradient block (0 if not tracked).
    fn n_vy(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<StageEval>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageEval {
    pub g: f64,
    pub grad_x: Vec<f64>,
    pub grad_vy: Vec<f64>,
}

struct AdjointSystem<'a> {
    field: &'a FieldSpec,
    u: &'a [f64],
    w: &'a [f64],
    stage: Option<&'a dyn StageCost>,
}

impl AdjointSystem<'_> {
    fn n_x(&self) -> usize {
        self.field.n_x()
    }
    fn n_w(&self) -> usize {
        self.w.len()
    }
}

impl OdeSystem for AdjointSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.n_x() + self.n_w() + self.stage.map_or(0, |g| 1 + g.n_vy())
    }

    fn rhs(&self, _s: f64, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let (n, nw) = (self.n_x(), self.n_w());
        let (x, rest) = z.split_at(n);
        let lam = &rest[..n];
        let p = self.field.products(self.u, x, self.w, lam, true)?;
        let (dx, drest) = dz.split_at_mut(n);
        let (dlam, drest) = drest.split_at_mut(n);
        let (dmu, dstage) = drest.split_at_mut(nw);
        dx.copy_from_slice(&p.f);
        for (d, v) in dlam.iter_mut().zip(&p.vjp_x) {
            *d = -v;
        }
        for (d, v) in dmu.iter_mut().zip(&p.vjp_w) {
            *d = -v;
        }
        if let Some(stage) = self.stage {
            let g = stage.eval(x)?;
            for (d, gx) in dlam.iter_mut().zip(&g.grad_x) {
                *d -= gx;
            }
            dstage[0] = -g.g;
            for (d, gv) in dstage[1..].iter_mut().zip(&g.grad_vy) {
                *d = -gv;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointResult {
    /// State reconstructed at `s = 0` by the backward pass.
    pub x0: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub mu0: Vec<f64>,
    /// `∫₀ˢ g dτ`; zero without a running cost.
    pub running_cost: f64,
    /// `∫₀ˢ ∂g/∂v_y dτ`; empty unless the running cost tracks it.
    pub vy_grad: Vec<f64>,
    pub stats: SolveStats,
}

/// Integrates the augmented adjoint system from `horizon` back to 0 with
/// `μ(S) = 0`. `lambda_s` is `∂ℓ/∂x(S)` for a terminal cost and the
/// regularizer seed (or zero) for a running cost.
#[allow(clippy::too_many_arguments)]
pub fn solve_adjoint(
    field: &FieldSpec,
    u: &[f64],
    w: &[f64],
    x_s: &[f64],
    lambda_s: &[f64],
    horizon: f64,
    cfg: &SolverConfig,
    stage: Option<&dyn StageCost>,
) -> Result<AdjointResult> {
    check_horizon(horizon)?;
    let n = field.n_x();
    check_len("terminal state", n, x_s.len())?;
    check_len("terminal costate", n, lambda_s.len())?;
    check_len("field parameters", field.param_count(), w.len())?;
    let sys = AdjointSystem { field, u, w, stage };
    let mut z0 = Vec::with_capacity(sys.dim());
    z0.extend_from_slice(x_s);
    z0.extend_from_slice(lambda_s);
    z0.resize(sys.dim(), 0.0);
    let traj = integrate(&sys, horizon, &z0, 0.0, cfg, false)?;
    let z = traj.last_state();
    let nw = w.len();
    let (running_cost, vy_grad) = match stage {
        Some(_) => (z[2 * n + nw], z[2 * n + nw + 1..].to_vec()),
        None => (0.0, Vec::new()),
    };
    Ok(AdjointResult {
        x0: z[..n].to_vec(),
        lambda0: z[n..2 * n].to_vec(),
        mu0: z[2 * n..2 * n + nw].to_vec(),
        running_cost,
        vy_grad,
        stats: traj.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{Energy, QuadraticEnergy};

    fn stable_quadratic(n: usize) -> FieldSpec {
        FieldSpec::Stable {
            energy: Energy::Quadratic(QuadraticEnergy::centered(n)),
        }
    }

    #[test]
    fn forward_closed_form_decay() {
        let f = stable_quadratic(2);
        let t = solve_forward(&f, &[], &[], &[1.0, 0.0], 1.0, &SolverConfig::default(), true).unwrap();
        let x = t.last_state();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn equilibrium_stays_put() {
        let f = stable_quadratic(2);
        let t = solve_forward(&f, &[], &[], &[0.0, 0.0], 3.7, &SolverConfig::default(), true).unwrap();
        assert!(t.nodes.iter().all(|(_, x)| x == &vec![0.0, 0.0]));
    }

    #[test]
    fn non_positive_horizon_is_rejected() {
        let f = stable_quadratic(1);
        assert!(solve_forward(&f, &[], &[], &[1.0], 0.0, &SolverConfig::default(), false).is_err());
    }

    #[test]
    fn zero_costate_stays_zero() {
        let f = stable_quadratic(2);
        let r = solve_adjoint(&f, &[], &[], &[0.3, 0.1], &[0.0, 0.0], 1.0, &SolverConfig::default(), None).unwrap();
        assert_eq!(r.lambda0, vec![0.0, 0.0]);
        assert!(r.mu0.is_empty());
    }

    #[test]
    fn costate_closed_form() {
        // λ̇ = λ backward from λ(1) = 1 gives λ(0) = e⁻¹.
        let f = stable_quadratic(1);
        let xs = (-1.0f64).exp();
        let r = solve_adjoint(&f, &[], &[], &[xs], &[1.0], 1.0, &SolverConfig::default(), None).unwrap();
        assert!((r.lambda0[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert!((r.x0[0] - 1.0).abs() < 1e-5);
    }
}
