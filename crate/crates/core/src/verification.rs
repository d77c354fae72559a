//! Independent oracles: finite-difference gradients, energy audits along
//! trajectories, and the projection-gradient comparison.

use std::io::{self, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::datasets::{fmt_f64, Dataset};
use crate::dynamics::FieldSpec;
use crate::error::{Error, Result};
use crate::grad::{integrate_running_cost, loss_value, GradBundle};
use crate::loss::{LossKind, LossSpec};
use crate::model::{Block, Model, TrainFlags};
use crate::optim::batch_gradient;
use crate::solver::{SolverConfig, Trajectory};

/// Step used by every finite-difference oracle.
pub const FD_STEP: f64 = 1e-5;
/// Solver tolerance used while the oracles run.
pub const ORACLE_TOL: f64 = 1e-8;
/// Pass threshold on the relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Denominator floor of [`rel_err`].
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, REL_ERR_FLOOR)`; exactly 0 when `a == b`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Central differences of `f` at the requested coordinates of `theta`.
pub fn fd_gradient<F>(f: F, theta: &[f64], coords: &[usize], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    coords
        .par_iter()
        .map(|&i| {
            let mut p = theta.to_vec();
            p[i] += h;
            let fp = f(&p)?;
            p[i] = theta[i] - h;
            let fm = f(&p)?;
            let d = (fp - fm) / (2.0 * h);
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonFiniteInput("finite-difference evaluation"))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAudit {
    /// Largest rise of the energy between consecutive nodes.
    pub max_increase: f64,
    /// Largest `|V(s) − V(0)|` over the nodes.
    pub max_deviation: f64,
    /// Depths at which a rise exceeded the slack.
    pub violating_s: Vec<f64>,
}

impl EnergyAudit {
    pub fn passed(&self) -> bool {
        self.violating_s.is_empty()
    }
}

/// Lyapunov value at every node: `ε` for first-order energy fields and
/// `½pᵀp + ε(q)` for the second-order field.
pub fn energy_along(traj: &Trajectory, field: &FieldSpec, u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    traj.nodes
        .iter()
        .map(|(_, x)| {
            field
                .lyapunov(u, x, w)?
                .ok_or_else(|| Error::InvalidArgument("the vanilla field carries no energy".into()))
        })
        .collect()
}

fn audit(values: &[f64], nodes: &[(f64, Vec<f64>)], slack: f64) -> EnergyAudit {
    let mut rep = EnergyAudit {
        max_increase: f64::NEG_INFINITY,
        max_deviation: 0.0,
        violating_s: Vec::new(),
    };
    for i in 1..values.len() {
        let rise = values[i] - values[i - 1];
        rep.max_increase = rep.max_increase.max(rise);
        if rise > slack {
            rep.violating_s.push(nodes[i].0);
        }
    }
    for v in values {
        rep.max_deviation = rep.max_deviation.max((v - values[0]).abs());
    }
    if values.len() < 2 {
        rep.max_increase = 0.0;
    }
    rep
}

/// Checks that `ε` never rises by more than `slack` between accepted nodes.
pub fn audit_dissipation(traj: &Trajectory, field: &FieldSpec, u: &[f64], w: &[f64], slack: f64) -> Result<EnergyAudit> {
    let v = energy_along(traj, field, u, w)?;
    Ok(audit(&v, &traj.nodes, slack))
}

/// Second-order audit of `φ = ½pᵀp + ε(q)`: non-increasing within `slack`,
/// and, when undamped, conserved within `slack`.
pub fn audit_second_order(traj: &Trajectory, field: &FieldSpec, u: &[f64], w: &[f64], slack: f64) -> Result<EnergyAudit> {
    if !matches!(field, FieldSpec::SecondOrder { .. }) {
        return Err(Error::InvalidArgument("second-order audit on a first-order field".into()));
    }
    let v = energy_along(traj, field, u, w)?;
    let mut rep = audit(&v, &traj.nodes, slack);
    let undamped = w.last() == Some(&0.0);
    if undamped && rep.max_deviation > slack {
        for (i, val) in v.iter().enumerate() {
            if (val - v[0]).abs() > slack && !rep.violating_s.contains(&traj.nodes[i].0) {
                rep.violating_s.push(traj.nodes[i].0);
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionComparison {
    /// Chain rule through `h_y ∘ h_u` (terminal) or the forward `χ` integral
    /// (running cost), ignoring the flow's sensitivity to `x(0)`.
    pub chain_rule: Vec<f64>,
    /// `λ(0)ᵀ ∂h_u/∂v_u` from the adjoint pass.
    pub adjoint: Vec<f64>,
    pub fd: Vec<f64>,
    pub chain_rule_max_rel_err: f64,
    pub adjoint_max_rel_err: f64,
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

/// Compares the two input-projection gradient formulas with finite
/// differences on one sample. The model must have an affine `h_u`.
pub fn compare_projection_gradients(model: &Model, loss: &LossSpec, u: &[f64], y: &[f64], cfg: &SolverConfig) -> Result<ProjectionComparison> {
    let n_vu = model.block_len(Block::Vu);
    if n_vu == 0 {
        return Err(Error::InvalidArgument("input projection has no parameters".into()));
    }
    let mut m = model.clone();
    m.train = TrainFlags::ALL;
    let x0 = m.initial_state(u)?;
    let chain_seed = match loss.kind {
        LossKind::Terminal(out) => {
            let x_s = m.flow(u, cfg, false)?.last_state().to_vec();
            let gy = out.grad(&m.h_y.apply(&x_s)?, y)?;
            m.h_y.vjp_input(&gy)?
        }
        LossKind::Backprop { stage, on } => integrate_running_cost(&m, stage, on, u, y, &x0, cfg, true)?.2,
    };
    let chain_rule = m.h_u.vjp_params(u, &chain_seed)?;
    let adjoint = crate::grad::grad_sample(&m, loss, u, y, cfg)?.g_vu;
    let theta = m.block(Block::Vu);
    let coords: Vec<usize> = (0..n_vu).collect();
    let fd = fd_gradient(
        |p| {
            let mut mm = m.clone();
            mm.set_block(Block::Vu, p)?;
            loss_value(&mm, loss, u, y, cfg)
        },
        &theta,
        &coords,
        FD_STEP,
    )?;
    Ok(ProjectionComparison {
        chain_rule_max_rel_err: max_rel(&chain_rule, &fd),
        adjoint_max_rel_err: max_rel(&adjoint, &fd),
        chain_rule,
        adjoint,
        fd,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    /// `<loss kind>.<block>`, e.g. `terminal.w`.
    pub path: String,
    pub coord: usize,
    pub adjoint: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    /// Coordinates sampled per block; smaller blocks are checked in full.
    pub coords_per_block: usize,
    /// Samples from the front of the dataset the loss is averaged over.
    pub n_samples: usize,
    pub fd_step: f64,
    pub seed: u64,
    /// Negates every adjoint value before comparison (negative control).
    pub corrupt_adjoint: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            coords_per_block: 20,
            n_samples: 2,
            fd_step: FD_STEP,
            seed: 0,
            corrupt_adjoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradRow>,
    /// Trainable blocks that produced no rows.
    pub unchecked: Vec<String>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.unchecked.is_empty() && self.rows.iter().all(|r| r.rel_err < tol)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "path,coord,adjoint,fd,rel_err")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.path,
                r.coord,
                fmt_f64(r.adjoint),
                fmt_f64(r.fd),
                fmt_f64(r.rel_err)
            )?;
        }
        Ok(())
    }
}

pub fn loss_path(loss: &LossSpec) -> &'static str {
    match loss.kind {
        LossKind::Terminal(_) => "terminal",
        LossKind::Backprop { .. } => "backprop",
    }
}

/// Mean loss over `data` by forward integration only.
pub fn mean_loss(model: &Model, loss: &LossSpec, data: &Dataset, cfg: &SolverConfig) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        total += loss_value(model, loss, &data.inputs[i], &data.targets[i], cfg).map_err(|e| e.in_sample(i, "forward"))?;
    }
    Ok(total / data.len() as f64)
}

/// Compares adjoint gradients of every trainable block with central
/// differences of the forward-integrated loss.
pub fn gradcheck(model: &Model, loss: &LossSpec, data: &Dataset, cfg: &SolverConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let idx: Vec<usize> = (0..opts.n_samples.min(data.len())).collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument("gradcheck needs at least one sample".into()));
    }
    let subset = data.subset(&idx);
    let adj: GradBundle = batch_gradient(model, loss, &subset, cfg)?;
    let sign = if opts.corrupt_adjoint { -1.0 } else { 1.0 };
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);
    let mut report = GradcheckReport {
        rows: Vec::new(),
        unchecked: Vec::new(),
    };
    for b in Block::ALL {
        if !model.train.get(b) {
            continue;
        }
        let n = model.block_len(b);
        let path = format!("{}.{}", loss_path(loss), b.name());
        if n == 0 {
            report.unchecked.push(path);
            continue;
        }
        let mut coords = if n <= opts.coords_per_block {
            (0..n).collect::<Vec<_>>()
        } else {
            sample(&mut rng, n, opts.coords_per_block).into_vec()
        };
        coords.sort_unstable();
        let theta = model.block(b);
        let fd = fd_gradient(
            |p| {
                let mut m = model.clone();
                m.set_block(b, p)?;
                mean_loss(&m, loss, &subset, cfg)
            },
            &theta,
            &coords,
            opts.fd_step,
        )?;
        for (&c, d) in coords.iter().zip(fd) {
            let a = sign * adj.block(b)[c];
            report.rows.push(GradRow {
                path: path.clone(),
                coord: c,
                adjoint: a,
                fd: d,
                rel_err: rel_err(a, d),
            });
        }
    }
    Ok(report)
}
