//! Dormand–Prince 5(4) with adaptive step control.
//!
//! Steps may be negative, so the same integrator runs forward flows over
//! `[0, S]` and the augmented adjoint system from `S` back to 0.

use crate::error::{Error, Result};

/// A first-order system `ẏ = F(s, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, s: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

/// Adapter turning a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, s: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        (self.f)(s, y, dy);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub atol: f64,
    pub rtol: f64,
    /// Initial step; `None` means 1% of the integration interval.
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub max_steps: usize,
    pub safety: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            atol: 1e-6,
            rtol: 1e-6,
            h_init: None,
            h_min: 1e-12,
            max_steps: 100_000,
            safety: 0.9,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            atol: tol,
            rtol: tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.atol > 0.0 && self.rtol > 0.0) {
            return bad("atol and rtol must be positive");
        }
        if !(self.h_min > 0.0) {
            return bad("h_min must be positive");
        }
        if let Some(h) = self.h_init {
            if !(h >= self.h_min) {
                return bad("h_init must be at least h_min");
            }
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad("safety factor must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub n_field_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(s, state)` at the start and after every accepted step when `dense`;
    /// otherwise only the two endpoints.
    pub nodes: Vec<(f64, Vec<f64>)>,
    pub dense: bool,
    pub stats: SolveStats,
}

impl Trajectory {
    pub fn last_state(&self) -> &[f64] {
        &self.nodes.last().expect("trajectory is never empty").1
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
/// Fifth-order weights; also the last stage row (FSAL).
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// `b5 − b4`, the embedded error weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Stage storage reused across steps.
struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

fn combine(y: &[f64], h: f64, coeffs: &[f64], k: &[Vec<f64>], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, kj) in coeffs.iter().zip(k) {
            acc += c * kj[i];
        }
        *o = y[i] + h * acc;
    }
}

fn check_finite(v: &[f64], s: f64, h: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "stage value",
            s,
            h,
        })
    }
}

/// One step with `ws.k[0]` already holding `F(s, y)`. Leaves the 5th-order
/// solution in `ws.y_new`, `F(s + h, y_new)` in `ws.k[6]`, and returns the
/// scaled RMS error estimate.
fn step_into<S: OdeSystem + ?Sized>(sys: &S, s: f64, y: &[f64], h: f64, cfg: &SolverConfig, ws: &mut Workspace) -> Result<f64> {
    let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
    for (j, row) in rows.iter().enumerate() {
        let stage = j + 1;
        let (done, rest) = ws.k.split_at_mut(stage);
        combine(y, h, row, done, &mut ws.tmp);
        check_finite(&ws.tmp, s, h)?;
        sys.rhs(s + C[stage] * h, &ws.tmp, &mut rest[0])?;
        check_finite(&rest[0], s, h)?;
    }
    combine(y, h, &B5, &ws.k[..6], &mut ws.y_new);
    check_finite(&ws.y_new, s, h)?;
    sys.rhs(s + h, &ws.y_new, &mut ws.k[6])?;
    check_finite(&ws.k[6], s, h)?;

    let n = y.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for i in 0..n {
        let mut d = 0.0;
        for (e, kj) in E.iter().zip(&ws.k) {
            d += e * kj[i];
        }
        let sc = cfg.atol + cfg.rtol * y[i].abs().max(ws.y_new[i].abs());
        let r = h * d / sc;
        acc += r * r;
    }
    Ok((acc / n as f64).sqrt())
}

/// A single Dormand–Prince step from `(s, y)` with step `h` (negative for
/// backward). Returns the 5th-order solution and the scaled error estimate.
pub fn dopri_step<S: OdeSystem + ?Sized>(sys: &S, s: f64, y: &[f64], h: f64, cfg: &SolverConfig) -> Result<(Vec<f64>, f64)> {
    if h == 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be finite and nonzero, got {h}")));
    }
    let mut ws = Workspace::new(y.len());
    sys.rhs(s, y, &mut ws.k[0])?;
    check_finite(&ws.k[0], s, h)?;
    let err = step_into(sys, s, y, h, cfg, &mut ws)?;
    Ok((ws.y_new, err))
}

/// Adaptive integration from `s0` to `s1` (either direction).
///
/// Accepts a step when the error estimate is at most 1; the next step is
/// `h·safety·err^(-1/5)` clipped to `[0.2h, 5h]`.
pub fn integrate<S: OdeSystem + ?Sized>(sys: &S, s0: f64, y0: &[f64], s1: f64, cfg: &SolverConfig, dense: bool) -> Result<Trajectory> {
    cfg.validate()?;
    if y0.len() != sys.dim() {
        return Err(Error::Dimension {
            what: "initial state",
            expected: sys.dim(),
            got: y0.len(),
        });
    }
    let span = s1 - s0;
    let mut nodes = vec![(s0, y0.to_vec())];
    let mut stats = SolveStats::default();
    if span == 0.0 {
        return Ok(Trajectory { nodes, dense, stats });
    }
    let dir = span.signum();
    let mut ws = Workspace::new(y0.len());
    let mut y = y0.to_vec();
    let mut s = s0;
    sys.rhs(s, &y, &mut ws.k[0])?;
    stats.n_field_evals += 1;
    check_finite(&ws.k[0], s, 0.0)?;

    let mut h_abs = cfg.h_init.unwrap_or(1e-2 * span.abs());
    loop {
        let remaining = (s1 - s) * dir;
        if remaining <= 0.0 {
            break;
        }
        let last = h_abs >= remaining;
        let h = if last { remaining * dir } else { h_abs * dir };
        if stats.accepted_steps + stats.rejected_steps >= cfg.max_steps {
            return Err(Error::MaxSteps {
                s,
                max_steps: cfg.max_steps,
            });
        }
        let err = step_into(sys, s, &y, h, cfg, &mut ws)?;
        stats.n_field_evals += 6;
        let factor = if err == 0.0 {
            5.0
        } else {
            (cfg.safety * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err <= 1.0 {
            stats.accepted_steps += 1;
            s = if last { s1 } else { s + h };
            std::mem::swap(&mut y, &mut ws.y_new);
            ws.k.swap(0, 6);
            if dense {
                nodes.push((s, y.clone()));
            }
            // A clipped final step says nothing about the natural step size.
            if !last {
                h_abs *= factor;
            }
        } else {
            stats.rejected_steps += 1;
            h_abs = h.abs() * factor;
            if h_abs < cfg.h_min {
                return Err(Error::StepTooSmall { s, h: h_abs });
            }
        }
    }
    if !dense {
        nodes.push((s, y));
    }
    Ok(Trajectory { nodes, dense, stats })
}

/// Fixed-step integration with `n_steps` equal steps; no error control.
pub fn integrate_fixed<S: OdeSystem + ?Sized>(sys: &S, s0: f64, y0: &[f64], s1: f64, n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be positive".into()));
    }
    let cfg = SolverConfig::default();
    let h = (s1 - s0) / n_steps as f64;
    let mut ws = Workspace::new(y0.len());
    let mut y = y0.to_vec();
    let mut s = s0;
    sys.rhs(s, &y, &mut ws.k[0])?;
    for i in 0..n_steps {
        step_into(sys, s, &y, h, &cfg, &mut ws)?;
        std::mem::swap(&mut y, &mut ws.y_new);
        ws.k.swap(0, 6);
        s = s0 + (i + 1) as f64 * h;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_exact() {
        let sys = FnSystem::new(2, |_, _, dy: &mut [f64]| {
            dy[0] = 1.0;
            dy[1] = 0.0;
        });
        let (y, err) = dopri_step(&sys, 0.0, &[0.0, 0.0], 0.25, &SolverConfig::default()).unwrap();
        assert!((y[0] - 0.25).abs() < 1e-16 && y[1] == 0.0);
        assert!(err < 1e-12);
    }

    #[test]
    fn exponential_single_step() {
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0]);
        let (y, _) = dopri_step(&sys, 0.0, &[1.0], 0.1, &SolverConfig::default()).unwrap();
        assert!((y[0] - 0.1f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn quartic_quadrature_is_exact() {
        let sys = FnSystem::new(1, |s, _, dy: &mut [f64]| dy[0] = 5.0 * s.powi(4));
        let (y, _) = dopri_step(&sys, 0.0, &[0.0], 1.0, &SolverConfig::default()).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_step_is_rejected() {
        let sys = FnSystem::new(1, |_, _, dy: &mut [f64]| dy[0] = 1.0);
        assert!(dopri_step(&sys, 0.0, &[0.0], 0.0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn non_finite_stage_is_reported() {
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| {
            dy[0] = if y[0] > 0.5 { f64::NAN } else { 1.0 }
        });
        let err = integrate(&sys, 0.0, &[0.0], 1.0, &SolverConfig::default(), false);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn adaptive_decay_and_eval_accounting() {
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = -3.0 * y[0]);
        let t = integrate(&sys, 0.0, &[1.0], 2.0, &SolverConfig::default(), true).unwrap();
        assert!((t.last_state()[0] - (-6.0f64).exp()).abs() < 1e-6);
        let st = t.stats;
        assert_eq!(st.n_field_evals, 6 * st.accepted_steps + 6 * st.rejected_steps + 1);
        assert_eq!(t.nodes.len(), st.accepted_steps + 1);
        assert!(t.nodes.windows(2).all(|w| w[1].0 > w[0].0));
        assert_eq!(t.nodes.last().unwrap().0, 2.0);
    }

    #[test]
    fn backward_integration_reaches_start() {
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0]);
        let t = integrate(&sys, 1.0, &[1.0f64.exp()], 0.0, &SolverConfig::with_tolerance(1e-10), true).unwrap();
        assert!((t.last_state()[0] - 1.0).abs() < 1e-8);
        assert!(t.nodes.windows(2).all(|w| w[1].0 < w[0].0));
        assert_eq!(t.nodes.last().unwrap().0, 0.0);
    }

    #[test]
    fn stiff_blowup_hits_step_floor_or_budget() {
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0]);
        let cfg = SolverConfig {
            max_steps: 200,
            ..SolverConfig::default()
        };
        let r = integrate(&sys, 0.0, &[1.0], 2.0, &cfg, false);
        assert!(matches!(
            r,
            Err(Error::MaxSteps { .. } | Error::StepTooSmall { .. } | Error::NonFinite { .. })
        ));
    }

    #[test]
    fn fifth_order_convergence() {
        let sys = FnSystem::new(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0]);
        let e = 1.0f64.exp();
        let errs: Vec<f64> = [10, 20, 40]
            .iter()
            .map(|&n| (integrate_fixed(&sys, 0.0, &[1.0], 1.0, n).unwrap()[0] - e).abs())
            .collect();
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 2f64.powf(4.5), "{errs:?}");
        }
    }
}
