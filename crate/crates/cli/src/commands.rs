//! The four subcommands. Each returns a summary for library callers and
//! leaves its artifacts in the run directory.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use snf_core::affine::Projection;
use snf_core::datasets::{fmt_f64, gen_halfmoons, gen_negation, gen_spirals, negation_grid, Dataset};
use snf_core::loss::{is_one_hot, LossSpec, OutputLoss};
use snf_core::model::Model;
use snf_core::optim::{evaluate, gd_epoch, sgd_epoch, Metrics, TrainMode};
use snf_core::solver::SolverConfig;
use snf_core::verification::{compare_projection_gradients, gradcheck, GradcheckOptions, GradcheckReport, GRADCHECK_TOL, ORACLE_TOL};
use snf_core::Error as CoreError;

use crate::config::{Config, ConfigError, DatasetKind};
use crate::snapshot::{self, SnapshotError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

/// Points of the evaluation grid used for the negation task.
pub const NEGATION_GRID_POINTS: usize = 101;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    /// A model or data problem detected by the library.
    Model(CoreError),
    Numerical(CoreError),
    Gradcheck { max_rel_err: f64, unchecked: Vec<String> },
    Snapshot(PathBuf, SnapshotError),
    Io(PathBuf, io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Model(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Gradcheck { .. } => EXIT_GRADCHECK,
            CliError::Snapshot(..) | CliError::Io(..) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Model(e) => write!(f, "config error: {e}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Gradcheck { max_rel_err, unchecked } if unchecked.is_empty() => {
                write!(f, "gradient check failed: max relative error {max_rel_err:.3e} ≥ {GRADCHECK_TOL:e}")
            }
            CliError::Gradcheck { unchecked, .. } => {
                write!(f, "gradient check failed: no coordinates for {}", unchecked.join(", "))
            }
            CliError::Snapshot(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e)
        } else {
            CliError::Model(e)
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn config_err(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config(ConfigError {
        line: None,
        key: Some(key.into()),
        message: message.into(),
    })
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.into(), e))?;
    Config::parse(&text).map_err(CliError::Config)
}

/// Everything a command needs, built from a configuration.
pub struct Setup {
    pub config: Config,
    pub model: Model,
    pub loss: LossSpec,
    pub solver: SolverConfig,
    pub data: Dataset,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn generate_data(c: &Config) -> Result<Dataset> {
    let d = &c.data;
    Ok(match d.dataset {
        DatasetKind::Negation => gen_negation(d.n, d.seed)?,
        DatasetKind::HalfMoons => gen_halfmoons(d.n, d.noise, d.seed)?,
        DatasetKind::Spirals => gen_spirals(d.n, 3, d.noise, d.seed)?,
    })
}

pub fn setup(config: &Config) -> Result<Setup> {
    let model = config.model.build()?;
    let loss = config.loss_spec();
    let data = generate_data(config)?;
    if data.n_u() != model.n_u() {
        return Err(config_err(
            "n_u",
            format!("the {} dataset has {} inputs, the model expects {}", config.data.dataset.name(), data.n_u(), model.n_u()),
        ));
    }
    if data.n_y() != model.n_y() {
        return Err(config_err(
            "n_y",
            format!("the {} dataset has {} targets, the model produces {}", config.data.dataset.name(), data.n_y(), model.n_y()),
        ));
    }
    loss.validate(model.n_x(), model.n_y())?;
    if loss.output_loss() == OutputLoss::CrossEntropy && !data.targets.iter().all(|y| is_one_hot(y)) {
        return Err(config_err("kind", "cross-entropy needs one-hot targets"));
    }
    let (train, test) = data.split(config.data.test_fraction, config.data.seed)?;
    if train.is_empty() {
        return Err(config_err("n", "the training split is empty"));
    }
    Ok(Setup {
        config: config.clone(),
        model,
        loss,
        solver: config.solver_config(),
        data,
        train,
        test,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(path.into(), e))
}

fn io_at<T>(path: &Path, r: io::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Io(path.into(), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    io_at(path, fs::write(path, bytes))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    io_at(dir, fs::create_dir_all(dir))
}

/// Median of `‖f(x(S))‖` over a dataset.
pub fn median_terminal_field_norm(model: &Model, data: &Dataset, cfg: &SolverConfig) -> Result<f64> {
    let mut norms = Vec::with_capacity(data.len());
    for (i, u) in data.inputs.iter().enumerate() {
        let x_s = model.flow(u, cfg, false).map_err(|e| e.in_sample(i, "forward"))?;
        let f = model.field.eval(u, x_s.last_state(), &model.w)?;
        norms.push(f.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    if norms.is_empty() {
        return Ok(f64::NAN);
    }
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    Ok(if n % 2 == 1 {
        norms[n / 2]
    } else {
        0.5 * (norms[n / 2 - 1] + norms[n / 2])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    pub split: &'static str,
    pub n: usize,
    pub metrics: Metrics,
    pub median_terminal_field_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: Model,
    /// `(epoch, mean_loss, accuracy)`; row 0 is the untrained model.
    pub history: Vec<(usize, f64, Option<f64>)>,
    pub splits: Vec<SplitMetrics>,
}

impl TrainSummary {
    pub fn split(&self, name: &str) -> Option<&SplitMetrics> {
        self.splits.iter().find(|s| s.split == name)
    }
}

fn split_metrics(split: &'static str, s: &Setup, model: &Model, data: &Dataset) -> Result<SplitMetrics> {
    Ok(SplitMetrics {
        split,
        n: data.len(),
        metrics: evaluate(model, &s.loss, data, &s.solver)?,
        median_terminal_field_norm: median_terminal_field_norm(model, data, &s.solver)?,
    })
}

fn opt(v: Option<f64>) -> String {
    fmt_f64(v.unwrap_or(f64::NAN))
}

/// Trains the configured model and writes `config.echo`, `data.csv`,
/// `loss.csv`, `model.bin` and `metrics.csv` into `out`.
pub fn cmd_train(config: &Config, out: &Path) -> Result<TrainSummary> {
    let s = setup(config)?;
    ensure_dir(out)?;
    write_file(&out.join("config.echo"), config.to_echo().as_bytes())?;
    let data_path = out.join("data.csv");
    let mut w = create(&data_path)?;
    io_at(&data_path, s.data.write_csv(&mut w).and_then(|_| w.flush()))?;

    let mut model = s.model.clone();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.data.seed);
    let mut history = Vec::with_capacity(config.train.epochs + 1);
    let m0 = evaluate(&model, &s.loss, &s.train, &s.solver)?;
    history.push((0, m0.mean_loss, m0.accuracy));
    for epoch in 1..=config.train.epochs {
        match config.train.mode {
            TrainMode::Full => gd_epoch(&mut model, &s.loss, &s.train, config.train.eta, &s.solver)?,
            TrainMode::Stochastic => sgd_epoch(&mut model, &s.loss, &s.train, config.train.eta, &s.solver, &mut rng)?,
        };
        let m = evaluate(&model, &s.loss, &s.train, &s.solver)?;
        history.push((epoch, m.mean_loss, m.accuracy));
    }

    let loss_path = out.join("loss.csv");
    let mut w = create(&loss_path)?;
    io_at(&loss_path, writeln!(w, "epoch,mean_loss,accuracy"))?;
    for (e, l, a) in &history {
        io_at(&loss_path, writeln!(w, "{e},{},{}", fmt_f64(*l), opt(*a)))?;
    }
    io_at(&loss_path, w.flush())?;
    write_file(&out.join("model.bin"), &snapshot::encode(&model))?;

    let mut splits = vec![split_metrics("train", &s, &model, &s.train)?];
    if !s.test.is_empty() {
        splits.push(split_metrics("test", &s, &model, &s.test)?);
    }
    if config.data.dataset == DatasetKind::Negation {
        splits.push(split_metrics("grid", &s, &model, &negation_grid(NEGATION_GRID_POINTS))?);
    }
    let metrics_path = out.join("metrics.csv");
    let mut w = create(&metrics_path)?;
    io_at(&metrics_path, writeln!(w, "split,n,mean_loss,mse,accuracy,median_terminal_field_norm"))?;
    for sm in &splits {
        io_at(
            &metrics_path,
            writeln!(
                w,
                "{},{},{},{},{},{}",
                sm.split,
                sm.n,
                fmt_f64(sm.metrics.mean_loss),
                fmt_f64(sm.metrics.mse),
                opt(sm.metrics.accuracy),
                fmt_f64(sm.median_terminal_field_norm)
            ),
        )?;
    }
    io_at(&metrics_path, w.flush())?;
    Ok(TrainSummary { model, history, splits })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradcheckFlags {
    pub compare_projection: bool,
    /// Test hook: flips the sign of every adjoint value.
    pub corrupt_adjoint: bool,
}

/// Tolerances tightened to the oracle setting.
pub fn oracle_solver(config: &Config) -> SolverConfig {
    let mut cfg = config.solver_config();
    cfg.atol = cfg.atol.min(ORACLE_TOL);
    cfg.rtol = cfg.rtol.min(ORACLE_TOL);
    cfg
}

/// Runs the finite-difference comparison of every trainable block and
/// writes `gradcheck.csv` (and `projection.csv` when asked).
pub fn cmd_gradcheck(config: &Config, out: &Path, flags: GradcheckFlags) -> Result<GradcheckReport> {
    let s = setup(config)?;
    ensure_dir(out)?;
    let cfg = oracle_solver(config);
    let opts = GradcheckOptions {
        seed: config.model.seed,
        corrupt_adjoint: flags.corrupt_adjoint,
        ..GradcheckOptions::default()
    };
    let report = gradcheck(&s.model, &s.loss, &s.train, &cfg, &opts)?;
    let path = out.join("gradcheck.csv");
    let mut w = create(&path)?;
    io_at(&path, report.write_csv(&mut w).and_then(|_| w.flush()))?;
    if flags.compare_projection {
        if let Projection::Identity(_) = s.model.h_u {
            return Err(config_err("train_hu", "the projection comparison needs a trained input projection"));
        }
        let c = compare_projection_gradients(&s.model, &s.loss, &s.train.inputs[0], &s.train.targets[0], &cfg)?;
        let path = out.join("projection.csv");
        let mut w = create(&path)?;
        io_at(&path, writeln!(w, "coord,chain_rule,adjoint,fd"))?;
        for i in 0..c.fd.len() {
            io_at(
                &path,
                writeln!(w, "{i},{},{},{}", fmt_f64(c.chain_rule[i]), fmt_f64(c.adjoint[i]), fmt_f64(c.fd[i])),
            )?;
        }
        io_at(&path, w.flush())?;
    }
    if report.passed(GRADCHECK_TOL) {
        Ok(report)
    } else {
        Err(CliError::Gradcheck {
            max_rel_err: report.max_rel_err(),
            unchecked: report.unchecked.clone(),
        })
    }
}

/// Builds the configured model and loads a snapshot into it.
pub fn load_model(config: &Config, model_path: &Path) -> Result<Model> {
    let mut model = config.model.build()?;
    let bytes = io_at(model_path, fs::read(model_path))?;
    snapshot::decode_into(&bytes, &mut model).map_err(|e| CliError::Snapshot(model_path.into(), e))?;
    Ok(model)
}

fn axis(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let pad = 0.2 * (hi - lo);
    let (a, b) = (lo - pad, hi + pad);
    (0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64).collect()
}

fn bounds(points: impl Iterator<Item = Vec<f64>>, dim: usize) -> Vec<(f64, f64)> {
    let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
    for p in points {
        for (k, v) in p.iter().take(dim).enumerate() {
            b[k].0 = b[k].0.min(*v);
            b[k].1 = b[k].1.max(*v);
        }
    }
    b
}

/// Writes `surface.csv`: the learned energy over a grid of the energy's
/// state argument, plus the input when it fits in a two-axis grid.
pub fn cmd_surface(config: &Config, model_path: &Path, out: &Path) -> Result<usize> {
    let model = load_model(config, model_path)?;
    let data = generate_data(config)?;
    let energy = model
        .field
        .energy()
        .ok_or_else(|| config_err("variant", "the vanilla field has no energy surface"))?;
    let n_e = energy.n_x();
    let n_u = model.n_u();
    if n_e > 2 {
        return Err(config_err("n_x", format!("the surface grid supports at most two state axes, the energy reads {n_e}")));
    }
    let u_on_grid = energy.data_dependent() && n_e + n_u <= 2;
    let points = config.surface.points;
    let x0s: Vec<Vec<f64>> = data.inputs.iter().map(|u| model.initial_state(u)).collect::<std::result::Result<_, _>>()?;
    let mut axes: Vec<Vec<f64>> = bounds(x0s.into_iter(), n_e).into_iter().map(|(a, b)| axis(a, b, points)).collect();
    if u_on_grid {
        axes.extend(bounds(data.inputs.iter().cloned(), n_u).into_iter().map(|(a, b)| axis(a, b, points)));
    }
    let fixed_u = match &config.surface.u {
        Some(u) if u.len() != n_u => return Err(config_err("u", format!("expected {n_u} values, got {}", u.len()))),
        Some(u) => u.clone(),
        None => (0..n_u)
            .map(|k| data.inputs.iter().map(|u| u[k]).sum::<f64>() / data.len() as f64)
            .collect(),
    };
    let w_net = &model.w[..model.field.net_param_count()];

    ensure_dir(out)?;
    let path = out.join("surface.csv");
    let mut w = create(&path)?;
    let mut header: Vec<String> = (1..=n_e).map(|i| format!("x{i}")).collect();
    header.extend((1..=n_u).map(|i| format!("u{i}")));
    header.push("energy".into());
    io_at(&path, writeln!(w, "{}", header.join(",")))?;
    let total = points.pow(axes.len() as u32);
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        let coords: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        let x = &coords[..n_e];
        let u = if u_on_grid { coords[n_e..].to_vec() } else { fixed_u.clone() };
        let e = energy.eval(&u, x, w_net)?;
        let row: Vec<String> = x.iter().chain(&u).chain(std::iter::once(&e)).map(|v| fmt_f64(*v)).collect();
        io_at(&path, writeln!(w, "{}", row.join(",")))?;
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
        }
    }
    io_at(&path, w.flush())?;
    Ok(total)
}

/// Writes `flow.csv`: the state and its energy at every accepted solver
/// node, for every sample of the configured dataset (ids index `data.csv`).
pub fn cmd_flow(config: &Config, model_path: &Path, out: &Path) -> Result<usize> {
    let model = load_model(config, model_path)?;
    let data = generate_data(config)?;
    let cfg = config.solver_config();
    ensure_dir(out)?;
    let path = out.join("flow.csv");
    let mut w = create(&path)?;
    let n_x = model.n_x();
    let mut header = vec!["sample_id".to_string(), "s".to_string()];
    header.extend((1..=n_x).map(|i| format!("x{i}")));
    header.push("energy".into());
    io_at(&path, writeln!(w, "{}", header.join(",")))?;
    let mut rows = 0;
    for (id, u) in data.inputs.iter().enumerate() {
        let t = model.flow(u, &cfg, true).map_err(|e| e.in_sample(id, "forward"))?;
        for (s, x) in &t.nodes {
            let e = model.field.lyapunov(u, x, &model.w)?.unwrap_or(f64::NAN);
            let mut row = vec![id.to_string(), fmt_f64(*s)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(e));
            io_at(&path, writeln!(w, "{}", row.join(",")))?;
            rows += 1;
        }
    }
    io_at(&path, w.flush())?;
    Ok(rows)
}
