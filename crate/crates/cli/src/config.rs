//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [model]
//! variant = stable
//! energy_layers = 2,16,16,1
//! ```
//!
//! Every key has a default, so an empty file describes the negation run.
//! `to_echo` writes the fully resolved configuration back in the same
//! format; parsing the echo gives an identical `Config`.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use snf_core::builder::ModelConfig;
use snf_core::datasets::{DEFAULT_MOONS_N, DEFAULT_MOONS_NOISE, DEFAULT_SPIRALS_N, DEFAULT_SPIRALS_NOISE};
use snf_core::dynamics::Variant;
use snf_core::energy::Head;
use snf_core::loss::{LossKind, LossSpec, OutputLoss, StageTarget, DEFAULT_GAMMA};
use snf_core::model::TrainFlags;
use snf_core::optim::TrainMode;
use snf_core::solver::SolverConfig;

pub const DEFAULT_NEGATION_N: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line, when the problem is tied to one.
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}, key `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "key `{k}`: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Negation,
    HalfMoons,
    Spirals,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Negation => "negation",
            DatasetKind::HalfMoons => "halfmoons",
            DatasetKind::Spirals => "spirals",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [DatasetKind::Negation, DatasetKind::HalfMoons, DatasetKind::Spirals]
            .into_iter()
            .find(|d| d.name() == s)
    }

    fn default_n(self) -> usize {
        match self {
            DatasetKind::Negation => DEFAULT_NEGATION_N,
            DatasetKind::HalfMoons => DEFAULT_MOONS_N,
            DatasetKind::Spirals => DEFAULT_SPIRALS_N,
        }
    }

    fn default_noise(self) -> f64 {
        match self {
            DatasetKind::Negation => 0.0,
            DatasetKind::HalfMoons => DEFAULT_MOONS_NOISE,
            DatasetKind::Spirals => DEFAULT_SPIRALS_NOISE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossName {
    TerminalQuadratic,
    TerminalCrossEntropy,
    BackpropIntegral,
}

impl LossName {
    pub fn name(self) -> &'static str {
        match self {
            LossName::TerminalQuadratic => "terminal_quadratic",
            LossName::TerminalCrossEntropy => "terminal_cross_entropy",
            LossName::BackpropIntegral => "backprop_integral",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            LossName::TerminalQuadratic,
            LossName::TerminalCrossEntropy,
            LossName::BackpropIntegral,
        ]
        .into_iter()
        .find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSection {
    pub kind: LossName,
    pub gamma: f64,
    /// Running cost of `backprop_integral`.
    pub stage: OutputLoss,
    pub stage_on: StageTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub eta: f64,
    pub epochs: usize,
    pub mode: TrainMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub dataset: DatasetKind,
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSection {
    /// Grid points per axis.
    pub points: usize,
    /// Fixed input for axes not on the grid; defaults to the data mean.
    pub u: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub solver: SolverSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub surface: SurfaceSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            solver: SolverSection {
                atol: 1e-6,
                rtol: 1e-6,
                max_steps: SolverConfig::default().max_steps,
            },
            loss: LossSection {
                kind: LossName::TerminalQuadratic,
                gamma: DEFAULT_GAMMA,
                stage: OutputLoss::Quadratic,
                stage_on: StageTarget::Output,
            },
            train: TrainSection {
                eta: 0.02,
                epochs: 100,
                mode: TrainMode::Full,
            },
            data: DataSection {
                dataset: DatasetKind::Negation,
                n: DEFAULT_NEGATION_N,
                noise: 0.0,
                seed: 0,
                test_fraction: 0.2,
            },
            surface: SurfaceSection {
                points: 101,
                u: None,
            },
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "variant",
            "n_x",
            "n_u",
            "n_y",
            "energy_layers",
            "head",
            "data_dependent",
            "alpha_init",
            "wA_init",
            "S",
            "train_S",
            "train_hu",
            "train_hy",
            "seed",
        ],
    ),
    ("solver", &["atol", "rtol", "max_steps"]),
    ("loss", &["kind", "gamma", "stage", "stage_on"]),
    ("train", &["eta", "epochs", "mode"]),
    ("data", &["dataset", "n", "noise", "seed", "test_fraction"]),
    ("surface", &["points", "u"]),
];

fn err(line: usize, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        key: Some(key.to_string()),
        message: message.into(),
    }
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| err(line, key, format!("cannot parse `{v}`")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(err(line, key, format!("expected true or false, got `{v}`"))),
    }
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',').map(|p| num(line, key, p.trim())).collect()
}

fn choice<T>(line: usize, key: &str, v: &str, parsed: Option<T>, options: &str) -> Result<T, ConfigError> {
    parsed.ok_or_else(|| err(line, key, format!("unknown value `{v}`, expected one of {options}")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut c = Config::default();
        let mut section: Option<&str> = None;
        let mut seen: HashSet<(String, String)> = HashSet::new();
        let (mut n_set, mut noise_set) = (false, false);
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError {
                    line: Some(line),
                    key: None,
                    message: format!("malformed section header `{s}`"),
                })?;
                let name = name.trim();
                section = Some(KEYS.iter().map(|(n, _)| *n).find(|n| *n == name).ok_or_else(|| ConfigError {
                    line: Some(line),
                    key: None,
                    message: format!("unknown section `[{name}]`"),
                })?);
                continue;
            }
            let sec = section.ok_or_else(|| ConfigError {
                line: Some(line),
                key: None,
                message: "key outside of any section".into(),
            })?;
            let (k, v) = s.split_once('=').ok_or_else(|| ConfigError {
                line: Some(line),
                key: None,
                message: format!("expected `key = value`, got `{s}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let known = KEYS.iter().find(|(n, _)| *n == sec).unwrap().1;
            if !known.contains(&k) {
                return Err(err(line, k, format!("unknown key in [{sec}]")));
            }
            if !seen.insert((sec.to_string(), k.to_string())) {
                return Err(err(line, k, format!("duplicate key in [{sec}]")));
            }
            let m = &mut c.model;
            match (sec, k) {
                ("model", "variant") => {
                    m.variant = choice(line, k, v, Variant::parse(v), "vanilla, stable, port_hamiltonian, second_order")?
                }
                ("model", "n_x") => m.n_x = num(line, k, v)?,
                ("model", "n_u") => m.n_u = num(line, k, v)?,
                ("model", "n_y") => m.n_y = num(line, k, v)?,
                ("model", "energy_layers") => m.layers = list(line, k, v)?,
                ("model", "head") => m.head = choice(line, k, v, Head::parse(v), "square, sigmoid, identity")?,
                ("model", "data_dependent") => m.data_dependent = boolean(line, k, v)?,
                ("model", "alpha_init") => m.alpha_init = num(line, k, v)?,
                ("model", "wA_init") => m.wa_init = num(line, k, v)?,
                ("model", "S") => m.horizon = num(line, k, v)?,
                ("model", "train_S") => m.train.horizon = boolean(line, k, v)?,
                ("model", "train_hu") => m.train.v_u = boolean(line, k, v)?,
                ("model", "train_hy") => m.train.v_y = boolean(line, k, v)?,
                ("model", "seed") => m.seed = num(line, k, v)?,
                ("solver", "atol") => c.solver.atol = num(line, k, v)?,
                ("solver", "rtol") => c.solver.rtol = num(line, k, v)?,
                ("solver", "max_steps") => c.solver.max_steps = num(line, k, v)?,
                ("loss", "kind") => {
                    c.loss.kind = choice(
                        line,
                        k,
                        v,
                        LossName::parse(v),
                        "terminal_quadratic, terminal_cross_entropy, backprop_integral",
                    )?
                }
                ("loss", "gamma") => c.loss.gamma = num(line, k, v)?,
                ("loss", "stage") => {
                    c.loss.stage = choice(
                        line,
                        k,
                        v,
                        match v {
                            "quadratic" => Some(OutputLoss::Quadratic),
                            "cross_entropy" => Some(OutputLoss::CrossEntropy),
                            _ => None,
                        },
                        "quadratic, cross_entropy",
                    )?
                }
                ("loss", "stage_on") => {
                    c.loss.stage_on = choice(
                        line,
                        k,
                        v,
                        match v {
                            "output" => Some(StageTarget::Output),
                            "state" => Some(StageTarget::State),
                            _ => None,
                        },
                        "output, state",
                    )?
                }
                ("train", "eta") => c.train.eta = num(line, k, v)?,
                ("train", "epochs") => c.train.epochs = num(line, k, v)?,
                ("train", "mode") => c.train.mode = choice(line, k, v, TrainMode::parse(v), "full, stochastic")?,
                ("data", "dataset") => {
                    c.data.dataset = choice(line, k, v, DatasetKind::parse(v), "negation, halfmoons, spirals")?
                }
                ("data", "n") => {
                    c.data.n = num(line, k, v)?;
                    n_set = true;
                }
                ("data", "noise") => {
                    c.data.noise = num(line, k, v)?;
                    noise_set = true;
                }
                ("data", "seed") => c.data.seed = num(line, k, v)?,
                ("data", "test_fraction") => c.data.test_fraction = num(line, k, v)?,
                ("surface", "points") => c.surface.points = num(line, k, v)?,
                ("surface", "u") => c.surface.u = Some(list(line, k, v)?),
                _ => unreachable!("key table and match arms disagree"),
            }
        }
        if !n_set {
            c.data.n = c.data.dataset.default_n();
        }
        if !noise_set {
            c.data.noise = c.data.dataset.default_noise();
        }
        c.validate()?;
        Ok(c)
    }

    /// Range checks that do not need the model to be built.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| ConfigError {
            line: None,
            key: Some(key.to_string()),
            message,
        };
        if !(self.solver.atol > 0.0 && self.solver.rtol > 0.0) {
            return Err(bad("atol", "solver tolerances must be positive".into()));
        }
        if self.solver.max_steps == 0 {
            return Err(bad("max_steps", "must be positive".into()));
        }
        if !(self.loss.gamma >= 0.0) {
            return Err(bad("gamma", format!("must be non-negative, got {}", self.loss.gamma)));
        }
        if !(self.train.eta > 0.0) {
            return Err(bad("eta", format!("must be positive, got {}", self.train.eta)));
        }
        if !(self.model.horizon > 0.0) {
            return Err(bad("S", format!("must be positive, got {}", self.model.horizon)));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(bad("test_fraction", format!("must lie in [0, 1), got {}", self.data.test_fraction)));
        }
        if !(self.data.noise >= 0.0) {
            return Err(bad("noise", format!("must be non-negative, got {}", self.data.noise)));
        }
        if self.surface.points < 2 {
            return Err(bad("points", "the surface grid needs at least 2 points per axis".into()));
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            atol: self.solver.atol,
            rtol: self.solver.rtol,
            max_steps: self.solver.max_steps,
            ..SolverConfig::default()
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        let kind = match self.loss.kind {
            LossName::TerminalQuadratic => LossKind::Terminal(OutputLoss::Quadratic),
            LossName::TerminalCrossEntropy => LossKind::Terminal(OutputLoss::CrossEntropy),
            LossName::BackpropIntegral => LossKind::Backprop {
                stage: self.loss.stage,
                on: self.loss.stage_on,
            },
        };
        LossSpec {
            kind,
            gamma: self.loss.gamma,
        }
    }

    pub fn train_flags(&self) -> TrainFlags {
        self.model.train
    }

    /// Canonical text form of the resolved configuration.
    pub fn to_echo(&self) -> String {
        let m = &self.model;
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "variant = {}", m.variant.name());
        let _ = writeln!(s, "n_x = {}", m.n_x);
        let _ = writeln!(s, "n_u = {}", m.n_u);
        let _ = writeln!(s, "n_y = {}", m.n_y);
        let _ = writeln!(s, "energy_layers = {}", join(&m.layers));
        let _ = writeln!(s, "head = {}", m.head.name());
        let _ = writeln!(s, "data_dependent = {}", m.data_dependent);
        let _ = writeln!(s, "alpha_init = {:?}", m.alpha_init);
        let _ = writeln!(s, "wA_init = {:?}", m.wa_init);
        let _ = writeln!(s, "S = {:?}", m.horizon);
        let _ = writeln!(s, "train_S = {}", m.train.horizon);
        let _ = writeln!(s, "train_hu = {}", m.train.v_u);
        let _ = writeln!(s, "train_hy = {}", m.train.v_y);
        let _ = writeln!(s, "seed = {}", m.seed);
        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "atol = {:?}", self.solver.atol);
        let _ = writeln!(s, "rtol = {:?}", self.solver.rtol);
        let _ = writeln!(s, "max_steps = {}", self.solver.max_steps);
        let _ = writeln!(s, "\n[loss]");
        let _ = writeln!(s, "kind = {}", self.loss.kind.name());
        let _ = writeln!(s, "gamma = {:?}", self.loss.gamma);
        let _ = writeln!(s, "stage = {}", self.loss.stage.name());
        let on = match self.loss.stage_on {
            StageTarget::Output => "output",
            StageTarget::State => "state",
        };
        let _ = writeln!(s, "stage_on = {on}");
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "eta = {:?}", self.train.eta);
        let _ = writeln!(s, "epochs = {}", self.train.epochs);
        let _ = writeln!(s, "mode = {}", self.train.mode.name());
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "dataset = {}", self.data.dataset.name());
        let _ = writeln!(s, "n = {}", self.data.n);
        let _ = writeln!(s, "noise = {:?}", self.data.noise);
        let _ = writeln!(s, "seed = {}", self.data.seed);
        let _ = writeln!(s, "test_fraction = {:?}", self.data.test_fraction);
        let _ = writeln!(s, "\n[surface]");
        let _ = writeln!(s, "points = {}", self.surface.points);
        if let Some(u) = &self.surface.u {
            let u: Vec<String> = u.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "u = {}", u.join(","));
        }
        s
    }
}
