//! Configuration-driven simulation studies and analytic calculators with CSV
//! output.
//!
//! Config files are flat `key = value` lines; `#` starts a comment. Lists are
//! comma separated. Every replicate uses seed `base_seed + replicate` for both
//! its simulated dataset and its chain, so a replicate's row never depends on
//! which other replicates were run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::asymptotics::{
    cv_normal, fisher_normal, gap_closed_normal, gap_from_matrices, gap_single_quadrature, mixing_bound, GapVariant,
};
use crate::diagnostics::{bvm_rescale, tv_histogram, StreamingIat, TvReference};
use crate::error::{Error, Result};
use crate::gibbs::{default_init, feasible_start, mle_psi, run_chain_into, Blocking, ColumnSubset, KernelSpec};
use crate::models::{simulate_data, GammaPrior, GlobalParams, ModelKind, ModelSpec, MuPrior, PriorSpec, PARAM_NAMES};

pub const QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

pub const CSV_COLUMNS: [&str; 18] = [
    "experiment",
    "row_type",
    "m",
    "J",
    "replicate",
    "seed",
    "quantile",
    "variant",
    "mu_star",
    "max_iat",
    "iat_mu",
    "iat_tau1",
    "iat_tau0",
    "gamma",
    "bound_T",
    "tv",
    "runtime_seconds",
    "error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Fig3,
    Bvm,
    Gap,
    Bound,
    Chain,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Fig1,
        ExperimentKind::Fig2,
        ExperimentKind::Fig3,
        ExperimentKind::Bvm,
        ExperimentKind::Gap,
        ExperimentKind::Bound,
        ExperimentKind::Chain,
    ];

    /// Subcommand name.
    pub fn cli_name(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::Bvm => "bvm",
            ExperimentKind::Gap => "gap",
            ExperimentKind::Bound => "bound",
            ExperimentKind::Chain => "chain",
        }
    }

    /// Identifier written to the `experiment` column.
    pub fn id(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1_binomial_iat",
            ExperimentKind::Fig2 => "fig2_logit_gap",
            ExperimentKind::Fig3 => "fig3_extended_normal_iat",
            ExperimentKind::Bvm => "bvm_check",
            ExperimentKind::Gap => "gap",
            ExperimentKind::Bound => "bound",
            ExperimentKind::Chain => "chain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.cli_name() == s || k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitChoice {
    /// See [`default_init`].
    Default,
    /// See [`feasible_start`]; the value is the ball constant `c`.
    Feasible(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelKind,
    pub m_grid: Vec<usize>,
    pub blocking: Blocking,
    pub mu_star: f64,
    pub tau1_star: f64,
    pub tau0_star: f64,
    pub mu_prior: MuPrior,
    pub tau1_prior: GammaPrior,
    pub tau0_prior: GammaPrior,
    pub j_grid: Vec<usize>,
    pub replications: usize,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub base_seed: u64,
    pub m_warm: f64,
    pub eps: f64,
    pub mu_star_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    /// `None` runs every normal variant.
    pub variant: Option<GapVariant>,
    pub bins: usize,
    pub init: InitChoice,
    pub record_runtime: bool,
    pub output_path: Option<PathBuf>,
}

fn blocking_name(b: Blocking) -> &'static str {
    match b {
        Blocking::P1KnownTau1 => "p1",
        Blocking::P2JointThetaMu => "p2",
        Blocking::P3SequentialMuTau => "p3",
        Blocking::TwoBlockThetaVsPsi => "two_block",
        Blocking::ExtendedThetaMuTau0Tau1 => "extended",
        Blocking::FixedDimMuTau => "fixed_dim",
    }
}

fn model_name(k: ModelKind) -> &'static str {
    match k {
        ModelKind::NormalKnownTau0 => "normal_known_tau0",
        ModelKind::NormalUnknownTau0 => "normal_unknown_tau0",
        ModelKind::BinomialLogit => "binomial_logit",
        ModelKind::GenericDiscrete => "generic_discrete",
    }
}

fn variant_name(v: GapVariant) -> &'static str {
    match v {
        GapVariant::P1 => "p1",
        GapVariant::P2P3 => "p2p3",
        GapVariant::Extended => "extended",
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn join<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Defaults for each subcommand. Chain lengths and replicate counts are
    /// sized for a desktop run.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            model: ModelKind::NormalKnownTau0,
            m_grid: vec![3],
            blocking: Blocking::TwoBlockThetaVsPsi,
            mu_star: 0.0,
            tau1_star: 1.0,
            tau0_star: 1.0,
            mu_prior: MuPrior::NormalOverTau { mean: 0.0, scale: 1000.0 },
            tau1_prior: GammaPrior::new(1.0, 1.0),
            tau0_prior: GammaPrior::new(1.0, 1.0),
            j_grid: vec![100],
            replications: 1,
            iters: 20000,
            burn_in: 2000,
            thin: 1,
            base_seed: 0,
            m_warm: 2.0,
            eps: 0.2,
            mu_star_grid: vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0],
            gamma_grid: vec![0.75],
            variant: None,
            bins: 50,
            init: InitChoice::Default,
            record_runtime: false,
            output_path: None,
        };
        match kind {
            ExperimentKind::Fig1 => ExperimentConfig {
                model: ModelKind::BinomialLogit,
                m_grid: vec![3, 5],
                mu_star: 1.0,
                tau1_star: 1.0,
                tau1_prior: GammaPrior::new(0.1, 0.1),
                j_grid: vec![25, 50, 100, 200, 400],
                replications: 10,
                ..base
            },
            ExperimentKind::Fig2 => ExperimentConfig {
                model: ModelKind::BinomialLogit,
                m_grid: vec![1],
                blocking: Blocking::P1KnownTau1,
                tau1_star: 1.0,
                mu_prior: MuPrior::NormalFixedVar { mean: 0.0, var: 1000.0 },
                j_grid: vec![2000],
                replications: 3,
                iters: 5000,
                burn_in: 500,
                ..base
            },
            ExperimentKind::Fig3 => ExperimentConfig {
                model: ModelKind::NormalUnknownTau0,
                m_grid: vec![1, 3, 5],
                blocking: Blocking::ExtendedThetaMuTau0Tau1,
                mu_star: 4.0,
                tau1_star: 3.0,
                tau0_star: 1.0,
                mu_prior: MuPrior::Flat,
                j_grid: vec![50, 100, 200, 400],
                replications: 10,
                ..base
            },
            ExperimentKind::Bvm => ExperimentConfig {
                j_grid: vec![100, 400, 1000],
                replications: 10,
                burn_in: 1000,
                ..base
            },
            ExperimentKind::Gap => ExperimentConfig { m_grid: vec![1, 2, 3, 5, 10], ..base },
            ExperimentKind::Bound | ExperimentKind::Chain => base,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "experiment" => {
                let k = ExperimentKind::parse(v)?;
                if k != self.kind {
                    return Err(Error::Config(format!(
                        "config is for '{}' but the subcommand is '{}'",
                        k.cli_name(),
                        self.kind.cli_name()
                    )));
                }
            }
            "model" => {
                self.model = match v {
                    "normal_known_tau0" => ModelKind::NormalKnownTau0,
                    "normal_unknown_tau0" => ModelKind::NormalUnknownTau0,
                    "binomial_logit" => ModelKind::BinomialLogit,
                    _ => return Err(Error::Config(format!("model: unknown model '{v}'"))),
                }
            }
            "m" => self.m_grid = vec![parse_num(key, v)?],
            "m_grid" => self.m_grid = parse_list(key, v)?,
            "blocking" => {
                self.blocking = [
                    Blocking::P1KnownTau1,
                    Blocking::P2JointThetaMu,
                    Blocking::P3SequentialMuTau,
                    Blocking::TwoBlockThetaVsPsi,
                    Blocking::ExtendedThetaMuTau0Tau1,
                    Blocking::FixedDimMuTau,
                ]
                .into_iter()
                .find(|b| blocking_name(*b) == v)
                .ok_or_else(|| Error::Config(format!("blocking: unknown blocking '{v}'")))?
            }
            "mu_star" => self.mu_star = parse_num(key, v)?,
            "tau1_star" => self.tau1_star = parse_num(key, v)?,
            "tau0_star" => self.tau0_star = parse_num(key, v)?,
            "mu_prior" => {
                let (mean, scale) = self.mu_prior_params();
                self.mu_prior = match v {
                    "flat" => MuPrior::Flat,
                    "normal_over_tau" => MuPrior::NormalOverTau { mean, scale },
                    "normal_fixed_var" => MuPrior::NormalFixedVar { mean, var: scale },
                    _ => return Err(Error::Config(format!("mu_prior: unknown prior '{v}'"))),
                }
            }
            "mu_prior_mean" | "mu_prior_scale" => {
                let x: f64 = parse_num(key, v)?;
                let is_mean = key.trim() == "mu_prior_mean";
                match &mut self.mu_prior {
                    MuPrior::Flat => return Err(Error::Config(format!("{key}: mu_prior is flat"))),
                    MuPrior::NormalOverTau { mean, scale: s } | MuPrior::NormalFixedVar { mean, var: s } => {
                        if is_mean {
                            *mean = x
                        } else {
                            *s = x
                        }
                    }
                }
            }
            "tau1_prior_shape" => self.tau1_prior.shape = parse_num(key, v)?,
            "tau1_prior_rate" => self.tau1_prior.rate = parse_num(key, v)?,
            "tau0_prior_shape" => self.tau0_prior.shape = parse_num(key, v)?,
            "tau0_prior_rate" => self.tau0_prior.rate = parse_num(key, v)?,
            "J_grid" | "j_grid" => self.j_grid = parse_list(key, v)?,
            "replications" => self.replications = parse_num(key, v)?,
            "iters" => self.iters = parse_num(key, v)?,
            "burn_in" => self.burn_in = parse_num(key, v)?,
            "thin" => self.thin = parse_num(key, v)?,
            "base_seed" => self.base_seed = parse_num(key, v)?,
            "M" => self.m_warm = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "mu_star_grid" => self.mu_star_grid = parse_list(key, v)?,
            "gamma_grid" => self.gamma_grid = parse_list(key, v)?,
            "variant" => {
                self.variant = match v {
                    "all" => None,
                    "p1" => Some(GapVariant::P1),
                    "p2p3" => Some(GapVariant::P2P3),
                    "extended" => Some(GapVariant::Extended),
                    _ => return Err(Error::Config(format!("variant: unknown variant '{v}'"))),
                }
            }
            "bins" => self.bins = parse_num(key, v)?,
            "init" => {
                self.init = match v {
                    "default" => InitChoice::Default,
                    "feasible" => InitChoice::Feasible(match self.init {
                        InitChoice::Feasible(c) => c,
                        InitChoice::Default => 1.0,
                    }),
                    _ => return Err(Error::Config(format!("init: expected default or feasible, got '{v}'"))),
                }
            }
            "init_radius" => self.init = InitChoice::Feasible(parse_num(key, v)?),
            "record_runtime" => self.record_runtime = parse_bool(key, v)?,
            "output_path" => self.output_path = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    fn mu_prior_params(&self) -> (f64, f64) {
        match self.mu_prior {
            MuPrior::Flat => (0.0, 1000.0),
            MuPrior::NormalOverTau { mean, scale } => (mean, scale),
            MuPrior::NormalFixedVar { mean, var } => (mean, var),
        }
    }

    /// Applies every line of a config file.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{raw}'", n + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Preset, then the file (if any), then `key=value` overrides in order.
    pub fn load(kind: ExperimentKind, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::preset(kind);
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m_grid.is_empty() || self.m_grid.contains(&0) {
            return bad("m_grid must be non-empty with positive entries".into());
        }
        let needs_chain = matches!(
            self.kind,
            ExperimentKind::Fig1 | ExperimentKind::Fig2 | ExperimentKind::Fig3 | ExperimentKind::Bvm | ExperimentKind::Chain
        );
        if needs_chain {
            if self.j_grid.is_empty() || self.j_grid.contains(&0) {
                return bad("J_grid must be non-empty with positive entries".into());
            }
            if self.replications == 0 {
                return bad("replications must be at least 1".into());
            }
            if self.thin == 0 || self.burn_in >= self.iters {
                return bad(format!("need thin >= 1 and burn_in < iters, got {} / {}", self.burn_in, self.iters));
            }
            for &m in &self.m_grid {
                self.kernel(m)?;
            }
        }
        if matches!(self.kind, ExperimentKind::Fig2) && self.mu_star_grid.is_empty() {
            return bad("mu_star_grid must be non-empty".into());
        }
        if matches!(self.kind, ExperimentKind::Bound) && self.gamma_grid.is_empty() {
            return bad("gamma_grid must be non-empty".into());
        }
        if matches!(self.kind, ExperimentKind::Bvm) && self.bins < 10 {
            return bad("bins must be at least 10".into());
        }
        if let InitChoice::Feasible(c) = self.init {
            if !(c > 0.0) {
                return bad(format!("init_radius must be positive, got {c}"));
            }
        }
        Ok(())
    }

    fn model_spec(&self, m: usize) -> Result<ModelSpec> {
        match self.model {
            ModelKind::NormalKnownTau0 => ModelSpec::normal_known_tau0(m),
            ModelKind::NormalUnknownTau0 => ModelSpec::normal_unknown_tau0(m),
            ModelKind::BinomialLogit => ModelSpec::binomial_logit(m),
            ModelKind::GenericDiscrete => Err(Error::Config("generic discrete models are library-only".into())),
        }
    }

    fn kernel(&self, m: usize) -> Result<KernelSpec> {
        let tau0 = (self.model == ModelKind::NormalUnknownTau0).then_some(self.tau0_prior);
        let prior = PriorSpec { mu: self.mu_prior, tau1: self.tau1_prior, tau0 };
        KernelSpec::new(self.model_spec(m)?, prior, self.blocking)
    }

    fn psi_star(&self, mu_star: Option<f64>) -> GlobalParams {
        GlobalParams::new(mu_star.unwrap_or(self.mu_star), self.tau1_star, self.tau0_star)
    }

    /// Canonical text of every setting that affects results (the output path
    /// does not).
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("experiment", self.kind.id().into());
        kv("model", model_name(self.model).into());
        kv("m_grid", join(&self.m_grid));
        kv("blocking", blocking_name(self.blocking).into());
        kv("psi_star", join(&[self.mu_star, self.tau1_star, self.tau0_star]));
        kv("mu_prior", format!("{:?}", self.mu_prior));
        kv("tau1_prior", join(&[self.tau1_prior.shape, self.tau1_prior.rate]));
        kv("tau0_prior", join(&[self.tau0_prior.shape, self.tau0_prior.rate]));
        kv("J_grid", join(&self.j_grid));
        kv("replications", self.replications.to_string());
        kv("chain", join(&[self.iters, self.burn_in, self.thin]));
        kv("base_seed", self.base_seed.to_string());
        kv("bound", join(&[self.m_warm, self.eps]));
        kv("mu_star_grid", join(&self.mu_star_grid));
        kv("gamma_grid", join(&self.gamma_grid));
        kv("variant", self.variant.map_or("all", variant_name).into());
        kv("bins", self.bins.to_string());
        kv("init", format!("{:?}", self.init));
        kv("record_runtime", self.record_runtime.to_string());
        s
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowType {
    Replicate,
    Summary,
    Error,
    ClosedForm,
    Matrix,
    Quadrature,
    Bound,
}

impl RowType {
    const ALL: [RowType; 7] = [
        RowType::Replicate,
        RowType::Summary,
        RowType::Error,
        RowType::ClosedForm,
        RowType::Matrix,
        RowType::Quadrature,
        RowType::Bound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RowType::Replicate => "replicate",
            RowType::Summary => "summary",
            RowType::Error => "error",
            RowType::ClosedForm => "closed_form",
            RowType::Matrix => "matrix",
            RowType::Quadrature => "quadrature",
            RowType::Bound => "bound",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| Error::Config(format!("unknown row_type '{s}'")))
    }
}

/// One CSV row. Fields that do not apply to a row are `None` and written
/// empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub row_type: RowType,
    pub m: Option<usize>,
    pub j: Option<usize>,
    pub replicate: Option<usize>,
    pub seed: Option<u64>,
    pub quantile: Option<f64>,
    pub variant: Option<String>,
    pub mu_star: Option<f64>,
    pub max_iat: Option<f64>,
    pub iat_mu: Option<f64>,
    pub iat_tau1: Option<f64>,
    pub iat_tau0: Option<f64>,
    pub gamma: Option<f64>,
    pub bound_t: Option<f64>,
    pub tv: Option<f64>,
    pub runtime_seconds: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn new(kind: ExperimentKind, row_type: RowType) -> Self {
        ResultRow {
            experiment: kind.id().into(),
            row_type,
            m: None,
            j: None,
            replicate: None,
            seed: None,
            quantile: None,
            variant: None,
            mu_star: None,
            max_iat: None,
            iat_mu: None,
            iat_tau1: None,
            iat_tau0: None,
            gamma: None,
            bound_t: None,
            tv: None,
            runtime_seconds: None,
            error: None,
        }
    }

    fn metrics(&self) -> [Option<f64>; 5] {
        [self.max_iat, self.iat_mu, self.iat_tau1, self.iat_tau0, self.tv]
    }

    fn metrics_mut(&mut self) -> [&mut Option<f64>; 5] {
        [&mut self.max_iat, &mut self.iat_mu, &mut self.iat_tau1, &mut self.iat_tau0, &mut self.tv]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub base_seed: u64,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub fn metadata_line(&self) -> String {
        format!(
            "# hiergibbs {} experiment={} config_hash={} seed={} quantile=type7",
            env!("CARGO_PKG_VERSION"),
            self.kind.id(),
            self.config_hash,
            self.base_seed
        )
    }

    /// Summary rows at quantile `q` for the given `m`, in row order.
    pub fn summaries(&self, m: usize, q: f64) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.row_type == RowType::Summary && r.m == Some(m) && r.quantile == Some(q)).collect()
    }
}

/// Linear-interpolation (type 7) quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("quantile level {p} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy)]
struct Job {
    m: usize,
    j: usize,
    mu_star: Option<f64>,
    replicate: usize,
}

enum Block {
    Fixed(Vec<ResultRow>),
    Replicates(Vec<Job>),
}

fn replicate_row(cfg: &ExperimentConfig, job: Job) -> ResultRow {
    let seed = cfg.base_seed + job.replicate as u64;
    let start = Instant::now();
    let outcome = match cfg.kind {
        ExperimentKind::Bvm => bvm_replicate(cfg, job, seed),
        _ => iat_replicate(cfg, job, seed),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let mut row = match outcome {
        Ok(row) => row,
        Err(e) => {
            let mut r = ResultRow::new(cfg.kind, RowType::Error);
            r.error = Some(e.to_string());
            r
        }
    };
    row.m = Some(job.m);
    row.j = Some(job.j);
    row.replicate = Some(job.replicate);
    row.seed = Some(seed);
    row.mu_star = job.mu_star;
    if cfg.record_runtime {
        row.runtime_seconds = Some(elapsed);
    }
    row
}

fn iat_replicate(cfg: &ExperimentConfig, job: Job, seed: u64) -> Result<ResultRow> {
    let spec = cfg.kernel(job.m)?;
    let psi = cfg.psi_star(job.mu_star);
    let data = simulate_data(&spec.model, &psi, job.j, seed)?;
    let init = match cfg.init {
        InitChoice::Default => default_init(&spec, &data, &psi)?,
        InitChoice::Feasible(c) => feasible_start(&spec, &data, &psi, c, seed)?,
    };
    let mut sink = StreamingIat::new();
    run_chain_into(&spec, &data, &init, cfg.iters, cfg.burn_in, cfg.thin, seed, &mut sink)?;
    let s = sink.summary()?;
    let mut row = ResultRow::new(cfg.kind, RowType::Replicate);
    row.max_iat = Some(s.max_iat);
    row.iat_mu = s.iat_of("mu");
    row.iat_tau1 = s.iat_of("tau1");
    row.iat_tau0 = s.iat_of("tau0");
    Ok(row)
}

/// Total variation between the rescaled posterior draws and the Gaussian
/// limit `N(0, I^{-1}(psi*))`, centred at the maximum-likelihood estimate.
fn bvm_replicate(cfg: &ExperimentConfig, job: Job, seed: u64) -> Result<ResultRow> {
    let spec = cfg.kernel(job.m)?;
    if !matches!(spec.model.kind, ModelKind::NormalKnownTau0 | ModelKind::NormalUnknownTau0)
        || !spec.blocking.has_groups()
    {
        return Err(Error::Config("bvm needs a hierarchical normal model".into()));
    }
    let mask = spec.blocking.mask();
    let psi = cfg.psi_star(job.mu_star).with_mask(mask);
    let data = simulate_data(&spec.model, &psi, job.j, seed)?;
    let centre = mle_psi(&spec.model, &data, &psi)?;
    let init = match cfg.init {
        InitChoice::Default => default_init(&spec, &data, &psi)?,
        InitChoice::Feasible(c) => feasible_start(&spec, &data, &psi, c, seed)?,
    };
    let names: Vec<&str> = mask.indices().into_iter().map(|i| PARAM_NAMES[i]).collect();
    let mut sink = ColumnSubset::new(&names);
    run_chain_into(&spec, &data, &init, cfg.iters, cfg.burn_in, cfg.thin, seed, &mut sink)?;
    let draws = bvm_rescale(&sink.into_output().matrix(&names)?, &centre, job.j)?;
    let cov = fisher_normal(&psi, job.m)?.entries.inverse()?;
    let tv = tv_histogram(&draws, &TvReference::Gaussian { mean: vec![0.0; names.len()], cov }, cfg.bins)?;
    let mut row = ResultRow::new(cfg.kind, RowType::Replicate);
    row.tv = Some(tv.value);
    Ok(row)
}

fn summary_rows(cfg: &ExperimentConfig, reps: &[ResultRow]) -> Vec<ResultRow> {
    let ok: Vec<&ResultRow> = reps.iter().filter(|r| r.row_type == RowType::Replicate).collect();
    let Some(first) = ok.first() else {
        return Vec::new();
    };
    let columns: Vec<Option<Vec<f64>>> = (0..5)
        .map(|k| {
            let mut v: Vec<f64> = ok.iter().map(|r| r.metrics()[k]).collect::<Option<_>>()?;
            v.sort_by(f64::total_cmp);
            Some(v)
        })
        .collect();
    QUANTILES
        .iter()
        .map(|&q| {
            let mut row = ResultRow::new(cfg.kind, RowType::Summary);
            row.m = first.m;
            row.j = first.j;
            row.mu_star = first.mu_star;
            row.quantile = Some(q);
            for (slot, col) in row.metrics_mut().into_iter().zip(&columns) {
                *slot = col.as_ref().map(|v| quantile_type7(v, q).expect("non-empty sorted sample"));
            }
            row
        })
        .collect()
}

fn analytic_row(kind: ExperimentKind, row_type: RowType, m: usize, value: Result<f64>) -> ResultRow {
    let mut row = ResultRow::new(kind, row_type);
    row.m = Some(m);
    match value {
        Ok(g) => row.gamma = Some(g),
        Err(e) => {
            row.row_type = RowType::Error;
            row.error = Some(e.to_string());
        }
    }
    row
}

fn plan(cfg: &ExperimentConfig) -> Vec<Block> {
    let kind = cfg.kind;
    let reps = |m, j, mu_star| {
        Block::Replicates((0..cfg.replications).map(|replicate| Job { m, j, mu_star, replicate }).collect())
    };
    let mut blocks = Vec::new();
    match kind {
        ExperimentKind::Fig1 | ExperimentKind::Fig3 | ExperimentKind::Bvm | ExperimentKind::Chain => {
            for &m in &cfg.m_grid {
                for &j in &cfg.j_grid {
                    blocks.push(reps(m, j, None));
                }
            }
        }
        ExperimentKind::Fig2 => {
            for &m in &cfg.m_grid {
                for &mu in &cfg.mu_star_grid {
                    let psi = cfg.psi_star(Some(mu));
                    let gamma = cfg.model_spec(m).and_then(|model| gap_single_quadrature(&model, &psi));
                    let mut row = analytic_row(kind, RowType::Quadrature, m, gamma);
                    row.mu_star = Some(mu);
                    if let Some(g) = row.gamma {
                        match mixing_bound(g, cfg.m_warm, cfg.eps) {
                            Ok(b) => row.bound_t = Some(b),
                            Err(e) => {
                                row.row_type = RowType::Error;
                                row.error = Some(e.to_string());
                            }
                        }
                    }
                    blocks.push(Block::Fixed(vec![row]));
                    for &j in &cfg.j_grid {
                        blocks.push(reps(m, j, Some(mu)));
                    }
                }
            }
        }
        ExperimentKind::Gap => {
            let mut rows = Vec::new();
            for &m in &cfg.m_grid {
                if matches!(cfg.model, ModelKind::BinomialLogit) {
                    for &mu in &cfg.mu_star_grid {
                        let gamma = cfg
                            .model_spec(m)
                            .and_then(|model| gap_single_quadrature(&model, &cfg.psi_star(Some(mu))));
                        let mut row = analytic_row(kind, RowType::Quadrature, m, gamma);
                        row.mu_star = Some(mu);
                        rows.push(row);
                    }
                    continue;
                }
                let variants = match cfg.variant {
                    Some(v) => vec![v],
                    None => vec![GapVariant::P1, GapVariant::P2P3, GapVariant::Extended],
                };
                for v in variants {
                    let closed = gap_closed_normal(m, cfg.tau0_star, cfg.tau1_star, v);
                    let matrix = cv_normal(&cfg.psi_star(None), m, v)
                        .and_then(|inputs| gap_from_matrices(&inputs, None))
                        .map(|r| r.gamma);
                    for (t, val) in [(RowType::ClosedForm, closed), (RowType::Matrix, matrix)] {
                        let mut row = analytic_row(kind, t, m, val);
                        row.variant = Some(variant_name(v).into());
                        rows.push(row);
                    }
                }
            }
            blocks.push(Block::Fixed(rows));
        }
        ExperimentKind::Bound => {
            let rows = cfg
                .gamma_grid
                .iter()
                .map(|&g| {
                    let mut row = ResultRow::new(kind, RowType::Bound);
                    row.gamma = Some(g);
                    match mixing_bound(g, cfg.m_warm, cfg.eps) {
                        Ok(b) => row.bound_t = Some(b),
                        Err(e) => {
                            row.row_type = RowType::Error;
                            row.error = Some(e.to_string());
                        }
                    }
                    row
                })
                .collect();
            blocks.push(Block::Fixed(rows));
        }
    }
    blocks
}

/// Runs every replicate of `cfg` on a pool of `jobs` threads. Rows come out
/// ordered by grid position and replicate whatever the scheduling; each
/// block of replicates is followed by its quantile summary rows. Failed
/// replicates become error rows.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let blocks = plan(cfg);
    let all_jobs: Vec<Job> = blocks
        .iter()
        .flat_map(|b| match b {
            Block::Replicates(js) => js.clone(),
            Block::Fixed(_) => Vec::new(),
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let done: Vec<ResultRow> = pool.install(|| all_jobs.par_iter().map(|&job| replicate_row(cfg, job)).collect());
    let mut done = done.into_iter();
    let mut rows = Vec::new();
    for b in blocks {
        match b {
            Block::Fixed(r) => rows.extend(r),
            Block::Replicates(js) => {
                let reps: Vec<ResultRow> = done.by_ref().take(js.len()).collect();
                let summary = summary_rows(cfg, &reps);
                rows.extend(reps);
                rows.extend(summary);
            }
        }
    }
    Ok(ExperimentResult { kind: cfg.kind, config_hash: cfg.hash_hex(), base_seed: cfg.base_seed, rows })
}

fn fmt_f(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.11e}"))
}

fn fmt_i<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Metadata line, header and rows as CSV text.
pub fn to_csv_string(result: &ExperimentResult) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Internal(format!("csv encoding failed: {e}"));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in &result.rows {
        w.write_record([
            r.experiment.clone(),
            r.row_type.as_str().into(),
            fmt_i(r.m),
            fmt_i(r.j),
            fmt_i(r.replicate),
            fmt_i(r.seed),
            fmt_f(r.quantile),
            r.variant.clone().unwrap_or_default(),
            fmt_f(r.mu_star),
            fmt_f(r.max_iat),
            fmt_f(r.iat_mu),
            fmt_f(r.iat_tau1),
            fmt_f(r.iat_tau0),
            fmt_f(r.gamma),
            fmt_f(r.bound_t),
            fmt_f(r.tv),
            fmt_f(r.runtime_seconds),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Internal(format!("csv encoding failed: {e}")))?;
    let body = String::from_utf8(body).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(format!("{}\n{body}", result.metadata_line()))
}

pub fn emit_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let text = to_csv_string(result)?;
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Parses text produced by [`to_csv_string`] into its metadata line and rows.
pub fn parse_csv(text: &str) -> Result<(String, Vec<ResultRow>)> {
    let (meta, body) = text.split_once('\n').ok_or_else(|| Error::Config("missing metadata line".into()))?;
    if !meta.starts_with('#') {
        return Err(Error::Config("first line must be the # metadata line".into()));
    }
    let mut rd = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let headers = rd.headers().map_err(|e| Error::Config(format!("bad csv header: {e}")))?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Config(format!("unexpected columns {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::Config(format!("bad csv record: {e}")))?;
        let s = |k: usize| rec.get(k).unwrap_or("");
        fn opt<T: std::str::FromStr>(v: &str, k: &str) -> Result<Option<T>> {
            if v.is_empty() {
                Ok(None)
            } else {
                parse_num(k, v).map(Some)
            }
        }
        let text = |k: usize| (!s(k).is_empty()).then(|| s(k).to_string());
        rows.push(ResultRow {
            experiment: s(0).into(),
            row_type: RowType::parse(s(1))?,
            m: opt(s(2), "m")?,
            j: opt(s(3), "J")?,
            replicate: opt(s(4), "replicate")?,
            seed: opt(s(5), "seed")?,
            quantile: opt(s(6), "quantile")?,
            variant: text(7),
            mu_star: opt(s(8), "mu_star")?,
            max_iat: opt(s(9), "max_iat")?,
            iat_mu: opt(s(10), "iat_mu")?,
            iat_tau1: opt(s(11), "iat_tau1")?,
            iat_tau0: opt(s(12), "iat_tau0")?,
            gamma: opt(s(13), "gamma")?,
            bound_t: opt(s(14), "bound_T")?,
            tv: opt(s(15), "tv")?,
            runtime_seconds: opt(s(16), "runtime_seconds")?,
            error: text(17),
        });
    }
    Ok((meta.to_string(), rows))
}
