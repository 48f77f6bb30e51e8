//! Gibbs kernels, chain execution, maximum marginal likelihood and the
//! feasible-start initialiser.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::ars::{ars_init, ars_sample};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::models::{
    group_posterior_normal, logistic, marginal_loglik, normal_logpdf, normal_marginal_from_stats, suff_stats,
    Dataset, GlobalParams, GroupObs, ModelKind, ModelSpec, MuPrior, ParamMask, PriorSpec, SuffBasis, SuffStats,
    PARAM_NAMES,
};
use crate::optim::{fd_gradient, fd_hessian, nelder_mead, NelderMeadOptions};

/// Update schedule of a Gibbs sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Blocking {
    /// `theta | mu`, then `mu | theta`; `tau1` stays fixed.
    P1KnownTau1,
    /// `(theta, mu) | tau1` drawn as `mu | tau1, Y` then `theta | mu, tau1`;
    /// then `tau1 | theta, mu`.
    P2JointThetaMu,
    /// `theta | mu, tau1`, `mu | theta, tau1`, `tau1 | theta, mu`.
    P3SequentialMuTau,
    /// `theta | psi`, then `(mu, tau1) | theta` jointly.
    TwoBlockThetaVsPsi,
    /// `(mu, theta) | tau1, tau0` drawn as `mu | tau1, tau0, Y` then
    /// `theta | mu, ...`; then `(tau1, tau0) | theta, mu`.
    ExtendedThetaMuTau0Tau1,
    /// No group layer: all observations share the mean; `mu | tau0`, then
    /// `tau0 | mu`.
    FixedDimMuTau,
}

impl Blocking {
    pub fn mask(self) -> ParamMask {
        match self {
            Blocking::P1KnownTau1 => ParamMask { mu: true, tau1: false, tau0: false },
            Blocking::P2JointThetaMu | Blocking::P3SequentialMuTau | Blocking::TwoBlockThetaVsPsi => {
                ParamMask::MU_TAU1
            }
            Blocking::ExtendedThetaMuTau0Tau1 => ParamMask::ALL,
            Blocking::FixedDimMuTau => ParamMask { mu: true, tau1: false, tau0: true },
        }
    }

    pub fn basis(self) -> SuffBasis {
        match self {
            Blocking::P1KnownTau1 => SuffBasis::Sum,
            Blocking::P2JointThetaMu | Blocking::P3SequentialMuTau | Blocking::TwoBlockThetaVsPsi => {
                SuffBasis::SumAndSumSq
            }
            Blocking::ExtendedThetaMuTau0Tau1 => SuffBasis::CenteredPair,
            Blocking::FixedDimMuTau => SuffBasis::Empty,
        }
    }

    pub fn has_groups(self) -> bool {
        self != Blocking::FixedDimMuTau
    }

    /// Components whose joint conditional given `theta` depends on `theta`
    /// only through the sufficient statistics. In the extended kernel `mu`
    /// travels with `theta`.
    pub fn psi_block(self) -> Vec<usize> {
        match self {
            Blocking::ExtendedThetaMuTau0Tau1 => vec![1, 2],
            b => b.mask().indices(),
        }
    }

    pub const ALL: [Blocking; 6] = [
        Blocking::P1KnownTau1,
        Blocking::P2JointThetaMu,
        Blocking::P3SequentialMuTau,
        Blocking::TwoBlockThetaVsPsi,
        Blocking::ExtendedThetaMuTau0Tau1,
        Blocking::FixedDimMuTau,
    ];
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub model: ModelSpec,
    pub prior: PriorSpec,
    pub blocking: Blocking,
}

impl KernelSpec {
    pub fn new(model: ModelSpec, prior: PriorSpec, blocking: Blocking) -> Result<Self> {
        let spec = KernelSpec { model, prior, blocking };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.prior.validate()?;
        let kind = self.model.kind;
        let ok = match self.blocking {
            Blocking::P2JointThetaMu => kind == ModelKind::NormalKnownTau0,
            Blocking::P1KnownTau1 | Blocking::P3SequentialMuTau | Blocking::TwoBlockThetaVsPsi => {
                kind != ModelKind::NormalUnknownTau0
            }
            Blocking::ExtendedThetaMuTau0Tau1 | Blocking::FixedDimMuTau => kind == ModelKind::NormalUnknownTau0,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "blocking {:?} is incompatible with model kind {:?}",
                self.blocking, kind
            )));
        }
        if self.blocking.mask().tau0 && self.prior.tau0.is_none() {
            return Err(Error::InvalidArgument(format!("blocking {:?} needs a tau0 prior", self.blocking)));
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.is_discrete() != self.model.is_discrete() || data.m() != self.model.m {
            return Err(Error::InvalidArgument(format!(
                "dataset (discrete={}, m={}) does not match model (discrete={}, m={})",
                data.is_discrete(),
                data.m(),
                self.model.is_discrete(),
                self.model.m
            )));
        }
        Ok(())
    }

    fn column_names(&self, j: usize) -> Vec<String> {
        let mut names: Vec<String> = self.blocking.mask().indices().iter().map(|&i| PARAM_NAMES[i].to_string()).collect();
        if self.blocking.has_groups() {
            names.extend((0..j).map(|k| format!("theta[{k}]")));
        }
        names.extend(self.blocking.basis().names().iter().map(|s| s.to_string()));
        names
    }
}

/// Current `(theta, psi)` of a chain and its sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub psi: GlobalParams,
    pub suff: SuffStats,
}

impl ChainState {
    pub fn new(spec: &KernelSpec, data: &Dataset, theta: Vec<f64>, psi: GlobalParams) -> Result<Self> {
        spec.check_data(data)?;
        let expected = if spec.blocking.has_groups() { data.num_groups() } else { 0 };
        if theta.len() != expected {
            return Err(Error::InvalidArgument(format!("theta has length {}, expected {expected}", theta.len())));
        }
        psi.validate()?;
        let psi = psi.with_mask(spec.blocking.mask());
        let suff = suff_stats(spec.blocking.basis(), &theta, psi.mu, data.group_means())?;
        Ok(ChainState { theta, psi, suff })
    }

    fn refresh(&mut self, spec: &KernelSpec, data: &Dataset) -> Result<()> {
        self.suff = suff_stats(spec.blocking.basis(), &self.theta, self.psi.mu, data.group_means())?;
        Ok(())
    }
}

/// Data summaries reused by every sweep.
struct DataSummary {
    j: f64,
    sum_ybar: f64,
    within_total: f64,
    n_all: f64,
    mean_all: f64,
    ss_all: f64,
}

impl DataSummary {
    fn new(data: &Dataset) -> Self {
        let j = data.num_groups() as f64;
        let means = data.group_means();
        let sum_ybar = means.iter().sum();
        let within_total = data.within_ss().iter().sum();
        let (n_all, mean_all, ss_all) = match data.reals() {
            Some(v) => {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                (n, mean, v.iter().map(|y| (y - mean) * (y - mean)).sum())
            }
            None => (0.0, 0.0, 0.0),
        };
        DataSummary { j, sum_ybar, within_total, n_all, mean_all, ss_all }
    }
}

fn draw_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() || !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::numerical(
            format!("degenerate Gamma conditional (shape {shape}, rate {rate})"),
            rate,
        ));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::numerical(format!("Gamma construction: {e}"), rate))?;
    let x = g.sample(rng);
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::numerical("Gamma draw is not a positive finite number", x));
    }
    Ok(x)
}

fn draw_normal<R: Rng + ?Sized>(mean: f64, precision: f64, rng: &mut R) -> Result<f64> {
    if !(precision > 0.0) || !precision.is_finite() || !mean.is_finite() {
        return Err(Error::numerical(
            format!("degenerate Gaussian conditional (mean {mean}, precision {precision})"),
            precision,
        ));
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + z / precision.sqrt())
}

/// `(mean, precision)` of `mu` given `n` values with sum `s` each of
/// precision `lik_prec`; `prior_tau` scales a `NormalOverTau` prior.
fn mu_conditional(prior: &MuPrior, n: f64, s: f64, lik_prec: f64, prior_tau: f64) -> (f64, f64) {
    let data_prec = n * lik_prec;
    match *prior {
        MuPrior::Flat => (s / n, data_prec),
        MuPrior::NormalOverTau { mean, scale } => {
            let p0 = prior_tau / scale;
            let prec = data_prec + p0;
            ((lik_prec * s + p0 * mean) / prec, prec)
        }
        MuPrior::NormalFixedVar { mean, var } => {
            let prec = data_prec + 1.0 / var;
            ((lik_prec * s + mean / var) / prec, prec)
        }
    }
}

/// Shape and rate of `tau1 | theta, mu` given `J` and `sum (theta - mu)^2`.
fn tau1_conditional(prior: &PriorSpec, j: f64, ss_mu: f64, mu: f64) -> (f64, f64) {
    let mut shape = prior.tau1.shape + 0.5 * j;
    let mut rate = prior.tau1.rate + 0.5 * ss_mu;
    if let MuPrior::NormalOverTau { mean, scale } = prior.mu {
        shape += 0.5;
        rate += 0.5 * (mu - mean) * (mu - mean) / scale;
    }
    (shape, rate)
}

fn sum_sq_about(suff: &SuffStats, j: f64, mu: f64) -> f64 {
    let (s1, s2) = (suff.values[0], suff.values[1]);
    (s2 - 2.0 * mu * s1 + j * mu * mu).max(0.0)
}

struct Sweeper<'a> {
    spec: &'a KernelSpec,
    data: &'a Dataset,
    summary: DataSummary,
}

impl<'a> Sweeper<'a> {
    fn new(spec: &'a KernelSpec, data: &'a Dataset) -> Result<Self> {
        spec.validate()?;
        spec.check_data(data)?;
        Ok(Sweeper { spec, data, summary: DataSummary::new(data) })
    }

    fn sweep<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let prior = &self.spec.prior;
        let j = self.summary.j;
        match self.spec.blocking {
            Blocking::P1KnownTau1 => {
                self.update_theta(state, rng)?;
                state.refresh(self.spec, self.data)?;
                self.update_mu_given_theta(state, rng)?;
            }
            Blocking::P2JointThetaMu => {
                self.update_mu_marginal(state, rng)?;
                self.update_theta(state, rng)?;
                state.refresh(self.spec, self.data)?;
                self.update_tau1(state, rng)?;
            }
            Blocking::P3SequentialMuTau => {
                self.update_theta(state, rng)?;
                state.refresh(self.spec, self.data)?;
                self.update_mu_given_theta(state, rng)?;
                self.update_tau1(state, rng)?;
            }
            Blocking::TwoBlockThetaVsPsi => {
                self.update_theta(state, rng)?;
                state.refresh(self.spec, self.data)?;
                let s1 = state.suff.values[0];
                let tbar = s1 / j;
                let ss_c = sum_sq_about(&state.suff, j, tbar);
                match prior.mu {
                    MuPrior::NormalOverTau { mean, scale } => {
                        let k0 = 1.0 / scale;
                        let shape = prior.tau1.shape + 0.5 * j;
                        let rate =
                            prior.tau1.rate + 0.5 * (ss_c + j * k0 / (j + k0) * (tbar - mean) * (tbar - mean));
                        state.psi.tau1 = draw_gamma(shape, rate, rng)?;
                        state.psi.mu = draw_normal((s1 + k0 * mean) / (j + k0), state.psi.tau1 * (j + k0), rng)?;
                    }
                    MuPrior::Flat => {
                        let shape = prior.tau1.shape + 0.5 * (j - 1.0);
                        let rate = prior.tau1.rate + 0.5 * ss_c;
                        state.psi.tau1 = draw_gamma(shape, rate, rng)?;
                        state.psi.mu = draw_normal(tbar, j * state.psi.tau1, rng)?;
                    }
                    MuPrior::NormalFixedVar { .. } => {
                        // no closed-form joint draw; a sequential sub-sweep
                        self.update_mu_given_theta(state, rng)?;
                        self.update_tau1(state, rng)?;
                    }
                }
            }
            Blocking::ExtendedThetaMuTau0Tau1 => {
                self.update_mu_marginal(state, rng)?;
                self.update_theta(state, rng)?;
                let ss_mu: f64 = state.theta.iter().map(|t| (t - state.psi.mu) * (t - state.psi.mu)).sum();
                let (shape, rate) = tau1_conditional(prior, j, ss_mu, state.psi.mu);
                let ss_y: f64 = state.theta.iter().zip(self.data.group_means()).map(|(t, y)| (t - y) * (t - y)).sum();
                let g0 = prior.tau0.expect("validated");
                let m = self.spec.model.m as f64;
                let shape0 = g0.shape + 0.5 * j * m;
                let rate0 = g0.rate + 0.5 * (self.summary.within_total + m * ss_y);
                state.psi.tau1 = draw_gamma(shape, rate, rng)?;
                state.psi.tau0 = draw_gamma(shape0, rate0, rng)?;
                state.refresh(self.spec, self.data)?;
            }
            Blocking::FixedDimMuTau => {
                let s = &self.summary;
                let (mean, prec) = mu_conditional(&prior.mu, s.n_all, s.n_all * s.mean_all, state.psi.tau0, state.psi.tau0);
                state.psi.mu = draw_normal(mean, prec, rng)?;
                let d = s.mean_all - state.psi.mu;
                let g0 = prior.tau0.expect("validated");
                let mut shape = g0.shape + 0.5 * s.n_all;
                let mut rate = g0.rate + 0.5 * (s.ss_all + s.n_all * d * d);
                if let MuPrior::NormalOverTau { mean, scale } = prior.mu {
                    shape += 0.5;
                    rate += 0.5 * (state.psi.mu - mean) * (state.psi.mu - mean) / scale;
                }
                state.psi.tau0 = draw_gamma(shape, rate, rng)?;
            }
        }
        Ok(())
    }

    fn update_mu_given_theta<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let (mean, prec) = mu_conditional(
            &self.spec.prior.mu,
            self.summary.j,
            state.suff.values[0],
            state.psi.tau1,
            state.psi.tau1,
        );
        state.psi.mu = draw_normal(mean, prec, rng)?;
        Ok(())
    }

    /// `mu | tau1, tau0, Y` with `theta` integrated out.
    fn update_mu_marginal<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let m = self.spec.model.m as f64;
        let v = 1.0 / state.psi.tau1 + 1.0 / (m * state.psi.tau0);
        let (mean, prec) = mu_conditional(&self.spec.prior.mu, self.summary.j, self.summary.sum_ybar, 1.0 / v, state.psi.tau1);
        state.psi.mu = draw_normal(mean, prec, rng)?;
        Ok(())
    }

    fn update_tau1<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let ss = sum_sq_about(&state.suff, self.summary.j, state.psi.mu);
        let (shape, rate) = tau1_conditional(&self.spec.prior, self.summary.j, ss, state.psi.mu);
        state.psi.tau1 = draw_gamma(shape, rate, rng)?;
        Ok(())
    }

    fn update_theta<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let psi = state.psi;
        match self.spec.model.likelihood() {
            None => {
                let m = self.spec.model.m;
                for (t, ybar) in state.theta.iter_mut().zip(self.data.group_means()) {
                    let (mean, var) = group_posterior_normal(*ybar, &psi, m);
                    *t = draw_normal(mean, 1.0 / var, rng)?;
                }
            }
            Some(pmf) => {
                let counts = self.data.counts().expect("checked discrete");
                let (mu, tau) = (psi.mu, psi.tau1);
                for (t, &y) in state.theta.iter_mut().zip(counts) {
                    let target = |x: f64| {
                        let (l, d, _) = pmf.log_pmf(y, x);
                        (l - 0.5 * tau * (x - mu) * (x - mu), d - tau * (x - mu))
                    };
                    let curv = tau - pmf.log_pmf(y, *t).2;
                    let mut hull = ars_init(&target, *t, 1.0 / curv.sqrt())?;
                    *t = ars_sample(&mut hull, &target, rng)?;
                }
            }
        }
        Ok(())
    }
}

/// One full sweep in the blocking's order; the sufficient statistics are
/// refreshed before returning.
pub fn gibbs_sweep<R: Rng + ?Sized>(spec: &KernelSpec, state: &mut ChainState, data: &Dataset, rng: &mut R) -> Result<()> {
    let sweeper = Sweeper::new(spec, data)?;
    sweeper.sweep(state, rng)?;
    state.refresh(spec, data)
}

/// Receives recorded rows of a chain.
pub trait TraceSink {
    fn begin(&mut self, names: &[String], rows: usize);
    fn record(&mut self, row: &[f64]);
}

/// Recorded traces, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainOutput {
    /// Builds an output from explicit columns (all of equal length).
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::InvalidArgument("one name per column required".into()));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::InvalidArgument("columns differ in length".into()));
            }
        }
        Ok(ChainOutput { names, columns, seed: 0, burn_in: 0, thin: 1 })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.columns[k].as_slice())
    }

    /// Rows × selected columns as a matrix.
    pub fn matrix(&self, names: &[&str]) -> Result<Mat> {
        let cols: Vec<&[f64]> = names
            .iter()
            .map(|n| self.column_by_name(n).ok_or_else(|| Error::InvalidArgument(format!("no column named {n}"))))
            .collect::<Result<_>>()?;
        let mut out = Mat::zeros(self.rows(), cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        Ok(out)
    }
}

impl TraceSink for ChainOutput {
    fn begin(&mut self, names: &[String], rows: usize) {
        self.names = names.to_vec();
        self.columns = vec![Vec::with_capacity(rows); names.len()];
    }

    fn record(&mut self, row: &[f64]) {
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(*v);
        }
    }
}

/// Keeps only the named columns, in the order given. Names absent from the
/// chain are ignored.
#[derive(Debug, Clone)]
pub struct ColumnSubset {
    wanted: Vec<String>,
    picked: Vec<usize>,
    output: ChainOutput,
}

impl ColumnSubset {
    pub fn new(wanted: &[&str]) -> Self {
        ColumnSubset {
            wanted: wanted.iter().map(|s| s.to_string()).collect(),
            picked: Vec::new(),
            output: ChainOutput { names: Vec::new(), columns: Vec::new(), seed: 0, burn_in: 0, thin: 1 },
        }
    }

    pub fn into_output(self) -> ChainOutput {
        self.output
    }
}

impl TraceSink for ColumnSubset {
    fn begin(&mut self, names: &[String], rows: usize) {
        self.picked = self.wanted.iter().filter_map(|w| names.iter().position(|n| n == w)).collect();
        let kept: Vec<String> = self.picked.iter().map(|&k| names[k].clone()).collect();
        self.output.begin(&kept, rows);
    }

    fn record(&mut self, row: &[f64]) {
        for (c, &k) in self.output.columns.iter_mut().zip(&self.picked) {
            c.push(row[k]);
        }
    }
}

fn chain_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Number of rows recorded by a run with these settings.
pub fn recorded_rows(iters: usize, burn_in: usize, thin: usize) -> usize {
    (iters - burn_in).div_ceil(thin)
}

/// Runs `iters` sweeps from `init`, passing sweeps `burn_in, burn_in + thin,
/// ...` to `sink`. Returns the final state.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_into(
    spec: &KernelSpec,
    data: &Dataset,
    init: &ChainState,
    iters: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    sink: &mut impl TraceSink,
) -> Result<ChainState> {
    if iters <= burn_in || thin == 0 {
        return Err(Error::InvalidArgument(format!(
            "need iters > burn_in and thin >= 1 (iters={iters}, burn_in={burn_in}, thin={thin})"
        )));
    }
    let sweeper = Sweeper::new(spec, data)?;
    let mut state = ChainState::new(spec, data, init.theta.clone(), init.psi)?;
    let names = spec.column_names(data.num_groups());
    sink.begin(&names, recorded_rows(iters, burn_in, thin));
    let mut rng = chain_rng(seed);
    let free = spec.blocking.mask().indices();
    let mut row = Vec::with_capacity(names.len());
    for it in 0..iters {
        sweeper
            .sweep(&mut state, &mut rng)
            .and_then(|_| state.refresh(spec, data))
            .map_err(|e| Error::Sweep { iteration: it, source: Box::new(e) })?;
        if it >= burn_in && (it - burn_in) % thin == 0 {
            row.clear();
            row.extend(free.iter().map(|&i| state.psi.get(i)));
            row.extend_from_slice(&state.theta);
            row.extend_from_slice(&state.suff.values);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Sweep {
                    iteration: it,
                    source: Box::new(Error::Degenerate("non-finite value in chain state".into())),
                });
            }
            sink.record(&row);
        }
    }
    Ok(state)
}

pub fn run_chain(
    spec: &KernelSpec,
    data: &Dataset,
    init: &ChainState,
    iters: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
) -> Result<ChainOutput> {
    let mut out = ChainOutput { names: Vec::new(), columns: Vec::new(), seed, burn_in, thin };
    run_chain_into(spec, data, init, iters, burn_in, thin, seed, &mut out)?;
    Ok(out)
}

fn prior_mean_mu(prior: &PriorSpec) -> f64 {
    match prior.mu {
        MuPrior::Flat => 0.0,
        MuPrior::NormalOverTau { mean, .. } | MuPrior::NormalFixedVar { mean, .. } => mean,
    }
}

/// Cheap overdispersed start: `theta_j` at the group mean (normal) or
/// `logit((y + 0.5) / (m + 1))` (counts); free `mu` at its prior mean (0 for a
/// flat prior) and free precisions at 1. Fixed components come from `fixed`.
pub fn default_init(spec: &KernelSpec, data: &Dataset, fixed: &GlobalParams) -> Result<ChainState> {
    let mask = spec.blocking.mask();
    let mut psi = *fixed;
    if mask.mu {
        psi.mu = prior_mean_mu(&spec.prior);
    }
    if mask.tau1 {
        psi.tau1 = 1.0;
    }
    if mask.tau0 {
        psi.tau0 = 1.0;
    }
    let theta = if !spec.blocking.has_groups() {
        Vec::new()
    } else if let Some(c) = data.counts() {
        let m = data.m() as f64;
        c.iter()
            .map(|&y| {
                let p = (y as f64 + 0.5) / (m + 1.0);
                (p / (1.0 - p)).ln()
            })
            .collect()
    } else {
        data.group_means().to_vec()
    };
    ChainState::new(spec, data, theta, psi)
}

/// Sum of group log marginal likelihoods.
pub fn total_marginal_loglik(model: &ModelSpec, data: &Dataset, psi: &GlobalParams) -> Result<f64> {
    if let Some(hist) = data.count_histogram() {
        let mut total = 0.0;
        for (y, &n) in hist.iter().enumerate() {
            if n > 0 {
                total += n as f64 * marginal_loglik(model, psi, GroupObs::Count(y))?;
            }
        }
        Ok(total)
    } else {
        psi.validate()?;
        Ok(data
            .group_means()
            .iter()
            .zip(data.within_ss())
            .map(|(ybar, w)| normal_marginal_from_stats(*ybar, *w, model.m, psi))
            .sum())
    }
}

/// Maximum marginal-likelihood estimate of the free components of `init`
/// (`tau0` is only free for `NormalUnknownTau0`). Nelder–Mead on
/// `(mu, log tau1, log tau0)` followed by Newton polishing.
pub fn mle_psi(model: &ModelSpec, data: &Dataset, init: &GlobalParams) -> Result<GlobalParams> {
    init.validate()?;
    let j = data.num_groups();
    if j < 2 {
        return Err(Error::InvalidArgument("maximum likelihood needs at least two groups".into()));
    }
    if data.is_discrete() != model.is_discrete() || data.m() != model.m {
        return Err(Error::InvalidArgument("dataset does not match model".into()));
    }
    let mut mask = init.sampled;
    if model.kind != ModelKind::NormalUnknownTau0 {
        mask.tau0 = false;
    } else if model.m < 2 && mask.tau0 {
        return Err(Error::InvalidArgument(
            "tau0 and tau1 are not identifiable from groups with a single observation".into(),
        ));
    }
    let base = init.with_mask(mask);
    let idx = mask.indices();
    if idx.is_empty() {
        return Ok(base);
    }
    let to_psi = |u: &[f64]| {
        let mut p = base;
        for (k, &i) in idx.iter().enumerate() {
            p.set(i, if i == 0 { u[k] } else { u[k].exp() });
        }
        p
    };
    let jf = j as f64;
    let objective = |u: &[f64]| -> f64 {
        let p = to_psi(u);
        match total_marginal_loglik(model, data, &p) {
            Ok(v) => -v / jf,
            Err(_) => f64::INFINITY,
        }
    };
    let u0: Vec<f64> = idx.iter().map(|&i| if i == 0 { base.get(i) } else { base.get(i).ln() }).collect();
    let nm = nelder_mead(objective, &u0, NelderMeadOptions::default())?;
    // Newton polish on the same scale
    let mut u = nm.x;
    let mut fu = objective(&u);
    for _ in 0..30 {
        let g = fd_gradient(&objective, &u, 1e-5);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-10 {
            break;
        }
        let h = fd_hessian(&objective, &u, 1e-4);
        let step = match h.inverse() {
            Ok(hinv) if h.is_positive_definite() => {
                let gm = Mat::from_rows(&g.iter().map(std::slice::from_ref).collect::<Vec<_>>());
                let s = hinv.matmul(&gm);
                (0..u.len()).map(|k| -s[(k, 0)]).collect::<Vec<_>>()
            }
            _ => g.iter().map(|v| -v).collect(),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fc = objective(&cand);
            if fc <= fu {
                u = cand;
                fu = fc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let out = to_psi(&u);
    out.validate()
        .map_err(|e| Error::Optimization(format!("maximiser left the parameter space: {e}")))?;
    Ok(out)
}

/// Feasible start: `psi` uniform on the ball of radius `c / sqrt(J)` around
/// the maximum marginal-likelihood estimate (restricted to positive
/// precisions by rejection), then each `theta_j` from its exact conditional.
/// Components not sampled by the blocking are taken from `fixed`.
pub fn feasible_start(spec: &KernelSpec, data: &Dataset, fixed: &GlobalParams, c: f64, seed: u64) -> Result<ChainState> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("ball radius constant must be positive, got {c}")));
    }
    spec.validate()?;
    spec.check_data(data)?;
    let mask = spec.blocking.mask();
    let (center, n) = if spec.blocking.has_groups() {
        (mle_psi(&spec.model, data, &fixed.with_mask(mask))?, data.num_groups())
    } else {
        let s = DataSummary::new(data);
        if s.ss_all <= 0.0 {
            return Err(Error::InvalidArgument("observations have zero spread".into()));
        }
        let mut p = fixed.with_mask(mask);
        p.mu = s.mean_all;
        p.tau0 = s.n_all / s.ss_all;
        (p, s.n_all as usize)
    };
    let idx = mask.indices();
    let d = idx.len();
    let radius = c / (n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut psi = center;
    let mut accepted = false;
    for _ in 0..=1000 {
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        let mut cand = center;
        for (k, &i) in idx.iter().enumerate() {
            cand.set(i, center.get(i) + r * dir[k] / norm);
        }
        if cand.tau1 > 0.0 && cand.tau0 > 0.0 {
            psi = cand;
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::RadiusTooLarge(format!(
            "1000 draws from the ball of radius {radius} had a non-positive precision"
        )));
    }
    let theta = if spec.blocking.has_groups() {
        let mut t = vec![0.0; data.num_groups()];
        match spec.model.likelihood() {
            None => {
                for (tj, ybar) in t.iter_mut().zip(data.group_means()) {
                    let (mean, var) = group_posterior_normal(*ybar, &psi, spec.model.m);
                    *tj = draw_normal(mean, 1.0 / var, &mut rng)?;
                }
            }
            Some(pmf) => {
                let counts = data.counts().expect("checked discrete");
                for (tj, &y) in t.iter_mut().zip(counts) {
                    let (mu, tau) = (psi.mu, psi.tau1);
                    let target = |x: f64| {
                        let (l, dl, _) = pmf.log_pmf(y, x);
                        (l - 0.5 * tau * (x - mu) * (x - mu), dl - tau * (x - mu))
                    };
                    let m = spec.model.m as f64;
                    let hint = mu + (y as f64 - m * logistic(mu)) / (tau + 0.25 * m);
                    let mut hull = ars_init(&target, hint, 1.0 / (tau + 0.25 * m).sqrt())?;
                    *tj = ars_sample(&mut hull, &target, &mut rng)?;
                }
            }
        }
        t
    } else {
        Vec::new()
    };
    ChainState::new(spec, data, theta, psi)
}

/// Unnormalised log-density kernel of the mu prior, up to a constant.
fn mu_prior_kernel(prior: &MuPrior, mu: f64, tau: f64) -> f64 {
    match *prior {
        MuPrior::Flat => 0.0,
        MuPrior::NormalOverTau { mean, scale } => normal_logpdf(mu, mean, tau / scale),
        MuPrior::NormalFixedVar { mean, var } => normal_logpdf(mu, mean, 1.0 / var),
    }
}

/// The pieces of `theta` that enter the `psi` conditional.
struct ThetaSummary {
    /// `sum (theta_j - mu)^2` at the evaluated `mu`, possibly shifted by a
    /// `theta`-only constant.
    ss_mu: f64,
    /// `sum_ji (Y_ji - theta_j)^2`.
    ss_y: f64,
}

fn psi_log_kernel(spec: &KernelSpec, data: &Dataset, psi: &GlobalParams, ts: &ThetaSummary) -> f64 {
    let prior = &spec.prior;
    let mask = spec.blocking.mask();
    if spec.blocking == Blocking::FixedDimMuTau {
        let s = DataSummary::new(data);
        let g0 = prior.tau0.expect("validated");
        let d = s.mean_all - psi.mu;
        return mu_prior_kernel(&prior.mu, psi.mu, psi.tau0) + (g0.shape - 1.0) * psi.tau0.ln() - g0.rate * psi.tau0
            + 0.5 * s.n_all * psi.tau0.ln()
            - 0.5 * psi.tau0 * (s.ss_all + s.n_all * d * d);
    }
    let j = data.num_groups() as f64;
    let mut lp = mu_prior_kernel(&prior.mu, psi.mu, psi.tau1);
    if mask.tau1 {
        lp += (prior.tau1.shape - 1.0) * psi.tau1.ln() - prior.tau1.rate * psi.tau1;
    }
    lp += 0.5 * j * psi.tau1.ln() - 0.5 * psi.tau1 * ts.ss_mu;
    if mask.tau0 {
        let g0 = prior.tau0.expect("validated");
        let n = j * spec.model.m as f64;
        lp += (g0.shape - 1.0) * psi.tau0.ln() - g0.rate * psi.tau0 + 0.5 * n * psi.tau0.ln() - 0.5 * psi.tau0 * ts.ss_y;
    }
    lp
}

fn check_psi_block(spec: &KernelSpec, state: &ChainState, psi: &GlobalParams) -> Result<()> {
    psi.validate()?;
    let block = spec.blocking.psi_block();
    for i in 0..3 {
        if !block.contains(&i) && psi.get(i) != state.psi.get(i) {
            return Err(Error::InvalidArgument(format!(
                "{} is not part of the psi block of {:?} and must equal the state value",
                PARAM_NAMES[i], spec.blocking
            )));
        }
    }
    Ok(())
}

/// Unnormalised log full conditional of the `psi` block at `psi`, computed
/// directly from `state.theta`.
pub fn psi_log_conditional_theta(spec: &KernelSpec, data: &Dataset, state: &ChainState, psi: &GlobalParams) -> Result<f64> {
    check_psi_block(spec, state, psi)?;
    let ss_mu = state.theta.iter().map(|t| (t - psi.mu) * (t - psi.mu)).sum();
    let ss_y = match data.reals() {
        Some(y) if spec.blocking.has_groups() => {
            let m = data.m();
            state
                .theta
                .iter()
                .enumerate()
                .map(|(j, t)| y[j * m..(j + 1) * m].iter().map(|v| (v - t) * (v - t)).sum::<f64>())
                .sum()
        }
        _ => 0.0,
    };
    Ok(psi_log_kernel(spec, data, psi, &ThetaSummary { ss_mu, ss_y }))
}

/// Same conditional computed from `state.suff` alone. It agrees with
/// [`psi_log_conditional_theta`] up to an additive constant that depends on
/// `theta` but not on `psi`.
pub fn psi_log_conditional_suff(spec: &KernelSpec, data: &Dataset, state: &ChainState, psi: &GlobalParams) -> Result<f64> {
    check_psi_block(spec, state, psi)?;
    let j = data.num_groups() as f64;
    let v = &state.suff.values;
    let ts = match state.suff.basis {
        SuffBasis::Sum => ThetaSummary { ss_mu: j * psi.mu * psi.mu - 2.0 * psi.mu * v[0], ss_y: 0.0 },
        SuffBasis::SumAndSumSq => ThetaSummary { ss_mu: v[1] - 2.0 * psi.mu * v[0] + j * psi.mu * psi.mu, ss_y: 0.0 },
        SuffBasis::CenteredPair => {
            let within: f64 = data.within_ss().iter().sum();
            ThetaSummary { ss_mu: v[1], ss_y: within + data.m() as f64 * v[0] }
        }
        SuffBasis::Empty => ThetaSummary { ss_mu: 0.0, ss_y: 0.0 },
    };
    Ok(psi_log_kernel(spec, data, psi, &ts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate_data, GammaPrior};

    fn normal_spec(blocking: Blocking, m: usize) -> KernelSpec {
        let model = if matches!(blocking, Blocking::ExtendedThetaMuTau0Tau1 | Blocking::FixedDimMuTau) {
            ModelSpec::normal_unknown_tau0(m).unwrap()
        } else {
            ModelSpec::normal_known_tau0(m).unwrap()
        };
        let prior = PriorSpec {
            mu: MuPrior::NormalOverTau { mean: 0.0, scale: 100.0 },
            tau1: GammaPrior::new(1.0, 1.0),
            tau0: Some(GammaPrior::new(1.0, 1.0)),
        };
        KernelSpec::new(model, prior, blocking).unwrap()
    }

    #[test]
    fn incompatible_blockings_rejected() {
        let prior = PriorSpec { mu: MuPrior::Flat, tau1: GammaPrior::new(1.0, 1.0), tau0: None };
        assert!(KernelSpec::new(ModelSpec::binomial_logit(3).unwrap(), prior, Blocking::P2JointThetaMu).is_err());
        assert!(KernelSpec::new(ModelSpec::normal_known_tau0(3).unwrap(), prior, Blocking::ExtendedThetaMuTau0Tau1).is_err());
        assert!(KernelSpec::new(ModelSpec::normal_unknown_tau0(3).unwrap(), prior, Blocking::ExtendedThetaMuTau0Tau1).is_err());
    }

    #[test]
    fn one_recorded_row_and_determinism() {
        let spec = normal_spec(Blocking::P3SequentialMuTau, 2);
        let data = simulate_data(&spec.model, &GlobalParams::new(0.5, 1.0, 1.0), 20, 3).unwrap();
        let init = default_init(&spec, &data, &GlobalParams::new(0.0, 1.0, 1.0)).unwrap();
        let out = run_chain(&spec, &data, &init, 11, 10, 1, 9).unwrap();
        assert_eq!(out.rows(), 1);
        assert_eq!(out.cols(), 2 + 20 + 2);
        let a = run_chain(&spec, &data, &init, 200, 50, 3, 9).unwrap();
        let b = run_chain(&spec, &data, &init, 200, 50, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows(), recorded_rows(200, 50, 3));
        assert!(run_chain(&spec, &data, &init, 10, 10, 1, 9).is_err());
    }

    #[test]
    fn fixed_components_never_change() {
        let spec = normal_spec(Blocking::P1KnownTau1, 3);
        let data = simulate_data(&spec.model, &GlobalParams::new(0.0, 1.0, 1.0), 30, 1).unwrap();
        let init = default_init(&spec, &data, &GlobalParams::new(0.0, 2.5, 1.5)).unwrap();
        let mut state = init.clone();
        let mut rng = chain_rng(4);
        for _ in 0..20 {
            gibbs_sweep(&spec, &mut state, &data, &mut rng).unwrap();
            assert_eq!((state.psi.tau1, state.psi.tau0), (2.5, 1.5));
        }
    }

    #[test]
    fn suff_stays_synchronised() {
        for b in Blocking::ALL {
            let spec = normal_spec(b, 3);
            let data = simulate_data(&spec.model, &GlobalParams::new(1.0, 2.0, 1.0), 15, 5).unwrap();
            let mut state = default_init(&spec, &data, &GlobalParams::new(0.0, 1.0, 1.0)).unwrap();
            let mut rng = chain_rng(8);
            for _ in 0..10 {
                gibbs_sweep(&spec, &mut state, &data, &mut rng).unwrap();
                let fresh = suff_stats(b.basis(), &state.theta, state.psi.mu, data.group_means()).unwrap();
                for (a, c) in fresh.values.iter().zip(&state.suff.values) {
                    assert!((a - c).abs() <= 1e-10 * (1.0 + a.abs()));
                }
            }
        }
    }

    #[test]
    fn feasible_start_degenerate_ball() {
        let spec = normal_spec(Blocking::TwoBlockThetaVsPsi, 3);
        let data = simulate_data(&spec.model, &GlobalParams::new(1.0, 1.0, 1.0), 200, 11).unwrap();
        let fixed = GlobalParams::new(0.0, 1.0, 1.0);
        let hat = mle_psi(&spec.model, &data, &fixed.with_mask(ParamMask::MU_TAU1)).unwrap();
        let s = feasible_start(&spec, &data, &fixed, 1e-300, 3).unwrap();
        assert_eq!((s.psi.mu, s.psi.tau1), (hat.mu, hat.tau1));
    }

    #[test]
    fn mle_rejects_single_observation_groups_with_unknown_tau0() {
        let model = ModelSpec::normal_unknown_tau0(1).unwrap();
        let data = Dataset::from_reals(vec![vec![0.3]; 5]).unwrap();
        assert!(matches!(
            mle_psi(&model, &data, &GlobalParams::new(0.0, 1.0, 1.0)),
            Err(Error::InvalidArgument(_))
        ));
        let model = ModelSpec::normal_known_tau0(2).unwrap();
        let one = Dataset::from_reals(vec![vec![0.3, 0.1]]).unwrap();
        assert!(mle_psi(&model, &one, &GlobalParams::new(0.0, 1.0, 1.0)).is_err());
    }
}
