//! Model family, densities, conjugate pieces, sufficient statistics and data
//! simulation.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ars::LogDensity;
use crate::error::{Error, Result};
use crate::quadrature::CheckedIntegral;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Likelihood of a single count `y in 0..num_outcomes()` given a scalar
/// group parameter. Implementations must be log-concave in `theta`.
pub trait DiscreteLikelihood: Send + Sync + fmt::Debug {
    fn num_outcomes(&self) -> usize;

    /// `(log f, d/dtheta log f, d2/dtheta2 log f)`.
    fn log_pmf(&self, y: usize, theta: f64) -> (f64, f64, f64);
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Binomial count with logit link: `f(y|theta) = C(m,y) e^{y theta} / (1+e^theta)^m`.
#[derive(Debug, Clone)]
pub struct BinomialLogit {
    m: usize,
    ln_binom: Vec<f64>,
}

impl BinomialLogit {
    pub fn new(m: usize) -> Self {
        BinomialLogit {
            m,
            ln_binom: (0..=m).map(|k| ln_choose(m, k)).collect(),
        }
    }
}

impl DiscreteLikelihood for BinomialLogit {
    fn num_outcomes(&self) -> usize {
        self.m + 1
    }

    fn log_pmf(&self, y: usize, theta: f64) -> (f64, f64, f64) {
        let m = self.m as f64;
        let s = logistic(theta);
        (
            self.ln_binom[y] + y as f64 * theta - m * softplus(theta),
            y as f64 - m * s,
            -m * s * (1.0 - s),
        )
    }
}

/// Natural exponential family on `{0,..,K-1}` with sufficient statistic `y`:
/// `f(y|theta) ∝ exp(y theta + base[y])`. Log-concave in `theta` for any base
/// measure; the binomial logit model is the case `base[y] = ln C(m,y)`.
#[derive(Debug, Clone)]
pub struct ExpFamilyTable {
    base: Vec<f64>,
}

impl ExpFamilyTable {
    pub fn new(base: Vec<f64>) -> Result<Self> {
        if base.len() < 2 || base.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter(
                "exponential-family table needs at least two finite base values".into(),
            ));
        }
        Ok(ExpFamilyTable { base })
    }
}

impl DiscreteLikelihood for ExpFamilyTable {
    fn num_outcomes(&self) -> usize {
        self.base.len()
    }

    fn log_pmf(&self, y: usize, theta: f64) -> (f64, f64, f64) {
        let a: Vec<f64> = self.base.iter().enumerate().map(|(k, b)| k as f64 * theta + b).collect();
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = w.iter().sum();
        let mean: f64 = w.iter().enumerate().map(|(k, wk)| k as f64 * wk).sum::<f64>() / z;
        let second: f64 = w.iter().enumerate().map(|(k, wk)| (k * k) as f64 * wk).sum::<f64>() / z;
        (a[y] - max - z.ln(), y as f64 - mean, -(second - mean * mean))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    NormalKnownTau0,
    NormalUnknownTau0,
    BinomialLogit,
    GenericDiscrete,
}

impl ModelKind {
    pub fn is_discrete(self) -> bool {
        matches!(self, ModelKind::BinomialLogit | ModelKind::GenericDiscrete)
    }

    pub fn is_normal(self) -> bool {
        !self.is_discrete()
    }
}

/// Group-level likelihood family. For normal kinds `m` is the number of
/// observations per group; for discrete kinds counts lie in `0..=m`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub m: usize,
    pmf: Option<Arc<dyn DiscreteLikelihood>>,
}

impl ModelSpec {
    pub fn normal_known_tau0(m: usize) -> Result<Self> {
        Self::build(ModelKind::NormalKnownTau0, m, None)
    }

    pub fn normal_unknown_tau0(m: usize) -> Result<Self> {
        Self::build(ModelKind::NormalUnknownTau0, m, None)
    }

    pub fn binomial_logit(m: usize) -> Result<Self> {
        Self::build(ModelKind::BinomialLogit, m, Some(Arc::new(BinomialLogit::new(m))))
    }

    /// Discrete model with a caller-supplied likelihood on `0..num_outcomes()`.
    pub fn generic_discrete(pmf: Arc<dyn DiscreteLikelihood>) -> Result<Self> {
        let k = pmf.num_outcomes();
        if k < 2 {
            return Err(Error::InvalidParameter("discrete likelihood needs at least two outcomes".into()));
        }
        Self::build(ModelKind::GenericDiscrete, k - 1, Some(pmf))
    }

    fn build(kind: ModelKind, m: usize, pmf: Option<Arc<dyn DiscreteLikelihood>>) -> Result<Self> {
        let spec = ModelSpec { kind, m, pmf };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        if let Some(pmf) = &self.pmf {
            if pmf.num_outcomes() != self.m + 1 {
                return Err(Error::InvalidParameter("likelihood outcome count must equal m + 1".into()));
            }
            for i in -40..=40 {
                let theta = i as f64 * 0.25;
                let mut total = 0.0;
                for y in 0..=self.m {
                    let (lf, _, _) = pmf.log_pmf(y, theta);
                    let p = lf.exp();
                    if !(p > 0.0) || !p.is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "f({y}|{theta}) is not strictly positive"
                        )));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidParameter(format!(
                        "probabilities sum to {total} at theta={theta}"
                    )));
                }
            }
        } else if self.kind.is_discrete() {
            return Err(Error::InvalidParameter("discrete kind requires a likelihood table".into()));
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        self.kind.is_discrete()
    }

    pub fn likelihood(&self) -> Option<&Arc<dyn DiscreteLikelihood>> {
        self.pmf.as_ref()
    }

    fn require_likelihood(&self) -> Result<&Arc<dyn DiscreteLikelihood>> {
        self.pmf
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("operation requires a discrete model".into()))
    }
}

/// Which global components a sampler may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamMask {
    pub mu: bool,
    pub tau1: bool,
    pub tau0: bool,
}

impl ParamMask {
    pub const ALL: ParamMask = ParamMask { mu: true, tau1: true, tau0: true };
    pub const MU_TAU1: ParamMask = ParamMask { mu: true, tau1: true, tau0: false };

    pub fn get(&self, i: usize) -> bool {
        [self.mu, self.tau1, self.tau0][i]
    }

    /// Indices (0 = mu, 1 = tau1, 2 = tau0) of free components, in order.
    pub fn indices(&self) -> Vec<usize> {
        (0..3).filter(|&i| self.get(i)).collect()
    }
}

pub const PARAM_NAMES: [&str; 3] = ["mu", "tau1", "tau0"];

/// Hyper-parameters `psi = (mu, tau1, tau0)`: prior mean and precision of the
/// group parameters and the within-group precision. `tau0` is unused by
/// discrete models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalParams {
    pub mu: f64,
    pub tau1: f64,
    pub tau0: f64,
    pub sampled: ParamMask,
}

impl GlobalParams {
    pub fn new(mu: f64, tau1: f64, tau0: f64) -> Self {
        GlobalParams { mu, tau1, tau0, sampled: ParamMask::ALL }
    }

    pub fn with_mask(mut self, mask: ParamMask) -> Self {
        self.sampled = mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite, got {}", self.mu)));
        }
        for (name, v) in [("tau1", self.tau1), ("tau0", self.tau0)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn get(&self, i: usize) -> f64 {
        [self.mu, self.tau1, self.tau0][i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        match i {
            0 => self.mu = v,
            1 => self.tau1 = v,
            2 => self.tau0 = v,
            _ => panic!("parameter index {i} out of range"),
        }
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.sampled.indices().into_iter().map(|i| self.get(i)).collect()
    }

    /// Copy with the free components replaced, in mask order.
    pub fn with_free_values(&self, values: &[f64]) -> Self {
        let mut out = *self;
        for (i, v) in self.sampled.indices().into_iter().zip(values) {
            out.set(i, *v);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuPrior {
    /// Improper `p(mu) ∝ 1`; usable only inside full conditionals.
    Flat,
    /// `mu | tau1 ~ N(mean, scale / tau1)`.
    NormalOverTau { mean: f64, scale: f64 },
    /// `mu ~ N(mean, var)` independent of `tau1`.
    NormalFixedVar { mean: f64, var: f64 },
}

/// Gamma distribution in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Self {
        GammaPrior { shape, rate }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() - libm::lgamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0) || !self.shape.is_finite() || !self.rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name} Gamma prior needs positive shape and rate, got ({}, {})",
                self.shape, self.rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub mu: MuPrior,
    pub tau1: GammaPrior,
    pub tau0: Option<GammaPrior>,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        self.tau1.validate("tau1")?;
        if let Some(g) = &self.tau0 {
            g.validate("tau0")?;
        }
        match self.mu {
            MuPrior::Flat => {}
            MuPrior::NormalOverTau { mean, scale } => {
                if !mean.is_finite() || !(scale > 0.0) || !scale.is_finite() {
                    return Err(Error::InvalidParameter("mu prior scale must be positive".into()));
                }
            }
            MuPrior::NormalFixedVar { mean, var } => {
                if !mean.is_finite() || !(var > 0.0) || !var.is_finite() {
                    return Err(Error::InvalidParameter("mu prior variance must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Normalised log prior density of the free components of `psi`.
    pub fn log_prior(&self, psi: &GlobalParams) -> Result<f64> {
        let mut lp = 0.0;
        if psi.sampled.mu {
            lp += match self.mu {
                MuPrior::Flat => {
                    return Err(Error::Domain("a flat mu prior has no normalised density".into()))
                }
                MuPrior::NormalOverTau { mean, scale } => normal_logpdf(psi.mu, mean, psi.tau1 / scale),
                MuPrior::NormalFixedVar { mean, var } => normal_logpdf(psi.mu, mean, 1.0 / var),
            };
        }
        if psi.sampled.tau1 {
            lp += self.tau1.log_density(psi.tau1);
        }
        if psi.sampled.tau0 {
            let g = self
                .tau0
                .ok_or_else(|| Error::InvalidArgument("tau0 is free but has no prior".into()))?;
            lp += g.log_density(psi.tau0);
        }
        Ok(lp)
    }
}

/// `log N(x | mean, 1/precision)`.
pub fn normal_logpdf(x: f64, mean: f64, precision: f64) -> f64 {
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * (x - mean) * (x - mean)
}

/// Observations of one group.
#[derive(Debug, Clone, Copy)]
pub enum GroupObs<'a> {
    Reals(&'a [f64]),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    Reals(Vec<f64>),
    Counts(Vec<usize>),
}

/// `J` groups of `m` real observations, or `J` counts in `0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    layout: Layout,
    j: usize,
    m: usize,
    group_means: Vec<f64>,
    within_ss: Vec<f64>,
}

impl Dataset {
    pub fn from_reals(rows: Vec<Vec<f64>>) -> Result<Self> {
        let j = rows.len();
        if j == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one group".into()));
        }
        let m = rows[0].len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("all groups need the same positive size".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_flat_reals(flat, m)
    }

    /// Row-major `J x m` values.
    pub fn from_flat_reals(values: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 || values.is_empty() || values.len() % m != 0 {
            return Err(Error::InvalidArgument("value count must be a positive multiple of m".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observations must be finite".into()));
        }
        let j = values.len() / m;
        let mut group_means = Vec::with_capacity(j);
        let mut within_ss = Vec::with_capacity(j);
        for row in values.chunks(m) {
            let mean = row.iter().sum::<f64>() / m as f64;
            group_means.push(mean);
            within_ss.push(row.iter().map(|y| (y - mean) * (y - mean)).sum());
        }
        Ok(Dataset { layout: Layout::Reals(values), j, m, group_means, within_ss })
    }

    pub fn from_counts(counts: Vec<usize>, m: usize) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one group".into()));
        }
        if m == 0 || counts.iter().any(|&c| c > m) {
            return Err(Error::InvalidArgument(format!("counts must lie in 0..={m}")));
        }
        Ok(Dataset {
            j: counts.len(),
            layout: Layout::Counts(counts),
            m,
            group_means: Vec::new(),
            within_ss: Vec::new(),
        })
    }

    pub fn num_groups(&self) -> usize {
        self.j
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.layout, Layout::Counts(_))
    }

    pub fn group(&self, j: usize) -> GroupObs<'_> {
        match &self.layout {
            Layout::Reals(v) => GroupObs::Reals(&v[j * self.m..(j + 1) * self.m]),
            Layout::Counts(c) => GroupObs::Count(c[j]),
        }
    }

    pub fn reals(&self) -> Option<&[f64]> {
        match &self.layout {
            Layout::Reals(v) => Some(v),
            Layout::Counts(_) => None,
        }
    }

    pub fn counts(&self) -> Option<&[usize]> {
        match &self.layout {
            Layout::Counts(c) => Some(c),
            Layout::Reals(_) => None,
        }
    }

    /// Group means (empty for count data).
    pub fn group_means(&self) -> &[f64] {
        &self.group_means
    }

    /// Within-group sums of squares about the group mean (empty for counts).
    pub fn within_ss(&self) -> &[f64] {
        &self.within_ss
    }

    /// Number of groups observing each outcome `0..=m`.
    pub fn count_histogram(&self) -> Option<Vec<usize>> {
        self.counts().map(|c| {
            let mut h = vec![0; self.m + 1];
            for &y in c {
                h[y] += 1;
            }
            h
        })
    }
}

/// Draws `J` groups from the model at `psi_star`; a pure function of its
/// arguments.
pub fn simulate_data(model: &ModelSpec, psi_star: &GlobalParams, j: usize, seed: u64) -> Result<Dataset> {
    if j == 0 {
        return Err(Error::InvalidArgument("J must be at least 1".into()));
    }
    psi_star.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd1 = 1.0 / psi_star.tau1.sqrt();
    match model.pmf.as_ref() {
        None => {
            let sd0 = 1.0 / psi_star.tau0.sqrt();
            let mut values = Vec::with_capacity(j * model.m);
            for _ in 0..j {
                let z: f64 = StandardNormal.sample(&mut rng);
                let theta = psi_star.mu + sd1 * z;
                for _ in 0..model.m {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    values.push(theta + sd0 * e);
                }
            }
            Dataset::from_flat_reals(values, model.m)
        }
        Some(pmf) => {
            let mut counts = Vec::with_capacity(j);
            for _ in 0..j {
                let z: f64 = StandardNormal.sample(&mut rng);
                let theta = psi_star.mu + sd1 * z;
                counts.push(draw_outcome(pmf.as_ref(), theta, &mut rng));
            }
            Dataset::from_counts(counts, model.m)
        }
    }
}

/// Inverse-CDF draw of a count given `theta`.
pub fn draw_outcome<R: Rng + ?Sized>(pmf: &dyn DiscreteLikelihood, theta: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let k = pmf.num_outcomes();
    let mut acc = 0.0;
    for y in 0..k {
        acc += pmf.log_pmf(y, theta).0.exp();
        if u < acc {
            return y;
        }
    }
    k - 1
}

/// `log f(y | theta)` for one normal group.
pub fn normal_group_loglik(y: &[f64], theta: f64, tau0: f64) -> f64 {
    y.iter().map(|v| normal_logpdf(*v, theta, tau0)).sum()
}

/// Normal marginal of a group from its mean `ybar` and within-group sum of
/// squares `w`, with `theta` integrated out.
pub fn normal_marginal_from_stats(ybar: f64, w: f64, m: usize, psi: &GlobalParams) -> f64 {
    let mf = m as f64;
    let (t0, t1) = (psi.tau0, psi.tau1);
    let d = ybar - psi.mu;
    // det(Cov) = (1/t0 + m/t1) (1/t0)^(m-1); inverse via rank-one update
    let log_det = (1.0 / t0 + mf / t1).ln() - (mf - 1.0) * t0.ln();
    let quad = t0 * (w + mf * d * d) - t0 * t0 * mf * mf * d * d / (t1 + mf * t0);
    -0.5 * mf * LN_2PI - 0.5 * log_det - 0.5 * quad
}

/// `log g(y | psi) = log ∫ f(y|theta) N(theta | mu, 1/tau1) dtheta`: exact for
/// normal kinds, 64-node mode-centred Gauss–Hermite (checked against 128
/// nodes) for discrete kinds.
pub fn marginal_loglik(model: &ModelSpec, psi: &GlobalParams, y: GroupObs<'_>) -> Result<f64> {
    psi.validate()?;
    match (y, model.pmf.as_ref()) {
        (GroupObs::Reals(v), None) => {
            if v.len() != model.m {
                return Err(Error::InvalidArgument(format!("group has {} values, expected {}", v.len(), model.m)));
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let w = v.iter().map(|x| (x - mean) * (x - mean)).sum();
            Ok(normal_marginal_from_stats(mean, w, model.m, psi))
        }
        (GroupObs::Count(c), Some(_)) => Ok(discrete_integral(model, psi, c)?.log_integral()),
        _ => Err(Error::InvalidArgument("observation type does not match the model kind".into())),
    }
}

/// Mode-centred quadrature of the unnormalised `theta` posterior for a count,
/// whose integral is the marginal likelihood.
pub(crate) fn discrete_integral(model: &ModelSpec, psi: &GlobalParams, y: usize) -> Result<CheckedIntegral> {
    let pmf = model.require_likelihood()?;
    if y > model.m {
        return Err(Error::InvalidArgument(format!("count {y} exceeds m = {}", model.m)));
    }
    let (mu, tau) = (psi.mu, psi.tau1);
    let f = |t: f64| {
        let (l, d, d2) = pmf.log_pmf(y, t);
        (l + normal_logpdf(t, mu, tau), d - tau * (t - mu), d2 - tau)
    };
    CheckedIntegral::new(f, mu, 1.0 / tau.sqrt())
}

/// Conjugate posterior `theta_j | Y_j, mu, tau1` of a normal group: returns
/// `(mean, variance)`.
pub fn group_posterior_normal(y_bar: f64, psi: &GlobalParams, m: usize) -> (f64, f64) {
    let a = m as f64 * psi.tau0;
    let prec = a + psi.tau1;
    ((a * y_bar + psi.tau1 * psi.mu) / prec, 1.0 / prec)
}

/// Full conditional of one `theta_j`.
#[derive(Debug, Clone)]
pub enum ThetaConditional {
    Gaussian { mean: f64, var: f64 },
    Discrete(DiscreteConditional),
}

/// `log f(y|theta) - (tau/2)(theta - mu)^2`, up to a constant.
#[derive(Debug, Clone)]
pub struct DiscreteConditional {
    pmf: Arc<dyn DiscreteLikelihood>,
    pub y: usize,
    pub mu: f64,
    pub tau: f64,
}

impl DiscreteConditional {
    pub fn eval2(&self, theta: f64) -> (f64, f64, f64) {
        let (l, d, d2) = self.pmf.log_pmf(self.y, theta);
        let r = theta - self.mu;
        (l - 0.5 * self.tau * r * r, d - self.tau * r, d2 - self.tau)
    }
}

impl LogDensity for DiscreteConditional {
    fn eval(&self, x: f64) -> (f64, f64) {
        let (f, d, _) = self.eval2(x);
        (f, d)
    }
}

pub fn log_conditional_theta(model: &ModelSpec, psi: &GlobalParams, y: GroupObs<'_>) -> Result<ThetaConditional> {
    match (y, model.pmf.as_ref()) {
        (GroupObs::Reals(v), None) => {
            let ybar = v.iter().sum::<f64>() / v.len() as f64;
            let (mean, var) = group_posterior_normal(ybar, psi, v.len());
            Ok(ThetaConditional::Gaussian { mean, var })
        }
        (GroupObs::Count(c), Some(pmf)) => {
            if c > model.m {
                return Err(Error::InvalidArgument(format!("count {c} exceeds m = {}", model.m)));
            }
            Ok(ThetaConditional::Discrete(DiscreteConditional {
                pmf: Arc::clone(pmf),
                y: c,
                mu: psi.mu,
                tau: psi.tau1,
            }))
        }
        _ => Err(Error::InvalidArgument("observation type does not match the model kind".into())),
    }
}

/// Which statistics of `theta` are tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuffBasis {
    /// `sum theta_j`.
    Sum,
    /// `(sum theta_j, sum theta_j^2)`.
    SumAndSumSq,
    /// `(sum (theta_j - Ybar_j)^2, sum (theta_j - mu)^2)`.
    CenteredPair,
    /// No group parameters.
    Empty,
}

impl SuffBasis {
    pub fn len(self) -> usize {
        match self {
            SuffBasis::Sum => 1,
            SuffBasis::SumAndSumSq | SuffBasis::CenteredPair => 2,
            SuffBasis::Empty => 0,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn names(self) -> &'static [&'static str] {
        match self {
            SuffBasis::Sum => &["T.sum_theta"],
            SuffBasis::SumAndSumSq => &["T.sum_theta", "T.sum_theta_sq"],
            SuffBasis::CenteredPair => &["T.ss_theta_ybar", "T.ss_theta_mu"],
            SuffBasis::Empty => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub basis: SuffBasis,
    pub values: Vec<f64>,
}

pub fn suff_stats(basis: SuffBasis, theta: &[f64], mu: f64, group_means: &[f64]) -> Result<SuffStats> {
    let values = match basis {
        SuffBasis::Sum => vec![theta.iter().sum()],
        SuffBasis::SumAndSumSq => vec![theta.iter().sum(), theta.iter().map(|t| t * t).sum()],
        SuffBasis::CenteredPair => {
            if group_means.len() != theta.len() {
                return Err(Error::InvalidArgument(format!(
                    "theta has length {} but there are {} group means",
                    theta.len(),
                    group_means.len()
                )));
            }
            vec![
                theta.iter().zip(group_means).map(|(t, y)| (t - y) * (t - y)).sum(),
                theta.iter().map(|t| (t - mu) * (t - mu)).sum(),
            ]
        }
        SuffBasis::Empty => Vec::new(),
    };
    if values.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::numerical("non-finite sufficient statistic", f64::NAN));
    }
    Ok(SuffStats { basis, values })
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
