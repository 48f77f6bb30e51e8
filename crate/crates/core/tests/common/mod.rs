#![allow(dead_code)]

use hiergibbs::ars::{ars_init, ars_sample};
use hiergibbs::gibbs::{gibbs_sweep, Blocking, ChainState, KernelSpec};
use hiergibbs::models::{
    draw_outcome, log_conditional_theta, Dataset, GammaPrior, GlobalParams, GroupObs, ModelSpec, MuPrior, PriorSpec,
    ThetaConditional,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

/// Proper priors with finite second moments for every component.
pub fn proper_prior(mu: MuPrior) -> PriorSpec {
    PriorSpec { mu, tau1: GammaPrior::new(3.0, 2.0), tau0: Some(GammaPrior::new(4.0, 3.0)) }
}

pub fn spec(model: ModelSpec, mu: MuPrior, blocking: Blocking) -> KernelSpec {
    let mut prior = proper_prior(mu);
    if model.kind != hiergibbs::models::ModelKind::NormalUnknownTau0 {
        prior.tau0 = None;
    }
    KernelSpec::new(model, prior, blocking).unwrap()
}

fn gamma_moments(g: &GammaPrior) -> (f64, f64, f64) {
    // E[x], E[x^2], E[1/x]
    (g.shape / g.rate, g.shape * (g.shape + 1.0) / (g.rate * g.rate), g.rate / (g.shape - 1.0))
}

/// The precision `mu`'s prior scale is divided by: `tau0` without groups.
fn mu_scale_precision(spec: &KernelSpec) -> usize {
    if spec.blocking.has_groups() {
        1
    } else {
        2
    }
}

/// Draws `(psi, theta)` and data `Y` from the joint prior; components not
/// sampled by the blocking come from `fixed`.
pub fn joint_prior_sample(spec: &KernelSpec, fixed: &GlobalParams, j: usize, rng: &mut ChaCha8Rng) -> (ChainState, Dataset) {
    let mask = spec.blocking.mask();
    let mut psi = *fixed;
    let gamma = |g: &GammaPrior, rng: &mut ChaCha8Rng| Gamma::new(g.shape, 1.0 / g.rate).unwrap().sample(rng);
    if mask.tau1 {
        psi.tau1 = gamma(&spec.prior.tau1, rng);
    }
    if mask.tau0 {
        psi.tau0 = gamma(spec.prior.tau0.as_ref().unwrap(), rng);
    }
    if mask.mu {
        let (mean, var) = match spec.prior.mu {
            MuPrior::NormalOverTau { mean, scale } => (mean, scale / psi.get(mu_scale_precision(spec))),
            MuPrior::NormalFixedVar { mean, var } => (mean, var),
            MuPrior::Flat => panic!("improper prior"),
        };
        psi.mu = Normal::new(mean, var.sqrt()).unwrap().sample(rng);
    }
    let m = spec.model.m;
    let std = Normal::new(0.0, 1.0).unwrap();
    let (theta, data) = if !spec.blocking.has_groups() {
        let sd = 1.0 / psi.tau0.sqrt();
        let y = (0..j * m).map(|_| psi.mu + sd * std.sample(rng)).collect();
        (Vec::new(), Dataset::from_flat_reals(y, m).unwrap())
    } else {
        let sd1 = 1.0 / psi.tau1.sqrt();
        let theta: Vec<f64> = (0..j).map(|_| psi.mu + sd1 * std.sample(rng)).collect();
        let data = match spec.model.likelihood() {
            Some(pmf) => Dataset::from_counts(theta.iter().map(|t| draw_outcome(pmf.as_ref(), *t, rng)).collect(), m),
            None => {
                let sd0 = 1.0 / psi.tau0.sqrt();
                let mut y = Vec::with_capacity(j * m);
                for t in &theta {
                    for _ in 0..m {
                        y.push(t + sd0 * std.sample(rng));
                    }
                }
                Dataset::from_flat_reals(y, m)
            }
        }
        .unwrap();
        (theta, data)
    };
    (ChainState::new(spec, &data, theta, psi).unwrap(), data)
}

/// Exact prior moments `(E x, E x^2)` of each tracked quantity.
fn prior_moments(spec: &KernelSpec, fixed: &GlobalParams) -> Vec<(String, f64, f64)> {
    let mask = spec.blocking.mask();
    let mut out = Vec::new();
    let inv = |i: usize| -> f64 {
        let g = if i == 1 { Some(spec.prior.tau1) } else { spec.prior.tau0 };
        if mask.get(i) {
            gamma_moments(&g.unwrap()).2
        } else {
            1.0 / fixed.get(i)
        }
    };
    let (mu1, mu2) = if mask.mu {
        match spec.prior.mu {
            MuPrior::NormalOverTau { mean, scale } => (mean, mean * mean + scale * inv(mu_scale_precision(spec))),
            MuPrior::NormalFixedVar { mean, var } => (mean, mean * mean + var),
            MuPrior::Flat => unreachable!(),
        }
    } else {
        (fixed.mu, fixed.mu * fixed.mu)
    };
    if mask.mu {
        out.push(("mu".to_string(), mu1, mu2));
    }
    if mask.tau1 {
        let (a, b, _) = gamma_moments(&spec.prior.tau1);
        out.push(("tau1".to_string(), a, b));
    }
    if mask.tau0 {
        let (a, b, _) = gamma_moments(spec.prior.tau0.as_ref().unwrap());
        out.push(("tau0".to_string(), a, b));
    }
    if spec.blocking.has_groups() {
        out.push(("theta0".to_string(), mu1, mu2 + inv(1)));
    }
    out
}

fn tracked(state: &ChainState, name: &str) -> f64 {
    match name {
        "mu" => state.psi.mu,
        "tau1" => state.psi.tau1,
        "tau0" => state.psi.tau0,
        _ => state.theta[0],
    }
}

/// Starts each replication at a joint-prior draw, applies one sweep with the
/// drawn data and returns `(label, z)` for the first two moments of every
/// tracked quantity, `z` being the deviation from the exact prior moment in
/// Monte Carlo standard errors.
pub fn one_sweep_invariance(spec: &KernelSpec, fixed: &GlobalParams, j: usize, reps: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let moments = prior_moments(spec, fixed);
    let mut sums = vec![[0.0f64; 4]; moments.len()];
    for _ in 0..reps {
        let (mut state, data) = joint_prior_sample(spec, fixed, j, &mut rng);
        gibbs_sweep(spec, &mut state, &data, &mut rng).unwrap();
        for (k, (name, _, _)) in moments.iter().enumerate() {
            let x = tracked(&state, name);
            let x2 = x * x;
            sums[k][0] += x;
            sums[k][1] += x * x;
            sums[k][2] += x2;
            sums[k][3] += x2 * x2;
        }
    }
    let n = reps as f64;
    let mut out = Vec::new();
    for ((name, e1, e2), s) in moments.iter().zip(&sums) {
        for (label, sum, sum_sq, exact) in [("", s[0], s[1], *e1), ("^2", s[2], s[3], *e2)] {
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
            out.push((format!("{name}{label}"), (mean - exact) / (var / n).sqrt()));
        }
    }
    out
}

/// Kolmogorov–Smirnov distance between `n` ARS draws from the discrete-model
/// conditional of theta and its CDF by the trapezoid rule on a fine grid.
pub fn ars_ks_distance(model: &ModelSpec, psi: &GlobalParams, y: usize, n: usize, seed: u64) -> f64 {
    let ThetaConditional::Discrete(cond) = log_conditional_theta(model, psi, GroupObs::Count(y)).unwrap() else {
        panic!("discrete model expected");
    };
    let target = |x: f64| {
        let (f, d, _) = cond.eval2(x);
        (f, d)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hull = ars_init(&target, psi.mu, 1.0 / psi.tau1.sqrt()).unwrap();
    let mut draws: Vec<f64> = (0..n).map(|_| ars_sample(&mut hull, &target, &mut rng).unwrap()).collect();
    draws.sort_by(f64::total_cmp);

    let sd = 1.0 / psi.tau1.sqrt();
    let (lo, hi) = (psi.mu - 15.0 * sd - 10.0, psi.mu + 15.0 * sd + 10.0);
    let grid = 200_000;
    let dx = (hi - lo) / grid as f64;
    let xs: Vec<f64> = (0..=grid).map(|k| lo + k as f64 * dx).collect();
    let logf: Vec<f64> = xs.iter().map(|x| cond.eval2(*x).0).collect();
    let top = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = logf.iter().map(|l| (l - top).exp()).collect();
    let mut cdf = vec![0.0; xs.len()];
    for k in 1..xs.len() {
        cdf[k] = cdf[k - 1] + 0.5 * dx * (f[k] + f[k - 1]);
    }
    let total = cdf[grid];
    let at = |x: f64| -> f64 {
        let pos = ((x - lo) / dx).clamp(0.0, grid as f64 - 1e-9);
        let k = pos.floor() as usize;
        let w = pos - k as f64;
        (cdf[k] * (1.0 - w) + cdf[k + 1] * w) / total
    };
    let mut d: f64 = 0.0;
    for (i, x) in draws.iter().enumerate() {
        let c = at(*x);
        d = d.max((c - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - c).abs());
    }
    d
}

/// Every kernel variant with the priors used in invariance checks.
pub fn invariance_cases() -> Vec<(String, KernelSpec, GlobalParams)> {
    let over = MuPrior::NormalOverTau { mean: 0.5, scale: 2.0 };
    let fixed_var = MuPrior::NormalFixedVar { mean: 0.5, var: 1.5 };
    let known = || ModelSpec::normal_known_tau0(2).unwrap();
    let unknown = || ModelSpec::normal_unknown_tau0(2).unwrap();
    let logit = || ModelSpec::binomial_logit(3).unwrap();
    let fixed = GlobalParams::new(0.0, 1.3, 0.8);
    let cases = vec![
        ("normal P1", spec(known(), over, Blocking::P1KnownTau1)),
        ("normal P2", spec(known(), over, Blocking::P2JointThetaMu)),
        ("normal P3", spec(known(), over, Blocking::P3SequentialMuTau)),
        ("normal P3 fixed-variance prior", spec(known(), fixed_var, Blocking::P3SequentialMuTau)),
        ("normal two-block", spec(known(), over, Blocking::TwoBlockThetaVsPsi)),
        ("normal two-block fixed-variance prior", spec(known(), fixed_var, Blocking::TwoBlockThetaVsPsi)),
        ("normal extended", spec(unknown(), over, Blocking::ExtendedThetaMuTau0Tau1)),
        ("normal fixed-dimensional", spec(unknown(), over, Blocking::FixedDimMuTau)),
        ("logit P1", spec(logit(), fixed_var, Blocking::P1KnownTau1)),
        ("logit P3", spec(logit(), over, Blocking::P3SequentialMuTau)),
        ("logit two-block", spec(logit(), over, Blocking::TwoBlockThetaVsPsi)),
    ];
    cases.into_iter().map(|(n, s)| (n.to_string(), s, fixed)).collect()
}
