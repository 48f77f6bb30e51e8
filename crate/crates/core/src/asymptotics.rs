//! Fisher information, coupling/variance matrices, the limiting covariance of
//! `(T, psi)`, spectral gaps and mixing-time bounds.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::models::{discrete_integral, marginal_loglik, GlobalParams, GroupObs, ModelSpec, PARAM_NAMES};
use crate::optim::fd_step;
use crate::quadrature::primary_rule;

/// Fisher information of the group marginal likelihood for the listed
/// parameter components (0 = mu, 1 = tau1, 2 = tau0).
#[derive(Debug, Clone)]
pub struct FisherMatrix {
    pub entries: Mat,
    pub params: Vec<usize>,
}

impl FisherMatrix {
    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.params.iter().map(|&i| PARAM_NAMES[i]).collect()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.entries.symmetric_eigen()?.0[0])
    }
}

/// `C` (S x D), `V` (S x S) and `I` (D x D) for one kernel.
#[derive(Debug, Clone)]
pub struct GapInputs {
    pub c: Mat,
    pub v: Mat,
    pub i: FisherMatrix,
}

impl GapInputs {
    pub fn new(c: Mat, v: Mat, i: FisherMatrix) -> Result<Self> {
        if c.rows() != v.rows() || !v.is_square() || c.cols() != i.dim() || !i.entries.is_square() {
            return Err(Error::InvalidArgument(format!(
                "incompatible shapes: C {}x{}, V {}x{}, I {}x{}",
                c.rows(),
                c.cols(),
                v.rows(),
                v.cols(),
                i.entries.rows(),
                i.entries.cols()
            )));
        }
        Ok(GapInputs { c, v, i })
    }
}

#[derive(Debug, Clone)]
pub struct GapReport {
    pub gamma: f64,
    /// Eigenvalues of `V^-1 C I^-1 C^T`, ascending.
    pub eigenvalues: Vec<f64>,
    pub bound_t: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LimitCovariance {
    /// `[[V + C I^-1 C^T, C I^-1], [I^-1 C^T, I^-1]]`.
    pub sigma: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapVariant {
    /// `mu` only, `tau1` known.
    P1,
    /// `(mu, tau1)`; shared by the joint and sequential blockings.
    P2P3,
    /// `(mu, tau1, tau0)` with the centred pair of statistics.
    Extended,
}

fn check_precisions(m: usize, tau0: f64, tau1: f64) -> Result<()> {
    if m < 1 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if !(tau0 > 0.0 && tau1 > 0.0) || !tau0.is_finite() || !tau1.is_finite() {
        return Err(Error::InvalidParameter(format!("precisions must be positive, got tau0={tau0}, tau1={tau1}")));
    }
    Ok(())
}

/// Closed-form Fisher information of the normal marginal, restricted to the
/// components flagged in `psi_star.sampled`.
pub fn fisher_normal(psi_star: &GlobalParams, m: usize) -> Result<FisherMatrix> {
    psi_star.validate()?;
    check_precisions(m, psi_star.tau0, psi_star.tau1)?;
    let (t0, t1, mf) = (psi_star.tau0, psi_star.tau1, m as f64);
    let s = mf * t0 + t1;
    let mut full = Mat::zeros(3, 3);
    full[(0, 0)] = mf * t0 * t1 / s;
    full[(1, 1)] = mf * mf * t0 * t0 / (2.0 * t1 * t1 * s * s);
    full[(1, 2)] = mf / (2.0 * s * s);
    full[(2, 1)] = full[(1, 2)];
    full[(2, 2)] = (mf - 1.0) / (2.0 * t0 * t0) + t1 * t1 / (2.0 * t0 * t0 * s * s);
    let params = psi_star.sampled.indices();
    Ok(FisherMatrix { entries: full.select(&params, &params), params })
}

/// Coupling and conditional-variance matrices of the normal kernels paired
/// with the matching Fisher block.
pub fn cv_normal(psi_star: &GlobalParams, m: usize, variant: GapVariant) -> Result<GapInputs> {
    psi_star.validate()?;
    let (t0, t1) = (psi_star.tau0, psi_star.tau1);
    check_precisions(m, t0, t1)?;
    let mf = m as f64;
    let s = mf * t0 + t1;
    let s2 = s * s;
    let mask = |mu, tau1, tau0| crate::models::ParamMask { mu, tau1, tau0 };
    match variant {
        GapVariant::P1 => {
            let i = fisher_normal(&psi_star.with_mask(mask(true, false, false)), m)?;
            GapInputs::new(Mat::diag(&[t1 / s]), Mat::diag(&[1.0 / s]), i)
        }
        GapVariant::P2P3 => {
            let i = fisher_normal(&psi_star.with_mask(mask(true, true, false)), m)?;
            let c = Mat::diag(&[t1 / s, -(t1 + 2.0 * mf * t0) / (t1 * s2)]);
            let v = Mat::diag(&[1.0 / s, (2.0 * t1 + 4.0 * mf * t0) / (t1 * s2)]);
            GapInputs::new(c, v, i)
        }
        GapVariant::Extended => {
            if m < 2 {
                return Err(Error::Singular(
                    "Fisher information of the extended model is singular for m = 1".into(),
                ));
            }
            let i = fisher_normal(&psi_star.with_mask(mask(true, true, true)), m)?;
            let row = [0.0, 1.0 / s2, mf / s2];
            let c = Mat::from_rows(&[&row, &row]);
            let v = Mat::from_rows(&[
                &[2.0 / s2 + 4.0 * mf * t0 / (t1 * s2), -2.0 / s2],
                &[-2.0 / s2, 2.0 / s2 + 4.0 * t1 / (mf * t0 * s2)],
            ]);
            GapInputs::new(c, v, i)
        }
    }
}

fn require_pd(a: &Mat, what: &str) -> Result<()> {
    if !a.is_symmetric(1e-12 * (1.0 + a.max_abs_diff(&Mat::zeros(a.rows(), a.cols())))) || !a.is_positive_definite() {
        return Err(Error::Singular(format!("{what} is not symmetric positive definite")));
    }
    Ok(())
}

pub fn limit_covariance(inputs: &GapInputs) -> Result<LimitCovariance> {
    require_pd(&inputs.v, "V")?;
    require_pd(&inputs.i.entries, "Fisher information")?;
    let iinv = inputs.i.entries.inverse()?;
    let ci = inputs.c.matmul(&iinv);
    let top_left = inputs.v.add(&ci.matmul(&inputs.c.transpose()));
    let (s, d) = (inputs.c.rows(), inputs.c.cols());
    let mut sigma = Mat::zeros(s + d, s + d);
    sigma.set_block(0, 0, &top_left);
    sigma.set_block(0, s, &ci);
    sigma.set_block(s, 0, &ci.transpose());
    sigma.set_block(s, s, &iinv);
    Ok(LimitCovariance { sigma })
}

/// Spectral gap `min 1/(1 + lambda)` over the eigenvalues of
/// `V^-1 C I^-1 C^T`, computed on the congruent symmetric matrix
/// `V^-1/2 C I^-1 C^T V^-1/2`. `bound` = `(M, eps)` adds the mixing bound.
pub fn gap_from_matrices(inputs: &GapInputs, bound: Option<(f64, f64)>) -> Result<GapReport> {
    require_pd(&inputs.v, "V")?;
    let iinv = inputs.i.entries.inverse()?;
    let vh = inputs.v.inv_sqrt_spd()?;
    let k = inputs.c.matmul(&iinv).matmul(&inputs.c.transpose());
    let sym = vh.matmul(&k).matmul(&vh);
    let sym = sym.add(&sym.transpose()).scale(0.5);
    let (eigenvalues, _) = sym.symmetric_eigen()?;
    if let Some(&low) = eigenvalues.first() {
        if low < -1e-10 {
            return Err(Error::numerical("negative eigenvalue in the gap computation", low));
        }
    }
    let lambda_max = eigenvalues.iter().copied().fold(0.0, f64::max);
    let gamma = 1.0 / (1.0 + lambda_max);
    let bound_t = bound.map(|(m, eps)| mixing_bound(gamma, m, eps)).transpose()?;
    Ok(GapReport { gamma, eigenvalues, bound_t })
}

/// Closed-form gaps of the normal kernels in terms of `r = tau1 / (m tau0)`.
pub fn gap_closed_normal(m: usize, tau0: f64, tau1: f64, variant: GapVariant) -> Result<f64> {
    check_precisions(m, tau0, tau1)?;
    let r = tau1 / (m as f64 * tau0);
    match variant {
        GapVariant::P1 => Ok(1.0 / (1.0 + r)),
        GapVariant::P2P3 => Ok((1.0 / (1.0 + r)).powi(2)),
        GapVariant::Extended => {
            if m < 2 {
                return Err(Error::Domain("the extended-model gap needs m >= 2".into()));
            }
            Ok(1.0 / (1.0 + (1.0 - r) * (1.0 - r) / (m as f64 - 1.0) + r * r))
        }
    }
}

/// Upper bound on the mixing time from an `M`-warm start to accuracy `eps`
/// for a chain with spectral gap `gamma`. Never below one step: when
/// `M < 2 eps` the formula would dip under 1 (even below 0 for small gaps).
pub fn mixing_bound(gamma: f64, m_warm: f64, eps: f64) -> Result<f64> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Domain(format!("mixing bound is infinite for gap {gamma}")));
    }
    if !(m_warm >= 1.0) || !m_warm.is_finite() {
        return Err(Error::InvalidArgument(format!("warm-start constant must be >= 1, got {m_warm}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {eps}")));
    }
    if gamma >= 1.0 {
        return Ok(1.0);
    }
    Ok((1.0 + ((m_warm / 2.0).ln() - eps.ln()) / -(-gamma).ln_1p()).max(1.0))
}

/// `E[X^p]` for `X ~ N(mean, var)`.
fn gaussian_raw_moment(mean: f64, var: f64, p: u32) -> f64 {
    let (mut prev, mut cur) = (1.0, mean);
    if p == 0 {
        return 1.0;
    }
    for k in 2..=p {
        let next = mean * cur + (k - 1) as f64 * var * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `E[T_s(theta)^p | y, psi]` with `T_1(theta) = theta` and
/// `T_2(theta) = (theta - mu)^2`. Gaussian closed form for normal kinds;
/// mode-centred Gauss–Hermite with a 128-node check for discrete kinds.
pub fn posterior_moment(model: &ModelSpec, psi: &GlobalParams, y: GroupObs<'_>, s: usize, p: u32) -> Result<f64> {
    if !(s == 1 || s == 2) {
        return Err(Error::InvalidArgument(format!("statistic index must be 1 or 2, got {s}")));
    }
    if s as u32 * p > 6 {
        return Err(Error::InvalidArgument(format!("s * p must not exceed 6, got {}", s as u32 * p)));
    }
    psi.validate()?;
    match (y, model.is_discrete()) {
        (GroupObs::Reals(v), false) => {
            let ybar = v.iter().sum::<f64>() / v.len() as f64;
            let (mean, var) = crate::models::group_posterior_normal(ybar, psi, v.len());
            Ok(match s {
                1 => gaussian_raw_moment(mean, var, p),
                _ => gaussian_raw_moment(mean - psi.mu, var, 2 * p),
            })
        }
        (GroupObs::Count(c), true) => {
            let ci = discrete_integral(model, psi, c)?;
            let mu = psi.mu;
            match s {
                1 => ci.expectation(|t| t.powi(p as i32)),
                _ => ci.expectation(|t| (t - mu).powi(2 * p as i32)),
            }
        }
        _ => Err(Error::InvalidArgument("observation type does not match the model kind".into())),
    }
}

/// Gap of the `mu`-only kernel with `T(theta) = theta`, as the fraction of
/// the prior variance of `theta` explained by the data:
/// `Var_Y(E[theta | Y]) * tau1`.
pub fn gap_single_quadrature(model: &ModelSpec, psi_star: &GlobalParams) -> Result<f64> {
    psi_star.validate()?;
    let (e1, e2) = if model.is_discrete() {
        let (mut e1, mut e2, mut total) = (0.0, 0.0, 0.0);
        for y in 0..=model.m {
            let g = marginal_loglik(model, psi_star, GroupObs::Count(y))?.exp();
            let mean = posterior_moment(model, psi_star, GroupObs::Count(y), 1, 1)?;
            e1 += g * mean;
            e2 += g * mean * mean;
            total += g;
        }
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::numerical("outcome probabilities do not sum to one", total - 1.0));
        }
        (e1, e2)
    } else {
        let mf = model.m as f64;
        let sd = (1.0 / psi_star.tau1 + 1.0 / (mf * psi_star.tau0)).sqrt();
        let post_mean = |ybar: f64| crate::models::group_posterior_normal(ybar, psi_star, model.m).0;
        let rule = primary_rule();
        (
            rule.normal_expectation(psi_star.mu, sd, post_mean),
            rule.normal_expectation(psi_star.mu, sd, |y| post_mean(y).powi(2)),
        )
    };
    Ok(((e2 - e1 * e1) * psi_star.tau1).clamp(0.0, 1.0))
}

/// Scores of `log g(y | psi)` for every outcome by central differences
/// (relative step 1e-5) with respect to `(mu, tau1)`, each validated against
/// the posterior-expectation identities
/// `d/dmu = tau1 E[theta - mu | y]` and
/// `d/dtau1 = 1/(2 tau1) - E[(theta - mu)^2 | y] / 2`.
/// Returns `(probabilities, scores)`.
pub fn discrete_scores(model: &ModelSpec, psi_star: &GlobalParams) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if !model.is_discrete() {
        return Err(Error::InvalidArgument("discrete model required".into()));
    }
    psi_star.validate()?;
    let params: Vec<usize> = psi_star.sampled.indices().into_iter().filter(|&i| i < 2).collect();
    let mut probs = Vec::with_capacity(model.m + 1);
    let mut scores = Vec::with_capacity(model.m + 1);
    for y in 0..=model.m {
        let obs = GroupObs::Count(y);
        probs.push(marginal_loglik(model, psi_star, obs)?.exp());
        let mut score = Vec::with_capacity(params.len());
        for &i in &params {
            let h = fd_step(psi_star.get(i), 1e-5);
            let (mut up, mut down) = (*psi_star, *psi_star);
            up.set(i, psi_star.get(i) + h);
            down.set(i, psi_star.get(i) - h);
            let fd = (marginal_loglik(model, &up, obs)? - marginal_loglik(model, &down, obs)?) / (2.0 * h);
            let identity = if i == 0 {
                psi_star.tau1 * (posterior_moment(model, psi_star, obs, 1, 1)? - psi_star.mu)
            } else {
                0.5 / psi_star.tau1 - 0.5 * posterior_moment(model, psi_star, obs, 2, 1)?
            };
            let residual = (fd - identity).abs();
            if residual > 1e-6 * identity.abs().max(1.0) {
                return Err(Error::numerical(
                    format!("finite-difference score for {} at y={y} disagrees with the identity", PARAM_NAMES[i]),
                    residual,
                ));
            }
            score.push(fd);
        }
        scores.push(score);
    }
    Ok((probs, scores))
}

/// Fisher information `sum_r g(y_r) s(y_r) s(y_r)^T` of a discrete model
/// over its free `(mu, tau1)` components.
pub fn fisher_numeric_discrete(model: &ModelSpec, psi_star: &GlobalParams) -> Result<FisherMatrix> {
    let (probs, scores) = discrete_scores(model, psi_star)?;
    let params: Vec<usize> = psi_star.sampled.indices().into_iter().filter(|&i| i < 2).collect();
    let d = params.len();
    let mut entries = Mat::zeros(d, d);
    for (g, s) in probs.iter().zip(&scores) {
        for a in 0..d {
            for b in 0..d {
                entries[(a, b)] += g * s[a] * s[b];
            }
        }
    }
    Ok(FisherMatrix { entries, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ParamMask;

    #[test]
    fn fisher_example_entry() {
        let f = fisher_normal(&GlobalParams::new(0.0, 1.0, 1.0), 3).unwrap();
        assert!((f.entries[(0, 0)] - 0.75).abs() < 1e-15);
        assert_eq!(f.names(), vec!["mu", "tau1", "tau0"]);
    }

    #[test]
    fn fisher_determinant_closed_form() {
        for &(m, t0, t1) in &[(1usize, 1.0, 1.0), (2, 0.5, 2.0), (5, 3.0, 0.7)] {
            let f = fisher_normal(&GlobalParams::new(0.0, t1, t0), m).unwrap();
            let mf = m as f64;
            let expect = mf.powi(3) * (mf - 1.0) * t0 / (4.0 * t1 * (t1 + mf * t0).powi(3));
            let idet = f.entries.det();
            assert!((idet - expect).abs() <= 1e-12 * expect.abs().max(1e-3), "m={m}: {idet} vs {expect}");
        }
    }

    #[test]
    fn zero_coupling_gives_unit_gap_and_block_diagonal_sigma() {
        let i = fisher_normal(&GlobalParams::new(0.0, 1.0, 1.0).with_mask(ParamMask::MU_TAU1), 3).unwrap();
        let inputs = GapInputs::new(Mat::zeros(2, 2), Mat::diag(&[0.3, 0.8]), i).unwrap();
        let g = gap_from_matrices(&inputs, None).unwrap();
        assert_eq!(g.gamma, 1.0);
        let sigma = limit_covariance(&inputs).unwrap().sigma;
        assert_eq!(sigma[(0, 2)], 0.0);
        assert_eq!(sigma[(1, 3)], 0.0);
    }

    #[test]
    fn gap_examples() {
        let psi = GlobalParams::new(0.0, 1.0, 1.0);
        assert!((gap_closed_normal(3, 1.0, 1.0, GapVariant::P1).unwrap() - 0.75).abs() < 1e-15);
        let r = gap_from_matrices(&cv_normal(&psi, 3, GapVariant::P2P3).unwrap(), None).unwrap();
        assert!((r.gamma - 0.5625).abs() < 1e-12);
        let psi = GlobalParams::new(0.0, 3.0, 1.0);
        let r = gap_from_matrices(&cv_normal(&psi, 3, GapVariant::Extended).unwrap(), None).unwrap();
        assert!((r.gamma - 0.5).abs() < 1e-12);
        assert!((gap_closed_normal(5, 1.0, 3.0, GapVariant::Extended).unwrap() - 1.0 / 1.4).abs() < 1e-12);
        assert!(matches!(cv_normal(&psi, 1, GapVariant::Extended), Err(Error::Singular(_))));
        assert!(matches!(gap_closed_normal(1, 1.0, 3.0, GapVariant::Extended), Err(Error::Domain(_))));
    }

    #[test]
    fn mixing_bound_examples() {
        assert!((mixing_bound(0.75, 2.0, 0.2).unwrap() - 2.160_964_047_443_681).abs() < 1e-12);
        assert_eq!(mixing_bound(1.0, 2.0, 0.2).unwrap(), 1.0);
        assert!(matches!(mixing_bound(0.0, 2.0, 0.2), Err(Error::Domain(_))));
        assert!((mixing_bound(0.3, 2.0, 1.0 - 1e-12).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn posterior_moment_limits() {
        let model = ModelSpec::binomial_logit(1).unwrap();
        let psi = GlobalParams::new(0.0, 1.0, 1.0);
        assert!(posterior_moment(&model, &psi, GroupObs::Count(0), 2, 4).is_err());
        let lo = posterior_moment(&model, &psi, GroupObs::Count(0), 1, 1).unwrap();
        let hi = posterior_moment(&model, &psi, GroupObs::Count(1), 1, 1).unwrap();
        assert!(lo < hi);
        assert!((lo + hi).abs() < 1e-12);
    }

    #[test]
    fn gaussian_moments() {
        assert_eq!(gaussian_raw_moment(2.0, 3.0, 2), 7.0);
        assert_eq!(gaussian_raw_moment(0.0, 1.0, 4), 3.0);
        assert_eq!(gaussian_raw_moment(0.0, 2.0, 6), 15.0 * 8.0);
    }
}
