//! Gauss–Hermite rules and mode-centred integration of one-dimensional,
//! unimodal, Gaussian-like densities.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Node count of the primary mode-centred rule.
pub const PRIMARY_NODES: usize = 64;
/// Node count of the refinement rule used to validate the primary one.
pub const REFINED_NODES: usize = 128;
/// Largest tolerated relative disagreement between the two rules.
pub const REFINEMENT_TOL: f64 = 1e-8;

/// Gauss–Hermite rule for the weight `exp(-x^2)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Computes the `n`-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let half = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..half {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        GaussHermite { nodes: x, weights: w }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[h(X)]` for `X ~ N(mean, sd^2)`.
    pub fn normal_expectation(&self, mean: f64, sd: f64, h: impl Fn(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * h(mean + scale * x))
            .sum();
        s / std::f64::consts::PI.sqrt()
    }
}

/// Cached rule with [`PRIMARY_NODES`] nodes.
pub fn primary_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(PRIMARY_NODES))
}

/// Cached rule with [`REFINED_NODES`] nodes.
pub fn refined_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(REFINED_NODES))
}

/// Maximiser of a strictly concave function given `(f, f', f'')`, by Newton
/// steps safeguarded with a bisection bracket. Returns `(mode, f''(mode))`.
pub fn find_mode(f: impl Fn(f64) -> (f64, f64, f64), start: f64, step: f64) -> Result<(f64, f64)> {
    let deriv = |x: f64| f(x).1;
    let mut x = start;
    let d0 = deriv(x);
    if !d0.is_finite() {
        return Err(Error::numerical("non-finite derivative at mode search start", d0));
    }
    // bracket the root of f'
    let mut step = step.abs().max(1e-3);
    let (mut lo, mut hi);
    if d0 > 0.0 {
        lo = x;
        hi = x + step;
        let mut n = 0;
        while deriv(hi) > 0.0 {
            lo = hi;
            step *= 2.0;
            hi += step;
            n += 1;
            if n > 200 {
                return Err(Error::numerical("mode bracket expansion failed (right)", hi));
            }
        }
    } else if d0 < 0.0 {
        hi = x;
        lo = x - step;
        let mut n = 0;
        while deriv(lo) < 0.0 {
            hi = lo;
            step *= 2.0;
            lo -= step;
            n += 1;
            if n > 200 {
                return Err(Error::numerical("mode bracket expansion failed (left)", lo));
            }
        }
    } else {
        return Ok((x, f(x).2));
    }
    x = x.clamp(lo, hi);
    for _ in 0..200 {
        let (_, d, d2) = f(x);
        if d == 0.0 {
            return Ok((x, d2));
        }
        if d > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - d / d2;
        if !(d2 < 0.0) || !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-13 * (1.0 + x.abs()) || (hi - lo) <= 1e-13 * (1.0 + x.abs()) {
            let d2 = f(next).2;
            return Ok((next, d2));
        }
        x = next;
    }
    Err(Error::numerical("mode search did not converge", hi - lo))
}

/// A Gauss–Hermite rule re-centred at a density's mode and rescaled by its
/// curvature: nodes `theta_i` with normalised weights, plus the log of the
/// integral of the unnormalised density.
#[derive(Debug, Clone)]
pub struct CenteredRule {
    pub log_integral: f64,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CenteredRule {
    pub fn build(logf: impl Fn(f64) -> f64, mode: f64, sd: f64, rule: &GaussHermite) -> Result<Self> {
        let scale = std::f64::consts::SQRT_2 * sd;
        let l0 = logf(mode);
        let points: Vec<f64> = rule.nodes().iter().map(|x| mode + scale * x).collect();
        let log_terms: Vec<f64> = rule
            .nodes()
            .iter()
            .zip(rule.weights())
            .zip(&points)
            .map(|((x, w), t)| w.ln() + x * x + logf(*t) - l0)
            .collect();
        let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::numerical("non-finite integrand in centred quadrature", max));
        }
        let sum: f64 = log_terms.iter().map(|a| (a - max).exp()).sum();
        let lse = max + sum.ln();
        let weights = log_terms.iter().map(|a| (a - lse).exp()).collect();
        Ok(CenteredRule {
            log_integral: scale.ln() + l0 + lse,
            points,
            weights,
        })
    }

    pub fn expectation(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(t, w)| w * h(*t)).sum()
    }
}

/// Primary and refined centred rules for a concave log-density with
/// analytic first and second derivatives.
#[derive(Debug, Clone)]
pub struct CheckedIntegral {
    pub primary: CenteredRule,
    pub refined: CenteredRule,
}

impl CheckedIntegral {
    pub fn new(f: impl Fn(f64) -> (f64, f64, f64), start: f64, step: f64) -> Result<Self> {
        let (mode, d2) = find_mode(&f, start, step)?;
        if !(d2 < 0.0) {
            return Err(Error::numerical("non-negative curvature at the mode", d2));
        }
        let sd = 1.0 / (-d2).sqrt();
        let logf = |t: f64| f(t).0;
        let primary = CenteredRule::build(logf, mode, sd, primary_rule())?;
        let refined = CenteredRule::build(logf, mode, sd, refined_rule())?;
        let residual = (primary.log_integral - refined.log_integral).abs();
        // log-scale difference equals relative difference to first order
        if residual > REFINEMENT_TOL {
            return Err(Error::numerical(
                "64- and 128-node quadrature disagree on the normalising constant",
                residual,
            ));
        }
        Ok(CheckedIntegral { primary, refined })
    }

    pub fn log_integral(&self) -> f64 {
        self.primary.log_integral
    }

    /// Posterior expectation validated against the refined rule; the
    /// tolerance is relative for values away from zero and absolute near it.
    pub fn expectation(&self, h: impl Fn(f64) -> f64) -> Result<f64> {
        let a = self.primary.expectation(&h);
        let b = self.refined.expectation(&h);
        let residual = (a - b).abs();
        if residual > REFINEMENT_TOL * b.abs().max(1.0) {
            return Err(Error::numerical("64- and 128-node quadrature disagree on an expectation", residual));
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_sum_to_sqrt_pi_and_moments_are_exact() {
        for n in [1, 2, 5, 20, 64, 128] {
            let gh = GaussHermite::new(n);
            let s: f64 = gh.weights().iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "n={n} sum={s}");
            // E[Z^4] = 3 under N(0,1)
            if n >= 3 {
                let m4 = gh.normal_expectation(0.0, 1.0, |z| z.powi(4));
                assert!((m4 - 3.0).abs() < 1e-11, "n={n} m4={m4}");
            }
        }
    }

    #[test]
    fn nodes_are_symmetric_and_distinct() {
        let gh = GaussHermite::new(128);
        let mut xs = gh.nodes().to_vec();
        xs.sort_by(f64::total_cmp);
        assert!(xs.windows(2).all(|w| w[1] - w[0] > 1e-3));
        assert!((xs[0] + xs[127]).abs() < 1e-12);
    }

    #[test]
    fn centred_rule_integrates_gaussian_exactly() {
        let (mu, sd) = (1.3, 0.4);
        let f = |t: f64| {
            let z = (t - mu) / sd;
            (-0.5 * z * z, -(t - mu) / (sd * sd), -1.0 / (sd * sd))
        };
        let ci = CheckedIntegral::new(f, 0.0, 1.0).unwrap();
        let expect = (sd * (2.0 * PI).sqrt()).ln();
        assert!((ci.log_integral() - expect).abs() < 1e-13);
        let m2 = ci.expectation(|t| t * t).unwrap();
        assert!((m2 - (mu * mu + sd * sd)).abs() < 1e-12);
    }

    #[test]
    fn mode_search_handles_far_start() {
        let f = |t: f64| (-(t - 40.0).powi(2), -2.0 * (t - 40.0), -2.0);
        let (mode, d2) = find_mode(f, -10.0, 1.0).unwrap();
        assert!((mode - 40.0).abs() < 1e-10);
        assert_eq!(d2, -2.0);
    }
}
