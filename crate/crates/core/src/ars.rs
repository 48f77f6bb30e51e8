//! Adaptive rejection sampling from log-concave densities on the real line,
//! with a tangent-line envelope and secant squeeze.

use rand::Rng;

use crate::error::{Error, Result};

/// Unnormalised log-density with its derivative.
pub trait LogDensity {
    fn eval(&self, x: f64) -> (f64, f64);
}

impl<F: Fn(f64) -> (f64, f64)> LogDensity for F {
    fn eval(&self, x: f64) -> (f64, f64) {
        self(x)
    }
}

pub const MAX_HULL_POINTS: usize = 50;
pub const MAX_EXPANSIONS: usize = 50;
const MAX_PROPOSALS: usize = 10_000;

/// Piecewise-exponential envelope built from tangents at the abscissae.
#[derive(Debug, Clone)]
pub struct HullState {
    x: Vec<f64>,
    h: Vec<f64>,
    dh: Vec<f64>,
    /// Tangent intersections; segment `i` covers `[z[i-1], z[i]]` with
    /// infinite outer ends.
    z: Vec<f64>,
    log_mass: Vec<f64>,
}

impl HullState {
    pub fn abscissae(&self) -> &[f64] {
        &self.x
    }

    pub fn logf_values(&self) -> &[f64] {
        &self.h
    }

    pub fn dlogf_values(&self) -> &[f64] {
        &self.dh
    }

    pub fn intersections(&self) -> &[f64] {
        &self.z
    }

    /// Log of the unnormalised envelope mass per segment.
    pub fn segment_log_masses(&self) -> &[f64] {
        &self.log_mass
    }

    fn segment_of(&self, x: f64) -> usize {
        self.z.partition_point(|&z| z < x)
    }

    /// Upper envelope at `x`.
    pub fn upper(&self, x: f64) -> f64 {
        let i = self.segment_of(x);
        self.h[i] + self.dh[i] * (x - self.x[i])
    }

    /// Secant squeeze at `x`; `-inf` outside the abscissa range.
    pub fn lower(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x < self.x[0] || x > self.x[n - 1] {
            return f64::NEG_INFINITY;
        }
        let k = self.x.partition_point(|&a| a <= x).clamp(1, n - 1);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let w = (x - x0) / (x1 - x0);
        (1.0 - w) * self.h[k - 1] + w * self.h[k]
    }

    fn from_points(mut pts: Vec<(f64, f64, f64)>) -> Result<Self> {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let h: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let dh: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let mut hull = HullState { x, h, dh, z: Vec::new(), log_mass: Vec::new() };
        hull.rebuild()?;
        Ok(hull)
    }

    fn rebuild(&mut self) -> Result<()> {
        let n = self.x.len();
        if n < 2 {
            return Err(Error::Internal("hull needs at least two abscissae".into()));
        }
        if self.h.iter().chain(&self.dh).any(|v| !v.is_finite()) {
            return Err(Error::NotLogConcave("non-finite log-density or derivative on the hull".into()));
        }
        for i in 0..n - 1 {
            let tol = 1e-10 * (1.0 + self.dh[i].abs().max(self.dh[i + 1].abs()));
            if self.dh[i + 1] > self.dh[i] + tol {
                return Err(Error::NotLogConcave(format!(
                    "derivative increases from {} at {} to {} at {}",
                    self.dh[i],
                    self.x[i],
                    self.dh[i + 1],
                    self.x[i + 1]
                )));
            }
            // each tangent must dominate the neighbouring value
            let dx = self.x[i + 1] - self.x[i];
            let htol = 1e-9 * (1.0 + self.h[i].abs().max(self.h[i + 1].abs()));
            if self.h[i] + self.dh[i] * dx < self.h[i + 1] - htol
                || self.h[i + 1] - self.dh[i + 1] * dx < self.h[i] - htol
            {
                return Err(Error::NotLogConcave(format!(
                    "tangent lies below the density between {} and {}",
                    self.x[i],
                    self.x[i + 1]
                )));
            }
        }
        if !(self.dh[0] > 0.0 && self.dh[n - 1] < 0.0) {
            return Err(Error::Internal("outer hull slopes must point inward".into()));
        }
        self.z = (0..n - 1)
            .map(|i| {
                let (x0, x1) = (self.x[i], self.x[i + 1]);
                let denom = self.dh[i] - self.dh[i + 1];
                let z = if denom.abs() <= 1e-12 * (1.0 + self.dh[i].abs()) {
                    0.5 * (x0 + x1)
                } else {
                    (self.h[i + 1] - self.h[i] - x1 * self.dh[i + 1] + x0 * self.dh[i]) / denom
                };
                z.clamp(x0, x1)
            })
            .collect();
        self.log_mass = (0..n)
            .map(|i| {
                let a = if i == 0 { f64::NEG_INFINITY } else { self.z[i - 1] };
                let b = if i == n - 1 { f64::INFINITY } else { self.z[i] };
                segment_log_mass(self.h[i], self.dh[i], self.x[i], a, b)
            })
            .collect();
        if self.log_mass.iter().any(|m| m.is_nan() || *m == f64::INFINITY) {
            return Err(Error::Internal("envelope segment mass is not finite".into()));
        }
        Ok(())
    }

    fn insert(&mut self, x: f64, h: f64, dh: f64) -> Result<()> {
        let k = self.x.partition_point(|&a| a < x);
        if k < self.x.len() && self.x[k] == x {
            return Ok(());
        }
        self.x.insert(k, x);
        self.h.insert(k, h);
        self.dh.insert(k, dh);
        self.rebuild()
    }

    fn sample_envelope<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let max = self.log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_mass.iter().map(|m| (m - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut i = w.len() - 1;
        for (k, wk) in w.iter().enumerate() {
            if u < *wk {
                i = k;
                break;
            }
            u -= wk;
        }
        let n = self.x.len();
        let a = if i == 0 { f64::NEG_INFINITY } else { self.z[i - 1] };
        let b = if i == n - 1 { f64::INFINITY } else { self.z[i] };
        let s = self.dh[i];
        let v: f64 = rng.random();
        let len = b - a;
        if s > 0.0 {
            // density ∝ e^{s (x - b)} on (a, b]
            let tail = (-s * len).exp();
            let x = b + (tail + v * (1.0 - tail)).ln() / s;
            x.max(a)
        } else if s < 0.0 {
            let t = -s;
            let tail = (-t * len).exp();
            let x = a - (1.0 - v * (1.0 - tail)).ln() / t;
            x.min(b)
        } else {
            a + v * len
        }
    }
}

/// `log ∫_a^b exp(h + s (x - x0)) dx`.
fn segment_log_mass(h: f64, s: f64, x0: f64, a: f64, b: f64) -> f64 {
    let len = b - a;
    if s > 0.0 {
        h + s * (b - x0) + (-(-s * len).exp_m1()).ln() - s.ln()
    } else if s < 0.0 {
        h + s * (a - x0) + (-(s * len).exp_m1()).ln() - (-s).ln()
    } else {
        h + len.ln()
    }
}

/// Builds the initial hull at `mode_hint + {-2, 0, 2} * scale_hint`, pushing
/// the outer abscissae outward geometrically until the derivative is positive
/// on the left and negative on the right.
pub fn ars_init(target: &impl LogDensity, mode_hint: f64, scale_hint: f64) -> Result<HullState> {
    if !(scale_hint > 0.0) || !scale_hint.is_finite() || !mode_hint.is_finite() {
        return Err(Error::InvalidArgument("ARS hints must be finite with positive scale".into()));
    }
    let point = |x: f64| {
        let (h, d) = target.eval(x);
        (x, h, d)
    };
    let mut pts = vec![
        point(mode_hint - 2.0 * scale_hint),
        point(mode_hint),
        point(mode_hint + 2.0 * scale_hint),
    ];
    let mut expansions = 0;
    let mut step = 2.0 * scale_hint;
    while !(pts[0].2 > 0.0) {
        if expansions == MAX_EXPANSIONS || pts[0].2.is_nan() {
            return Err(Error::NotLogConcave(format!(
                "no positive derivative found to the left after {expansions} expansions"
            )));
        }
        step *= 2.0;
        let x = pts[0].0 - step;
        pts.insert(0, point(x));
        expansions += 1;
    }
    step = 2.0 * scale_hint;
    while !(pts[pts.len() - 1].2 < 0.0) {
        if expansions == MAX_EXPANSIONS || pts[pts.len() - 1].2.is_nan() {
            return Err(Error::NotLogConcave(format!(
                "no negative derivative found to the right after {expansions} expansions"
            )));
        }
        step *= 2.0;
        let x = pts[pts.len() - 1].0 + step;
        pts.push(point(x));
        expansions += 1;
    }
    HullState::from_points(pts)
}

/// One exact draw from the normalised target. Evaluated proposals are added
/// to the hull until it holds [`MAX_HULL_POINTS`] abscissae.
pub fn ars_sample<R: Rng + ?Sized>(hull: &mut HullState, target: &impl LogDensity, rng: &mut R) -> Result<f64> {
    for _ in 0..MAX_PROPOSALS {
        let x = hull.sample_envelope(rng);
        if !x.is_finite() {
            return Err(Error::Internal(format!("envelope proposal is not finite: {x}")));
        }
        let u = hull.upper(x);
        let l = hull.lower(x);
        let log_w = rng.random::<f64>().ln();
        if log_w <= l - u {
            return Ok(x);
        }
        let (h, dh) = target.eval(x);
        let log_ratio = h - u;
        if log_ratio > 1e-12 * (1.0 + u.abs()) || !log_ratio.is_finite() && !(log_ratio == f64::NEG_INFINITY) {
            return Err(Error::Internal(format!(
                "acceptance probability exp({log_ratio}) outside [0, 1] at x = {x}"
            )));
        }
        if l > h + 1e-9 * (1.0 + h.abs()) {
            return Err(Error::NotLogConcave(format!("squeeze exceeds the density at x = {x}")));
        }
        let accept = log_w <= log_ratio;
        if hull.x.len() < MAX_HULL_POINTS && h.is_finite() && dh.is_finite() {
            hull.insert(x, h, dh)?;
        }
        if accept {
            return Ok(x);
        }
    }
    Err(Error::Internal(format!("no proposal accepted in {MAX_PROPOSALS} attempts")))
}
