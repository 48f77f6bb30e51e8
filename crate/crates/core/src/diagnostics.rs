//! Autocovariance, batch-means effective sample size, integrated
//! autocorrelation times, BvM rescaling and histogram total variation.

use crate::error::{Error, Result};
use crate::gibbs::{ChainOutput, TraceSink};
use crate::linalg::Mat;
use crate::models::{std_normal_cdf, GlobalParams};

/// Minimum series length for ESS estimation.
pub const MIN_ESS_LENGTH: usize = 100;

/// Default number of lags reported for an autocorrelation function.
pub fn default_max_lag(n: usize) -> usize {
    (n / 4).min(200)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autocovariance {
    /// Biased (`1/N`) autocovariances at lags `0..=max_lag`.
    pub values: Vec<f64>,
    /// Set when the series is constant, so correlations are undefined.
    pub zero_variance: bool,
}

impl Autocovariance {
    pub fn correlations(&self) -> Result<Vec<f64>> {
        if self.zero_variance {
            return Err(Error::UndefinedEss("constant series has no autocorrelation".into()));
        }
        Ok(self.values.iter().map(|v| v / self.values[0]).collect())
    }
}

pub fn autocovariance(series: &[f64], max_lag: usize) -> Result<Autocovariance> {
    let n = series.len();
    if n <= max_lag {
        return Err(Error::InvalidArgument(format!("series of length {n} is too short for lag {max_lag}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let values: Vec<f64> = (0..=max_lag)
        .map(|k| centred[..n - k].iter().zip(&centred[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect();
    let zero_variance = !(values[0] > 0.0);
    Ok(Autocovariance { values, zero_variance })
}

/// Accumulates the batch-means statistics of one series whose length is
/// known in advance.
#[derive(Debug, Clone)]
struct BatchMeans {
    n_total: usize,
    batch: usize,
    n_batches: usize,
    seen: usize,
    mean: f64,
    m2: f64,
    current: f64,
    batch_sums: Vec<f64>,
}

impl BatchMeans {
    fn new(n_total: usize) -> Self {
        let batch = ((n_total as f64).sqrt().floor() as usize).max(1);
        let n_batches = n_total / batch;
        BatchMeans {
            n_total,
            batch,
            n_batches,
            seen: 0,
            mean: 0.0,
            m2: 0.0,
            current: 0.0,
            batch_sums: Vec::with_capacity(n_batches),
        }
    }

    fn push(&mut self, x: f64) {
        self.seen += 1;
        let delta = x - self.mean;
        self.mean += delta / self.seen as f64;
        self.m2 += delta * (x - self.mean);
        if self.batch_sums.len() < self.n_batches {
            self.current += x;
            if self.seen % self.batch == 0 {
                self.batch_sums.push(self.current);
                self.current = 0.0;
            }
        }
    }

    fn ess(&self) -> Result<f64> {
        let n = self.seen;
        if n < MIN_ESS_LENGTH {
            return Err(Error::InvalidArgument(format!("ESS needs at least {MIN_ESS_LENGTH} values, got {n}")));
        }
        if n != self.n_total {
            return Err(Error::Internal(format!("expected {} values, received {n}", self.n_total)));
        }
        let var = self.m2 / (n - 1) as f64;
        if !(var > 0.0) {
            return Err(Error::UndefinedEss("series has zero variance".into()));
        }
        let b = self.batch as f64;
        let a = self.batch_sums.len();
        let means: Vec<f64> = self.batch_sums.iter().map(|s| s / b).collect();
        let grand = means.iter().sum::<f64>() / a as f64;
        let sigma2 = b * means.iter().map(|y| (y - grand) * (y - grand)).sum::<f64>() / (a - 1) as f64;
        let nf = n as f64;
        if !(sigma2 > 0.0) {
            return Ok(nf);
        }
        Ok((nf * var / sigma2).clamp(1.0, nf))
    }
}

/// Effective sample size by non-overlapping batch means with batch size
/// `floor(sqrt(N))`, truncated to `[1, N]`.
pub fn ess_batch_means(series: &[f64]) -> Result<f64> {
    let mut bm = BatchMeans::new(series.len());
    for &x in series {
        bm.push(x);
    }
    bm.ess()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IatSummary {
    pub names: Vec<String>,
    pub iat: Vec<f64>,
    pub ess: Vec<f64>,
    pub max_iat: f64,
    /// Columns whose ESS was undefined (constant traces).
    pub skipped: Vec<String>,
    pub rows: usize,
}

impl IatSummary {
    pub fn iat_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.iat[k])
    }

    fn from_parts(names: &[String], ess: Vec<Result<f64>>, rows: usize) -> Result<Self> {
        let mut out = IatSummary {
            names: Vec::new(),
            iat: Vec::new(),
            ess: Vec::new(),
            max_iat: 0.0,
            skipped: Vec::new(),
            rows,
        };
        for (name, e) in names.iter().zip(ess) {
            match e {
                Ok(e) => {
                    out.names.push(name.clone());
                    out.ess.push(e);
                    out.iat.push(rows as f64 / e);
                }
                Err(Error::UndefinedEss(_)) => out.skipped.push(name.clone()),
                Err(e) => return Err(e),
            }
        }
        if out.iat.is_empty() {
            return Err(Error::UndefinedEss("every column is constant".into()));
        }
        out.max_iat = out.iat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(out)
    }
}

/// Per-column IAT = rows / ESS and its maximum over all recorded columns.
pub fn max_iat(output: &ChainOutput) -> Result<IatSummary> {
    let rows = output.rows();
    if rows < MIN_ESS_LENGTH {
        return Err(Error::InvalidArgument(format!("need at least {MIN_ESS_LENGTH} rows, got {rows}")));
    }
    let ess = (0..output.cols()).map(|k| ess_batch_means(output.column(k))).collect();
    IatSummary::from_parts(output.names(), ess, rows)
}

/// Trace sink computing the same summary as [`max_iat`] without storing
/// the traces.
#[derive(Debug, Clone, Default)]
pub struct StreamingIat {
    names: Vec<String>,
    acc: Vec<BatchMeans>,
    rows: usize,
}

impl StreamingIat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn summary(&self) -> Result<IatSummary> {
        if self.rows < MIN_ESS_LENGTH {
            return Err(Error::InvalidArgument(format!("need at least {MIN_ESS_LENGTH} rows, got {}", self.rows)));
        }
        let ess = self.acc.iter().map(BatchMeans::ess).collect();
        IatSummary::from_parts(&self.names, ess, self.rows)
    }
}

impl TraceSink for StreamingIat {
    fn begin(&mut self, names: &[String], rows: usize) {
        self.names = names.to_vec();
        self.acc = vec![BatchMeans::new(rows); names.len()];
        self.rows = 0;
    }

    fn record(&mut self, row: &[f64]) {
        self.rows += 1;
        for (a, x) in self.acc.iter_mut().zip(row) {
            a.push(*x);
        }
    }
}

/// Maps each row `psi` (free components of `psi_hat`, in order) to
/// `sqrt(J) (psi - psi_hat)`.
pub fn bvm_rescale(psi_samples: &Mat, psi_hat: &GlobalParams, j: usize) -> Result<Mat> {
    let centre = psi_hat.free_values();
    if psi_samples.cols() != centre.len() {
        return Err(Error::InvalidArgument(format!(
            "samples have {} columns but psi_hat has {} free components",
            psi_samples.cols(),
            centre.len()
        )));
    }
    let root = (j as f64).sqrt();
    let mut out = Mat::zeros(psi_samples.rows(), psi_samples.cols());
    for r in 0..psi_samples.rows() {
        for (c, mu) in centre.iter().enumerate() {
            out[(r, c)] = root * (psi_samples[(r, c)] - mu);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum TvReference<'a> {
    Samples(&'a Mat),
    Gaussian { mean: Vec<f64>, cov: Mat },
}

/// Histogram estimate of total variation. The summary is the maximum of the
/// per-coordinate marginal distances, which bounds the joint distance from
/// below.
#[derive(Debug, Clone, PartialEq)]
pub struct TvEstimate {
    pub value: f64,
    pub bins: usize,
    pub per_coordinate: Vec<f64>,
}

fn column_range(a: &Mat, c: usize) -> (f64, f64) {
    (0..a.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(a[(r, c)]), hi.max(a[(r, c)])))
}

fn histogram(a: &Mat, c: usize, lo: f64, width: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let w = 1.0 / a.rows() as f64;
    for r in 0..a.rows() {
        let k = (((a[(r, c)] - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        h[k] += w;
    }
    h
}

pub fn tv_histogram(samples: &Mat, reference: &TvReference<'_>, bins: usize) -> Result<TvEstimate> {
    if bins < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 bins, got {bins}")));
    }
    if samples.rows() < 1000 {
        return Err(Error::InvalidArgument(format!("need at least 1000 sample rows, got {}", samples.rows())));
    }
    let d = samples.cols();
    let mut per_coordinate = Vec::with_capacity(d);
    match reference {
        TvReference::Samples(other) => {
            if other.rows() < 1000 || other.cols() != d {
                return Err(Error::InvalidArgument("reference samples need >= 1000 rows and matching columns".into()));
            }
            for c in 0..d {
                let (a0, a1) = column_range(samples, c);
                let (b0, b1) = column_range(other, c);
                let (lo, hi) = (a0.min(b0), a1.max(b1));
                let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
                let p = histogram(samples, c, lo, width, bins);
                let q = histogram(other, c, lo, width, bins);
                let tv = 0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>();
                per_coordinate.push(tv.clamp(0.0, 1.0));
            }
        }
        TvReference::Gaussian { mean, cov } => {
            if mean.len() != d || cov.rows() != d || cov.cols() != d {
                return Err(Error::InvalidArgument("Gaussian reference has the wrong dimension".into()));
            }
            for c in 0..d {
                let sd = cov[(c, c)].sqrt();
                if !(sd > 0.0) {
                    return Err(Error::InvalidArgument("reference variance must be positive".into()));
                }
                let (lo, hi) = column_range(samples, c);
                let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
                let p = histogram(samples, c, lo, width, bins);
                let cdf = |x: f64| std_normal_cdf((x - mean[c]) / sd);
                let mut sum = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    let a = lo + k as f64 * width;
                    let b = if k + 1 == bins { hi.max(lo + width) } else { a + width };
                    sum += (pk - (cdf(b) - cdf(a))).abs();
                }
                // reference mass outside the sampled range
                sum += cdf(lo) + (1.0 - cdf(hi.max(lo + width)));
                per_coordinate.push((0.5 * sum).clamp(0.0, 1.0));
            }
        }
    }
    let value = per_coordinate.iter().copied().fold(0.0, f64::max);
    Ok(TvEstimate { value, bins, per_coordinate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        let s = (1.0 - rho * rho).sqrt();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + s * z;
                x
            })
            .collect()
    }

    #[test]
    fn acf_of_alternating_and_constant_series() {
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = autocovariance(&alt, 1).unwrap().correlations().unwrap();
        assert!((r[1] + 1.0).abs() < 1e-2);
        let c = autocovariance(&[2.0; 50], 3).unwrap();
        assert!(c.zero_variance);
        assert!(c.correlations().is_err());
        assert!(autocovariance(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn acf_iid_and_ar1() {
        let r = autocovariance(&iid(100_000, 1), 1).unwrap().correlations().unwrap();
        assert!(r[1].abs() < 0.01);
        let r = autocovariance(&ar1(100_000, 0.5, 2), 5).unwrap().correlations().unwrap();
        for k in 1..=5 {
            assert!((r[k] - 0.5f64.powi(k as i32)).abs() < 0.02, "lag {k}: {}", r[k]);
        }
    }

    #[test]
    fn ess_examples() {
        let n = 100_000.0;
        let e = ess_batch_means(&iid(100_000, 3)).unwrap();
        assert!((e - n).abs() < 0.1 * n, "{e}");
        let e = ess_batch_means(&ar1(100_000, 0.5, 4)).unwrap();
        assert!((e - n / 3.0).abs() < 0.15 * n / 3.0, "{e}");
        let alt: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(ess_batch_means(&alt).unwrap(), 10_000.0);
        assert!(matches!(ess_batch_means(&[1.0; 200]), Err(Error::UndefinedEss(_))));
        assert!(ess_batch_means(&[1.0; 99]).is_err());
    }

    #[test]
    fn streaming_matches_batch() {
        let cols = vec![iid(5000, 1), ar1(5000, 0.7, 2), vec![3.0; 5000]];
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let out = ChainOutput::from_columns(names.clone(), cols.clone()).unwrap();
        let full = max_iat(&out).unwrap();
        let mut s = StreamingIat::new();
        s.begin(&names, 5000);
        for r in 0..5000 {
            s.record(&[cols[0][r], cols[1][r], cols[2][r]]);
        }
        let st = s.summary().unwrap();
        assert_eq!(st.skipped, vec!["c".to_string()]);
        for (a, b) in full.iat.iter().zip(&st.iat) {
            assert!((a - b).abs() < 1e-9 * a);
        }
        for (i, e) in full.iat.iter().zip(&full.ess) {
            assert!((i * e - 5000.0).abs() < 1e-12 * 5000.0);
        }
    }

    #[test]
    fn max_iat_with_one_correlated_column() {
        let mut cols: Vec<Vec<f64>> = (0..4).map(|k| iid(100_000, 10 + k)).collect();
        let names: Vec<String> = (0..5).map(|k| format!("c{k}")).collect();
        let out = ChainOutput::from_columns(names[..4].to_vec(), cols.clone()).unwrap();
        let s = max_iat(&out).unwrap();
        assert!((s.max_iat - 1.0).abs() < 0.1, "{}", s.max_iat);
        cols.push(ar1(100_000, 0.5, 20));
        let out = ChainOutput::from_columns(names, cols).unwrap();
        let s = max_iat(&out).unwrap();
        assert!((s.max_iat - 3.0).abs() < 0.45, "{}", s.max_iat);
    }

    #[test]
    fn rescale_zero_and_linear() {
        let hat = GlobalParams::new(0.5, 2.0, 1.0).with_mask(crate::models::ParamMask::MU_TAU1);
        let same = Mat::from_rows(&[&[0.5, 2.0], &[0.5, 2.0]]);
        let z = bvm_rescale(&same, &hat, 100).unwrap();
        assert_eq!(z.max_abs_diff(&Mat::zeros(2, 2)), 0.0);
        let x = Mat::from_rows(&[&[0.6, 2.5], &[0.1, 1.0]]);
        let r = bvm_rescale(&x, &hat, 100).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-12 && (r[(1, 1)] + 10.0).abs() < 1e-12);
    }

    fn column(v: Vec<f64>) -> Mat {
        let mut m = Mat::zeros(v.len(), 1);
        for (i, x) in v.into_iter().enumerate() {
            m[(i, 0)] = x;
        }
        m
    }

    #[test]
    fn tv_examples() {
        let a = column(iid(10_000, 5));
        let tv = tv_histogram(&a, &TvReference::Samples(&a), 50).unwrap();
        assert!(tv.value < 0.05);
        let g = TvReference::Gaussian { mean: vec![3.0], cov: Mat::diag(&[1.0]) };
        let tv = tv_histogram(&a, &g, 50).unwrap();
        assert!(tv.value > 0.8, "{}", tv.value);
        let g0 = TvReference::Gaussian { mean: vec![0.0], cov: Mat::diag(&[1.0]) };
        assert!(tv_histogram(&a, &g0, 50).unwrap().value < 0.05);
        assert!(tv_histogram(&a, &g0, 5).is_err());
    }

    #[test]
    fn tv_symmetric_in_sample_sets() {
        let a = column(iid(2000, 6));
        let b = column(ar1(2000, 0.3, 7));
        let ab = tv_histogram(&a, &TvReference::Samples(&b), 20).unwrap().value;
        let ba = tv_histogram(&b, &TvReference::Samples(&a), 20).unwrap().value;
        assert_eq!(ab, ba);
    }
}
