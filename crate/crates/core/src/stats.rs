//! Moments, the D'Agostino–Pearson K² omnibus normality test, and histograms.

use crate::error::{Error, Result};
use crate::sampler::EpochError;

/// Smallest sample the kurtosis transform is valid for.
pub const MIN_NORMALITY_N: usize = 20;

/// Default rejection threshold.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Population moments. Skewness `g1` and excess kurtosis `g2` are `None` when the variance is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub skew: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

pub fn moments(v: &[f64]) -> Result<MomentSummary> {
    if v.is_empty() {
        return Err(Error::Empty("moment input"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("moment input".into()));
    }
    let n = v.len() as f64;
    let mean = compensated_sum(v.iter().copied()) / n;
    let m2 = compensated_sum(v.iter().map(|x| (x - mean).powi(2))) / n;
    let (skew, excess_kurtosis) = if m2 > 0.0 {
        let m3 = compensated_sum(v.iter().map(|x| (x - mean).powi(3))) / n;
        let m4 = compensated_sum(v.iter().map(|x| (x - mean).powi(4))) / n;
        (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2) - 3.0))
    } else {
        (None, None)
    };
    Ok(MomentSummary {
        n: v.len(),
        mean,
        var: m2,
        skew,
        excess_kurtosis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalityResult {
    pub k2: f64,
    pub z_skew: f64,
    pub z_kurtosis: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Normal approximation of the sample skewness.
fn skew_z(g1: f64, n: f64) -> f64 {
    let y = g1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let ya = y / alpha;
    delta * (ya + (ya * ya + 1.0).sqrt()).ln()
}

/// Anscombe–Glynn normal approximation of the (non-excess) sample kurtosis `b2`.
fn kurtosis_z(b2: f64, n: f64) -> Result<f64> {
    let expected = 3.0 * (n - 1.0) / (n + 1.0);
    let var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - expected) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0
        + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return Err(Error::Degenerate("kurtosis transform"));
    }
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    Ok((term1 - term2) / (2.0 / (9.0 * a)).sqrt())
}

/// Omnibus K² test; `p = exp(−K²/2)` is the χ²(2) survival function.
pub fn dagostino_k2(v: &[f64], alpha: f64) -> Result<NormalityResult> {
    if v.len() < MIN_NORMALITY_N {
        return Err(Error::SampleTooSmall {
            given: v.len(),
            needed: MIN_NORMALITY_N,
        });
    }
    let m = moments(v)?;
    let (Some(g1), Some(g2)) = (m.skew, m.excess_kurtosis) else {
        return Err(Error::Degenerate("zero variance"));
    };
    let n = v.len() as f64;
    let z_skew = skew_z(g1, n);
    let z_kurtosis = kurtosis_z(g2 + 3.0, n)?;
    let k2 = z_skew * z_skew + z_kurtosis * z_kurtosis;
    if !k2.is_finite() {
        return Err(Error::Degenerate("non-finite K² statistic"));
    }
    // Keep p strictly positive when exp underflows.
    let p_value = (-0.5 * k2).exp().max(f64::MIN_POSITIVE);
    Ok(NormalityResult {
        k2,
        z_skew,
        z_kurtosis,
        p_value,
        pass: p_value > alpha,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

/// Equal-width bins over `[min, max]`; the last bin includes its right edge.
/// Constant input is widened to a small interval around the value.
pub fn histogram(v: &[f64], bins: usize) -> Result<Histogram> {
    if v.is_empty() {
        return Err(Error::Empty("histogram input"));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let half = 1e-6 * lo.abs().max(1.0);
        lo -= half;
        hi += half;
    }
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
    bin_edges.push(hi);
    let mut counts = vec![0u64; bins];
    for &x in v {
        let idx = (((x - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        bin_edges,
        counts,
        total: v.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerStatus {
    Tested(NormalityResult),
    /// Fewer than [`MIN_NORMALITY_N`] elements.
    Skipped,
    /// Zero variance; counted as a failure.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormality {
    pub layer: String,
    pub n: usize,
    pub status: LayerStatus,
}

impl LayerNormality {
    pub fn eligible(&self) -> bool {
        !matches!(self.status, LayerStatus::Skipped)
    }

    pub fn passed(&self) -> bool {
        matches!(self.status, LayerStatus::Tested(r) if r.pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityReport {
    pub alpha: f64,
    pub layers: Vec<LayerNormality>,
}

impl NormalityReport {
    pub fn eligible(&self) -> usize {
        self.layers.iter().filter(|l| l.eligible()).count()
    }

    pub fn passed(&self) -> usize {
        self.layers.iter().filter(|l| l.passed()).count()
    }

    /// Passing fraction of eligible layers; `None` when every layer was skipped.
    pub fn pass_rate(&self) -> Option<f64> {
        let eligible = self.eligible();
        (eligible > 0).then(|| self.passed() as f64 / eligible as f64)
    }
}

/// Runs the normality test on every named layer slice.
pub fn normality_by_layer<'a>(
    layers: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    alpha: f64,
) -> Result<NormalityReport> {
    let layers = layers
        .into_iter()
        .map(|(name, values)| {
            let status = match dagostino_k2(values, alpha) {
                Ok(r) => LayerStatus::Tested(r),
                Err(Error::SampleTooSmall { .. }) => LayerStatus::Skipped,
                Err(Error::Degenerate(_)) => LayerStatus::Degenerate,
                Err(e) => return Err(e),
            };
            Ok(LayerNormality {
                layer: name.to_string(),
                n: values.len(),
                status,
            })
        })
        .collect::<Result<_>>()?;
    Ok(NormalityReport { alpha, layers })
}

pub fn layer_normality_report(err: &EpochError, alpha: f64) -> Result<NormalityReport> {
    normality_by_layer(err.layers(), alpha)
}
