//! Empirical distances between sample sets and constraint / fit statistics.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure_finite, Error, Result};
use crate::geometry::ConvexBody;
use crate::linalg::{dot, norm2};
use crate::rng::{stream, Purpose};
pub use crate::samplers::{BatchMetadata, SampleBatch};

/// Distance to the body above which a sample counts as outside.
pub const OUTSIDE_TOL: f64 = 1e-12;

fn sorted(a: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    ensure_finite(a, "sample")?;
    let mut s = a.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Empirical quantile of a sorted sample at level `u`, interpolating between
/// order statistics placed at levels `(i + 1/2)/m`.
fn quantile(s: &[f64], u: f64) -> f64 {
    let m = s.len();
    let pos = (u * m as f64 - 0.5).clamp(0.0, (m - 1) as f64);
    let i = pos.floor() as usize;
    let t = pos - i as f64;
    if i + 1 < m {
        s[i] + t * (s[i + 1] - s[i])
    } else {
        s[i]
    }
}

fn w2_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        let n = a.len() as f64;
        return (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt();
    }
    // ∫ (F_a^{-1} - F_b^{-1})^2 over the merged breakpoints i/n_a, j/n_b
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut sum = 0.0;
    while i < na && j < nb {
        let ua = (i + 1) as f64 / na as f64;
        let ub = (j + 1) as f64 / nb as f64;
        let next = ua.min(ub);
        sum += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if ua <= next {
            i += 1;
        }
        if ub <= next {
            j += 1;
        }
    }
    sum.max(0.0).sqrt()
}

/// Empirical 2-Wasserstein distance between two 1-D samples: the sorted
/// coupling for equal sizes, the exact quantile-function integral otherwise.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(w2_sorted(&sorted(a)?, &sorted(b)?))
}

fn check_pair(a: &SampleBatch, b: &SampleBatch) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "batches have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty sample batch"));
    }
    Ok(())
}

/// Per-coordinate [`w2_1d`].
pub fn w2_per_coordinate(a: &SampleBatch, b: &SampleBatch) -> Result<Vec<f64>> {
    check_pair(a, b)?;
    (0..a.dim())
        .map(|j| w2_1d(&a.coordinate(j), &b.coordinate(j)))
        .collect()
}

/// `n` uniformly random unit directions in `R^dim`, reproducible from `seed`.
pub fn random_directions(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, 0, Purpose::Projections);
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = norm2(&v);
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Mean of [`w2_1d`] over the projections onto the given directions.
pub fn sliced_w2_with_directions(a: &SampleBatch, b: &SampleBatch, directions: &[Vec<f64>]) -> Result<f64> {
    check_pair(a, b)?;
    if directions.is_empty() {
        return Err(Error::invalid("need at least one direction"));
    }
    if directions.iter().any(|d| d.len() != a.dim()) {
        return Err(Error::invalid("direction dimension differs from the samples"));
    }
    let per: Vec<f64> = directions
        .par_iter()
        .map(|dir| {
            let pa: Vec<f64> = a.rows().map(|r| dot(r, dir)).collect();
            let pb: Vec<f64> = b.rows().map(|r| dot(r, dir)).collect();
            w2_1d(&pa, &pb)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Sliced 2-Wasserstein distance over `n_projections` random directions.
pub fn sliced_w2(a: &SampleBatch, b: &SampleBatch, n_projections: usize, seed: u64) -> Result<f64> {
    sliced_w2_with_directions(a, b, &random_directions(a.dim(), n_projections, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub fraction_outside: f64,
    pub mean_dist: f64,
    pub max_dist: f64,
}

/// How far samples fall outside the body.
pub fn violation_stats(body: &ConvexBody, batch: &SampleBatch) -> Result<ViolationStats> {
    if body.dim() != batch.dim() {
        return Err(Error::invalid("body and samples differ in dimension"));
    }
    let dists: Vec<f64> = batch.rows().map(|r| body.distance(r)).collect::<Result<_>>()?;
    let n = dists.len().max(1) as f64;
    Ok(ViolationStats {
        fraction_outside: dists.iter().filter(|&&d| d > OUTSIDE_TOL).count() as f64 / n,
        mean_dist: dists.iter().sum::<f64>() / n,
        max_dist: dists.iter().copied().fold(0.0, f64::max),
    })
}

/// Mean squared residual of one coefficient vector.
pub fn mse(x: &[f64], data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if x.len() != data.dim() {
        return Err(Error::invalid("coefficients and features differ in dimension"));
    }
    let total: f64 = data
        .features()
        .iter()
        .zip(data.responses())
        .map(|(a, y)| {
            let r = y - dot(a, x);
            r * r
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// [`mse`] through the sufficient statistics `(AᵀA, Aᵀy, yᵀy)`, so one
/// evaluation costs `O(d^2)` instead of `O(n d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MseEvaluator {
    gram: Vec<Vec<f64>>,
    moment: Vec<f64>,
    yy: f64,
    n: f64,
}

impl MseEvaluator {
    pub fn new(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        let d = data.dim();
        let mut gram = vec![vec![0.0; d]; d];
        let mut moment = vec![0.0; d];
        let mut yy = 0.0;
        for (a, &y) in data.features().iter().zip(data.responses()) {
            yy += y * y;
            for i in 0..d {
                moment[i] += a[i] * y;
                for k in 0..d {
                    gram[i][k] += a[i] * a[k];
                }
            }
        }
        Ok(MseEvaluator {
            gram,
            moment,
            yy,
            n: data.len() as f64,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.moment.len() {
            return Err(Error::invalid("coefficients and features differ in dimension"));
        }
        let quad: f64 = self.gram.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
        Ok(((self.yy - 2.0 * dot(&self.moment, x) + quad) / self.n).max(0.0))
    }
}

/// [`mse`] of every recorded iterate.
pub fn mse_series(batch: &SampleBatch, data: &Dataset) -> Result<Vec<f64>> {
    let eval = MseEvaluator::new(data)?;
    batch.rows().map(|x| eval.eval(x)).collect()
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(series: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, &v) in series.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= series[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

fn freedman_diaconis_bins(pooled: &[f64], lo: f64, hi: f64) -> usize {
    let mut s = pooled.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let bins = if iqr > 0.0 {
        let h = 2.0 * iqr / (n as f64).cbrt();
        ((hi - lo) / h).ceil()
    } else {
        (n as f64).log2().ceil() + 1.0
    };
    (bins as usize).clamp(2, 10_000)
}

/// Histogram estimate of the total-variation distance. Bins default to
/// Freedman–Diaconis on the pooled sample, the range to the pooled extent;
/// values outside the range count in the edge bins.
pub fn tv_histogram(a: &[f64], b: &[f64], n_bins: Option<usize>, range: Option<(f64, f64)>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    ensure_finite(a, "sample")?;
    ensure_finite(b, "sample")?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (mut lo, mut hi) = match range {
        Some((lo, hi)) if lo < hi => (lo, hi),
        Some((lo, hi)) => return Err(Error::invalid(format!("empty range [{lo}, {hi}]"))),
        None => (
            pooled.iter().copied().fold(f64::INFINITY, f64::min),
            pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    };
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let bins = match n_bins {
        Some(0) => return Err(Error::invalid("need at least one bin")),
        Some(n) => n,
        None => freedman_diaconis_bins(&pooled, lo, hi),
    };
    let hist = |s: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in s {
            let i = ((x - lo) / (hi - lo) * bins as f64).floor();
            h[(i.max(0.0) as usize).min(bins - 1)] += 1.0;
        }
        let n = s.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    Ok(0.5 * ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum::<f64>())
}

/// Kolmogorov–Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let s = sorted(sample)?;
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0, |acc, (i, &x)| {
        let c = cdf(x);
        acc.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n)
    }))
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Unbiased sample variance.
pub fn variance(a: &[f64]) -> f64 {
    let m = mean(a);
    a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (a.len() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> BatchMetadata {
        BatchMetadata {
            algorithm: "test".into(),
            seed: 0,
            chain: 0,
        }
    }

    #[test]
    fn w2_examples() {
        assert_eq!(w2_1d(&[0.3, 0.1], &[0.1, 0.3]).unwrap(), 0.0);
        assert_eq!(w2_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!((w2_1d(&[0.0, 1.0], &[2.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(w2_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn w2_unequal_sizes_reduce_to_quantiles() {
        // {0, 1} vs the same distribution sampled twice as often
        let d = w2_1d(&[0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(d < 0.3);
        assert_eq!(w2_1d(&[2.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn sliced_translation() {
        let a = SampleBatch::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]], meta()).unwrap();
        let b = SampleBatch::from_rows(&[vec![0.5, 0.0], vec![1.5, 2.0]], meta()).unwrap();
        let d = sliced_w2_with_directions(&a, &b, &[vec![1.0, 0.0]]).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        assert_eq!(sliced_w2(&a, &a, 10, 1).unwrap(), 0.0);
    }

    #[test]
    fn violation_examples() {
        let ball = ConvexBody::l2_ball(2, 1.0).unwrap();
        let b = SampleBatch::from_rows(&[vec![2.0, 0.0]], meta()).unwrap();
        let v = violation_stats(&ball, &b).unwrap();
        assert_eq!((v.fraction_outside, v.mean_dist, v.max_dist), (1.0, 1.0, 1.0));
        let b = SampleBatch::from_rows(&[vec![0.0, 0.0], vec![1.5, 0.0]], meta()).unwrap();
        let v = violation_stats(&ball, &b).unwrap();
        assert_eq!((v.fraction_outside, v.mean_dist), (0.5, 0.25));
    }

    #[test]
    fn tv_examples() {
        let a = [0.0, 0.0, 1.0, 1.0];
        let b = [0.0, 1.0, 1.0, 1.0];
        assert_eq!(tv_histogram(&a, &b, Some(2), Some((-0.5, 1.5))).unwrap(), 0.25);
        assert_eq!(tv_histogram(&a, &a, None, None).unwrap(), 0.0);
        assert_eq!(tv_histogram(&[0.0, 0.1], &[5.0, 5.2], None, None).unwrap(), 1.0);
        assert!(tv_histogram(&[], &a, None, None).is_err());
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }
}
