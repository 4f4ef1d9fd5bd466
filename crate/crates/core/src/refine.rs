//! Autocorrelation, batch-means IAC, burn-in detection, the two-stage chain
//! refinement and the two-sample Kolmogorov-Smirnov test.
//!
//! Weighted series stand for their expansion (each value repeated `weight`
//! times); nothing here materializes that expansion.

use crate::chainio::SamplePoint;
use crate::error::{Error, Result};
use crate::kernel::ChainRow;

/// Minimum expanded length for an IAC estimate.
pub const MIN_IAC_LENGTH: usize = 16;
/// Refinement never thins below this many points.
pub const MIN_REFINED_POINTS: usize = 8;
/// Half-width, in standard errors of the batch-means estimate, of the band
/// around 1 within which an IAC counts as no autocorrelation.
pub const IAC_NOISE_STANDARD_ERRORS: f64 = 2.0;
/// Half-width, in units of `1/√n`, of the white-noise band for the lag-1
/// autocorrelation of a refined sample.
pub const LAG1_NOISE_BAND: f64 = 3.0;

fn check_weights(series: &[f64], weights: Option<&[u64]>) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != series.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values but {} weights",
                series.len(),
                w.len()
            )));
        }
        if w.contains(&0) {
            return Err(Error::PreconditionViolation("weights must be positive".into()));
        }
    }
    Ok(())
}

fn weight_at(weights: Option<&[u64]>, i: usize) -> u64 {
    weights.map_or(1, |w| w[i])
}

fn expanded_len(series: &[f64], weights: Option<&[u64]>) -> u64 {
    weights.map_or(series.len() as u64, |w| w.iter().sum())
}

/// Mean and sum of squared deviations of the expanded series.
fn weighted_moments(series: &[f64], weights: Option<&[u64]>) -> (f64, f64) {
    let n = expanded_len(series, weights) as f64;
    let mean = series
        .iter()
        .enumerate()
        .map(|(i, x)| weight_at(weights, i) as f64 * x)
        .sum::<f64>()
        / n;
    let ss = series
        .iter()
        .enumerate()
        .map(|(i, x)| weight_at(weights, i) as f64 * (x - mean) * (x - mean))
        .sum::<f64>();
    (mean, ss)
}

/// Autocorrelation of the expanded series at lags `0..=max_lag`.
pub fn acf(series: &[f64], weights: Option<&[u64]>, max_lag: usize) -> Result<Vec<f64>> {
    check_weights(series, weights)?;
    let n = expanded_len(series, weights);
    if n <= max_lag as u64 {
        return Err(Error::TooShort {
            needed: max_lag + 1,
            have: n as usize,
        });
    }
    let (mean, ss) = weighted_moments(series, weights);
    if !(ss > 0.0) {
        return Err(Error::DegenerateSeries);
    }
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for lag in 1..=max_lag as u64 {
        // Two cursors over the runs, the second `lag` expanded steps ahead.
        let (mut a, mut a_left) = (0usize, weight_at(weights, 0));
        let (mut b, mut b_left) = (0usize, weight_at(weights, 0));
        let mut skip = lag;
        while skip > 0 {
            let step = skip.min(b_left);
            b_left -= step;
            skip -= step;
            if b_left == 0 {
                b += 1;
                b_left = if b < dev.len() { weight_at(weights, b) } else { 0 };
            }
        }
        let mut sum = 0.0;
        while b < dev.len() {
            let step = a_left.min(b_left);
            sum += step as f64 * dev[a] * dev[b];
            a_left -= step;
            b_left -= step;
            if a_left == 0 {
                a += 1;
                a_left = weight_at(weights, a.min(dev.len() - 1));
            }
            if b_left == 0 {
                b += 1;
                if b < dev.len() {
                    b_left = weight_at(weights, b);
                }
            }
        }
        out.push(sum / ss);
    }
    Ok(out)
}

/// Integrated autocorrelation by non-overlapping batch means: batch size
/// `b = ⌊√n⌋` over the expanded series, `IAC = b · Var(batch means) /
/// Var(series)`, floored at 1.
pub fn iac_batch_means(series: &[f64], weights: Option<&[u64]>) -> Result<f64> {
    check_weights(series, weights)?;
    let n = expanded_len(series, weights);
    if n < MIN_IAC_LENGTH as u64 {
        return Err(Error::TooShort {
            needed: MIN_IAC_LENGTH,
            have: n as usize,
        });
    }
    let b = (n as f64).sqrt().floor() as u64;
    let m = n / b;
    let used = m * b;

    // Runs of the expanded series truncated to the `used` full-batch prefix.
    let mut runs: Vec<(f64, u64)> = Vec::with_capacity(series.len());
    let mut seen = 0u64;
    for (i, x) in series.iter().enumerate() {
        if seen == used {
            break;
        }
        let w = weight_at(weights, i).min(used - seen);
        runs.push((*x, w));
        seen += w;
    }
    let mean = runs.iter().map(|(x, w)| *w as f64 * x).sum::<f64>() / used as f64;
    let ss = runs
        .iter()
        .map(|(x, w)| *w as f64 * (x - mean) * (x - mean))
        .sum::<f64>();
    let var_series = ss / (used - 1) as f64;
    if !(var_series > 0.0) {
        return Err(Error::DegenerateSeries);
    }

    let mut means = Vec::with_capacity(m as usize);
    let mut acc = 0.0;
    let mut in_batch = 0u64;
    for (x, mut w) in runs {
        let d = x - mean;
        while w > 0 {
            let step = w.min(b - in_batch);
            acc += step as f64 * d;
            in_batch += step;
            w -= step;
            if in_batch == b {
                means.push(acc / b as f64);
                acc = 0.0;
                in_batch = 0;
            }
        }
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    let var_means = if m > 1 {
        means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    Ok((b as f64 * var_means / var_series).max(1.0))
}

/// Whether a batch-means IAC estimate from `n` points is within
/// [`IAC_NOISE_STANDARD_ERRORS`] standard errors of 1. For an uncorrelated
/// series the estimate is a scaled χ² with `m - 1` degrees of freedom over
/// `m = ⌊n / ⌊√n⌋⌋` batches, so its standard error is `√(2 / (m - 1))`.
pub fn iac_consistent_with_one(iac: f64, n: usize) -> bool {
    let b = (n as f64).sqrt().floor().max(1.0);
    let m = (n as f64 / b).floor();
    if m < 2.0 {
        return true;
    }
    iac < 1.0 + IAC_NOISE_STANDARD_ERRORS * (2.0 / (m - 1.0)).sqrt()
}

/// First compact row whose log-density is within `ln(n_verbose)` of the
/// chain maximum.
pub fn burnin_index(logf: &[f64], weights: &[u64]) -> usize {
    if logf.is_empty() {
        return 0;
    }
    let n: u64 = weights.iter().sum();
    let max = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = max - (n.max(1) as f64).ln();
    logf.iter().position(|v| *v >= threshold).unwrap_or(0)
}

/// Decorrelated sample plus how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSample {
    pub points: Vec<SamplePoint>,
    pub stage1_iacs: Vec<f64>,
    pub stage2_iacs: Vec<f64>,
    /// Halvings applied after stage 2 to remove residual lag-1 correlation.
    pub residual_halvings: usize,
    pub burnin_index_compact: usize,
    pub final_size: usize,
    /// Set when refinement stopped early to keep enough points.
    pub exhausted: bool,
    pub warnings: Vec<String>,
}

/// A weighted chain under refinement: rows of the original chain with
/// their surviving multiplicities.
#[derive(Clone)]
struct Weighted<'a> {
    rows: Vec<&'a ChainRow>,
    weights: Vec<u64>,
}

impl<'a> Weighted<'a> {
    fn verbose_len(&self) -> u64 {
        self.weights.iter().sum()
    }

    /// Keeps verbose indices `0, k, 2k, …` and drops rows left with no weight.
    fn thin(&self, k: u64) -> Weighted<'a> {
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        let mut start = 0u64;
        for (row, w) in self.rows.iter().zip(&self.weights) {
            let end = start + w;
            // Multiples of k in [start, end).
            let kept = end.div_ceil(k) - start.div_ceil(k);
            if kept > 0 {
                rows.push(*row);
                weights.push(kept);
            }
            start = end;
        }
        Weighted { rows, weights }
    }

    /// Largest IAC over log-density and every coordinate; `weighted` picks
    /// the expanded (verbose) or unweighted (compact) series. Constant
    /// series carry no autocorrelation information and are skipped.
    fn max_iac(&self, weighted: bool) -> Result<f64> {
        let w = weighted.then_some(self.weights.as_slice());
        let ndim = self.rows[0].coords.len();
        let mut best: f64 = 1.0;
        let mut series: Vec<f64> = self.rows.iter().map(|r| r.log_func).collect();
        for j in 0..=ndim {
            if j > 0 {
                for (s, r) in series.iter_mut().zip(&self.rows) {
                    *s = r.coords[j - 1];
                }
            }
            match iac_batch_means(&series, w) {
                Ok(v) => best = best.max(v),
                Err(Error::DegenerateSeries) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(best)
    }

    /// Largest |lag-1 autocorrelation| of the expanded log-density and
    /// coordinate series.
    fn max_lag1(&self) -> Result<f64> {
        let ndim = self.rows[0].coords.len();
        let mut worst: f64 = 0.0;
        let mut series: Vec<f64> = self.rows.iter().map(|r| r.log_func).collect();
        for j in 0..=ndim {
            if j > 0 {
                for (s, r) in series.iter_mut().zip(&self.rows) {
                    *s = r.coords[j - 1];
                }
            }
            match acf(&series, Some(&self.weights), 1) {
                Ok(v) => worst = worst.max(v[1].abs()),
                Err(Error::DegenerateSeries) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(worst)
    }
}

/// Removes burn-in, then decorrelates in two stages.
///
/// Stage 1 estimates `k = ⌈max IAC⌉` on the compact (unweighted) rows and
/// thins the full Markov chain with stride `k`; stage 2 does the same with
/// IACs of the weight-expanded chain. Each stage repeats until the estimate
/// is consistent with 1 ([`iac_consistent_with_one`]), until it fails to
/// drop below the previous one, or until thinning would leave fewer than
/// [`MIN_REFINED_POINTS`] points. The chain is then halved while any series
/// has a lag-1 autocorrelation outside `±LAG1_NOISE_BAND/√n`. The surviving
/// verbose states form the sample. With `sample_size > 0` the result is then thinned evenly, or
/// repeated cyclically, to exactly that size.
pub fn refine_chain(rows: &[ChainRow], sample_size: i64) -> Result<RefinedSample> {
    let logf: Vec<f64> = rows.iter().map(|r| r.log_func).collect();
    let weights: Vec<u64> = rows.iter().map(|r| r.weight).collect();
    let burnin = burnin_index(&logf, &weights);
    let kept = &rows[burnin..];
    if kept.len() < MIN_IAC_LENGTH {
        return Err(Error::TooShort {
            needed: MIN_IAC_LENGTH,
            have: kept.len(),
        });
    }
    let mut chain = Weighted {
        rows: kept.iter().collect(),
        weights: kept.iter().map(|r| r.weight).collect(),
    };
    let mut out = RefinedSample {
        points: Vec::new(),
        stage1_iacs: Vec::new(),
        stage2_iacs: Vec::new(),
        residual_halvings: 0,
        burnin_index_compact: burnin,
        final_size: 0,
        exhausted: false,
        warnings: Vec::new(),
    };

    for stage in [1, 2] {
        let verbose = stage == 2;
        loop {
            let have = if verbose {
                chain.verbose_len() as usize
            } else {
                chain.rows.len()
            };
            if have < MIN_IAC_LENGTH {
                out.exhausted = true;
                out.warnings.push(format!(
                    "stage {stage} refinement stopped: {have} points are too few to estimate the IAC"
                ));
                break;
            }
            let iac = chain.max_iac(verbose)?;
            let record = if verbose {
                &mut out.stage2_iacs
            } else {
                &mut out.stage1_iacs
            };
            if record.last().is_some_and(|last| iac >= *last) {
                break;
            }
            record.push(iac);
            if iac_consistent_with_one(iac, have) {
                break;
            }
            let k = iac.ceil() as u64;
            let thinned = chain.thin(k);
            if (thinned.verbose_len() as usize) < MIN_REFINED_POINTS {
                out.exhausted = true;
                out.warnings.push(format!(
                    "stage {stage} refinement stopped: thinning by {k} would leave fewer than {MIN_REFINED_POINTS} points"
                ));
                break;
            }
            chain = thinned;
        }
    }

    loop {
        let n = chain.verbose_len();
        if (n as usize) < MIN_IAC_LENGTH || chain.max_lag1()? * (n as f64).sqrt() < LAG1_NOISE_BAND {
            break;
        }
        let halved = chain.thin(2);
        if (halved.verbose_len() as usize) < MIN_REFINED_POINTS {
            out.exhausted = true;
            out.warnings.push(format!(
                "residual autocorrelation remains: halving would leave fewer than {MIN_REFINED_POINTS} points"
            ));
            break;
        }
        chain = halved;
        out.residual_halvings += 1;
    }

    let mut points: Vec<SamplePoint> = Vec::with_capacity(chain.verbose_len() as usize);
    for (row, w) in chain.rows.iter().zip(&chain.weights) {
        for _ in 0..*w {
            points.push(SamplePoint {
                log_func: row.log_func,
                coords: row.coords.clone(),
            });
        }
    }
    if sample_size > 0 {
        let s = sample_size as usize;
        let n = points.len();
        points = if s <= n {
            (0..s).map(|i| points[i * n / s].clone()).collect()
        } else {
            (0..s).map(|i| points[i % n].clone()).collect()
        };
    }
    out.final_size = points.len();
    out.points = points;
    Ok(out)
}

/// [`refine_chain`], except that a chain too short to refine yields an empty
/// sample carrying a warning.
pub fn refine_or_empty(rows: &[ChainRow], sample_size: i64) -> Result<RefinedSample> {
    match refine_chain(rows, sample_size) {
        Err(e @ Error::TooShort { .. }) => Ok(RefinedSample {
            points: Vec::new(),
            stage1_iacs: Vec::new(),
            stage2_iacs: Vec::new(),
            residual_halvings: 0,
            burnin_index_compact: 0,
            final_size: 0,
            exhausted: true,
            warnings: vec![format!("no refined sample: {e}")],
        }),
        other => other,
    }
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series, fast for small λ.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=100u32 {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * c).exp();
            cdf += term;
            if term < 1e-10 * cdf {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100u32 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-10 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let short = a.len().min(b.len());
    if short < 5 {
        return Err(Error::TooShort { needed: 5, have: short });
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::DegenerateInput("NaN in KS sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn expand(series: &[f64], weights: &[u64]) -> Vec<f64> {
        series
            .iter()
            .zip(weights)
            .flat_map(|(x, w)| std::iter::repeat_n(*x, *w as usize))
            .collect()
    }

    /// Textbook ACF on an explicit series.
    fn acf_oracle(x: &[f64], max_lag: usize) -> Vec<f64> {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let den: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        (0..=max_lag)
            .map(|k| (0..n - k).map(|i| (x[i] - mean) * (x[i + k] - mean)).sum::<f64>() / den)
            .collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut s = RngStream::new(seed, 1);
        (0..n).map(|_| s.gaussian()).collect()
    }

    #[test]
    fn acf_lag_zero_and_weighted_example() {
        let r = acf(&[1.0, 4.0], Some(&[2, 3]), 3).unwrap();
        let o = acf_oracle(&[1.0, 1.0, 4.0, 4.0, 4.0], 3);
        assert_eq!(r[0], 1.0);
        for (a, b) in r.iter().zip(&o) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn acf_white_noise_band() {
        let x = noise(10_000, 5);
        let r = acf(&x, None, 10).unwrap();
        let band = 3.0 / (x.len() as f64).sqrt();
        assert!(r[1..].iter().all(|v| v.abs() < band), "{r:?}");
    }

    #[test]
    fn degenerate_and_short_series() {
        assert!(matches!(acf(&[2.0; 20], None, 3), Err(Error::DegenerateSeries)));
        assert!(matches!(
            iac_batch_means(&[2.0; 20], None),
            Err(Error::DegenerateSeries)
        ));
        assert!(matches!(
            iac_batch_means(&[1.0, 2.0], Some(&[7, 8])),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn iac_white_noise() {
        let x = noise(100_000, 11);
        let iac = iac_batch_means(&x, None).unwrap();
        assert!((iac - 1.0).abs() < 0.1, "{iac}");
    }

    #[test]
    fn iac_ar1() {
        let mut s = RngStream::new(3, 1);
        let phi: f64 = 0.9;
        let mut x = 0.0;
        let sd = (1.0 - phi * phi).sqrt();
        let series: Vec<f64> = (0..1_000_000)
            .map(|_| {
                x = phi * x + sd * s.gaussian();
                x
            })
            .collect();
        let iac = iac_batch_means(&series, None).unwrap();
        let exact = (1.0 + phi) / (1.0 - phi);
        assert!((iac / exact - 1.0).abs() < 0.2, "{iac}");
    }

    #[test]
    fn burnin_examples() {
        assert_eq!(burnin_index(&[-100.0, -50.0, -1.0, 0.0, -0.5], &[1; 5]), 2);
        assert_eq!(burnin_index(&[0.0, -100.0, -3.0], &[1, 1, 1]), 0);
        assert_eq!(burnin_index(&[-7.0], &[4]), 0);
    }

    #[test]
    fn ks_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let b = [10.0, 11.0, 12.0, 13.0, 14.0];
        assert_eq!(ks_two_sample(&a, &b).unwrap().statistic, 1.0);
        assert!(matches!(
            ks_two_sample(&[1.0, 2.0, 3.0], &b),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn ks_statistic_small_example() {
        // Below the length precondition of the public test, so check the
        // sup-distance directly on the six pooled points.
        let a = [1.0, 2.0, 3.0];
        let b = [1.5, 2.5, 3.5];
        let ecdf = |s: &[f64], t: f64| s.iter().filter(|v| **v <= t).count() as f64 / s.len() as f64;
        let d = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5]
            .iter()
            .map(|t| (ecdf(&a, *t) - ecdf(&b, *t)).abs())
            .fold(0.0, f64::max);
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        let a5 = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b5 = [1.5, 2.5, 3.5, 4.5, 5.5];
        assert!((ks_two_sample(&a5, &b5).unwrap().statistic - 0.2).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_series_branches_agree() {
        // Both series are valid everywhere; compare across the switch point.
        let direct = |l: f64| {
            2.0 * (1..200)
                .map(|k| {
                    let k = k as f64;
                    (if k as u32 % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * k * k * l * l).exp()
                })
                .sum::<f64>()
        };
        for l in [0.6, 0.8, 1.0, 1.17, 1.19, 1.5, 2.0] {
            assert!((kolmogorov_q(l) - direct(l)).abs() < 1e-9, "{l}");
        }
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-3);
    }

    fn rows_from(values: &[(f64, u64)]) -> Vec<ChainRow> {
        values
            .iter()
            .map(|(x, w)| ChainRow {
                proc_id: 1,
                dr_stage: 0,
                mean_acceptance_rate: 0.5,
                adaptation_measure: 0.0,
                weight: *w,
                log_func: -0.5 * x * x,
                coords: vec![*x],
            })
            .collect()
    }

    #[test]
    fn iid_rows_pass_through_unchanged() {
        let x = noise(5000, 17);
        let rows = rows_from(&x.iter().map(|v| (*v, 1)).collect::<Vec<_>>());
        let r = refine_chain(&rows, -1).unwrap();
        assert_eq!(
            (r.stage1_iacs.len(), r.stage2_iacs.len(), r.residual_halvings),
            (1, 1, 0)
        );
        let kept: Vec<f64> = r.points.iter().map(|p| p.coords[0]).collect();
        assert_eq!(kept, x);
    }

    #[test]
    fn refinement_of_repeated_iid_rows() {
        let x = noise(5000, 21);
        let rows = rows_from(&x.iter().map(|v| (*v, 10)).collect::<Vec<_>>());
        let r = refine_chain(&rows, -1).unwrap();
        // The compact rows are uncorrelated, so stage 1 does not thin.
        assert_eq!(r.stage1_iacs.len(), 1);
        assert!(iac_consistent_with_one(r.stage1_iacs[0], 5000));
        assert!((r.stage2_iacs[0] - 10.0).abs() <= 2.0, "{:?}", r.stage2_iacs);
        // Thinning by about 10 keeps about one point per row.
        assert!(r.final_size > 3500, "{}", r.final_size);
        assert_eq!(r.residual_halvings, 0);
    }

    #[test]
    fn iac_noise_band() {
        // 10000 points give 100 batches and a standard error of 0.142.
        assert!(iac_consistent_with_one(1.28, 10_000));
        assert!(!iac_consistent_with_one(1.29, 10_000));
        assert!(iac_consistent_with_one(5.0, 1));
        let white = noise(40_000, 5);
        let iac = iac_batch_means(&white, None).unwrap();
        assert!(iac_consistent_with_one(iac, white.len()), "{iac}");
    }

    #[test]
    fn residual_lag1_correlation_is_halved_away() {
        // AR(1) with phi = 0.05: IAC 1.11 sits inside the batch-means noise
        // band, lag-1 autocorrelation 0.05 is 7 white-noise units.
        let e = noise(20_000, 8);
        let mut x = Vec::with_capacity(e.len());
        let mut v = 0.0;
        for z in &e {
            v = 0.05 * v + z;
            x.push(v);
        }
        let rows = rows_from(&x.iter().map(|v| (*v, 1)).collect::<Vec<_>>());
        let r = refine_chain(&rows, -1).unwrap();
        assert!(r.residual_halvings >= 1, "{:?}", (&r.stage1_iacs, &r.stage2_iacs));
        let kept: Vec<f64> = r.points.iter().map(|p| p.coords[0]).collect();
        let lag1 = acf(&kept, None, 1).unwrap()[1];
        assert!(lag1.abs() * (kept.len() as f64).sqrt() < LAG1_NOISE_BAND, "{lag1}");
        assert!(r.final_size >= 5000, "{}", r.final_size);
    }

    #[test]
    fn refinement_too_short() {
        let rows = rows_from(&[(0.0, 1), (1.0, 1)]);
        assert!(matches!(refine_chain(&rows, -1), Err(Error::TooShort { .. })));
        assert!(matches!(refine_chain(&[], -1), Err(Error::TooShort { .. })));
    }

    #[test]
    fn sample_size_resampling() {
        let x = noise(400, 8);
        let rows = rows_from(&x.iter().map(|v| (*v, 1)).collect::<Vec<_>>());
        assert_eq!(refine_chain(&rows, 10).unwrap().final_size, 10);
        assert_eq!(refine_chain(&rows, 5000).unwrap().final_size, 5000);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn weighted_estimators_match_expansion(
            data in prop::collection::vec((-5.0f64..5.0, 1u64..30), 4..200),
            lag in 0usize..12,
        ) {
            let series: Vec<f64> = data.iter().map(|p| p.0).collect();
            let weights: Vec<u64> = data.iter().map(|p| p.1).collect();
            let flat = expand(&series, &weights);
            prop_assume!(flat.len() > lag);
            let got = acf(&series, Some(&weights), lag).unwrap();
            let want = acf_oracle(&flat, lag);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-12, "{} vs {}", g, w);
            }
            if flat.len() >= MIN_IAC_LENGTH {
                let g = iac_batch_means(&series, Some(&weights)).unwrap();
                let w = iac_batch_means(&flat, None).unwrap();
                prop_assert!((g - w).abs() < 1e-12 * w.max(1.0));
            }
        }

        #[test]
        fn refinement_is_an_ordered_subsequence(
            data in prop::collection::vec((-3.0f64..3.0, 1u64..6), 16..300),
        ) {
            let rows = rows_from(&data);
            let r = refine_chain(&rows, -1).unwrap();
            let mut it = rows[r.burnin_index_compact..].iter();
            let mut current = it.next();
            for p in &r.points {
                while let Some(row) = current {
                    if row.coords == p.coords && row.log_func == p.log_func {
                        break;
                    }
                    current = it.next();
                }
                prop_assert!(current.is_some());
            }
            prop_assert!(r.stage1_iacs.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(r.stage2_iacs.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(r.stage1_iacs.iter().chain(&r.stage2_iacs).all(|v| *v >= 1.0));
            prop_assert_eq!(r.final_size, r.points.len());
        }

        #[test]
        fn ks_is_symmetric(
            a in prop::collection::vec(-10.0f64..10.0, 5..60),
            b in prop::collection::vec(-10.0f64..10.0, 5..60),
        ) {
            let x = ks_two_sample(&a, &b).unwrap();
            let y = ks_two_sample(&b, &a).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}
