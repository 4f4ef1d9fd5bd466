//! Geometric contribution law and the speedup model built on it.

use crate::error::{Error, Result};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("acceptance rate {alpha} is outside (0, 1]")));
    }
    Ok(())
}

/// `C_1(α, Np) = α / (1 - (1-α)^Np)`, accurate for tiny `α`.
fn first_rank_fraction(alpha: f64, np: usize) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    alpha / -(np as f64 * (-alpha).ln_1p()).exp_m1()
}

/// Expected fraction of accepted states contributed by each rank when ranks
/// are scanned in order and each accepts independently with probability
/// `alpha`: `C_i = α(1-α)^{i-1} / (1 - (1-α)^Np)`.
pub fn geometric_contribution(alpha: f64, np: usize) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if np == 0 {
        return Err(Error::Domain("rank count must be positive".into()));
    }
    let c1 = first_rank_fraction(alpha, np);
    let log_q = (-alpha).ln_1p();
    Ok((0..np)
        .map(|i| {
            if i == 0 {
                c1
            } else if alpha >= 1.0 {
                0.0
            } else {
                c1 * (i as f64 * log_q).exp()
            }
        })
        .collect())
}

/// Least-squares fit of [`geometric_contribution`] to observed per-rank
/// counts, by golden-section search for `α` over `(1e-6, 1)`.
pub fn fit_effective_acceptance(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return Err(Error::DegenerateInput("all contribution counts are zero".into()));
    }
    let np = counts.len();
    if np == 1 {
        return Ok(1.0);
    }
    let observed: Vec<f64> = counts.iter().map(|c| *c as f64 / total as f64).collect();
    let sse = |alpha: f64| -> f64 {
        geometric_contribution(alpha, np)
            .expect("alpha inside (0, 1]")
            .iter()
            .zip(&observed)
            .map(|(c, o)| (c - o) * (c - o))
            .sum()
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (1e-6, 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (sse(x1), sse(x2));
    while hi - lo > 1e-8 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = sse(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = sse(x2);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Predicted speedup over rank counts `1..=np_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupPrediction {
    /// `curve[i]` is the speedup with `i + 1` ranks.
    pub curve: Vec<f64>,
    pub optimal_np: usize,
    /// Optimum of the same model with `C_1` replaced by `1/Np`, i.e. with
    /// every rank contributing equally.
    pub absolute_optimal_np: usize,
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0 + 1
}

/// `S(Np) = (Ts + Tp) / (Ts + C_1(α, Np)·Tp + (Np - 1)·To)`.
pub fn predict_speedup(ts: f64, tp: f64, to: f64, alpha: f64, np_max: usize) -> Result<SpeedupPrediction> {
    check_alpha(alpha)?;
    if !(tp > 0.0) || !(ts >= 0.0) || !(to >= 0.0) || np_max == 0 {
        return Err(Error::Domain(format!(
            "speedup model needs Tp > 0, Ts >= 0, To >= 0, NpMax >= 1 (got {ts}, {tp}, {to}, {np_max})"
        )));
    }
    let model = |c1: f64, np: usize| (ts + tp) / (ts + c1 * tp + (np - 1) as f64 * to);
    let curve: Vec<f64> = (1..=np_max)
        .map(|np| model(first_rank_fraction(alpha, np), np))
        .collect();
    let optimal_np = argmax_first(curve.iter().copied());
    let absolute_optimal_np = argmax_first((1..=np_max).map(|np| model(1.0 / np as f64, np)));
    Ok(SpeedupPrediction {
        curve,
        optimal_np,
        absolute_optimal_np,
    })
}
