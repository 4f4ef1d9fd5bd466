//! Multivariate-normal proposal, full-history covariance adaptation and the
//! Hellinger-based measure of how much each adaptation changed the proposal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::spec::SpecSet;

/// Relative ridge added to the sample covariance before factorization.
pub const COVARIANCE_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalState {
    pub ndim: usize,
    /// Lower Cholesky factor of the unscaled proposal covariance.
    pub chol: DMatrix<f64>,
    /// Multiplies the proposal standard deviation.
    pub scale: f64,
    /// Number of adaptation attempts that passed the sample-size gate.
    pub version: u64,
    /// Upper bound on the total variation distance moved by the last update.
    pub last_adaptation_measure: f64,
}

impl ProposalState {
    pub fn new(chol: DMatrix<f64>, scale: f64) -> Self {
        ProposalState {
            ndim: chol.nrows(),
            chol,
            scale,
            version: 0,
            last_adaptation_measure: 0.0,
        }
    }

    /// Diagonal proposal from `proposalStartStd` scaled by `scaleFactor`.
    pub fn from_spec(spec: &SpecSet) -> Self {
        let diag = DVector::from_column_slice(&spec.proposal_start_std);
        ProposalState::new(DMatrix::from_diagonal(&diag), spec.scale_factor)
    }

    /// Covariance of the proposal actually sampled: `scale² L Lᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose() * (self.scale * self.scale)
    }

    /// Draws `center + scale · Π s_k · L z`, `z` being `ndim` standard normal
    /// variates taken from `stream` in index order and `s_1..s_stage` the
    /// delayed-rejection factors. Consumes exactly `ndim` Gaussians.
    pub fn propose(&self, center: &[f64], dr_stage: usize, dr_scales: &[f64], stream: &mut RngStream) -> Vec<f64> {
        debug_assert!(dr_stage <= dr_scales.len());
        let effective = dr_scales[..dr_stage.min(dr_scales.len())]
            .iter()
            .fold(self.scale, |acc, s| acc * s);
        let mut z = vec![0.0; self.ndim];
        stream.fill_gaussian(&mut z);
        (0..self.ndim)
            .map(|i| {
                let lz: f64 = (0..=i).map(|j| self.chol[(i, j)] * z[j]).sum();
                center[i] + effective * lz
            })
            .collect()
    }
}

/// Weighted running mean and scatter matrix of the chain history.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMoments {
    pub total_weight: u64,
    pub mean: Vec<f64>,
    /// Sum of weighted outer products about the running mean.
    pub scatter: DMatrix<f64>,
}

impl RunningMoments {
    pub fn new(ndim: usize) -> Self {
        RunningMoments {
            total_weight: 0,
            mean: vec![0.0; ndim],
            scatter: DMatrix::zeros(ndim, ndim),
        }
    }

    /// Adds `point` with multiplicity `weight`.
    pub fn update(&mut self, point: &[f64], weight: u64) {
        assert!(weight >= 1, "weights are positive");
        let old = self.total_weight as f64;
        let w = weight as f64;
        self.total_weight += weight;
        let total = self.total_weight as f64;
        let delta: Vec<f64> = point.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * (w / total);
        }
        let c = w * old / total;
        let n = delta.len();
        for i in 0..n {
            for j in 0..=i {
                let v = self.scatter[(i, j)] + c * delta[i] * delta[j];
                self.scatter[(i, j)] = v;
                self.scatter[(j, i)] = v;
            }
        }
    }

    /// Unbiased sample covariance; `None` below two units of weight.
    pub fn sample_covariance(&self) -> Option<DMatrix<f64>> {
        (self.total_weight >= 2).then(|| &self.scatter / (self.total_weight - 1) as f64)
    }
}

/// Outcome of one adaptation attempt.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub state: ProposalState,
    /// Set when the sample covariance could not be factorized.
    pub warning: Option<String>,
    /// False when the sample-size gate left the proposal untouched.
    pub attempted: bool,
}

/// Re-estimates the proposal covariance from the full weighted history.
///
/// With fewer than `ndim + 1` units of weight the state is returned as is.
/// A failed factorization keeps the previous proposal and only bumps the
/// version. When `targetAcceptanceRate` is set the scale moves by
/// `sqrt(recent / target)`, clamped to a factor of two either way.
pub fn adapt_proposal(
    state: &ProposalState,
    moments: &RunningMoments,
    spec: &SpecSet,
    recent_acceptance_rate: f64,
) -> Adaptation {
    let d = state.ndim;
    if moments.total_weight < d as u64 + 1 {
        return Adaptation {
            state: state.clone(),
            warning: None,
            attempted: false,
        };
    }
    let mut cov = moments.sample_covariance().expect("total weight is at least two");
    let mean_diag = cov.diagonal().mean();
    for i in 0..d {
        cov[(i, i)] += COVARIANCE_RIDGE * mean_diag;
    }
    let chol = cov.cholesky().map(|c| c.unpack());
    let Some(chol) = chol.filter(|l| l.diagonal().iter().all(|v| v.is_finite() && *v > 0.0)) else {
        let mut kept = state.clone();
        kept.version += 1;
        return Adaptation {
            state: kept,
            warning: Some(format!(
                "proposal adaptation {} skipped: sample covariance is not positive definite",
                state.version + 1
            )),
            attempted: true,
        };
    };

    let scale = match spec.target_acceptance_rate {
        Some(target) => {
            let factor = (recent_acceptance_rate / target).sqrt();
            (state.scale * factor).clamp(0.5 * state.scale, 2.0 * state.scale)
        }
        None => state.scale,
    };

    let zero = vec![0.0; d];
    let measure = hellinger_squared_mvn(&zero, &(&state.chol * state.scale), &zero, &(&chol * scale))
        .and_then(tvd_upper_bound)
        .unwrap_or(1.0);

    Adaptation {
        state: ProposalState {
            ndim: d,
            chol,
            scale,
            version: state.version + 1,
            last_adaptation_measure: measure,
        },
        warning: None,
        attempted: true,
    }
}

fn log_det_from_chol(chol: &DMatrix<f64>) -> f64 {
    2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Squared Hellinger distance between `N(mean1, L1 L1ᵀ)` and
/// `N(mean2, L2 L2ᵀ)`, evaluated through log-determinants.
pub fn hellinger_squared_mvn(mean1: &[f64], chol1: &DMatrix<f64>, mean2: &[f64], chol2: &DMatrix<f64>) -> Result<f64> {
    let cov1 = chol1 * chol1.transpose();
    let cov2 = chol2 * chol2.transpose();
    let avg = (cov1 + cov2) * 0.5;
    let avg_chol = avg.cholesky().ok_or(Error::SingularMatrix)?.unpack();

    let delta = DVector::from_iterator(mean1.len(), mean1.iter().zip(mean2).map(|(a, b)| a - b));
    let z = avg_chol.solve_lower_triangular(&delta).ok_or(Error::SingularMatrix)?;
    let log_bc = 0.25 * log_det_from_chol(chol1) + 0.25 * log_det_from_chol(chol2)
        - 0.5 * log_det_from_chol(&avg_chol)
        - 0.125 * z.norm_squared();
    Ok((-log_bc.exp_m1()).clamp(0.0, 1.0))
}

/// `H √(1 - H²/4)`, the Hellinger upper bound on total variation distance.
pub fn tvd_upper_bound(hellinger_squared: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&hellinger_squared) {
        return Err(Error::Domain(format!(
            "squared Hellinger distance {hellinger_squared} is outside [0, 1]"
        )));
    }
    Ok(hellinger_squared.sqrt() * (1.0 - hellinger_squared / 4.0).sqrt())
}
