//! Objective functions: the natural logarithm of an unnormalized target
//! density, plus the built-in test targets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Log-density of the target. May return `-inf` outside the support.
///
/// Implementations must be deterministic for a fixed point. `&mut self` lets
/// stateful evaluators (external processes, foreign callbacks) keep their
/// connection between calls.
pub trait Objective: Send {
    fn ndim(&self) -> usize;
    fn log_density(&mut self, point: &[f64]) -> Result<f64>;
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn ndim(&self) -> usize {
        (**self).ndim()
    }
    fn log_density(&mut self, point: &[f64]) -> Result<f64> {
        (**self).log_density(point)
    }
}

/// Adapts a closure into an [`Objective`]. This is the callback registration
/// surface used by foreign-language bindings.
pub struct FnObjective<F> {
    ndim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: FnMut(&[f64]) -> std::result::Result<f64, String> + Send,
{
    pub fn new(ndim: usize, f: F) -> Self {
        FnObjective { ndim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&[f64]) -> std::result::Result<f64, String> + Send,
{
    fn ndim(&self) -> usize {
        self.ndim
    }
    fn log_density(&mut self, point: &[f64]) -> Result<f64> {
        (self.f)(point).map_err(|message| Error::Objective {
            point: point.to_vec(),
            message,
        })
    }
}

/// `-ln(f_H(x, y) + 0.1)` with `f_H` the Himmelblau function, so the four
/// minima of `f_H` become equal maxima of the target.
pub fn himmelblau_log_density(x: f64, y: f64) -> f64 {
    let a = x * x + y - 11.0;
    let b = x + y * y - 7.0;
    -(a * a + b * b + 0.1).ln()
}

/// The four maxima of the modified Himmelblau target, to three decimals.
pub const HIMMELBLAU_MODES: [[f64; 2]; 4] = [[3.0, 2.0], [-2.805, 3.131], [-3.779, -3.283], [3.584, -1.848]];

#[derive(Debug, Clone)]
pub struct Himmelblau;

impl Objective for Himmelblau {
    fn ndim(&self) -> usize {
        2
    }
    fn log_density(&mut self, p: &[f64]) -> Result<f64> {
        Ok(himmelblau_log_density(p[0], p[1]))
    }
}

/// Multivariate normal log-density with the normalization constant included.
#[derive(Debug, Clone)]
pub struct MultivariateNormal {
    mean: Vec<f64>,
    /// Lower Cholesky factor of the covariance.
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl MultivariateNormal {
    pub fn standard(ndim: usize) -> Self {
        MultivariateNormal::from_parts(vec![0.0; ndim], DMatrix::identity(ndim, ndim))
    }

    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mean has {d} entries but covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let chol = covariance.cholesky().ok_or(Error::SingularMatrix)?.unpack();
        Ok(MultivariateNormal::from_parts(mean, chol))
    }

    fn from_parts(mean: Vec<f64>, chol: DMatrix<f64>) -> Self {
        let d = mean.len() as f64;
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det);
        MultivariateNormal { mean, chol, log_norm }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_pdf(&self, point: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.mean.len(), point.iter().zip(&self.mean).map(|(x, m)| x - m));
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

impl Objective for MultivariateNormal {
    fn ndim(&self) -> usize {
        self.mean.len()
    }
    fn log_density(&mut self, point: &[f64]) -> Result<f64> {
        Ok(self.log_pdf(point))
    }
}

/// Resolves a built-in target by name. `mvnCustom` requires `params` holding
/// the mean followed by the row-major covariance.
pub fn builtin_target(name: &str, ndim: usize, params: Option<&[f64]>) -> Result<Box<dyn Objective>> {
    match name.to_ascii_lowercase().as_str() {
        "himmelblau" => {
            if ndim != 2 {
                return Err(Error::DimensionMismatch(format!(
                    "himmelblau is defined for ndim = 2, requested {ndim}"
                )));
            }
            Ok(Box::new(Himmelblau))
        }
        "mvnstandard" | "mvn" => Ok(Box::new(MultivariateNormal::standard(ndim))),
        "mvncustom" => {
            let params = params.unwrap_or(&[]);
            if params.len() != ndim + ndim * ndim {
                return Err(Error::DimensionMismatch(format!(
                    "mvnCustom needs {} parameters for ndim = {ndim}, got {}",
                    ndim + ndim * ndim,
                    params.len()
                )));
            }
            let mean = params[..ndim].to_vec();
            let cov = DMatrix::from_row_slice(ndim, ndim, &params[ndim..]);
            Ok(Box::new(MultivariateNormal::new(mean, cov)?))
        }
        _ => Err(Error::UnknownTarget(name.to_string())),
    }
}
