//! Gaussian and kernel density models fit in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// Smallest covariance eigenvalue kept after a fit.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Mvn {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Mvn {
    /// Eigenvalues below `floor` are raised to it before factoring.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, floor: f64) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        if cov.iter().any(|v| !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        let cov = floor_eigenvalues((&cov + cov.transpose()) * 0.5, floor);
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::OracleFailure("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { mean, cov, chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let z = self.chol.l().solve_lower_triangular(&diff).expect("cholesky factor is nonsingular");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + z.norm_squared())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.chol.l() * z
    }
}

fn floor_eigenvalues(cov: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return cov;
    }
    let lambdas = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let rebuilt = q * DMatrix::from_diagonal(&lambdas) * q.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub enum DensityModel {
    Gaussian { mvn: Mvn, fit_count: usize },
    Kde { support: Vec<DVector<f64>>, bandwidth: f64 },
}

impl DensityModel {
    pub fn standard_normal(d: usize) -> Self {
        let mvn = Mvn::new(DVector::zeros(d), DMatrix::identity(d, d), COVARIANCE_FLOOR)
            .expect("identity covariance is positive definite");
        DensityModel::Gaussian { mvn, fit_count: 0 }
    }

    pub fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let mvn = Mvn::new(DVector::from_vec(mean), cov, COVARIANCE_FLOOR)?;
        Ok(DensityModel::Gaussian { mvn, fit_count: 0 })
    }

    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Gaussian { mvn, .. } => mvn.dim(),
            DensityModel::Kde { support, .. } => support[0].len(),
        }
    }

    pub fn fit_count(&self) -> usize {
        match self {
            DensityModel::Gaussian { fit_count, .. } => *fit_count,
            DensityModel::Kde { support, .. } => support.len(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&Mvn> {
        match self {
            DensityModel::Gaussian { mvn, .. } => Some(mvn),
            DensityModel::Kde { .. } => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DensityModel::Gaussian { .. } => "gaussian_mle",
            DensityModel::Kde { .. } => "kde",
        }
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptyDataset)?;
    let d = first.len();
    if d == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data point"));
        }
    }
    Ok(d)
}

/// MLE mean and covariance, plus `ridge * I`, floored at [`COVARIANCE_FLOOR`].
pub fn fit_gaussian(points: &[Vec<f64>], ridge: f64) -> Result<DensityModel> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::Config(format!("ridge {ridge} must be finite and nonnegative")));
    }
    let d = check_points(points)?;
    let m = points.len() as f64;
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= m;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let c = DVector::from_column_slice(p) - &mean;
        cov += &c * c.transpose();
    }
    cov /= m;
    cov += DMatrix::identity(d, d) * ridge;
    let mvn = Mvn::new(mean, cov, COVARIANCE_FLOOR)?;
    Ok(DensityModel::Gaussian { mvn, fit_count: points.len() })
}

/// Scott's rule on the pooled per-coordinate standard deviation.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> Result<f64> {
    let d = check_points(points)?;
    let m = points.len();
    let var = if m > 1 {
        let mut total = 0.0;
        for j in 0..d {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / m as f64;
            total += points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        }
        total / d as f64
    } else {
        0.0
    };
    let h = var.sqrt() * (m as f64).powf(-1.0 / (d as f64 + 4.0));
    Ok(h.max(COVARIANCE_FLOOR.sqrt()))
}

/// Isotropic Gaussian-kernel density; `bandwidth` defaults to Scott's rule.
pub fn fit_kde(points: &[Vec<f64>], bandwidth: Option<f64>) -> Result<DensityModel> {
    check_points(points)?;
    let bandwidth = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Config(format!("kde bandwidth {h} must be positive"))),
        None => scott_bandwidth(points)?,
    };
    Ok(DensityModel::Kde {
        support: points.iter().map(|p| DVector::from_column_slice(p)).collect(),
        bandwidth,
    })
}

/// Log density at `x` in nats.
pub fn log_density(model: &DensityModel, x: &[f64]) -> Result<f64> {
    let d = model.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("evaluation point"));
    }
    let x = DVector::from_column_slice(x);
    match model {
        DensityModel::Gaussian { mvn, .. } => Ok(mvn.log_pdf(&x)),
        DensityModel::Kde { support, bandwidth } => {
            let h2 = bandwidth * bandwidth;
            let terms: Vec<f64> = support.iter().map(|s| -(&x - s).norm_squared() / (2.0 * h2)).collect();
            let norm = (support.len() as f64).ln() + 0.5 * d as f64 * (LN_2PI + h2.ln());
            Ok(log_sum_exp(&terms) - norm)
        }
    }
}
