//! Multivariate Gaussian prior over mixing coefficients, and generation by
//! sampling it and applying one linear synthesis step.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageSignal, TimeGrid};
use crate::dictionary::{reconstruct, synthesize_basis, MixingVector, SpectralDictionary};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::training::MixingMatrix;

/// Absolute variance floor used in place of `trace / K` when the raw
/// covariance is identically zero.
pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    #[default]
    Full,
    Diagonal,
}

impl CovarianceMode {
    pub(crate) fn code(self) -> u8 {
        match self {
            CovarianceMode::Full => 0,
            CovarianceMode::Diagonal => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CovarianceMode::Full),
            1 => Some(CovarianceMode::Diagonal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    /// Lower-triangular `L` with `L L^T = covariance`.
    pub chol: Array2<f64>,
    pub shrinkage: f64,
    pub mode: CovarianceMode,
}

impl GaussianPrior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Degenerate prior whose every sample is `mean`.
    pub fn point_mass(mean: Vec<f64>) -> Self {
        let k = mean.len();
        Self {
            mean: Array1::from(mean),
            covariance: Array2::zeros((k, k)),
            chol: Array2::zeros((k, k)),
            shrinkage: 0.0,
            mode: CovarianceMode::Full,
        }
    }
}

/// Cholesky factorization `A = L L^T` of a symmetric positive-definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::Shape(format!("cholesky of a {n}x{m} matrix")));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

pub fn fit_gaussian(w: &MixingMatrix, shrinkage: f64) -> Result<GaussianPrior> {
    fit_gaussian_with(w, shrinkage, CovarianceMode::Full)
}

/// Mean and population covariance of the rows of `w`, with shrinkage
/// `shrinkage * (trace / K) * I` added before factorization.
pub fn fit_gaussian_with(w: &MixingMatrix, shrinkage: f64, mode: CovarianceMode) -> Result<GaussianPrior> {
    let rows = &w.rows;
    let (n, k) = rows.dim();
    if n == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot fit a prior to a {n}x{k} mixing matrix"
        )));
    }
    if !(shrinkage >= 0.0) || !shrinkage.is_finite() {
        return Err(Error::InvalidArgument(format!("shrinkage {shrinkage} must be non-negative")));
    }
    let mean = rows.mean_axis(Axis(0)).expect("non-empty");
    let centered = rows - &mean;
    let mut cov = centered.t().dot(&centered) / n as f64;
    if mode == CovarianceMode::Diagonal {
        let diag = cov.diag().to_owned();
        cov = Array2::from_diag(&diag);
    }
    // exact symmetry
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    let trace = cov.diag().sum();
    let scale = if trace > 0.0 { trace / k as f64 } else { VARIANCE_FLOOR };
    for i in 0..k {
        cov[[i, i]] += shrinkage * scale;
    }
    let chol = cholesky(&cov).map_err(|e| Error::PriorFit {
        shrinkage,
        source: Box::new(e),
    })?;
    Ok(GaussianPrior {
        mean,
        covariance: cov,
        chol,
        shrinkage,
        mode,
    })
}

/// `mean + L z` for a caller-supplied standard-normal vector `z`.
pub fn sample_with_normals(prior: &GaussianPrior, z: &[f64]) -> Result<MixingVector> {
    if z.len() != prior.dim() {
        return Err(Error::Shape(format!(
            "normal vector of length {} for a {}-dimensional prior",
            z.len(),
            prior.dim()
        )));
    }
    let zv = ArrayView1::from(z);
    let w = &prior.mean + &prior.chol.dot(&zv);
    Ok(MixingVector(w.to_vec()))
}

/// Draws `count` mixing vectors; normals come from [`SeededRng::standard_normal`].
pub fn sample_prior(prior: &GaussianPrior, seed: u64, count: usize) -> Vec<MixingVector> {
    let mut rng = SeededRng::new(seed);
    let k = prior.dim();
    let mut z = vec![0.0; k];
    (0..count)
        .map(|_| {
            z.iter_mut().for_each(|v| *v = rng.standard_normal());
            sample_with_normals(prior, &z).expect("dimension matches")
        })
        .collect()
}

/// Samples the prior and synthesizes one image per draw with the fixed basis.
pub fn generate(
    prior: &GaussianPrior,
    dict: &SpectralDictionary,
    grid: &TimeGrid,
    seed: u64,
    count: usize,
) -> Result<Vec<ImageSignal>> {
    if prior.dim() != dict.atoms() {
        return Err(Error::Shape(format!(
            "prior has dimension {} but the dictionary has {} atoms",
            prior.dim(),
            dict.atoms()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let basis = synthesize_basis(dict, grid);
    sample_prior(prior, seed, count)
        .iter()
        .map(|w| reconstruct(&basis, w))
        .collect()
}

/// Fraction of samples outside `[-1, 1]` across all signals.
pub fn out_of_range_fraction(signals: &[ImageSignal]) -> f64 {
    let total: usize = signals.iter().map(ImageSignal::len).sum();
    if total == 0 {
        return 0.0;
    }
    let outside = signals
        .iter()
        .flat_map(|s| s.values.iter())
        .filter(|v| v.abs() > 1.0)
        .count();
    outside as f64 / total as f64
}
