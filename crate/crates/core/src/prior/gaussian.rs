use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{check_sigma, PriorError, ScorePrior};

/// Covariance given by its eigenvalues in a basis where it is diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Eigenbasis is the standard basis.
    Diagonal(Vec<f64>),
    /// Eigenbasis is the DFT; `eigenvalues[k]` must equal `eigenvalues[L - k]`
    /// for the covariance to be real.
    Circulant(Vec<f64>),
}

impl Covariance {
    fn eigenvalues(&self) -> &[f64] {
        match self {
            Covariance::Diagonal(v) | Covariance::Circulant(v) => v,
        }
    }
}

/// `N(mean, cov)` smoothed by isotropic noise of level `sigma`.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    cov: Covariance,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self, PriorError> {
        let eig = cov.eigenvalues();
        if eig.len() != mean.len() {
            return Err(PriorError::LengthMismatch {
                expected: mean.len(),
                got: eig.len(),
            });
        }
        if eig.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(PriorError::Server(
                "covariance eigenvalues must be finite and non-negative".into(),
            ));
        }
        if let Covariance::Circulant(v) = &cov {
            let n = v.len();
            if (1..n).any(|k| (v[k] - v[n - k]).abs() > 1e-12 * v[k].abs().max(1.0)) {
                return Err(PriorError::Server(
                    "circulant eigenvalues must be symmetric for a real covariance".into(),
                ));
            }
        }
        Ok(Self { mean, cov })
    }

    /// Zero-mean, identity covariance.
    pub fn standard(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            cov: Covariance::Diagonal(vec![1.0; len]),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    /// Applies `f(eigenvalue)` as a spectral multiplier to `v`.
    fn apply_spectral(&self, v: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        match &self.cov {
            Covariance::Diagonal(eig) => v.iter().zip(eig).map(|(x, l)| x * f(*l)).collect(),
            Covariance::Circulant(eig) => {
                let n = v.len();
                let mut planner = FftPlanner::new();
                let mut buf: Vec<Complex64> = v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
                planner.plan_fft_forward(n).process(&mut buf);
                for (b, l) in buf.iter_mut().zip(eig) {
                    *b *= f(*l);
                }
                planner.plan_fft_inverse(n).process(&mut buf);
                buf.iter().map(|b| b.re / n as f64).collect()
            }
        }
    }

    /// Closed-form endpoint of the probability-flow ODE
    /// `dx/dsigma = -sigma * score(x, sigma)` from `sigma_from` to `sigma_to`.
    ///
    /// In the eigenbasis `(x - mean) / sqrt(lambda + sigma^2)` is conserved.
    pub fn flow_endpoint(&self, x: &[f64], sigma_from: f64, sigma_to: f64) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let (a2, b2) = (sigma_from * sigma_from, sigma_to * sigma_to);
        let moved = self.apply_spectral(&centered, |l| ((l + b2) / (l + a2)).sqrt());
        moved.iter().zip(&self.mean).map(|(a, m)| a + m).collect()
    }
}

impl ScorePrior for GaussianPrior {
    /// `-(cov + sigma^2 I)^{-1} (x - mean)`.
    fn score(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        check_sigma(sigma)?;
        if x.len() != self.mean.len() {
            return Err(PriorError::LengthMismatch {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        let s2 = sigma * sigma;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .apply_spectral(&centered, |l| -1.0 / (l + s2))
            .into_iter()
            .collect())
    }

    fn name(&self) -> &str {
        "gaussian"
    }
}
