//! Clean-speech score priors `s(x, sigma) ~ grad log p_sigma(x)`.
//!
//! Three providers: an analytic Gaussian (for verifying the sampler against
//! closed-form flows), an oracle denoiser that knows the clean signal (for
//! testing the guidance machinery with a perfect prior), and a remote client
//! speaking the USDP wire protocol to an external neural denoiser.

mod gaussian;
pub mod protocol;
mod remote;

use thiserror::Error;

pub use gaussian::{Covariance, GaussianPrior};
pub use remote::{Endpoint, RemoteScore, DEFAULT_TIMEOUT, ENDPOINT_ENV};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("length mismatch: expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("timed out talking to {endpoint}")]
    Timeout { endpoint: String },
    #[error("connection to {endpoint} refused")]
    ConnectionRefused { endpoint: String },
    #[error("transport error with {endpoint}: {source}")]
    Transport {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("protocol error at byte {offset}: {msg}")]
    Protocol { offset: usize, msg: String },
    #[error("score server reported: {0}")]
    Server(String),
    #[error("invalid endpoint {0:?}")]
    Endpoint(String),
}

/// A score model. Providers are reused sequentially within one sampling run.
pub trait ScorePrior {
    fn score(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError>;

    fn name(&self) -> &str;
}

impl<P: ScorePrior + ?Sized> ScorePrior for Box<P> {
    fn score(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        (**self).score(x, sigma)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<(), PriorError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(PriorError::InvalidSigma(sigma))
    }
}

/// Score that makes the Tweedie estimate equal a known clean signal:
/// `score = (x_clean - x) / sigma^2`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    clean: Vec<f64>,
}

impl OracleDenoiser {
    pub fn new(clean: Vec<f64>) -> Self {
        Self { clean }
    }

    pub fn clean(&self) -> &[f64] {
        &self.clean
    }
}

impl ScorePrior for OracleDenoiser {
    fn score(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        check_sigma(sigma)?;
        if x.len() != self.clean.len() {
            return Err(PriorError::LengthMismatch {
                expected: self.clean.len(),
                got: x.len(),
            });
        }
        let s2 = sigma * sigma;
        Ok(x.iter().zip(&self.clean).map(|(v, c)| (c - v) / s2).collect())
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_tweedie_is_exact() {
        let clean = vec![0.1, -0.2, 0.3, 0.0];
        let mut p = OracleDenoiser::new(clean.clone());
        let x = vec![1.0, 2.0, -3.0, 0.5];
        for sigma in [1e-3, 0.1, 0.5] {
            let s = p.score(&x, sigma).unwrap();
            for ((xv, sv), c) in x.iter().zip(&s).zip(&clean) {
                assert!((xv + sigma * sigma * sv - c).abs() < 1e-12);
            }
        }
        assert!(p.score(&clean, 0.3).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn oracle_scales_as_inverse_sigma_squared() {
        let mut p = OracleDenoiser::new(vec![0.5; 8]);
        let x = vec![-0.25; 8];
        let a = p.score(&x, 0.2).unwrap();
        let b = p.score(&x, 0.4).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u / 4.0 - v).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_bad_input() {
        let mut p = OracleDenoiser::new(vec![0.0; 4]);
        assert!(matches!(p.score(&[0.0; 3], 1.0), Err(PriorError::LengthMismatch { .. })));
        assert!(matches!(p.score(&[0.0; 4], 0.0), Err(PriorError::InvalidSigma(_))));
    }
}
