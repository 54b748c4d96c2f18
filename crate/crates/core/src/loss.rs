//! Compressed-spectrogram data term
//!
//! ```text
//! loss(x, H) = || c(STFT(y)) - c(STFT(iSTFT(H * STFT(x)))) ||^2
//! ```
//!
//! where `*` is sub-band convolution and `c` the magnitude compression. The
//! backward pass returns the gradient with respect to the filtered
//! spectrogram `Z = H * X`, from which both the filter gradient and the input
//! gradient follow.

use crate::error::{Error, Result};
use crate::stft::{compress, compress_bin, compress_bin_vjp, Spectrogram, Stft};
use crate::subband::{subband_convolve, subband_convolve_adjoint, subband_filter_gradient, SubbandFilter};

/// `c(STFT(y))`, the fixed side of the data term.
pub fn compressed_target(engine: &Stft, y: &[f64]) -> Result<Spectrogram> {
    Ok(compress(&engine.forward(y)?))
}

#[derive(Debug, Clone)]
pub struct OperatorEval {
    pub loss: f64,
    /// Gradient with respect to `Z = H * X` under the real inner product.
    pub grad_z: Spectrogram,
}

/// Loss only, skipping the backward pass.
pub fn operator_loss(engine: &Stft, x_spec: &Spectrogram, h: &SubbandFilter, target: &Spectrogram) -> Result<f64> {
    let y_hat = forward_model(engine, x_spec, h, target)?;
    Ok(y_hat
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, t)| (t - compress_bin(*a)).norm_sqr())
        .sum())
}

fn forward_model(engine: &Stft, x_spec: &Spectrogram, h: &SubbandFilter, target: &Spectrogram) -> Result<Spectrogram> {
    if !x_spec.same_shape(target) {
        return Err(Error::shape(format!(
            "input spectrogram is {}x{}, target is {}x{}",
            x_spec.frames(),
            x_spec.bins(),
            target.frames(),
            target.bins()
        )));
    }
    let z = subband_convolve(x_spec, h)?;
    let time = engine.inverse(&z)?;
    engine.forward(&time)
}

pub fn operator_loss_and_grad(
    engine: &Stft,
    x_spec: &Spectrogram,
    h: &SubbandFilter,
    target: &Spectrogram,
) -> Result<OperatorEval> {
    let mut g = forward_model(engine, x_spec, h, target)?;
    let mut loss = 0.0;
    for (a, t) in g.data_mut().iter_mut().zip(target.data()) {
        let r = t - compress_bin(*a);
        loss += r.norm_sqr();
        *a = compress_bin_vjp(*a, r * -2.0);
    }
    let grad_time = engine.forward_adjoint(&g)?;
    Ok(OperatorEval {
        loss,
        grad_z: engine.inverse_adjoint(&grad_time, x_spec.frames()),
    })
}

impl OperatorEval {
    pub fn filter_gradient(&self, x_spec: &Spectrogram, taps: usize) -> Result<SubbandFilter> {
        subband_filter_gradient(&self.grad_z, x_spec, taps)
    }

    /// Gradient with respect to the time-domain input `x`.
    pub fn input_gradient(&self, engine: &Stft, h: &SubbandFilter) -> Result<Vec<f64>> {
        engine.forward_adjoint(&subband_convolve_adjoint(&self.grad_z, h)?)
    }
}
