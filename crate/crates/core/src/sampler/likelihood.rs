//! Multi-channel compressed-spectrogram likelihood and its gradient with
//! respect to the clean estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcp::{fcp_solve_many, fcp_weights, FcpSolution, FcpWeights};
use crate::loss::{compressed_target, operator_loss_and_grad};
use crate::stft::{Spectrogram, Stft, StftConfig};
use crate::subband::{subband_convolve_adjoint, SubbandFilter};
use crate::waveform::MultiChannelWaveform;

use super::Mode;

/// How the gradient treats filters estimated by FCP from the clean estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FcpGradient {
    /// Filters are constants of the gradient.
    #[default]
    StopThrough,
    /// Differentiates through the per-frequency normal equations.
    Exact,
}

/// Where one channel's operator comes from.
#[derive(Debug, Clone)]
pub enum ChannelFilter {
    /// A filter fixed for this evaluation (the parametric RIR model).
    Given(SubbandFilter),
    /// Estimated by FCP from the clean estimate at evaluation time.
    Fcp,
}

/// The mixture side of the likelihood, prepared once per run.
#[derive(Debug, Clone)]
pub struct Likelihood {
    engine: Stft,
    spectra: Vec<Spectrogram>,
    targets: Vec<Spectrogram>,
    weights: FcpWeights,
    fcp_taps: usize,
    fcp_gradient: FcpGradient,
    len: usize,
}

#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub loss: f64,
    /// Unweighted data term of channel 0.
    pub loss_ref: f64,
    /// Unweighted sum of the data terms of the other channels.
    pub loss_nonref: f64,
    /// Gradient with respect to the time-domain clean estimate.
    pub grad: Vec<f64>,
}

impl Likelihood {
    pub fn new(
        config: StftConfig,
        y: &MultiChannelWaveform,
        fcp_taps: usize,
        fcp_epsilon: f64,
        fcp_gradient: FcpGradient,
    ) -> Result<Self> {
        if fcp_taps == 0 {
            return Err(Error::invalid("FCP needs at least one tap"));
        }
        let engine = Stft::new(config)?;
        let spectra = y
            .channels()
            .iter()
            .map(|c| engine.forward(c))
            .collect::<Result<Vec<_>>>()?;
        let targets = y
            .channels()
            .iter()
            .map(|c| compressed_target(&engine, c))
            .collect::<Result<Vec<_>>>()?;
        let weights = fcp_weights(&spectra, fcp_epsilon)?;
        Ok(Self {
            engine,
            spectra,
            targets,
            weights,
            fcp_taps,
            fcp_gradient,
            len: y.len(),
        })
    }

    pub fn num_channels(&self) -> usize {
        self.spectra.len()
    }

    pub fn engine(&self) -> &Stft {
        &self.engine
    }

    /// Replaces FCP entries by the filters FCP estimates from `x0_hat`.
    pub fn freeze(&self, x0_hat: &[f64], filters: &[ChannelFilter]) -> Result<Vec<ChannelFilter>> {
        let x_spec = self.engine.forward(x0_hat)?;
        let mut solved = self.solve_fcp(&x_spec, filters)?;
        Ok(filters
            .iter()
            .zip(&mut solved)
            .map(|(f, sol)| match sol.take() {
                Some(sol) => ChannelFilter::Given(sol.filter),
                None => f.clone(),
            })
            .collect())
    }

    /// FCP solutions for the channels marked `Fcp`, sharing one factorization.
    fn solve_fcp(&self, x_spec: &Spectrogram, filters: &[ChannelFilter]) -> Result<Vec<Option<FcpSolution>>> {
        let chans: Vec<usize> = (0..filters.len().min(self.spectra.len()))
            .filter(|&c| matches!(filters[c], ChannelFilter::Fcp))
            .collect();
        let ys: Vec<&Spectrogram> = chans.iter().map(|&c| &self.spectra[c]).collect();
        let mut out: Vec<Option<FcpSolution>> = filters.iter().map(|_| None).collect();
        if ys.is_empty() {
            return Ok(out);
        }
        for (c, sol) in chans.into_iter().zip(fcp_solve_many(&ys, x_spec, &self.weights, self.fcp_taps)?) {
            out[c] = Some(sol);
        }
        Ok(out)
    }

    /// `sum_c w_c ||c(Y_c) - c(A_c(x0_hat))||^2` and its gradient.
    pub fn evaluate(&self, x0_hat: &[f64], filters: &[ChannelFilter], channel_weights: &[f64]) -> Result<LikelihoodEval> {
        let chans = self.num_channels();
        if x0_hat.len() != self.len {
            return Err(Error::shape(format!(
                "clean estimate has {} samples, mixture has {}",
                x0_hat.len(),
                self.len
            )));
        }
        if filters.len() != chans || channel_weights.len() != chans {
            return Err(Error::shape(format!(
                "{chans} channels but {} filters and {} weights",
                filters.len(),
                channel_weights.len()
            )));
        }
        let x_spec = self.engine.forward(x0_hat)?;
        let mut grad_spec = Spectrogram::zeros(x_spec.frames(), self.len, *self.engine.config());
        let (mut loss, mut loss_ref, mut loss_nonref) = (0.0, 0.0, 0.0);
        let mut solved = self.solve_fcp(&x_spec, filters)?;
        for c in 0..chans {
            let w = channel_weights[c];
            let (h, solution) = match &filters[c] {
                ChannelFilter::Given(h) => (h.clone(), None),
                ChannelFilter::Fcp => {
                    let sol = solved[c].take().expect("every FCP channel is solved");
                    (sol.filter.clone(), Some(sol))
                }
            };
            let eval = operator_loss_and_grad(&self.engine, &x_spec, &h, &self.targets[c])?;
            if c == 0 {
                loss_ref += eval.loss;
            } else {
                loss_nonref += eval.loss;
            }
            loss += w * eval.loss;
            if w == 0.0 {
                continue;
            }
            let mut g = subband_convolve_adjoint(&eval.grad_z, &h)?;
            if let (Some(sol), FcpGradient::Exact) = (&solution, self.fcp_gradient) {
                let gh = eval.filter_gradient(&x_spec, h.taps())?;
                let through = sol.backprop(&gh, &self.spectra[c], &x_spec, &self.weights)?;
                for (a, b) in g.data_mut().iter_mut().zip(through.data()) {
                    *a += b;
                }
            }
            for (a, b) in grad_spec.data_mut().iter_mut().zip(g.data()) {
                *a += b * w;
            }
        }
        Ok(LikelihoodEval {
            loss,
            loss_ref,
            loss_nonref,
            grad: self.engine.forward_adjoint(&grad_spec)?,
        })
    }
}

/// Per-channel weights of each mode: `[1, lambda', ..]` for USD-DPS, all
/// ones for MC-BUDDy and MC-FCP, reference only for unguided runs (whose
/// guidance is off anyway).
pub fn channel_weights(mode: Mode, channels: usize, lambda_prime: f64) -> Vec<f64> {
    (0..channels)
        .map(|c| match mode {
            Mode::UsdDps if c > 0 => lambda_prime,
            Mode::Unguided if c > 0 => 0.0,
            _ => 1.0,
        })
        .collect()
}

/// One-shot likelihood for a mode, with `rirs` holding the parametric
/// filters the mode needs: the reference filter for USD-DPS, one per
/// channel for MC-BUDDy, none for MC-FCP.
pub fn likelihood_and_gradient(
    x0_hat: &[f64],
    y: &MultiChannelWaveform,
    rirs: &[SubbandFilter],
    mode: Mode,
    lambda_prime: f64,
    fcp_taps: usize,
    fcp_gradient: FcpGradient,
) -> Result<LikelihoodEval> {
    let config = rirs.first().map_or_else(StftConfig::default, |h| *h.config());
    let like = Likelihood::new(config, y, fcp_taps, super::DEFAULT_FCP_EPSILON, fcp_gradient)?;
    let chans = y.num_channels();
    let filters = channel_filters(mode, chans, rirs)?;
    like.evaluate(x0_hat, &filters, &channel_weights(mode, chans, lambda_prime))
}

pub(crate) fn channel_filters(mode: Mode, chans: usize, rirs: &[SubbandFilter]) -> Result<Vec<ChannelFilter>> {
    let need = match mode {
        Mode::UsdDps | Mode::Unguided => 1,
        Mode::McBuddy => chans,
        Mode::McFcp => 0,
    };
    if rirs.len() != need {
        return Err(Error::shape(format!(
            "{mode:?} on {chans} channels needs {need} parametric filters, got {}",
            rirs.len()
        )));
    }
    Ok((0..chans)
        .map(|c| match mode {
            Mode::McBuddy => ChannelFilter::Given(rirs[c].clone()),
            Mode::UsdDps | Mode::Unguided if c == 0 => ChannelFilter::Given(rirs[0].clone()),
            _ => ChannelFilter::Fcp,
        })
        .collect())
}
