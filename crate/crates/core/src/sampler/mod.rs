//! Guided probability-flow ODE sampling.
//!
//! Each step evaluates the prior score, forms the Tweedie estimate of the
//! clean reference-channel signal, fits the channel operators to it, and
//! moves along the ODE with the score plus a self-normalised likelihood
//! gradient:
//!
//! ```text
//! x0     = x + sigma_n^2 s
//! g      = -zeta sqrt(L) / (sigma_n ||G||) G,    G = d loss / d x0
//! x_next = x - sigma_n (sigma_next - sigma_n) (s + g)
//! ```

mod likelihood;
mod trace;

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use likelihood::{channel_weights, likelihood_and_gradient, ChannelFilter, FcpGradient, Likelihood, LikelihoodEval};
pub use trace::{read_trace, write_trace, StepTrace};

use crate::error::{Error, Result};
use crate::prior::ScorePrior;
use crate::rir::{estimate_rir, AdamConfig, AdamState, RirParams, RirProblem, RirStatus, DEFAULT_BANDS, DEFAULT_TAPS};
use crate::stft::StftConfig;
use crate::waveform::{norm, rescale_to_std, MultiChannelWaveform};
use crate::wpe::{wpe_dereverb, WpeConfig};

pub const DEFAULT_FCP_TAPS: usize = 60;
pub const DEFAULT_FCP_EPSILON: f64 = 1e-3;

/// Guidance norms below this switch guidance off for the step.
const MIN_GUIDANCE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Parametric reference RIR plus FCP for the other channels.
    #[default]
    #[serde(alias = "usd-dps")]
    UsdDps,
    /// Parametric RIRs for every channel.
    #[serde(alias = "mc-buddy")]
    McBuddy,
    /// FCP for every channel, reference included.
    #[serde(alias = "mc-fcp")]
    McFcp,
    /// Prior only.
    Unguided,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::UsdDps => "usd_dps",
            Mode::McBuddy => "mc_buddy",
            Mode::McFcp => "mc_fcp",
            Mode::Unguided => "unguided",
        }
    }

    fn parametric_channels(self, channels: usize) -> usize {
        match self {
            Mode::UsdDps => 1,
            Mode::McBuddy => channels,
            Mode::McFcp | Mode::Unguided => 0,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "usd_dps" => Ok(Mode::UsdDps),
            "mc_buddy" => Ok(Mode::McBuddy),
            "mc_fcp" => Ok(Mode::McFcp),
            "unguided" => Ok(Mode::Unguided),
            _ => Err(Error::invalid(format!(
                "unknown mode {s:?} (expected usd-dps, mc-buddy, mc-fcp or unguided)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
    pub zeta: f64,
    pub lambda_prime: f64,
    pub mode: Mode,
    /// Adam iterations of the RIR fit per sampling step.
    pub n_its: usize,
    pub rescale_std: f64,
    pub seed: u64,
    pub rir_taps: usize,
    pub rir_bands: usize,
    pub adam: AdamConfig,
    pub fcp_taps: usize,
    pub fcp_epsilon: f64,
    pub fcp_gradient: FcpGradient,
    pub stft: StftConfig,
    /// Warm-start WPE; `None` picks the defaults for the channel count.
    pub wpe: Option<WpeConfig>,
    /// Longest accepted input, seconds.
    pub segment_max_secs: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 200,
            sigma_max: 0.5,
            sigma_min: 1e-4,
            rho: 10.0,
            zeta: 0.8,
            lambda_prime: 0.6,
            mode: Mode::UsdDps,
            n_its: 10,
            rescale_std: 0.05,
            seed: 0,
            rir_taps: DEFAULT_TAPS,
            rir_bands: DEFAULT_BANDS,
            adam: AdamConfig::default(),
            fcp_taps: DEFAULT_FCP_TAPS,
            fcp_epsilon: DEFAULT_FCP_EPSILON,
            fcp_gradient: FcpGradient::StopThrough,
            stft: StftConfig::default(),
            wpe: None,
            segment_max_secs: 10.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.zeta >= 0.0) || !self.zeta.is_finite() {
            return Err(Error::invalid(format!("zeta must be non-negative, got {}", self.zeta)));
        }
        if !(self.lambda_prime >= 0.0) || !self.lambda_prime.is_finite() {
            return Err(Error::invalid(format!(
                "lambda_prime must be non-negative, got {}",
                self.lambda_prime
            )));
        }
        if !(self.rescale_std > 0.0) || !self.rescale_std.is_finite() {
            return Err(Error::invalid("rescale_std must be positive"));
        }
        if self.rir_taps == 0 || self.fcp_taps == 0 {
            return Err(Error::invalid("filter lengths must be at least 1"));
        }
        if !(self.fcp_epsilon > 0.0) {
            return Err(Error::invalid("fcp_epsilon must be positive"));
        }
        if !(self.segment_max_secs > 0.0) {
            return Err(Error::invalid("segment_max_secs must be positive"));
        }
        if let Some(w) = &self.wpe {
            w.validate()?;
        }
        self.stft.validate()
    }
}

/// `N + 1` noise levels from `sigma_max` down to `sigma_min`, uniform in
/// `sigma^(1/rho)`.
pub fn sigma_schedule(cfg: &SamplerConfig) -> Vec<f64> {
    let n = cfg.n_steps;
    let inv = 1.0 / cfg.rho;
    let (a, b) = (cfg.sigma_max.powf(inv), cfg.sigma_min.powf(inv));
    let mut s: Vec<f64> = (0..=n)
        .map(|i| (a + i as f64 / n as f64 * (b - a)).powf(cfg.rho))
        .collect();
    s[0] = cfg.sigma_max;
    s[n] = cfg.sigma_min;
    s
}

/// Tweedie estimate `x + sigma^2 score`.
pub fn tweedie(x: &[f64], sigma: f64, score: &[f64]) -> Vec<f64> {
    x.iter().zip(score).map(|(v, s)| v + sigma * sigma * s).collect()
}

/// One Euler step `x - sigma (sigma_next - sigma) (score + g)`.
pub fn guided_step(x: &[f64], sigma: f64, sigma_next: f64, score: &[f64], g: &[f64]) -> Vec<f64> {
    let h = sigma * (sigma_next - sigma);
    x.iter()
        .zip(score)
        .zip(g)
        .map(|((v, s), gv)| v - h * (s + gv))
        .collect()
}

/// `zeta sqrt(L) / (tau ||G||)`, or 0 when `||G||` vanishes.
pub fn guidance_scale(zeta: f64, len: usize, tau: f64, g_norm: f64) -> f64 {
    if g_norm < MIN_GUIDANCE_NORM || zeta == 0.0 {
        0.0
    } else {
        zeta * (len as f64).sqrt() / (tau * g_norm)
    }
}

#[derive(Debug, Clone)]
pub struct SamplerOutput {
    /// Final Tweedie estimate of the clean reference-channel signal.
    pub estimate: Vec<f64>,
    /// ODE state at `sigma_min`.
    pub final_state: Vec<f64>,
    /// ODE state at `sigma_max`.
    pub initial_state: Vec<f64>,
    pub traces: Vec<StepTrace>,
    /// Parametric RIRs at the end of the run (reference first).
    pub rirs: Vec<RirParams>,
}

fn check_finite(v: &[f64], step: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            what: what.to_string(),
        })
    }
}

struct ChannelFit {
    params: RirParams,
    problem: RirProblem,
    adam: AdamState,
}

/// Runs the sampler on a mixture. `y` channel 0 is the reference.
pub fn dereverb<P: ScorePrior + ?Sized>(
    y: &MultiChannelWaveform,
    prior: &mut P,
    cfg: &SamplerConfig,
) -> Result<SamplerOutput> {
    cfg.validate()?;
    let len = y.len();
    let max_len = (cfg.segment_max_secs * y.sample_rate() as f64).floor() as usize;
    if len > max_len {
        return Err(Error::invalid(format!(
            "input is {:.2} s, longer than the {:.2} s segment limit",
            y.duration_secs(),
            cfg.segment_max_secs
        )));
    }
    if len < cfg.stft.fft_size {
        return Err(Error::invalid(format!("input of {len} samples is shorter than one STFT frame")));
    }
    let chans = y.num_channels();
    let guided = cfg.mode != Mode::Unguided;

    // warm start
    let x_init = if guided {
        let wcfg = cfg.wpe.unwrap_or(WpeConfig {
            stft: cfg.stft,
            ..WpeConfig::for_channels(chans)
        });
        if len >= wcfg.min_len() {
            wpe_dereverb(y, &wcfg)?.channel(0).to_vec()
        } else {
            warn!("input too short for WPE warm start; using the mixture");
            y.channel(0).to_vec()
        }
    } else {
        vec![0.0; len]
    };
    let sigmas = sigma_schedule(cfg);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(0);
    let mut x: Vec<f64> = x_init
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            v + sigmas[0] * z
        })
        .collect();
    let initial_state = x.clone();

    let likelihood = if guided {
        Some(Likelihood::new(cfg.stft, y, cfg.fcp_taps, cfg.fcp_epsilon, cfg.fcp_gradient)?)
    } else {
        None
    };
    let mut fits = (0..cfg.mode.parametric_channels(chans))
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64 + 1);
            let params = RirParams::init(cfg.stft, cfg.rir_bands, cfg.rir_taps, &mut rng)?;
            let n_params = 2 * cfg.rir_bands + params.phase.len();
            Ok(ChannelFit {
                problem: RirProblem::new(cfg.stft, &x_init, y.channel(c), cfg.rir_taps, c == 0)?,
                adam: AdamState::new(cfg.adam, n_params, 2 * cfg.rir_bands),
                params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = channel_weights(cfg.mode, chans, cfg.lambda_prime);

    let mut traces = Vec::with_capacity(cfg.n_steps);
    info!(
        "sampling {} steps, mode {}, {} channels, {} samples",
        cfg.n_steps,
        cfg.mode.name(),
        chans,
        len
    );
    for step in 0..cfg.n_steps {
        let (sigma, sigma_next) = (sigmas[step], sigmas[step + 1]);
        let score = prior.score(&x, sigma).map_err(|source| Error::Prior { step, sigma, source })?;
        if score.len() != len {
            return Err(Error::Prior {
                step,
                sigma,
                source: crate::prior::PriorError::LengthMismatch {
                    expected: len,
                    got: score.len(),
                },
            });
        }
        check_finite(&score, step, "prior score")?;
        let mut trace = StepTrace {
            step,
            sigma,
            score_norm: norm(&score),
            guidance_norm: 0.0,
            loss_ref: None,
            loss_nonref: None,
            rir_objective: None,
        };
        let g = match &likelihood {
            None => vec![0.0; len],
            Some(like) => {
                let x0 = rescale_to_std(&tweedie(&x, sigma, &score), cfg.rescale_std)
                    .map_err(|e| Error::NonFinite { step, what: format!("clean estimate: {e}") })?;
                check_finite(&x0, step, "clean estimate")?;
                let mut objective = 0.0;
                for fit in &mut fits {
                    fit.problem.set_estimate(&x0)?;
                    let res = estimate_rir(&fit.params, &fit.problem, cfg.n_its, &mut fit.adam)?;
                    if let RirStatus::NonFiniteGradient { iteration } = res.status {
                        warn!("step {step}: RIR fit stopped at iteration {iteration}");
                    }
                    objective += res.final_objective();
                    fit.params = res.params;
                }
                if !fits.is_empty() {
                    trace.rir_objective = Some(objective);
                }
                let rirs: Vec<_> = fits.iter().map(|f| f.params.to_filter()).collect();
                let filters = likelihood::channel_filters(cfg.mode, chans, &rirs)?;
                let eval = like.evaluate(&x0, &filters, &weights)?;
                check_finite(&eval.grad, step, "likelihood gradient")?;
                let gn = norm(&eval.grad);
                let scale = guidance_scale(cfg.zeta, len, sigma, gn);
                trace.guidance_norm = gn;
                trace.loss_ref = Some(eval.loss_ref);
                trace.loss_nonref = Some(eval.loss_nonref);
                eval.grad.iter().map(|v| -scale * v).collect()
            }
        };
        x = guided_step(&x, sigma, sigma_next, &score, &g);
        check_finite(&x, step, "sampler state")?;
        debug!(
            "step {step}: sigma {sigma:.3e}, |s| {:.3e}, |G| {:.3e}, loss_ref {:?}",
            trace.score_norm, trace.guidance_norm, trace.loss_ref
        );
        traces.push(trace);
    }
    let sigma = sigmas[cfg.n_steps];
    let score = prior
        .score(&x, sigma)
        .map_err(|source| Error::Prior {
            step: cfg.n_steps,
            sigma,
            source,
        })?;
    let estimate = tweedie(&x, sigma, &score);
    check_finite(&estimate, cfg.n_steps, "final estimate")?;
    Ok(SamplerOutput {
        estimate,
        final_state: x,
        initial_state,
        traces,
        rirs: fits.into_iter().map(|f| f.params).collect(),
    })
}
