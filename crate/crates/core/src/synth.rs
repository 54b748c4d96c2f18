//! Synthetic reverberant scenes: parametric RIRs, mixtures and a seeded
//! speech-like test signal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rir::{band_layout, settle_phase, RirParams};
use crate::stft::StftConfig;
use crate::subband::FilterTransform;
use crate::waveform::{rescale_to_std, MultiChannelWaveform};

/// Tail energy relative to the direct path at this T60, for the dense kind.
const REFERENCE_T60: f64 = 0.6;

/// Relative jitter applied to the subband decay rates.
const DECAY_JITTER: f64 = 0.2;

/// Phase-settling iterations for subband RIRs.
const SETTLE_ITERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RirKind {
    /// The sub-band model itself: per-band exponential decays, settled
    /// minimum phase.
    ExpDecaySubband,
    /// Unit direct path plus an exponentially decaying Gaussian tail.
    #[default]
    DenseGaussianTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub n_channels: usize,
    /// Reverberation time in seconds.
    pub t60: f64,
    /// Per-channel direct-path delay in samples; empty means all zero.
    #[serde(default)]
    pub direct_delays: Vec<usize>,
    /// Noise level relative to the reverberant signal; `None` is noiseless.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rir_kind: RirKind,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    /// Band count of the subband kind.
    #[serde(default = "default_bands")]
    pub bands: usize,
    #[serde(default)]
    pub stft: StftConfig,
}

fn default_sample_rate() -> u32 {
    16000
}

fn default_bands() -> usize {
    8
}

impl SceneSpec {
    pub fn new(n_channels: usize, t60: f64, snr_db: Option<f64>, seed: u64) -> Self {
        Self {
            n_channels,
            t60,
            direct_delays: Vec::new(),
            snr_db,
            seed,
            rir_kind: RirKind::default(),
            sample_rate: default_sample_rate(),
            bands: default_bands(),
            stft: StftConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(Error::invalid("scene needs at least one channel"));
        }
        if !(0.05..=2.0).contains(&self.t60) {
            return Err(Error::invalid(format!("t60 must lie in [0.05, 2.0] s, got {}", self.t60)));
        }
        if !self.direct_delays.is_empty() {
            if self.direct_delays.len() != self.n_channels {
                return Err(Error::invalid(format!(
                    "{} direct delays for {} channels",
                    self.direct_delays.len(),
                    self.n_channels
                )));
            }
            if self.direct_delays[0] != 0 {
                return Err(Error::invalid("the reference channel must have zero delay"));
            }
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::invalid("snr_db must be finite (omit it for a noiseless scene)"));
            }
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        self.stft.validate()
    }

    pub fn delay(&self, channel: usize) -> usize {
        self.direct_delays.get(channel).copied().unwrap_or(0)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Per-frame decay rate that gives this T60: 60 dB over `t60` seconds.
    pub fn nominal_decay(&self) -> f64 {
        3.0 * 10f64.ln() * self.stft.hop_size as f64 / self.sample_rate as f64 / self.t60
    }

    /// Taps of the subband kind: enough frames to cover one T60.
    pub fn subband_taps(&self) -> usize {
        (self.t60 * self.sample_rate as f64 / self.stft.hop_size as f64).ceil() as usize
    }
}

/// Ground-truth parameters of the subband kind for one channel: unit band
/// weights, decays jittered around the nominal rate, minimum phase settled
/// with the direct path in front.
pub fn sample_rir_params(spec: &SceneSpec, channel: usize) -> Result<RirParams> {
    spec.validate()?;
    let mut rng = spec.rng(1 + channel as u64);
    let bins = spec.stft.num_bins();
    let centers = band_layout(bins, spec.bands)?;
    let nominal = spec.nominal_decay();
    let decays = (0..spec.bands)
        .map(|_| nominal * (1.0 + rng.random_range(-DECAY_JITTER..DECAY_JITTER)))
        .collect();
    let taps = spec.subband_taps();
    let pi = std::f64::consts::PI;
    let phase = (0..taps * bins).map(|_| rng.random_range(-pi..pi)).collect();
    let mut p = RirParams::new(vec![0.0; spec.bands], decays, phase, centers, taps, spec.stft)?;
    settle_phase(&mut p, true, SETTLE_ITERS, 0.0)?;
    Ok(p)
}

/// Time-domain RIR of one channel, direct path at the channel delay.
pub fn sample_rir(spec: &SceneSpec, channel: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if channel >= spec.n_channels {
        return Err(Error::invalid(format!("channel {channel} of a {}-channel scene", spec.n_channels)));
    }
    let delay = spec.delay(channel);
    let body = match spec.rir_kind {
        RirKind::ExpDecaySubband => {
            let p = sample_rir_params(spec, channel)?;
            FilterTransform::new(spec.stft)?.inverse(&p.to_filter())
        }
        RirKind::DenseGaussianTail => dense_tail(spec, channel),
    };
    let mut h = vec![0.0; delay];
    h.extend(body);
    Ok(h)
}

fn dense_tail(spec: &SceneSpec, channel: usize) -> Vec<f64> {
    let mut rng = spec.rng(1 + channel as u64);
    let sr = spec.sample_rate as f64;
    let len = (spec.t60 * sr).ceil() as usize + 1;
    let rate = 3.0 * 10f64.ln() / (spec.t60 * sr);
    let env: Vec<f64> = (0..len).map(|t| (-rate * t as f64).exp()).collect();
    let env_energy: f64 = env[1..].iter().map(|e| e * e).sum();
    let tail_energy = (spec.t60 / REFERENCE_T60).powi(4);
    let gain = (tail_energy / env_energy).sqrt();
    let mut h: Vec<f64> = env
        .iter()
        .map(|e| gain * e * rng.sample::<f64, _>(StandardNormal))
        .collect();
    h[0] = 1.0;
    h
}

/// Full linear convolution truncated to `x.len()` samples.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let (fwd, inv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    let load = |v: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (z, s) in b.iter_mut().zip(v) {
            z.re = *s;
        }
        b
    };
    let (mut a, mut b) = (load(x), load(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    a[..x.len()].iter().map(|z| z.re / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub y: MultiChannelWaveform,
    /// Reference-channel direct path: the clean signal scaled by the first
    /// sample of that channel's RIR.
    pub x_direct: Vec<f64>,
    pub rirs: Vec<Vec<f64>>,
}

pub fn make_scene(x_clean: &[f64], spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    if x_clean.is_empty() {
        return Err(Error::invalid("clean signal is empty"));
    }
    let rirs = (0..spec.n_channels)
        .map(|c| sample_rir(spec, c))
        .collect::<Result<Vec<_>>>()?;
    let mut channels = Vec::with_capacity(spec.n_channels);
    for (c, h) in rirs.iter().enumerate() {
        let mut y = convolve(x_clean, h);
        if let Some(snr) = spec.snr_db {
            let power = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
            let std = (power / 10f64.powf(snr / 10.0)).sqrt();
            let mut rng = spec.rng(1000 + c as u64);
            for v in &mut y {
                *v += std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        channels.push(y);
    }
    let x_direct = x_clean.iter().map(|v| v * rirs[0][0]).collect();
    Ok(Scene {
        y: MultiChannelWaveform::new(channels, spec.sample_rate)?,
        x_direct,
        rirs,
    })
}

/// Seeded speech-like test signal: pink noise amplitude-modulated at 4 Hz,
/// scaled to a standard deviation of 0.05.
pub fn speech_surrogate(len: usize, sample_rate: u32, seed: u64) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::invalid("surrogate needs at least two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    // Paul Kellet's pink-noise filter
    let mut b = [0.0f64; 7];
    let sr = sample_rate as f64;
    let x: Vec<f64> = (0..len)
        .map(|t| {
            let w: f64 = rng.sample(StandardNormal);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let pink = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            let am = 0.5 * (1.0 + (std::f64::consts::TAU * 4.0 * t as f64 / sr + phase).sin());
            pink * am
        })
        .collect();
    rescale_to_std(&x, 0.05)
}

/// What `synth` writes next to the audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub spec: SceneSpec,
    pub samples: usize,
    pub mixture: String,
    pub direct: String,
    /// Direct-to-reverberant ratio of each channel's RIR, dB.
    pub drr_db: Vec<f64>,
    pub rir_len: Vec<usize>,
}

/// Direct-path energy over the energy of everything after it, in dB.
pub fn direct_to_reverberant_db(h: &[f64], delay: usize) -> f64 {
    let direct = h.get(delay).map_or(0.0, |v| v * v);
    let tail: f64 = h.iter().skip(delay + 1).map(|v| v * v).sum();
    10.0 * (direct / tail).log10()
}
