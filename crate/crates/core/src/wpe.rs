//! Weighted prediction error dereverberation.
//!
//! Per frequency, all channels are predicted from a delayed stack of past
//! frames of all channels, with the prediction error weighted by an
//! iteratively re-estimated time-varying variance. The prediction is then
//! subtracted.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::stft::{Spectrogram, Stft, StftConfig};
use crate::waveform::MultiChannelWaveform;

/// Diagonal loading relative to `trace / size` of each correlation matrix.
pub const WPE_DIAGONAL_LOADING: f64 = 1e-6;

/// A frequency whose output energy exceeds this multiple of its input energy
/// is passed through unprocessed.
const ENERGY_GUARD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WpeConfig {
    pub taps: usize,
    pub delay: usize,
    pub iterations: usize,
    pub stft: StftConfig,
    /// Variance floor relative to the largest channel-mean bin power.
    pub variance_floor: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self::for_channels(1)
    }
}

impl WpeConfig {
    /// Default taps by array size: 37 for one channel, then 20, 10 and 5 for
    /// two, four and eight or more.
    pub fn for_channels(channels: usize) -> Self {
        let taps = match channels {
            0 | 1 => 37,
            2..=3 => 20,
            4..=7 => 10,
            _ => 5,
        };
        Self {
            taps,
            delay: 3,
            iterations: 3,
            stft: StftConfig::default(),
            variance_floor: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.delay == 0 || self.iterations == 0 {
            return Err(Error::invalid(format!(
                "WPE needs taps, delay and iterations of at least 1 (got {}, {}, {})",
                self.taps, self.delay, self.iterations
            )));
        }
        if !(self.variance_floor > 0.0) || !self.variance_floor.is_finite() {
            return Err(Error::invalid("WPE variance floor must be positive"));
        }
        self.stft.validate()
    }

    /// Shortest input the configuration accepts.
    pub fn min_len(&self) -> usize {
        (self.taps + self.delay + 1) * self.stft.hop_size
    }
}

pub fn wpe_dereverb(y: &MultiChannelWaveform, cfg: &WpeConfig) -> Result<MultiChannelWaveform> {
    cfg.validate()?;
    if y.len() < cfg.min_len().max(cfg.stft.fft_size) {
        return Err(Error::invalid(format!(
            "WPE with {} taps and delay {} needs at least {} samples, got {}",
            cfg.taps,
            cfg.delay,
            cfg.min_len().max(cfg.stft.fft_size),
            y.len()
        )));
    }
    let engine = Stft::new(cfg.stft)?;
    let specs = y
        .channels()
        .iter()
        .map(|ch| engine.forward(ch))
        .collect::<Result<Vec<_>>>()?;
    let out = wpe_spectra(&specs, cfg)?;
    let channels = out
        .iter()
        .map(|s| {
            let mut x = engine.inverse(s)?;
            x.truncate(y.len());
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiChannelWaveform::new(channels, y.sample_rate())
}

/// WPE on STFT-domain channels of identical shape.
pub fn wpe_spectra(ys: &[Spectrogram], cfg: &WpeConfig) -> Result<Vec<Spectrogram>> {
    cfg.validate()?;
    let first = ys.first().ok_or_else(|| Error::invalid("WPE needs at least one channel"))?;
    if ys.iter().any(|s| !s.same_shape(first)) {
        return Err(Error::shape("all channel spectrograms must share one shape"));
    }
    let (frames, bins, chans) = (first.frames(), first.bins(), ys.len());
    let mut out: Vec<Spectrogram> = ys.to_vec();
    let peak = (0..frames * bins)
        .map(|i| ys.iter().map(|s| s.data()[i].norm_sqr()).sum::<f64>() / chans as f64)
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(out);
    }
    let floor = cfg.variance_floor * peak;
    let dim = chans * cfg.taps;

    let mut obs = vec![Complex64::new(0.0, 0.0); frames * chans];
    let mut stack = vec![Complex64::new(0.0, 0.0); dim];
    let mut r = vec![Complex64::new(0.0, 0.0); dim * dim];
    let mut p = vec![Complex64::new(0.0, 0.0); dim * chans];
    let mut g = vec![Complex64::new(0.0, 0.0); dim * chans];
    let mut col = vec![Complex64::new(0.0, 0.0); dim];
    let mut lambda = vec![0.0; frames];
    let mut est = vec![Complex64::new(0.0, 0.0); frames * chans];

    for k in 0..bins {
        for m in 0..frames {
            for c in 0..chans {
                obs[m * chans + c] = ys[c].at(m, k);
            }
        }
        let fill_stack = |m: usize, stack: &mut [Complex64]| {
            for c in 0..chans {
                for tau in 0..cfg.taps {
                    let lag = cfg.delay + tau;
                    stack[c * cfg.taps + tau] = if m >= lag {
                        obs[(m - lag) * chans + c]
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
            }
        };
        est.copy_from_slice(&obs);
        for _ in 0..cfg.iterations {
            for (m, l) in lambda.iter_mut().enumerate() {
                let e: f64 = est[m * chans..(m + 1) * chans].iter().map(|z| z.norm_sqr()).sum();
                *l = (e / chans as f64).max(floor);
            }
            r.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            p.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for m in cfg.delay..frames {
                fill_stack(m, &mut stack);
                let w = 1.0 / lambda[m];
                for i in 0..dim {
                    let si = stack[i] * w;
                    if si == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for j in 0..=i {
                        r[i * dim + j] += si * stack[j].conj();
                    }
                    for c in 0..chans {
                        p[i * chans + c] += si * obs[m * chans + c].conj();
                    }
                }
            }
            for i in 0..dim {
                for j in 0..i {
                    r[j * dim + i] = r[i * dim + j].conj();
                }
            }
            let chol = Cholesky::factor_loaded(&r, dim, WPE_DIAGONAL_LOADING);
            for c in 0..chans {
                for i in 0..dim {
                    col[i] = p[i * chans + c];
                }
                chol.solve_in_place(&mut col);
                for i in 0..dim {
                    g[i * chans + c] = col[i];
                }
            }
            for m in 0..frames {
                fill_stack(m, &mut stack);
                for c in 0..chans {
                    let pred: Complex64 = (0..dim).map(|i| g[i * chans + c].conj() * stack[i]).sum();
                    est[m * chans + c] = obs[m * chans + c] - pred;
                }
            }
        }
        let e_in: f64 = obs.iter().map(|z| z.norm_sqr()).sum();
        let e_out: f64 = est.iter().map(|z| z.norm_sqr()).sum();
        let keep = !(e_out <= ENERGY_GUARD * e_in) || est.iter().any(|z| !z.is_finite());
        for m in 0..frames {
            for c in 0..chans {
                out[c].frame_mut(m)[k] = if keep { obs[m * chans + c] } else { est[m * chans + c] };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn small() -> WpeConfig {
        WpeConfig {
            taps: 4,
            stft: StftConfig::new(64, 16).unwrap(),
            ..WpeConfig::for_channels(2)
        }
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn conv(x: &[f64], h: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|t| (0..h.len().min(t + 1)).map(|j| h[j] * x[t - j]).sum())
            .collect()
    }

    fn reverberant(seed: u64) -> (Vec<f64>, MultiChannelWaveform) {
        let x = noise(4000, seed);
        let chans = (0..2)
            .map(|c| {
                let mut h = noise(600, seed * 10 + c + 1);
                h.iter_mut().enumerate().for_each(|(n, v)| *v *= 0.3 * (-(n as f64) / 120.0).exp());
                h[0] = 1.0;
                conv(&x, &h)
            })
            .collect();
        (x, MultiChannelWaveform::new(chans, 16000).unwrap())
    }

    #[test]
    fn default_taps_follow_channel_count() {
        let taps: Vec<usize> = [1, 2, 4, 8, 12].iter().map(|c| WpeConfig::for_channels(*c).taps).collect();
        assert_eq!(taps, vec![37, 20, 10, 5, 5]);
        assert_eq!(WpeConfig::default().delay, 3);
        assert_eq!(WpeConfig::default().iterations, 3);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let y = MultiChannelWaveform::new(vec![vec![0.0; 1000]; 2], 16000).unwrap();
        let out = wpe_dereverb(&y, &small()).unwrap();
        assert!(out.channels().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn short_input_is_rejected() {
        let y = MultiChannelWaveform::new(vec![vec![1.0; 100]; 2], 16000).unwrap();
        assert!(matches!(wpe_dereverb(&y, &small()), Err(Error::InvalidInput(_))));
        let bad = WpeConfig { delay: 0, ..small() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scaling_is_equivariant() {
        let (_, y) = reverberant(1);
        let a = 37.5;
        let scaled = MultiChannelWaveform::new(
            y.channels().iter().map(|c| c.iter().map(|v| v * a).collect()).collect(),
            16000,
        )
        .unwrap();
        let o1 = wpe_dereverb(&y, &small()).unwrap();
        let o2 = wpe_dereverb(&scaled, &small()).unwrap();
        for (u, v) in o1.channels().iter().flatten().zip(o2.channels().iter().flatten()) {
            assert!((u * a - v).abs() <= 1e-8 * a.max(v.abs()), "{} vs {v}", u * a);
        }
    }

    #[test]
    fn removes_late_reverberation() {
        let (x, y) = reverberant(2);
        let out = wpe_dereverb(&y, &small()).unwrap();
        // energy of the residual relative to the dry signal, past the warm-up
        let err = |z: &[f64]| -> f64 {
            z[1000..].iter().zip(&x[1000..]).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let before = err(y.channel(0));
        let after = err(out.channel(0));
        assert!(after < 0.5 * before, "{after} vs {before}");
        assert!(out.channels().iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn output_energy_is_bounded() {
        for seed in 0..3 {
            let (_, y) = reverberant(seed + 10);
            let out = wpe_dereverb(&y, &small()).unwrap();
            let e = |w: &MultiChannelWaveform| w.channels().iter().flatten().map(|v| v * v).sum::<f64>();
            assert!(e(&out) <= 2.0 * e(&y));
        }
    }

    fn anechoic_snr(chans: usize, len: usize) -> (f64, f64) {
        let cfg = WpeConfig::for_channels(chans);
        let x = noise(len, 4);
        let y = MultiChannelWaveform::new(vec![x.clone(); chans], 16000).unwrap();
        let out = wpe_dereverb(&y, &cfg).unwrap();
        let err: f64 = out.channel(0).iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
        let snr = 10.0 * (x.iter().map(|v| v * v).sum::<f64>() / err).log10();
        let frames = cfg.stft.num_frames(len) as f64;
        // identical channels leave `taps` independent regressors
        (snr, 10.0 * (frames / cfg.taps as f64).log10())
    }

    // With nothing to predict, the residual prediction is estimation noise
    // of relative energy about taps / frames; it shrinks with signal length.
    #[test]
    fn anechoic_input_passes_through_up_to_estimation_noise() {
        let (short, short_bound) = anechoic_snr(1, 16000);
        let (long, long_bound) = anechoic_snr(1, 64000);
        assert!(short > short_bound, "{short} vs {short_bound}");
        assert!(long > long_bound, "{long} vs {long_bound}");
        assert!(long > short + 4.0, "{short} -> {long}");
        let (multi, multi_bound) = anechoic_snr(2, 32000);
        assert!(multi > multi_bound, "{multi} vs {multi_bound}");
    }

    #[test]
    fn deterministic() {
        let (_, y) = reverberant(3);
        assert_eq!(wpe_dereverb(&y, &small()).unwrap(), wpe_dereverb(&y, &small()).unwrap());
    }
}
