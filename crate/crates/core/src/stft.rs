//! Short-time Fourier analysis/synthesis with a square-root Hann window,
//! plus the magnitude compression used by the likelihood.
//!
//! Framing convention: the signal is zero-padded on the left by
//! `fft_size - hop_size` samples, frame `m` covers padded samples
//! `[m * hop, m * hop + fft_size)`, and there are
//! `ceil((L + fft_size - hop) / hop)` frames. Every original sample is then
//! covered by exactly `fft_size / hop` frames, so weighted overlap-add
//! reconstructs the whole signal, edges included.
//!
//! The adjoints of [`Stft::forward`] and [`Stft::inverse`] are exposed for
//! gradient computations. They are adjoints under the real inner product
//! `<A, B> = sum Re(A * conj(B))` over the stored one-sided bins.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::MultiChannelWaveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop_size: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms frames with an 8 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop_size: 128,
            window: WindowKind::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn new(fft_size: usize, hop_size: usize) -> Result<Self> {
        let cfg = Self {
            fft_size,
            hop_size,
            window: WindowKind::SqrtHann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 32 ms / 8 ms framing at an arbitrary sample rate (rounded to even sizes).
    pub fn for_sample_rate(sample_rate: u32) -> Result<Self> {
        let hop = ((sample_rate as f64 * 0.008).round() as usize).max(1);
        Self::new(4 * hop, hop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.fft_size % 2 != 0 {
            return Err(Error::invalid(format!(
                "fft_size must be even and >= 2, got {}",
                self.fft_size
            )));
        }
        if self.hop_size == 0 || self.fft_size % self.hop_size != 0 {
            return Err(Error::invalid(format!(
                "hop_size {} must divide fft_size {}",
                self.hop_size, self.fft_size
            )));
        }
        if self.fft_size / self.hop_size < 2 {
            return Err(Error::invalid(
                "square-root Hann synthesis needs at least 50% overlap",
            ));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Left zero padding applied before framing.
    pub fn padding(&self) -> usize {
        self.fft_size - self.hop_size
    }

    pub fn num_frames(&self, len: usize) -> usize {
        (len + self.padding()).div_ceil(self.hop_size)
    }

    /// Signal length whose STFT has exactly `frames` frames with no spill-over,
    /// i.e. the time-domain length of a filter with `frames` taps.
    pub fn len_for_frames(&self, frames: usize) -> Option<usize> {
        ((frames + 1) * self.hop_size).checked_sub(self.fft_size).filter(|&l| l > 0)
    }

    /// Periodic square-root Hann window of length `fft_size`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        match self.window {
            WindowKind::SqrtHann => (0..self.fft_size)
                .map(|i| (PI * i as f64 / n).sin())
                .collect(),
        }
    }
}

/// One channel's complex STFT, stored frame-major (`frames x bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    frames: usize,
    bins: usize,
    /// Length of the time signal this spectrogram describes.
    len: usize,
    config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(frames: usize, len: usize, config: StftConfig) -> Self {
        let bins = config.num_bins();
        Self {
            data: vec![Complex64::new(0.0, 0.0); frames * bins],
            frames,
            bins,
            len,
            config,
        }
    }

    pub fn from_data(
        data: Vec<Complex64>,
        frames: usize,
        len: usize,
        config: StftConfig,
    ) -> Result<Self> {
        let bins = config.num_bins();
        if data.len() != frames * bins {
            return Err(Error::shape(format!(
                "{} values cannot fill {frames} frames x {bins} bins",
                data.len()
            )));
        }
        Ok(Self {
            data,
            frames,
            bins,
            len,
            config,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn signal_len(&self) -> usize {
        self.len
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn at(&self, m: usize, k: usize) -> Complex64 {
        self.data[m * self.bins + k]
    }

    pub fn frame(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.bins..(m + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, m: usize) -> &mut [Complex64] {
        &mut self.data[m * self.bins..(m + 1) * self.bins]
    }

    /// Drops trailing frames, keeping the recorded signal length.
    pub fn truncate_frames(&mut self, frames: usize) {
        if frames < self.frames {
            self.frames = frames;
            self.data.truncate(frames * self.bins);
        }
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Real inner product `sum Re(a * conj(b))`.
    pub fn inner(&self, other: &Spectrogram) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }
}

/// Planned STFT engine for one configuration. Reuse it in hot loops.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window(),
            fft: planner.plan_fft_forward(config.fft_size),
            ifft: planner.plan_fft_inverse(config.fft_size),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrogram> {
        let n = self.config.fft_size;
        if x.len() < n {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than one {n}-sample frame",
                x.len()
            )));
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Spectrogram {
        let StftConfig {
            fft_size: n,
            hop_size: hop,
            ..
        } = self.config;
        let pad = self.config.padding();
        let frames = self.config.num_frames(x.len());
        let mut out = Spectrogram::zeros(frames, x.len(), self.config);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                let t = (m * hop + i) as isize - pad as isize;
                let v = if t >= 0 && (t as usize) < x.len() {
                    x[t as usize] * self.window[i]
                } else {
                    0.0
                };
                *b = Complex64::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            out.frame_mut(m).copy_from_slice(&buf[..n / 2 + 1]);
        }
        out
    }

    /// Per-sample overlap-add normaliser `sum_m w^2` for `frames` frames.
    fn ola_norm(&self, frames: usize, len: usize) -> Vec<f64> {
        let hop = self.config.hop_size;
        let pad = self.config.padding();
        let mut norm = vec![0.0; len];
        for m in 0..frames {
            for (i, w) in self.window.iter().enumerate() {
                let t = (m * hop + i) as isize - pad as isize;
                if t >= 0 && (t as usize) < len {
                    norm[t as usize] += w * w;
                }
            }
        }
        norm
    }

    fn check_spec(&self, s: &Spectrogram) -> Result<()> {
        if s.bins != self.config.num_bins() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, STFT expects {}",
                s.bins,
                self.config.num_bins()
            )));
        }
        Ok(())
    }

    /// Weighted overlap-add synthesis back to `s.signal_len()` samples.
    pub fn inverse(&self, s: &Spectrogram) -> Result<Vec<f64>> {
        self.check_spec(s)?;
        let StftConfig {
            fft_size: n,
            hop_size: hop,
            ..
        } = self.config;
        let pad = self.config.padding();
        let len = s.len;
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for m in 0..s.frames {
            let frame = s.frame(m);
            buf[..=n / 2].copy_from_slice(frame);
            for k in 1..n / 2 {
                buf[n - k] = frame[k].conj();
            }
            self.ifft.process(&mut buf);
            for (i, b) in buf.iter().enumerate() {
                let t = (m * hop + i) as isize - pad as isize;
                if t >= 0 && (t as usize) < len {
                    out[t as usize] += self.window[i] * b.re * scale;
                }
            }
        }
        let norm = self.ola_norm(s.frames, len);
        for (o, d) in out.iter_mut().zip(&norm) {
            *o = if *d > 1e-12 { *o / d } else { 0.0 };
        }
        Ok(out)
    }

    /// Adjoint of [`Stft::forward`]: maps a bin-domain gradient back to the
    /// `g.signal_len()` input samples.
    pub fn forward_adjoint(&self, g: &Spectrogram) -> Result<Vec<f64>> {
        self.check_spec(g)?;
        let StftConfig {
            fft_size: n,
            hop_size: hop,
            ..
        } = self.config;
        let pad = self.config.padding();
        let len = g.len;
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in 0..g.frames {
            buf[..=n / 2].copy_from_slice(g.frame(m));
            for b in &mut buf[n / 2 + 1..] {
                *b = Complex64::new(0.0, 0.0);
            }
            self.ifft.process(&mut buf);
            for (i, b) in buf.iter().enumerate() {
                let t = (m * hop + i) as isize - pad as isize;
                if t >= 0 && (t as usize) < len {
                    out[t as usize] += self.window[i] * b.re;
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`Stft::inverse`] for a spectrogram of `frames` frames.
    pub fn inverse_adjoint(&self, g: &[f64], frames: usize) -> Spectrogram {
        let StftConfig {
            fft_size: n,
            hop_size: hop,
            ..
        } = self.config;
        let pad = self.config.padding();
        let len = g.len();
        let norm = self.ola_norm(frames, len);
        let scaled: Vec<f64> = g
            .iter()
            .zip(&norm)
            .map(|(v, d)| if *d > 1e-12 { v / d } else { 0.0 })
            .collect();
        let mut out = Spectrogram::zeros(frames, len, self.config);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let edge = 1.0 / n as f64;
        let inner = 2.0 / n as f64;
        for m in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                let t = (m * hop + i) as isize - pad as isize;
                let v = if t >= 0 && (t as usize) < len {
                    scaled[t as usize] * self.window[i]
                } else {
                    0.0
                };
                *b = Complex64::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            let frame = out.frame_mut(m);
            for (k, f) in frame.iter_mut().enumerate() {
                let c = if k == 0 || k == n / 2 { edge } else { inner };
                *f = buf[k] * c;
            }
        }
        out
    }
}

/// STFT of every channel.
pub fn stft(x: &MultiChannelWaveform, cfg: &StftConfig) -> Result<Vec<Spectrogram>> {
    let engine = Stft::new(*cfg)?;
    x.channels().iter().map(|ch| engine.forward(ch)).collect()
}

pub fn istft(s: &Spectrogram) -> Result<Vec<f64>> {
    Stft::new(s.config)?.inverse(s)
}

/// `|z|^(2/3) * exp(j angle(z))`, applied binwise. Zero maps to zero.
pub fn compress_bin(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z * r.powf(-1.0 / 3.0)
    }
}

/// Gradient of a real loss with respect to `z`, given its gradient `g` with
/// respect to `compress_bin(z)`. Defined as zero at `z = 0`.
///
/// The Jacobian is `r^(-1/3) (2/3 P_radial + P_tangential)`, which is symmetric.
pub fn compress_bin_vjp(z: Complex64, g: Complex64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let u = z / r;
    let radial = g.re * u.re + g.im * u.im;
    (g - u * (radial / 3.0)) * r.powf(-1.0 / 3.0)
}

pub fn compress(s: &Spectrogram) -> Spectrogram {
    let mut out = s.clone();
    for z in out.data_mut() {
        *z = compress_bin(*z);
    }
    out
}
