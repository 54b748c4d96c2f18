//! Sub-band convolution: each STFT frequency bin is filtered independently
//! along the frame axis by a short complex FIR filter.
//!
//! `Y[m, k] = sum_{n=0}^{N-1} H[n, k] X[m - n, k]`, with frames before 0 taken
//! as zero and the output truncated to the input frame count.

use num_complex::Complex64;

use crate::error::{Error, Result};
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::stft::{Spectrogram, Stft, StftConfig};

/// Complex filter taps `H[n, k]`, stored tap-major (`taps x bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandFilter {
    data: Vec<Complex64>,
    taps: usize,
    bins: usize,
    config: StftConfig,
}

impl SubbandFilter {
    pub fn new(data: Vec<Complex64>, taps: usize, config: StftConfig) -> Result<Self> {
        let bins = config.num_bins();
        if taps == 0 {
            return Err(Error::invalid("a sub-band filter needs at least one tap"));
        }
        if data.len() != taps * bins {
            return Err(Error::shape(format!(
                "{} values cannot fill {taps} taps x {bins} bins",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("sub-band filter has non-finite taps"));
        }
        Ok(Self {
            data,
            taps,
            bins,
            config,
        })
    }

    pub fn zeros(taps: usize, config: StftConfig) -> Self {
        let bins = config.num_bins();
        Self {
            data: vec![Complex64::new(0.0, 0.0); taps.max(1) * bins],
            taps: taps.max(1),
            bins,
            config,
        }
    }

    /// `H[0, k] = 1`, all other taps zero.
    pub fn identity(taps: usize, config: StftConfig) -> Self {
        let mut h = Self::zeros(taps, config);
        for z in h.tap_mut(0) {
            *z = Complex64::new(1.0, 0.0);
        }
        h
    }

    /// Sub-band filter of a time-domain impulse response; see [`FilterTransform`].
    pub fn from_rir(h: &[f64], taps: usize, config: StftConfig) -> Result<Self> {
        Ok(FilterTransform::new(config)?.forward(h, taps))
    }

    /// Time-domain impulse response of `taps * hop_size` samples; see [`FilterTransform`].
    pub fn to_rir(&self) -> Result<Vec<f64>> {
        Ok(FilterTransform::new(self.config)?.inverse(self))
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn bins(&self) -> usize {
        self.bins
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

    pub fn at(&self, n: usize, k: usize) -> Complex64 {
        self.data[n * self.bins + k]
    }

    pub fn tap(&self, n: usize) -> &[Complex64] {
        &self.data[n * self.bins..(n + 1) * self.bins]
    }

    pub fn tap_mut(&mut self, n: usize) -> &mut [Complex64] {
        &mut self.data[n * self.bins..(n + 1) * self.bins]
    }

    pub fn scale(&mut self, a: f64) {
        for z in &mut self.data {
            *z *= a;
        }
    }
}

fn check_bins(x: &Spectrogram, h: &SubbandFilter) -> Result<()> {
    if x.bins() != h.bins() {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, filter has {}",
            x.bins(),
            h.bins()
        )));
    }
    Ok(())
}

pub fn subband_convolve(x: &Spectrogram, h: &SubbandFilter) -> Result<Spectrogram> {
    check_bins(x, h)?;
    let mut y = Spectrogram::zeros(x.frames(), x.signal_len(), *x.config());
    let taps = h.taps().min(x.frames());
    for n in 0..taps {
        let hn = h.tap(n);
        for m in n..x.frames() {
            let xm = x.frame(m - n);
            let ym = y.frame_mut(m);
            for ((yk, xk), hk) in ym.iter_mut().zip(xm).zip(hn) {
                *yk += hk * xk;
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`subband_convolve`] in `X` for fixed `H`:
/// `X*[m, k] = sum_n conj(H[n, k]) G[m + n, k]`.
pub fn subband_convolve_adjoint(g: &Spectrogram, h: &SubbandFilter) -> Result<Spectrogram> {
    check_bins(g, h)?;
    let mut out = Spectrogram::zeros(g.frames(), g.signal_len(), *g.config());
    let taps = h.taps().min(g.frames());
    for n in 0..taps {
        let hn = h.tap(n);
        for m in 0..g.frames() - n {
            let gm = g.frame(m + n);
            let om = out.frame_mut(m);
            for ((ok, gk), hk) in om.iter_mut().zip(gm).zip(hn) {
                *ok += hk.conj() * gk;
            }
        }
    }
    Ok(out)
}

/// Gradient with respect to the taps of a real loss whose gradient with
/// respect to `subband_convolve(x, h)` is `g`:
/// `dH[n, k] = sum_m G[m, k] conj(X[m - n, k])`.
///
/// Taps at or beyond the frame count receive zero gradient.
pub fn subband_filter_gradient(g: &Spectrogram, x: &Spectrogram, taps: usize) -> Result<SubbandFilter> {
    if !g.same_shape(x) {
        return Err(Error::shape("gradient and input spectrogram differ in shape"));
    }
    let mut out = SubbandFilter::zeros(taps, *x.config());
    for n in 0..taps.min(x.frames()) {
        let dn = out.tap_mut(n);
        for m in n..x.frames() {
            let gm = g.frame(m);
            let xm = x.frame(m - n);
            for ((dk, gk), xk) in dn.iter_mut().zip(gm).zip(xm) {
                *dk += gk * xk.conj();
            }
        }
    }
    Ok(out)
}

/// `istft(subband_convolve(stft(x), h))`; output length equals input length.
pub fn apply_operator(x: &[f64], h: &SubbandFilter) -> Result<Vec<f64>> {
    let engine = Stft::new(*h.config())?;
    apply_operator_with(&engine, x, h)
}

pub fn apply_operator_with(engine: &Stft, x: &[f64], h: &SubbandFilter) -> Result<Vec<f64>> {
    let spec = engine.forward(x)?;
    engine.inverse(&subband_convolve(&spec, h)?)
}

/// Transform pair between a time-domain impulse response `h` and a
/// sub-band filter: tap `n` is the `fft_size`-point DFT of the hop-length
/// block `h[n hop .. (n + 1) hop]`.
///
/// A unit impulse maps to the identity filter and a delay of one hop to the
/// one-frame delay, so sub-band convolution with `forward(h)` approximates
/// time-domain convolution with `h` without extra delay or gain. `inverse`
/// is exact on the image of `forward` and otherwise discards the parts of
/// each tap that do not belong to a real hop-length block.
#[derive(Clone)]
pub struct FilterTransform {
    config: StftConfig,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FilterTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterTransform").field("config", &self.config).finish()
    }
}

impl FilterTransform {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft: planner.plan_fft_forward(config.fft_size),
            ifft: planner.plan_fft_inverse(config.fft_size),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn rir_len(&self, taps: usize) -> usize {
        taps * self.config.hop_size
    }

    /// `h` is truncated or zero-extended to `taps * hop_size` samples.
    pub fn forward(&self, h: &[f64], taps: usize) -> SubbandFilter {
        let (n, hop) = (self.config.fft_size, self.config.hop_size);
        let mut out = SubbandFilter::zeros(taps, self.config);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..out.taps() {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            let start = (t * hop).min(h.len());
            let end = ((t + 1) * hop).min(h.len());
            for (b, v) in buf.iter_mut().zip(&h[start..end]) {
                b.re = *v;
            }
            self.fft.process(&mut buf);
            out.tap_mut(t).copy_from_slice(&buf[..=n / 2]);
        }
        out
    }

    pub fn inverse(&self, f: &SubbandFilter) -> Vec<f64> {
        let (n, hop) = (self.config.fft_size, self.config.hop_size);
        let mut out = Vec::with_capacity(self.rir_len(f.taps()));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for t in 0..f.taps() {
            let tap = f.tap(t);
            buf[..=n / 2].copy_from_slice(tap);
            for k in 1..n / 2 {
                buf[n - k] = tap[k].conj();
            }
            self.ifft.process(&mut buf);
            out.extend(buf[..hop].iter().map(|z| z.re * scale));
        }
        out
    }
}
