use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::RirParams;
use crate::error::{Error, Result};
use crate::stft::StftConfig;
use crate::subband::{FilterTransform, SubbandFilter};

/// Magnitude floor relative to the spectral peak before taking logs.
const LOG_FLOOR: f64 = 1e-10;

/// FFT length of the cepstral projection relative to the filter length;
/// larger values reduce cepstral aliasing.
const CEPSTRUM_OVERSAMPLING: usize = 4;

/// Minimum-phase signal with the same `nfft`-point magnitude spectrum as `h`
/// (zero-padded), via the folded real cepstrum. Returns `nfft` samples.
pub fn minimum_phase(h: &[f64], nfft: usize) -> Result<Vec<f64>> {
    let mut planner = RealFftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    minimum_phase_with(h, &*fwd, &*inv)
}

fn fft_failure(e: realfft::FftError) -> Error {
    Error::invalid(format!("real FFT failed: {e}"))
}

fn minimum_phase_with(h: &[f64], fwd: &dyn RealToComplex<f64>, inv: &dyn ComplexToReal<f64>) -> Result<Vec<f64>> {
    let nfft = fwd.len();
    if h.len() > nfft {
        return Err(Error::invalid(format!("{} samples do not fit a {nfft}-point FFT", h.len())));
    }
    let mut time = fwd.make_input_vec();
    time[..h.len()].copy_from_slice(h);
    let mut spec = fwd.make_output_vec();
    fwd.process(&mut time, &mut spec).map_err(fft_failure)?;
    let peak = spec.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::degenerate("minimum phase of an all-zero signal"));
    }
    let floor = peak * LOG_FLOOR;
    for z in spec.iter_mut() {
        *z = Complex64::new(z.norm().max(floor).ln(), 0.0);
    }
    inv.process(&mut spec, &mut time).map_err(fft_failure)?;
    // fold the anticausal half of the real cepstrum onto the causal half
    let scale = 1.0 / nfft as f64;
    let half = nfft / 2;
    for (i, v) in time.iter_mut().enumerate() {
        let w = if i == 0 || (i == half && nfft % 2 == 0) {
            1.0
        } else if i < half || (i == half && nfft % 2 == 1) {
            2.0
        } else {
            0.0
        };
        *v *= scale * w;
    }
    fwd.process(&mut time, &mut spec).map_err(fft_failure)?;
    for z in spec.iter_mut() {
        *z = z.exp();
    }
    spec[0].im = 0.0;
    if nfft % 2 == 0 {
        spec[half].im = 0.0;
    }
    inv.process(&mut spec, &mut time).map_err(fft_failure)?;
    for v in time.iter_mut() {
        *v *= scale;
    }
    Ok(time)
}

/// Reusable projection for filters of one shape.
pub(crate) struct Projector {
    transform: FilterTransform,
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
    len: usize,
    taps: usize,
}

impl Projector {
    pub fn new(config: StftConfig, taps: usize) -> Result<Self> {
        if taps == 0 {
            return Err(Error::invalid("projection needs at least one tap"));
        }
        let transform = FilterTransform::new(config)?;
        let len = transform.rir_len(taps);
        let nfft = (CEPSTRUM_OVERSAMPLING * len).next_power_of_two();
        let mut planner = RealFftPlanner::new();
        Ok(Self {
            transform,
            fwd: planner.plan_fft_forward(nfft),
            inv: planner.plan_fft_inverse(nfft),
            len,
            taps,
        })
    }

    pub fn project(&self, h: &SubbandFilter, is_reference: bool) -> Result<SubbandFilter> {
        if h.taps() != self.taps || h.config() != self.transform.config() {
            return Err(Error::shape("filter does not match the projector"));
        }
        let time = self.transform.inverse(h);
        let mut hmin = minimum_phase_with(&time, &*self.fwd, &*self.inv)?;
        hmin.truncate(self.len);
        if is_reference {
            hmin[0] = 1.0;
        }
        Ok(self.transform.forward(&hmin, self.taps))
    }
}

/// Minimum-phase projection through the time domain,
/// `T(P_min(T^-1(H)))` with `T` the [`FilterTransform`]; for the reference
/// channel the first time sample is then set to 1.
pub fn project(h: &SubbandFilter, is_reference: bool) -> Result<SubbandFilter> {
    Projector::new(*h.config(), h.taps())?.project(h, is_reference)
}

/// Repeats the phase update `Phi <- angle(project(H(psi)))` so that `psi`
/// approaches a fixed point of the projection used during estimation.
/// Stops once the filter moves by less than `tol` (relative) and returns the
/// last relative change.
pub fn settle_phase(p: &mut RirParams, is_reference: bool, max_iter: usize, tol: f64) -> Result<f64> {
    let proj = Projector::new(*p.config(), p.taps())?;
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let before = p.to_filter();
        let h = proj.project(&before, is_reference)?;
        p.set_phase_from(&h)?;
        let after = p.to_filter();
        let diff: f64 = after.data().iter().zip(before.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let norm: f64 = before.data().iter().map(|z| z.norm_sqr()).sum();
        change = (diff / norm).sqrt();
        if change < tol {
            break;
        }
    }
    Ok(change)
}
