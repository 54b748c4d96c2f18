//! Parametric sub-band RIR.
//!
//! The magnitude of tap `n` in band `b` is `w_b exp(-alpha_b n)`. Between band
//! centres the log-magnitude is linearly interpolated across frequency, and
//! the phase `Phi[n, k]` is a free parameter. A projection step keeps the
//! resulting filter consistent with a real, minimum-phase time signal.

mod adam;
mod estimate;
mod phase;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::StftConfig;
use crate::subband::SubbandFilter;

pub use adam::{AdamConfig, AdamState};
pub use estimate::{estimate_rir, rir_objective, RirFit, RirGradient, RirProblem, RirStatus};
pub use phase::{minimum_phase, project, settle_phase};

pub const DEFAULT_BANDS: usize = 16;
pub const DEFAULT_TAPS: usize = 150;
pub const MAX_DECAY: f64 = 2.0;
pub const INIT_WEIGHT: f64 = 0.1;
pub const INIT_DECAY: f64 = 0.5;

/// Band centres: bin 0 followed by `bands - 1` log-spaced bins from 1 to `bins - 1`.
pub fn band_layout(bins: usize, bands: usize) -> Result<Vec<usize>> {
    if bands < 2 {
        return Err(Error::invalid("need at least two bands"));
    }
    if bands > bins {
        return Err(Error::invalid(format!("{bands} bands do not fit in {bins} bins")));
    }
    let top = (bins - 1) as f64;
    let mut centers = vec![0usize];
    for i in 0..bands - 1 {
        let f = if bands == 2 {
            top
        } else {
            top.powf(i as f64 / (bands - 2) as f64)
        };
        let prev = *centers.last().unwrap();
        centers.push((f.round() as usize).max(prev + 1));
    }
    if *centers.last().unwrap() != bins - 1 {
        // forced increments ran past the top; fall back to linear spacing
        centers = (0..bands)
            .map(|i| (i as f64 * top / (bands - 1) as f64).round() as usize)
            .collect();
    }
    Ok(centers)
}

/// Linear interpolation weights: bin `k` lies between bands `lo[k]` and
/// `lo[k] + 1` with fraction `t[k]` toward the upper one.
#[derive(Debug, Clone)]
pub(crate) struct Interp {
    pub lo: Vec<usize>,
    pub t: Vec<f64>,
}

impl Interp {
    pub fn new(centers: &[usize], bins: usize) -> Self {
        let mut lo = Vec::with_capacity(bins);
        let mut t = Vec::with_capacity(bins);
        let mut b = 0;
        for k in 0..bins {
            while b + 2 < centers.len() && k >= centers[b + 1] {
                b += 1;
            }
            let (c0, c1) = (centers[b] as f64, centers[b + 1] as f64);
            lo.push(b);
            t.push(((k as f64 - c0) / (c1 - c0)).clamp(0.0, 1.0));
        }
        Self { lo, t }
    }
}

/// RIR parameters `{Phi, (w_b, alpha_b)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RirParams {
    pub log_weights: Vec<f64>,
    /// Per-frame decay rates, kept in `[0, MAX_DECAY]`.
    pub decays: Vec<f64>,
    /// `Phi[n, k]`, tap-major.
    pub phase: Vec<f64>,
    band_centers: Vec<usize>,
    taps: usize,
    config: StftConfig,
}

impl RirParams {
    pub fn new(
        log_weights: Vec<f64>,
        decays: Vec<f64>,
        phase: Vec<f64>,
        band_centers: Vec<usize>,
        taps: usize,
        config: StftConfig,
    ) -> Result<Self> {
        let bins = config.num_bins();
        let b = band_centers.len();
        if b < 2 {
            return Err(Error::invalid("need at least two bands"));
        }
        if band_centers[0] != 0 || band_centers[b - 1] != bins - 1 {
            return Err(Error::invalid(format!("band centres must span bins 0..={}", bins - 1)));
        }
        if band_centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("band centres must be strictly increasing"));
        }
        if log_weights.len() != b || decays.len() != b {
            return Err(Error::shape(format!(
                "{b} bands but {} weights and {} decays",
                log_weights.len(),
                decays.len()
            )));
        }
        if taps == 0 || phase.len() != taps * bins {
            return Err(Error::shape(format!(
                "phase has {} values, expected {taps} x {bins}",
                phase.len()
            )));
        }
        let all = log_weights.iter().chain(&decays).chain(&phase);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("RIR parameters must be finite"));
        }
        let mut p = Self {
            log_weights,
            decays,
            phase,
            band_centers,
            taps,
            config,
        };
        p.clamp_decays();
        Ok(p)
    }

    /// Default initialisation: `w = 0.1`, `alpha = 0.5`, phase uniform on `(-pi, pi)`.
    pub fn init<R: Rng + ?Sized>(config: StftConfig, bands: usize, taps: usize, rng: &mut R) -> Result<Self> {
        let bins = config.num_bins();
        let centers = band_layout(bins, bands)?;
        let pi = std::f64::consts::PI;
        let phase = (0..taps * bins).map(|_| rng.random_range(-pi..pi)).collect();
        Self::new(
            vec![INIT_WEIGHT.ln(); bands],
            vec![INIT_DECAY; bands],
            phase,
            centers,
            taps,
            config,
        )
    }

    pub fn num_bands(&self) -> usize {
        self.band_centers.len()
    }

    pub fn band_centers(&self) -> &[usize] {
        &self.band_centers
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|v| v.exp()).collect()
    }

    pub(crate) fn clamp_decays(&mut self) {
        for a in &mut self.decays {
            *a = a.clamp(0.0, MAX_DECAY);
        }
    }

    pub(crate) fn interp(&self) -> Interp {
        Interp::new(&self.band_centers, self.bins())
    }

    /// `A[n, k] = exp(lerp_k(log w_b - alpha_b n))`, tap-major.
    pub fn synthesize_magnitude(&self) -> Vec<f64> {
        let bins = self.bins();
        let it = self.interp();
        let mut out = Vec::with_capacity(self.taps * bins);
        for n in 0..self.taps {
            let nf = n as f64;
            for k in 0..bins {
                let b = it.lo[k];
                let t = it.t[k];
                let l0 = self.log_weights[b] - self.decays[b] * nf;
                let l1 = self.log_weights[b + 1] - self.decays[b + 1] * nf;
                out.push(((1.0 - t) * l0 + t * l1).exp());
            }
        }
        out
    }

    /// `H[n, k] = A[n, k] exp(j Phi[n, k])`.
    pub fn to_filter(&self) -> SubbandFilter {
        let data = self
            .synthesize_magnitude()
            .iter()
            .zip(&self.phase)
            .map(|(a, p)| Complex64::from_polar(*a, *p))
            .collect();
        SubbandFilter::new(data, self.taps, self.config).expect("parameters are validated on construction")
    }

    /// Replaces the phase with the angle of `h`.
    pub fn set_phase_from(&mut self, h: &SubbandFilter) -> Result<()> {
        if h.taps() != self.taps || h.bins() != self.bins() {
            return Err(Error::shape("filter does not match the RIR parameter shape"));
        }
        for (p, z) in self.phase.iter_mut().zip(h.data()) {
            *p = z.arg();
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RirParamsDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<RirParamsDoc>(s)?.try_into()
    }
}

/// On-disk form; the phase matrix is base64 of little-endian `f32`.
#[derive(Debug, Serialize, Deserialize)]
struct RirParamsDoc {
    band_centers: Vec<usize>,
    weights: Vec<f64>,
    decays: Vec<f64>,
    taps: usize,
    stft: StftConfig,
    phase_f32_b64: String,
}

impl From<&RirParams> for RirParamsDoc {
    fn from(p: &RirParams) -> Self {
        let bytes: Vec<u8> = p.phase.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
        Self {
            band_centers: p.band_centers.clone(),
            weights: p.weights(),
            decays: p.decays.clone(),
            taps: p.taps,
            stft: p.config,
            phase_f32_b64: BASE64.encode(bytes),
        }
    }
}

impl TryFrom<RirParamsDoc> for RirParams {
    type Error = Error;

    fn try_from(d: RirParamsDoc) -> Result<Self> {
        let bytes = BASE64
            .decode(d.phase_f32_b64.as_bytes())
            .map_err(|e| Error::invalid(format!("phase is not valid base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::invalid("phase byte length is not a multiple of 4"));
        }
        let phase = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if d.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("band weights must be positive"));
        }
        d.stft.validate()?;
        RirParams::new(
            d.weights.iter().map(|w| w.ln()).collect(),
            d.decays,
            phase,
            d.band_centers,
            d.taps,
            d.stft,
        )
    }
}
