//! Objective evaluation against a reference signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::{Stft, StftConfig};

/// Reported SI-SDR values are clamped to `[-SI_SDR_CLAMP, SI_SDR_CLAMP]`.
pub const SI_SDR_CLAMP: f64 = 60.0;

/// Shift range searched by [`si_sdr_best_shift`], in samples.
pub const MAX_SHIFT: usize = 16;

const LSD_FLOOR: f64 = 1e-8;

fn check_pair(estimate: &[f64], reference: &[f64]) -> Result<()> {
    if estimate.len() != reference.len() {
        return Err(Error::shape(format!(
            "estimate has {} samples, reference has {}",
            estimate.len(),
            reference.len()
        )));
    }
    if reference.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("reference signal is all zeros"));
    }
    Ok(())
}

fn si_sdr_raw(estimate: &[f64], reference: &[f64]) -> f64 {
    let dot: f64 = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    let a = dot / rr;
    let (mut target, mut noise) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let s = a * r;
        target += s * s;
        noise += (e - s) * (e - s);
    }
    (10.0 * (target / noise).log10()).clamp(-SI_SDR_CLAMP, SI_SDR_CLAMP)
}

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(estimate, reference)?;
    let v = si_sdr_raw(estimate, reference);
    // 0/0 (zero estimate) reports the floor
    Ok(if v.is_nan() { -SI_SDR_CLAMP } else { v })
}

/// Largest SI-SDR over integer shifts of the estimate within
/// `±MAX_SHIFT` samples, comparing only the overlapping part.
pub fn si_sdr_best_shift(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(estimate, reference)?;
    let len = estimate.len();
    let mut best = f64::NEG_INFINITY;
    for shift in -(MAX_SHIFT.min(len - 1) as isize)..=MAX_SHIFT.min(len - 1) as isize {
        // estimate[t + shift] is compared with reference[t]
        let (e, r) = if shift >= 0 {
            let s = shift as usize;
            (&estimate[s..], &reference[..len - s])
        } else {
            let s = (-shift) as usize;
            (&estimate[..len - s], &reference[s..])
        };
        if r.iter().all(|v| *v == 0.0) {
            continue;
        }
        let v = si_sdr_raw(e, r);
        if v > best {
            best = v;
        }
    }
    Ok(if best.is_finite() { best } else { -SI_SDR_CLAMP })
}

/// Root-mean-square difference of log magnitudes in dB over all frames and
/// bins, with magnitudes floored at 1e-8.
pub fn log_spectral_distance(estimate: &[f64], reference: &[f64], cfg: &StftConfig) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape(format!(
            "estimate has {} samples, reference has {}",
            estimate.len(),
            reference.len()
        )));
    }
    let engine = Stft::new(*cfg)?;
    let (se, sr) = (engine.forward(estimate)?, engine.forward(reference)?);
    let n = se.data().len() as f64;
    let sum: f64 = se
        .data()
        .iter()
        .zip(sr.data())
        .map(|(a, b)| (20.0 * (a.norm().max(LSD_FLOOR).log10() - b.norm().max(LSD_FLOOR).log10())).powi(2))
        .sum();
    Ok((sum / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub si_sdr: f64,
    pub si_sdr_best_shift: f64,
    pub lsd: f64,
}

pub fn evaluate(estimate: &[f64], reference: &[f64], cfg: &StftConfig) -> Result<EvalReport> {
    Ok(EvalReport {
        si_sdr: si_sdr(estimate, reference)?,
        si_sdr_best_shift: si_sdr_best_shift(estimate, reference)?,
        lsd: log_spectral_distance(estimate, reference, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn perfect_and_scaled_estimates_hit_the_clamp() {
        let r = noise(1000, 1);
        assert_eq!(si_sdr(&r, &r).unwrap(), 60.0);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&twice, &r).unwrap(), 60.0);
    }

    #[test]
    fn orthogonal_noise_of_equal_power_is_zero_db() {
        let r = noise(1000, 2);
        let mut n = noise(1000, 3);
        let a = n.iter().zip(&r).map(|(x, y)| x * y).sum::<f64>() / r.iter().map(|v| v * v).sum::<f64>();
        n.iter_mut().zip(&r).for_each(|(x, y)| *x -= a * y);
        let scale = (r.iter().map(|v| v * v).sum::<f64>() / n.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(x, y)| x + scale * y).collect();
        assert!(si_sdr(&est, &r).unwrap().abs() < 1e-10);
    }

    #[test]
    fn zero_reference_is_rejected() {
        assert!(matches!(si_sdr(&[1.0; 4], &[0.0; 4]), Err(Error::InvalidInput(_))));
        assert!(si_sdr(&[1.0; 4], &[1.0; 3]).is_err());
        assert_eq!(si_sdr(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), -60.0);
    }

    #[test]
    fn best_shift_undoes_small_misalignment() {
        let r = noise(2000, 4);
        let mut est = vec![0.0; 2000];
        est[5..].copy_from_slice(&r[..1995]);
        assert!(si_sdr(&est, &r).unwrap() < 0.0);
        assert_eq!(si_sdr_best_shift(&est, &r).unwrap(), 60.0);
        let mut late = vec![0.0; 2000];
        late[..1990].copy_from_slice(&r[10..]);
        assert_eq!(si_sdr_best_shift(&late, &r).unwrap(), 60.0);
    }

    #[test]
    fn lsd_identity_and_constant_offset() {
        let cfg = StftConfig::new(64, 16).unwrap();
        let r = noise(1000, 5);
        assert_eq!(log_spectral_distance(&r, &r, &cfg).unwrap(), 0.0);
        let ten: Vec<f64> = r.iter().map(|v| 10.0 * v).collect();
        assert!((log_spectral_distance(&ten, &r, &cfg).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn lsd_matches_direct_formula() {
        let cfg = StftConfig::new(32, 8).unwrap();
        let (a, b) = (noise(300, 6), noise(300, 7));
        let engine = Stft::new(cfg).unwrap();
        let (sa, sb) = (engine.forward(&a).unwrap(), engine.forward(&b).unwrap());
        let mut acc = 0.0;
        for m in 0..sa.frames() {
            for k in 0..sa.bins() {
                let d = 20.0 * (sa.at(m, k).norm().max(1e-8).log10() - sb.at(m, k).norm().max(1e-8).log10());
                acc += d * d;
            }
        }
        let want = (acc / (sa.frames() * sa.bins()) as f64).sqrt();
        assert!((log_spectral_distance(&a, &b, &cfg).unwrap() - want).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn si_sdr_is_scale_invariant(seed in 0u64..1000, a in 0.01f64..100.0) {
            let r = noise(256, seed);
            let e: Vec<f64> = r.iter().zip(noise(256, seed + 1)).map(|(x, n)| x + 0.3 * n).collect();
            let scaled: Vec<f64> = e.iter().map(|v| a * v).collect();
            let (u, v) = (si_sdr(&e, &r).unwrap(), si_sdr(&scaled, &r).unwrap());
            proptest::prop_assert!((u - v).abs() < 1e-9);
        }
    }
}
