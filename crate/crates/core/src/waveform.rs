//! Time-domain multi-channel audio.

use crate::error::{Error, Result};

/// `C` channels of `L` samples each, sharing one sample rate.
///
/// Channel 0 is the reference microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelWaveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultiChannelWaveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("waveform needs at least one channel"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let len = channels[0].len();
        if len == 0 {
            return Err(Error::invalid("waveform needs at least one sample"));
        }
        if let Some((c, ch)) = channels.iter().enumerate().find(|(_, ch)| ch.len() != len) {
            return Err(Error::shape(format!(
                "channel {c} has {} samples, channel 0 has {len}",
                ch.len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    /// Always false: construction rejects empty waveforms.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

/// Population standard deviation (mean removed).
pub fn empirical_std(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Scales `x` so its empirical standard deviation equals `target_std`.
///
/// The mean is scaled along with everything else, not removed.
pub fn rescale_to_std(x: &[f64], target_std: f64) -> Result<Vec<f64>> {
    let std = empirical_std(x);
    if !(std >= 1e-12) {
        return Err(Error::degenerate(format!(
            "cannot rescale a signal with standard deviation {std:e}"
        )));
    }
    let gain = target_std / std;
    Ok(x.iter().map(|v| v * gain).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rejects_ragged_channels() {
        let err = MultiChannelWaveform::new(vec![vec![0.0; 4], vec![0.0; 3]], 16000);
        assert!(matches!(err, Err(Error::Shape(_))));
        assert!(MultiChannelWaveform::new(vec![], 16000).is_err());
        assert!(MultiChannelWaveform::new(vec![vec![]], 16000).is_err());
    }

    #[test]
    fn rescale_scales_by_ratio() {
        // +-0.5 alternating has std exactly 0.5
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let y = rescale_to_std(&x, 0.05).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a * 0.1 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rescale_fixed_point() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.05 } else { -0.05 }).collect();
        let y = rescale_to_std(&x, 0.05).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_keeps_mean_offset() {
        let x: Vec<f64> = (0..100).map(|i| 1.0 + if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let y = rescale_to_std(&x, 0.05).unwrap();
        let mean = y.iter().sum::<f64>() / 100.0;
        assert!((mean - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rescale_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..16000).map(|_| rng.sample(StandardNormal)).collect();
        let y = rescale_to_std(&x, 0.05).unwrap();
        assert!((empirical_std(&y) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn rescale_rejects_constant() {
        assert!(matches!(
            rescale_to_std(&[0.3; 64], 0.05),
            Err(Error::Degenerate(_))
        ));
    }
}
