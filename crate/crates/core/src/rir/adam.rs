use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    /// Step size for log-weights and decays.
    pub lr_magnitude: f64,
    pub lr_phase: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_magnitude: 0.1,
            lr_phase: 0.5,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over one flat parameter vector, where the first
/// `magnitude_len` entries use `lr_magnitude` and the rest `lr_phase`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    magnitude_len: usize,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize, magnitude_len: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            magnitude_len: magnitude_len.min(len),
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// Applies one update in place. `params` and `grad` are visited in the
    /// same flat order.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut f64>,
        grad: impl IntoIterator<Item = f64>,
    ) {
        let c = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let moments = self.first_moment.iter_mut().zip(self.second_moment.iter_mut());
        for (i, ((p, g), (m, v))) in params.into_iter().zip(grad).zip(moments).enumerate() {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let lr = if i < self.magnitude_len { c.lr_magnitude } else { c.lr_phase };
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new(AdamConfig::default(), 3, 1);
        let mut p = vec![1.0, 1.0, 1.0];
        s.step(p.iter_mut(), [2.0, -3.0, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] - 1.5).abs() < 1e-7);
        assert_eq!(p[2], 1.0);
    }

    /// Two hand-computed steps with beta1 = 0.9, beta2 = 0.99, lr = 0.1.
    #[test]
    fn second_step_matches_hand_computation() {
        let mut s = AdamState::new(AdamConfig::default(), 1, 1);
        let mut p = vec![0.0];
        s.step(p.iter_mut(), [1.0]);
        s.step(p.iter_mut(), [0.5]);
        let m = 0.9 * 0.1 + 0.1 * 0.5;
        let v: f64 = 0.99 * 0.01 + 0.01 * 0.25;
        let mh = m / (1.0 - 0.81);
        let vh = v / (1.0 - 0.9801);
        let want = -0.1 / (1.0 + 1e-8) - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((p[0] - want).abs() < 1e-12);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut s = AdamState::new(
            AdamConfig {
                lr_magnitude: 0.05,
                ..AdamConfig::default()
            },
            2,
            2,
        );
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 8.0 * (p[1] + 0.5)];
            s.step(p.iter_mut(), g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3, "{p:?}");
    }
}
