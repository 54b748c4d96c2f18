use log::warn;
use serde::Serialize;

use super::adam::AdamState;
use super::phase::Projector;
use super::RirParams;
use crate::error::{Error, Result};
use crate::loss::{compressed_target, operator_loss, operator_loss_and_grad};
use crate::stft::{Spectrogram, Stft, StftConfig};

/// Weight of the negative-decay penalty.
pub const DECAY_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RirGradient {
    pub log_weights: Vec<f64>,
    pub decays: Vec<f64>,
    pub phase: Vec<f64>,
}

impl RirGradient {
    pub fn is_finite(&self) -> bool {
        self.log_weights
            .iter()
            .chain(&self.decays)
            .chain(&self.phase)
            .all(|v| v.is_finite())
    }

    fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_weights.iter().chain(&self.decays).chain(&self.phase).copied()
    }
}

fn penalty(p: &RirParams) -> f64 {
    DECAY_PENALTY * p.decays.iter().map(|a| (-a).max(0.0).powi(2)).sum::<f64>()
}

/// One fitting problem: a fixed clean estimate and the mixture channel it
/// should explain.
pub struct RirProblem {
    engine: Stft,
    x_spec: Spectrogram,
    target: Spectrogram,
    projector: Projector,
    taps: usize,
    is_reference: bool,
}

impl std::fmt::Debug for RirProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RirProblem")
            .field("config", self.engine.config())
            .field("frames", &self.x_spec.frames())
            .field("taps", &self.taps)
            .field("is_reference", &self.is_reference)
            .finish()
    }
}

impl RirProblem {
    pub fn new(config: StftConfig, x0_hat: &[f64], y: &[f64], taps: usize, is_reference: bool) -> Result<Self> {
        if x0_hat.len() != y.len() {
            return Err(Error::shape(format!(
                "clean estimate has {} samples, mixture has {}",
                x0_hat.len(),
                y.len()
            )));
        }
        let engine = Stft::new(config)?;
        let x_spec = engine.forward(x0_hat)?;
        let target = compressed_target(&engine, y)?;
        Ok(Self {
            projector: Projector::new(config, taps)?,
            engine,
            x_spec,
            target,
            taps,
            is_reference,
        })
    }

    /// Reuses the mixture side with a new clean estimate.
    pub fn set_estimate(&mut self, x0_hat: &[f64]) -> Result<()> {
        if x0_hat.len() != self.x_spec.signal_len() {
            return Err(Error::shape("clean estimate length changed"));
        }
        self.x_spec = self.engine.forward(x0_hat)?;
        Ok(())
    }

    pub fn is_reference(&self) -> bool {
        self.is_reference
    }

    fn check(&self, p: &RirParams) -> Result<()> {
        if p.taps() != self.taps || p.config() != self.engine.config() {
            return Err(Error::shape("RIR parameters do not match the problem"));
        }
        Ok(())
    }

    pub fn objective(&self, p: &RirParams) -> Result<f64> {
        self.check(p)?;
        Ok(operator_loss(&self.engine, &self.x_spec, &p.to_filter(), &self.target)? + penalty(p))
    }

    pub fn objective_and_grad(&self, p: &RirParams) -> Result<(f64, RirGradient)> {
        self.check(p)?;
        let h = p.to_filter();
        let eval = operator_loss_and_grad(&self.engine, &self.x_spec, &h, &self.target)?;
        let gh = eval.filter_gradient(&self.x_spec, self.taps)?;
        let bins = p.bins();
        let bands = p.num_bands();
        let it = p.interp();
        let mut g = RirGradient {
            log_weights: vec![0.0; bands],
            decays: vec![0.0; bands],
            phase: vec![0.0; self.taps * bins],
        };
        for n in 0..self.taps {
            let nf = n as f64;
            for k in 0..bins {
                let i = n * bins + k;
                let prod = gh.data()[i].conj() * h.data()[i];
                g.phase[i] = -prod.im;
                let gl = prod.re;
                let (b, t) = (it.lo[k], it.t[k]);
                g.log_weights[b] += (1.0 - t) * gl;
                g.log_weights[b + 1] += t * gl;
                g.decays[b] -= nf * (1.0 - t) * gl;
                g.decays[b + 1] -= nf * t * gl;
            }
        }
        for (gd, a) in g.decays.iter_mut().zip(&p.decays) {
            *gd -= 2.0 * DECAY_PENALTY * (-a).max(0.0);
        }
        Ok((eval.loss + penalty(p), g))
    }

    /// Phase update from the projected filter; magnitude parameters are kept.
    pub fn project_phase(&self, p: &mut RirParams) -> Result<()> {
        let h = self.projector.project(&p.to_filter(), self.is_reference)?;
        p.set_phase_from(&h)
    }
}

/// Objective `||c(y) - c(A_psi(x0_hat))||^2 + R(psi)` and its gradient.
pub fn rir_objective(p: &RirParams, x0_hat: &[f64], y_ref: &[f64]) -> Result<(f64, RirGradient)> {
    RirProblem::new(*p.config(), x0_hat, y_ref, p.taps(), true)?.objective_and_grad(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RirStatus {
    Completed,
    /// Stopped before iteration `iteration` because the gradient was not finite.
    NonFiniteGradient { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct RirFit {
    pub params: RirParams,
    /// Objective at the start of each iteration, followed by the final value.
    pub objective: Vec<f64>,
    pub status: RirStatus,
}

impl RirFit {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().unwrap_or(&f64::NAN)
    }
}

/// `n_its` rounds of Adam followed by phase projection, warm-started from
/// `p_init` and continuing the given optimiser state.
pub fn estimate_rir(p_init: &RirParams, problem: &RirProblem, n_its: usize, adam: &mut AdamState) -> Result<RirFit> {
    let mut p = p_init.clone();
    let mut objective = Vec::with_capacity(n_its + 1);
    let n_params = 2 * p.num_bands() + p.phase.len();
    if adam.len() != n_params {
        return Err(Error::shape(format!(
            "optimiser tracks {} values, parameters have {n_params}",
            adam.len()
        )));
    }
    for it in 0..n_its {
        let (value, grad) = problem.objective_and_grad(&p)?;
        if !value.is_finite() || !grad.is_finite() {
            warn!("RIR estimation stopped at iteration {it}: non-finite gradient");
            if objective.is_empty() {
                objective.push(value);
            }
            return Ok(RirFit {
                params: p,
                objective,
                status: RirStatus::NonFiniteGradient { iteration: it },
            });
        }
        objective.push(value);
        let values = p.log_weights.iter_mut().chain(p.decays.iter_mut()).chain(p.phase.iter_mut());
        adam.step(values, grad.flat());
        p.clamp_decays();
        problem.project_phase(&mut p)?;
    }
    objective.push(problem.objective(&p)?);
    Ok(RirFit {
        params: p,
        objective,
        status: RirStatus::Completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rir::{settle_phase, AdamConfig};
    use crate::subband::apply_operator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(seed: u64) -> (RirParams, Vec<f64>, Vec<f64>) {
        let cfg = StftConfig::new(32, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = RirParams::init(cfg, 3, 8, &mut rng).unwrap();
        for (w, a) in p.log_weights.iter_mut().zip(p.decays.iter_mut()) {
            *w = rng.random_range(-1.0..0.5);
            *a = rng.random_range(0.2..1.0);
        }
        let x: Vec<f64> = (0..256).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..256).map(|_| rng.sample(StandardNormal)).collect();
        (p, x, y)
    }

    fn fd_check(p: &RirParams, x: &[f64], y: &[f64], pick: impl Fn(&mut RirParams) -> &mut Vec<f64>, grad: &[f64]) {
        let eps = 1e-4;
        let n = grad.len();
        let floor = 1e-6 * grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for i in [0, n / 2, n - 1] {
            let mut pp = p.clone();
            pick(&mut pp)[i] += eps;
            let mut pm = p.clone();
            pick(&mut pm)[i] -= eps;
            let fp = rir_objective(&pp, x, y).unwrap().0;
            let fm = rir_objective(&pm, x, y).unwrap().0;
            let fd = (fp - fm) / (2.0 * eps);
            assert!(
                (fd - grad[i]).abs() <= 1e-4 * fd.abs() + floor,
                "coordinate {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let (p, x, y) = instance(seed);
            let (_, g) = rir_objective(&p, &x, &y).unwrap();
            fd_check(&p, &x, &y, |q| &mut q.log_weights, &g.log_weights);
            fd_check(&p, &x, &y, |q| &mut q.decays, &g.decays);
            fd_check(&p, &x, &y, |q| &mut q.phase, &g.phase);
        }
    }

    #[test]
    fn zero_estimate_gives_target_energy() {
        let (p, _, y) = instance(4);
        let x = vec![0.0; y.len()];
        let (v, g) = rir_objective(&p, &x, &y).unwrap();
        let engine = Stft::new(*p.config()).unwrap();
        let energy = compressed_target(&engine, &y).unwrap().norm_sqr();
        assert!((v - energy).abs() < 1e-12 * energy);
        assert!(g.log_weights.iter().chain(&g.decays).chain(&g.phase).all(|v| *v == 0.0));
    }

    #[test]
    fn exact_model_is_a_global_minimum() {
        let (p, x, _) = instance(5);
        let y = apply_operator(&x, &p.to_filter()).unwrap();
        let (v, g) = rir_objective(&p, &x, &y).unwrap();
        assert!(v < 1e-20, "{v}");
        assert!(g.log_weights.iter().chain(&g.decays).chain(&g.phase).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_iterations_return_the_input() {
        let (p, x, y) = instance(6);
        let prob = RirProblem::new(*p.config(), &x, &y, p.taps(), true).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), 2 * 3 + p.phase.len(), 6);
        let fit = estimate_rir(&p, &prob, 0, &mut adam).unwrap();
        assert_eq!(fit.params, p);
        assert_eq!(fit.objective.len(), 1);
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn estimation_is_deterministic_and_reduces_objective() {
        let (mut truth, x, _) = instance(7);
        truth.decays = vec![0.3, 0.5, 0.8];
        settle_phase(&mut truth, true, 50, 0.0).unwrap();
        let y = apply_operator(&x, &truth.to_filter()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let p = RirParams::init(*truth.config(), 3, truth.taps(), &mut rng).unwrap();
        let prob = RirProblem::new(*p.config(), &x, &y, p.taps(), true).unwrap();
        let run = || {
            let mut adam = AdamState::new(AdamConfig::default(), 2 * 3 + p.phase.len(), 6);
            estimate_rir(&p, &prob, 30, &mut adam).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.status, RirStatus::Completed);
        assert!(a.final_objective() < 0.2 * a.objective[0], "{:?}", a.objective);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (p, x, y) = instance(8);
        let prob = RirProblem::new(*p.config(), &x, &y, p.taps(), true).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), 3, 1);
        assert!(estimate_rir(&p, &prob, 1, &mut adam).is_err());
    }
}
