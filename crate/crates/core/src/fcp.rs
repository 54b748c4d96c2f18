//! Forward convolutive prediction: closed-form weighted least-squares
//! estimation of a sub-band filter that maps a source estimate onto a
//! mixture channel.
//!
//! For every frequency `k` independently,
//!
//! ```text
//! H[., k] = argmin_H  sum_m  |Y[m, k] - sum_n H[n, k] X[m - n, k]|^2 / lambda[m, k]
//! ```
//!
//! solved through the `taps x taps` Hermitian normal equations.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::stft::Spectrogram;
use crate::subband::{subband_convolve, subband_convolve_adjoint, SubbandFilter};

/// Diagonal loading relative to `trace / taps`, always applied.
pub const FCP_DIAGONAL_LOADING: f64 = 1e-10;

/// Per-bin weights `lambda[m, k]` (frame-major), shared by every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FcpWeights {
    data: Vec<f64>,
    frames: usize,
    bins: usize,
}

impl FcpWeights {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, m: usize, k: usize) -> f64 {
        self.data[m * self.bins + k]
    }

    /// Uniform weights; mostly useful for tests.
    pub fn uniform(frames: usize, bins: usize, value: f64) -> Self {
        Self {
            data: vec![value; frames * bins],
            frames,
            bins,
        }
    }

    pub fn from_data(data: Vec<f64>, frames: usize, bins: usize) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::shape("weight tensor does not match frames x bins"));
        }
        if data.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("FCP weights must be finite and strictly positive"));
        }
        Ok(Self { data, frames, bins })
    }
}

/// `lambda[m, k] = E[m, k] + eps * max E`, with `E` the channel-mean power.
pub fn fcp_weights(ys: &[Spectrogram], epsilon: f64) -> Result<FcpWeights> {
    let first = ys
        .first()
        .ok_or_else(|| Error::invalid("FCP weights need at least one channel"))?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if ys.iter().any(|y| !y.same_shape(first)) {
        return Err(Error::shape("all mixture spectrograms must share one shape"));
    }
    let c = ys.len() as f64;
    let mut data = vec![0.0; first.data().len()];
    for y in ys {
        for (d, z) in data.iter_mut().zip(y.data()) {
            *d += z.norm_sqr();
        }
    }
    for d in &mut data {
        *d /= c;
    }
    let max = data.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::degenerate("mixture is all zeros; FCP weights vanish"));
    }
    for d in &mut data {
        *d += epsilon * max;
    }
    Ok(FcpWeights {
        data,
        frames: first.frames(),
        bins: first.bins(),
    })
}

/// Filter plus the per-bin factorizations of the normal matrices, kept so
/// gradients can be pushed back through the solve.
#[derive(Debug, Clone)]
pub struct FcpSolution {
    pub filter: SubbandFilter,
    factors: Arc<Vec<Cholesky>>,
}

fn check_shapes(y: &Spectrogram, x: &Spectrogram, w: &FcpWeights, taps: usize) -> Result<()> {
    if taps == 0 {
        return Err(Error::invalid("FCP needs at least one tap"));
    }
    if !y.same_shape(x) {
        return Err(Error::shape(format!(
            "mixture is {}x{}, source estimate is {}x{}",
            y.frames(),
            y.bins(),
            x.frames(),
            x.bins()
        )));
    }
    if w.frames != y.frames() || w.bins != y.bins() {
        return Err(Error::shape("FCP weights do not match the spectrogram shape"));
    }
    Ok(())
}

/// One frequency column of a frame-major tensor, split into real and
/// imaginary parts.
struct Column {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Column {
    fn new(frames: usize) -> Self {
        Self {
            re: vec![0.0; frames],
            im: vec![0.0; frames],
        }
    }

    fn load(&mut self, data: &[Complex64], bins: usize, k: usize) {
        for (m, (r, i)) in self.re.iter_mut().zip(&mut self.im).enumerate() {
            let z = data[m * bins + k];
            *r = z.re;
            *i = z.im;
        }
    }

    fn scale(&mut self, w: &[f64]) {
        for ((r, i), w) in self.re.iter_mut().zip(&mut self.im).zip(w) {
            *r *= w;
            *i *= w;
        }
    }
}

/// `sum_q conj(a[q]) b[off + q]` for `q < len`.
fn dot_conj(a: &Column, len: usize, b: &Column, off: usize) -> Complex64 {
    let (ar, ai) = (&a.re[..len], &a.im[..len]);
    let (br, bi) = (&b.re[off..off + len], &b.im[off..off + len]);
    let mut re = [0.0; 4];
    let mut im = [0.0; 4];
    let mut chunks = ar.chunks_exact(4).zip(ai.chunks_exact(4)).zip(br.chunks_exact(4).zip(bi.chunks_exact(4)));
    for ((xr, xi), (yr, yi)) in &mut chunks {
        for l in 0..4 {
            re[l] += xr[l] * yr[l] + xi[l] * yi[l];
            im[l] += xr[l] * yi[l] - xi[l] * yr[l];
        }
    }
    let tail = len - len % 4;
    let mut out = Complex64::new(re[0] + re[1] + re[2] + re[3], im[0] + im[1] + im[2] + im[3]);
    for q in tail..len {
        out += Complex64::new(ar[q], -ai[q]) * Complex64::new(br[q], bi[q]);
    }
    out
}

pub fn fcp_estimate(
    y: &Spectrogram,
    x_hat: &Spectrogram,
    weights: &FcpWeights,
    n_taps: usize,
) -> Result<SubbandFilter> {
    Ok(fcp_solve(y, x_hat, weights, n_taps)?.filter)
}

pub fn fcp_solve(
    y: &Spectrogram,
    x_hat: &Spectrogram,
    weights: &FcpWeights,
    n_taps: usize,
) -> Result<FcpSolution> {
    Ok(fcp_solve_many(&[y], x_hat, weights, n_taps)?.remove(0))
}

/// FCP for several mixture channels against one source estimate. The normal
/// matrices depend only on `x_hat` and the weights, so they are factored once.
pub fn fcp_solve_many(
    ys: &[&Spectrogram],
    x_hat: &Spectrogram,
    weights: &FcpWeights,
    n_taps: usize,
) -> Result<Vec<FcpSolution>> {
    for y in ys {
        check_shapes(y, x_hat, weights, n_taps)?;
    }
    let frames = x_hat.frames();
    let bins = x_hat.bins();
    let t = n_taps;
    let used = t.min(frames);

    let mut filters: Vec<SubbandFilter> = ys.iter().map(|_| SubbandFilter::zeros(t, *x_hat.config())).collect();
    let mut factors = Vec::with_capacity(bins);
    let mut dense = vec![Complex64::new(0.0, 0.0); t * t];
    let mut b = vec![Complex64::new(0.0, 0.0); t];
    let mut x = Column::new(frames);
    let mut yw = Column::new(frames);
    let mut s = Column::new(frames);
    let mut inv_w = vec![0.0; frames];
    for k in 0..bins {
        x.load(x_hat.data(), bins, k);
        for (m, w) in inv_w.iter_mut().enumerate() {
            *w = 1.0 / weights.data[m * bins + k];
        }
        // dense[i][j] = sum_m conj(X[m - i]) X[m - j] / lambda[m]
        dense.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for j in 0..used {
            for m in 0..frames - j {
                s.re[m] = x.re[m] * inv_w[m + j];
                s.im[m] = x.im[m] * inv_w[m + j];
            }
            for i in j..used {
                let v = dot_conj(&x, frames - i, &s, i - j);
                dense[i * t + j] = v;
                dense[j * t + i] = v.conj();
            }
        }
        let chol = Cholesky::factor_loaded(&dense, t, FCP_DIAGONAL_LOADING);
        for (y, filter) in ys.iter().zip(&mut filters) {
            // b[i] = sum_m conj(X[m - i]) Y[m] / lambda[m]
            yw.load(y.data(), bins, k);
            yw.scale(&inv_w);
            for (i, bi) in b.iter_mut().enumerate() {
                *bi = if i < used {
                    dot_conj(&x, frames - i, &yw, i)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            chol.solve_in_place(&mut b);
            for n in 0..t {
                filter.tap_mut(n)[k] = b[n];
            }
        }
        factors.push(chol);
    }
    let factors = Arc::new(factors);
    Ok(filters
        .into_iter()
        .map(|filter| FcpSolution {
            filter,
            factors: factors.clone(),
        })
        .collect())
}

impl FcpSolution {
    /// Gradient with respect to `x_hat` of a loss that depends on the
    /// estimated filter, given the loss gradient `grad_filter` with respect to
    /// the taps. Differentiates through the weighted normal equations
    /// (the weights depend only on the mixtures and stay fixed).
    pub fn backprop(
        &self,
        grad_filter: &SubbandFilter,
        y: &Spectrogram,
        x_hat: &Spectrogram,
        weights: &FcpWeights,
    ) -> Result<Spectrogram> {
        let t = self.filter.taps();
        let bins = self.filter.bins();
        if grad_filter.taps() != t || grad_filter.bins() != bins {
            return Err(Error::shape("filter gradient does not match the FCP filter"));
        }
        // v = R^{-1} grad, per bin
        let mut v = SubbandFilter::zeros(t, *y.config());
        let mut col = vec![Complex64::new(0.0, 0.0); t];
        for (k, chol) in self.factors.iter().enumerate() {
            for n in 0..t {
                col[n] = grad_filter.at(n, k);
            }
            chol.solve_in_place(&mut col);
            for n in 0..t {
                v.tap_mut(n)[k] = col[n];
            }
        }
        // residual e = Y - conv(X, H), weighted
        let mut we = subband_convolve(x_hat, &self.filter)?;
        for ((z, yv), w) in we.data_mut().iter_mut().zip(y.data()).zip(&weights.data) {
            *z = (yv - *z) / *w;
        }
        let mut wxv = subband_convolve(x_hat, &v)?;
        for (z, w) in wxv.data_mut().iter_mut().zip(&weights.data) {
            *z /= *w;
        }
        let mut out = subband_convolve_adjoint(&we, &v)?;
        let second = subband_convolve_adjoint(&wxv, &self.filter)?;
        for (o, s) in out.data_mut().iter_mut().zip(second.data()) {
            *o -= s;
        }
        Ok(out)
    }
}

/// The weighted objective FCP minimizes, for one channel.
pub fn fcp_objective(
    y: &Spectrogram,
    x_hat: &Spectrogram,
    weights: &FcpWeights,
    filter: &SubbandFilter,
) -> Result<f64> {
    check_shapes(y, x_hat, weights, filter.taps())?;
    let pred = subband_convolve(x_hat, filter)?;
    Ok(pred
        .data()
        .iter()
        .zip(y.data())
        .zip(&weights.data)
        .map(|((p, yv), w)| (yv - p).norm_sqr() / w)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cplx(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    fn random_spec(frames: usize, cfg: StftConfig, rng: &mut ChaCha8Rng) -> Spectrogram {
        let mut s = Spectrogram::zeros(frames, 64, cfg);
        for z in s.data_mut() {
            *z = cplx(rng);
        }
        s
    }

    fn cfg5() -> StftConfig {
        StftConfig::new(8, 2).unwrap()
    }

    #[test]
    fn shared_factorization_matches_single_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_spec(30, cfg5(), &mut rng);
        let ys: Vec<Spectrogram> = (0..3).map(|_| random_spec(30, cfg5(), &mut rng)).collect();
        let data: Vec<f64> = (0..30 * 5).map(|_| rng.random_range(0.5..2.0)).collect();
        let w = FcpWeights::from_data(data, 30, 5).unwrap();
        let refs: Vec<&Spectrogram> = ys.iter().collect();
        let many = fcp_solve_many(&refs, &x, &w, 4).unwrap();
        for (y, sol) in ys.iter().zip(&many) {
            assert_eq!(fcp_solve(y, &x, &w, 4).unwrap().filter, sol.filter);
        }
        assert!(fcp_solve_many(&[], &x, &w, 4).unwrap().is_empty());
    }

    #[test]
    fn weights_constant_field() {
        let cfg = cfg5();
        let mut y = Spectrogram::zeros(4, 64, cfg);
        for z in y.data_mut() {
            *z = Complex64::from_polar(1.0, 0.3);
        }
        let w = fcp_weights(&[y], 0.001).unwrap();
        assert!(w.data().iter().all(|v| (v - 1.001).abs() < 1e-12));
    }

    #[test]
    fn weights_average_channels() {
        let cfg = cfg5();
        let mut y1 = Spectrogram::zeros(4, 64, cfg);
        for z in y1.data_mut() {
            *z = Complex64::new(0.0, 2.0);
        }
        let y2 = Spectrogram::zeros(4, 64, cfg);
        let w = fcp_weights(&[y1, y2], 0.001).unwrap();
        assert!(w.data().iter().all(|v| (v - 2.002).abs() < 1e-12));
    }

    #[test]
    fn weights_match_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ys: Vec<_> = (0..3).map(|_| random_spec(6, cfg5(), &mut rng)).collect();
        let w = fcp_weights(&ys, 0.001).unwrap();
        let mean = |m: usize, k: usize| ys.iter().map(|y| y.at(m, k).norm_sqr()).sum::<f64>() / 3.0;
        let mut max: f64 = 0.0;
        for m in 0..6 {
            for k in 0..5 {
                max = max.max(mean(m, k));
            }
        }
        for m in 0..6 {
            for k in 0..5 {
                assert!((w.at(m, k) - (mean(m, k) + 0.001 * max)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_reject_silence() {
        let y = Spectrogram::zeros(4, 64, cfg5());
        assert!(matches!(fcp_weights(&[y], 0.001), Err(Error::Degenerate(_))));
    }

    #[test]
    fn self_prediction_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_spec(30, cfg5(), &mut rng);
        let w = FcpWeights::from_data(
            (0..30 * 5).map(|_| rng.random_range(0.1..2.0)).collect(),
            30,
            5,
        )
        .unwrap();
        let h = fcp_estimate(&x, &x, &w, 4).unwrap();
        for n in 0..4 {
            for k in 0..5 {
                let want = if n == 0 { 1.0 } else { 0.0 };
                assert!((h.at(n, k) - want).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn recovers_planted_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_spec(50, cfg5(), &mut rng);
        let data = (0..15).map(|_| cplx(&mut rng)).collect();
        let truth = SubbandFilter::new(data, 3, cfg5()).unwrap();
        let y = subband_convolve(&x, &truth).unwrap();
        let h = fcp_estimate(&y, &x, &FcpWeights::uniform(50, 5, 1.0), 3).unwrap();
        for (a, b) in h.data().iter().zip(truth.data()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_spec(5, cfg5(), &mut rng);
        let y = random_spec(6, cfg5(), &mut rng);
        let w = FcpWeights::uniform(6, 5, 1.0);
        assert!(matches!(fcp_estimate(&y, &x, &w, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_spec(20, cfg5(), &mut rng);
        let y = random_spec(20, cfg5(), &mut rng);
        let w = fcp_weights(&[y.clone()], 0.001).unwrap();
        let h = fcp_estimate(&y, &x, &w, 3).unwrap();
        for a in [0.01, -3.0, 250.0] {
            let mut xs = x.clone();
            for z in xs.data_mut() {
                *z *= a;
            }
            let hs = fcp_estimate(&y, &xs, &w, 3).unwrap();
            for (p, q) in hs.data().iter().zip(h.data()) {
                assert!((p * a - q).norm() < 1e-8 * q.norm().max(1.0));
            }
        }
    }

    #[test]
    fn more_taps_than_frames_is_not_fatal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_spec(3, cfg5(), &mut rng);
        let y = random_spec(3, cfg5(), &mut rng);
        let h = fcp_estimate(&y, &x, &FcpWeights::uniform(3, 5, 1.0), 6).unwrap();
        assert!(h.data().iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn first_order_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let frames = rng.random_range(6..16);
            let taps = rng.random_range(1..4);
            let x = random_spec(frames, cfg5(), &mut rng);
            let y = random_spec(frames, cfg5(), &mut rng);
            let w = fcp_weights(&[y.clone()], 0.001).unwrap();
            let h = fcp_estimate(&y, &x, &w, taps).unwrap();
            let base = fcp_objective(&y, &x, &w, &h).unwrap();
            let mut dir: Vec<Complex64> = (0..taps * 5).map(|_| cplx(&mut rng)).collect();
            let norm = dir.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for z in &mut dir {
                *z *= 1e-4 / norm;
            }
            let mut hp = h.clone();
            for (z, d) in hp.data_mut().iter_mut().zip(&dir) {
                *z += d;
            }
            let perturbed = fcp_objective(&y, &x, &w, &hp).unwrap();
            assert!(perturbed >= base - 1e-12 * base.abs().max(1.0));
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames = 9;
        let taps = 2;
        let x = random_spec(frames, cfg5(), &mut rng);
        let y = random_spec(frames, cfg5(), &mut rng);
        let w = fcp_weights(&[y.clone()], 0.01).unwrap();
        let probe: Vec<Complex64> = (0..taps * 5).map(|_| cplx(&mut rng)).collect();
        // loss(X) = <probe, FCP(Y, X)>
        let loss = |x: &Spectrogram| -> f64 {
            let h = fcp_estimate(&y, x, &w, taps).unwrap();
            h.data().iter().zip(&probe).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
        };
        let sol = fcp_solve(&y, &x, &w, taps).unwrap();
        let gf = SubbandFilter::new(probe.clone(), taps, cfg5()).unwrap();
        let grad = sol.backprop(&gf, &y, &x, &w).unwrap();
        let eps = 1e-6;
        for i in 0..x.data().len() {
            for (dir, analytic) in [
                (Complex64::new(1.0, 0.0), grad.data()[i].re),
                (Complex64::new(0.0, 1.0), grad.data()[i].im),
            ] {
                let mut xp = x.clone();
                xp.data_mut()[i] += dir * eps;
                let mut xm = x.clone();
                xm.data_mut()[i] -= dir * eps;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
                assert!((fd - analytic).abs() < 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {analytic}");
            }
        }
    }
}
