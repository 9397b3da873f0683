//! Time-frequency multipliers: Gaussian regularisation `e^{-|D_t|²/λ}`, the
//! band cutoffs `m(D_t/μ)` and `m_λ(D_t/μ)`, and the weight action
//! `Q^φ_{δ,τ} = e^{-δ|D_t|²/(2τ)} e^{τφ}`.
//!
//! Signals are zero-padded to a power of two and all multipliers are applied
//! on the discrete frequency grid of the padded window.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};

/// Largest admissible `τ · max φ` before `e^{τφ}` is refused.
pub const MAX_EXPONENT: f64 = 700.0;

/// Kernel mass allowed to wrap around the padded window.
pub const WRAP_TOLERANCE: f64 = 1e-10;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// Angular frequencies of an `n`-point DFT with spacing `dt`, in FFT order.
pub fn fft_frequencies(n: usize, dt: f64) -> Vec<f64> {
    let base = 2.0 * PI / (n as f64 * dt);
    (0..n).map(|k| if k <= n / 2 { k as f64 * base } else { (k as f64 - n as f64) * base }).collect()
}

/// Multiply the spectrum of a real buffer by `mult(ξ)` in place.
fn filter_real(buf: &mut [f64], dt: f64, mult: &dyn Fn(f64) -> f64) {
    let n = buf.len();
    let (fwd, inv) = plans(n);
    let mut c: Vec<Complex64> = buf.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut c);
    for (z, xi) in c.iter_mut().zip(fft_frequencies(n, dt)) {
        *z *= mult(xi);
    }
    inv.process(&mut c);
    let s = 1.0 / n as f64;
    for (b, z) in buf.iter_mut().zip(&c) {
        *b = z.re * s;
    }
}

/// Padding (per side, in samples) that keeps a regularisation with
/// parameter `λ` away from wraparound: eight standard deviations `sqrt(2/λ)`.
pub fn padding_for(lambda: f64, dt: f64) -> usize {
    (8.0 * (2.0 / lambda).sqrt() / dt).ceil() as usize
}

/// Uniform samples over a window, stored inside a zero-padded buffer whose
/// length is a power of two.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub dt: f64,
    /// Number of samples in the window.
    pub len: usize,
    /// Index of the first window sample in `data` (the left padding).
    pub offset: usize,
    pub data: Vec<f64>,
}

impl TimeSignal {
    /// Place `samples` in a buffer with at least `padding` zeros on each side.
    pub fn new(samples: &[f64], dt: f64, padding: usize) -> Result<Self> {
        if samples.is_empty() || !(dt > 0.0) {
            return Err(Error::arg("time signal needs samples and a positive spacing"));
        }
        let total = (samples.len() + 2 * padding).next_power_of_two();
        let mut data = vec![0.0; total];
        data[padding..padding + samples.len()].copy_from_slice(samples);
        Ok(TimeSignal { dt, len: samples.len(), offset: padding, data })
    }

    /// Signal padded for regularisations down to `lambda_min`.
    pub fn for_regularization(samples: &[f64], dt: f64, lambda_min: f64) -> Result<Self> {
        if !(lambda_min > 0.0) {
            return Err(Error::arg("lambda must be positive"));
        }
        Self::new(samples, dt, padding_for(lambda_min, dt))
    }

    pub fn window(&self) -> &[f64] {
        &self.data[self.offset..self.offset + self.len]
    }

    /// Window sample times, starting at zero.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|i| i as f64 * self.dt).collect()
    }

    pub fn padding(&self) -> usize {
        self.data.len() - self.len
    }

    /// Angular frequencies of the padded buffer.
    pub fn frequencies(&self) -> Vec<f64> {
        fft_frequencies(self.data.len(), self.dt)
    }

    /// Same layout, spectrum multiplied by `mult(ξ)`.
    pub fn apply_multiplier(&self, mult: impl Fn(f64) -> f64) -> TimeSignal {
        let mut out = self.clone();
        filter_real(&mut out.data, self.dt, &mult);
        out
    }

    /// Relative kernel mass that a multiplier moves farther than the total
    /// padding: a unit impulse is filtered and the response beyond that
    /// circular distance is measured.
    pub fn wraparound_mass(&self, mult: impl Fn(f64) -> f64) -> f64 {
        let n = self.data.len();
        let mut delta = vec![0.0; n];
        delta[0] = 1.0;
        filter_real(&mut delta, self.dt, &mult);
        let pad = self.padding();
        let total: f64 = delta.iter().map(|x| x.abs()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let far: f64 = delta.iter().enumerate().filter(|(d, _)| (*d).min(n - d) > pad).map(|(_, x)| x.abs()).sum();
        far / total
    }

    pub fn norm_l2(&self) -> f64 {
        (self.dt * self.data.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }
}

/// `e^{-|D_t|²/λ} f`, i.e. convolution with `(λ/4π)^{1/2} e^{-λ s²/4}`.
pub fn gaussian_regularize(f: &TimeSignal, lambda: f64) -> Result<TimeSignal> {
    if !(lambda > 0.0) {
        return Err(Error::arg("lambda must be positive"));
    }
    let nyquist = PI / f.dt;
    let cut = (-nyquist * nyquist / lambda).exp();
    if cut > WRAP_TOLERANCE {
        return Err(Error::Configuration(format!(
            "sample spacing {} too coarse for lambda = {lambda}: multiplier at Nyquist is {cut:.2e}; use lambda <= {:.4e} or refine dt",
            f.dt,
            nyquist * nyquist / -WRAP_TOLERANCE.ln()
        )));
    }
    let mult = move |xi: f64| (-xi * xi / lambda).exp();
    let wrap = f.wraparound_mass(mult);
    if wrap > WRAP_TOLERANCE {
        return Err(Error::Configuration(format!(
            "padding of {} samples too short for lambda = {lambda}: wraparound mass {wrap:.2e} (need {} per side)",
            f.padding(),
            padding_for(lambda, f.dt)
        )));
    }
    Ok(f.apply_multiplier(mult))
}

/// Direct quadrature `Σ_j dt K_λ(t_i - t_j) f_j` over the window samples.
pub fn gaussian_kernel_quadrature(samples: &[f64], dt: f64, lambda: f64) -> Vec<f64> {
    let c = (lambda / (4.0 * PI)).sqrt() * dt;
    let n = samples.len();
    let kern: Vec<f64> = (0..n).map(|d| c * (-lambda * (d as f64 * dt).powi(2) / 4.0).exp()).collect();
    (0..n).map(|i| (0..n).map(|j| kern[i.abs_diff(j)] * samples[j]).sum()).collect()
}

fn bump_g(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth even cutoff: 1 on `|s| <= plateau`, 0 on `|s| >= 1`, with an
/// exponential blend in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpProfile {
    pub plateau: f64,
}

impl Default for BumpProfile {
    fn default() -> Self {
        BumpProfile { plateau: 0.75 }
    }
}

impl BumpProfile {
    pub fn eval(&self, s: f64) -> f64 {
        let a = s.abs();
        if a <= self.plateau {
            1.0
        } else if a >= 1.0 {
            0.0
        } else {
            let up = bump_g(1.0 - a);
            up / (up + bump_g(a - self.plateau))
        }
    }

    pub fn regularized(&self, lambda: f64) -> Result<RegularizedProfile> {
        if !(lambda > 0.0) {
            return Err(Error::arg("lambda must be positive"));
        }
        Ok(RegularizedProfile { profile: *self, lambda })
    }
}

/// `m_λ = e^{-|D_s|²/λ} m`, regularised in the profile's own variable and
/// evaluated by quadrature: closed form on the plateau, composite Simpson
/// over the two transition bands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedProfile {
    pub profile: BumpProfile,
    pub lambda: f64,
}

impl RegularizedProfile {
    pub fn sigma(&self) -> f64 {
        (2.0 / self.lambda).sqrt()
    }

    fn kernel(&self, y: f64) -> f64 {
        (self.lambda / (4.0 * PI)).sqrt() * (-self.lambda * y * y / 4.0).exp()
    }

    pub fn eval(&self, s: f64) -> f64 {
        let p = self.profile.plateau;
        let r = self.lambda.sqrt() / 2.0;
        let plateau = 0.5 * (erf((s + p) * r) - erf((s - p) * r));
        let reach = 14.0 * self.sigma();
        let mut total = plateau;
        for (lo, hi) in [(p, 1.0), (-1.0, -p)] {
            let a = lo.max(s - reach);
            let b = hi.min(s + reach);
            if b > a {
                total += simpson(|x| self.kernel(s - x) * self.profile.eval(x), a, b, 2000);
            }
        }
        total
    }

    /// Upper bound on `m_λ(s)` for `|s| > 1` from the Gaussian tail.
    pub fn tail_bound(&self, s: f64) -> f64 {
        let d = s.abs() - 1.0;
        if d <= 0.0 {
            return 1.0;
        }
        0.5 * erfc(d * self.lambda.sqrt() / 2.0)
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// `m(D_t/μ) f`.
pub fn band_localize(f: &TimeSignal, mu: f64, profile: &BumpProfile) -> Result<TimeSignal> {
    if !(mu > 0.0) {
        return Err(Error::arg("mu must be positive"));
    }
    Ok(f.apply_multiplier(|xi| profile.eval(xi / mu)))
}

/// `m_λ(D_t/μ) f`.
pub fn band_localize_regularized(f: &TimeSignal, mu: f64, lambda: f64, profile: &BumpProfile) -> Result<TimeSignal> {
    if !(mu > 0.0) {
        return Err(Error::arg("mu must be positive"));
    }
    let reg = profile.regularized(lambda)?;
    // m_λ is even: evaluate once per distinct |ξ|.
    let freqs = f.frequencies();
    let n = freqs.len();
    let mut table = vec![0.0; n / 2 + 1];
    for (k, t) in table.iter_mut().enumerate() {
        *t = reg.eval(freqs[k] / mu);
    }
    let mut out = f.clone();
    let (fwd, inv) = plans(n);
    let mut c: Vec<Complex64> = out.data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut c);
    for (k, z) in c.iter_mut().enumerate() {
        *z *= table[k.min(n - k)];
    }
    inv.process(&mut c);
    for (b, z) in out.data.iter_mut().zip(&c) {
        *b = z.re / n as f64;
    }
    Ok(out)
}

/// Samples `u(t_i, x_j)` on a uniform time grid, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub dt: f64,
    pub nt: usize,
    pub nx: usize,
    pub data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(nt: usize, nx: usize, dt: f64) -> Self {
        SpaceTimeField { dt, nt, nx, data: vec![0.0; nt * nx] }
    }

    #[inline]
    pub fn at(&self, t: usize, x: usize) -> f64 {
        self.data[t * self.nx + x]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, x: usize) -> &mut f64 {
        &mut self.data[t * self.nx + x]
    }

    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.nt).map(|t| self.at(t, x)).collect()
    }
}

/// `Q^φ_{δ,τ} u`: multiply by `e^{τφ(x)}` then regularise in time with
/// `λ = 2τ/δ`. `weight[j]` is `φ` at spatial node `j` (side-resolved by the
/// caller).
pub fn apply_qphi(u: &SpaceTimeField, tau: f64, delta: f64, weight: &[f64]) -> Result<SpaceTimeField> {
    if !(tau > 0.0 && delta > 0.0) {
        return Err(Error::arg("tau and delta must be positive"));
    }
    if weight.len() != u.nx {
        return Err(Error::arg("weight must have one value per spatial node"));
    }
    let wmax = weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if tau * wmax > MAX_EXPONENT {
        return Err(Error::Rescaling(format!(
            "tau * max(phi) = {:.1} exceeds {MAX_EXPONENT}; lower tau or shrink the chart so that tau * max(phi) <= {MAX_EXPONENT}",
            tau * wmax
        )));
    }
    let lambda = 2.0 * tau / delta;
    let pad = padding_for(lambda, u.dt);
    let total = (u.nt + 2 * pad).next_power_of_two();
    let freqs = fft_frequencies(total, u.dt);
    let mult: Vec<f64> = freqs.iter().map(|xi| (-xi * xi / lambda).exp()).collect();
    let (fwd, inv) = plans(total);
    let mut out = SpaceTimeField::zeros(u.nt, u.nx, u.dt);
    let mut buf = vec![Complex64::new(0.0, 0.0); total];
    for j in 0..u.nx {
        let e = (tau * weight[j]).exp();
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        let mut any = false;
        for t in 0..u.nt {
            let v = u.at(t, j);
            any |= v != 0.0;
            buf[pad + t] = Complex64::new(e * v, 0.0);
        }
        if !any {
            continue;
        }
        fwd.process(&mut buf);
        for (z, m) in buf.iter_mut().zip(&mult) {
            *z *= *m;
        }
        inv.process(&mut buf);
        for t in 0..u.nt {
            *out.at_mut(t, j) = buf[pad + t].re / total as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_shape() {
        let m = BumpProfile::default();
        assert_eq!(m.eval(0.0), 1.0);
        assert_eq!(m.eval(0.75), 1.0);
        assert_eq!(m.eval(-0.7), 1.0);
        assert_eq!(m.eval(1.0), 0.0);
        assert_eq!(m.eval(-3.0), 0.0);
        let mid = m.eval(0.875);
        assert!((mid - 0.5).abs() < 1e-15);
        for k in 0..1000 {
            let s = 0.75 + 0.25 * k as f64 / 1000.0;
            let v = m.eval(s);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn constant_signal_is_fixed() {
        let f = TimeSignal::for_regularization(&vec![3.0; 400], 0.01, 50.0).unwrap();
        let g = gaussian_regularize(&f, 50.0).unwrap();
        // far from the window edges the zero padding is invisible
        for &v in &g.window()[150..250] {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_sampling_is_refused() {
        let f = TimeSignal::for_regularization(&vec![1.0; 64], 0.01, 5000.0).unwrap();
        assert!(matches!(gaussian_regularize(&f, 5000.0), Err(Error::Configuration(_))));
    }

    #[test]
    fn short_padding_is_refused() {
        let f = TimeSignal::new(&vec![1.0; 64], 0.01, 0).unwrap();
        assert!(matches!(gaussian_regularize(&f, 1.0), Err(Error::Configuration(_))));
    }

    #[test]
    fn qphi_overflow_guard() {
        let u = SpaceTimeField::zeros(8, 2, 0.1);
        assert!(matches!(apply_qphi(&u, 1000.0, 1.0, &[0.0, 1.0]), Err(Error::Rescaling(_))));
    }

    #[test]
    fn qphi_time_independent() {
        // a constant in time (over a long window) is left unchanged up to e^{τφ}
        let nt = 512;
        let mut u = SpaceTimeField::zeros(nt, 3, 0.05);
        for t in 0..nt {
            for j in 0..3 {
                *u.at_mut(t, j) = 1.0 + j as f64;
            }
        }
        let phi = [-0.1, 0.0, 0.2];
        let q = apply_qphi(&u, 5.0, 1.0, &phi).unwrap();
        for j in 0..3 {
            let want = (5.0 * phi[j]).exp() * (1.0 + j as f64);
            assert!((q.at(nt / 2, j) - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn qphi_small_delta_limit() {
        let nt = 200;
        let mut u = SpaceTimeField::zeros(nt, 2, 0.01);
        for t in 0..nt {
            let s = (t as f64 - 100.0) * 0.01;
            *u.at_mut(t, 0) = (-s * s / 0.05).exp();
            *u.at_mut(t, 1) = s * (-s * s / 0.05).exp();
        }
        let phi = [0.1, -0.2];
        let q = apply_qphi(&u, 3.0, 1e-8, &phi).unwrap();
        for t in 0..nt {
            for j in 0..2 {
                let want = (3.0 * phi[j]).exp() * u.at(t, j);
                assert!((q.at(t, j) - want).abs() < 1e-6);
            }
        }
    }
}
