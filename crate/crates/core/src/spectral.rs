//! Periodic spectral grid on `[-L, L)`: Fourier multipliers, norms and off-grid evaluation.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid size {0} is not a power of two >= 4")]
    Size(usize),
    #[error("half length must be positive and finite")]
    HalfLength,
    #[error("field of length {0} does not match grid of {1} points")]
    Length(usize, usize),
}

/// Uniform periodic grid `x_j = -L + j dx`, `dx = 2L/n`, wavenumbers `pi m / L`.
#[derive(Clone)]
pub struct Grid1D<T: Real> {
    n: usize,
    half_length: T,
    dx: T,
    k: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Grid1D<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid1D").field("n", &self.n).field("half_length", &self.half_length).finish()
    }
}

/// Wavenumbers in FFT order for `n` points on a cell of half length `half_length`.
pub fn wavenumbers<T: Real>(n: usize, half_length: T) -> Vec<T> {
    let base = T::PI() / half_length;
    (0..n)
        .map(|m| {
            let m = if m < n / 2 { m as i64 } else { m as i64 - n as i64 };
            base * T::lit(m as f64)
        })
        .collect()
}

impl<T: Real> Grid1D<T> {
    pub fn new(n: usize, half_length: T) -> Result<Self, SpectralError> {
        if n < 4 || !n.is_power_of_two() {
            return Err(SpectralError::Size(n));
        }
        if !(half_length > T::zero()) || !half_length.is_finite() {
            return Err(SpectralError::HalfLength);
        }
        let mut planner = FftPlanner::new();
        Ok(Grid1D {
            n,
            half_length,
            dx: (half_length + half_length) / T::lit(n as f64),
            k: wavenumbers(n, half_length),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_length(&self) -> T {
        self.half_length
    }

    pub fn dx(&self) -> T {
        self.dx
    }

    pub fn x(&self, j: usize) -> T {
        -self.half_length + self.dx * T::lit(j as f64)
    }

    pub fn xs(&self) -> Vec<T> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    pub fn wavenumbers(&self) -> &[T] {
        &self.k
    }

    /// Index of the Nyquist mode `m = -n/2` in FFT order.
    pub fn nyquist(&self) -> usize {
        self.n / 2
    }

    pub fn check(&self, len: usize) -> Result<(), SpectralError> {
        if len == self.n {
            Ok(())
        } else {
            Err(SpectralError::Length(len, self.n))
        }
    }

    /// Unnormalized forward DFT.
    pub fn forward(&self, f: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = f.to_vec();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex<T>]) {
        self.fwd.process(buf);
    }

    /// Inverse DFT including the `1/n` factor.
    pub fn inverse(&self, f: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = f.to_vec();
        self.inverse_in_place(&mut buf);
        buf
    }

    pub fn inverse_in_place(&self, buf: &mut [Complex<T>]) {
        self.inv.process(buf);
        let s = T::one() / T::lit(self.n as f64);
        for z in buf.iter_mut() {
            *z = *z * s;
        }
    }

    pub fn forward_real(&self, f: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// `m(D) f` for a complex field.
    pub fn apply_multiplier(&self, f: &[Complex<T>], m: impl Fn(T) -> Complex<T>) -> Vec<Complex<T>> {
        let mut buf = self.forward(f);
        for (z, &k) in buf.iter_mut().zip(&self.k) {
            *z = *z * m(k);
        }
        self.inverse_in_place(&mut buf);
        buf
    }

    /// `m(D) f` for a real field and a real even symbol; the result is real.
    pub fn apply_real_multiplier(&self, f: &[T], m: impl Fn(T) -> T) -> Vec<T> {
        let mut buf = self.forward_real(f);
        for (z, &k) in buf.iter_mut().zip(&self.k) {
            *z = *z * m(k);
        }
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Spectral `d^order/dx^order` of a real field; the Nyquist mode is dropped for odd orders.
    pub fn derivative(&self, f: &[T], order: u32) -> Vec<T> {
        let mut buf = self.forward_real(f);
        self.derivative_spectrum(&mut buf, order);
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Multiply a spectrum by `(ik)^order` in place.
    pub fn derivative_spectrum(&self, buf: &mut [Complex<T>], order: u32) {
        for (z, &k) in buf.iter_mut().zip(&self.k) {
            *z = *z * ik_pow(k, order);
        }
        if order % 2 == 1 {
            buf[self.nyquist()] = Complex::new(T::zero(), T::zero());
        }
    }

    /// Truncated Fourier series of `f` at arbitrary points, Nyquist mode split symmetrically.
    pub fn interp_eval(&self, f: &[Complex<T>], points: &[T]) -> Vec<Complex<T>> {
        let spec = self.forward(f);
        self.interp_spectrum(&spec, points)
    }

    pub fn interp_spectrum(&self, spec: &[Complex<T>], points: &[T]) -> Vec<Complex<T>> {
        let n = self.n;
        let half = n / 2;
        let inv_n = T::one() / T::lit(n as f64);
        let base = T::PI() / self.half_length;
        points
            .par_iter()
            .map(|&x| {
                let theta = base * (x + self.half_length);
                let mut acc = spec[0];
                // positive and negative modes 1..half-1 share the rotation e^{i m theta}
                let step = Complex::from_polar(T::one(), theta);
                let mut rot = Complex::new(T::one(), T::zero());
                for m in 1..half {
                    if m % 32 == 0 {
                        rot = Complex::from_polar(T::one(), theta * T::lit(m as f64));
                    } else {
                        rot = rot * step;
                    }
                    acc = acc + spec[m] * rot + spec[n - m] * rot.conj();
                }
                let ny = spec[half] * (theta * T::lit(half as f64)).cos();
                (acc + ny) * inv_n
            })
            .collect()
    }

    pub fn norm(&self, f: &[Complex<T>], kind: NormKind<T>) -> T {
        match kind {
            NormKind::L2 => (f.iter().fold(T::zero(), |a, z| a + z.norm_sqr()) * self.dx).sqrt(),
            NormKind::Linf => f.iter().fold(T::zero(), |a, z| a.max(z.norm())),
            NormKind::Hs { s, h } => {
                let spec = self.forward(f);
                self.sobolev_from_spectrum(&spec, s, h)
            }
            NormKind::W { rho, h } => {
                let g = self.apply_multiplier(f, |k| Complex::new(bracket(h * k).powf(rho), T::zero()));
                g.iter().fold(T::zero(), |a, z| a.max(z.norm()))
            }
        }
    }

    pub fn norm_real(&self, f: &[T], kind: NormKind<T>) -> T {
        let c: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.norm(&c, kind)
    }

    /// `||f||_{H^s_h}` from the unnormalized spectrum of `f`.
    pub fn sobolev_from_spectrum(&self, spec: &[Complex<T>], s: T, h: T) -> T {
        let w = spec
            .iter()
            .zip(&self.k)
            .fold(T::zero(), |a, (z, &k)| a + (T::one() + (h * k) * (h * k)).powf(s) * z.norm_sqr());
        (w * self.dx / T::lit(self.n as f64)).sqrt()
    }

    /// Split `f` by `chi(h^beta h k)`; report `||(1-chi) f||_{H^s'_h} / ||f||_{H^s_h}` against `h^{beta (s - s')}`.
    pub fn high_cut(&self, f: &[Complex<T>], h: T, beta: T, s: T, s_target: T) -> (Vec<Complex<T>>, BoundCheck<T>) {
        let spec = self.forward(f);
        let scale = h.powf(beta) * h;
        let weights: Vec<T> = self.k.iter().map(|&k| chi(scale * k)).collect();
        let low_spec: Vec<Complex<T>> = spec.iter().zip(&weights).map(|(z, &c)| *z * c).collect();
        let high_spec: Vec<Complex<T>> = spec.iter().zip(&weights).map(|(z, &c)| *z * (T::one() - c)).collect();
        let total = self.sobolev_from_spectrum(&spec, s, h);
        let high = self.sobolev_from_spectrum(&high_spec, s_target, h);
        let ratio = if total > T::zero() { high / total } else { T::zero() };
        let bound = h.powf(beta * (s - s_target));
        let low = self.inverse(&low_spec);
        (low, BoundCheck { ratio, bound, holds: ratio <= bound * (T::one() + T::lit(1e-12)) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind<T> {
    L2,
    Linf,
    /// Semiclassical Sobolev norm, weight `(1 + |hk|^2)^{s/2}`.
    Hs { s: T, h: T },
    /// `||<hD>^rho f||_{L^inf}`.
    W { rho: T, h: T },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck<T> {
    pub ratio: T,
    pub bound: T,
    pub holds: bool,
}

#[inline]
pub fn ik_pow<T: Real>(k: T, order: u32) -> Complex<T> {
    let mag = k.powi(order as i32);
    match order % 4 {
        0 => Complex::new(mag, T::zero()),
        1 => Complex::new(T::zero(), mag),
        2 => Complex::new(-mag, T::zero()),
        _ => Complex::new(T::zero(), -mag),
    }
}

/// `<xi> = sqrt(1 + xi^2)`
#[inline]
pub fn bracket<T: Real>(xi: T) -> T {
    (T::one() + xi * xi).sqrt()
}

/// Smooth monotone step: 0 for `t <= 0`, 1 for `t >= 1`.
pub fn smooth_step<T: Real>(t: T) -> T {
    if t <= T::zero() {
        return T::zero();
    }
    if t >= T::one() {
        return T::one();
    }
    let a = (-T::one() / t).exp();
    let b = (-T::one() / (T::one() - t)).exp();
    a / (a + b)
}

/// Plateau cutoff: 1 on `|xi| <= 1`, 0 on `|xi| >= 2`.
pub fn chi<T: Real>(xi: T) -> T {
    T::one() - smooth_step(xi.abs() - T::one())
}
