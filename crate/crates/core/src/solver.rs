//! Lawson RK4 integration of `(d_t^2 - d_x^2 + 1) u = P(u, u_tx, u_xx; u_t, u_x)` from `t = 1`,
//! plus the Klainerman field `Z = t d_x + x d_t` and energy diagnostics.
//!
//! The state is advanced in Fourier space.  The linear part acts on `(u_hat, u_t_hat)` as an
//! exact rotation with frequency `<k>`; the nonlinearity is explicit.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nonlinearity::{CompiledNonlinearity, CubicNonlinearity, NonlinearityError};
use crate::spectral::{bracket, smooth_step, Grid1D, NormKind, SpectralError};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("energy grew by a factor {growth:.3} > 4 at t = {t:.4}")]
    Blowup { t: f64, growth: f64 },
    #[error("non-finite values at t = {t:.4}")]
    NaN { t: f64 },
    #[error("initial data budget: {0}")]
    Budget(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("energy order {0} not available for Z")]
    UnsupportedOrder(u32),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
}

/// Profile shape of the initial position `u0`; the initial velocity `u1` is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataKind {
    /// `exp(-(x/width)^2)`
    Gaussian { width: f64 },
    /// `1/(1 + (x/width)^2)`, smoothly tapered to zero in the outer 20% of the cell
    Lorentzian { width: f64 },
    /// `exp(1 - 1/(1 - (x/radius)^2))` on `|x| < radius`
    CompactBump { radius: f64 },
}

impl Default for DataKind {
    fn default() -> Self {
        DataKind::Gaussian { width: 1.0 }
    }
}

impl DataKind {
    fn profile<T: Real>(&self, x: T, half_length: T) -> T {
        match *self {
            DataKind::Gaussian { width } => {
                let y = x / T::lit(width);
                (-y * y).exp()
            }
            DataKind::Lorentzian { width } => {
                let y = x / T::lit(width);
                let edge = (x.abs() - T::lit(0.8) * half_length) / (T::lit(0.15) * half_length);
                (T::one() - smooth_step(edge)) / (T::one() + y * y)
            }
            DataKind::CompactBump { radius } => {
                let y = x / T::lit(radius);
                if y.abs() >= T::one() {
                    T::zero()
                } else {
                    (T::one() - T::one() / (T::one() - y * y)).exp()
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KGState<T> {
    pub t: T,
    pub u: Vec<T>,
    pub ut: Vec<T>,
}

impl<T: Real> KGState<T> {
    pub fn zero(grid: &Grid1D<T>) -> Self {
        KGState { t: T::one(), u: vec![T::zero(); grid.n()], ut: vec![T::zero(); grid.n()] }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.ut).all(|v| v.is_finite())
    }
}

/// Scale applied to the unit profile and the resulting value of the data budget
/// `||u0||_{H^{s+1}} + ||u1||_{H^s} + ||x u0||_{H^2} + ||x u1||_{H^1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub scale: f64,
    pub budget: f64,
    pub unit_budget: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: Option<f64>,
    pub t_end: f64,
    pub epsilon: f64,
    pub data: DataKind,
    /// Explicit profile scale `c`; `None` normalizes the budget to exactly 1.
    pub amplitude: Option<f64>,
    pub sobolev_s: f64,
    pub rho: f64,
    /// Spacing of the dense observation grid.
    pub sample_dt: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { dt: None, t_end: 10.0, epsilon: 0.05, data: DataKind::default(), amplitude: None, sobolev_s: 3.0, rho: 2.0, sample_dt: 1.0 }
    }
}

impl SolverConfig {
    /// Step size actually used on `grid`: `min(0.1, dx/4)` unless given.
    pub fn resolved_dt<T: Real>(&self, grid: &Grid1D<T>) -> f64 {
        let dx = grid.dx().to_f64().unwrap_or(f64::NAN);
        self.dt.unwrap_or_else(|| (0.1f64).min(dx / 4.0))
    }

    pub fn validate<T: Real>(&self, grid: &Grid1D<T>) -> Result<(), SolverError> {
        let dx = grid.dx().to_f64().unwrap_or(f64::NAN);
        let dt = self.resolved_dt(grid);
        if !(dt > 0.0) || dt > 0.5 * dx * (1.0 + 1e-12) {
            return Err(SolverError::Config(format!("dt = {dt} must lie in (0, dx/2 = {}]", 0.5 * dx)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(SolverError::Config(format!("epsilon = {} must lie in [0, 1)", self.epsilon)));
        }
        if !(self.t_end >= 1.0) {
            return Err(SolverError::Config("t_end must be >= 1".into()));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt <= 1.0) {
            return Err(SolverError::Config("sample_dt must lie in (0, 1]".into()));
        }
        if !(self.sobolev_s >= 1.0) {
            return Err(SolverError::Config("sobolev_s must be >= 1".into()));
        }
        Ok(())
    }
}

fn x_times<T: Real>(grid: &Grid1D<T>, f: &[T]) -> Vec<T> {
    f.iter().enumerate().map(|(j, &v)| grid.x(j) * v).collect()
}

/// Data budget of `(u0, u1)` with unit-scale Sobolev norms.
pub fn data_budget<T: Real>(grid: &Grid1D<T>, u0: &[T], u1: &[T], s: T) -> T {
    let hs = |f: &[T], s: T| grid.norm_real(f, NormKind::Hs { s, h: T::one() });
    hs(u0, s + T::one()) + hs(u1, s) + hs(&x_times(grid, u0), T::lit(2.0)) + hs(&x_times(grid, u1), T::one())
}

/// `u(1) = eps u0`, `u_t(1) = eps u1`, with `u0 = c * profile` scaled to the data budget.
pub fn make_initial<T: Real>(kind: DataKind, epsilon: T, grid: &Grid1D<T>, s: T, amplitude: Option<T>) -> Result<(KGState<T>, Normalization), SolverError> {
    let l = grid.half_length();
    let shape: Vec<T> = grid.xs().iter().map(|&x| kind.profile(x, l)).collect();
    let zero = vec![T::zero(); grid.n()];
    let unit = data_budget(grid, &shape, &zero, s);
    if !(unit > T::zero()) || !unit.is_finite() {
        return Err(SolverError::Budget(format!("profile has budget {unit}")));
    }
    let c = match amplitude {
        Some(a) => {
            let b = a.abs() * unit;
            if b > T::one() + T::lit(1e-12) || !b.is_finite() {
                return Err(SolverError::Budget(format!("amplitude {a} gives budget {b} > 1")));
            }
            a
        }
        None => T::one() / unit,
    };
    let norm = Normalization {
        scale: c.to_f64().unwrap_or(f64::NAN),
        budget: (c.abs() * unit).to_f64().unwrap_or(f64::NAN),
        unit_budget: unit.to_f64().unwrap_or(f64::NAN),
    };
    let u = shape.iter().map(|&v| epsilon * c * v).collect();
    Ok((KGState { t: T::one(), u, ut: zero }, norm))
}

/// `Z u = t u_x + x u_t`, with `x` the cell coordinate.
pub fn z_apply<T: Real>(grid: &Grid1D<T>, state: &KGState<T>) -> Vec<T> {
    let ux = grid.derivative(&state.u, 1);
    (0..grid.n()).map(|j| state.t * ux[j] + grid.x(j) * state.ut[j]).collect()
}

/// `u_tt = u_xx - u + P`.
pub fn time_second_derivative<T: Real>(grid: &Grid1D<T>, p: &CompiledNonlinearity<T>, state: &KGState<T>) -> Vec<T> {
    let uxx = grid.derivative(&state.u, 2);
    let pv = p.evaluate(grid, &state.u, &state.ut);
    (0..grid.n()).map(|j| uxx[j] - state.u[j] + pv[j]).collect()
}

/// `(||f_t||^2 + ||f_x||^2 + ||f||^2)^{1/2}`.
pub fn e0_of<T: Real>(grid: &Grid1D<T>, f: &[T], ft: &[T]) -> T {
    let (fs, gs) = (grid.forward_real(f), grid.forward_real(ft));
    e0_spectral(grid, &fs, &gs)
}

fn e0_spectral<T: Real>(grid: &Grid1D<T>, u: &[Complex<T>], v: &[Complex<T>]) -> T {
    let sum = grid
        .wavenumbers()
        .iter()
        .enumerate()
        .fold(T::zero(), |a, (m, &k)| a + v[m].norm_sqr() + (T::one() + k * k) * u[m].norm_sqr());
    (sum * grid.dx() / T::lit(grid.n() as f64)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorField {
    Dx,
    Z,
}

/// `E_N^Gamma = sum_{k <= N} E0(Gamma^k u)`; `Z` is available up to `N = 1`.
pub fn energy<T: Real>(grid: &Grid1D<T>, p: &CompiledNonlinearity<T>, state: &KGState<T>, order: u32, which: VectorField) -> Result<T, SolverError> {
    match which {
        VectorField::Dx => {
            let (us, vs) = (grid.forward_real(&state.u), grid.forward_real(&state.ut));
            let mut total = T::zero();
            for j in 0..=order {
                let mut a = us.clone();
                let mut b = vs.clone();
                grid.derivative_spectrum(&mut a, j);
                grid.derivative_spectrum(&mut b, j);
                total = total + e0_spectral(grid, &a, &b);
            }
            Ok(total)
        }
        VectorField::Z => {
            if order > 1 {
                return Err(SolverError::UnsupportedOrder(order));
            }
            let mut total = e0_of(grid, &state.u, &state.ut);
            if order == 1 {
                let (zu, zut) = z_pair(grid, p, state);
                total = total + e0_of(grid, &zu, &zut);
            }
            Ok(total)
        }
    }
}

/// `(Z u, d_t Z u)`, with `d_t Z u = u_x + t u_tx + x u_tt`.
fn z_pair<T: Real>(grid: &Grid1D<T>, p: &CompiledNonlinearity<T>, state: &KGState<T>) -> (Vec<T>, Vec<T>) {
    let zu = z_apply(grid, state);
    let ux = grid.derivative(&state.u, 1);
    let utx = grid.derivative(&state.ut, 1);
    let utt = time_second_derivative(grid, p, state);
    let zut = (0..grid.n()).map(|j| ux[j] + state.t * utx[j] + grid.x(j) * utt[j]).collect();
    (zu, zut)
}

/// Diagnostics recorded at each observation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormRecord {
    pub t: f64,
    pub linf_u: f64,
    pub sqrt_t_linf: f64,
    pub e0: f64,
    /// `E_1^Z = E0(u) + E0(Z u)`
    pub ez1: f64,
    /// `||u||_{H^s}`
    pub hs: f64,
    /// `sum_{i<=2} ||<D>^{rho-i} D_t^i u||_{L^inf}`
    pub w_rho: f64,
    /// `||Z u||_{H^1}`
    pub zu_h1: f64,
    /// `E^{d_x}_{floor(s-1)}`
    pub e_dx: f64,
}

impl NormRecord {
    pub const CSV_HEADER: [&'static str; 6] = ["t", "linf_u", "sqrt_t_linf", "E0", "EZ1", "Hs"];

    pub fn csv_row(&self) -> [String; 6] {
        [self.t, self.linf_u, self.sqrt_t_linf, self.e0, self.ez1, self.hs].map(|v| format!("{v:.12e}"))
    }
}

pub fn norm_record<T: Real>(grid: &Grid1D<T>, p: &CompiledNonlinearity<T>, state: &KGState<T>, s: f64, rho: f64) -> Result<NormRecord, SolverError> {
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let linf = state.u.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let e0 = e0_of(grid, &state.u, &state.ut);
    let (zu, zut) = z_pair(grid, p, state);
    let ez1 = e0 + e0_of(grid, &zu, &zut);
    let hs = grid.norm_real(&state.u, NormKind::Hs { s: T::lit(s), h: T::one() });
    let zu_h1 = grid.norm_real(&zu, NormKind::Hs { s: T::one(), h: T::one() });
    let utt = time_second_derivative(grid, p, state);
    let r = T::lit(rho);
    let w = |g: &[T], pow: T| grid.norm_real(&grid.apply_real_multiplier(g, |k| bracket(k).powf(pow)), NormKind::Linf);
    let w_rho = w(&state.u, r) + w(&state.ut, r - T::one()) + w(&utt, r - T::lit(2.0));
    let order = (s - 1.0).floor().max(0.0) as u32;
    let e_dx = energy(grid, p, state, order, VectorField::Dx)?;
    Ok(NormRecord {
        t: f(state.t),
        linf_u: f(linf),
        sqrt_t_linf: f(state.t.sqrt() * linf),
        e0: f(e0),
        ez1: f(ez1),
        hs: f(hs),
        w_rho: f(w_rho),
        zu_h1: f(zu_h1),
        e_dx: f(e_dx),
    })
}

/// Exact solution of the linear equation (`P = 0`) at time `t`.
pub fn linear_propagate<T: Real>(grid: &Grid1D<T>, state: &KGState<T>, t: T) -> KGState<T> {
    let mut u = grid.forward_real(&state.u);
    let mut v = grid.forward_real(&state.ut);
    let tau = t - state.t;
    for (m, &k) in grid.wavenumbers().iter().enumerate() {
        let w = bracket(k);
        let (s, c) = (w * tau).sin_cos();
        let (a, b) = (u[m], v[m]);
        u[m] = a * c + b * (s / w);
        v[m] = b * c - a * (w * s);
    }
    grid.inverse_in_place(&mut u);
    grid.inverse_in_place(&mut v);
    KGState { t, u: u.into_iter().map(|z| z.re).collect(), ut: v.into_iter().map(|z| z.re).collect() }
}

struct Rotation<T> {
    cos: Vec<T>,
    sin_over_w: Vec<T>,
    w_sin: Vec<T>,
}

impl<T: Real> Rotation<T> {
    fn new(grid: &Grid1D<T>, tau: T) -> Self {
        let mut r = Rotation { cos: Vec::new(), sin_over_w: Vec::new(), w_sin: Vec::new() };
        for &k in grid.wavenumbers() {
            let w = bracket(k);
            let (s, c) = (w * tau).sin_cos();
            r.cos.push(c);
            r.sin_over_w.push(s / w);
            r.w_sin.push(w * s);
        }
        r
    }

    /// `(u, v) <- E(tau) (u, v)`
    fn apply(&self, u: &mut [Complex<T>], v: &mut [Complex<T>]) {
        for m in 0..u.len() {
            let (a, b) = (u[m], v[m]);
            u[m] = a * self.cos[m] + b * self.sin_over_w[m];
            v[m] = b * self.cos[m] - a * self.w_sin[m];
        }
    }

    /// `E(tau) (0, f)` added with weight `c` onto `(u, v)`.
    fn add_forced(&self, f: &[Complex<T>], c: T, u: &mut [Complex<T>], v: &mut [Complex<T>]) {
        for m in 0..u.len() {
            u[m] = u[m] + f[m] * (self.sin_over_w[m] * c);
            v[m] = v[m] + f[m] * (self.cos[m] * c);
        }
    }
}

/// Time stepper bound to a grid and a nonlinearity.
pub struct Stepper<T: Real> {
    grid: Grid1D<T>,
    p: CompiledNonlinearity<T>,
    rot: Option<(T, Rotation<T>, Rotation<T>)>,
    e0_ref: Option<T>,
    buf: Vec<Complex<T>>,
    buf2: Vec<Complex<T>>,
    buf3: Vec<Complex<T>>,
}

impl<T: Real> Stepper<T> {
    pub fn new(grid: Grid1D<T>, p: &CubicNonlinearity) -> Result<Self, SolverError> {
        let n = grid.n();
        let zero = vec![Complex::new(T::zero(), T::zero()); n];
        Ok(Stepper { p: CompiledNonlinearity::new(p)?, grid, rot: None, e0_ref: None, buf: zero.clone(), buf2: zero.clone(), buf3: zero })
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn nonlinearity(&self) -> &CompiledNonlinearity<T> {
        &self.p
    }

    /// Fix the reference energy for the blow-up guard.
    pub fn set_reference_energy(&mut self, e0: T) {
        self.e0_ref = Some(e0);
    }

    /// Spectrum of `P(u, ...)` for the state with spectra `(u, v)`.
    fn forcing(&mut self, u: &[Complex<T>], v: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = u.len();
        let g = &self.grid;
        let i = Complex::new(T::zero(), T::one());
        for m in 0..n {
            self.buf[m] = u[m] + v[m] * i;
        }
        g.inverse_in_place(&mut self.buf);
        if self.p.needs_derivatives() {
            let k = g.wavenumbers();
            for m in 0..n {
                let ik = Complex::new(T::zero(), k[m]);
                self.buf2[m] = (u[m] + v[m] * i) * ik;
                self.buf3[m] = u[m] * (-k[m] * k[m]);
            }
            let ny = g.nyquist();
            self.buf2[ny] = Complex::new(T::zero(), T::zero());
            g.inverse_in_place(&mut self.buf2);
            g.inverse_in_place(&mut self.buf3);
        }
        let deriv = self.p.needs_derivatives();
        let mut out: Vec<Complex<T>> = (0..n)
            .map(|j| {
                let (uu, ut) = (self.buf[j].re, self.buf[j].im);
                let (ux, utx, uxx) = if deriv { (self.buf2[j].re, self.buf2[j].im, self.buf3[j].re) } else { (T::zero(), T::zero(), T::zero()) };
                Complex::new(self.p.eval_point([uu, utx, uxx, ut, ux]), T::zero())
            })
            .collect();
        g.forward_in_place(&mut out);
        out
    }

    fn rotations(&mut self, dt: T) {
        let stale = match &self.rot {
            Some((d, _, _)) => *d != dt,
            None => true,
        };
        if stale {
            let half = Rotation::new(&self.grid, dt / T::lit(2.0));
            let full = Rotation::new(&self.grid, dt);
            self.rot = Some((dt, half, full));
        }
    }

    /// One Lawson RK4 step on spectra `(u, v)`.
    fn step_spectral(&mut self, u: &mut Vec<Complex<T>>, v: &mut Vec<Complex<T>>, dt: T) {
        self.rotations(dt);
        if self.p.is_zero() {
            let (_, _, full) = self.rot.as_ref().unwrap();
            full.apply(u, v);
            return;
        }
        let two = T::lit(2.0);
        let k1 = self.forcing(u, v);
        let (_, half, full) = self.rot.take().unwrap();
        // yh = E(dt/2) y
        let (mut uh, mut vh) = (u.clone(), v.clone());
        half.apply(&mut uh, &mut vh);
        // a = yh + dt/2 E(dt/2) k1
        let (mut ua, mut va) = (uh.clone(), vh.clone());
        half.add_forced(&k1, dt / two, &mut ua, &mut va);
        let k2 = self.forcing(&ua, &va);
        // b = yh + dt/2 k2
        let (mut ub, mut vb) = (uh.clone(), vh.clone());
        for m in 0..vb.len() {
            vb[m] = vb[m] + k2[m] * (dt / two);
        }
        let k3 = self.forcing(&ub, &vb);
        // c = E(dt) y + dt E(dt/2) k3
        let (mut uc, mut vc) = (u.clone(), v.clone());
        full.apply(&mut uc, &mut vc);
        half.add_forced(&k3, dt, &mut uc, &mut vc);
        let k4 = self.forcing(&uc, &vc);
        // y' = E(dt) y + dt/6 (E(dt) k1 + 2 E(dt/2)(k2 + k3) + k4)
        let six = T::lit(6.0);
        full.apply(u, v);
        full.add_forced(&k1, dt / six, u, v);
        let k23: Vec<Complex<T>> = k2.iter().zip(&k3).map(|(a, b)| a + b).collect();
        half.add_forced(&k23, dt / T::lit(3.0), u, v);
        for m in 0..v.len() {
            v[m] = v[m] + k4[m] * (dt / six);
        }
        ub.clear();
        self.rot = Some((dt, half, full));
    }

    fn guard(&mut self, t: T, u: &[Complex<T>], v: &[Complex<T>]) -> Result<(), SolverError> {
        let e = e0_spectral(&self.grid, u, v);
        if !e.is_finite() {
            return Err(SolverError::NaN { t: t.to_f64().unwrap_or(f64::NAN) });
        }
        if let Some(e_ref) = self.e0_ref {
            if e_ref > T::zero() && e > T::lit(4.0) * e_ref {
                return Err(SolverError::Blowup { t: t.to_f64().unwrap_or(f64::NAN), growth: (e / e_ref).to_f64().unwrap_or(f64::NAN) });
            }
        }
        Ok(())
    }

    /// Advance `state` by `dt`.
    pub fn step(&mut self, state: &KGState<T>, dt: T) -> Result<KGState<T>, SolverError> {
        let mut u = self.grid.forward_real(&state.u);
        let mut v = self.grid.forward_real(&state.ut);
        if self.e0_ref.is_none() {
            self.e0_ref = Some(e0_spectral(&self.grid, &u, &v));
        }
        self.step_spectral(&mut u, &mut v, dt);
        let t = state.t + dt;
        self.guard(t, &u, &v)?;
        Ok(self.to_state(t, u, v))
    }

    fn to_state(&self, t: T, mut u: Vec<Complex<T>>, mut v: Vec<Complex<T>>) -> KGState<T> {
        self.grid.inverse_in_place(&mut u);
        self.grid.inverse_in_place(&mut v);
        KGState { t, u: u.into_iter().map(|z| z.re).collect(), ut: v.into_iter().map(|z| z.re).collect() }
    }

    /// Advance from `state` to exactly `t_target` in equal substeps no longer than `dt_max`.
    pub fn advance(&mut self, state: &KGState<T>, t_target: T, dt_max: T) -> Result<KGState<T>, SolverError> {
        let span = t_target - state.t;
        if span <= T::zero() {
            return Ok(state.clone());
        }
        let steps = (span / dt_max - T::lit(1e-9)).ceil().max(T::one());
        let n = steps.to_usize().unwrap_or(1);
        let dt = span / steps;
        let mut u = self.grid.forward_real(&state.u);
        let mut v = self.grid.forward_real(&state.ut);
        if self.e0_ref.is_none() {
            self.e0_ref = Some(e0_spectral(&self.grid, &u, &v));
        }
        for i in 0..n {
            self.step_spectral(&mut u, &mut v, dt);
            self.guard(state.t + dt * T::lit((i + 1) as f64), &u, &v)?;
        }
        Ok(self.to_state(t_target, u, v))
    }
}

/// Something that wants to see the solution at given times.
pub trait Observer<T: Real> {
    fn times(&self) -> Vec<f64>;
    fn observe(&mut self, state: &KGState<T>, grid: &Grid1D<T>) -> Result<(), SolverError>;
}

/// Times `1, 2, 4, ...` up to `t_end` merged with the dense grid `1 + j * sample_dt`.
pub fn default_schedule(t_end: f64, sample_dt: f64) -> Vec<f64> {
    let mut ts = Vec::new();
    let mut g = 1.0;
    while g <= t_end + 1e-9 {
        ts.push(g);
        g *= 2.0;
    }
    let n = ((t_end - 1.0) / sample_dt + 1e-9).floor() as usize;
    ts.extend((0..=n).map(|j| 1.0 + j as f64 * sample_dt));
    ts.push(t_end);
    merge_times(ts)
}

pub fn merge_times(mut ts: Vec<f64>) -> Vec<f64> {
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    ts
}

#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub norms: Vec<NormRecord>,
    pub final_state: KGState<T>,
    pub normalization: Normalization,
    pub dt: f64,
}

#[derive(Clone, Debug)]
pub struct RunFailure<T> {
    pub error: SolverError,
    pub partial: Option<RunOutput<T>>,
}

impl<T> From<SolverError> for RunFailure<T> {
    fn from(error: SolverError) -> Self {
        RunFailure { error, partial: None }
    }
}

/// Integrate from `t = 1` to `config.t_end`, recording norms on the default schedule and
/// calling every observer at each of its requested times.
pub fn run<T: Real>(grid: &Grid1D<T>, config: &SolverConfig, p: &CubicNonlinearity, observers: &mut [&mut dyn Observer<T>]) -> Result<RunOutput<T>, RunFailure<T>> {
    config.validate(grid)?;
    let (state, normalization) = make_initial(config.data, T::lit(config.epsilon), grid, T::lit(config.sobolev_s), config.amplitude.map(T::lit))?;
    run_from(grid, config, p, state, normalization, observers)
}

pub fn run_from<T: Real>(
    grid: &Grid1D<T>,
    config: &SolverConfig,
    p: &CubicNonlinearity,
    initial: KGState<T>,
    normalization: Normalization,
    observers: &mut [&mut dyn Observer<T>],
) -> Result<RunOutput<T>, RunFailure<T>> {
    let dt = config.resolved_dt(grid);
    let mut stepper = Stepper::new(grid.clone(), p)?;
    let mut times = default_schedule(config.t_end, config.sample_dt);
    let wanted: Vec<Vec<f64>> = observers.iter().map(|o| o.times()).collect();
    times.extend(wanted.iter().flatten().copied().filter(|&t| t >= 1.0 && t <= config.t_end + 1e-9));
    let times = merge_times(times);
    let mut out = RunOutput { norms: Vec::new(), final_state: initial.clone(), normalization, dt };
    let mut state = initial;
    stepper.set_reference_energy(e0_of(grid, &state.u, &state.ut));
    for &t in &times {
        if t > 1.0 {
            match stepper.advance(&state, T::lit(t), T::lit(dt)) {
                Ok(s) => state = s,
                Err(error) => {
                    out.final_state = state;
                    return Err(RunFailure { error, partial: Some(out) });
                }
            }
        }
        let rec = norm_record(grid, stepper.nonlinearity(), &state, config.sobolev_s, config.rho)?;
        out.norms.push(rec);
        for (obs, ts) in observers.iter_mut().zip(&wanted) {
            if ts.iter().any(|&w| (w - t).abs() < 1e-9) {
                obs.observe(&state, grid)?;
            }
        }
    }
    out.final_state = state;
    Ok(out)
}

/// Snapshot writer for the `t, x, u, ut` CSV format.
pub fn write_snapshot<T: Real, W: std::io::Write>(grid: &Grid1D<T>, state: &KGState<T>, w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "x", "u", "ut"])?;
    for j in 0..grid.n() {
        wr.write_record([state.t, grid.x(j), state.u[j], state.ut[j]].map(|v| format!("{:.12e}", v.to_f64().unwrap_or(f64::NAN))))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_norms<W: std::io::Write>(norms: &[NormRecord], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(NormRecord::CSV_HEADER)?;
    for r in norms {
        wr.write_record(r.csv_row())?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::library::u_cubed;

    fn packet(grid: &Grid1D<f64>, k0: f64) -> KGState<f64> {
        let u = grid.xs().iter().map(|&x| 0.1 * (-(x / 3.0).powi(2)).exp() * (k0 * x).cos()).collect();
        let ut = grid.xs().iter().map(|&x| 0.05 * (-(x / 2.0).powi(2)).exp()).collect();
        KGState { t: 1.0, u, ut }
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn linear_steps_match_propagator() {
        let g: Grid1D<f64> = Grid1D::new(2048, 100.0).unwrap();
        let s0 = packet(&g, 2.0);
        let mut st = Stepper::new(g.clone(), &CubicNonlinearity::zero()).unwrap();
        let s = st.advance(&s0, 10.0, 0.05).unwrap();
        let exact = linear_propagate(&g, &s0, 10.0);
        assert!(max_err(&s.u, &exact.u) < 1e-9);
        assert!(max_err(&s.ut, &exact.ut) < 1e-9);
    }

    #[test]
    fn zero_stays_zero() {
        let g: Grid1D<f64> = Grid1D::new(256, 20.0).unwrap();
        let (s0, _) = make_initial(DataKind::default(), 0.0, &g, 3.0, None).unwrap();
        assert!(s0.u.iter().all(|&v| v == 0.0));
        let mut st = Stepper::new(g, &u_cubed()).unwrap();
        let s = st.advance(&s0, 3.0, 0.05).unwrap();
        assert!(s.u.iter().chain(&s.ut).all(|&v| v == 0.0));
    }

    #[test]
    fn fourth_order_in_time() {
        let g: Grid1D<f64> = Grid1D::new(256, 20.0).unwrap();
        let mut s0 = packet(&g, 1.0);
        for v in s0.u.iter_mut().chain(s0.ut.iter_mut()) {
            *v *= 5.0;
        }
        let p = u_cubed();
        let solve = |dt: f64| Stepper::new(g.clone(), &p).unwrap().advance(&s0, 3.0, dt).unwrap();
        let a = solve(0.04);
        let b = solve(0.02);
        let c = solve(0.01);
        let order = (max_err(&a.u, &b.u) / max_err(&b.u, &c.u)).log2();
        assert!((order - 4.0).abs() <= 0.3, "order {order}");
    }

    #[test]
    fn time_reversal() {
        let g: Grid1D<f64> = Grid1D::new(1024, 60.0).unwrap();
        let s0 = packet(&g, 1.5);
        let fwd = linear_propagate(&g, &s0, 20.0);
        let back = linear_propagate(&g, &fwd, 1.0);
        assert!(max_err(&back.u, &s0.u) < 1e-9);
        let mut st = Stepper::new(g.clone(), &CubicNonlinearity::zero()).unwrap();
        let f = st.advance(&s0, 20.0, 0.05).unwrap();
        let mut st2 = Stepper::new(g.clone(), &CubicNonlinearity::zero()).unwrap();
        let mut rev = f.clone();
        for _ in 0..380 {
            rev = st2.step(&rev, -0.05).unwrap();
        }
        assert!(max_err(&rev.u, &s0.u) < 1e-9);
    }

    #[test]
    fn energy_examples() {
        let g: Grid1D<f64> = Grid1D::new(256, 10.0).unwrap();
        let p = CompiledNonlinearity::<f64>::new(&CubicNonlinearity::zero()).unwrap();
        let z = KGState::zero(&g);
        assert_eq!(energy(&g, &p, &z, 0, VectorField::Dx).unwrap(), 0.0);
        let k = std::f64::consts::PI * 3.0 / 10.0;
        let s = KGState { t: 1.0, u: g.xs().iter().map(|x| (k * x).sin()).collect(), ut: vec![0.0; 256] };
        let e = energy(&g, &p, &s, 0, VectorField::Dx).unwrap();
        assert!((e - ((k * k + 1.0) * 10.0).sqrt()).abs() < 1e-12);
        let e1 = energy(&g, &p, &s, 1, VectorField::Dx).unwrap();
        assert!((e1 - (1.0 + k) * ((k * k + 1.0) * 10.0).sqrt()).abs() < 1e-11);
        assert!(energy(&g, &p, &s, 2, VectorField::Z).is_err());
        let zu = z_apply(&g, &s);
        for (j, v) in zu.iter().enumerate() {
            assert!((v - k * (k * g.x(j)).cos()).abs() < 1e-11);
        }
        assert!(z_apply(&g, &z).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_energy_conserved() {
        let g: Grid1D<f64> = Grid1D::new(1024, 60.0).unwrap();
        let s0 = packet(&g, 1.0);
        let e_a = e0_of(&g, &s0.u, &s0.ut);
        let mut st = Stepper::new(g.clone(), &CubicNonlinearity::zero()).unwrap();
        let s = st.advance(&s0, 30.0, 0.05).unwrap();
        assert!((e0_of(&g, &s.u, &s.ut) - e_a).abs() < 1e-10 * e_a.max(1.0));
    }

    #[test]
    fn z_commutes_with_linear_flow() {
        let g: Grid1D<f64> = Grid1D::new(2048, 80.0).unwrap();
        let s0 = packet(&g, 0.5);
        let (t, d) = (10.0, 1e-3);
        let zs: Vec<Vec<f64>> = [t - d, t, t + d].iter().map(|&tt| z_apply(&g, &linear_propagate(&g, &s0, tt))).collect();
        let zxx = g.derivative(&zs[1], 2);
        let resid: Vec<f64> = (0..g.n()).map(|j| (zs[2][j] - 2.0 * zs[1][j] + zs[0][j]) / (d * d) - zxx[j] + zs[1][j]).collect();
        let scale = g.norm_real(&zs[1], NormKind::L2);
        assert!(g.norm_real(&resid, NormKind::L2) < 1e-4 * scale, "{}", g.norm_real(&resid, NormKind::L2) / scale);
    }

    #[test]
    fn budgets() {
        let g: Grid1D<f64> = Grid1D::new(4096, 60.0).unwrap();
        for kind in [DataKind::Gaussian { width: 1.0 }, DataKind::Lorentzian { width: 1.0 }, DataKind::CompactBump { radius: 2.0 }] {
            let (s, n) = make_initial(kind, 0.5, &g, 3.0, None).unwrap();
            let b = data_budget(&g, &s.u, &s.ut, 3.0) / 0.5;
            assert!(b <= 1.0 + 1e-12 && (n.budget - 1.0).abs() < 1e-12, "{kind:?} {b}");
        }
        let err = make_initial(DataKind::default(), 0.1, &g, 3.0, Some(10.0)).unwrap_err();
        assert!(matches!(err, SolverError::Budget(_)));
    }

    #[test]
    fn config_checks() {
        let g: Grid1D<f64> = Grid1D::new(1024, 10.0).unwrap();
        let mut c = SolverConfig::default();
        assert!(c.validate(&g).is_ok());
        assert!((c.resolved_dt(&g) - 20.0 / 1024.0 / 4.0).abs() < 1e-15);
        c.dt = Some(1.0);
        assert!(c.validate(&g).is_err());
        c.dt = None;
        c.epsilon = 1.0;
        assert!(c.validate(&g).is_err());
    }

    #[test]
    fn run_t_end_one_is_initial_only() {
        let g: Grid1D<f64> = Grid1D::new(256, 30.0).unwrap();
        let cfg = SolverConfig { t_end: 1.0, ..Default::default() };
        let out = run(&g, &cfg, &u_cubed(), &mut []).unwrap();
        assert_eq!(out.norms.len(), 1);
        assert_eq!(out.norms[0].t, 1.0);
    }

    #[test]
    fn blowup_guard_triggers() {
        let g: Grid1D<f64> = Grid1D::new(512, 30.0).unwrap();
        // u_tt - (1 - 1e4 u^2) u_xx + u = 0 turns elliptic once |u| > 0.01
        let p = CubicNonlinearity::zero().with(crate::nonlinearity::library::U2_UXX, -1.0e4).unwrap();
        let cfg = SolverConfig { t_end: 200.0, epsilon: 0.9, ..Default::default() };
        let err = run(&g, &cfg, &p, &mut []).unwrap_err();
        assert!(matches!(err.error, SolverError::Blowup { .. } | SolverError::NaN { .. }), "{:?}", err.error);
        assert!(err.partial.is_some());
    }
}
