//! Normal form, profile ODE, asymptotic formula and the modified-scattering phase fit.
//!
//! Stations are frame points `x` with `|x| <= 0.9`.  At a station the solver state gives
//! `<hD>^-1 v(t, x) = sqrt(t) (u - i <D>^-1 u_t)(t, t x)`, the quantity whose modulus tends to
//! `eps |a_eps(x)|` and whose phase is `t phi(x) + eps^2 |a_eps|^2 Phi_1(x) log t + const`.

use rayon::prelude::*;
use thiserror::Error;

use crate::fit::least_squares;
use crate::nonlinearity::{coefficient_value, phi_one, raw_coefficient, CubicNonlinearity, NonlinearityError, SignTriple};
use crate::semiclassical::{lambda_cutoff_windowed, multiplier, to_frame, window, FrameConfig, SemiclassicalError, Storage, WeylOperator};
use crate::solver::{KGState, Observer, SolverError};
use crate::spectral::{bracket, Grid1D};
use crate::C64;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("phase step {step:.3} >= pi at station x = {x}, t = {t}")]
    Unwrap { x: f64, t: f64, step: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid series: {0}")]
    Series(String),
    #[error("station x = {0} outside |x| <= 0.9")]
    Station(f64),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
    #[error(transparent)]
    Semiclassical(#[from] SemiclassicalError),
}

pub const MAX_STATION: f64 = 0.9;
pub const DEFAULT_DELTA0: f64 = 0.05;
pub const MIN_SAMPLES: usize = 10;

/// `phi(x) = sqrt(1 - x^2)`
pub fn phi(x: f64) -> f64 {
    (1.0 - x * x).max(0.0).sqrt()
}

/// Fixed window `theta`: 1 on `|x| <= 1 - delta0`, 0 on `|x| >= 1 - delta0/2`.
pub fn theta(x: f64, delta0: f64) -> f64 {
    window(x, 1.0 - delta0, 1.0 - 0.5 * delta0)
}

/// Samples of `<hD>^-1 v` at fixed stations.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSeries {
    pub epsilon: f64,
    pub stations: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[n][s]` at `times[n]`, station `s`.
    pub values: Vec<Vec<C64>>,
}

pub const SERIES_CSV_HEADER: [&str; 4] = ["t", "x_station", "re", "im"];

impl ProfileSeries {
    pub fn new(epsilon: f64, stations: Vec<f64>) -> Result<Self, ProfileError> {
        if let Some(x) = stations.iter().find(|x| !(x.abs() <= MAX_STATION)) {
            return Err(ProfileError::Station(*x));
        }
        Ok(ProfileSeries { epsilon, stations, times: vec![], values: vec![] })
    }

    pub fn push(&mut self, t: f64, row: Vec<C64>) -> Result<(), ProfileError> {
        if row.len() != self.stations.len() {
            return Err(ProfileError::Series(format!("{} values for {} stations", row.len(), self.stations.len())));
        }
        if t < 1.0 || self.times.last().is_some_and(|&last| t <= last) {
            return Err(ProfileError::Series(format!("time {t} out of order")));
        }
        self.times.push(t);
        self.values.push(row);
        Ok(())
    }

    pub fn station_values(&self, s: usize) -> Vec<C64> {
        self.values.iter().map(|r| r[s]).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SERIES_CSV_HEADER)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            for (x, z) in self.stations.iter().zip(row) {
                out.write_record([fmt(*t), fmt(*x), fmt(z.re), fmt(z.im)])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Inverse of [`ProfileSeries::write_csv`].
    pub fn read_csv<R: std::io::Read>(epsilon: f64, r: R) -> Result<Self, ProfileError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut stations: Vec<f64> = vec![];
        let mut rows: Vec<(f64, f64, C64)> = vec![];
        for rec in rd.records() {
            let rec = rec.map_err(|e| ProfileError::Series(e.to_string()))?;
            let num = |i: usize| -> Result<f64, ProfileError> {
                rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| ProfileError::Series(format!("bad field {i} in {rec:?}")))
            };
            let (t, x) = (num(0)?, num(1)?);
            if !stations.contains(&x) {
                stations.push(x);
            }
            rows.push((t, x, C64::new(num(2)?, num(3)?)));
        }
        let mut series = ProfileSeries::new(epsilon, stations.clone())?;
        for chunk in rows.chunks(stations.len().max(1)) {
            let t = chunk[0].0;
            if chunk.len() != stations.len() || chunk.iter().zip(&stations).any(|(r, x)| r.0 != t || r.1 != *x) {
                return Err(ProfileError::Series(format!("ragged rows at t = {t}")));
            }
            series.push(t, chunk.iter().map(|r| r.2).collect())?;
        }
        Ok(series)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// `u - i <D>^-1 u_t` on the solver grid.
pub fn inverse_bracket_w(grid: &Grid1D<f64>, state: &KGState<f64>) -> Vec<C64> {
    let ut: Vec<C64> = state.ut.iter().map(|&v| C64::new(v, 0.0)).collect();
    let q = grid.apply_multiplier(&ut, |k| C64::new(1.0 / bracket(k), 0.0));
    state.u.iter().zip(q).map(|(&u, q)| C64::new(u, 0.0) - C64::new(0.0, 1.0) * q).collect()
}

/// `w = <D> u - i u_t` on the solver grid, so that `<D>^-1 w = u - i <D>^-1 u_t`.
pub fn w_field(grid: &Grid1D<f64>, state: &KGState<f64>) -> Vec<C64> {
    let u: Vec<C64> = state.u.iter().map(|&v| C64::new(v, 0.0)).collect();
    let bu = grid.apply_multiplier(&u, |k| C64::new(bracket(k), 0.0));
    bu.into_iter().zip(&state.ut).map(|(b, &ut)| b - C64::new(0.0, ut)).collect()
}

/// Collects a [`ProfileSeries`] while the solver runs.
pub struct StationObserver {
    pub series: ProfileSeries,
    schedule: Vec<f64>,
}

impl StationObserver {
    /// Samples every `sample_dt` from 1 to `t_end` plus the dyadic times.
    pub fn new(epsilon: f64, stations: Vec<f64>, t_end: f64, sample_dt: f64) -> Result<Self, ProfileError> {
        if !(sample_dt > 0.0 && sample_dt <= 1.0) {
            return Err(ProfileError::Series(format!("sample_dt = {sample_dt} must lie in (0, 1]")));
        }
        Ok(StationObserver { series: ProfileSeries::new(epsilon, stations)?, schedule: crate::solver::default_schedule(t_end, sample_dt) })
    }
}

impl Observer<f64> for StationObserver {
    fn times(&self) -> Vec<f64> {
        self.schedule.clone()
    }

    fn observe(&mut self, state: &KGState<f64>, grid: &Grid1D<f64>) -> Result<(), SolverError> {
        let t = state.t;
        let g = inverse_bracket_w(grid, state);
        let pts: Vec<f64> = self.series.stations.iter().map(|x| t * x).collect();
        if let Some(p) = pts.iter().find(|p| p.abs() > grid.half_length()) {
            return Err(SolverError::Config(format!("station t*x = {p} leaves the cell")));
        }
        let st = t.sqrt();
        let row = grid.interp_eval(&g, &pts).into_iter().map(|z| z * st).collect();
        self.series.push(t, row).map_err(|e| SolverError::Config(e.to_string()))
    }
}

/// Per-station phase fit.
#[derive(Clone, Debug, PartialEq)]
pub struct StationFit {
    pub x: f64,
    /// Mean of `|<hD>^-1 v| / eps` over the last decade, i.e. the amplitude of `a_eps`.
    pub amplitude: f64,
    /// Coefficient of `log t` in the unwrapped phase minus `t phi(x)`.
    pub phase_slope: f64,
    /// Slope of the same residual phase against `t`; zero when the frequency is `phi(x)`.
    pub linear_slope: f64,
    pub residual_rms: f64,
    /// `eps^2 A^2 Phi_1(x)`, filled in by [`FitResult::with_prediction`].
    pub predicted_slope: Option<f64>,
}

impl StationFit {
    pub fn relative_error(&self) -> Option<f64> {
        self.predicted_slope.map(|p| (self.phase_slope - p).abs() / p.abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub epsilon: f64,
    pub stations: Vec<StationFit>,
}

pub const FIT_CSV_HEADER: [&str; 6] = ["x_station", "amplitude", "phase_slope", "predicted_slope", "relative_error", "residual_rms"];

impl FitResult {
    /// Attach `eps^2 A(x)^2 Phi_1(x)` from `phi_one(p)`.
    pub fn with_prediction(mut self, p: &CubicNonlinearity) -> Result<Self, ProfileError> {
        let p1 = phi_one(p)?;
        let e2 = self.epsilon * self.epsilon;
        for s in &mut self.stations {
            s.predicted_slope = Some(e2 * s.amplitude * s.amplitude * p1.eval(s.x).map_err(NonlinearityError::from)?);
        }
        Ok(self)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(FIT_CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        for s in &self.stations {
            out.write_record([fmt(s.x), fmt(s.amplitude), fmt(s.phase_slope), opt(s.predicted_slope), opt(s.relative_error()), fmt(s.residual_rms)])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// Phase regression uses `t >= t_min`; default is the last decade `t >= t_end / 10`.
    pub t_min: Option<f64>,
    /// Add a `1/t` column to absorb the leading finite-time correction of the phase.
    pub inverse_t: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { t_min: None, inverse_t: true }
    }
}

/// Unwrapped phase of `z` minus `t phi`, built from increments `arg(z_{n+1}/z_n e^{-i phi dt})`.
/// Fails if the expected increment `phi dt` reaches `pi`.
pub fn residual_phase(times: &[f64], z: &[C64], phi_x: f64, x: f64) -> Result<Vec<f64>, ProfileError> {
    let mut out = Vec::with_capacity(z.len());
    let mut acc = z[0].arg() - times[0] * phi_x;
    out.push(acc);
    for n in 1..z.len() {
        let dt = times[n] - times[n - 1];
        let step = phi_x * dt;
        if step.abs() >= std::f64::consts::PI {
            return Err(ProfileError::Unwrap { x, t: times[n], step });
        }
        let d = (z[n] * z[n - 1].conj() * C64::from_polar(1.0, -step)).arg();
        acc += d;
        out.push(acc);
    }
    Ok(out)
}

/// Modified-scattering fit at every station; `phis[s] = phi(x_s)`.
pub fn fit_modified_scattering(series: &ProfileSeries, phis: &[f64], opts: &FitOptions) -> Result<FitResult, ProfileError> {
    if series.stations.is_empty() {
        return Err(ProfileError::InsufficientData("no stations".into()));
    }
    if phis.len() != series.stations.len() {
        return Err(ProfileError::Series(format!("{} phase speeds for {} stations", phis.len(), series.stations.len())));
    }
    let t_end = *series.times.last().ok_or_else(|| ProfileError::InsufficientData("empty series".into()))?;
    let t_min = opts.t_min.unwrap_or(t_end / 10.0);
    let idx: Vec<usize> = (0..series.times.len()).filter(|&n| series.times[n] >= t_min).collect();
    let ncols = if opts.inverse_t { 3 } else { 2 };
    if idx.len() < MIN_SAMPLES.max(ncols + 1) {
        return Err(ProfileError::InsufficientData(format!("{} samples with t >= {t_min}", idx.len())));
    }
    let amp_from = t_end / 10.0;
    let stations = (0..series.stations.len())
        .into_par_iter()
        .map(|s| {
            let x = series.stations[s];
            let z = series.station_values(s);
            let ph = residual_phase(&series.times, &z, phis[s], x)?;
            let ts: Vec<f64> = idx.iter().map(|&n| series.times[n]).collect();
            let ys: Vec<f64> = idx.iter().map(|&n| ph[n]).collect();
            let mut cols = vec![vec![1.0; ts.len()], ts.iter().map(|t| t.ln()).collect()];
            if opts.inverse_t {
                cols.push(ts.iter().map(|t| 1.0 / t).collect());
            }
            let (c, rms) = least_squares(&cols, &ys);
            let (lin, _) = least_squares(&[vec![1.0; ts.len()], ts.clone()], &ys);
            let mods: Vec<f64> = (0..series.times.len()).filter(|&n| series.times[n] >= amp_from).map(|n| z[n].norm()).collect();
            let amplitude = mods.iter().sum::<f64>() / mods.len() as f64 / series.epsilon;
            Ok(StationFit { x, amplitude, phase_slope: c[1], linear_slope: lin[1], residual_rms: rms, predicted_slope: None })
        })
        .collect::<Result<Vec<_>, ProfileError>>()?;
    Ok(FitResult { epsilon: series.epsilon, stations })
}

/// Closed-form solution of `D_t f = theta phi f + theta Phi_1 |f|^2 f / t` from `f(1) = f1`,
/// as `(|f|, arg f)`.  The modulus is conserved, so it is returned untouched.
///
/// With the fixed window, `int_1^t theta = theta (t - 1)` and `int_1^t theta / tau = theta log t`.
pub fn ode_exact_polar(f1: &[C64], phi1: &[f64], xs: &[f64], t: f64, delta0: f64) -> Vec<(f64, f64)> {
    f1.iter()
        .zip(phi1)
        .zip(xs)
        .map(|((&f, &p1), &x)| {
            let th = theta(x, delta0);
            let (r, arg) = f.to_polar();
            (r, arg + th * phi(x) * (t - 1.0) + th * p1 * r * r * t.ln())
        })
        .collect()
}

pub fn ode_exact(f1: &[C64], phi1: &[f64], xs: &[f64], t: f64, delta0: f64) -> Vec<C64> {
    ode_exact_polar(f1, phi1, xs, t, delta0).into_iter().map(|(r, a)| C64::from_polar(r, a)).collect()
}

/// Classical RK4 for the profile ODE, landing exactly on `t`.  The linear phase
/// `theta phi (t - 1)` is factored out exactly, RK4 integrates the cubic part
/// `d/dt g = i theta Phi_1 |g|^2 g / t`.
pub fn ode_rk4(f1: &[C64], phi1: &[f64], xs: &[f64], t: f64, dt: f64, delta0: f64) -> Vec<C64> {
    let n = ((t - 1.0) / dt).ceil().max(1.0) as usize;
    let h = (t - 1.0) / n as f64;
    f1.iter()
        .zip(phi1)
        .zip(xs)
        .map(|((&f0, &p1), &x)| {
            let th = theta(x, delta0);
            let cub = th * p1;
            let rhs = |g: C64, s: f64| C64::new(0.0, cub * g.norm_sqr() / s) * g;
            let mut g = f0;
            for i in 0..n {
                let s = 1.0 + i as f64 * h;
                let k1 = rhs(g, s);
                let k2 = rhs(g + k1 * (0.5 * h), s + 0.5 * h);
                let k3 = rhs(g + k2 * (0.5 * h), s + 0.5 * h);
                let k4 = rhs(g + k3 * h, s + h);
                g += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            g * C64::from_polar(1.0, th * phi(x) * (t - 1.0))
        })
        .collect()
}

/// `Re[(eps/sqrt t) a(x/t) exp(i t phi(x/t) + i eps^2 |a(x/t)|^2 Phi_1(x/t) log t)]`, `None` for `|x/t| >= 1`.
pub fn asymptotic_u(a: impl Fn(f64) -> C64, phi1: impl Fn(f64) -> f64, eps: f64, t: f64, x: f64) -> Option<f64> {
    let z = x / t;
    if z.abs() >= 1.0 {
        return None;
    }
    let av = a(z);
    let phase = t * phi(z) + eps * eps * av.norm_sqr() * phi1(z) * t.ln();
    Some((av * C64::from_polar(eps / t.sqrt(), phase)).re)
}

const S3: SignTriple = [1, 1, 1];
const S_1: SignTriple = [1, -1, -1];
const S_3: SignTriple = [-1, -1, -1];

/// Non-characteristic coefficients `Phi_3, Phi_-1, Phi_-3` for `Sigma = <xi>^-1`, zero where theta vanishes.
pub fn normal_form_coefficients(p: &CubicNonlinearity, xs: &[f64], delta0: f64) -> Result<Vec<[C64; 3]>, ProfileError> {
    let raws = [raw_coefficient(p, S3)?, raw_coefficient(p, S_1)?, raw_coefficient(p, S_3)?];
    let signs = [S3, S_1, S_3];
    xs.iter()
        .map(|&x| {
            if theta(x, delta0) == 0.0 {
                return Ok([C64::new(0.0, 0.0); 3]);
            }
            let mut out = [C64::new(0.0, 0.0); 3];
            for i in 0..3 {
                out[i] = coefficient_value(&raws[i], signs[i], -1, x)?;
            }
            Ok(out)
        })
        .collect()
}

/// `f = v + Op^w(Gamma)[-(h/2)(theta/phi) Phi_3 v^3 + (h/2)(theta/phi) Phi_-1 |v|^2 conj(v)
///  + (h/4)(theta/phi) Phi_-3 conj(v)^3]` for `v = v^Sigma_Lambda` on the frame.
pub fn normal_form(v: &[C64], p: &CubicNonlinearity, frame: &FrameConfig, delta0: f64, gamma_width: f64) -> Result<Vec<C64>, ProfileError> {
    if !(delta0 > 0.0 && delta0 < 0.5) {
        return Err(ProfileError::Series(format!("delta0 = {delta0} outside (0, 1/2)")));
    }
    if p.is_zero() {
        return Ok(v.to_vec());
    }
    let xs = frame.xs();
    let coef = normal_form_coefficients(p, &xs, delta0)?;
    let h = frame.h;
    let g: Vec<C64> = v
        .iter()
        .zip(&xs)
        .zip(&coef)
        .map(|((&z, &x), c)| {
            let th = theta(x, delta0);
            if th == 0.0 {
                return C64::new(0.0, 0.0);
            }
            let w = th / phi(x);
            let zb = z.conj();
            (c[0] * z * z * z * (-0.5 * h) + c[1] * z * z.conj() * zb * (0.5 * h) + c[2] * zb * zb * zb * (0.25 * h)) * w
        })
        .collect();
    let op = WeylOperator::new(&cutoff(gamma_width), frame, Storage::Auto);
    Ok(v.iter().zip(op.apply(&g)).map(|(a, b)| a + b).collect())
}

fn cutoff(gamma_width: f64) -> crate::semiclassical::SymbolDescriptor {
    lambda_cutoff_windowed(gamma_width, 0.95, 0.98)
}

/// Frame quantities at one time: `v^Sigma`, `v^Sigma_Lambda = Op^w(Gamma) v^Sigma` and `f`.
#[derive(Clone, Debug)]
pub struct FrameFields {
    pub t: f64,
    pub frame: FrameConfig,
    pub v_sigma: Vec<C64>,
    pub v_sigma_lambda: Vec<C64>,
    pub f: Vec<C64>,
}

impl FrameFields {
    /// `||v^Sigma - v^Sigma_Lambda||_inf`
    pub fn lambda_residual(&self) -> f64 {
        sup_diff(&self.v_sigma, &self.v_sigma_lambda)
    }

    /// `||f - v^Sigma_Lambda||_inf`
    pub fn normal_form_correction(&self) -> f64 {
        sup_diff(&self.f, &self.v_sigma_lambda)
    }
}

fn sup_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOptions {
    pub half_width: f64,
    /// Frames are sized so their frequency grid reaches this `|xi|`.
    pub xi_max: f64,
    pub delta0: f64,
    pub gamma_width: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        FrameOptions { half_width: crate::semiclassical::DEFAULT_HALF_WIDTH, xi_max: 10.0, delta0: DEFAULT_DELTA0, gamma_width: 1.0 }
    }
}

/// Build the frame fields from a solver state.
pub fn frame_fields(grid: &Grid1D<f64>, state: &KGState<f64>, p: &CubicNonlinearity, opts: &FrameOptions) -> Result<FrameFields, ProfileError> {
    let t = state.t;
    let frame = FrameConfig::covering(1.0 / t, opts.half_width, opts.xi_max)?;
    let v = to_frame(&w_field(grid, state), grid, t, &frame)?;
    let v_sigma = multiplier(&v, &frame, |xi| C64::new(1.0 / bracket(xi), 0.0));
    let op = WeylOperator::new(&cutoff(opts.gamma_width), &frame, Storage::Auto);
    let v_sigma_lambda = op.apply(&v_sigma);
    let f = normal_form(&v_sigma_lambda, p, &frame, opts.delta0, opts.gamma_width)?;
    Ok(FrameFields { t, frame, v_sigma, v_sigma_lambda, f })
}

/// Records the two remainder norms at fixed times.
pub struct NormalFormObserver {
    pub times: Vec<f64>,
    pub p: CubicNonlinearity,
    pub opts: FrameOptions,
    /// `(t, ||v^Sigma - v^Sigma_Lambda||_inf, ||f - v^Sigma_Lambda||_inf)`
    pub records: Vec<(f64, f64, f64)>,
}

impl NormalFormObserver {
    pub fn new(times: Vec<f64>, p: CubicNonlinearity, opts: FrameOptions) -> Self {
        NormalFormObserver { times, p, opts, records: vec![] }
    }
}

impl Observer<f64> for NormalFormObserver {
    fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    fn observe(&mut self, state: &KGState<f64>, grid: &Grid1D<f64>) -> Result<(), SolverError> {
        let ff = frame_fields(grid, state, &self.p, &self.opts).map_err(|e| SolverError::Config(e.to_string()))?;
        self.records.push((state.t, ff.lambda_residual(), ff.normal_form_correction()));
        Ok(())
    }
}

/// Synthetic series from the closed-form profile: `values = eps a exp(i t phi + i eps^2 |a|^2 Phi_1 log t)`.
pub fn synthetic_series(epsilon: f64, stations: &[f64], a: &[C64], phi1: &[f64], times: &[f64]) -> Result<ProfileSeries, ProfileError> {
    let mut s = ProfileSeries::new(epsilon, stations.to_vec())?;
    for &t in times {
        let row = stations
            .iter()
            .zip(a)
            .zip(phi1)
            .map(|((&x, &av), &p1)| av * C64::from_polar(epsilon, t * phi(x) + epsilon * epsilon * av.norm_sqr() * p1 * t.ln()))
            .collect();
        s.push(t, row)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::library;

    fn times(t_end: f64) -> Vec<f64> {
        crate::solver::default_schedule(t_end, 1.0)
    }

    #[test]
    fn ode_trivial_cases() {
        let xs = [0.0, 0.5];
        let z = ode_exact(&[C64::new(0.0, 0.0); 2], &[1.0, 1.0], &xs, 50.0, DEFAULT_DELTA0);
        assert!(z.iter().all(|c| c.norm() == 0.0));
        let f1 = [C64::new(0.3, 0.4), C64::new(-1.0, 0.2)];
        let lin = ode_exact(&f1, &[0.0, 0.0], &xs, 50.0, DEFAULT_DELTA0);
        for ((a, b), x) in lin.iter().zip(&f1).zip(&xs) {
            assert!((a - b * C64::from_polar(1.0, phi(*x) * 49.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn ode_rk4_matches_closed_form() {
        let xs = [0.0, 0.3, -0.7, 0.9];
        let f1 = [C64::new(0.3, 0.1), C64::new(0.2, -0.4), C64::new(-0.5, 0.0), C64::new(0.1, 0.1)];
        let p1 = [0.375, -0.2, 1.0, 0.05];
        let exact = ode_exact(&f1, &p1, &xs, 1000.0, DEFAULT_DELTA0);
        let rk = ode_rk4(&f1, &p1, &xs, 1000.0, 0.1, DEFAULT_DELTA0);
        for i in 0..4 {
            assert!((exact[i] - rk[i]).norm() <= 1e-6);
            assert!((exact[i].norm() - f1[i].norm()).abs() <= 1e-15);
        }
    }

    #[test]
    fn asymptotic_u_cases() {
        assert_eq!(asymptotic_u(|_| C64::new(0.0, 0.0), |_| 1.0, 0.1, 10.0, 2.0), Some(0.0));
        let t = 7.0;
        let v = asymptotic_u(|_| C64::new(1.0, 0.0), |_| 0.0, 0.2, t, 0.0).unwrap();
        assert!((v - 0.2 / t.sqrt() * t.cos()).abs() < 1e-15);
        assert!(asymptotic_u(|_| C64::new(1.0, 0.0), |_| 0.0, 0.2, t, 8.0).is_none());
    }

    #[test]
    fn linear_series_has_zero_slope() {
        let st = [0.0, 0.4];
        let s = synthetic_series(0.05, &st, &[C64::new(1.0, 0.5), C64::new(0.7, 0.0)], &[0.0, 0.0], &times(400.0)).unwrap();
        let fit = fit_modified_scattering(&s, &[phi(0.0), phi(0.4)], &FitOptions::default()).unwrap();
        for f in &fit.stations {
            assert!(f.phase_slope.abs() < 1e-8, "{f:?}");
        }
    }

    #[test]
    fn planted_slope_recovered() {
        let st = [0.0, -0.5];
        let eps = 0.1;
        let a = [C64::new(1.0, 0.0), C64::new(0.5, 0.5)];
        // eps^2 |a|^2 Phi_1 = 0.01 at both stations
        let p1 = [1.0, 2.0];
        let s = synthetic_series(eps, &st, &a, &p1, &times(400.0)).unwrap();
        let fit = fit_modified_scattering(&s, &[phi(0.0), phi(-0.5)], &FitOptions::default()).unwrap();
        for f in &fit.stations {
            assert!((f.phase_slope - 0.01).abs() < 1e-6, "{f:?}");
        }
        assert!((fit.stations[0].amplitude - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_ode_exact_data() {
        let xs = [0.0, 0.2, 0.6];
        let f1 = [C64::new(0.3, 0.1), C64::new(0.2, -0.4), C64::new(-0.5, 0.0)];
        let p1 = [0.375, -0.2, 1.0];
        let mut s = ProfileSeries::new(1.0, xs.to_vec()).unwrap();
        for t in times(500.0) {
            s.push(t, ode_exact(&f1, &p1, &xs, t, DEFAULT_DELTA0)).unwrap();
        }
        let fit = fit_modified_scattering(&s, &xs.map(phi), &FitOptions::default()).unwrap();
        for i in 0..3 {
            assert!((fit.stations[i].phase_slope - p1[i] * f1[i].norm_sqr()).abs() < 1e-8);
        }
    }

    #[test]
    fn theta_integral_constant_is_time_independent() {
        // arg f - phi t = arg f1 - phi at every t in the last decade when Phi_1 = 0
        let xs = [0.0, 0.9];
        let f1 = [C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        let ts: Vec<f64> = (100..=1000).step_by(50).map(|t| t as f64).collect();
        for (i, &x) in xs.iter().enumerate() {
            let c: Vec<f64> = ts
                .iter()
                .map(|&t| {
                    let z = ode_exact(&f1, &[0.0, 0.0], &xs, t, DEFAULT_DELTA0)[i] * C64::from_polar(1.0, -phi(x) * t);
                    z.arg()
                })
                .collect();
            assert!(c.iter().all(|v| (v - c[0]).abs() < 1e-9), "{c:?}");
        }
    }

    #[test]
    fn unwrap_and_data_errors() {
        let mut s = ProfileSeries::new(1.0, vec![0.0]).unwrap();
        for t in [1.0, 5.0] {
            s.push(t, vec![C64::new(1.0, 0.0)]).unwrap();
        }
        assert!(matches!(residual_phase(&s.times, &s.station_values(0), 1.0, 0.0), Err(ProfileError::Unwrap { .. })));
        assert!(matches!(fit_modified_scattering(&s, &[1.0], &FitOptions::default()), Err(ProfileError::InsufficientData(_))));
        let empty = ProfileSeries::new(1.0, vec![]).unwrap();
        assert!(matches!(fit_modified_scattering(&empty, &[], &FitOptions::default()), Err(ProfileError::InsufficientData(_))));
        assert!(ProfileSeries::new(1.0, vec![0.95]).is_err());
        assert!(s.push(2.0, vec![C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn series_csv_round_trip() {
        let st = [0.0, 0.4];
        let s = synthetic_series(0.05, &st, &[C64::new(1.0, 0.5), C64::new(0.7, 0.0)], &[0.1, 0.2], &times(20.0)).unwrap();
        let mut buf = vec![];
        s.write_csv(&mut buf).unwrap();
        let back = ProfileSeries::read_csv(0.05, buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn normal_form_trivial_and_order_h() {
        let p0 = CubicNonlinearity::zero();
        let p = library::ut_cubed();
        for &h in &[1.0 / 32.0, 1.0 / 64.0] {
            let frame = FrameConfig::covering(h, 1.2, 6.0).unwrap();
            let xs = frame.xs();
            let v: Vec<C64> = xs.iter().map(|&x| C64::from_polar((-4.0 * x * x).exp(), phi(x) / h)).collect();
            assert_eq!(normal_form(&v, &p0, &frame, DEFAULT_DELTA0, 1.0).unwrap(), v);
            let f = normal_form(&v, &p, &frame, DEFAULT_DELTA0, 1.0).unwrap();
            let d = sup_diff(&f, &v);
            assert!(d > 0.0);
            // f - v = h Op(Gamma) G with G independent of h
            let coef = normal_form_coefficients(&p, &xs, DEFAULT_DELTA0).unwrap();
            let g_sup = v
                .iter()
                .zip(&xs)
                .zip(&coef)
                .map(|((z, &x), c)| {
                    let w = theta(x, DEFAULT_DELTA0) / phi(x).max(1e-300);
                    w * (0.5 * c[0].norm() + 0.5 * c[1].norm() + 0.25 * c[2].norm()) * z.norm().powi(3)
                })
                .fold(0.0, f64::max);
            let op = WeylOperator::new(&cutoff(1.0), &frame, Storage::Auto);
            let row_sum = (0..frame.m).map(|j| (0..frame.m).map(|l| op.entry(j, l).norm()).sum::<f64>()).fold(0.0, f64::max);
            assert!(d <= h * g_sup * row_sum * (1.0 + 1e-12), "{d} vs {}", h * g_sup * row_sum);
        }
    }
}
