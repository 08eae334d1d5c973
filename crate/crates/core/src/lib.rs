//! kgflow: a lab for cubic quasi-linear Klein-Gordon equations on the line.
//!
//! `halfalg` and `nonlinearity` classify a cubic nonlinearity exactly.  `spectral` and
//! `solver` integrate the equation pseudo-spectrally from `t = 1`.  `semiclassical` and
//! `profile` turn solver states into the semiclassical frame `v(t, x) = sqrt(t) w(t, t x)`
//! and compare them with the profile ODE and the modified-scattering asymptotics.

pub mod fit;
pub mod halfalg;
pub mod nonlinearity;
pub mod profile;
pub mod semiclassical;
pub mod solver;
pub mod spectral;

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar the grid and the time stepper are generic over.
pub trait Real: Float + FloatConst + FromPrimitive + rustfft::FftNum + Display + Debug + Default + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub use num_complex::Complex;
pub type C64 = Complex<f64>;

pub type Grid = spectral::Grid1D<f64>;
pub type State = solver::KGState<f64>;
pub type Stepper = solver::Stepper<f64>;
pub type Compiled = nonlinearity::CompiledNonlinearity<f64>;

pub use halfalg::{ComplexHalf, HalfExpr, Poly};
pub use nonlinearity::{CubicNonlinearity, MonomialKey};
