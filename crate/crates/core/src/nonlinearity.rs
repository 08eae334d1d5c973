//! Cubic nonlinearities `P(u, u_tx, u_xx; u_t, u_x)`, their null-condition functional and the
//! coefficients of the cubic interaction terms in the semiclassical frame.

use std::collections::BTreeMap;

use num_complex::Complex;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::halfalg::{rat, rational_from_f64, rational_to_f64, ComplexHalf, HalfAlgError, HalfExpr, Poly};
use crate::spectral::Grid1D;
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinearityError {
    #[error("monomial {0} has total degree {1}, expected 3")]
    Degree(MonomialKey, u32),
    #[error("monomial {0} is not affine in the second derivatives")]
    QuasiLinearity(MonomialKey),
    #[error("coefficient of {0} is not a finite real number")]
    Coefficient(MonomialKey),
    #[error("weight <{0} dphi>^{1} is outside the algebra of x and sqrt(1-x^2)")]
    WeightNotRepresentable(i32, i32),
    #[error(transparent)]
    Algebra(#[from] HalfAlgError),
}

/// Exponents of `(u, u_tx, u_xx, u_t, u_x)`, i.e. of the slots `(X1, X2, X3, Y1, Y2)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct MonomialKey {
    pub u: u8,
    pub utx: u8,
    pub uxx: u8,
    pub ut: u8,
    pub ux: u8,
}

impl MonomialKey {
    pub const fn new(u: u8, utx: u8, uxx: u8, ut: u8, ux: u8) -> Self {
        MonomialKey { u, utx, uxx, ut, ux }
    }

    /// Exponents in slot order `(X1, X2, X3, Y1, Y2)`.
    pub fn slots(&self) -> [u8; 5] {
        [self.u, self.utx, self.uxx, self.ut, self.ux]
    }

    pub fn degree(&self) -> u32 {
        self.slots().iter().map(|&e| e as u32).sum()
    }

    /// Degree in `(Y1, Y2)`.
    pub fn y_degree(&self) -> u8 {
        self.ut + self.ux
    }

    /// Degree in `(X2, X3)`.
    pub fn second_order_degree(&self) -> u8 {
        self.utx + self.uxx
    }

    pub fn validate(&self) -> Result<(), NonlinearityError> {
        let d = self.degree();
        if d != 3 {
            return Err(NonlinearityError::Degree(*self, d));
        }
        if self.second_order_degree() > 1 {
            return Err(NonlinearityError::QuasiLinearity(*self));
        }
        Ok(())
    }
}

impl std::fmt::Display for MonomialKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names = ["u", "u_tx", "u_xx", "u_t", "u_x"];
        let mut parts = Vec::new();
        for (e, n) in self.slots().iter().zip(names) {
            match e {
                0 => {}
                1 => parts.push(n.to_string()),
                _ => parts.push(format!("{n}^{e}")),
            }
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

/// One entry of the JSON nonlinearity list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityRecord {
    pub u: u8,
    pub utx: u8,
    pub uxx: u8,
    pub ut: u8,
    pub ux: u8,
    pub coeff: f64,
}

/// Real cubic polynomial `P`, coefficients kept as exact rationals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CubicNonlinearity {
    terms: BTreeMap<MonomialKey, BigRational>,
}

impl CubicNonlinearity {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Add `c * key`, with `c` promoted exactly from its decimal literal.
    pub fn with(self, key: MonomialKey, c: f64) -> Result<Self, NonlinearityError> {
        let r = rational_from_f64(c).map_err(|_| NonlinearityError::Coefficient(key))?;
        Ok(self.with_exact(key, r))
    }

    pub fn with_exact(mut self, key: MonomialKey, c: BigRational) -> Self {
        let entry = self.terms.entry(key).or_insert_with(BigRational::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&key);
        }
        self
    }

    pub fn monomial(key: MonomialKey, c: f64) -> Result<Self, NonlinearityError> {
        Self::zero().with(key, c)
    }

    pub fn from_records(records: &[NonlinearityRecord]) -> Result<Self, NonlinearityError> {
        let mut p = Self::zero();
        for r in records {
            p = p.with(MonomialKey::new(r.u, r.utx, r.uxx, r.ut, r.ux), r.coeff)?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_records(&self) -> Vec<NonlinearityRecord> {
        self.terms
            .iter()
            .map(|(k, c)| NonlinearityRecord { u: k.u, utx: k.utx, uxx: k.uxx, ut: k.ut, ux: k.ux, coeff: rational_to_f64(c) })
            .collect()
    }

    pub fn terms(&self) -> &BTreeMap<MonomialKey, BigRational> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn validate(&self) -> Result<(), NonlinearityError> {
        self.terms.keys().try_for_each(MonomialKey::validate)
    }
}

impl std::fmt::Display for CubicNonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let s: Vec<String> = self.terms.iter().map(|(k, c)| format!("({c})*{k}")).collect();
        write!(f, "{}", s.join(" + "))
    }
}

pub fn validate(p: &CubicNonlinearity) -> Result<(), NonlinearityError> {
    p.validate()
}

/// `P'_k` over `(X1; Y1, Y2)` and `P''_k` over `(X1, X2, X3; Y1, Y2)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecompositionTable {
    pub pprime: [BTreeMap<[u8; 3], BigRational>; 4],
    pub pdoubleprime: [BTreeMap<[u8; 5], BigRational>; 3],
}

/// Split `P` into the homogeneous pieces with
/// `P' = sum_k i^k P'_k(X1; -iY1, -iY2)` and `P'' = sum_k i^k P''_k(X1, -X2, -X3; -iY1, -iY2)`.
///
/// `i^k (-i)^k = 1`, so `P'_k` is the degree-`k`-in-`Y` part of `P'`; `P''` is linear in
/// `(X2, X3)`, so `P''_k` is minus the degree-`k` part of `P''`.
pub fn decompose(p: &CubicNonlinearity) -> Result<DecompositionTable, NonlinearityError> {
    p.validate()?;
    let mut t = DecompositionTable::default();
    for (key, c) in &p.terms {
        let k = key.y_degree() as usize;
        if key.second_order_degree() == 0 {
            *t.pprime[k].entry([key.u, key.ut, key.ux]).or_insert_with(BigRational::zero) += c.clone();
        } else {
            *t.pdoubleprime[k].entry(key.slots()).or_insert_with(BigRational::zero) -= c.clone();
        }
    }
    Ok(t)
}

/// Evaluate a sparse monomial table at `vars`, coefficients lifted by `lift`.
pub fn eval_table<T, const N: usize>(table: &BTreeMap<[u8; N], BigRational>, vars: &[T; N], lift: impl Fn(&BigRational) -> T) -> T
where
    T: Clone + Zero + One,
{
    let mut acc = T::zero();
    for (exps, c) in table {
        let mut term = lift(c);
        for (v, &e) in vars.iter().zip(exps.iter()) {
            for _ in 0..e {
                term = term * v.clone();
            }
        }
        acc = acc + term;
    }
    acc
}

fn lift_half(c: &BigRational) -> HalfExpr {
    HalfExpr::constant(c.clone())
}

impl Zero for HalfExpr {
    fn zero() -> Self {
        HalfExpr::zero()
    }
    fn is_zero(&self) -> bool {
        HalfExpr::is_zero(self)
    }
}

impl One for HalfExpr {
    fn one() -> Self {
        HalfExpr::one()
    }
}

/// The point `(1, omega0 omega1, omega1^2; omega0, omega1)` at which the decomposition is read.
fn null_point() -> [HalfExpr; 5] {
    let w0 = HalfExpr::omega0();
    let w1 = HalfExpr::omega1();
    [HalfExpr::one(), &w0 * &w1, &w1 * &w1, w0, w1]
}

fn pprime_at(t: &DecompositionTable, k: usize, pt: &[HalfExpr; 5]) -> HalfExpr {
    eval_table(&t.pprime[k], &[pt[0].clone(), pt[3].clone(), pt[4].clone()], lift_half)
}

fn pdoubleprime_at(t: &DecompositionTable, k: usize, pt: &[HalfExpr; 5]) -> HalfExpr {
    if k > 2 {
        return HalfExpr::zero();
    }
    eval_table(&t.pdoubleprime[k], pt, lift_half)
}

/// `Phi = P'_1(1; w0, w1) + P''_1(1, w0 w1, w1^2; w0, w1) + 3 P'_3(1; w0, w1)`.
pub fn null_functional(p: &CubicNonlinearity) -> Result<HalfExpr, NonlinearityError> {
    let t = decompose(p)?;
    let pt = null_point();
    let three = HalfExpr::constant(rat(3, 1));
    Ok(&(&pprime_at(&t, 1, &pt) + &pdoubleprime_at(&t, 1, &pt)) + &(&three * &pprime_at(&t, 3, &pt)))
}

/// `Phi_1 = (1/8) (1 - x^2)^2 [3 P_0 + P_2]`, `P_k = P'_k + P''_k` at the null point.
pub fn phi_one(p: &CubicNonlinearity) -> Result<HalfExpr, NonlinearityError> {
    let t = decompose(p)?;
    let pt = null_point();
    let p0 = &pprime_at(&t, 0, &pt) + &pdoubleprime_at(&t, 0, &pt);
    let p2 = &pprime_at(&t, 2, &pt) + &pdoubleprime_at(&t, 2, &pt);
    let bracket = &p0.scale(&rat(3, 1)) + &p2;
    Ok(bracket.mul_sqrt_pow(4).scale(&rat(1, 8)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NullReport {
    pub phi: HalfExpr,
    /// Coefficients of `Q(x) = (1 - x^2)^(3/2) Phi(x)`, ascending.
    pub q_coeffs: Vec<BigRational>,
    pub verdict: bool,
    pub phi1: HalfExpr,
}

pub fn check_null(p: &CubicNonlinearity) -> Result<NullReport, NonlinearityError> {
    let phi = null_functional(p)?;
    let q = phi
        .mul_sqrt_pow(3)
        .as_polynomial()
        .expect("(1-x^2)^(3/2) Phi is a polynomial for every cubic P");
    Ok(NullReport { verdict: phi.is_zero(), q_coeffs: q.coeffs().to_vec(), phi, phi1: phi_one(p)? })
}

/// Sign pattern of a cubic term: `+1` for a factor `v`, `-1` for `conj(v)`.
pub type SignTriple = [i8; 3];

/// Per-factor value of slot `s` (0..5 = X1, X2, X3, Y1, Y2) on a factor of sign `iota`
/// once `hD` is replaced by `iota * dphi`.
fn slot_value(slot: usize, iota: i8) -> HalfExpr {
    let half = rat(1, 2);
    let d = HalfExpr::omega1();
    let inv_bracket = HalfExpr::phi();
    let sign = HalfExpr::constant(rat(iota as i64, 1));
    let v = match slot {
        0 => inv_bracket,
        1 => d,
        2 => &(&d * &d) * &inv_bracket,
        3 => sign,
        _ => &(&sign * &d) * &inv_bracket,
    };
    v.scale(&half)
}

fn triple_key(mut s: SignTriple) -> SignTriple {
    s.sort_unstable();
    s
}

/// Coefficient of `v_{i1} v_{i2} v_{i3}` for one monomial, before the `a_I` weight.
fn monomial_coefficient(slots: [u8; 5], signs: SignTriple) -> HalfExpr {
    let mut factors = Vec::with_capacity(3);
    for (s, &e) in slots.iter().enumerate() {
        for _ in 0..e {
            factors.push(s);
        }
    }
    let target = triple_key(signs);
    let mut acc = HalfExpr::zero();
    for mask in 0..8u8 {
        let assign: SignTriple = [0, 1, 2].map(|j| if mask >> j & 1 == 1 { -1 } else { 1 });
        if triple_key(assign) != target {
            continue;
        }
        let mut term = HalfExpr::one();
        for (f, &iota) in factors.iter().zip(assign.iter()) {
            term = &term * &slot_value(*f, iota);
        }
        acc = &acc + &term;
    }
    acc
}

/// Coefficient with `a_I = 1`, i.e. `Sigma = 1`.
pub fn raw_coefficient(p: &CubicNonlinearity, signs: SignTriple) -> Result<ComplexHalf, NonlinearityError> {
    let t = decompose(p)?;
    let mut acc = ComplexHalf::zero();
    for (k, table) in t.pprime.iter().enumerate() {
        for (e, c) in table {
            let m = monomial_coefficient([e[0], 0, 0, e[1], e[2]], signs).scale(c);
            acc = acc.add(&ComplexHalf::real(m).mul_i_pow(k as u32));
        }
    }
    for (k, table) in t.pdoubleprime.iter().enumerate() {
        for (e, c) in table {
            let m = monomial_coefficient(*e, signs).scale(c);
            acc = acc.add(&ComplexHalf::real(m).mul_i_pow(k as u32));
        }
    }
    Ok(acc)
}

fn sign_sum(signs: SignTriple) -> i32 {
    signs.iter().map(|&s| s as i32).sum()
}

/// `a_I = Sigma((i1+i2+i3) dphi) Sigma(dphi)^-3` with `Sigma = <xi>^sigma_power`, exactly.
pub fn weight_exact(signs: SignTriple, sigma_power: i32) -> Result<HalfExpr, NonlinearityError> {
    let m = sign_sum(signs);
    // <dphi> = (1-x^2)^(-1/2)
    let cube_part = HalfExpr::sqrt_one_minus_x2_pow(3 * sigma_power);
    if m.abs() == 1 {
        return Ok(&HalfExpr::sqrt_one_minus_x2_pow(-sigma_power) * &cube_part);
    }
    // <3 dphi>^2 = (1 + 8x^2)/(1 - x^2)
    if sigma_power >= 0 && sigma_power % 2 == 0 {
        let num = HalfExpr::from_poly(Poly::from_coeffs(vec![rat(1, 1), rat(0, 1), rat(8, 1)])).pow((sigma_power / 2) as u32);
        let den = HalfExpr::sqrt_one_minus_x2_pow(-sigma_power);
        return Ok(&(&num * &den) * &cube_part);
    }
    Err(NonlinearityError::WeightNotRepresentable(m, sigma_power))
}

/// Numerical value of `a_I` at `x`.
pub fn weight_value(signs: SignTriple, sigma_power: i32, x: f64) -> f64 {
    let m = sign_sum(signs) as f64;
    let dphi = -x / (1.0 - x * x).sqrt();
    let br = |xi: f64| (1.0 + xi * xi).sqrt();
    br(m * dphi).powi(sigma_power) * br(dphi).powi(-3 * sigma_power)
}

/// Coefficient of `v_{i1} v_{i2} v_{i3}` in the frame equation, with `a_I` weight for
/// `Sigma(xi) = <xi>^sigma_power` and the cutoff inside `a_I` taken to be 1.
///
/// For `|i1+i2+i3| = 3` the weight involves `sqrt(1+8x^2)` and is exact only for even
/// non-negative `sigma_power`; use [`coefficient_value`] otherwise.
pub fn extract_coefficients(p: &CubicNonlinearity, signs: SignTriple, sigma_power: i32) -> Result<ComplexHalf, NonlinearityError> {
    let raw = raw_coefficient(p, signs)?;
    Ok(raw.mul_real(&weight_exact(signs, sigma_power)?))
}

/// Floating value of the weighted coefficient at `x`, available for every sign triple.
pub fn coefficient_value(raw: &ComplexHalf, signs: SignTriple, sigma_power: i32, x: f64) -> Result<Complex<f64>, NonlinearityError> {
    let w = weight_value(signs, sigma_power, x);
    Ok(Complex::new(raw.re.eval(x)? * w, raw.im.eval(x)? * w))
}

/// `P` in floating point, ready for pointwise evaluation on a grid.
#[derive(Clone, Debug)]
pub struct CompiledNonlinearity<T> {
    terms: Vec<(T, [u8; 5])>,
    needs_derivatives: bool,
}

impl<T: Real> CompiledNonlinearity<T> {
    pub fn new(p: &CubicNonlinearity) -> Result<Self, NonlinearityError> {
        p.validate()?;
        let terms: Vec<(T, [u8; 5])> = p.terms.iter().map(|(k, c)| (T::lit(rational_to_f64(c)), k.slots())).collect();
        let needs_derivatives = terms.iter().any(|(_, s)| s[1] + s[2] + s[4] > 0);
        Ok(CompiledNonlinearity { terms, needs_derivatives })
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn needs_derivatives(&self) -> bool {
        self.needs_derivatives
    }

    /// `P` at slot values `(u, u_tx, u_xx, u_t, u_x)`.
    #[inline]
    pub fn eval_point(&self, slots: [T; 5]) -> T {
        let mut acc = T::zero();
        for (c, e) in &self.terms {
            let mut term = *c;
            for (v, &k) in slots.iter().zip(e.iter()) {
                for _ in 0..k {
                    term = term * *v;
                }
            }
            acc = acc + term;
        }
        acc
    }

    /// Pointwise `P` from `u`, `u_t` and their spectral `x` derivatives.
    pub fn evaluate(&self, grid: &Grid1D<T>, u: &[T], ut: &[T]) -> Vec<T> {
        if self.terms.is_empty() {
            return vec![T::zero(); u.len()];
        }
        let (ux, uxx, utx) = if self.needs_derivatives {
            (grid.derivative(u, 1), grid.derivative(u, 2), grid.derivative(ut, 1))
        } else {
            let z = vec![T::zero(); u.len()];
            (z.clone(), z.clone(), z)
        };
        (0..u.len()).map(|j| self.eval_point([u[j], utx[j], uxx[j], ut[j], ux[j]])).collect()
    }
}

pub fn evaluate_nonlinearity<T: Real>(p: &CubicNonlinearity, u: &[T], ut: &[T], grid: &Grid1D<T>) -> Result<Vec<T>, NonlinearityError> {
    Ok(CompiledNonlinearity::new(p)?.evaluate(grid, u, ut))
}

/// Named nonlinearities used across tests, benches and examples.
pub mod library {
    use super::*;

    pub const U: MonomialKey = MonomialKey::new(3, 0, 0, 0, 0);
    pub const UT3: MonomialKey = MonomialKey::new(0, 0, 0, 3, 0);
    pub const U2_UXX: MonomialKey = MonomialKey::new(2, 0, 1, 0, 0);
    pub const U2_UT: MonomialKey = MonomialKey::new(2, 0, 0, 1, 0);

    pub fn u_cubed() -> CubicNonlinearity {
        CubicNonlinearity::zero().with_exact(U, rat(1, 1))
    }

    pub fn ut_cubed() -> CubicNonlinearity {
        CubicNonlinearity::zero().with_exact(UT3, rat(1, 1))
    }

    pub fn u2_uxx() -> CubicNonlinearity {
        CubicNonlinearity::zero().with_exact(U2_UXX, rat(1, 1))
    }

    pub fn u2_ut() -> CubicNonlinearity {
        CubicNonlinearity::zero().with_exact(U2_UT, rat(1, 1))
    }

    /// Every valid monomial key: 10 semilinear plus 12 with one second derivative.
    pub fn all_keys() -> Vec<MonomialKey> {
        let mut keys = Vec::new();
        for a1 in 0..=3u8 {
            for a2 in 0..=1u8 {
                for a3 in 0..=1u8 {
                    for b1 in 0..=3u8 {
                        for b2 in 0..=3u8 {
                            let k = MonomialKey::new(a1, a2, a3, b1, b2);
                            if k.validate().is_ok() {
                                keys.push(k);
                            }
                        }
                    }
                }
            }
        }
        keys
    }
}
