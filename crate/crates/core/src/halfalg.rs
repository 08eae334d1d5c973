//! Exact algebra of expressions `(A(x) + s B(x)) / (1 - x^2)^k` with `s = sqrt(1 - x^2)`.
//!
//! Every finite sum of products of `x`, `sqrt(1-x^2)` and `1/sqrt(1-x^2)` lands here, which
//! covers `omega0`, `omega1`, `phi`, `d phi` and `<d phi>`.  Values are kept canonical
//! (minimal `k`, `s^2` folded back into `1 - x^2`) so structural equality is equality of
//! functions on `(-1, 1)`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Signed, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HalfAlgError {
    #[error("evaluation point {0} outside (-1, 1)")]
    Domain(f64),
    #[error("cannot convert {0} to an exact rational")]
    NotRational(String),
}

/// Coefficient field for [`Poly`] and [`HalfExpr`].
pub trait Field: Clone + PartialEq + fmt::Debug + fmt::Display + Num + Neg<Output = Self> + ToPrimitive + Send + Sync {}

impl<T> Field for T where T: Clone + PartialEq + fmt::Debug + fmt::Display + Num + Neg<Output = T> + ToPrimitive + Send + Sync {}

/// Dense univariate polynomial, ascending coefficients, no trailing zeros.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Poly<F: Field = BigRational> {
    coeffs: Vec<F>,
}

impl<F: Field> Poly<F> {
    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(c: F) -> Self {
        Poly::from_coeffs(vec![c])
    }

    pub fn x() -> Self {
        Poly::from_coeffs(vec![F::zero(), F::one()])
    }

    /// `1 - x^2`
    pub fn one_minus_x2() -> Self {
        Poly::from_coeffs(vec![F::one(), F::zero(), -F::one()])
    }

    pub fn from_coeffs(mut coeffs: Vec<F>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn coeffs(&self) -> &[F] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn scale(&self, c: &F) -> Self {
        Poly::from_coeffs(self.coeffs.iter().map(|a| a.clone() * c.clone()).collect())
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Poly::constant(F::one());
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    /// Exact quotient by `1 - x^2`, or `None` when it does not divide.
    pub fn div_one_minus_x2(&self) -> Option<Self> {
        let n = self.coeffs.len();
        if n == 0 {
            return Some(Poly::zero());
        }
        if n < 3 {
            return None;
        }
        // long division by x^2 - 1, top down
        let mut r = self.coeffs.clone();
        let mut q = vec![F::zero(); n - 2];
        for i in (2..n).rev() {
            let lead = r[i].clone();
            q[i - 2] = lead.clone();
            r[i] = F::zero();
            r[i - 2] = r[i - 2].clone() + lead;
        }
        if !r[0].is_zero() || !r[1].is_zero() {
            return None;
        }
        Some(-Poly::from_coeffs(q))
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c.to_f64().unwrap_or(f64::NAN))
    }
}

impl<F: Field> Add for &Poly<F> {
    type Output = Poly<F>;
    fn add(self, rhs: &Poly<F>) -> Poly<F> {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.coeffs.get(i).cloned().unwrap_or_else(F::zero);
            let b = rhs.coeffs.get(i).cloned().unwrap_or_else(F::zero);
            out.push(a + b);
        }
        Poly::from_coeffs(out)
    }
}

impl<F: Field> Sub for &Poly<F> {
    type Output = Poly<F>;
    fn sub(self, rhs: &Poly<F>) -> Poly<F> {
        self + &(-rhs.clone())
    }
}

impl<F: Field> Mul for &Poly<F> {
    type Output = Poly<F>;
    fn mul(self, rhs: &Poly<F>) -> Poly<F> {
        if self.is_zero() || rhs.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![F::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] = out[i + j].clone() + a.clone() * b.clone();
            }
        }
        Poly::from_coeffs(out)
    }
}

impl<F: Field> Neg for Poly<F> {
    type Output = Poly<F>;
    fn neg(self) -> Poly<F> {
        Poly { coeffs: self.coeffs.into_iter().map(|c| -c).collect() }
    }
}

impl<F: Field> fmt::Display for Poly<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match i {
                0 => write!(f, "{c}")?,
                1 => write!(f, "{c}*x")?,
                _ => write!(f, "{c}*x^{i}")?,
            }
        }
        Ok(())
    }
}

/// `(A(x) + s B(x)) / (1 - x^2)^k`, canonical.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct HalfExpr<F: Field = BigRational> {
    numer_even: Poly<F>,
    numer_odd: Poly<F>,
    denom_pow: u32,
}

impl<F: Field> HalfExpr<F> {
    pub fn new(numer_even: Poly<F>, numer_odd: Poly<F>, denom_pow: u32) -> Self {
        HalfExpr { numer_even, numer_odd, denom_pow }.canonical()
    }

    pub fn zero() -> Self {
        HalfExpr { numer_even: Poly::zero(), numer_odd: Poly::zero(), denom_pow: 0 }
    }

    pub fn one() -> Self {
        Self::constant(F::one())
    }

    pub fn constant(c: F) -> Self {
        HalfExpr::new(Poly::constant(c), Poly::zero(), 0)
    }

    pub fn from_poly(p: Poly<F>) -> Self {
        HalfExpr::new(p, Poly::zero(), 0)
    }

    pub fn x() -> Self {
        Self::from_poly(Poly::x())
    }

    /// `(1 - x^2)^(j/2)` for any integer `j`.
    pub fn sqrt_one_minus_x2_pow(j: i32) -> Self {
        let base = Poly::one_minus_x2();
        if j >= 0 {
            let j = j as u32;
            if j % 2 == 0 {
                HalfExpr::new(base.pow(j / 2), Poly::zero(), 0)
            } else {
                HalfExpr::new(Poly::zero(), base.pow(j / 2), 0)
            }
        } else {
            let m = (-j) as u32;
            if m % 2 == 0 {
                HalfExpr::new(Poly::constant(F::one()), Poly::zero(), m / 2)
            } else {
                HalfExpr::new(Poly::zero(), Poly::constant(F::one()), m.div_ceil(2))
            }
        }
    }

    /// `phi(x) = sqrt(1 - x^2)`
    pub fn phi() -> Self {
        Self::sqrt_one_minus_x2_pow(1)
    }

    /// `omega0(x) = 1 / sqrt(1 - x^2)`, also `<d phi(x)>`.
    pub fn omega0() -> Self {
        Self::sqrt_one_minus_x2_pow(-1)
    }

    /// `omega1(x) = -x / sqrt(1 - x^2)`, also `d phi(x)`.
    pub fn omega1() -> Self {
        -(&Self::x() * &Self::omega0())
    }

    pub fn numer_even(&self) -> &Poly<F> {
        &self.numer_even
    }

    pub fn numer_odd(&self) -> &Poly<F> {
        &self.numer_odd
    }

    pub fn denom_pow(&self) -> u32 {
        self.denom_pow
    }

    /// Fold common factors of `1 - x^2` out of the denominator.
    pub fn canonical(mut self) -> Self {
        if self.numer_even.is_zero() && self.numer_odd.is_zero() {
            self.denom_pow = 0;
            return self;
        }
        while self.denom_pow > 0 {
            match (self.numer_even.div_one_minus_x2(), self.numer_odd.div_one_minus_x2()) {
                (Some(a), Some(b)) => {
                    self.numer_even = a;
                    self.numer_odd = b;
                    self.denom_pow -= 1;
                }
                _ => break,
            }
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.numer_even.is_zero() && self.numer_odd.is_zero()
    }

    pub fn scale(&self, c: &F) -> Self {
        HalfExpr::new(self.numer_even.scale(c), self.numer_odd.scale(c), self.denom_pow)
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Self::one();
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    /// Multiply by `(1 - x^2)^(j/2)`.
    pub fn mul_sqrt_pow(&self, j: i32) -> Self {
        self * &Self::sqrt_one_minus_x2_pow(j)
    }

    /// The plain polynomial this expression equals, if it is one.
    pub fn as_polynomial(&self) -> Option<Poly<F>> {
        (self.denom_pow == 0 && self.numer_odd.is_zero()).then(|| self.numer_even.clone())
    }

    pub fn eval(&self, x: f64) -> Result<f64, HalfAlgError> {
        if !(x.abs() < 1.0) {
            return Err(HalfAlgError::Domain(x));
        }
        let q = 1.0 - x * x;
        let num = self.numer_even.eval_f64(x) + q.sqrt() * self.numer_odd.eval_f64(x);
        Ok(num / q.powi(self.denom_pow as i32))
    }

    fn lift(&self, k: u32) -> (Poly<F>, Poly<F>) {
        let f = Poly::one_minus_x2().pow(k - self.denom_pow);
        (&self.numer_even * &f, &self.numer_odd * &f)
    }
}

impl<F: Field> Add for &HalfExpr<F> {
    type Output = HalfExpr<F>;
    fn add(self, rhs: &HalfExpr<F>) -> HalfExpr<F> {
        let k = self.denom_pow.max(rhs.denom_pow);
        let (a1, b1) = self.lift(k);
        let (a2, b2) = rhs.lift(k);
        HalfExpr::new(&a1 + &a2, &b1 + &b2, k)
    }
}

impl<F: Field> Sub for &HalfExpr<F> {
    type Output = HalfExpr<F>;
    fn sub(self, rhs: &HalfExpr<F>) -> HalfExpr<F> {
        self + &(-rhs.clone())
    }
}

impl<F: Field> Mul for &HalfExpr<F> {
    type Output = HalfExpr<F>;
    fn mul(self, rhs: &HalfExpr<F>) -> HalfExpr<F> {
        // (A + sB)(C + sD) = AC + (1-x^2) BD + s (AD + BC)
        let ac = &self.numer_even * &rhs.numer_even;
        let bd = &(&self.numer_odd * &rhs.numer_odd) * &Poly::one_minus_x2();
        let ad = &self.numer_even * &rhs.numer_odd;
        let bc = &self.numer_odd * &rhs.numer_even;
        HalfExpr::new(&ac + &bd, &ad + &bc, self.denom_pow + rhs.denom_pow)
    }
}

impl<F: Field> Neg for HalfExpr<F> {
    type Output = HalfExpr<F>;
    fn neg(self) -> HalfExpr<F> {
        HalfExpr { numer_even: -self.numer_even, numer_odd: -self.numer_odd, denom_pow: self.denom_pow }
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident, $t:ident) => {
        impl<F: Field> $tr for $t<F> {
            type Output = $t<F>;
            fn $m(self, rhs: $t<F>) -> $t<F> {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add, HalfExpr);
forward_owned!(Sub, sub, HalfExpr);
forward_owned!(Mul, mul, HalfExpr);
forward_owned!(Add, add, Poly);
forward_owned!(Sub, sub, Poly);
forward_owned!(Mul, mul, Poly);

impl<F: Field> fmt::Display for HalfExpr<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut num = String::new();
        if !self.numer_even.is_zero() {
            num.push_str(&format!("({})", self.numer_even));
        }
        if !self.numer_odd.is_zero() {
            if !num.is_empty() {
                num.push_str(" + ");
            }
            num.push_str(&format!("sqrt(1-x^2)*({})", self.numer_odd));
        }
        match self.denom_pow {
            0 => write!(f, "{num}"),
            1 => write!(f, "[{num}]/(1-x^2)"),
            k => write!(f, "[{num}]/(1-x^2)^{k}"),
        }
    }
}

pub fn he_add<F: Field>(a: &HalfExpr<F>, b: &HalfExpr<F>) -> HalfExpr<F> {
    a + b
}

pub fn he_mul<F: Field>(a: &HalfExpr<F>, b: &HalfExpr<F>) -> HalfExpr<F> {
    a * b
}

pub fn he_eval<F: Field>(e: &HalfExpr<F>, x: f64) -> Result<f64, HalfAlgError> {
    e.eval(x)
}

pub fn he_is_zero<F: Field>(e: &HalfExpr<F>) -> bool {
    e.is_zero()
}

/// Complex value `re + i im` with both parts in the algebra.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ComplexHalf<F: Field = BigRational> {
    pub re: HalfExpr<F>,
    pub im: HalfExpr<F>,
}

impl<F: Field> ComplexHalf<F> {
    pub fn zero() -> Self {
        ComplexHalf { re: HalfExpr::zero(), im: HalfExpr::zero() }
    }

    pub fn real(re: HalfExpr<F>) -> Self {
        ComplexHalf { re, im: HalfExpr::zero() }
    }

    /// Multiply by `i^k`.
    pub fn mul_i_pow(&self, k: u32) -> Self {
        match k % 4 {
            0 => self.clone(),
            1 => ComplexHalf { re: -self.im.clone(), im: self.re.clone() },
            2 => ComplexHalf { re: -self.re.clone(), im: -self.im.clone() },
            _ => ComplexHalf { re: self.im.clone(), im: -self.re.clone() },
        }
    }

    pub fn mul_real(&self, r: &HalfExpr<F>) -> Self {
        ComplexHalf { re: &self.re * r, im: &self.im * r }
    }

    pub fn add(&self, o: &Self) -> Self {
        ComplexHalf { re: &self.re + &o.re, im: &self.im + &o.im }
    }

    pub fn mul(&self, o: &Self) -> Self {
        ComplexHalf {
            re: &(&self.re * &o.re) - &(&self.im * &o.im),
            im: &(&self.re * &o.im) + &(&self.im * &o.re),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
}

/// Exact rational value of a decimal literal such as `-0.125`, `3` or `2.5e-3`.
pub fn rational_from_decimal(text: &str) -> Result<BigRational, HalfAlgError> {
    let bad = || HalfAlgError::NotRational(text.to_string());
    let t = text.trim();
    let (mantissa, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((a, b)) => (a, b),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all: String = format!("{int_part}{frac_part}");
    let numer = BigInt::parse_bytes(if all.is_empty() { b"0" } else { all.as_bytes() }, 10).ok_or_else(bad)?;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10u32);
    let mut r = BigRational::from_integer(numer);
    if scale >= 0 {
        r *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if neg { -r } else { r })
}

/// Exact rational promoted from the shortest decimal literal that round-trips to `x`.
pub fn rational_from_f64(x: f64) -> Result<BigRational, HalfAlgError> {
    if !x.is_finite() {
        return Err(HalfAlgError::NotRational(x.to_string()));
    }
    rational_from_decimal(&format!("{x}"))
}

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Convert an exact rational to the nearest `f64` (rounding through the decimal expansion if needed).
pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        let sign = if r.is_negative() { -1.0 } else { 1.0 };
        sign * f64::INFINITY
    })
}
