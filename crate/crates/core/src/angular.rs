//! Angular-momentum algebra: 3j/6j symbols, Clebsch-Gordan coefficients and
//! the spherical basis.
//!
//! Quantum numbers are carried as [`HalfInt`], which stores twice the value so
//! that triangle and projection rules are exact integer tests. Symbols are
//! evaluated with the Racah closed-form sums in exact rational arithmetic and
//! only rounded to `f64` at the very end, so they stay accurate well past
//! `2j = 60`.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An integer or half-integer, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);
    pub const HALF: HalfInt = HalfInt(1);
    pub const ONE: HalfInt = HalfInt(2);

    pub const fn from_twice(twice_value: i32) -> Self {
        HalfInt(twice_value)
    }

    pub const fn int(value: i32) -> Self {
        HalfInt(2 * value)
    }

    pub fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// `2j + 1`, the multiplicity of a manifold with this angular momentum.
    pub fn multiplicity(self) -> i32 {
        self.0 + 1
    }

    /// `j(j+1)` as a float.
    pub fn casimir(self) -> f64 {
        let j = self.value();
        j * (j + 1.0)
    }

    pub fn abs(self) -> Self {
        HalfInt(self.0.abs())
    }

    /// Projections `-j, -j+1, ..., j`.
    pub fn projections(self) -> impl DoubleEndedIterator<Item = HalfInt> {
        let j = self.0;
        (0..=j.max(-1)).map(move |k| HalfInt(2 * k - j))
    }

    /// Values `|a-b|, |a-b|+1, ..., a+b` allowed by the triangle rule.
    pub fn coupled_range(a: HalfInt, b: HalfInt) -> impl Iterator<Item = HalfInt> {
        let lo = (a.0 - b.0).abs();
        let hi = a.0 + b.0;
        (lo..=hi).step_by(2).map(HalfInt)
    }

    /// `(-1)^self`, defined only for integers.
    pub fn phase(self) -> f64 {
        debug_assert!(self.is_integer(), "phase of non-integer {self}");
        if (self.0 / 2) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// A valid projection of `j`: `|m| <= j` and `m` has the parity of `j`.
    pub fn is_projection_of(self, j: HalfInt) -> bool {
        j.0 >= 0 && self.0.abs() <= j.0 && (j.0 - self.0) % 2 == 0
    }
}

impl Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 + rhs.0)
    }
}

impl Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 - rhs.0)
    }
}

impl Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl From<i32> for HalfInt {
    fn from(value: i32) -> Self {
        HalfInt::int(value)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not an integer or half-integer: {0:?}")]
pub struct ParseHalfIntError(String);

impl FromStr for HalfInt {
    type Err = ParseHalfIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let err = || ParseHalfIntError(s.to_string());
        if let Some(num) = s.strip_suffix("/2") {
            let twice: i32 = num.trim().parse().map_err(|_| err())?;
            if twice % 2 == 0 {
                return Err(err());
            }
            return Ok(HalfInt(twice));
        }
        let value: f64 = s.parse().map_err(|_| err())?;
        HalfInt::try_from(value).map_err(|_| err())
    }
}

impl TryFrom<f64> for HalfInt {
    type Error = ParseHalfIntError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        let twice = 2.0 * value;
        if !twice.is_finite() || twice.fract() != 0.0 || twice.abs() > i32::MAX as f64 {
            return Err(ParseHalfIntError(value.to_string()));
        }
        Ok(HalfInt(twice as i32))
    }
}

impl Serialize for HalfInt {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for HalfInt {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => HalfInt::try_from(v).map_err(serde::de::Error::custom),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn triangle(a: i32, b: i32, c: i32) -> bool {
    a >= 0 && b >= 0 && c >= 0 && c >= (a - b).abs() && c <= a + b && (a + b + c) % 2 == 0
}

fn factorial(n: i32) -> BigInt {
    debug_assert!(n >= 0);
    (2..=n as u64).fold(BigInt::one(), |acc, k| acc * k)
}

fn ratio(num: BigInt, den: BigInt) -> BigRational {
    BigRational::new(num, den)
}

/// Squared triangle coefficient `(a+b-c)!(a-b+c)!(-a+b+c)!/(a+b+c+1)!` for
/// doubled arguments.
fn delta_sq(a: i32, b: i32, c: i32) -> BigRational {
    ratio(
        factorial((a + b - c) / 2) * factorial((a - b + c) / 2) * factorial((-a + b + c) / 2),
        factorial((a + b + c) / 2 + 1),
    )
}

/// Combines an exact rational sum `s` with an exact rational `p` under a
/// square root into `s * sqrt(p)`, rounding once.
fn signed_sqrt_product(s: &BigRational, p: &BigRational) -> f64 {
    if s.is_zero() || p.is_zero() {
        return 0.0;
    }
    let magnitude = (s * s * p).to_f64().unwrap_or(f64::NAN).sqrt();
    if s.is_negative() {
        -magnitude
    } else {
        magnitude
    }
}

type Key3j = [i32; 6];
type Key6j = [i32; 6];

fn cache_3j() -> &'static Mutex<HashMap<Key3j, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<Key3j, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cache_6j() -> &'static Mutex<HashMap<Key6j, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<Key6j, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Wigner 3j symbol `(j1 j2 j3; m1 m2 m3)`.
///
/// Returns 0 whenever a triangle, projection or parity rule is violated.
pub fn wigner3j(j1: HalfInt, j2: HalfInt, j3: HalfInt, m1: HalfInt, m2: HalfInt, m3: HalfInt) -> f64 {
    let key = [j1.0, j2.0, j3.0, m1.0, m2.0, m3.0];
    if !m1.is_projection_of(j1) || !m2.is_projection_of(j2) || !m3.is_projection_of(j3) {
        return 0.0;
    }
    if m1.0 + m2.0 + m3.0 != 0 || !triangle(j1.0, j2.0, j3.0) {
        return 0.0;
    }
    if let Some(v) = cache_3j().lock().expect("3j cache poisoned").get(&key) {
        return *v;
    }
    let value = racah_3j(key);
    cache_3j().lock().expect("3j cache poisoned").insert(key, value);
    value
}

fn racah_3j([j1, j2, j3, m1, m2, m3]: Key3j) -> f64 {
    // Work with plain integers: every combination below is even.
    let prefactor = delta_sq(j1, j2, j3)
        * ratio(
            factorial((j1 + m1) / 2)
                * factorial((j1 - m1) / 2)
                * factorial((j2 + m2) / 2)
                * factorial((j2 - m2) / 2)
                * factorial((j3 + m3) / 2)
                * factorial((j3 - m3) / 2),
            BigInt::one(),
        );

    let k_min = 0.max((j2 - j3 - m1) / 2).max((j1 - j3 + m2) / 2);
    let k_max = ((j1 + j2 - j3) / 2).min((j1 - m1) / 2).min((j2 + m2) / 2);
    let mut sum = BigRational::zero();
    for k in k_min..=k_max {
        let den = factorial(k)
            * factorial((j3 - j2 + m1) / 2 + k)
            * factorial((j3 - j1 - m2) / 2 + k)
            * factorial((j1 + j2 - j3) / 2 - k)
            * factorial((j1 - m1) / 2 - k)
            * factorial((j2 + m2) / 2 - k);
        let term = ratio(BigInt::one(), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    let phase = if ((j1 - j2 - m3) / 2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    phase * signed_sqrt_product(&sum, &prefactor)
}

/// Wigner 6j symbol `{a b c; d e f}`. Returns 0 when any of the four triads
/// `(a,b,c)`, `(a,e,f)`, `(d,b,f)`, `(d,e,c)` is not a valid triangle.
pub fn wigner6j(a: HalfInt, b: HalfInt, c: HalfInt, d: HalfInt, e: HalfInt, f: HalfInt) -> f64 {
    let key = [a.0, b.0, c.0, d.0, e.0, f.0];
    let [a, b, c, d, e, f] = key;
    if !(triangle(a, b, c) && triangle(a, e, f) && triangle(d, b, f) && triangle(d, e, c)) {
        return 0.0;
    }
    if let Some(v) = cache_6j().lock().expect("6j cache poisoned").get(&key) {
        return *v;
    }
    let value = racah_6j(key);
    cache_6j().lock().expect("6j cache poisoned").insert(key, value);
    value
}

fn racah_6j([a, b, c, d, e, f]: Key6j) -> f64 {
    let prefactor = delta_sq(a, b, c) * delta_sq(a, e, f) * delta_sq(d, b, f) * delta_sq(d, e, c);
    let t_min = [(a + b + c) / 2, (a + e + f) / 2, (d + b + f) / 2, (d + e + c) / 2].into_iter().max().unwrap_or(0);
    let t_max = [(a + b + d + e) / 2, (a + c + d + f) / 2, (b + c + e + f) / 2].into_iter().min().unwrap_or(0);
    let mut sum = BigRational::zero();
    for t in t_min..=t_max {
        let den = factorial(t - (a + b + c) / 2)
            * factorial(t - (a + e + f) / 2)
            * factorial(t - (d + b + f) / 2)
            * factorial(t - (d + e + c) / 2)
            * factorial((a + b + d + e) / 2 - t)
            * factorial((a + c + d + f) / 2 - t)
            * factorial((b + c + e + f) / 2 - t);
        let term = ratio(factorial(t + 1), den);
        if t % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    signed_sqrt_product(&sum, &prefactor)
}

/// Clebsch-Gordan coefficient `<j1 m1; j2 m2 | J M>` (Condon-Shortley phases).
pub fn clebsch_gordan(j1: HalfInt, m1: HalfInt, j2: HalfInt, m2: HalfInt, j: HalfInt, m: HalfInt) -> f64 {
    if m1 + m2 != m {
        return 0.0;
    }
    let w = wigner3j(j1, j2, j, m1, m2, -m);
    if w == 0.0 {
        return 0.0;
    }
    // (-1)^(j1 - j2 + M) sqrt(2J+1) (j1 j2 J; m1 m2 -M)
    (j1 - j2 + m).phase() * (j.multiplicity() as f64).sqrt() * w
}

/// Complex vector components in the spherical basis
/// `e_{+1} = -(x + i y)/sqrt2`, `e_0 = z`, `e_{-1} = (x - i y)/sqrt2`,
/// with `v = sum_q v_q e_q`, i.e. `v_q = e_q^* . v`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SphericalVector {
    pub q_minus1: Complex64,
    pub q_0: Complex64,
    pub q_plus1: Complex64,
}

impl SphericalVector {
    /// Component for `q` in `-1..=1`.
    pub fn component(&self, q: i32) -> Complex64 {
        match q {
            -1 => self.q_minus1,
            0 => self.q_0,
            1 => self.q_plus1,
            _ => Complex64::zero(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.q_minus1.norm_sqr() + self.q_0.norm_sqr() + self.q_plus1.norm_sqr()
    }

    pub fn to_cartesian(&self) -> [Complex64; 3] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let i = Complex64::i();
        let (vm, v0, vp) = (self.q_minus1, self.q_0, self.q_plus1);
        [(vm - vp) * s, -(vm + vp) * i * s, v0]
    }
}

/// Decomposes a Cartesian complex vector into spherical components.
pub fn to_spherical(v: [Complex64; 3]) -> SphericalVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let i = Complex64::i();
    let [x, y, z] = v;
    SphericalVector { q_minus1: (x + i * y) * s, q_0: z, q_plus1: -(x - i * y) * s }
}

/// Real Cartesian vector promoted to complex.
pub fn real_vector(v: [f64; 3]) -> [Complex64; 3] {
    v.map(|c| Complex64::new(c, 0.0))
}
