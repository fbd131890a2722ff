//! Exact arithmetic behind the quasilattice.
//!
//! Two number systems are involved. Wave vectors are elements of the ring of
//! integers of the 2q-th cyclotomic field, written in the power basis
//! `{ζ^i : 0 ≤ i < φ(2q)}` with `ζ = exp(iπ/q)`. Those integer coordinates are
//! the canonical key of a lattice point: two generator words name the same
//! point exactly when their keys agree. Squared lengths live in the real
//! subring `Z[ω]`, `ω = 2cos(π/q)`, whose minimal polynomial has degree
//! `φ(2q)/2`. Resonance decisions (`|k| = 1`, `k = 0`) are made here and never
//! with floats.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest supported symmetry order. Keeps `φ(2q) ≤ 16` and `deg ω ≤ 8`.
pub const MAX_Q: u32 = 16;
pub const MAX_CANON_DIM: usize = 16;
pub const MAX_RING_DEG: usize = 8;

pub(crate) fn check_q(q: u32) -> Result<()> {
    if (4..=MAX_Q).contains(&q) {
        Ok(())
    } else {
        Err(Error::InvalidQ { q, max: MAX_Q })
    }
}

/// Dense integer polynomial, coefficients from the constant term upwards.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct IntPoly(Vec<i64>);

impl IntPoly {
    pub fn new(mut coeffs: Vec<i64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0);
        }
        IntPoly(coeffs)
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c as f64)
    }

    fn mul(&self, other: &IntPoly) -> IntPoly {
        let mut out = vec![0i64; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        IntPoly::new(out)
    }

    fn sub(&self, other: &IntPoly) -> IntPoly {
        let n = self.0.len().max(other.0.len());
        let out = (0..n)
            .map(|i| self.0.get(i).copied().unwrap_or(0) - other.0.get(i).copied().unwrap_or(0))
            .collect();
        IntPoly::new(out)
    }

    fn scaled(&self, c: i64) -> IntPoly {
        IntPoly::new(self.0.iter().map(|&a| a * c).collect())
    }

    /// Exact quotient by a monic divisor, `None` when the remainder is nonzero.
    fn div_monic(&self, divisor: &IntPoly) -> Option<IntPoly> {
        let d = divisor.degree();
        debug_assert_eq!(divisor.0[d], 1);
        if self.degree() < d {
            return None;
        }
        let mut rem = self.0.clone();
        let mut quot = vec![0i64; self.degree() - d + 1];
        for i in (d..rem.len()).rev() {
            let c = rem[i];
            if c == 0 {
                continue;
            }
            quot[i - d] = c;
            for (j, &b) in divisor.0.iter().enumerate() {
                rem[i - d + j] -= c * b;
            }
        }
        rem.iter().all(|&r| r == 0).then(|| IntPoly::new(quot))
    }
}

impl fmt::Display for IntPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, &c) in self.0.iter().enumerate().rev() {
            if c == 0 && !(first && i == 0) {
                continue;
            }
            let sign = if c < 0 { "-" } else { "+" };
            if first {
                if c < 0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let a = c.unsigned_abs();
            match (i, a) {
                (0, _) => write!(f, "{a}")?,
                (1, 1) => write!(f, "x")?,
                (1, _) => write!(f, "{a}x")?,
                (_, 1) => write!(f, "x^{i}")?,
                _ => write!(f, "{a}x^{i}")?,
            }
            first = false;
        }
        Ok(())
    }
}

/// The n-th cyclotomic polynomial, by exact division of `x^n - 1`.
pub fn cyclotomic(n: u32) -> IntPoly {
    assert!(n >= 1, "cyclotomic index must be positive");
    let mut coeffs = vec![0i64; n as usize + 1];
    coeffs[0] = -1;
    coeffs[n as usize] = 1;
    let mut p = IntPoly::new(coeffs);
    for d in (1..n).filter(|d| n % d == 0) {
        p = p
            .div_monic(&cyclotomic(d))
            .expect("x^n - 1 is divisible by every cyclotomic factor");
    }
    p
}

/// `C_n(y)` with `C_n(x + 1/x) = x^n + x^{-n}`, so `C_n(2cos θ) = 2cos(nθ)`.
fn two_cos_polys(count: usize) -> Vec<IntPoly> {
    let mut out = vec![IntPoly::new(vec![2]), IntPoly::new(vec![0, 1])];
    let y = IntPoly::new(vec![0, 1]);
    while out.len() < count {
        let n = out.len();
        let next = y.mul(&out[n - 1]).sub(&out[n - 2]);
        out.push(next);
    }
    out.truncate(count.max(1));
    out
}

/// Minimal polynomial of `ω = 2cos(π/q)` over the integers.
///
/// The 2q-th cyclotomic polynomial is palindromic of even degree `2m`, so
/// `x^{-m} Φ(x)` is a polynomial of degree `m` in `y = x + 1/x`.
///
/// ```
/// use qpf::ring::minimal_polynomial;
/// assert_eq!(minimal_polynomial(4).to_string(), "x^2 - 2");
/// assert_eq!(minimal_polynomial(5).to_string(), "x^2 - x - 1");
/// ```
///
/// Panics if `q < 2`.
pub fn minimal_polynomial(q: u32) -> IntPoly {
    assert!(q >= 2, "ω = 2cos(π/q) needs q ≥ 2");
    let phi = cyclotomic(2 * q);
    let m = phi.degree() / 2;
    let a = phi.coeffs();
    let cheb = two_cos_polys(m + 1);
    let mut out = IntPoly::new(vec![a[m]]);
    for n in 1..=m {
        out = out.sub(&cheb[n].scaled(-a[m + n]));
    }
    out
}

/// Element of `2^{-shift} · Z[ω]`, numerator reduced modulo the minimal
/// polynomial. Always stored normalized (odd numerator or `shift == 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RingElement {
    num: [i64; MAX_RING_DEG],
    shift: u32,
}

impl RingElement {
    pub const ZERO: RingElement = RingElement { num: [0; MAX_RING_DEG], shift: 0 };

    pub fn from_int(n: i64) -> Self {
        let mut num = [0; MAX_RING_DEG];
        num[0] = n;
        RingElement { num, shift: 0 }
    }

    /// Builds `num / 2^shift` from already reduced coordinates.
    pub fn from_parts(coeffs: &[i64], shift: u32) -> Self {
        let mut num = [0; MAX_RING_DEG];
        num[..coeffs.len()].copy_from_slice(coeffs);
        RingElement { num, shift }.normalized()
    }

    /// Numerator coordinates in the basis `1, ω, ω², …`.
    pub fn numerator(&self) -> &[i64; MAX_RING_DEG] {
        &self.num
    }

    pub fn shift(&self) -> u32 {
        self.shift
    }

    pub fn denominator(&self) -> i64 {
        1i64 << self.shift
    }

    pub fn is_zero(&self) -> bool {
        self.num.iter().all(|&c| c == 0)
    }

    pub fn halve(self) -> Self {
        RingElement { num: self.num, shift: self.shift + 1 }.normalized()
    }

    fn normalized(mut self) -> Self {
        if self.is_zero() {
            self.shift = 0;
            return self;
        }
        while self.shift > 0 && self.num.iter().all(|c| c % 2 == 0) {
            for c in self.num.iter_mut() {
                *c /= 2;
            }
            self.shift -= 1;
        }
        self
    }

    fn aligned(self, shift: u32) -> [i64; MAX_RING_DEG] {
        let up = shift - self.shift;
        self.num.map(|c| c << up)
    }
}

impl Add for RingElement {
    type Output = RingElement;
    fn add(self, rhs: RingElement) -> RingElement {
        let s = self.shift.max(rhs.shift);
        let (a, b) = (self.aligned(s), rhs.aligned(s));
        let mut num = [0; MAX_RING_DEG];
        for i in 0..MAX_RING_DEG {
            num[i] = a[i] + b[i];
        }
        RingElement { num, shift: s }.normalized()
    }
}

impl Neg for RingElement {
    type Output = RingElement;
    fn neg(self) -> RingElement {
        RingElement { num: self.num.map(|c| -c), shift: self.shift }
    }
}

impl Sub for RingElement {
    type Output = RingElement;
    fn sub(self, rhs: RingElement) -> RingElement {
        self + (-rhs)
    }
}

/// The ring `Z[ω]` for one value of q, with the data needed to evaluate and
/// multiply its elements.
#[derive(Clone, Debug)]
pub struct RealRing {
    q: u32,
    minpoly: IntPoly,
    omega: f64,
    powers: Vec<f64>,
    two_cos: Vec<RingElement>,
}

impl RealRing {
    pub fn new(q: u32) -> Result<Self> {
        check_q(q)?;
        let minpoly = minimal_polynomial(q);
        let d = minpoly.degree();
        debug_assert!(d <= MAX_RING_DEG);
        let omega = 2.0 * (std::f64::consts::PI / q as f64).cos();
        let powers = (0..d).map(|i| omega.powi(i as i32)).collect();
        let mut ring = RealRing { q, minpoly, omega, powers, two_cos: Vec::new() };
        ring.two_cos = two_cos_polys(q as usize)
            .iter()
            .map(|p| RingElement::from_parts(&ring.reduce(p.coeffs()), 0))
            .collect();
        Ok(ring)
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    /// Degree of ω, written `l₀ + 1` in the diophantine bound.
    pub fn degree(&self) -> usize {
        self.minpoly.degree()
    }

    pub fn l0(&self) -> usize {
        self.degree() - 1
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn minimal_polynomial(&self) -> &IntPoly {
        &self.minpoly
    }

    /// Reduces an arbitrary polynomial in ω modulo the minimal polynomial.
    pub fn reduce(&self, coeffs: &[i64]) -> [i64; MAX_RING_DEG] {
        let d = self.degree();
        let m = self.minpoly.coeffs();
        let mut c: Vec<i64> = coeffs.to_vec();
        for i in (d..c.len()).rev() {
            let top = c[i];
            if top == 0 {
                continue;
            }
            c[i] = 0;
            for j in 0..d {
                c[i - d + j] -= top * m[j];
            }
        }
        let mut out = [0; MAX_RING_DEG];
        for (o, v) in out.iter_mut().zip(c) {
            *o = v;
        }
        out
    }

    pub fn mul(&self, a: &RingElement, b: &RingElement) -> RingElement {
        let d = self.degree();
        let mut prod = vec![0i64; 2 * d - 1];
        for i in 0..d {
            if a.num[i] == 0 {
                continue;
            }
            for j in 0..d {
                prod[i + j] += a.num[i] * b.num[j];
            }
        }
        RingElement { num: self.reduce(&prod), shift: a.shift + b.shift }.normalized()
    }

    pub fn eval(&self, a: &RingElement) -> f64 {
        let v: f64 = a.num.iter().zip(&self.powers).map(|(&c, &p)| c as f64 * p).sum();
        v / (1u64 << a.shift) as f64
    }

    /// Sign of an element. Zero is decided exactly; nonzero elements of the
    /// heights met in practice sit many orders of magnitude above roundoff.
    pub fn sign(&self, a: &RingElement) -> Ordering {
        if a.is_zero() {
            Ordering::Equal
        } else if self.eval(a) > 0.0 {
            Ordering::Greater
        } else {
            Ordering::Less
        }
    }

    /// `2cos(nπ/q)` as a ring element, `0 ≤ n < q`.
    pub fn two_cos(&self, n: usize) -> &RingElement {
        &self.two_cos[n]
    }

    /// Exact `|Σ_j m_j k_j|²` for a folded word `m ∈ Z^q`.
    pub fn norm_sq_of_word(&self, word: &[i32]) -> RingElement {
        let q = self.q as usize;
        debug_assert_eq!(word.len(), q);
        // 2|k|² = Σ_{i,j} m_i m_j · 2cos((i-j)π/q)
        let mut acc = [0i64; MAX_RING_DEG];
        for n in 0..q {
            let mut lag: i64 = 0;
            for i in 0..q - n {
                lag += word[i] as i64 * word[i + n] as i64;
            }
            if n > 0 {
                lag *= 2;
            }
            if lag == 0 {
                continue;
            }
            for (a, &c) in acc.iter_mut().zip(self.two_cos[n].num.iter()) {
                *a += lag * c;
            }
        }
        RingElement { num: acc, shift: 1 }.normalized()
    }
}

/// Integer coordinates of a lattice point in the cyclotomic power basis.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Canon([i16; MAX_CANON_DIM]);

impl Canon {
    pub const ZERO: Canon = Canon([0; MAX_CANON_DIM]);

    pub fn from_coords(coords: &[i64]) -> Result<Self> {
        if coords.len() > MAX_CANON_DIM {
            return Err(Error::Format(format!("key has {} coordinates", coords.len())));
        }
        let mut c = [0i16; MAX_CANON_DIM];
        for (dst, &v) in c.iter_mut().zip(coords) {
            *dst = i16::try_from(v).map_err(|_| Error::KeyOverflow)?;
        }
        Ok(Canon(c))
    }

    pub fn coords(&self, dim: usize) -> &[i16] {
        &self.0[..dim]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn checked_add(&self, rhs: &Canon) -> Option<Canon> {
        let mut out = [0i16; MAX_CANON_DIM];
        for i in 0..MAX_CANON_DIM {
            out[i] = self.0[i].checked_add(rhs.0[i])?;
        }
        Some(Canon(out))
    }

    pub fn checked_sub(&self, rhs: &Canon) -> Option<Canon> {
        let mut out = [0i16; MAX_CANON_DIM];
        for i in 0..MAX_CANON_DIM {
            out[i] = self.0[i].checked_sub(rhs.0[i])?;
        }
        Some(Canon(out))
    }

    pub fn neg(&self) -> Canon {
        Canon(self.0.map(|c| -c))
    }
}

impl fmt::Debug for Canon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.0.iter().rposition(|&c| c != 0).map_or(0, |i| i + 1);
        f.debug_list().entries(&self.0[..last]).finish()
    }
}

/// Power basis of the 2q-th cyclotomic field, with the unit wave vectors
/// `k_j = ζ^{j-1}` expressed in it.
#[derive(Clone, Debug)]
pub struct CyclotomicBasis {
    q: u32,
    poly: IntPoly,
    generators: Vec<Canon>,
    zeta: Vec<[f64; 2]>,
}

impl CyclotomicBasis {
    pub fn new(q: u32) -> Result<Self> {
        check_q(q)?;
        let poly = cyclotomic(2 * q);
        let dim = poly.degree();
        let mut generators = Vec::with_capacity(2 * q as usize);
        // x^j mod Φ, built by repeated multiplication by x.
        let mut cur = vec![0i64; dim];
        cur[0] = 1;
        for _ in 0..2 * q {
            generators.push(Canon::from_coords(&cur)?);
            cur = Self::times_zeta(&poly, &cur);
        }
        let angle = std::f64::consts::PI / q as f64;
        let zeta = (0..dim).map(|i| [(i as f64 * angle).cos(), (i as f64 * angle).sin()]).collect();
        Ok(CyclotomicBasis { q, poly, generators, zeta })
    }

    fn times_zeta(poly: &IntPoly, c: &[i64]) -> Vec<i64> {
        let dim = c.len();
        let top = c[dim - 1];
        let mut out = vec![0i64; dim];
        out[1..].copy_from_slice(&c[..dim - 1]);
        let p = poly.coeffs();
        for (o, &pc) in out.iter_mut().zip(p) {
            *o -= top * pc;
        }
        out
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    /// `φ(2q)`, the number of key coordinates.
    pub fn dim(&self) -> usize {
        self.poly.degree()
    }

    pub fn cyclotomic_polynomial(&self) -> &IntPoly {
        &self.poly
    }

    /// Key of `k_{j+1}` for `0 ≤ j < 2q`.
    pub fn generator(&self, j: usize) -> Canon {
        self.generators[j]
    }

    pub fn generators(&self) -> &[Canon] {
        &self.generators
    }

    /// Multiplication by ζ, i.e. rotation by π/q.
    pub fn rotate(&self, c: &Canon) -> Result<Canon> {
        let coords: Vec<i64> = c.coords(self.dim()).iter().map(|&v| v as i64).collect();
        Canon::from_coords(&Self::times_zeta(&self.poly, &coords))
    }

    pub fn embed(&self, c: &Canon) -> [f64; 2] {
        let mut p = [0.0, 0.0];
        for (&v, z) in c.coords(self.dim()).iter().zip(&self.zeta) {
            p[0] += v as f64 * z[0];
            p[1] += v as f64 * z[1];
        }
        p
    }

    /// Key of `Σ_{j<q} m_j k_{j+1}`.
    pub fn from_word(&self, word: &[i32]) -> Result<Canon> {
        let dim = self.dim();
        let mut acc = vec![0i64; dim];
        for (j, &m) in word.iter().enumerate() {
            for (a, &g) in acc.iter_mut().zip(self.generators[j].coords(dim)) {
                *a += m as i64 * g as i64;
            }
        }
        Canon::from_coords(&acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclotomic_small_cases() {
        assert_eq!(cyclotomic(1).coeffs(), &[-1, 1]);
        assert_eq!(cyclotomic(8).coeffs(), &[1, 0, 0, 0, 1]);
        assert_eq!(cyclotomic(12).coeffs(), &[1, 0, -1, 0, 1]);
        assert_eq!(cyclotomic(10).coeffs(), &[1, -1, 1, -1, 1]);
        assert_eq!(cyclotomic(16).degree(), 8);
        assert_eq!(cyclotomic(30).degree(), 8);
    }

    #[test]
    fn minimal_polynomials() {
        assert_eq!(minimal_polynomial(4).coeffs(), &[-2, 0, 1]);
        assert_eq!(minimal_polynomial(6).coeffs(), &[-3, 0, 1]);
        assert_eq!(minimal_polynomial(5).coeffs(), &[-1, -1, 1]);
        for q in 2..=16u32 {
            let p = minimal_polynomial(q);
            let omega = 2.0 * (std::f64::consts::PI / q as f64).cos();
            assert!(p.eval(omega).abs() < 1e-9, "q = {q}: {p}");
            assert_eq!(p.coeffs().last(), Some(&1));
            assert_eq!(2 * p.degree(), cyclotomic(2 * q).degree());
        }
        assert!((minimal_polynomial(4).eval(1.414_213_562_373_095)).abs() < 1e-12);
    }

    #[test]
    fn ring_products_match_floats() {
        for q in 4..=8 {
            let ring = RealRing::new(q).unwrap();
            for n in 0..q as usize {
                let expect = 2.0 * (n as f64 * std::f64::consts::PI / q as f64).cos();
                assert!((ring.eval(ring.two_cos(n)) - expect).abs() < 1e-12);
            }
            let a = *ring.two_cos(1);
            let b = *ring.two_cos((q - 1) as usize);
            let ab = ring.mul(&a, &b);
            assert!((ring.eval(&ab) - ring.eval(&a) * ring.eval(&b)).abs() < 1e-12);
        }
    }

    #[test]
    fn halves_normalize() {
        let two = RingElement::from_int(2);
        assert_eq!(two.halve(), RingElement::from_int(1));
        let half = RingElement::from_int(1).halve();
        assert_eq!(half.denominator(), 2);
        assert_eq!(half + half, RingElement::from_int(1));
        assert!((half - half).is_zero());
    }

    #[test]
    fn norm_of_k1_plus_k2_for_q4() {
        let ring = RealRing::new(4).unwrap();
        let n = ring.norm_sq_of_word(&[1, 1, 0, 0]);
        // 2 + √2
        assert_eq!(n, RingElement::from_parts(&[2, 1], 0));
    }

    #[test]
    fn generators_embed_on_unit_circle() {
        for q in 4..=8 {
            let basis = CyclotomicBasis::new(q).unwrap();
            for j in 0..2 * q as usize {
                let p = basis.embed(&basis.generator(j));
                let a = j as f64 * std::f64::consts::PI / q as f64;
                assert!((p[0] - a.cos()).abs() < 1e-12 && (p[1] - a.sin()).abs() < 1e-12);
                let r = basis.rotate(&basis.generator(j)).unwrap();
                assert_eq!(r, basis.generator((j + 1) % (2 * q as usize)));
            }
            // k_{j+q} = -k_j
            assert_eq!(basis.generator(q as usize), basis.generator(0).neg());
        }
    }

    #[test]
    fn display_polynomials() {
        assert_eq!(IntPoly::new(vec![-3, 0, 1]).to_string(), "x^2 - 3");
        assert_eq!(IntPoly::new(vec![1, 2, -1]).to_string(), "-x^2 + 2x + 1");
    }
}
