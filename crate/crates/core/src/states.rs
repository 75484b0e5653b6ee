//! Canonical (Weyl) and SU(2) coherent-state labels, overlaps and basis
//! expansions.
//!
//! Canonical states are `|z> = exp(z a^dag - |z|^2/2) |0>`; spin states are
//! `|s> = exp(s J+) |-j> / (1 + |s|^2)^j`, i.e. the stereographic chart that
//! excludes the north pole.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default discarded-tail threshold for truncated Fock expansions.
pub const DEFAULT_TAIL_THRESHOLD: f64 = 1e-12;

/// Spin size `j`, stored as the integer `2j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Spin(u32);

impl Spin {
    pub fn from_twice(two_j: u32) -> Result<Self> {
        if two_j == 0 {
            return Err(Error::InvalidSpin(0.0));
        }
        Ok(Spin(two_j))
    }

    /// Builds a spin from `j`; `2j` must be a positive integer.
    pub fn new(j: f64) -> Result<Self> {
        let two_j = 2.0 * j;
        if !two_j.is_finite() || two_j < 1.0 || (two_j - two_j.round()).abs() > 1e-12 {
            return Err(Error::InvalidSpin(two_j));
        }
        Ok(Spin(two_j.round() as u32))
    }

    pub fn half() -> Self {
        Spin(1)
    }

    pub fn twice(self) -> u32 {
        self.0
    }

    pub fn j(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    /// Dimension `2j + 1` of the spin Hilbert space.
    pub fn dim(self) -> usize {
        self.0 as usize + 1
    }
}

impl TryFrom<f64> for Spin {
    type Error = Error;
    fn try_from(j: f64) -> Result<Self> {
        Spin::new(j)
    }
}

impl From<Spin> for f64 {
    fn from(s: Spin) -> f64 {
        s.j()
    }
}

/// Label of a canonical coherent state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalLabel {
    pub z: Complex64,
}

impl CanonicalLabel {
    pub fn new(z: Complex64) -> Self {
        CanonicalLabel { z }
    }

    /// Builds the label from mean position/momentum and the variances `b`, `c`.
    pub fn from_phase_space(q: f64, p: f64, b: f64, c: f64, hbar: f64) -> Result<Self> {
        qp_to_label(q, p, b, c, hbar).map(CanonicalLabel::new)
    }
}

/// Label of an SU(2) coherent state in the stereographic chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinLabel {
    pub s: Complex64,
    pub spin: Spin,
}

impl SpinLabel {
    pub fn new(s: Complex64, spin: Spin) -> Result<Self> {
        if !(s.re.is_finite() && s.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("spin label must be finite, got {s}")));
        }
        Ok(SpinLabel { s, spin })
    }
}

/// `z = (q/b + i p/c)/sqrt(2)`, requiring `b*c = hbar` to within one ulp of `hbar`.
pub fn qp_to_label(q: f64, p: f64, b: f64, c: f64, hbar: f64) -> Result<Complex64> {
    if !(b > 0.0 && c > 0.0 && hbar > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variances and hbar must be positive (b = {b}, c = {c}, hbar = {hbar})"
        )));
    }
    let product = b * c;
    if (product - hbar).abs() > f64::EPSILON * hbar {
        return Err(Error::UncertaintyViolation { product, hbar });
    }
    Ok(Complex64::new(q / b, p / c) / std::f64::consts::SQRT_2)
}

/// `<z1|z2>`.
pub fn overlap_canonical(z1: Complex64, z2: Complex64) -> Complex64 {
    (-0.5 * z1.norm_sqr() + z1.conj() * z2 - 0.5 * z2.norm_sqr()).exp()
}

/// `<s1|s2>` for spin `j`.
pub fn overlap_spin(s1: Complex64, s2: Complex64, spin: Spin) -> Complex64 {
    let j = spin.j();
    let num = (Complex64::new(1.0, 0.0) + s1.conj() * s2).powi(spin.twice() as i32);
    let den = ((1.0 + s1.norm_sqr()) * (1.0 + s2.norm_sqr())).powf(j);
    num / den
}

/// Normalization term `(|z'|^2 + |z''|^2)/2 + j ln[(1+|s'|^2)(1+|s''|^2)]`.
pub fn normalization_lambda(
    z_init: Complex64,
    z_final: Complex64,
    s_init: Complex64,
    s_final: Complex64,
    spin: Spin,
) -> f64 {
    0.5 * (z_init.norm_sqr() + z_final.norm_sqr())
        + spin.j() * ((1.0 + s_init.norm_sqr()).ln() + (1.0 + s_final.norm_sqr()).ln())
}

pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Number-basis expansion of a canonical coherent state.
#[derive(Debug, Clone, PartialEq)]
pub struct FockExpansion {
    pub coeffs: Vec<Complex64>,
    /// `1 - sum |c_n|^2`, summed directly over the discarded tail.
    pub tail_mass: f64,
}

impl FockExpansion {
    pub fn check(&self, threshold: f64) -> Result<()> {
        if self.tail_mass > threshold {
            return Err(Error::Truncation {
                tail: self.tail_mass,
                threshold,
                required_n_max: 0,
            });
        }
        Ok(())
    }
}

// |c_n|^2 = exp(-x) x^n / n!, x = |z|^2, evaluated in log space.
fn fock_weight(x: f64, n: usize) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-x + n as f64 * x.ln() - ln_factorial(n)).exp()
}

/// Poisson tail `sum_{n > n_max} exp(-x) x^n / n!`.
pub fn fock_tail_mass(z: Complex64, n_max: usize) -> f64 {
    let x = z.norm_sqr();
    if x == 0.0 {
        return 0.0;
    }
    let mut n = n_max + 1;
    let mut term = fock_weight(x, n);
    let mut total = 0.0;
    // terms decrease monotonically once n > x
    loop {
        total += term;
        n += 1;
        term *= x / n as f64;
        if (n as f64 > x && term < total * 1e-17) || term == 0.0 {
            break;
        }
    }
    total
}

/// Smallest `n_max` whose discarded tail is below `threshold`.
pub fn required_n_max(z: Complex64, threshold: f64) -> usize {
    let x = z.norm_sqr();
    let mut n = x.ceil() as usize;
    while fock_tail_mass(z, n) > threshold {
        n += 1;
    }
    n
}

/// Components `exp(-|z|^2/2) z^n / sqrt(n!)` for `n = 0..=n_max`.
pub fn fock_vector(z: Complex64, n_max: usize) -> FockExpansion {
    let x = z.norm_sqr();
    let coeffs = (0..=n_max)
        .map(|n| {
            if n == 0 {
                Complex64::new((-0.5 * x).exp(), 0.0)
            } else if x == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                let ln_mag = -0.5 * x + n as f64 * z.norm().ln() - 0.5 * ln_factorial(n);
                Complex64::from_polar(ln_mag.exp(), n as f64 * z.arg())
            }
        })
        .collect();
    FockExpansion {
        coeffs,
        tail_mass: fock_tail_mass(z, n_max),
    }
}

/// Checked expansion that fails when the tail exceeds `threshold`.
pub fn fock_vector_checked(z: Complex64, n_max: usize, threshold: f64) -> Result<FockExpansion> {
    let exp = fock_vector(z, n_max);
    if exp.tail_mass > threshold {
        return Err(Error::Truncation {
            tail: exp.tail_mass,
            threshold,
            required_n_max: required_n_max(z, threshold),
        });
    }
    Ok(exp)
}

/// Components in the `Jz` basis ordered `m = -j, ..., j`:
/// `sqrt(C(2j,k)) s^k / (1 + |s|^2)^j`.
pub fn spin_vector(s: Complex64, spin: Spin) -> Vec<Complex64> {
    let two_j = spin.twice() as usize;
    let ln_norm = spin.j() * (1.0 + s.norm_sqr()).ln();
    (0..=two_j)
        .map(|k| {
            if k == 0 {
                Complex64::new((-ln_norm).exp(), 0.0)
            } else if s.norm_sqr() == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                let ln_mag = 0.5 * ln_binomial(two_j, k) + k as f64 * s.norm().ln() - ln_norm;
                Complex64::from_polar(ln_mag.exp(), k as f64 * s.arg())
            }
        })
        .collect()
}

#[cfg(test)]
fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
