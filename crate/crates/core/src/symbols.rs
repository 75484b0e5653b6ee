//! Hamiltonians as normal-ordered boson x spin monomials, their analytically
//! continued coherent-state symbols, and finite matrix representations.
//!
//! A term `c a^dag^m a^n J+^p Jz^q J-^r` has the off-diagonal symbol
//! `<z1,s1|.|z2,s2> / <z1,s1|z2,s2>` equal to `c v^m u^n * N(V,U) / (1+UV)^(2j)`
//! with `u = z2`, `v = z1*`, `U = s2`, `V = s1*`. The spin numerator is built
//! exactly from the Bargmann-type action of the spin operators on unnormalized
//! coherent states:
//!
//! * `J+ |s) = d/ds |s)`
//! * `Jz |s) = (-j + s d/ds) |s)`
//! * `J- |s) = (2j s - s^2 d/ds) |s)`
//!
//! and the conjugate actions on the bra. Every resulting term has the shape
//! `V^a U^b (1+UV)^k`, which is closed under differentiation, so all
//! derivatives are exact.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::PhasePoint;
use crate::error::{Error, Result};
use crate::states::Spin;

pub const MAX_BOSON_POWER: u32 = 8;
pub const MAX_SPIN_POWER: u32 = 4;

/// Smallest `|1 + UV|` accepted before reporting a chart singularity.
pub const CHART_EPS: f64 = 1e-12;

/// One normal-ordered monomial `coeff * a^dag^m a^n J+^p Jz^q J-^r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TermRecord", into = "TermRecord")]
pub struct OperatorTerm {
    pub coeff: Complex64,
    pub m: u32,
    pub n: u32,
    pub p: u32,
    pub q: u32,
    pub r: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermRecord {
    coeff_re: f64,
    #[serde(default)]
    coeff_im: f64,
    #[serde(default)]
    m: u32,
    #[serde(default)]
    n: u32,
    #[serde(default)]
    p: u32,
    #[serde(default)]
    q: u32,
    #[serde(default)]
    r: u32,
}

impl From<TermRecord> for OperatorTerm {
    fn from(t: TermRecord) -> Self {
        OperatorTerm {
            coeff: Complex64::new(t.coeff_re, t.coeff_im),
            m: t.m,
            n: t.n,
            p: t.p,
            q: t.q,
            r: t.r,
        }
    }
}

impl From<OperatorTerm> for TermRecord {
    fn from(t: OperatorTerm) -> Self {
        TermRecord {
            coeff_re: t.coeff.re,
            coeff_im: t.coeff.im,
            m: t.m,
            n: t.n,
            p: t.p,
            q: t.q,
            r: t.r,
        }
    }
}

impl OperatorTerm {
    pub fn new(coeff: impl Into<Complex64>, m: u32, n: u32, p: u32, q: u32, r: u32) -> Self {
        OperatorTerm {
            coeff: coeff.into(),
            m,
            n,
            p,
            q,
            r,
        }
    }

    pub fn has_boson(&self) -> bool {
        self.m + self.n > 0
    }

    pub fn has_spin(&self) -> bool {
        self.p + self.q + self.r > 0
    }

    fn check_limits(&self) -> Result<()> {
        if self.m > MAX_BOSON_POWER
            || self.n > MAX_BOSON_POWER
            || self.p > MAX_SPIN_POWER
            || self.q > MAX_SPIN_POWER
            || self.r > MAX_SPIN_POWER
        {
            return Err(Error::PowerLimit {
                term: self.to_string(),
                max_boson: MAX_BOSON_POWER,
                max_spin: MAX_SPIN_POWER,
            });
        }
        Ok(())
    }
}

impl fmt::Display for OperatorTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}) a†^{} a^{} J+^{} Jz^{} J-^{}",
            self.coeff, self.m, self.n, self.p, self.q, self.r
        )
    }
}

/// A Hamiltonian as a sum of [`OperatorTerm`]s. Serializes as a JSON list of
/// `{coeff_re, coeff_im, m, n, p, q, r}` records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OperatorSpec {
    pub terms: Vec<OperatorTerm>,
}

impl OperatorSpec {
    pub fn new(terms: Vec<OperatorTerm>) -> Self {
        OperatorSpec { terms }
    }

    pub fn zero() -> Self {
        OperatorSpec::default()
    }

    pub fn with(mut self, term: OperatorTerm) -> Self {
        self.terms.push(term);
        self
    }

    pub fn extend(mut self, other: &OperatorSpec) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self
    }

    /// `hbar omega a^dag a`
    pub fn harmonic(hbar: f64, omega: f64) -> Self {
        OperatorSpec::new(vec![OperatorTerm::new(hbar * omega, 1, 1, 0, 0, 0)])
    }

    /// `hbar omega0 Jz`
    pub fn spin_precession(hbar: f64, omega0: f64) -> Self {
        OperatorSpec::new(vec![OperatorTerm::new(hbar * omega0, 0, 0, 0, 1, 0)])
    }

    /// `hbar omega a^dag a + hbar omega0 Jz + hbar g (a^dag J- + a J+)`
    pub fn jaynes_cummings(hbar: f64, omega: f64, omega0: f64, g: f64) -> Self {
        OperatorSpec::new(vec![
            OperatorTerm::new(hbar * omega, 1, 1, 0, 0, 0),
            OperatorTerm::new(hbar * omega0, 0, 0, 0, 1, 0),
            OperatorTerm::new(hbar * g, 1, 0, 0, 0, 1),
            OperatorTerm::new(hbar * g, 0, 1, 1, 0, 0),
        ])
    }

    pub fn is_separable(&self) -> bool {
        self.terms.iter().all(|t| !(t.has_boson() && t.has_spin()))
    }

    /// Splits into (boson-only + constants, spin-only) parts.
    pub fn split_sectors(&self) -> Result<(OperatorSpec, OperatorSpec)> {
        if !self.is_separable() {
            return Err(Error::NotSeparable);
        }
        let (spin, canonical): (Vec<_>, Vec<_>) = self.terms.iter().partition(|t| t.has_spin());
        Ok((OperatorSpec::new(canonical), OperatorSpec::new(spin)))
    }

    pub fn max_boson_power(&self) -> u32 {
        self.terms.iter().map(|t| t.m.max(t.n)).max().unwrap_or(0)
    }

    /// Hermitian conjugate (reverses the normal-ordered word).
    pub fn is_hermitian(&self, tol: f64) -> bool {
        // a term and its adjoint: coeff* a^dag^n a^m J+^r Jz^q J-^p, which is only
        // again normal ordered in the same form; compare term multisets.
        self.terms.iter().all(|t| {
            let adj_sum: Complex64 = self
                .terms
                .iter()
                .filter(|o| o.m == t.n && o.n == t.m && o.p == t.r && o.q == t.q && o.r == t.p)
                .map(|o| o.coeff.conj())
                .sum();
            let own_sum: Complex64 = self
                .terms
                .iter()
                .filter(|o| o.m == t.m && o.n == t.n && o.p == t.p && o.q == t.q && o.r == t.r)
                .map(|o| o.coeff)
                .sum();
            (adj_sum - own_sum).norm() <= tol * (1.0 + own_sum.norm())
        })
    }
}

/// Coordinate index in the phase point `(u, U, v, V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// `u`, the ket canonical label.
    Z = 0,
    /// `U`, the ket spin label.
    S = 1,
    /// `v`, the bra canonical label (conjugate slot).
    ZBra = 2,
    /// `V`, the bra spin label (conjugate slot).
    SBra = 3,
}

impl Var {
    pub const ALL: [Var; 4] = [Var::Z, Var::S, Var::ZBra, Var::SBra];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Derivative order selector for [`Symbol::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Value,
    First(Var),
    Second(Var, Var),
}

/// `coeff * u^e0 U^e1 v^e2 V^e3 (1 + UV)^k`
#[derive(Debug, Clone, Copy, PartialEq)]
struct Monomial {
    coeff: Complex64,
    pw: [i32; 4],
    k: i32,
}

type MonoKey = ([i32; 4], i32);

fn collect(map: BTreeMap<MonoKey, Complex64>) -> Vec<Monomial> {
    map.into_iter()
        .filter(|(_, c)| c.norm() != 0.0)
        .map(|((pw, k), coeff)| Monomial { coeff, pw, k })
        .collect()
}

fn differentiate(terms: &[Monomial], var: Var) -> Vec<Monomial> {
    let mut out: BTreeMap<MonoKey, Complex64> = BTreeMap::new();
    let i = var.index();
    for t in terms {
        if t.pw[i] != 0 {
            let mut pw = t.pw;
            pw[i] -= 1;
            *out.entry((pw, t.k)).or_default() += t.coeff * f64::from(t.pw[i]);
        }
        // d(1+UV)/dU = V and d(1+UV)/dV = U
        let partner = match var {
            Var::S => Some(Var::SBra),
            Var::SBra => Some(Var::S),
            _ => None,
        };
        if let (Some(o), true) = (partner, t.k != 0) {
            let mut pw = t.pw;
            pw[o.index()] += 1;
            *out.entry((pw, t.k - 1)).or_default() += t.coeff * f64::from(t.k);
        }
    }
    collect(out)
}

/// Spin numerator as terms `c V^a U^b (1+VU)^e` keyed by `(a, b, e)`.
type SpinPoly = BTreeMap<(i32, i32, i32), f64>;

fn add(p: &mut SpinPoly, key: (i32, i32, i32), c: f64) {
    if c != 0.0 {
        *p.entry(key).or_insert(0.0) += c;
    }
}

// Weight or lowering action on the U side (ket) or V side (bra).
fn apply_ladder(poly: &SpinPoly, two_j: f64, ket: bool, op: SpinOp) -> SpinPoly {
    let mut out = SpinPoly::new();
    for (&(a, b, e), &c) in poly {
        // (own, other) exponents for the differentiated variable x and its partner y
        let (x, y) = if ket { (b, a) } else { (a, b) };
        let key = |x: i32, y: i32, e: i32| if ket { (y, x, e) } else { (x, y, e) };
        // terms of d/dx [x^X y^Y w^e] = X x^(X-1) y^Y w^e + e x^X y^(Y+1) w^(e-1)
        match op {
            SpinOp::Weight => {
                // (-j + x d/dx)
                add(&mut out, key(x, y, e), -0.5 * two_j * c);
                add(&mut out, key(x, y, e), c * f64::from(x));
                add(&mut out, key(x + 1, y + 1, e - 1), c * f64::from(e));
            }
            SpinOp::Lower => {
                // (2j x - x^2 d/dx)
                add(&mut out, key(x + 1, y, e), two_j * c);
                add(&mut out, key(x + 1, y, e), -c * f64::from(x));
                add(&mut out, key(x + 2, y + 1, e - 1), -c * f64::from(e));
            }
        }
    }
    out.retain(|_, c| *c != 0.0);
    out
}

#[derive(Clone, Copy)]
enum SpinOp {
    Weight,
    Lower,
}

/// Spin factor of `<s1| J+^p Jz^q J-^r |s2> / <s1|s2>` as `c V^a U^b (1+UV)^k`.
fn spin_symbol(spin: Spin, p: u32, q: u32, r: u32) -> SpinPoly {
    let two_j = f64::from(spin.twice());
    let mut poly = SpinPoly::new();
    poly.insert((0, 0, spin.twice() as i32), 1.0);
    // J+^p Jz^q J-^r |s2) = D_U^r Z_U^q |s2): Jz acts on the function first.
    for _ in 0..q {
        poly = apply_ladder(&poly, two_j, true, SpinOp::Weight);
    }
    for _ in 0..r {
        poly = apply_ladder(&poly, two_j, true, SpinOp::Lower);
    }
    // (s1| J+ = D_V (s1|
    for _ in 0..p {
        poly = apply_ladder(&poly, two_j, false, SpinOp::Lower);
    }
    let shift = spin.twice() as i32;
    poly.into_iter().map(|((a, b, e), c)| ((a, b, e - shift), c)).collect()
}

/// Value, gradient and Hessian of a symbol at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolJet {
    pub value: Complex64,
    pub grad: [Complex64; 4],
    pub hess: [[Complex64; 4]; 4],
}

/// The analytically continued coherent-state symbol `H(u, U, v, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    spin: Spin,
    hbar: f64,
    value: Vec<Monomial>,
    grad: [Vec<Monomial>; 4],
    // upper triangle, row-major: (0,0) (0,1) (0,2) (0,3) (1,1) ...
    hess: [Vec<Monomial>; 10],
}

fn tri_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    // rows start at 0, 4, 7, 9
    [0, 4, 7, 9][a] + (b - a)
}

impl Symbol {
    /// Builds the symbol of `spec` for spin `j` and Planck constant `hbar`.
    pub fn new(spec: &OperatorSpec, spin: Spin, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidArgument(format!("hbar must be positive, got {hbar}")));
        }
        let mut map: BTreeMap<MonoKey, Complex64> = BTreeMap::new();
        for term in &spec.terms {
            term.check_limits()?;
            for ((a, b, k), c) in spin_symbol(spin, term.p, term.q, term.r) {
                let pw = [term.n as i32, b, term.m as i32, a];
                *map.entry((pw, k)).or_default() += term.coeff * c;
            }
        }
        let value = collect(map);
        let grad = Var::ALL.map(|v| differentiate(&value, v));
        let mut hess: [Vec<Monomial>; 10] = Default::default();
        for i in 0..4 {
            for j in i..4 {
                hess[tri_index(i, j)] = differentiate(&grad[i], Var::ALL[j]);
            }
        }
        Ok(Symbol {
            spin,
            hbar,
            value,
            grad,
            hess,
        })
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_empty()
    }

    /// Exact value or derivative (order <= 2) at `pt`.
    pub fn eval(&self, pt: &PhasePoint, deriv: Deriv) -> Result<Complex64> {
        let pows = Powers::new(pt)?;
        let terms = match deriv {
            Deriv::Value => &self.value,
            Deriv::First(v) => &self.grad[v.index()],
            Deriv::Second(a, b) => &self.hess[tri_index(a.index(), b.index())],
        };
        Ok(pows.sum(terms))
    }

    /// Value, all first and all second derivatives.
    pub fn jet(&self, pt: &PhasePoint) -> Result<SymbolJet> {
        let pows = Powers::new(pt)?;
        let value = pows.sum(&self.value);
        let grad = [0, 1, 2, 3].map(|i| pows.sum(&self.grad[i]));
        let mut hess = [[Complex64::new(0.0, 0.0); 4]; 4];
        for i in 0..4 {
            for j in i..4 {
                let h = pows.sum(&self.hess[tri_index(i, j)]);
                hess[i][j] = h;
                hess[j][i] = h;
            }
        }
        Ok(SymbolJet { value, grad, hess })
    }

    /// Value and gradient only.
    pub fn value_and_grad(&self, pt: &PhasePoint) -> Result<(Complex64, [Complex64; 4])> {
        let pows = Powers::new(pt)?;
        Ok((pows.sum(&self.value), [0, 1, 2, 3].map(|i| pows.sum(&self.grad[i]))))
    }
}

struct Powers {
    x: [Complex64; 4],
    w: Complex64,
}

impl Powers {
    fn new(pt: &PhasePoint) -> Result<Self> {
        let w = pt.chart_factor();
        if w.norm() < CHART_EPS || !w.is_finite() {
            return Err(Error::ChartSingularity {
                big_u: pt.s,
                big_v: pt.s_bra,
            });
        }
        Ok(Powers { x: pt.to_array(), w })
    }

    fn sum(&self, terms: &[Monomial]) -> Complex64 {
        terms
            .iter()
            .map(|t| {
                let mut acc = t.coeff;
                for (x, &e) in self.x.iter().zip(&t.pw) {
                    if e != 0 {
                        acc *= x.powi(e);
                    }
                }
                if t.k != 0 {
                    acc *= self.w.powi(t.k);
                }
                acc
            })
            .sum()
    }
}

/// Matrix of `a^dag^m a^n` on `Fock(n_max + 1)`, exact projection onto the
/// truncated space.
pub fn boson_matrix(m: u32, n: u32, n_max: usize) -> DMatrix<Complex64> {
    let dim = n_max + 1;
    let (m, n) = (m as usize, n as usize);
    DMatrix::from_fn(dim, dim, |row, col| {
        if col < n || row + n != col + m {
            return Complex64::new(0.0, 0.0);
        }
        // <row| a^dag^m a^n |col> = sqrt(col!/(col-n)!) sqrt(row!/(col-n)!)
        let base = col - n;
        let ln = 0.5
            * (crate::states::ln_factorial(col) + crate::states::ln_factorial(row)
                - 2.0 * crate::states::ln_factorial(base));
        Complex64::new(ln.exp(), 0.0)
    })
}

/// `(J+, Jz, J-)` in the basis `m = -j, ..., j`.
pub fn spin_matrices(spin: Spin) -> (DMatrix<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>) {
    let dim = spin.dim();
    let j = spin.j();
    let zero = || DMatrix::<Complex64>::zeros(dim, dim);
    let (mut jp, mut jz, mut jm) = (zero(), zero(), zero());
    for k in 0..dim {
        let m = -j + k as f64;
        jz[(k, k)] = Complex64::new(m, 0.0);
        if k + 1 < dim {
            let amp = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
            jp[(k + 1, k)] = Complex64::new(amp, 0.0);
            jm[(k, k + 1)] = Complex64::new(amp, 0.0);
        }
    }
    (jp, jz, jm)
}

fn mat_pow(a: &DMatrix<Complex64>, k: u32) -> DMatrix<Complex64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Matrix of `spec` on `Fock(n_max+1) (x) Spin(2j+1)`, index `n * (2j+1) + k`.
pub fn matrix_rep(spec: &OperatorSpec, spin: Spin, n_max: usize) -> DMatrix<Complex64> {
    let (jp, jz, jm) = spin_matrices(spin);
    let ds = spin.dim();
    let dim = (n_max + 1) * ds;
    let mut out = DMatrix::<Complex64>::zeros(dim, dim);
    for t in &spec.terms {
        let b = boson_matrix(t.m, t.n, n_max);
        let s = mat_pow(&jp, t.p) * mat_pow(&jz, t.q) * mat_pow(&jm, t.r);
        out += b.kronecker(&s) * t.coeff;
    }
    out
}

/// Largest entry of `A - A^dag`.
pub fn hermiticity_defect(a: &DMatrix<Complex64>) -> f64 {
    (a - a.adjoint()).iter().map(|x| x.norm()).fold(0.0, f64::max)
}
