//! Finite-N discretization of the path integral around a continuum
//! trajectory: discrete stationarity residuals and the banded second
//! variation matrix with its determinant.
//!
//! Intermediate variables are ordered `(u^k, U^k, v^k, V^k)` for
//! `k = 1, ..., N-1`. Slice `m` contributes the Hessian of
//! `(i eps/hbar) H(u^m, U^m, v^{m+1}, V^{m+1})` over its interior variables.
//! Spin rows and columns are rescaled by `b^k = B^k^(-1/2)` so the `(U^k, V^k)`
//! entries become 1.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{self, PhasePoint};
use crate::error::{Error, Result};
use crate::shooting::TrajectorySolution;
use crate::symbols::Symbol;

type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Half-bandwidth of the second variation matrix.
pub const HALF_BANDWIDTH: usize = 7;

/// Treatment of the `-2 ln(1 + V^k U^k)` integration-measure term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum MeasureConvention {
    /// Measure evaluated on the critical path (not varied): `B = 2j/w^2`.
    #[default]
    OnPath,
    /// Measure varied in the `(U, V)` entry only: `B = 2(j+1)/w^2`.
    Varied,
}

/// The assembled second variation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFluctuationMatrix {
    pub n: usize,
    pub epsilon: f64,
    /// `B^k`, `k = 1, ..., N-1`.
    pub big_b: Vec<C64>,
    /// `b^k = (B^k)^(-1/2)`.
    pub small_b: Vec<C64>,
    /// Band storage: row `i`, column `j` at `rows[i][j + HALF_BANDWIDTH - i]`.
    rows: Vec<[C64; 2 * HALF_BANDWIDTH + 1]>,
    scaled: bool,
}

impl DiscreteFluctuationMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn is_scaled(&self) -> bool {
        self.scaled
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i.abs_diff(j) > HALF_BANDWIDTH {
            ZERO
        } else {
            self.rows[i][j + HALF_BANDWIDTH - i]
        }
    }

    fn add(&mut self, i: usize, j: usize, x: C64) {
        debug_assert!(i.abs_diff(j) <= HALF_BANDWIDTH);
        self.rows[i][j + HALF_BANDWIDTH - i] += x;
    }

    fn add_sym(&mut self, i: usize, j: usize, x: C64) {
        self.add(i, j, x);
        if i != j {
            self.add(j, i, x);
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    /// `ln det` by banded LU with partial pivoting.
    pub fn log_determinant(&self) -> Result<C64> {
        banded_log_det(&self.rows, self.n)
    }

    pub fn determinant(&self) -> Result<C64> {
        Ok(self.log_determinant()?.exp())
    }

    /// Dense determinant (small N only).
    pub fn determinant_dense(&self) -> C64 {
        self.to_dense().determinant()
    }

    /// `ln prod_k (B^k)^2`, relating unscaled and scaled determinants.
    pub fn log_scaling_factor(&self) -> C64 {
        self.big_b.iter().map(|b| 2.0 * b.ln()).sum()
    }
}

fn banded_log_det(rows: &[[C64; 2 * HALF_BANDWIDTH + 1]], n_steps: usize) -> Result<C64> {
    const KL: usize = HALF_BANDWIDTH;
    const KU: usize = 2 * HALF_BANDWIDTH;
    const W: usize = KL + KU + 1;
    let n = rows.len();
    // widened storage for pivoting fill-in: column j of row i at [j + KL - i]
    let mut a: Vec<[C64; W]> = rows
        .iter()
        .map(|r| {
            let mut w = [ZERO; W];
            w[..r.len()].copy_from_slice(r);
            w
        })
        .collect();
    let mut log_det = ZERO;
    let mut sign_flips = 0usize;
    for k in 0..n {
        let last = (k + KL).min(n - 1);
        let mut p = k;
        let mut best = a[k][KL].norm();
        for i in k + 1..=last {
            let v = a[i][k + KL - i].norm();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::LuBreakdown { n: n_steps });
        }
        if p != k {
            sign_flips += 1;
            let hi = (k + KU).min(n - 1);
            for j in k..=hi {
                let (ik, ip) = (j + KL - k, j + KL - p);
                let t = a[k][ik];
                a[k][ik] = a[p][ip];
                a[p][ip] = t;
            }
        }
        let pivot = a[k][KL];
        log_det += pivot.ln();
        let hi = (k + KU).min(n - 1);
        for i in k + 1..=last {
            let f = a[i][k + KL - i] / pivot;
            if f == ZERO {
                continue;
            }
            a[i][k + KL - i] = ZERO;
            for j in k + 1..=hi {
                let pivot_row = a[k][j + KL - k];
                a[i][j + KL - i] -= f * pivot_row;
            }
        }
    }
    if sign_flips % 2 == 1 {
        log_det += C64::new(0.0, std::f64::consts::PI);
    }
    Ok(log_det)
}

fn ln_hessian(big_u: C64, big_v: C64) -> (C64, C64, C64) {
    // second derivatives of ln(1 + VU): (UU, UV, VV)
    let w = ONE + big_u * big_v;
    let w2 = w * w;
    (-big_v * big_v / w2, ONE / w2, -big_u * big_u / w2)
}

/// Assembles the second variation matrix on the samples `pts[0..=N]`.
pub fn assemble(
    sym: &Symbol,
    pts: &[PhasePoint],
    t_final: f64,
    convention: MeasureConvention,
    scaled: bool,
) -> Result<DiscreteFluctuationMatrix> {
    let n = pts.len().saturating_sub(1);
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need N >= 2 slices, got {n}")));
    }
    let eps = t_final / n as f64;
    let j = sym.spin().j();
    let dim = 4 * (n - 1);
    let mut m = DiscreteFluctuationMatrix {
        n,
        epsilon: eps,
        big_b: Vec::with_capacity(n - 1),
        small_b: Vec::with_capacity(n - 1),
        rows: vec![[ZERO; 2 * HALF_BANDWIDTH + 1]; dim],
        scaled,
    };
    // index of variable c (0..4) of step k (1..N-1)
    let idx = |k: usize, c: usize| -> Option<usize> { (1..n).contains(&k).then(|| 4 * (k - 1) + c) };
    let coef = C64::new(0.0, eps / sym.hbar());
    for s in 0..n {
        let (a, b) = (pts[s], pts[s + 1]);
        // slice variables: (u^s, U^s, v^{s+1}, V^{s+1})
        let vars = [idx(s, 0), idx(s, 1), idx(s + 1, 2), idx(s + 1, 3)];
        let mixed = PhasePoint::new(a.z, a.s, b.z_bra, b.s_bra);
        let jet = sym.jet(&mixed)?;
        for p in 0..4 {
            for q in p..4 {
                if let (Some(i), Some(k)) = (vars[p], vars[q]) {
                    m.add_sym(i, k, coef * jet.hess[p][q]);
                }
            }
        }
        // canonical kinetic cross term -1 at (v^{s+1}, u^s)
        if let (Some(i), Some(k)) = (vars[2], vars[0]) {
            m.add_sym(i, k, -ONE);
        }
        // spin kinetic cross term -2j ln(1 + V^{s+1} U^s)
        let (huu, huv, hvv) = ln_hessian(a.s, b.s_bra);
        if let Some(i) = vars[1] {
            m.add(i, i, -2.0 * j * huu);
        }
        if let Some(i) = vars[3] {
            m.add(i, i, -2.0 * j * hvv);
        }
        if let (Some(i), Some(k)) = (vars[1], vars[3]) {
            m.add_sym(i, k, -2.0 * j * huv);
        }
    }
    for k in 1..n {
        let p = pts[k];
        let (u, uu, v, vv) = (4 * (k - 1), 4 * (k - 1) + 1, 4 * (k - 1) + 2, 4 * (k - 1) + 3);
        m.add_sym(u, v, ONE);
        // j ln w_k from the two adjacent slices
        let (huu, huv, hvv) = ln_hessian(p.s, p.s_bra);
        m.add(uu, uu, 2.0 * j * huu);
        m.add(vv, vv, 2.0 * j * hvv);
        let measure = match convention {
            MeasureConvention::OnPath => 0.0,
            MeasureConvention::Varied => 2.0,
        };
        let big_b = (2.0 * j + measure) * huv;
        m.add_sym(uu, vv, big_b);
        if big_b.norm() == 0.0 {
            return Err(Error::ChartSingularity {
                big_u: p.s,
                big_v: p.s_bra,
            });
        }
        m.big_b.push(big_b);
        m.small_b.push(ONE / big_b.sqrt());
    }
    if scaled {
        let dim = m.dim();
        let scale: Vec<C64> = (0..dim)
            .map(|i| {
                if i % 4 == 1 || i % 4 == 3 {
                    m.small_b[i / 4]
                } else {
                    ONE
                }
            })
            .collect();
        for i in 0..dim {
            let lo = i.saturating_sub(HALF_BANDWIDTH);
            let hi = (i + HALF_BANDWIDTH).min(dim - 1);
            for jcol in lo..=hi {
                m.rows[i][jcol + HALF_BANDWIDTH - i] *= scale[i] * scale[jcol];
            }
        }
    }
    Ok(m)
}

/// Second variation matrix around a solved trajectory with `n` slices.
pub fn fluctuation_matrix(
    sym: &Symbol,
    sol: &TrajectorySolution,
    n: usize,
    convention: MeasureConvention,
) -> Result<DiscreteFluctuationMatrix> {
    let pts = dynamics::sample_uniform(sym, &sol.initial, sol.boundary.time, n)?;
    assemble(sym, &pts, sol.boundary.time, convention, true)
}

/// Largest residual of the discrete stationarity equations on the sampled
/// trajectory, each divided by `eps`.
pub fn stationarity_residual(
    sym: &Symbol,
    pts: &[PhasePoint],
    t_final: f64,
    convention: MeasureConvention,
) -> Result<f64> {
    let n = pts.len().saturating_sub(1);
    if n < 2 {
        return Ok(0.0);
    }
    let eps = t_final / n as f64;
    let j = sym.spin().j();
    let i_eps = C64::new(0.0, eps / sym.hbar());
    let measure = match convention {
        MeasureConvention::OnPath => 0.0,
        MeasureConvention::Varied => 1.0,
    };
    let mut worst: f64 = 0.0;
    for m in 1..n {
        let (prev, cur, next) = (pts[m - 1], pts[m], pts[m + 1]);
        let fwd = sym
            .value_and_grad(&PhasePoint::new(cur.z, cur.s, next.z_bra, next.s_bra))?
            .1;
        let bwd = sym
            .value_and_grad(&PhasePoint::new(prev.z, prev.s, cur.z_bra, cur.s_bra))?
            .1;
        let w = cur.chart_factor();
        let r1 = i_eps * fwd[0] - (next.z_bra - cur.z_bra);
        let r2 = i_eps * bwd[2] - (prev.z - cur.z);
        let r3 = i_eps / 2.0 * fwd[1] - j * (next.s_bra / (ONE + next.s_bra * cur.s) - cur.s_bra / w)
            + measure * cur.s_bra / w;
        let r4 = i_eps / 2.0 * bwd[3] + j * (cur.s / w - prev.s / (ONE + cur.s_bra * prev.s)) + measure * cur.s / w;
        for r in [r1, r2, r3, r4] {
            worst = worst.max(r.norm() / eps);
        }
    }
    Ok(worst)
}

/// One row of the determinant comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleRow {
    pub n: usize,
    pub det: C64,
    pub delta: C64,
    pub ratio: C64,
    pub stationarity_residual: f64,
}

impl OracleRow {
    pub fn deviation(&self) -> f64 {
        (self.ratio - ONE).norm()
    }
}

/// Discrete determinant against the continuum `Delta(T)` for one `N`.
pub fn determinant_row(
    sym: &Symbol,
    sol: &TrajectorySolution,
    n: usize,
    convention: MeasureConvention,
) -> Result<OracleRow> {
    let pts = dynamics::sample_uniform(sym, &sol.initial, sol.boundary.time, n)?;
    let m = assemble(sym, &pts, sol.boundary.time, convention, true)?;
    let det = m.determinant()?;
    let delta = sol.trajectory.delta_closed_form(sym.hbar());
    Ok(OracleRow {
        n,
        det,
        delta,
        ratio: det / delta,
        stationarity_residual: stationarity_residual(sym, &pts, sol.boundary.time, convention)?,
    })
}

/// Rows for every `N` in `n_list`, in order.
pub fn determinant_compare(
    sym: &Symbol,
    sol: &TrajectorySolution,
    n_list: &[usize],
    convention: MeasureConvention,
) -> Result<Vec<OracleRow>> {
    n_list
        .iter()
        .map(|&n| determinant_row(sym, sol, n, convention))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shooting::{solve, BoundaryData, ShootingOptions};
    use crate::states::Spin;
    use crate::symbols::OperatorSpec;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn solved(spec: &OperatorSpec, spin: Spin, t: f64) -> (Symbol, TrajectorySolution) {
        let sym = Symbol::new(spec, spin, 1.0).unwrap();
        let bd = BoundaryData::new(c(0.5, 0.3), c(0.4, -0.2), c(0.3, 0.6), c(-0.3, 0.5), spin, 1.0, t).unwrap();
        let sol = solve(&sym, &bd, None, &ShootingOptions::default()).unwrap();
        (sym, sol)
    }

    #[test]
    fn zero_hamiltonian_determinant_is_one() {
        let (sym, sol) = solved(&OperatorSpec::zero(), Spin::new(1.0).unwrap(), 1.0);
        for n in [2, 3, 10, 50] {
            let m = fluctuation_matrix(&sym, &sol, n, MeasureConvention::OnPath).unwrap();
            assert!((m.determinant().unwrap() - ONE).norm() < 1e-12, "N = {n}");
            assert_eq!(
                stationarity_residual(
                    &sym,
                    &dynamics::sample_uniform(&sym, &sol.initial, 1.0, n).unwrap(),
                    1.0,
                    MeasureConvention::OnPath
                )
                .unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn band_structure() {
        let (sym, sol) = solved(
            &OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.3),
            Spin::new(1.0).unwrap(),
            1.0,
        );
        let m = fluctuation_matrix(&sym, &sol, 6, MeasureConvention::OnPath).unwrap();
        let d = m.to_dense();
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                let (bi, bj) = (i / 4, j / 4);
                let expected_zero = bi.abs_diff(bj) > 1
                    || (bj == bi + 1 && !(i % 4 < 2 && j % 4 >= 2))
                    || (bi == bj + 1 && !(j % 4 < 2 && i % 4 >= 2));
                if expected_zero {
                    assert_eq!(d[(i, j)], ZERO, "({i},{j})");
                }
            }
            // diagonal block couplings u-v and U-V
            if i % 4 == 0 {
                assert_eq!(d[(i, i + 2)], ONE);
            }
            if i % 4 == 1 {
                assert!((d[(i, i + 2)] - ONE).norm() < 1e-14);
            }
        }
        assert!((d.clone() - d.transpose()).norm() < 1e-14);
    }

    #[test]
    fn banded_matches_dense_small_n() {
        let (sym, sol) = solved(
            &OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.3),
            Spin::new(1.5).unwrap(),
            1.0,
        );
        for n in 2..=8 {
            for conv in [MeasureConvention::OnPath, MeasureConvention::Varied] {
                let m = fluctuation_matrix(&sym, &sol, n, conv).unwrap();
                let banded = m.determinant().unwrap();
                let dense = m.determinant_dense();
                assert!(
                    (banded - dense).norm() <= 1e-12 * dense.norm().max(1.0),
                    "N = {n}: {banded} vs {dense}"
                );
            }
        }
    }

    #[test]
    fn two_slice_matrix_by_hand() {
        let spin = Spin::half();
        let (sym, sol) = solved(&OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.3), spin, 0.8);
        let pts = dynamics::sample_uniform(&sym, &sol.initial, 0.8, 2).unwrap();
        let m = assemble(&sym, &pts, 0.8, MeasureConvention::OnPath, false).unwrap();
        let (p0, p1, p2) = (pts[0], pts[1], pts[2]);
        let coef = c(0.0, 0.4);
        let j = 0.5;
        // slice 0 varies (v^1, V^1); slice 1 varies (u^1, U^1)
        let h0 = sym.jet(&PhasePoint::new(p0.z, p0.s, p1.z_bra, p1.s_bra)).unwrap().hess;
        let h1 = sym.jet(&PhasePoint::new(p1.z, p1.s, p2.z_bra, p2.s_bra)).unwrap().hess;
        let (luu_own, luv_own, lvv_own) = ln_hessian(p1.s, p1.s_bra);
        let (luu_x, _, _) = ln_hessian(p1.s, p2.s_bra);
        let (_, _, lvv_x) = ln_hessian(p0.s, p1.s_bra);
        let mut hand = DMatrix::<C64>::zeros(4, 4);
        hand[(0, 0)] = coef * h1[0][0];
        hand[(0, 1)] = coef * h1[0][1];
        hand[(1, 1)] = coef * h1[1][1] - 2.0 * j * luu_x + 2.0 * j * luu_own;
        hand[(2, 2)] = coef * h0[2][2];
        hand[(2, 3)] = coef * h0[2][3];
        hand[(3, 3)] = coef * h0[3][3] - 2.0 * j * lvv_x + 2.0 * j * lvv_own;
        hand[(0, 2)] = ONE;
        hand[(1, 3)] = 2.0 * j * luv_own;
        for i in 0..4 {
            for k in 0..i {
                hand[(i, k)] = hand[(k, i)];
            }
        }
        assert!((m.to_dense() - &hand).norm() < 1e-13);
        assert!((m.determinant_dense() - hand.determinant()).norm() < 1e-13);
    }

    #[test]
    fn scaling_identity() {
        let (sym, sol) = solved(
            &OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.3),
            Spin::new(1.0).unwrap(),
            1.0,
        );
        let pts = dynamics::sample_uniform(&sym, &sol.initial, 1.0, 40).unwrap();
        for conv in [MeasureConvention::OnPath, MeasureConvention::Varied] {
            let s = assemble(&sym, &pts, 1.0, conv, true).unwrap();
            let u = assemble(&sym, &pts, 1.0, conv, false).unwrap();
            let lhs = u.log_determinant().unwrap();
            let rhs = s.log_determinant().unwrap() + s.log_scaling_factor();
            let diff = (lhs - rhs).exp();
            assert!((diff - ONE).norm() < 1e-9, "{diff}");
        }
    }

    #[test]
    fn harmonic_residual_is_first_order() {
        let (sym, sol) = solved(&OperatorSpec::harmonic(1.0, 1.0), Spin::new(1.0).unwrap(), 1.0);
        let r = |n| {
            let pts = dynamics::sample_uniform(&sym, &sol.initial, 1.0, n).unwrap();
            stationarity_residual(&sym, &pts, 1.0, MeasureConvention::OnPath).unwrap()
        };
        let ratio = r(100) / r(200);
        assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio}");
    }

    #[test]
    fn jaynes_cummings_residual_decreases() {
        let (sym, sol) = solved(
            &OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.3),
            Spin::new(1.0).unwrap(),
            1.0,
        );
        let rs: Vec<f64> = [100, 200, 400]
            .iter()
            .map(|&n| {
                let pts = dynamics::sample_uniform(&sym, &sol.initial, 1.0, n).unwrap();
                stationarity_residual(&sym, &pts, 1.0, MeasureConvention::OnPath).unwrap()
            })
            .collect();
        assert!(rs[0] > rs[1] && rs[1] > rs[2], "{rs:?}");
    }

    #[test]
    fn harmonic_ratio_is_exact() {
        let (sym, sol) = solved(&OperatorSpec::harmonic(1.0, 1.0), Spin::new(1.0).unwrap(), 1.0);
        for row in determinant_compare(&sym, &sol, &[250, 2000], MeasureConvention::OnPath).unwrap() {
            assert!(row.deviation() < 1e-8, "{row:?}");
        }
    }

    #[test]
    fn jaynes_cummings_ratio_converges_first_order() {
        let (sym, sol) = solved(
            &OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.3),
            Spin::new(1.0).unwrap(),
            1.0,
        );
        let rows = determinant_compare(&sym, &sol, &[250, 500, 1000], MeasureConvention::OnPath).unwrap();
        for w in rows.windows(2) {
            let r = w[0].deviation() / w[1].deviation();
            assert!((r - 2.0).abs() < 0.2, "{r}");
        }
        assert!(rows[2].deviation() < 1e-3);
    }

    #[test]
    fn varied_measure_misses_continuum_limit() {
        let (sym, sol) = solved(
            &OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.3),
            Spin::new(1.0).unwrap(),
            1.0,
        );
        let rows = determinant_compare(&sym, &sol, &[500, 1000], MeasureConvention::Varied).unwrap();
        assert!(rows[1].deviation() > 1e-2);
        assert!((rows[0].ratio - rows[1].ratio).norm() < 1e-3);
    }
}
