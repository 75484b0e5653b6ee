//! Complexified classical flow generated by a symbol, its linearization in
//! the scaled displacement coordinates, and the six-component determinant
//! flow.
//!
//! Scaled displacements: `xi = (du, dU/d, dv, dV/d)` with
//! `d = (1 + UV)/sqrt(2j)`. In these coordinates the linearized flow reads
//! `xi' = (i/hbar) P H xi`, where `H` is the bold-H matrix and `P` maps rows
//! `(1, 2, 3, 4)` of `H xi` to `(-3, -4, 1, 2)`.

use nalgebra::{Matrix2, Matrix4, Matrix6};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ode::{self, OdeOptions, Step};
use crate::symbols::{Symbol, SymbolJet};

type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// A point `(u, U, v, V)` of the complexified phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    /// `u`
    pub z: C64,
    /// `U`
    pub s: C64,
    /// `v`
    pub z_bra: C64,
    /// `V`
    pub s_bra: C64,
}

impl PhasePoint {
    pub fn new(u: C64, big_u: C64, v: C64, big_v: C64) -> Self {
        PhasePoint {
            z: u,
            s: big_u,
            z_bra: v,
            s_bra: big_v,
        }
    }

    /// The conjugate-real point `(z, s, z*, s*)`.
    pub fn real(z: C64, s: C64) -> Self {
        PhasePoint::new(z, s, z.conj(), s.conj())
    }

    pub fn from_array(a: [C64; 4]) -> Self {
        PhasePoint::new(a[0], a[1], a[2], a[3])
    }

    pub fn from_slice(a: &[C64]) -> Self {
        PhasePoint::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [C64; 4] {
        [self.z, self.s, self.z_bra, self.s_bra]
    }

    /// `1 + UV`
    pub fn chart_factor(&self) -> C64 {
        ONE + self.s * self.s_bra
    }

    /// Largest deviation from `v = u*`, `V = U*`.
    pub fn conjugacy_defect(&self) -> f64 {
        (self.z_bra - self.z.conj())
            .norm()
            .max((self.s_bra - self.s.conj()).norm())
    }
}

fn scale_d(sym: &Symbol, w: C64) -> C64 {
    w / f64::from(sym.spin().twice()).sqrt()
}

fn eom_from_grad(sym: &Symbol, pt: &PhasePoint, g: &[C64; 4]) -> [C64; 4] {
    let hbar = sym.hbar();
    let two_j = f64::from(sym.spin().twice());
    let w2 = pt.chart_factor().powi(2);
    [
        -I / hbar * g[2],
        -I / (two_j * hbar) * w2 * g[3],
        I / hbar * g[0],
        I / (two_j * hbar) * w2 * g[1],
    ]
}

/// Time derivative of `(u, U, v, V)`.
pub fn eom(sym: &Symbol, pt: &PhasePoint) -> Result<PhasePoint> {
    let (_, g) = sym.value_and_grad(pt)?;
    Ok(PhasePoint::from_array(eom_from_grad(sym, pt, &g)))
}

fn bold_h(sym: &Symbol, pt: &PhasePoint, jet: &SymbolJet) -> Matrix4<C64> {
    let w = pt.chart_factor();
    let d = scale_d(sym, w);
    let d2 = d * d;
    let (u_big, v_big) = (pt.s, pt.s_bra);
    let h = &jet.hess;
    let g = &jet.grad;
    let h22 = d2 * (h[1][1] + 2.0 * v_big * g[1] / w);
    let h24 = d2 * (h[1][3] + (v_big * g[3] + u_big * g[1]) / w);
    let h44 = d2 * (h[3][3] + 2.0 * u_big * g[3] / w);
    let h12 = d * h[0][1];
    let h14 = d * h[0][3];
    let h23 = d * h[1][2];
    let h34 = d * h[2][3];
    Matrix4::new(
        h[0][0], h12, h[0][2], h14, //
        h12, h22, h23, h24, //
        h[0][2], h23, h[2][2], h34, //
        h14, h24, h34, h44,
    )
}

/// The bold-H matrix at `pt`.
pub fn linearization(sym: &Symbol, pt: &PhasePoint) -> Result<Matrix4<C64>> {
    let jet = sym.jet(pt)?;
    Ok(bold_h(sym, pt, &jet))
}

/// Generator `L` of the scaled flow `xi' = L xi`.
pub fn xi_generator(sym: &Symbol, bh: &Matrix4<C64>) -> Matrix4<C64> {
    let f = I / sym.hbar();
    let mut l = Matrix4::zeros();
    for c in 0..4 {
        l[(0, c)] = -f * bh[(2, c)];
        l[(1, c)] = -f * bh[(3, c)];
        l[(2, c)] = f * bh[(0, c)];
        l[(3, c)] = f * bh[(1, c)];
    }
    l
}

/// Matrix of the six-component determinant flow, `D' = (i/hbar) B D`, in the
/// ordering `(Delta, Delta11, Delta22, Delta12, Delta21, Delta0)`.
pub fn determinant_generator(bh: &Matrix4<C64>) -> Matrix6<C64> {
    let h = |i: usize, j: usize| bh[(i - 1, j - 1)];
    let hp = h(1, 3) + h(2, 4);
    #[rustfmt::skip]
    let m = Matrix6::from_row_slice(&[
        ZERO,     -h(2, 2), -h(1, 1),        -h(2, 1), -h(2, 1), ZERO,
        h(4, 4),  -2.0 * h(2, 4), ZERO,      -h(4, 1), -h(4, 1), -h(1, 1),
        h(3, 3),  ZERO,     -2.0 * h(1, 3),  -h(2, 3), -h(2, 3), -h(2, 2),
        h(4, 3),  -h(2, 3), -h(4, 1),        -hp,      ZERO,     h(2, 1),
        h(4, 3),  -h(2, 3), -h(4, 1),        ZERO,     -hp,      h(2, 1),
        ZERO,     h(3, 3),  h(4, 4),         -h(4, 3), -h(4, 3), -2.0 * hp,
    ]);
    m
}

/// Symmetric form `A = B + H+ * 1`, generating the antisymmetric tensor flow.
pub fn tensor_generator(bh: &Matrix4<C64>) -> Matrix6<C64> {
    let hp = bh[(0, 2)] + bh[(1, 3)];
    determinant_generator(bh) + Matrix6::identity() * hp
}

/// Tensor vector `(T34, T23, T41, T13, T42, T12)` from two displacements.
pub fn tensor_components(a: &[C64; 4], b: &[C64; 4]) -> [C64; 6] {
    let t = |i: usize, k: usize| a[i - 1] * b[k - 1] - b[i - 1] * a[k - 1];
    [t(3, 4), t(2, 3), t(4, 1), t(1, 3), t(4, 2), t(1, 2)]
}

/// Tangent matrix of the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentMatrix {
    /// In scaled coordinates `xi`.
    pub xi: Matrix4<C64>,
    /// In raw coordinates `(u, U, v, V)`.
    pub raw: Matrix4<C64>,
}

impl TangentMatrix {
    pub fn identity() -> Self {
        TangentMatrix {
            xi: Matrix4::identity(),
            raw: Matrix4::identity(),
        }
    }

    fn from_xi(sym: &Symbol, xi: Matrix4<C64>, w0: C64, w1: C64) -> Self {
        let (d0, d1) = (scale_d(sym, w0), scale_d(sym, w1));
        let left = Matrix4::from_diagonal(&nalgebra::Vector4::new(ONE, d1, ONE, d1));
        let right = Matrix4::from_diagonal(&nalgebra::Vector4::new(ONE, ONE / d0, ONE, ONE / d0));
        TangentMatrix {
            raw: left * xi * right,
            xi,
        }
    }

    fn block(m: &Matrix4<C64>, r: usize, c: usize) -> Matrix2<C64> {
        m.fixed_view::<2, 2>(r, c).into_owned()
    }

    pub fn maa(&self) -> Matrix2<C64> {
        Self::block(&self.xi, 0, 0)
    }

    pub fn mab(&self) -> Matrix2<C64> {
        Self::block(&self.xi, 0, 2)
    }

    pub fn mba(&self) -> Matrix2<C64> {
        Self::block(&self.xi, 2, 0)
    }

    pub fn mbb(&self) -> Matrix2<C64> {
        Self::block(&self.xi, 2, 2)
    }

    /// `d(v, V)(T) / d(v, V)(0)` in raw coordinates.
    pub fn mbb_raw(&self) -> Matrix2<C64> {
        Self::block(&self.raw, 2, 2)
    }
}

/// Time integrals accumulated along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accumulators {
    /// `int (i hbar/2)(u' v - v' u)`
    pub kinetic_canonical: C64,
    /// `int -i hbar j (U V' - V U')/(1 + UV)`
    pub kinetic_spin: C64,
    /// `int H`
    pub hamiltonian: C64,
    /// `int d ln(1 + UV)`, the continuous logarithm increment.
    pub log_chart: C64,
    /// `int H13`
    pub h13: C64,
    /// `int H24`
    pub h24: C64,
    /// The explicit second-derivative integrand of the phase `G`, integrated.
    pub sk_explicit: C64,
}

impl Accumulators {
    const LEN: usize = 7;

    fn from_slice(a: &[C64]) -> Self {
        Accumulators {
            kinetic_canonical: a[0],
            kinetic_spin: a[1],
            hamiltonian: a[2],
            log_chart: a[3],
            h13: a[4],
            h24: a[5],
            sk_explicit: a[6],
        }
    }

    /// `int H+ = int (H13 + H24)`
    pub fn h_plus(&self) -> C64 {
        self.h13 + self.h24
    }
}

/// Continuous extension of one accepted step for the phase-point components.
#[derive(Debug, Clone, PartialEq)]
struct Segment {
    t0: f64,
    h: f64,
    coeffs: [[C64; 4]; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> [C64; 4] {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        std::array::from_fn(|i| {
            let r = |k: usize| self.coeffs[k][i];
            r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))))
        })
    }
}

/// A solved trajectory with accumulated integrals and tangent matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub energies: Vec<C64>,
    pub accumulators: Accumulators,
    pub tangent: TangentMatrix,
    /// Continuous argument of `det Mbb` (scaled coordinates) along the path.
    pub det_mbb_phase: f64,
    segments: Vec<Segment>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn initial(&self) -> PhasePoint {
        self.points[0]
    }

    pub fn terminal(&self) -> PhasePoint {
        *self.points.last().expect("trajectory has at least one sample")
    }

    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energies[0];
        self.energies.iter().map(|e| (e - e0).norm()).fold(0.0, f64::max)
    }

    pub fn max_conjugacy_defect(&self) -> f64 {
        self.points.iter().map(|p| p.conjugacy_defect()).fold(0.0, f64::max)
    }

    /// Phase point at `t` from the integrator's dense output.
    pub fn point_at(&self, t: f64) -> PhasePoint {
        if self.segments.is_empty() {
            return self.points[0];
        }
        let idx = self
            .segments
            .partition_point(|s| s.t0 + s.h < t)
            .min(self.segments.len() - 1);
        PhasePoint::from_array(self.segments[idx].eval(t))
    }

    /// `det Mbb` in scaled coordinates.
    pub fn det_mbb(&self) -> C64 {
        self.tangent.mbb().determinant()
    }

    /// Closed-form fluctuation determinant
    /// `(1+U(0)V(0))/(1+U(T)V(T)) det Mbb_raw exp(-(i/hbar) int H+)`.
    pub fn delta_closed_form(&self, hbar: f64) -> C64 {
        let w0 = self.initial().chart_factor();
        let w1 = self.terminal().chart_factor();
        w0 / w1 * self.tangent.mbb_raw().determinant() * (-I / hbar * self.accumulators.h_plus()).exp()
    }
}

const STATE_LEN: usize = 4 + 16 + Accumulators::LEN;

struct FlowRhs<'a> {
    sym: &'a Symbol,
    half_ihbar: C64,
    ihbar_j: C64,
}

impl FlowRhs<'_> {
    fn eval(&self, y: &[C64], dy: &mut [C64]) -> Result<()> {
        let sym = self.sym;
        let pt = PhasePoint::from_slice(y);
        let jet = sym.jet(&pt)?;
        let chi = eom_from_grad(sym, &pt, &jet.grad);
        dy[..4].copy_from_slice(&chi);
        let bh = bold_h(sym, &pt, &jet);
        let l = xi_generator(sym, &bh);
        for c in 0..4 {
            for r in 0..4 {
                let mut acc = ZERO;
                for k in 0..4 {
                    acc += l[(r, k)] * y[4 + 4 * c + k];
                }
                dy[4 + 4 * c + r] = acc;
            }
        }
        let w = pt.chart_factor();
        let (u, big_u, v, big_v) = (pt.z, pt.s, pt.z_bra, pt.s_bra);
        let [du, d_big_u, dv, d_big_v] = chi;
        let two_j = f64::from(sym.spin().twice());
        let g = &jet.grad;
        let hs = &jet.hess;
        let a = &mut dy[20..];
        a[0] = self.half_ihbar * (du * v - dv * u);
        a[1] = -self.ihbar_j * (big_u * d_big_v - big_v * d_big_u) / w;
        a[2] = jet.value;
        a[3] = (d_big_u * big_v + big_u * d_big_v) / w;
        a[4] = bh[(0, 2)];
        a[5] = bh[(1, 3)];
        let bracket =
            (2.0 * w * big_u * g[1] + w * w * hs[1][3]) / two_j + (2.0 * w * big_v * g[3] + w * w * hs[1][3]) / two_j;
        a[6] = 0.5 * (hs[0][2] + 0.5 * bracket);
        Ok(())
    }
}

fn unwrap_step(step: &Step<'_>, q_prev: C64, phase: &mut f64) {
    let det_at = |y: &[C64]| y[4 + 4 * 2 + 2] * y[4 + 4 * 3 + 3] - y[4 + 4 * 3 + 2] * y[4 + 4 * 2 + 3];
    let q1 = det_at(step.y1);
    let jump = (q1 / q_prev).arg();
    if jump.abs() <= std::f64::consts::FRAC_PI_4 {
        *phase += jump;
        return;
    }
    // refine through the continuous extension
    let mut buf = vec![ZERO; step.y1.len()];
    let pieces = 64;
    let mut prev = q_prev;
    for k in 1..=pieces {
        let t = step.t0 + step.h * k as f64 / pieces as f64;
        step.interpolate(t, &mut buf);
        let q = det_at(&buf);
        *phase += (q / prev).arg();
        prev = q;
    }
}

/// Integrates the flow from `p0` over `[0, t_final]` with the tangent matrix
/// and all accumulators.
pub fn integrate(sym: &Symbol, p0: &PhasePoint, t_final: f64, opts: &OdeOptions) -> Result<Trajectory> {
    if !(t_final >= 0.0) {
        return Err(Error::InvalidArgument(format!("T must be non-negative, got {t_final}")));
    }
    let e0 = sym.eval(p0, crate::symbols::Deriv::Value)?;
    let mut y0 = vec![ZERO; STATE_LEN];
    y0[..4].copy_from_slice(&p0.to_array());
    for k in 0..4 {
        y0[4 + 5 * k] = ONE;
    }
    let hbar = sym.hbar();
    let rhs = FlowRhs {
        sym,
        half_ihbar: I * hbar / 2.0,
        ihbar_j: I * hbar * sym.spin().j(),
    };
    let mut times = vec![0.0];
    let mut points = vec![*p0];
    let mut energies = vec![e0];
    let mut segments = Vec::new();
    let mut phase = 0.0;
    let mut q_prev = ONE;
    let mut opts = *opts;
    opts.bound_components = 4;
    let y = ode::integrate(
        |_, y, dy| rhs.eval(y, dy),
        0.0,
        t_final,
        &y0,
        &opts,
        |step| {
            let pt = PhasePoint::from_slice(step.y1);
            unwrap_step(step, q_prev, &mut phase);
            q_prev = step.y1[4 + 4 * 2 + 2] * step.y1[4 + 4 * 3 + 3] - step.y1[4 + 4 * 3 + 2] * step.y1[4 + 4 * 2 + 3];
            times.push(step.t1());
            points.push(pt);
            energies.push(sym.eval(&pt, crate::symbols::Deriv::Value)?);
            let mut coeffs = [[ZERO; 4]; 5];
            for i in 0..4 {
                for (k, r) in step.coefficients(i).into_iter().enumerate() {
                    coeffs[k][i] = r;
                }
            }
            segments.push(Segment {
                t0: step.t0,
                h: step.h,
                coeffs,
            });
            Ok(())
        },
    )?;
    let p1 = PhasePoint::from_slice(&y);
    if let Some(last) = times.last_mut() {
        *last = t_final;
    }
    let mut xi = Matrix4::zeros();
    for c in 0..4 {
        for r in 0..4 {
            xi[(r, c)] = y[4 + 4 * c + r];
        }
    }
    let tangent = TangentMatrix::from_xi(sym, xi, p0.chart_factor(), p1.chart_factor());
    Ok(Trajectory {
        times,
        points,
        energies,
        accumulators: Accumulators::from_slice(&y[20..]),
        tangent,
        det_mbb_phase: phase,
        segments,
    })
}

/// Phase points at `n + 1` uniform times, from a fixed-step re-integration.
pub fn sample_uniform(sym: &Symbol, p0: &PhasePoint, t_final: f64, n: usize) -> Result<Vec<PhasePoint>> {
    let mut pts = vec![*p0];
    if n == 0 {
        return Ok(pts);
    }
    let opts = OdeOptions {
        bound_components: 4,
        ..OdeOptions::fixed(n)
    };
    ode::integrate(
        |_, y, dy| {
            let pt = PhasePoint::from_slice(y);
            let (_, g) = sym.value_and_grad(&pt)?;
            dy.copy_from_slice(&eom_from_grad(sym, &pt, &g));
            Ok(())
        },
        0.0,
        t_final,
        &p0.to_array(),
        &opts,
        |step| {
            pts.push(PhasePoint::from_slice(step.y1));
            Ok(())
        },
    )?;
    Ok(pts)
}

/// Tangent matrix of a solved trajectory.
pub fn tangent(traj: &Trajectory) -> TangentMatrix {
    traj.tangent.clone()
}

/// Result of integrating the six-component determinant flow.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterminantFlow {
    pub times: Vec<f64>,
    /// `(Delta, Delta11, Delta22, Delta12, Delta21, Delta0)` per time.
    pub history: Vec<[C64; 6]>,
    /// `Delta(T)` from the flow.
    pub delta_flow: C64,
    /// `Delta(T)` from the tangent-matrix closed form.
    pub delta_closed: C64,
}

impl DeterminantFlow {
    pub fn relative_mismatch(&self) -> f64 {
        (self.delta_flow - self.delta_closed).norm() / self.delta_closed.norm().max(f64::MIN_POSITIVE)
    }
}

/// Initial value of the determinant vector.
pub const DETERMINANT_INITIAL: [C64; 6] = [ONE, ZERO, ZERO, ZERO, ZERO, ZERO];

/// Evolves the determinant vector along the trajectory starting at `traj`'s
/// initial point, independently re-integrating the base flow.
pub fn determinant_flow(sym: &Symbol, traj: &Trajectory, opts: &OdeOptions) -> Result<DeterminantFlow> {
    let p0 = traj.initial();
    let t_final = traj.duration();
    let hbar = sym.hbar();
    let mut y0 = vec![ZERO; 10];
    y0[..4].copy_from_slice(&p0.to_array());
    y0[4..].copy_from_slice(&DETERMINANT_INITIAL);
    let mut times = vec![0.0];
    let mut history = vec![DETERMINANT_INITIAL];
    let mut opts = *opts;
    opts.bound_components = 4;
    let y = ode::integrate(
        |_, y, dy| {
            let pt = PhasePoint::from_slice(y);
            let jet = sym.jet(&pt)?;
            dy[..4].copy_from_slice(&eom_from_grad(sym, &pt, &jet.grad));
            let b = determinant_generator(&bold_h(sym, &pt, &jet));
            for r in 0..6 {
                let mut acc = ZERO;
                for c in 0..6 {
                    acc += b[(r, c)] * y[4 + c];
                }
                dy[4 + r] = I / hbar * acc;
            }
            Ok(())
        },
        0.0,
        t_final,
        &y0,
        &opts,
        |step| {
            times.push(step.t1());
            history.push(std::array::from_fn(|k| step.y1[4 + k]));
            Ok(())
        },
    )?;
    Ok(DeterminantFlow {
        times,
        history,
        delta_flow: y[4],
        delta_closed: traj.delta_closed_form(hbar),
    })
}
