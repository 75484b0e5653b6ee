//! Newton shooting for the mixed boundary-value problem
//! `u(0) = z'`, `U(0) = s'`, `v(T) = z''*`, `V(T) = s''*`, and parameter
//! continuation for branch tracking.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, PhasePoint, TangentMatrix, Trajectory};
use crate::error::{Error, Result};
use crate::ode::OdeOptions;
use crate::states::Spin;
use crate::symbols::Symbol;

/// Endpoint labels, spin, Planck constant and duration of one propagator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    /// `z'`
    pub z_initial: Complex64,
    /// `s'`
    pub s_initial: Complex64,
    /// `z''*`, already conjugated.
    pub z_final_conj: Complex64,
    /// `s''*`, already conjugated.
    pub s_final_conj: Complex64,
    pub spin: Spin,
    pub hbar: f64,
    pub time: f64,
}

impl BoundaryData {
    /// Builds boundary data from the physical final labels `z''`, `s''`.
    pub fn new(
        z_initial: Complex64,
        s_initial: Complex64,
        z_final: Complex64,
        s_final: Complex64,
        spin: Spin,
        hbar: f64,
        time: f64,
    ) -> Result<Self> {
        Self::from_conjugated(z_initial, s_initial, z_final.conj(), s_final.conj(), spin, hbar, time)
    }

    /// Builds boundary data from the conjugated final labels `z''*`, `s''*`.
    pub fn from_conjugated(
        z_initial: Complex64,
        s_initial: Complex64,
        z_final_conj: Complex64,
        s_final_conj: Complex64,
        spin: Spin,
        hbar: f64,
        time: f64,
    ) -> Result<Self> {
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "T must be finite and non-negative, got {time}"
            )));
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidArgument(format!("hbar must be positive, got {hbar}")));
        }
        for (name, x) in [
            ("z'", z_initial),
            ("s'", s_initial),
            ("z''*", z_final_conj),
            ("s''*", s_final_conj),
        ] {
            if !x.is_finite() {
                return Err(Error::InvalidArgument(format!("label {name} must be finite")));
            }
        }
        Ok(BoundaryData {
            z_initial,
            s_initial,
            z_final_conj,
            s_final_conj,
            spin,
            hbar,
            time,
        })
    }

    pub fn z_final(&self) -> Complex64 {
        self.z_final_conj.conj()
    }

    pub fn s_final(&self) -> Complex64 {
        self.s_final_conj.conj()
    }

    pub fn with_time(&self, time: f64) -> Self {
        BoundaryData { time, ..*self }
    }

    /// Data of the transposed element: ket labels `(z''*, s''*)`, bra labels
    /// `(z'*, s'*)`. For Hamiltonians with real matrix elements in the number
    /// basis the propagator is invariant under this exchange.
    pub fn transposed(&self) -> Self {
        BoundaryData {
            z_initial: self.z_final_conj,
            s_initial: self.s_final_conj,
            z_final_conj: self.z_initial,
            s_final_conj: self.s_initial,
            ..*self
        }
    }

    /// `(v0, V0)` of the conjugate-real guess.
    pub fn default_guess(&self) -> [Complex64; 2] {
        [self.z_initial.conj(), self.s_initial.conj()]
    }

    fn target(&self) -> Vector2<Complex64> {
        Vector2::new(self.z_final_conj, self.s_final_conj)
    }

    fn start(&self, x: &Vector2<Complex64>) -> PhasePoint {
        PhasePoint::new(self.z_initial, self.s_initial, x[0], x[1])
    }
}

/// Newton shooting settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub singular_det: f64,
    pub ode: OdeOptions,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 10,
            singular_det: 1e-12,
            ode: OdeOptions::default(),
        }
    }
}

/// A converged boundary-value solution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySolution {
    pub boundary: BoundaryData,
    pub initial: PhasePoint,
    pub trajectory: Trajectory,
    pub tangent: TangentMatrix,
    /// `max |(v(T) - z''*, V(T) - s''*)|`
    pub residual: f64,
    pub iterations: usize,
    pub branch: usize,
}

impl TrajectorySolution {
    /// `(v0, V0)`
    pub fn unknowns(&self) -> [Complex64; 2] {
        [self.initial.z_bra, self.initial.s_bra]
    }
}

fn residual_of(traj: &Trajectory, target: &Vector2<Complex64>) -> Vector2<Complex64> {
    let p = traj.terminal();
    Vector2::new(p.z_bra, p.s_bra) - target
}

fn inf_norm(r: &Vector2<Complex64>) -> f64 {
    r[0].norm().max(r[1].norm())
}

/// The residual map `(v0, V0) -> (v(T) - z''*, V(T) - s''*)`.
pub fn residual_map(
    sym: &Symbol,
    bd: &BoundaryData,
    unknowns: [Complex64; 2],
    opts: &OdeOptions,
) -> Result<[Complex64; 2]> {
    let x = Vector2::new(unknowns[0], unknowns[1]);
    let traj = dynamics::integrate(sym, &bd.start(&x), bd.time, opts)?;
    let r = residual_of(&traj, &bd.target());
    Ok([r[0], r[1]])
}

/// Jacobian of [`residual_map`] taken from the tangent matrix: the raw
/// `(v, V)` block.
pub fn shooting_jacobian(traj: &Trajectory) -> Matrix2<Complex64> {
    traj.tangent.mbb_raw()
}

/// Solves the boundary-value problem by damped Newton iteration on `(v0, V0)`.
pub fn solve(
    sym: &Symbol,
    bd: &BoundaryData,
    guess: Option<[Complex64; 2]>,
    opts: &ShootingOptions,
) -> Result<TrajectorySolution> {
    if sym.spin() != bd.spin {
        return Err(Error::InvalidArgument(format!(
            "symbol spin {} differs from boundary spin {}",
            sym.spin().j(),
            bd.spin.j()
        )));
    }
    if (sym.hbar() - bd.hbar).abs() > 1e-15 * bd.hbar {
        return Err(Error::InvalidArgument("symbol hbar differs from boundary hbar".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let target = bd.target();
    let mut x = if bd.time == 0.0 {
        target
    } else {
        let g = guess.unwrap_or_else(|| bd.default_guess());
        Vector2::new(g[0], g[1])
    };
    let mut traj = dynamics::integrate(sym, &bd.start(&x), bd.time, &opts.ode)?;
    let mut r = residual_of(&traj, &target);
    let mut norm = inf_norm(&r);
    let mut iterations = 0;
    while norm > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::MaxIterations {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let jac = shooting_jacobian(&traj);
        let det = jac.determinant();
        if det.norm() < opts.singular_det {
            return Err(Error::SingularJacobian { det: det.norm() });
        }
        let step = -jac.try_inverse().ok_or(Error::SingularJacobian { det: det.norm() })? * r;
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut last_err = None;
        for _ in 0..=opts.max_halvings {
            let trial = x + step * Complex64::new(lambda, 0.0);
            match dynamics::integrate(sym, &bd.start(&trial), bd.time, &opts.ode) {
                Ok(t) => {
                    let rt = residual_of(&t, &target);
                    let nt = inf_norm(&rt);
                    if nt < norm || nt <= opts.tol {
                        accepted = Some((trial, t, rt, nt));
                        break;
                    }
                }
                Err(e) => last_err = Some(e),
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xn, tn, rn, nn)) => {
                x = xn;
                traj = tn;
                r = rn;
                norm = nn;
            }
            None => {
                return Err(match last_err {
                    Some(
                        e @ (Error::Divergence { .. } | Error::StepUnderflow { .. } | Error::ChartSingularity { .. }),
                    ) => e,
                    _ => Error::LineSearchFailed {
                        halvings: opts.max_halvings,
                        residual: norm,
                    },
                })
            }
        }
    }
    Ok(TrajectorySolution {
        boundary: *bd,
        initial: bd.start(&x),
        tangent: traj.tangent.clone(),
        trajectory: traj,
        residual: norm,
        iterations,
        branch: 0,
    })
}

/// Continuation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub shooting: ShootingOptions,
    /// A jump is flagged when the corrector moves the unknowns further than
    /// `jump_ratio * |dp| * (1 + |x|)` away from the predictor.
    pub jump_ratio: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            shooting: ShootingOptions::default(),
            jump_ratio: 50.0,
        }
    }
}

/// One solved point along a continuation path.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationPoint {
    pub parameter: f64,
    pub symbol: Symbol,
    pub solution: TrajectorySolution,
    pub branch_jump: bool,
}

/// Solves along `parameters` in order, warm-starting each point from a linear
/// extrapolation of the previous two. `family` maps a parameter to the
/// symbol and boundary data at that point.
pub fn continuation<F>(
    parameters: &[f64],
    family: F,
    anchor_guess: Option<[Complex64; 2]>,
    opts: &ContinuationOptions,
) -> Result<Vec<ContinuationPoint>>
where
    F: Fn(f64) -> Result<(Symbol, BoundaryData)>,
{
    let mut out: Vec<ContinuationPoint> = Vec::with_capacity(parameters.len());
    let mut branch = 0;
    for &p in parameters {
        let wrap = |e: Error| Error::Continuation {
            parameter: p,
            source: Box::new(e),
        };
        let (sym, bd) = family(p).map_err(wrap)?;
        let n = out.len();
        let predictor = match n {
            0 => anchor_guess,
            1 => Some(out[0].solution.unknowns()),
            _ => {
                let (a, b) = (&out[n - 2], &out[n - 1]);
                let dp = b.parameter - a.parameter;
                let (xa, xb) = (a.solution.unknowns(), b.solution.unknowns());
                if dp == 0.0 {
                    Some(xb)
                } else {
                    let f = (p - b.parameter) / dp;
                    Some([xb[0] + (xb[0] - xa[0]) * f, xb[1] + (xb[1] - xa[1]) * f])
                }
            }
        };
        let mut sol = match solve(&sym, &bd, predictor, &opts.shooting) {
            Ok(s) => s,
            Err(first) => {
                // fall back to the previous solution when extrapolation overshoots
                let previous = out.last().map(|q| q.solution.unknowns());
                match previous {
                    Some(g) if n >= 2 => solve(&sym, &bd, Some(g), &opts.shooting).map_err(wrap)?,
                    _ => return Err(wrap(first)),
                }
            }
        };
        let mut jump = false;
        if let (Some(prev), Some(pred)) = (out.last(), predictor) {
            let x = sol.unknowns();
            let dp = (p - prev.parameter).abs();
            let moved = (x[0] - pred[0]).norm().max((x[1] - pred[1]).norm());
            let scale = 1.0 + x[0].norm().max(x[1].norm());
            if moved > opts.jump_ratio * dp * scale {
                jump = true;
                branch += 1;
            }
        }
        sol.branch = branch;
        out.push(ContinuationPoint {
            parameter: p,
            symbol: sym,
            solution: sol,
            branch_jump: jump,
        });
    }
    Ok(out)
}
