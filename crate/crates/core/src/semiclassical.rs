//! Assembly of the semiclassical propagator
//! `K = P exp(i (S + G)/hbar - Lambda)` from a solved trajectory, and the
//! separable, large-spin and spin-1/2 reductions.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::PhasePoint;
use crate::error::{Error, Result};
use crate::ode::OdeOptions;
use crate::reference;
use crate::shooting::{self, BoundaryData, ShootingOptions, TrajectorySolution};
use crate::states::{normalization_lambda, Spin};
use crate::symbols::{Deriv, OperatorSpec, OperatorTerm, Symbol};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Below this `|det Mbb|` the prefactor is refused.
pub const CAUSTIC_THRESHOLD: f64 = 1e-10;

/// Relative tolerance between the two forms of `G`.
pub const SK_CONSISTENCY_TOL: f64 = 1e-6;

/// Non-contributing when `|exp(i(S+G)/hbar - Lambda)|` exceeds `1 + this`.
pub const MAGNITUDE_SLACK: f64 = 1e-6;

/// Finite-difference step in label space for the action-derivative prefactor.
pub const ACTION_FD_STEP: f64 = 1e-5;

/// The two prefactor evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrefactorMethod {
    /// From `det Mbb` of the tangent matrix.
    #[default]
    Tangent,
    /// From second derivatives of the action (auxiliary boundary solves).
    ActionDerivatives,
}

/// The assembled propagator with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropagatorResult {
    pub action: Complex64,
    pub sk_phase: Complex64,
    pub lambda: f64,
    pub prefactor: Complex64,
    pub k: Complex64,
    pub residual: f64,
    pub energy_drift: f64,
    pub iterations: usize,
    pub branch: usize,
    /// `|det Mbb|` (scaled coordinates); small values signal a nearby caustic.
    pub det_mbb_abs: f64,
    /// `false` when the exponential alone exceeds the propagator bound.
    pub contributing: bool,
}

/// `S`, with the boundary logarithm continued along the trajectory.
pub fn action(sol: &TrajectorySolution) -> Complex64 {
    let hbar = sol.boundary.hbar;
    let j = sol.boundary.spin.j();
    let a = &sol.trajectory.accumulators;
    let (p0, p1) = (sol.trajectory.initial(), sol.trajectory.terminal());
    a.kinetic_canonical + a.kinetic_spin
        - a.hamiltonian
        - I * hbar / 2.0 * (p0.z * p0.z_bra + p1.z * p1.z_bra)
        - I * hbar * j * (2.0 * p0.chart_factor().ln() + a.log_chart)
}

/// `G` in its two forms: `(explicit integrand, (1/2) int H+)`.
pub fn sk_phase_forms(sol: &TrajectorySolution) -> (Complex64, Complex64) {
    let a = &sol.trajectory.accumulators;
    (a.sk_explicit, 0.5 * a.h_plus())
}

/// `G`, after checking that both forms agree.
pub fn sk_phase(sol: &TrajectorySolution) -> Result<Complex64> {
    let (explicit, half_h_plus) = sk_phase_forms(sol);
    let scale = half_h_plus
        .norm()
        .max(sol.boundary.hbar * sol.boundary.time.max(1e-300));
    if (explicit - half_h_plus).norm() > SK_CONSISTENCY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Consistency(format!(
            "phase forms disagree: {explicit} vs {half_h_plus}"
        )));
    }
    Ok(half_h_plus)
}

fn tangent_prefactor(sol: &TrajectorySolution) -> Result<Complex64> {
    let q = sol.trajectory.det_mbb();
    if q.norm() < CAUSTIC_THRESHOLD {
        return Err(Error::Caustic { det: q.norm() });
    }
    let phase = sol.trajectory.det_mbb_phase;
    Ok(Complex64::from_polar(q.norm().powf(-0.5), -0.5 * phase))
}

/// `Sigma` from second derivatives of the action, with the mixed
/// derivatives obtained from centered differences of the initial-slope
/// identities `dS/du' = -i hbar v'`, `dS/dU' = -2 i hbar j V'/(1 + U'V')`
/// under perturbations of `z''*` and `s''*`.
pub fn action_hessian(
    sym: &Symbol,
    sol: &TrajectorySolution,
    step: f64,
    opts: &ShootingOptions,
) -> Result<Matrix2<Complex64>> {
    let bd = sol.boundary;
    let hbar = bd.hbar;
    let two_j = f64::from(bd.spin.twice());
    let guess = Some(sol.unknowns());
    let slopes = |b: &BoundaryData| -> Result<[Complex64; 2]> {
        let s = shooting::solve(sym, b, guess, opts)?;
        let p = s.initial;
        Ok([-I * hbar * p.z_bra, -I * hbar * two_j * p.s_bra / p.chart_factor()])
    };
    let mut sigma = Matrix2::zeros();
    for col in 0..2 {
        let mut plus = bd;
        let mut minus = bd;
        if col == 0 {
            plus.z_final_conj += step;
            minus.z_final_conj -= step;
        } else {
            plus.s_final_conj += step;
            minus.s_final_conj -= step;
        }
        let (sp, sm) = (slopes(&plus)?, slopes(&minus)?);
        for row in 0..2 {
            sigma[(row, col)] = I / hbar * (sp[row] - sm[row]) / (2.0 * step);
        }
    }
    Ok(sigma)
}

/// Prefactor `[(1+U''V'')/(1+U'V') / det Mbb]^(1/2)` with the root continued
/// along the trajectory from 1 at `t = 0`.
pub fn prefactor(
    sym: &Symbol,
    sol: &TrajectorySolution,
    method: PrefactorMethod,
    opts: &ShootingOptions,
) -> Result<Complex64> {
    let tangent = tangent_prefactor(sol)?;
    match method {
        PrefactorMethod::Tangent => Ok(tangent),
        PrefactorMethod::ActionDerivatives => {
            if sol.boundary.time == 0.0 {
                return Ok(Complex64::new(1.0, 0.0));
            }
            let aux = ShootingOptions {
                tol: opts.tol.min(1e-12),
                ode: OdeOptions::with_tol(1e-13),
                ..*opts
            };
            let sigma = action_hessian(sym, sol, ACTION_FD_STEP, &aux)?;
            let (p0, p1) = (sol.trajectory.initial(), sol.trajectory.terminal());
            let two_j = f64::from(sol.boundary.spin.twice());
            let squared = p1.chart_factor() * p0.chart_factor() * sigma.determinant() / two_j;
            let root = squared.sqrt();
            // the root branch follows the tangent path
            Ok(if (root - tangent).norm() <= (root + tangent).norm() {
                root
            } else {
                -root
            })
        }
    }
}

/// `K` and diagnostics from a converged solution.
pub fn assemble(sol: &TrajectorySolution) -> Result<PropagatorResult> {
    assemble_with_prefactor(sol, tangent_prefactor(sol)?)
}

fn assemble_with_prefactor(sol: &TrajectorySolution, prefactor: Complex64) -> Result<PropagatorResult> {
    let bd = &sol.boundary;
    let s = action(sol);
    let g = sk_phase(sol)?;
    let lambda = normalization_lambda(bd.z_initial, bd.z_final(), bd.s_initial, bd.s_final(), bd.spin);
    let exponent = I * (s + g) / bd.hbar - lambda;
    Ok(PropagatorResult {
        action: s,
        sk_phase: g,
        lambda,
        prefactor,
        k: prefactor * exponent.exp(),
        residual: sol.residual,
        energy_drift: sol.trajectory.energy_drift(),
        iterations: sol.iterations,
        branch: sol.branch,
        det_mbb_abs: sol.trajectory.det_mbb().norm(),
        contributing: exponent.re.exp() <= 1.0 + MAGNITUDE_SLACK,
    })
}

/// Assembly with a chosen prefactor method.
pub fn assemble_with(
    sym: &Symbol,
    sol: &TrajectorySolution,
    method: PrefactorMethod,
    opts: &ShootingOptions,
) -> Result<PropagatorResult> {
    assemble_with_prefactor(sol, prefactor(sym, sol, method, opts)?)
}

/// Solves the boundary-value problem and assembles `K`.
pub fn propagate(
    sym: &Symbol,
    bd: &BoundaryData,
    guess: Option<[Complex64; 2]>,
    opts: &ShootingOptions,
) -> Result<(PropagatorResult, TrajectorySolution)> {
    let sol = shooting::solve(sym, bd, guess, opts)?;
    Ok((assemble(&sol)?, sol))
}

/// Per-sector pieces of a solution of a Hamiltonian without cross terms.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SectorPieces {
    action: Complex64,
    phase: Complex64,
    lambda: f64,
}

fn canonical_pieces(sol: &TrajectorySolution) -> SectorPieces {
    let bd = &sol.boundary;
    let a = &sol.trajectory.accumulators;
    let (p0, p1) = (sol.trajectory.initial(), sol.trajectory.terminal());
    SectorPieces {
        action: a.kinetic_canonical - a.hamiltonian - I * bd.hbar / 2.0 * (p0.z * p0.z_bra + p1.z * p1.z_bra),
        phase: 0.5 * a.h13,
        lambda: 0.5 * (bd.z_initial.norm_sqr() + bd.z_final_conj.norm_sqr()),
    }
}

fn spin_pieces(sol: &TrajectorySolution) -> SectorPieces {
    let bd = &sol.boundary;
    let a = &sol.trajectory.accumulators;
    let p0 = sol.trajectory.initial();
    let j = bd.spin.j();
    SectorPieces {
        action: a.kinetic_spin - a.hamiltonian - I * bd.hbar * j * (2.0 * p0.chart_factor().ln() + a.log_chart),
        phase: 0.5 * a.h24,
        lambda: j * ((1.0 + bd.s_initial.norm_sqr()) * (1.0 + bd.s_final_conj.norm_sqr())).ln(),
    }
}

fn sector_k(pieces: &SectorPieces, prefactor: Complex64, hbar: f64) -> Complex64 {
    prefactor * (I * (pieces.action + pieces.phase) / hbar - pieces.lambda).exp()
}

/// Factorized propagator of a Hamiltonian without boson-spin cross terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparableResult {
    pub result: PropagatorResult,
    pub k_canonical: Complex64,
    pub k_spin: Complex64,
}

/// `K = K_z K_s` from two decoupled sector solves.
pub fn separable_assemble(spec: &OperatorSpec, bd: &BoundaryData, opts: &ShootingOptions) -> Result<SeparableResult> {
    let (canonical, spin) = spec.split_sectors()?;
    let sym_z = Symbol::new(&canonical, bd.spin, bd.hbar)?;
    let sym_s = Symbol::new(&spin, bd.spin, bd.hbar)?;
    let sol_z = shooting::solve(&sym_z, bd, None, opts)?;
    let sol_s = shooting::solve(&sym_s, bd, None, opts)?;
    // in each sector run the other block of Mbb is the identity
    let p_z = tangent_prefactor(&sol_z)?;
    let p_s = tangent_prefactor(&sol_s)?;
    let (cz, cs) = (canonical_pieces(&sol_z), spin_pieces(&sol_s));
    let k_canonical = sector_k(&cz, p_z, bd.hbar);
    let k_spin = sector_k(&cs, p_s, bd.hbar);
    let action = cz.action + cs.action;
    let phase = cz.phase + cs.phase;
    let lambda = cz.lambda + cs.lambda;
    let k = k_canonical * k_spin;
    let exponent = I * (action + phase) / bd.hbar - lambda;
    Ok(SeparableResult {
        result: PropagatorResult {
            action,
            sk_phase: phase,
            lambda,
            prefactor: p_z * p_s,
            k,
            residual: sol_z.residual.max(sol_s.residual),
            energy_drift: sol_z.trajectory.energy_drift() + sol_s.trajectory.energy_drift(),
            iterations: sol_z.iterations + sol_s.iterations,
            branch: 0,
            det_mbb_abs: (sol_z.trajectory.det_mbb() * sol_s.trajectory.det_mbb()).norm(),
            contributing: exponent.re.exp() <= 1.0 + MAGNITUDE_SLACK,
        },
        k_canonical,
        k_spin,
    })
}

/// One row of the large-spin comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LargeSpinRow {
    pub j: f64,
    pub k_spin: Complex64,
    pub k_canonical: Complex64,
    pub deviation: f64,
}

/// Compares the spin propagator at labels `s = w/sqrt(2j)` with the canonical
/// propagator at labels `w`, for each spin in `spins`.
#[allow(clippy::too_many_arguments)]
pub fn large_spin_compare<F>(
    spin_family: F,
    canonical_spec: &OperatorSpec,
    spins: &[Spin],
    w_initial: Complex64,
    w_final: Complex64,
    hbar: f64,
    time: f64,
    opts: &ShootingOptions,
) -> Result<Vec<LargeSpinRow>>
where
    F: Fn(Spin) -> OperatorSpec,
{
    let zero = Complex64::new(0.0, 0.0);
    let canonical_sym = Symbol::new(canonical_spec, Spin::half(), hbar)?;
    let bd_c = BoundaryData::new(w_initial, zero, w_final, zero, Spin::half(), hbar, time)?;
    let (k_canonical, _) = propagate(&canonical_sym, &bd_c, None, opts)?;
    spins
        .iter()
        .map(|&spin| {
            let scale = 1.0 / f64::from(spin.twice()).sqrt();
            let sym = Symbol::new(&spin_family(spin), spin, hbar)?;
            let bd = BoundaryData::new(zero, w_initial * scale, zero, w_final * scale, spin, hbar, time)?;
            let (r, _) = propagate(&sym, &bd, None, opts)?;
            Ok(LargeSpinRow {
                j: spin.j(),
                k_spin: r.k,
                k_canonical: k_canonical.k,
                deviation: (r.k - k_canonical.k).norm() / k_canonical.k.norm(),
            })
        })
        .collect()
}

/// `hbar omega (Jz + j) + hbar lambda (J+ + J-)/sqrt(2j)`, whose large-`j`
/// limit is [`displaced_oscillator`].
pub fn linear_spin_family(spin: Spin, hbar: f64, omega: f64, lambda: f64) -> OperatorSpec {
    let j = spin.j();
    let c = hbar * lambda / f64::from(spin.twice()).sqrt();
    OperatorSpec::new(vec![
        OperatorTerm::new(hbar * omega, 0, 0, 0, 1, 0),
        OperatorTerm::new(hbar * omega * j, 0, 0, 0, 0, 0),
        OperatorTerm::new(c, 0, 0, 1, 0, 0),
        OperatorTerm::new(c, 0, 0, 0, 0, 1),
    ])
}

/// `hbar omega a^dag a + hbar lambda (a^dag + a)`.
pub fn displaced_oscillator(hbar: f64, omega: f64, lambda: f64) -> OperatorSpec {
    OperatorSpec::new(vec![
        OperatorTerm::new(hbar * omega, 1, 1, 0, 0, 0),
        OperatorTerm::new(hbar * lambda, 1, 0, 0, 0, 0),
        OperatorTerm::new(hbar * lambda, 0, 1, 0, 0, 0),
    ])
}

/// Spin-1/2 Hamiltonian split as `H0 + f+ J+ + f- J- + fz Jz` with boson-only
/// coefficient operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinHalfSplit {
    pub orbital: OperatorSpec,
    pub raising: OperatorSpec,
    pub lowering: OperatorSpec,
    pub weight: OperatorSpec,
}

impl SpinHalfSplit {
    pub fn new(spec: &OperatorSpec) -> Result<Self> {
        let mut split = SpinHalfSplit {
            orbital: OperatorSpec::zero(),
            raising: OperatorSpec::zero(),
            lowering: OperatorSpec::zero(),
            weight: OperatorSpec::zero(),
        };
        for t in &spec.terms {
            let boson = OperatorTerm::new(t.coeff, t.m, t.n, 0, 0, 0);
            match (t.p, t.q, t.r) {
                (0, 0, 0) => split.orbital.terms.push(boson),
                (1, 0, 0) => split.raising.terms.push(boson),
                (0, 0, 1) => split.lowering.terms.push(boson),
                (0, 1, 0) => split.weight.terms.push(boson),
                _ => return Err(Error::NotSpinHalfLinear(t.to_string())),
            }
        }
        Ok(split)
    }

    /// `C = (C1, C2, C3)` (frequency units) at the orbital point `(u, v)`.
    pub fn field(&self, u: Complex64, v: Complex64, hbar: f64) -> [Complex64; 3] {
        let eval =
            |s: &OperatorSpec| -> Complex64 { s.terms.iter().map(|t| t.coeff * v.powu(t.m) * u.powu(t.n)).sum() };
        let (fp, fm, fz) = (eval(&self.raising), eval(&self.lowering), eval(&self.weight));
        [(fp + fm) / hbar, I * (fp - fm) / hbar, fz / hbar]
    }
}

/// Result of the spin-1/2 factorization `K = K_z K_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorizedResult {
    pub k: Complex64,
    pub k_canonical: Complex64,
    pub k_spin: Complex64,
    pub residual: f64,
    pub iterations: usize,
}

/// Spin-1/2 factorized propagator: the orbital boundary-value problem under
/// `H0` alone, and the exact spin-1/2 propagator in the field `C` evaluated
/// along that orbit.
pub fn spin_half_factorized(
    spec: &OperatorSpec,
    bd: &BoundaryData,
    opts: &ShootingOptions,
) -> Result<FactorizedResult> {
    if bd.spin != Spin::half() {
        return Err(Error::InvalidArgument(format!(
            "spin-1/2 factorization needs j = 1/2, got {}",
            bd.spin.j()
        )));
    }
    let split = SpinHalfSplit::new(spec)?;
    let sym = Symbol::new(&split.orbital, bd.spin, bd.hbar)?;
    let sol = shooting::solve(&sym, bd, None, opts)?;
    let k_canonical = sector_k(&canonical_pieces(&sol), tangent_prefactor(&sol)?, bd.hbar);
    let traj = &sol.trajectory;
    let field = |t: f64| {
        let p: PhasePoint = traj.point_at(t);
        split.field(p.z, p.z_bra, bd.hbar)
    };
    let (k_spin, _) = reference::spin_half_exact(field, bd.s_initial, bd.s_final_conj, bd.time, &opts.ode)?;
    Ok(FactorizedResult {
        k: k_canonical * k_spin,
        k_canonical,
        k_spin,
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

/// `H` at the start of a solved trajectory (constant along it).
pub fn energy(sym: &Symbol, sol: &TrajectorySolution) -> Result<Complex64> {
    sym.eval(&sol.initial, Deriv::Value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{exact_propagator, HilbertConfig, ReferenceMethod};
    use crate::states::{overlap_canonical, overlap_spin};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn opts() -> ShootingOptions {
        ShootingOptions::default()
    }

    fn close(a: Complex64, b: Complex64, rel: f64) -> bool {
        (a - b).norm() <= rel * b.norm().max(1e-300)
    }

    #[test]
    fn harmonic_closed_forms() {
        let spin = Spin::new(1.0).unwrap();
        let t = 1.3;
        let bd = BoundaryData::new(c(1.0, 0.5), c(0.2, 0.0), c(0.3, -0.2), c(0.2, 0.0), spin, 1.0, t).unwrap();
        let sym = Symbol::new(&OperatorSpec::harmonic(1.0, 1.0), spin, 1.0).unwrap();
        let (r, sol) = propagate(&sym, &bd, None, &opts()).unwrap();
        let s_canonical = -I * bd.z_final_conj * bd.z_initial * c(0.0, -t).exp();
        let s_spin = -I * spin.j() * 2.0 * (1.0 + bd.s_final_conj * bd.s_initial).ln();
        assert!(close(r.action, s_canonical + s_spin, 1e-9));
        assert!(close(r.sk_phase, c(t / 2.0, 0.0), 1e-9));
        assert!(close(r.prefactor, c(0.0, -t / 2.0).exp(), 1e-9));
        let closed = (-0.5 * bd.z_initial.norm_sqr() - 0.5 * bd.z_final().norm_sqr()
            + bd.z_final_conj * bd.z_initial * c(0.0, -t).exp())
        .exp()
            * overlap_spin(bd.s_final(), bd.s_initial, spin);
        assert!(close(r.k, closed, 1e-8));
        assert!(r.contributing);
        let _ = sol;
    }

    #[test]
    fn zero_time_is_overlap() {
        let spin = Spin::new(1.5).unwrap();
        let bd = BoundaryData::new(c(0.4, 0.5), c(-0.6, 0.8), c(0.3, -0.2), c(1.2, 0.1), spin, 1.0, 0.0).unwrap();
        let sym = Symbol::new(&OperatorSpec::jaynes_cummings(1.0, 1.0, 0.6, 0.3), spin, 1.0).unwrap();
        let (r, _) = propagate(&sym, &bd, None, &opts()).unwrap();
        let o = overlap_canonical(bd.z_final(), bd.z_initial) * overlap_spin(bd.s_final(), bd.s_initial, spin);
        assert!((r.k - o).norm() < 1e-12);
        assert_eq!(r.prefactor, c(1.0, 0.0));
    }

    #[test]
    fn precession_matches_exact() {
        for two_j in [1u32, 2, 10] {
            let spin = Spin::from_twice(two_j).unwrap();
            let bd = BoundaryData::new(c(0.2, 0.1), c(0.5, -1.1), c(0.1, 0.3), c(-0.9, 0.4), spin, 1.0, 2.0).unwrap();
            let spec = OperatorSpec::spin_precession(1.0, 1.0);
            let sym = Symbol::new(&spec, spin, 1.0).unwrap();
            let (r, _) = propagate(&sym, &bd, None, &opts()).unwrap();
            let exact =
                exact_propagator(&spec, &HilbertConfig::for_boundary(&bd, 4), &bd, ReferenceMethod::Auto).unwrap();
            assert!(close(r.k, exact, 1e-8), "2j={two_j}: {} vs {}", r.k, exact);
        }
    }

    #[test]
    fn zero_hamiltonian_phase_vanishes() {
        let spin = Spin::half();
        let bd = BoundaryData::new(c(0.2, 0.1), c(0.5, -0.1), c(0.1, 0.3), c(-0.2, 0.4), spin, 1.0, 1.5).unwrap();
        let sym = Symbol::new(&OperatorSpec::zero(), spin, 1.0).unwrap();
        let (r, _) = propagate(&sym, &bd, None, &opts()).unwrap();
        assert_eq!(r.sk_phase, c(0.0, 0.0));
    }

    #[test]
    fn separable_matches_full_machinery() {
        let spin = Spin::new(1.0).unwrap();
        let spec = OperatorSpec::harmonic(1.0, 1.0).extend(&OperatorSpec::spin_precession(1.0, 0.7));
        let bd = BoundaryData::new(c(0.5, 0.3), c(0.4, -0.2), c(0.3, 0.6), c(-0.3, 0.5), spin, 1.0, 1.1).unwrap();
        let sep = separable_assemble(&spec, &bd, &opts()).unwrap();
        let sym = Symbol::new(&spec, spin, 1.0).unwrap();
        let (full, _) = propagate(&sym, &bd, None, &opts()).unwrap();
        assert!(close(sep.result.k, full.k, 1e-8));
        assert!(close(sep.result.sk_phase, full.sk_phase, 1e-8));
        assert!(close(sep.result.action, full.action, 1e-8));

        let only_boson = separable_assemble(&OperatorSpec::harmonic(1.0, 1.0), &bd, &opts()).unwrap();
        let ov = overlap_spin(bd.s_final(), bd.s_initial, spin);
        assert!(close(only_boson.k_spin, ov, 1e-12));

        let mixed = OperatorSpec::jaynes_cummings(1.0, 1.0, 1.0, 0.1);
        assert!(matches!(
            separable_assemble(&mixed, &bd, &opts()),
            Err(Error::NotSeparable)
        ));
    }

    #[test]
    fn prefactor_forms_agree_on_jaynes_cummings() {
        let spin = Spin::new(1.0).unwrap();
        let sym = Symbol::new(&OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.2), spin, 1.0).unwrap();
        let bd = BoundaryData::new(c(0.5, 0.3), c(0.4, -0.2), c(0.3, 0.6), c(-0.3, 0.5), spin, 1.0, 1.0).unwrap();
        let sol = shooting::solve(&sym, &bd, None, &opts()).unwrap();
        let a = prefactor(&sym, &sol, PrefactorMethod::Tangent, &opts()).unwrap();
        let b = prefactor(&sym, &sol, PrefactorMethod::ActionDerivatives, &opts()).unwrap();
        assert!(close(b, a, 1e-4), "{b} vs {a}");
    }

    #[test]
    fn jaynes_cummings_close_to_exact() {
        let spin = Spin::half();
        let spec = OperatorSpec::jaynes_cummings(1.0, 1.0, 1.0, 0.1);
        let sym = Symbol::new(&spec, spin, 1.0).unwrap();
        let bd = BoundaryData::new(c(0.5, 0.3), c(0.4, -0.2), c(0.5, 0.2), c(0.3, -0.3), spin, 1.0, 0.5).unwrap();
        let (r, _) = propagate(&sym, &bd, None, &opts()).unwrap();
        let exact = exact_propagator(&spec, &HilbertConfig::for_boundary(&bd, 6), &bd, ReferenceMethod::Auto).unwrap();
        assert!(close(r.k, exact, 0.05), "{} vs {}", r.k, exact);
    }

    #[test]
    fn spin_half_constant_field() {
        let spin = Spin::half();
        let spec = OperatorSpec::harmonic(1.0, 1.0).extend(&OperatorSpec::spin_precession(1.0, 0.8));
        let bd = BoundaryData::new(c(0.5, 0.3), c(0.4, -0.2), c(0.3, 0.6), c(-0.3, 0.5), spin, 1.0, 1.2).unwrap();
        let f = spin_half_factorized(&spec, &bd, &opts()).unwrap();
        let sep = separable_assemble(&spec, &bd, &opts()).unwrap();
        assert!(close(f.k, sep.result.k, 1e-8));
        let exact = exact_propagator(&spec, &HilbertConfig::for_boundary(&bd, 6), &bd, ReferenceMethod::Auto).unwrap();
        assert!(close(f.k, exact, 1e-8));
        assert!(matches!(
            spin_half_factorized(
                &OperatorSpec::new(vec![OperatorTerm::new(1.0, 0, 0, 1, 0, 1)]),
                &bd,
                &opts()
            ),
            Err(Error::NotSpinHalfLinear(_))
        ));
    }

    #[test]
    fn large_spin_deviation_decreases() {
        let spins: Vec<Spin> = [10.0, 20.0].iter().map(|&j| Spin::new(j).unwrap()).collect();
        let rows = large_spin_compare(
            |s| linear_spin_family(s, 1.0, 1.0, 0.3),
            &displaced_oscillator(1.0, 1.0, 0.3),
            &spins,
            c(0.4, 0.2),
            c(0.1, -0.3),
            1.0,
            1.0,
            &opts(),
        )
        .unwrap();
        assert!(rows[1].deviation < rows[0].deviation);
        let at_zero = large_spin_compare(
            |s| linear_spin_family(s, 1.0, 1.0, 0.3),
            &displaced_oscillator(1.0, 1.0, 0.3),
            &spins,
            c(0.0, 0.0),
            c(0.0, 0.0),
            1.0,
            0.0,
            &opts(),
        )
        .unwrap();
        assert!(at_zero.iter().all(|r| (r.k_spin - c(1.0, 0.0)).norm() < 1e-14));
    }

    fn label() -> impl Strategy<Value = Complex64> {
        (-0.8f64..0.8, -0.8f64..0.8).prop_map(|(a, b)| c(a, b))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn semiclassical_transpose_symmetry(z1 in label(), s1 in label(), z2 in label(), s2 in label()) {
            let spin = Spin::new(1.0).unwrap();
            let sym = Symbol::new(&OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.2), spin, 1.0).unwrap();
            let bd = BoundaryData::new(z1, s1, z2, s2, spin, 1.0, 0.7).unwrap();
            let (a, _) = propagate(&sym, &bd, None, &opts()).unwrap();
            let (b, _) = propagate(&sym, &bd.transposed(), None, &opts()).unwrap();
            prop_assert!(close(a.k, b.k, 1e-6), "{} vs {}", a.k, b.k);
            prop_assert!(a.contributing && b.contributing);
            prop_assert!(a.k.norm() <= 1.0 + 1e-6);
        }
    }
}
