//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semispin::dynamics::{self, PhasePoint};
use semispin::ode::OdeOptions;
use semispin::oracle::{self, MeasureConvention};
use semispin::reference::{exact_propagator, HilbertConfig, ReferenceMethod};
use semispin::semiclassical::{self, PrefactorMethod};
use semispin::shooting::{self, BoundaryData, ShootingOptions};
use semispin::states::{overlap_canonical, overlap_spin, Spin};
use semispin::symbols::{OperatorSpec, Symbol};
use semispin::Result;

type C = Complex64;

const C1_REL: f64 = 1e-7;
const C1_SECONDS: f64 = 1.0;
const C2_REL: f64 = 1e-7;
const C3_REL: f64 = 1e-8;
const C4_REL: f64 = 1e-5;
const C4_STEP: f64 = 1e-6;
const C5_REL: f64 = 1e-4;
const C6_RATIO: f64 = 0.05;
const C6_FLOOR: f64 = 1e-9;
const C6_SECONDS: f64 = 30.0;
const C8_HALVING: f64 = 0.3;
const C8_SLOPE: f64 = 0.3;
const C8_SECONDS: f64 = 60.0;
const C9_TOL: f64 = 1e-10;
const C10_REL: f64 = 1e-12;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn disk(rng: &mut ChaCha8Rng, r_min: f64, r_max: f64) -> C {
    let r = (r_min * r_min + (r_max * r_max - r_min * r_min) * rng.random::<f64>()).sqrt();
    C::from_polar(r, 2.0 * PI * rng.random::<f64>())
}

fn rel(a: C, b: C) -> f64 {
    (a - b).norm() / b.norm()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn exact(spec: &OperatorSpec, bd: &BoundaryData, margin: usize) -> Result<C> {
    exact_propagator(
        spec,
        &HilbertConfig::for_boundary(bd, margin),
        bd,
        ReferenceMethod::Auto,
    )
}

fn quadratic_canonical() -> Result<Outcome> {
    let spin = Spin::new(1.0)?;
    let spec = OperatorSpec::harmonic(1.0, 1.0);
    let sym = Symbol::new(&spec, spin, 1.0)?;
    let (mut worst, mut slowest) = (0.0f64, 0.0f64);
    for t in [0.5, 1.0, 2.0] {
        let bd = BoundaryData::new(c(1.0, 0.5), c(0.2, 0.0), c(0.3, -0.2), c(0.2, 0.0), spin, 1.0, t)?;
        let start = Instant::now();
        let (r, _) = semiclassical::propagate(&sym, &bd, None, &ShootingOptions::default())?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        worst = worst.max(rel(r.k, exact(&spec, &bd, 10)?));
    }
    outcome(
        worst <= C1_REL && slowest < C1_SECONDS,
        format!("max rel err {worst:.2e} (<= {C1_REL:.0e}), slowest point {slowest:.3} s (< {C1_SECONDS} s)"),
    )
}

fn linear_spin() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = OperatorSpec::spin_precession(1.0, 1.0);
    let mut worst = 0.0f64;
    let mut count = 0;
    for j in [0.5, 1.0, 5.0] {
        let spin = Spin::new(j)?;
        let sym = Symbol::new(&spec, spin, 1.0)?;
        for t in [0.5, 2.0] {
            for _ in 0..4 {
                let bd = BoundaryData::new(
                    disk(&mut rng, 0.0, 1.0),
                    disk(&mut rng, 0.0, 2.0),
                    disk(&mut rng, 0.0, 1.0),
                    disk(&mut rng, 0.0, 2.0),
                    spin,
                    1.0,
                    t,
                )?;
                let (r, _) = semiclassical::propagate(&sym, &bd, None, &ShootingOptions::default())?;
                worst = worst.max(rel(r.k, exact(&spec, &bd, 4)?));
                count += 1;
            }
        }
    }
    outcome(
        worst <= C2_REL,
        format!("{count} cases, max rel err {worst:.2e} (<= {C2_REL:.0e})"),
    )
}

fn separable() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spin = Spin::new(1.0)?;
    let spec = OperatorSpec::harmonic(1.0, 1.0).extend(&OperatorSpec::spin_precession(1.0, 1.0));
    let sym = Symbol::new(&spec, spin, 1.0)?;
    let opts = ShootingOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let t = rng.random_range(0.3..2.0);
        let bd = BoundaryData::new(
            disk(&mut rng, 0.0, 1.0),
            disk(&mut rng, 0.0, 1.5),
            disk(&mut rng, 0.0, 1.0),
            disk(&mut rng, 0.0, 1.5),
            spin,
            1.0,
            t,
        )?;
        let (full, _) = semiclassical::propagate(&sym, &bd, None, &opts)?;
        let sep = semiclassical::separable_assemble(&spec, &bd, &opts)?;
        worst = worst.max(rel(full.k, sep.k_canonical * sep.k_spin));
    }
    outcome(
        worst <= C3_REL,
        format!("20 sets, max rel err {worst:.2e} (<= {C3_REL:.0e})"),
    )
}

fn random_jc_boundary(rng: &mut ChaCha8Rng, spin: Spin) -> Result<BoundaryData> {
    BoundaryData::new(
        disk(rng, 0.2, 0.8),
        disk(rng, 0.2, 0.8),
        disk(rng, 0.2, 0.8),
        disk(rng, 0.2, 0.8),
        spin,
        1.0,
        1.0,
    )
}

fn tight() -> ShootingOptions {
    ShootingOptions {
        tol: 1e-12,
        ode: OdeOptions::with_tol(1e-13),
        ..ShootingOptions::default()
    }
}

fn action_identities() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spin = Spin::new(1.0)?;
    let sym = Symbol::new(&OperatorSpec::jaynes_cummings(1.0, 1.0, 1.0, 0.2), spin, 1.0)?;
    let opts = tight();
    let hbar = 1.0;
    let j = spin.j();
    let mut worst = [0.0f64; 5];
    for _ in 0..10 {
        let bd = random_jc_boundary(&mut rng, spin)?;
        let sol = shooting::solve(&sym, &bd, None, &opts)?;
        let guess = Some(sol.unknowns());
        let s_of =
            |b: &BoundaryData| -> Result<C> { Ok(semiclassical::action(&shooting::solve(&sym, b, guess, &opts)?)) };
        let (p0, p1) = (sol.trajectory.initial(), sol.trajectory.terminal());
        let expected = [
            -C::i() * hbar * p0.z_bra,
            -C::i() * hbar * p1.z,
            -2.0 * C::i() * hbar * j * p0.s_bra / p0.chart_factor(),
            -2.0 * C::i() * hbar * j * p1.s / p1.chart_factor(),
            -semiclassical::energy(&sym, &sol)?,
        ];
        for (k, want) in expected.iter().enumerate() {
            let shifted = |h: f64| {
                let mut b = bd;
                match k {
                    0 => b.z_initial += h,
                    1 => b.z_final_conj += h,
                    2 => b.s_initial += h,
                    3 => b.s_final_conj += h,
                    _ => b.time += h,
                }
                b
            };
            let fd = (s_of(&shifted(C4_STEP))? - s_of(&shifted(-C4_STEP))?) / (2.0 * C4_STEP);
            worst[k] = worst[k].max(rel(fd, *want));
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    outcome(
        max <= C4_REL,
        format!(
            "10 solutions, max rel err per identity [u' {:.1e}, v'' {:.1e}, U' {:.1e}, V'' {:.1e}, T {:.1e}] (<= {C4_REL:.0e})",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn prefactor_forms() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spin = Spin::new(1.0)?;
    let sym = Symbol::new(&OperatorSpec::jaynes_cummings(1.0, 1.0, 1.0, 0.2), spin, 1.0)?;
    let opts = ShootingOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let bd = random_jc_boundary(&mut rng, spin)?;
        let sol = shooting::solve(&sym, &bd, None, &opts)?;
        let a = semiclassical::prefactor(&sym, &sol, PrefactorMethod::Tangent, &opts)?;
        let b = semiclassical::prefactor(&sym, &sol, PrefactorMethod::ActionDerivatives, &opts)?;
        worst = worst.max(rel(b, a));
    }
    outcome(
        worst <= C5_REL,
        format!("10 solutions, max rel err {worst:.2e} (<= {C5_REL:.0e})"),
    )
}

fn determinant_oracle() -> Result<Outcome> {
    let spin = Spin::new(1.0)?;
    let bd = BoundaryData::new(c(0.5, 0.3), c(0.4, -0.2), c(0.3, 0.6), c(-0.3, 0.5), spin, 1.0, 1.0)?;
    let ns = [250, 500, 1000, 2000];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, spec) in [
        ("harmonic", OperatorSpec::harmonic(1.0, 1.0)),
        ("JC", OperatorSpec::jaynes_cummings(1.0, 1.0, 1.0, 0.3)),
    ] {
        let sym = Symbol::new(&spec, spin, 1.0)?;
        let (_, sol) = semiclassical::propagate(&sym, &bd, None, &ShootingOptions::default())?;
        let mut devs = Vec::new();
        let mut slowest = 0.0f64;
        for &n in &ns {
            let start = Instant::now();
            let row = oracle::determinant_row(&sym, &sol, n, MeasureConvention::OnPath)?;
            slowest = slowest.max(start.elapsed().as_secs_f64());
            devs.push(row.deviation());
        }
        // monotone improvement, or already converged to the floor
        let monotone = devs.windows(2).all(|w| w[1] <= w[0] || w[1] < C6_FLOOR);
        let last = *devs.last().unwrap();
        pass &= monotone && last <= C6_RATIO && slowest < C6_SECONDS;
        parts.push(format!(
            "{name} |ratio-1| = [{}], monotone {monotone}, slowest {slowest:.2} s",
            devs.iter().map(|d| format!("{d:.1e}")).collect::<Vec<_>>().join(", ")
        ));
    }
    outcome(
        pass,
        format!("{} (<= {C6_RATIO} at N=2000, < {C6_SECONDS} s)", parts.join("; ")),
    )
}

fn spin_half_regime() -> Result<Outcome> {
    let spin = Spin::half();
    let (z0, zf0, s0, sf0, g0, t) = (c(0.5, 0.3), c(0.45, -0.25), c(0.4, -0.2), c(-0.3, 0.5), 0.3, 1.0);
    let mut errs = Vec::new();
    for hbar in [1.0, 0.5, 0.25] {
        let root = f64::sqrt(hbar);
        let spec = OperatorSpec::jaynes_cummings(hbar, 1.0, 1.0, g0 * root);
        let bd = BoundaryData::new(z0 / root, s0, zf0 / root, sf0, spin, hbar, t)?;
        let f = semiclassical::spin_half_factorized(&spec, &bd, &ShootingOptions::default())?;
        errs.push(rel(f.k, exact(&spec, &bd, 10)?));
    }
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    outcome(
        monotone,
        format!(
            "rel err at hbar = 1, 0.5, 0.25: [{}], strictly decreasing {monotone}",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn large_spin() -> Result<Outcome> {
    let start = Instant::now();
    let spins: Vec<Spin> = [10.0, 20.0, 40.0]
        .iter()
        .map(|&j| Spin::new(j))
        .collect::<Result<_>>()?;
    let rows = semiclassical::large_spin_compare(
        |s| semiclassical::linear_spin_family(s, 1.0, 1.0, 0.3),
        &semiclassical::displaced_oscillator(1.0, 1.0, 0.3),
        &spins,
        c(0.4, 0.2),
        c(0.1, -0.3),
        1.0,
        1.0,
        &ShootingOptions::default(),
    )?;
    let elapsed = start.elapsed().as_secs_f64();
    let d: Vec<f64> = rows.iter().map(|r| r.deviation).collect();
    let ratios = [d[0] / d[1], d[1] / d[2]];
    let halving = ratios.iter().all(|r| (r - 2.0).abs() <= 2.0 * C8_HALVING);
    // least-squares slope of ln d against ln j
    let xs: Vec<f64> = rows.iter().map(|r| r.j.ln()).collect();
    let ys: Vec<f64> = d.iter().map(|x| x.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let pass = halving && (slope + 1.0).abs() <= C8_SLOPE && elapsed < C8_SECONDS;
    outcome(
        pass,
        format!(
            "deviation at j = 10, 20, 40: [{:.2e}, {:.2e}, {:.2e}], ratios [{:.2}, {:.2}], slope {slope:.3}, {elapsed:.2} s",
            d[0], d[1], d[2], ratios[0], ratios[1]
        ),
    )
}

fn invariants() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let opts = OdeOptions::with_tol(C9_TOL);
    let (mut drift, mut conj) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let spin = Spin::from_twice(rng.random_range(1..=4))?;
        let g = rng.random_range(0.0..0.5);
        let sym = Symbol::new(&OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, g), spin, 1.0)?;
        let p0 = PhasePoint::real(disk(&mut rng, 0.0, 1.0), disk(&mut rng, 0.0, 1.5));
        let traj = dynamics::integrate(&sym, &p0, rng.random_range(0.5..3.0), &opts)?;
        let scale = traj.energies[0].norm().max(1.0);
        drift = drift.max(traj.energy_drift() / scale);
        conj = conj.max(traj.max_conjugacy_defect() / scale);
    }
    outcome(
        drift <= 100.0 * C9_TOL && conj <= 10.0 * C9_TOL,
        format!(
            "100 trajectories, max rel drift {drift:.2e} (<= {:.0e}), max conjugacy defect {conj:.2e} (<= {:.0e})",
            100.0 * C9_TOL,
            10.0 * C9_TOL
        ),
    )
}

fn zero_time() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let spin = Spin::from_twice(rng.random_range(1..=6))?;
        let sym = Symbol::new(&OperatorSpec::jaynes_cummings(1.0, 1.0, 0.8, 0.3), spin, 1.0)?;
        let bd = BoundaryData::new(
            disk(&mut rng, 0.0, 1.5),
            disk(&mut rng, 0.0, 2.0),
            disk(&mut rng, 0.0, 1.5),
            disk(&mut rng, 0.0, 2.0),
            spin,
            1.0,
            0.0,
        )?;
        let (r, _) = semiclassical::propagate(&sym, &bd, None, &ShootingOptions::default())?;
        let ov = overlap_canonical(bd.z_final(), bd.z_initial) * overlap_spin(bd.s_final(), bd.s_initial, spin);
        worst = worst.max(rel(r.k, ov));
    }
    outcome(
        worst <= C10_REL,
        format!("50 sets, max rel err {worst:.2e} (<= {C10_REL:.0e})"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("quadratic canonical generator is exact", quadratic_canonical),
        ("linear spin generator is exact", linear_spin),
        ("separable factorization", separable),
        ("action derivative identities", action_identities),
        ("prefactor forms agree", prefactor_forms),
        ("discrete determinant oracle", determinant_oracle),
        ("spin-1/2 regime improves as hbar shrinks", spin_half_regime),
        ("large-spin convergence", large_spin),
        ("energy and conjugacy invariants", invariants),
        ("zero-time identity", zero_time),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2}: {name}: {detail} [{secs:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
