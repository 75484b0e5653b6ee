//! Dormand-Prince 5(4) integrator for complex first-order systems, with
//! free continuous extension and a fixed-step mode.

use num_complex::Complex64;

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Failure once any of the first `bound_components` entries exceeds this.
    pub divergence_bound: f64,
    pub bound_components: usize,
    /// `Some(n)`: take exactly `n` uniform steps without error control.
    pub fixed_steps: Option<usize>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 1_000_000,
            divergence_bound: 1e8,
            bound_components: usize::MAX,
            fixed_steps: None,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol * 1e-2,
            ..Default::default()
        }
    }

    pub fn fixed(steps: usize) -> Self {
        OdeOptions {
            fixed_steps: Some(steps.max(1)),
            ..Default::default()
        }
    }
}

/// One accepted step with its continuous extension.
pub struct Step<'a> {
    pub t0: f64,
    pub h: f64,
    pub y0: &'a [Complex64],
    pub y1: &'a [Complex64],
    rcont: &'a [Vec<Complex64>; 5],
}

impl Step<'_> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Coefficients `r0..r4` of the interpolant for component `i`, in the form
    /// `r0 + th (r1 + (1-th)(r2 + th (r3 + (1-th) r4)))`, `th = (t - t0)/h`.
    pub fn coefficients(&self, i: usize) -> [Complex64; 5] {
        std::array::from_fn(|k| self.rcont[k][i])
    }

    /// Fourth-order interpolant at `t` in `[t0, t0 + h]`.
    pub fn interpolate(&self, t: f64, out: &mut [Complex64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        for (i, o) in out.iter_mut().enumerate() {
            let r = |k: usize| self.rcont[k][i];
            *o = r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))));
        }
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1`, calling `on_step` after each
/// accepted step. Returns the final state.
pub fn integrate<F, S>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[Complex64],
    opts: &OdeOptions,
    mut on_step: S,
) -> Result<Vec<Complex64>>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]) -> Result<()>,
    S: FnMut(&Step<'_>) -> Result<()>,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t1 == t0 {
        return Ok(y);
    }
    let span = t1 - t0;
    let dir = span.signum();
    let zero = Complex64::new(0.0, 0.0);
    let mut k: [Vec<Complex64>; 7] = std::array::from_fn(|_| vec![zero; n]);
    let mut rcont: [Vec<Complex64>; 5] = std::array::from_fn(|_| vec![zero; n]);
    let mut ytmp = vec![zero; n];
    let mut ynew = vec![zero; n];
    let mut t = t0;

    f(t, &y, &mut k[0])?;
    let mut h = match opts.fixed_steps {
        Some(steps) => span / steps as f64,
        None => initial_step(&mut f, t, &y, &k[0], span, opts)?,
    };
    let mut steps = 0usize;
    let mut fixed_done = 0usize;
    let mut last_rejected = false;

    loop {
        let remaining = t1 - t;
        let last = match opts.fixed_steps {
            Some(total) => fixed_done + 1 == total,
            None => (h - remaining) * dir >= -1e-14 * span.abs(),
        };
        if last {
            h = remaining;
        }
        if steps >= opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        if (h.abs()) < 1e-14 * t.abs().max(span.abs()) {
            return Err(Error::StepUnderflow { t });
        }
        steps += 1;

        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (a, ks) in A[s].iter().zip(k.iter()).take(s) {
                    if *a != 0.0 {
                        acc += ks[i] * (h * a);
                    }
                }
                ytmp[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            if s == 6 {
                ynew.copy_from_slice(&ytmp);
            }
            f(t + C[s] * h, &ytmp, &mut tail[0])?;
        }
        // ynew holds the 5th-order solution (row 7 of A); k[6] = f(t+h, ynew).

        let err = if opts.fixed_steps.is_some() {
            0.0
        } else {
            let mut acc = 0.0;
            for i in 0..n {
                let mut e = zero;
                for (s, es) in E.iter().enumerate() {
                    if *es != 0.0 {
                        e += k[s][i] * (h * es);
                    }
                }
                let sc_re = opts.atol + opts.rtol * y[i].re.abs().max(ynew[i].re.abs());
                let sc_im = opts.atol + opts.rtol * y[i].im.abs().max(ynew[i].im.abs());
                acc += (e.re / sc_re).powi(2) + (e.im / sc_im).powi(2);
            }
            (acc / (2 * n) as f64).sqrt()
        };
        if !err.is_finite() {
            if opts.fixed_steps.is_some() {
                return Err(Error::Divergence {
                    t,
                    magnitude: f64::INFINITY,
                });
            }
            h *= 0.2;
            last_rejected = true;
            continue;
        }

        if err <= 1.0 {
            for i in 0..n {
                let dy = ynew[i] - y[i];
                let mut d = zero;
                for (s, ds) in D.iter().enumerate() {
                    if *ds != 0.0 {
                        d += k[s][i] * ds;
                    }
                }
                rcont[0][i] = y[i];
                rcont[1][i] = dy;
                rcont[2][i] = k[0][i] * h - dy;
                rcont[3][i] = dy - k[6][i] * h - rcont[2][i];
                rcont[4][i] = d * h;
            }
            on_step(&Step {
                t0: t,
                h,
                y0: &y,
                y1: &ynew,
                rcont: &rcont,
            })?;
            t = if last { t1 } else { t + h };
            std::mem::swap(&mut y, &mut ynew);
            let (first, rest) = k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);

            let magnitude = y
                .iter()
                .take(opts.bound_components)
                .map(|x| x.norm())
                .fold(0.0, f64::max);
            if magnitude > opts.divergence_bound || !magnitude.is_finite() {
                return Err(Error::Divergence { t, magnitude });
            }
            fixed_done += 1;
            if last {
                return Ok(y);
            }
            if opts.fixed_steps.is_none() {
                let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 10.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                h *= fac;
            }
            last_rejected = false;
        } else {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            last_rejected = true;
        }
    }
}

fn initial_step<F>(f: &mut F, t: f64, y: &[Complex64], f0: &[Complex64], span: f64, opts: &OdeOptions) -> Result<f64>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]) -> Result<()>,
{
    let n = y.len();
    let norm = |v: &[Complex64]| {
        let s: f64 = v
            .iter()
            .zip(y)
            .map(|(x, y0)| {
                let sc = opts.atol + opts.rtol * y0.norm();
                (x.norm() / sc).powi(2)
            })
            .sum();
        (s / n as f64).sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span.abs());
    let y1: Vec<Complex64> = y.iter().zip(f0).map(|(a, b)| a + b * (h0 * span.signum())).collect();
    let mut f1 = vec![Complex64::new(0.0, 0.0); n];
    f(t + h0 * span.signum(), &y1, &mut f1)?;
    let diff: Vec<Complex64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span.abs()) * span.signum())
}
