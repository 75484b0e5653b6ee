//! Exact quantum propagators on truncated `Fock (x) Spin` spaces and the
//! exact spin-1/2 propagator in a prescribed (possibly complex) field.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ode::{self, OdeOptions};
use crate::shooting::BoundaryData;
use crate::states::{self, fock_vector_checked, spin_vector, Spin, DEFAULT_TAIL_THRESHOLD};
use crate::symbols::{matrix_rep, OperatorSpec};

/// Truncation of the exact reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HilbertConfig {
    pub n_max: usize,
    pub spin: Spin,
    pub hbar: f64,
    pub tail_threshold: f64,
}

impl HilbertConfig {
    pub fn new(n_max: usize, spin: Spin, hbar: f64) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        Ok(HilbertConfig {
            n_max,
            spin,
            hbar,
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
        })
    }

    /// Smallest truncation meeting the tail threshold for both canonical
    /// labels, with `margin` extra levels.
    pub fn for_boundary(bd: &BoundaryData, margin: usize) -> Self {
        let need = states::required_n_max(bd.z_initial, DEFAULT_TAIL_THRESHOLD * 1e-2)
            .max(states::required_n_max(bd.z_final(), DEFAULT_TAIL_THRESHOLD * 1e-2));
        HilbertConfig {
            n_max: (need + margin).max(1),
            spin: bd.spin,
            hbar: bd.hbar,
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
        }
    }

    pub fn dim(&self) -> usize {
        (self.n_max + 1) * self.spin.dim()
    }
}

/// How the exact propagator applies `exp(-i H T / hbar)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMethod {
    /// Matrix exponential up to dimension [`EXPM_MAX_DIM`], state evolution above.
    #[default]
    Auto,
    Expm,
    StateEvolution,
}

pub const EXPM_MAX_DIM: usize = 4000;

fn product_state(z: Complex64, s: Complex64, cfg: &HilbertConfig) -> Result<DVector<Complex64>> {
    let f = fock_vector_checked(z, cfg.n_max, cfg.tail_threshold)?;
    let sv = spin_vector(s, cfg.spin);
    Ok(DVector::from_iterator(
        cfg.dim(),
        f.coeffs.iter().flat_map(|a| sv.iter().map(move |b| a * b)),
    ))
}

/// `<z'', s''| exp(-i H T / hbar) |z', s'>`.
pub fn exact_propagator(
    spec: &OperatorSpec,
    cfg: &HilbertConfig,
    bd: &BoundaryData,
    method: ReferenceMethod,
) -> Result<Complex64> {
    if cfg.spin != bd.spin {
        return Err(Error::InvalidArgument(
            "reference spin differs from boundary spin".into(),
        ));
    }
    if cfg.n_max < spec.max_boson_power() as usize {
        return Err(Error::InvalidArgument(format!(
            "n_max = {} below the largest boson power {}",
            cfg.n_max,
            spec.max_boson_power()
        )));
    }
    let ket = product_state(bd.z_initial, bd.s_initial, cfg)?;
    let bra = product_state(bd.z_final(), bd.s_final(), cfg)?;
    if bd.time == 0.0 || spec.terms.is_empty() {
        return Ok(bra.dotc(&ket));
    }
    let h = matrix_rep(spec, cfg.spin, cfg.n_max);
    let scale = Complex64::new(0.0, -bd.time / cfg.hbar);
    let use_expm = match method {
        ReferenceMethod::Auto => cfg.dim() <= EXPM_MAX_DIM,
        ReferenceMethod::Expm => true,
        ReferenceMethod::StateEvolution => false,
    };
    let evolved = if use_expm {
        (h * scale).exp() * ket
    } else {
        evolve_state(&h, scale, ket)
    };
    Ok(bra.dotc(&evolved))
}

/// `exp(A) psi` for `A = scale * h` by Taylor series over substeps with
/// `|A| / substeps <= 1/2`.
fn evolve_state(h: &DMatrix<Complex64>, scale: Complex64, mut psi: DVector<Complex64>) -> DVector<Complex64> {
    let norm_inf = h
        .row_iter()
        .map(|r| r.iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
        * scale.norm();
    let substeps = (2.0 * norm_inf).ceil().max(1.0) as usize;
    let a = h * (scale / substeps as f64);
    for _ in 0..substeps {
        let mut term = psi.clone();
        let mut acc = psi.clone();
        for k in 1..200 {
            term = &a * term / Complex64::new(k as f64, 0.0);
            acc += &term;
            if term.norm() <= 1e-17 * acc.norm() {
                break;
            }
        }
        psi = acc;
    }
    psi
}

/// Exact spin-1/2 evolution operator history.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinHalfEvolution {
    pub times: Vec<f64>,
    /// `W(t)` in the basis `(up, down)`.
    pub w: Vec<Matrix2<Complex64>>,
}

impl SpinHalfEvolution {
    pub fn final_w(&self) -> Matrix2<Complex64> {
        *self.w.last().expect("evolution has at least one sample")
    }
}

/// Integrates `dW/dt = -(i/2) sigma . C(t) W`, `W(0) = 1`, for a field `C`
/// given as a function of time (`C` in frequency units).
pub fn spin_half_evolution<F>(field: F, t_final: f64, opts: &OdeOptions) -> Result<SpinHalfEvolution>
where
    F: Fn(f64) -> [Complex64; 3],
{
    let i = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut times = vec![0.0];
    let mut ws = vec![Matrix2::identity()];
    let y0 = [one, zero, zero, one];
    let to_matrix = |y: &[Complex64]| Matrix2::new(y[0], y[1], y[2], y[3]);
    ode::integrate(
        |t, y, dy| {
            let [c1, c2, c3] = field(t);
            // sigma . C = [[c3, c1 - i c2], [c1 + i c2, -c3]]
            let a = Matrix2::new(c3, c1 - i * c2, c1 + i * c2, -c3) * (-0.5 * i);
            let d = a * to_matrix(y);
            dy.copy_from_slice(&[d[(0, 0)], d[(0, 1)], d[(1, 0)], d[(1, 1)]]);
            Ok(())
        },
        0.0,
        t_final,
        &y0,
        opts,
        |step| {
            times.push(step.t1());
            ws.push(to_matrix(step.y1));
            Ok(())
        },
    )?;
    Ok(SpinHalfEvolution { times, w: ws })
}

/// Spin-1/2 propagator `<s''| W |s'>` assembled from `W` (basis `(up, down)`,
/// `|s> ~ |down> + s |up>`).
pub fn spin_half_amplitude(w: &Matrix2<Complex64>, s_initial: Complex64, s_final_conj: Complex64) -> Complex64 {
    let num = w[(1, 1)] + w[(1, 0)] * s_initial + w[(0, 1)] * s_final_conj + w[(0, 0)] * s_final_conj * s_initial;
    num / ((1.0 + s_final_conj.norm_sqr()) * (1.0 + s_initial.norm_sqr())).sqrt()
}

/// Exact spin-1/2 propagator in the field `C(t)`.
pub fn spin_half_exact<F>(
    field: F,
    s_initial: Complex64,
    s_final_conj: Complex64,
    t_final: f64,
    opts: &OdeOptions,
) -> Result<(Complex64, SpinHalfEvolution)>
where
    F: Fn(f64) -> [Complex64; 3],
{
    let ev = spin_half_evolution(field, t_final, opts)?;
    Ok((spin_half_amplitude(&ev.final_w(), s_initial, s_final_conj), ev))
}
