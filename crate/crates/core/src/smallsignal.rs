//! Linearization, eigen-analysis, participation factors and dominant-mode
//! selection.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{ExternalArea, FullModel, Model};
use crate::error::{Error, Result};
use crate::netsolve::Snapshot;
use crate::sysmodel::SLOTS_PER_GEN;

pub type CMatrix = DMatrix<Complex64>;

/// Largest `|f(x0, u0)|` accepted as an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;

/// `dx = A dx + B du`, `dy = C dx + D du` about `(x0, u0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub x0: Vec<f64>,
    pub u0: Vec<f64>,
}

impl LinearModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difference {
    Central,
    Forward,
}

/// Step used for state or input `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Finite-difference Jacobians of `eval(x, u, f, y)`, which writes the
/// derivative `f` (length of `x`) and `n_out` outputs `y`.
pub fn linearize_fn<F>(
    eval: F,
    x0: &[f64],
    u0: &[f64],
    n_out: usize,
    scheme: Difference,
) -> Result<LinearModel>
where
    F: Fn(&[f64], &[f64], &mut [f64], &mut [f64]) -> Result<()>,
{
    let n = x0.len();
    let m = u0.len();
    let mut f0 = vec![0.0; n];
    let mut y0 = vec![0.0; n_out];
    eval(x0, u0, &mut f0, &mut y0)?;
    let residual = f0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(residual <= EQUILIBRIUM_TOL) {
        return Err(Error::NotAnEquilibrium { residual });
    }

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut c = DMatrix::zeros(n_out, n);
    let mut d = DMatrix::zeros(n_out, m);
    let mut fp = vec![0.0; n];
    let mut yp = vec![0.0; n_out];
    let mut fm = vec![0.0; n];
    let mut ym = vec![0.0; n_out];
    let mut column = |pert: &dyn Fn(f64) -> (Vec<f64>, Vec<f64>),
                      h: f64,
                      fcol: &mut dyn FnMut(usize, f64),
                      ycol: &mut dyn FnMut(usize, f64)|
     -> Result<()> {
        let (xp, up) = pert(h);
        eval(&xp, &up, &mut fp, &mut yp)?;
        match scheme {
            Difference::Central => {
                let (xm, um) = pert(-h);
                eval(&xm, &um, &mut fm, &mut ym)?;
                for i in 0..n {
                    fcol(i, (fp[i] - fm[i]) / (2.0 * h));
                }
                for i in 0..n_out {
                    ycol(i, (yp[i] - ym[i]) / (2.0 * h));
                }
            }
            Difference::Forward => {
                for i in 0..n {
                    fcol(i, (fp[i] - f0[i]) / h);
                }
                for i in 0..n_out {
                    ycol(i, (yp[i] - y0[i]) / h);
                }
            }
        }
        Ok(())
    };
    for k in 0..n {
        let h = fd_step(x0[k]);
        let pert = |s: f64| {
            let mut x = x0.to_vec();
            x[k] += s;
            (x, u0.to_vec())
        };
        let (ac, cc) = (&mut a, &mut c);
        column(&pert, h, &mut |i, v| ac[(i, k)] = v, &mut |i, v| {
            cc[(i, k)] = v
        })?;
    }
    for k in 0..m {
        let h = fd_step(u0[k]);
        let pert = |s: f64| {
            let mut u = u0.to_vec();
            u[k] += s;
            (x0.to_vec(), u)
        };
        let (bc, dc) = (&mut b, &mut d);
        column(&pert, h, &mut |i, v| bc[(i, k)] = v, &mut |i, v| {
            dc[(i, k)] = v
        })?;
    }
    Ok(LinearModel {
        a,
        b,
        c,
        d,
        x0: x0.to_vec(),
        u0: u0.to_vec(),
    })
}

/// Linearizes the whole-system model (no inputs, no outputs).
pub fn linearize_full(model: &FullModel, x0: &[f64], scheme: Difference) -> Result<LinearModel> {
    linearize_fn(
        |x, _u, f, _y| model.derivative(Snapshot::PreFault, x, f),
        x0,
        &[],
        0,
        scheme,
    )
}

/// Linearizes the external area with tie voltages as inputs and boundary
/// current injections as outputs.
pub fn linearize_external(
    area: &ExternalArea,
    x0: &[f64],
    u0: &[f64],
    scheme: Difference,
) -> Result<LinearModel> {
    linearize_fn(
        |x, u, f, y| area.evaluate(x, u, f, y),
        x0,
        u0,
        area.n_outputs(),
        scheme,
    )
}

/// Eigenvalues with right (`phi`, columns) and left (`psi`, rows)
/// eigenvectors, scaled so that `psi * phi = I`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalData {
    pub eigenvalues: Vec<Complex64>,
    #[serde(skip)]
    pub phi: CMatrix,
    #[serde(skip)]
    pub psi: CMatrix,
    pub normalized: bool,
}

impl ModalData {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn frequency(&self, i: usize) -> f64 {
        self.eigenvalues[i].im.abs() / (2.0 * std::f64::consts::PI)
    }

    pub fn damping(&self, i: usize) -> f64 {
        let l = self.eigenvalues[i];
        if l.norm() == 0.0 {
            1.0
        } else {
            -l.re / l.norm()
        }
    }

    /// `max_i |A phi_i - lambda_i phi_i|_inf`.
    pub fn residual(&self, a: &DMatrix<f64>) -> f64 {
        let ac = a.map(|v| Complex64::new(v, 0.0));
        let r = &ac * &self.phi
            - &self.phi * CMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone()));
        r.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// `|psi phi - I|_inf` (elementwise max).
    pub fn biorthogonality(&self) -> f64 {
        let p = &self.psi * &self.phi;
        let n = p.nrows();
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                m = m.max((p[(i, j)] - target).norm());
            }
        }
        m
    }
}

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Full eigen-decomposition of a real square matrix via the complex Schur
/// form. Conjugate pairs are made exactly conjugate, real eigenvalues get
/// real eigenvectors, and modes are ordered by decreasing real part, then
/// decreasing imaginary part.
pub fn eigensolve(a: &DMatrix<f64>) -> Result<ModalData> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}",
            n,
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::ConvergenceFailure);
    }
    if n == 0 {
        return Ok(ModalData {
            eigenvalues: Vec::new(),
            phi: CMatrix::zeros(0, 0),
            psi: CMatrix::zeros(0, 0),
            normalized: true,
        });
    }
    let norm = inf_norm(a).max(f64::MIN_POSITIVE);
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let schur = nalgebra::Schur::try_new(ac, f64::EPSILON, 1000 * n.max(10))
        .ok_or(Error::ConvergenceFailure)?;
    let (q, t) = schur.unpack();
    let lambda: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();

    // eigenvectors of the triangular factor by back substitution
    let floor = f64::EPSILON * norm;
    let mut v = CMatrix::zeros(n, n);
    for i in 0..n {
        v[(i, i)] = Complex64::new(1.0, 0.0);
        for k in (0..i).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for j in k + 1..=i {
                s += t[(k, j)] * v[(j, i)];
            }
            let mut den = t[(k, k)] - lambda[i];
            if den.norm() < floor {
                den = Complex64::new(floor, 0.0);
            }
            v[(k, i)] = -s / den;
        }
    }
    let raw = q * v;

    // pair conjugates and fix phases
    let tol = 1e-8 * norm.max(1.0);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        lambda[y]
            .re
            .total_cmp(&lambda[x].re)
            .then(lambda[y].im.total_cmp(&lambda[x].im))
    });
    let mut used = vec![false; n];
    let mut eig = Vec::with_capacity(n);
    let mut cols: Vec<DVector<Complex64>> = Vec::with_capacity(n);
    let normalize = |c: DVector<Complex64>| -> DVector<Complex64> {
        let (imax, _) = c.iter().enumerate().fold((0, -1.0), |(bi, bv), (i, z)| {
            if z.norm() > bv {
                (i, z.norm())
            } else {
                (bi, bv)
            }
        });
        let phase = c[imax].conj() / c[imax].norm();
        let c = c * phase;
        let nrm = c.norm();
        c / Complex64::new(nrm, 0.0)
    };
    let mut modes: Vec<(Complex64, DVector<Complex64>, bool)> = Vec::with_capacity(n);
    for &i in &order {
        if used[i] {
            continue;
        }
        used[i] = true;
        let l = lambda[i];
        if l.im.abs() <= tol {
            let c = normalize(raw.column(i).into_owned()).map(|z| Complex64::new(z.re, 0.0));
            let nrm = c.norm();
            modes.push((
                Complex64::new(l.re, 0.0),
                c / Complex64::new(nrm, 0.0),
                false,
            ));
            continue;
        }
        // partner: closest unused eigenvalue to conj(l)
        let partner = (0..n).filter(|&j| !used[j]).min_by(|&x, &y| {
            (lambda[x] - l.conj())
                .norm()
                .total_cmp(&(lambda[y] - l.conj()).norm())
        });
        let Some(j) = partner else {
            return Err(Error::ConvergenceFailure);
        };
        if (lambda[j] - l.conj()).norm() > 1e-6 * norm.max(1.0) {
            return Err(Error::ConvergenceFailure);
        }
        used[j] = true;
        let pos = if l.im > 0.0 { i } else { j };
        let avg = Complex64::new(
            0.5 * (l.re + lambda[j].re),
            0.5 * (l.im.abs() + lambda[j].im.abs()),
        );
        let c = normalize(raw.column(pos).into_owned());
        modes.push((avg, c, true));
    }
    for (l, c, pair) in modes {
        if pair {
            eig.push(l);
            cols.push(c.clone());
            eig.push(l.conj());
            cols.push(c.map(|z| z.conj()));
        } else {
            eig.push(l);
            cols.push(c);
        }
    }
    let phi = CMatrix::from_columns(&cols);
    let psi = phi.clone().try_inverse().ok_or(Error::ConvergenceFailure)?;
    if phi
        .iter()
        .chain(psi.iter())
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::ConvergenceFailure);
    }
    let data = ModalData {
        eigenvalues: eig,
        phi,
        psi,
        normalized: true,
    };
    if data.residual(a) > 1e-6 * norm.max(1.0) {
        return Err(Error::ConvergenceFailure);
    }
    Ok(data)
}

/// Participation factors `p_ki = phi_ki psi_ik` and derived tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfTable {
    /// `raw[(k, i)]`, state `k`, mode `i`.
    #[serde(skip)]
    pub raw: CMatrix,
    pub magnitude: DMatrix<f64>,
    /// Per-mode max-normalized magnitudes.
    pub normalized: DMatrix<f64>,
    /// `per_gen[(g, i)]`: max of `normalized` over the nine states of
    /// generator `g`.
    pub per_gen: DMatrix<f64>,
}

/// Deviation allowed in `psi_i phi_i = 1` before rejecting the input.
pub const NORMALIZATION_TOL: f64 = 1e-7;

pub fn participation_factors(modal: &ModalData) -> Result<PfTable> {
    let n = modal.len();
    for i in 0..n {
        let s: Complex64 = (0..n).map(|k| modal.psi[(i, k)] * modal.phi[(k, i)]).sum();
        let dev = (s - Complex64::new(1.0, 0.0)).norm();
        if !(dev <= NORMALIZATION_TOL) {
            return Err(Error::NotNormalized {
                mode: i,
                deviation: dev,
            });
        }
    }
    let raw = CMatrix::from_fn(n, n, |k, i| modal.phi[(k, i)] * modal.psi[(i, k)]);
    let magnitude = raw.map(|z| z.norm());
    let mut normalized = magnitude.clone();
    for i in 0..n {
        let mut col = normalized.column_mut(i);
        let mx = col.max();
        if mx > 0.0 {
            col /= mx;
            // exact 1 at the maximum, whatever the rounding in the division
            let imax = col.imax();
            col[imax] = 1.0;
        }
    }
    let n_gen = n / SLOTS_PER_GEN;
    let per_gen = DMatrix::from_fn(n_gen, n, |g, i| {
        (0..SLOTS_PER_GEN)
            .map(|s| normalized[(SLOTS_PER_GEN * g + s, i)])
            .fold(0.0, f64::max)
    });
    Ok(PfTable {
        raw,
        magnitude,
        normalized,
        per_gen,
    })
}

/// How the scalar excitation of a mode by an initial deviation is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Excitation {
    /// `|psi_i . dx0| * max_k |phi_ki|`.
    #[default]
    PeakObservability,
    /// `|psi_i . dx0|`.
    ModalAmplitude,
    /// `max_k |phi_ki psi_i . dx0|` with `phi` scaled to unit norm.
    PeakParticipation,
}

impl Excitation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "peak-observability" => Ok(Excitation::PeakObservability),
            "modal-amplitude" => Ok(Excitation::ModalAmplitude),
            "peak-participation" => Ok(Excitation::PeakParticipation),
            other => Err(Error::validation(
                "excitation",
                format!("unknown measure `{other}`"),
            )),
        }
    }
}

/// Excitation of every mode by `dx0`.
pub fn mode_excitation(modal: &ModalData, dx0: &[f64], measure: Excitation) -> Result<Vec<f64>> {
    let n = modal.len();
    if dx0.len() != n {
        return Err(Error::LengthMismatch {
            left: dx0.len(),
            right: n,
        });
    }
    Ok((0..n)
        .map(|i| {
            let amp: Complex64 = (0..n).map(|k| modal.psi[(i, k)] * dx0[k]).sum();
            let peak = (0..n).map(|k| modal.phi[(k, i)].norm()).fold(0.0, f64::max);
            let col_norm = (0..n)
                .map(|k| modal.phi[(k, i)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            match measure {
                Excitation::PeakObservability => amp.norm() * peak,
                Excitation::ModalAmplitude => amp.norm(),
                Excitation::PeakParticipation => {
                    amp.norm() * peak / col_norm.max(f64::MIN_POSITIVE)
                }
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominantMode {
    pub index: usize,
    pub eigenvalue: Complex64,
    pub z: f64,
    pub frequency: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominantModes {
    pub modes: Vec<DominantMode>,
}

/// Picks the `count` most excited oscillatory modes below `f_max` Hz.
/// Each conjugate pair is represented by its positive-frequency member.
pub fn select_dominant_modes(
    modal: &ModalData,
    dx0: &[f64],
    count: usize,
    f_max: f64,
    measure: Excitation,
) -> Result<DominantModes> {
    if count == 0 {
        return Err(Error::validation("count", "must be >= 1"));
    }
    let z = mode_excitation(modal, dx0, measure)?;
    let mut cand: Vec<usize> = (0..modal.len())
        .filter(|&i| modal.eigenvalues[i].im > 0.0 && modal.frequency(i) < f_max)
        .collect();
    if cand.is_empty() {
        return Err(Error::NoCandidates { f_max });
    }
    if cand.iter().all(|&i| z[i] == 0.0) {
        return Err(Error::NoExcitation);
    }
    cand.sort_by(|&x, &y| z[y].total_cmp(&z[x]).then(x.cmp(&y)));
    cand.truncate(count);
    Ok(DominantModes {
        modes: cand
            .into_iter()
            .map(|i| DominantMode {
                index: i,
                eigenvalue: modal.eigenvalues[i],
                z: z[i],
                frequency: modal.frequency(i),
                damping: modal.damping(i),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn diagonal_spectrum() {
        let a = dmatrix![-1.0, 0.0; 0.0, -2.0];
        let m = eigensolve(&a).unwrap();
        assert_eq!(
            m.eigenvalues,
            vec![Complex64::new(-1.0, 0.0), Complex64::new(-2.0, 0.0)]
        );
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((m.phi[(i, j)] - e).norm() < 1e-14);
                assert!((m.psi[(i, j)] - e).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn damped_oscillator() {
        let (w, z) = (4.0, 0.25);
        let a = dmatrix![0.0, 1.0; -w * w, -2.0 * z * w];
        let m = eigensolve(&a).unwrap();
        let l = m.eigenvalues[0];
        assert!((l - Complex64::new(-1.0, 15f64.sqrt())).norm() < 1e-12);
        assert_eq!(m.eigenvalues[1], l.conj());
        assert!((m.frequency(0) - 15f64.sqrt() / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((m.damping(0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn near_jordan_block() {
        let a = dmatrix![-1.0, 1.0; 1e-12, -1.0];
        match eigensolve(&a) {
            Ok(m) => assert!(m.residual(&a) <= 1e-8 * 2.0),
            Err(Error::ConvergenceFailure) => {}
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn linear_map_is_recovered() {
        let mat = dmatrix![-1.0, 2.0, 0.5; 0.0, -3.0, 1.0; 4.0, 0.0, -2.0];
        let lin = linearize_fn(
            |x, _u, f, _y| {
                for i in 0..3 {
                    f[i] = (0..3).map(|j| mat[(i, j)] * x[j]).sum();
                }
                Ok(())
            },
            &[0.0; 3],
            &[],
            0,
            Difference::Central,
        )
        .unwrap();
        assert!((lin.a - mat).amax() < 1e-9);
    }

    #[test]
    fn off_equilibrium_is_rejected() {
        let r = linearize_fn(
            |_x, _u, f, _y| {
                f[0] = 1e-3;
                Ok(())
            },
            &[0.0],
            &[],
            0,
            Difference::Central,
        );
        assert!(matches!(r, Err(Error::NotAnEquilibrium { .. })));
    }

    #[test]
    fn diagonal_participation_is_identity() {
        let a = dmatrix![-1.0, 0.0, 0.0; 0.0, -2.0, 0.0; 0.0, 0.0, -3.0];
        let pf = participation_factors(&eigensolve(&a).unwrap()).unwrap();
        assert_eq!(pf.normalized, DMatrix::identity(3, 3));
    }

    #[test]
    fn symmetric_swap_participates_equally() {
        let a = dmatrix![0.0, 1.0; 1.0, 0.0];
        let pf = participation_factors(&eigensolve(&a).unwrap()).unwrap();
        for v in pf.normalized.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        for i in 0..2 {
            let s: Complex64 = pf.raw.column(i).iter().sum();
            assert!((s - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn unnormalized_vectors_are_rejected() {
        let mut m = eigensolve(&dmatrix![-1.0, 0.0; 0.0, -2.0]).unwrap();
        m.psi[(0, 0)] = Complex64::new(2.0, 0.0);
        assert!(matches!(
            participation_factors(&m),
            Err(Error::NotNormalized { mode: 0, .. })
        ));
    }

    fn oscillators() -> DMatrix<f64> {
        // two decoupled damped oscillators at 0.5 Hz and 2 Hz, plus a real mode
        let osc = |f: f64, z: f64| {
            let w = 2.0 * std::f64::consts::PI * f;
            dmatrix![0.0, 1.0; -w * w, -2.0 * z * w]
        };
        let mut a = DMatrix::zeros(5, 5);
        a.view_mut((0, 0), (2, 2)).copy_from(&osc(0.5, 0.1));
        a.view_mut((2, 2), (2, 2)).copy_from(&osc(2.0, 0.1));
        a[(4, 4)] = -5.0;
        a
    }

    #[test]
    fn aligned_deviation_excites_one_mode() {
        let a = dmatrix![-1.0, 0.5; 0.0, -3.0];
        let m = eigensolve(&a).unwrap();
        let dx0: Vec<f64> = m.phi.column(1).iter().map(|z| z.re).collect();
        let z = mode_excitation(&m, &dx0, Excitation::PeakObservability).unwrap();
        assert!(z[0].abs() < 1e-14);
        assert!(z[1] > 0.1);
    }

    #[test]
    fn zero_deviation_reports_no_excitation() {
        let m = eigensolve(&oscillators()).unwrap();
        assert!(matches!(
            select_dominant_modes(&m, &[0.0; 5], 2, 1.0, Excitation::default()),
            Err(Error::NoExcitation)
        ));
    }

    #[test]
    fn fast_modes_are_not_candidates() {
        let m = eigensolve(&oscillators()).unwrap();
        let d = select_dominant_modes(&m, &[1.0; 5], 2, 1.0, Excitation::default()).unwrap();
        assert_eq!(d.modes.len(), 1);
        assert!((d.modes[0].frequency - 0.5 * (1.0f64 - 0.01).sqrt()).abs() < 1e-12);
        assert!(matches!(
            select_dominant_modes(&m, &[1.0; 5], 2, 0.1, Excitation::default()),
            Err(Error::NoCandidates { .. })
        ));
    }
}
