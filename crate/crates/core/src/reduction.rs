//! Reduced external-area models.
//!
//! Every reduced model here is one hybrid form. A subset `N` of the
//! external generators keeps its nonlinear equations; the rest (`L`) are
//! replaced by the rows of the external linear model,
//!
//! ```text
//! d xi/dt = A_LL xi + A_LN dx_N + B_L du,        dx_L = T xi
//! ```
//!
//! where `du` is the deviation of the tie voltages (angle, magnitude) from
//! the pre-fault point. The linearized generators act on the network
//! through their internal-source currents `W` at the internal nodes of `N`
//! and at the tie ports, linearized in the same way. With `N` = all
//! generators the model is the full external area; with `N` empty it is the
//! fully linearized area. `T` is the identity unless the linear block is
//! balanced-truncated.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::CsrMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{ExternalArea, SimResult, UnitParams};
use crate::error::{Error, Result};
use crate::netsolve::{
    affine_ports, from_real, machine_currents, AffinePorts, ExtraInjection, MachineSource, Snapshot,
};
use crate::smallsignal::{
    eigensolve, linearize_fn, participation_factors, select_dominant_modes, Difference,
    DominantModes, Excitation, LinearModel, ModalData, PfTable,
};
use crate::sysmodel::{BusId, PowerSystem, DELTA, SLOTS_PER_GEN};

type CMatrix = DMatrix<Complex64>;

/// Eigenvalues with real part at or above this are kept out of balancing.
pub const DEFLATION_THRESHOLD: f64 = -1e-6;
/// Default relative Hankel-singular-value cutoff.
pub const DEFAULT_BT_TOL: f64 = 1e-4;
/// Largest balancing condition number accepted.
pub const MAX_BALANCING_CONDITION: f64 = 1e10;

/// Solves `A X + X A^T + Q = 0` for stable `A` by the Bartels-Stewart
/// method on the complex Schur form, with one step of refinement.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let (u, t) = nalgebra::Schur::try_new(ac, f64::EPSILON, 1000 * n.max(10))
        .ok_or(Error::ConvergenceFailure)?
        .unpack();
    let scale = a.amax().max(1.0);
    let worst = (0..n)
        .map(|i| t[(i, i)].re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(worst < -1e-12 * scale) {
        return Err(Error::UnstableA { real_part: worst });
    }
    let solve = |rhs: &DMatrix<f64>| -> DMatrix<f64> {
        let c = u.adjoint() * rhs.map(|v| Complex64::new(-v, 0.0)) * &u;
        let mut y = CMatrix::zeros(n, n);
        for j in (0..n).rev() {
            let mut r: DVector<Complex64> = c.column(j).into_owned();
            for k in j + 1..n {
                let f = t[(j, k)].conj();
                if f != Complex64::new(0.0, 0.0) {
                    r.axpy(-f, &y.column(k), Complex64::new(1.0, 0.0));
                }
            }
            let shift = t[(j, j)].conj();
            for i in (0..n).rev() {
                let mut s = r[i];
                for k in i + 1..n {
                    s -= t[(i, k)] * y[(k, j)];
                }
                y[(i, j)] = s / (t[(i, i)] + shift);
            }
        }
        let x = (&u * y * u.adjoint()).map(|z| z.re);
        (&x + x.transpose()) * 0.5
    };
    let mut x = solve(q);
    let r = a * &x + &x * a.transpose() + q;
    x += solve(&r);
    Ok(x)
}

/// `|A X + X A^T + Q|_inf` (elementwise max).
pub fn lyapunov_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a * x + x * a.transpose() + q).amax()
}

/// Result of balancing a state-space system and truncating it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalancedTruncation {
    /// Hankel singular values of the stable part, non-increasing.
    pub hsv: Vec<f64>,
    /// Retained order of the stable part.
    pub order: usize,
    /// Marginal or unstable modes kept without reduction.
    pub n_unstable: usize,
    /// `2 * sum_{i > r} hsv_i`.
    pub error_bound: f64,
    /// `hsv_1 / hsv_r` of the retained part.
    pub condition: f64,
    /// Reconstruction `x = t * xi`.
    #[serde(skip)]
    pub t: DMatrix<f64>,
    /// Projection `xi = ti * x`.
    #[serde(skip)]
    pub ti: DMatrix<f64>,
    #[serde(skip)]
    pub a: DMatrix<f64>,
    #[serde(skip)]
    pub b: DMatrix<f64>,
    #[serde(skip)]
    pub c: DMatrix<f64>,
    #[serde(skip)]
    pub d: DMatrix<f64>,
}

impl BalancedTruncation {
    pub fn reduced_order(&self) -> usize {
        self.order + self.n_unstable
    }
}

/// Real basis of the invariant subspace spanned by the selected modes.
fn real_basis(modal: &ModalData, keep: &dyn Fn(Complex64) -> bool) -> Vec<DVector<f64>> {
    let mut cols = Vec::new();
    for (i, &l) in modal.eigenvalues.iter().enumerate() {
        if !keep(l) {
            continue;
        }
        let v = modal.phi.column(i);
        if l.im == 0.0 {
            cols.push(v.map(|z| z.re));
        } else if l.im > 0.0 {
            cols.push(v.map(|z| z.re));
            cols.push(v.map(|z| z.im));
        }
    }
    cols
}

fn psd_factor(w: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w);
    let mut f = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

/// Balanced truncation by the square-root method. Modes with real part at
/// or above [`DEFLATION_THRESHOLD`] are split off through an eigenvector
/// basis and kept unreduced.
pub fn balanced_truncate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    tol: f64,
) -> Result<BalancedTruncation> {
    let n = a.nrows();
    if a.ncols() != n
        || b.nrows() != n
        || c.ncols() != n
        || d.nrows() != c.nrows()
        || d.ncols() != b.ncols()
    {
        return Err(Error::DimensionMismatch("inconsistent (A, B, C, D)".into()));
    }
    let modal = eigensolve(a)?;
    let n_unstable = modal
        .eigenvalues
        .iter()
        .filter(|l| l.re >= DEFLATION_THRESHOLD)
        .count();
    let (t0, t0i) = if n_unstable == 0 {
        (DMatrix::identity(n, n), DMatrix::identity(n, n))
    } else {
        let mut cols = real_basis(&modal, &|l| l.re < DEFLATION_THRESHOLD);
        cols.extend(real_basis(&modal, &|l| l.re >= DEFLATION_THRESHOLD));
        let t0 = DMatrix::from_columns(&cols);
        let t0i = t0
            .clone()
            .try_inverse()
            .ok_or(Error::IllConditionedBalancing {
                condition: f64::INFINITY,
            })?;
        (t0, t0i)
    };
    let ns = n - n_unstable;
    let at = &t0i * a * &t0;
    let bt = &t0i * b;
    let ct = c * &t0;
    let a_s = at.view((0, 0), (ns, ns)).into_owned();
    let b_s = bt.rows(0, ns).into_owned();
    let c_s = ct.columns(0, ns).into_owned();

    let wc = lyapunov_solve(&a_s, &(&b_s * b_s.transpose()))?;
    let wo = lyapunov_solve(&a_s.transpose(), &(c_s.transpose() * &c_s))?;
    let lc = psd_factor(wc);
    let lo = psd_factor(wo);
    let svd = (lo.transpose() * &lc).svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let hsv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let s1 = hsv.first().copied().unwrap_or(0.0);
    let order = if s1 > 0.0 {
        hsv.iter().take_while(|&&s| s / s1 >= tol).count()
    } else {
        0
    };
    let condition = if order > 0 { s1 / hsv[order - 1] } else { 1.0 };
    if condition > MAX_BALANCING_CONDITION {
        return Err(Error::IllConditionedBalancing { condition });
    }
    let mut tr = DMatrix::zeros(ns, order);
    let mut tir = DMatrix::zeros(order, ns);
    for (j, &i) in idx.iter().take(order).enumerate() {
        let s = hsv[j].sqrt();
        tr.set_column(j, &(&lc * v_t.row(i).transpose() / s));
        tir.set_row(j, &((lo.clone() * u.column(i)).transpose() / s));
    }
    let error_bound = 2.0 * hsv[order..].iter().sum::<f64>();

    let r = order + n_unstable;
    let mut t_blk = DMatrix::zeros(n, r);
    t_blk.view_mut((0, 0), (ns, order)).copy_from(&tr);
    let mut ti_blk = DMatrix::zeros(r, n);
    ti_blk.view_mut((0, 0), (order, ns)).copy_from(&tir);
    for k in 0..n_unstable {
        t_blk[(ns + k, order + k)] = 1.0;
        ti_blk[(order + k, ns + k)] = 1.0;
    }
    let t = &t0 * t_blk;
    let ti = ti_blk * &t0i;
    let mut a_r = DMatrix::zeros(r, r);
    a_r.view_mut((0, 0), (order, order))
        .copy_from(&(&tir * &a_s * &tr));
    if n_unstable > 0 {
        a_r.view_mut((order, order), (n_unstable, n_unstable))
            .copy_from(&at.view((ns, ns), (n_unstable, n_unstable)));
    }
    Ok(BalancedTruncation {
        hsv,
        order,
        n_unstable,
        error_bound,
        condition,
        b: &ti * b,
        c: c * &t,
        d: d.clone(),
        a: a_r,
        t,
        ti,
    })
}

/// `C (jw I - A)^-1 B + D`.
pub fn transfer_function(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    w: f64,
) -> CMatrix {
    let n = a.nrows();
    let cx = |m: &DMatrix<f64>| m.map(|v| Complex64::new(v, 0.0));
    let mut m = -cx(a);
    for i in 0..n {
        m[(i, i)] += Complex64::new(0.0, w);
    }
    let x = m
        .lu()
        .solve(&cx(b))
        .unwrap_or_else(|| CMatrix::from_element(n, b.ncols(), Complex64::new(f64::NAN, 0.0)));
    cx(c) * x + cx(d)
}

/// `max_w |G(jw) - G_r(jw)|_2` over `points` log-spaced frequencies in
/// `[w_lo, w_hi]` rad/s.
pub fn sampled_hinf_error(
    full: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
    red: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
    w_lo: f64,
    w_hi: f64,
    points: usize,
) -> f64 {
    let (l0, l1) = (w_lo.log10(), w_hi.log10());
    (0..points)
        .map(|k| {
            let w = 10f64.powf(l0 + (l1 - l0) * k as f64 / (points.max(2) - 1) as f64);
            let g = transfer_function(full.0, full.1, full.2, full.3, w);
            let gr = transfer_function(red.0, red.1, red.2, red.3, w);
            let diff = g - gr;
            if diff.is_empty() {
                0.0
            } else {
                diff.singular_values().max()
            }
        })
        .fold(0.0, f64::max)
}

/// Sparse block in CSR form; the linear blocks come from finite
/// differences and carry many exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr(CsrMatrix<f64>);

impl Csr {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        Csr(CsrMatrix::from(m))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn nnz(&self) -> usize {
        self.0.nnz()
    }

    /// `y += M x`.
    pub fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.0.ncols());
        for (yi, row) in y.iter_mut().zip(self.0.row_iter()) {
            let mut s = 0.0;
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                s += v * x[j];
            }
            *yi += s;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from(&self.0)
    }
}

impl Serialize for Csr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let (offsets, cols, vals) = self.0.csr_data();
        let mut st = s.serialize_struct("Csr", 5)?;
        st.serialize_field("nrows", &self.0.nrows())?;
        st.serialize_field("ncols", &self.0.ncols())?;
        st.serialize_field("row_offsets", offsets)?;
        st.serialize_field("col_indices", cols)?;
        st.serialize_field("values", vals)?;
        st.end()
    }
}

/// When to balance-truncate the linear block of a hybrid model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Only when every external generator is linearized.
    #[default]
    Auto,
    Always,
    Never,
}

impl Truncation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "auto" => Ok(Truncation::Auto),
            "always" => Ok(Truncation::Always),
            "never" => Ok(Truncation::Never),
            other => Err(Error::validation(
                "truncation",
                format!("unknown policy `{other}`"),
            )),
        }
    }

    fn applies(self, nonlinear_empty: bool) -> bool {
        match self {
            Truncation::Auto => nonlinear_empty,
            Truncation::Always => true,
            Truncation::Never => false,
        }
    }
}

/// Pre-fault analysis of the external area shared by every reduction.
#[derive(Debug, Clone)]
pub struct ExternalAnalysis {
    pub area: ExternalArea,
    /// Machine indices of the external generators, ascending bus order.
    pub gens: Vec<usize>,
    pub buses: Vec<BusId>,
    pub lin: LinearModel,
    pub modal: ModalData,
    pub pf: PfTable,
    /// Source voltages `E` of the external generators as `(Re, Im)` pairs.
    pub emf: Sensitivity,
    /// Machine currents `(Id, Iq)` of the external generators.
    pub currents: Sensitivity,
    /// Per generator: `df/dx` at fixed currents and `df/d(Id, Iq)`.
    pub local: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Value and Jacobians of an algebraic output at the pre-fault point.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    pub y0: Vec<f64>,
    pub dx: DMatrix<f64>,
    pub du: DMatrix<f64>,
}

impl ExternalAnalysis {
    pub fn new(sys: &PowerSystem, eq: &crate::powerflow::Equilibrium) -> Result<Self> {
        let part = sys.partition()?;
        let area = ExternalArea::new(sys, part, eq)?;
        let (_, gens) = sys.split_generators(part);
        let x0: Vec<f64> = gens
            .iter()
            .flat_map(|&g| {
                eq.x0[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]
                    .iter()
                    .copied()
            })
            .collect();
        let u0 = area.u0(sys, eq);
        let lin = crate::smallsignal::linearize_external(&area, &x0, &u0, Difference::Central)?;
        let modal = eigensolve(&lin.a)?;
        let pf = participation_factors(&modal)?;
        let net = area.group.net.y(Snapshot::PreFault);
        let ng = gens.len();
        // outputs: E as (Re, Im) pairs, then (Id, Iq) pairs
        let algebraic = |x: &[f64], u: &[f64], f: &mut [f64], y: &mut [f64]| -> Result<()> {
            let ports: Vec<Complex64> = u
                .chunks_exact(2)
                .map(|p| Complex64::from_polar(p[1], p[0]))
                .collect();
            let sources = area.group.sources(x);
            let aff = affine_ports(net, &sources, &ExtraInjection::default())?;
            let iq = aff.iq(&crate::netsolve::to_real(&ports));
            let cur = machine_currents(net, &sources, &iq, &ports, None);
            area.group.derivative_from_currents(x, &cur, f);
            for (k, (s, c)) in sources.iter().zip(&cur).enumerate() {
                let e = s.emf(iq[k]);
                y[2 * k] = e.re;
                y[2 * k + 1] = e.im;
                y[2 * ng + 2 * k] = c.id;
                y[2 * ng + 2 * k + 1] = c.iq;
            }
            Ok(())
        };
        let alg = linearize_fn(algebraic, &x0, &u0, 4 * ng, Difference::Central)?;
        let mut y0 = vec![0.0; 4 * ng];
        algebraic(&x0, &u0, &mut vec![0.0; x0.len()], &mut y0)?;
        let split = |rows: std::ops::Range<usize>| Sensitivity {
            y0: y0[rows.clone()].to_vec(),
            dx: alg.c.rows(rows.start, rows.len()).into_owned(),
            du: alg.d.rows(rows.start, rows.len()).into_owned(),
        };
        let (emf, currents) = (split(0..2 * ng), split(2 * ng..4 * ng));
        let local = area
            .group
            .units
            .iter()
            .enumerate()
            .map(|(g, unit)| {
                let xg = &x0[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)];
                let lm = linearize_fn(
                    |x, c, f, _| {
                        unit.derivative(x, c[0], c[1], f);
                        Ok(())
                    },
                    xg,
                    &currents.y0[2 * g..2 * g + 2],
                    0,
                    Difference::Central,
                )?;
                Ok((lm.a, lm.b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExternalAnalysis {
            emf,
            currents,
            local,
            buses: gens.iter().map(|&g| sys.machines[g].bus).collect(),
            area,
            gens,
            lin,
            modal,
            pf,
        })
    }

    pub fn n_gen(&self) -> usize {
        self.gens.len()
    }

    /// External slice of a whole-system state.
    pub fn external_state(&self, x: &[f64]) -> Vec<f64> {
        self.gens
            .iter()
            .flat_map(|&g| {
                x[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]
                    .iter()
                    .copied()
            })
            .collect()
    }
}

/// Linear block of a hybrid model, see the module docs.
#[derive(Debug, Clone, Serialize)]
pub struct LinearBlock {
    pub a: Csr,
    /// Coupling from the nonlinear generators' deviations.
    pub a_n: Csr,
    pub b: Csr,
    /// Network part of an untruncated block, kept factored.
    pub network: Option<NetworkCoupling>,
    /// `W` from the block state, from `dx_N`, and from the rectangular
    /// tie-voltage deviation.
    pub c: Csr,
    pub c_n: Csr,
    pub d: DMatrix<f64>,
    pub w0: Vec<f64>,
    /// Reference angle deviation `phi = frame_xi . xi + frame_n . dx_N`,
    /// the inertia-weighted mean rotor-angle deviation of the area.
    pub frame_xi: Vec<f64>,
    pub frame_n: Vec<f64>,
    /// Change of `W` under a unit shift of every external rotor angle.
    pub shift: Vec<f64>,
    #[serde(skip)]
    pub t: Option<DMatrix<f64>>,
    #[serde(skip)]
    pub ti: Option<DMatrix<f64>>,
}

impl LinearBlock {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
}

/// `g (h xi + h_n dx_N + h_u du)`: the machine-current deviations of the
/// linearized generators and their local effect.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkCoupling {
    pub g: Csr,
    pub h: Csr,
    pub h_n: Csr,
    pub h_u: Csr,
}

/// Network-side quantities of one evaluation, valid for the state they
/// were computed from.
#[derive(Debug, Clone)]
pub struct PortStage {
    pub sources: Vec<MachineSource>,
    pub ports: AffinePorts,
    /// Linearized-generator injection at `v = 0`, per retained node.
    pub w_base: Vec<Complex64>,
    /// Injection per unit rectangular tie voltage.
    pub w_v: Option<DMatrix<f64>>,
    /// Frame angle deviation.
    pub phi: f64,
    pub dx_n: Vec<f64>,
}

/// Reduced external area: nonlinear generators plus a linear block.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedExternalModel {
    pub method: String,
    /// Ordinals (into the external generator list) kept nonlinear.
    pub nonlinear: Vec<usize>,
    pub linearized: Vec<usize>,
    pub nonlinear_buses: Vec<BusId>,
    pub linearized_buses: Vec<BusId>,
    #[serde(skip)]
    units: Vec<UnitParams>,
    #[serde(skip)]
    y: CMatrix,
    #[serde(skip)]
    x0: Vec<f64>,
    #[serde(skip)]
    u0: Vec<f64>,
    #[serde(skip)]
    v0: Vec<f64>,
    pub linear: Option<LinearBlock>,
    pub truncation: Option<BalancedTruncation>,
    n_ext: usize,
}

/// Complex nodal injection from a real `(Re, Im)` vector.
fn to_complex(v: &[f64]) -> Vec<Complex64> {
    from_real(v)
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        r
    }
}

impl ReducedExternalModel {
    /// Assembles the hybrid model keeping `nonlinear` (external ordinals)
    /// in full detail.
    pub fn build(
        analysis: &ExternalAnalysis,
        method: &str,
        nonlinear: &[usize],
        truncation: Truncation,
        bt_tol: f64,
    ) -> Result<Self> {
        let ng = analysis.n_gen();
        if ng == 0 {
            return Err(Error::EmptyExternal);
        }
        let mut is_nl = vec![false; ng];
        for &g in nonlinear {
            if g >= ng {
                return Err(Error::validation(
                    "nonlinear",
                    format!("external generator {g} out of range"),
                ));
            }
            is_nl[g] = true;
        }
        let nl: Vec<usize> = (0..ng).filter(|&g| is_nl[g]).collect();
        let ln: Vec<usize> = (0..ng).filter(|&g| !is_nl[g]).collect();
        let area = &analysis.area;
        let net = area.group.net.y(Snapshot::PreFault);
        let np = area.group.net.n_ports();
        // retained nodes of the hybrid network: nonlinear internal nodes, ports
        let keep: Vec<usize> = nl.iter().copied().chain(ng..ng + np).collect();
        let y = CMatrix::from_fn(keep.len(), keep.len(), |i, j| net[(keep[i], keep[j])]);
        let lin = &analysis.lin;
        let u0 = lin.u0.clone();
        let v0: Vec<f64> = u0
            .chunks_exact(2)
            .flat_map(|p| {
                let v = Complex64::from_polar(p[1], p[0]);
                [v.re, v.im]
            })
            .collect();

        let mut model = ReducedExternalModel {
            method: method.to_string(),
            nonlinear_buses: nl.iter().map(|&g| analysis.buses[g]).collect(),
            linearized_buses: ln.iter().map(|&g| analysis.buses[g]).collect(),
            units: nl.iter().map(|&g| area.group.units[g]).collect(),
            y,
            x0: lin.x0.clone(),
            u0,
            v0,
            linear: None,
            truncation: None,
            n_ext: ng,
            nonlinear: nl.clone(),
            linearized: ln.clone(),
        };
        if ln.is_empty() {
            return Ok(model);
        }

        // W: currents the linearized sources drive into the kept nodes, a
        // fixed combination of their source voltages
        let n_out = 2 * keep.len();
        let combine = |m: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(n_out, m.ncols());
            for c in 0..m.ncols() {
                for (r, &node) in keep.iter().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for &l in &ln {
                        acc += net[(node, l)] * Complex64::new(m[(2 * l, c)], m[(2 * l + 1, c)]);
                    }
                    out[(2 * r, c)] = acc.re;
                    out[(2 * r + 1, c)] = acc.im;
                }
            }
            out
        };
        let w_c = combine(&analysis.emf.dx);
        let w_d = combine(&analysis.emf.du);
        let w0 = combine(&DMatrix::from_column_slice(2 * ng, 1, &analysis.emf.y0))
            .as_slice()
            .to_vec();
        let idx = |gens: &[usize]| -> Vec<usize> {
            gens.iter()
                .flat_map(|&g| (0..SLOTS_PER_GEN).map(move |s| SLOTS_PER_GEN * g + s))
                .collect()
        };
        let (il, inl) = (idx(&ln), idx(&nl));
        let pick = |m: &DMatrix<f64>, rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
        };
        let all_u: Vec<usize> = (0..lin.b.ncols()).collect();
        let all_w: Vec<usize> = (0..n_out).collect();
        // linear rows in factored form, local dynamics plus the network
        // currents: d(xi)/dt = A_loc xi + F (J_L xi + J_N dx_N + J_u du)
        let rows_i: Vec<usize> = ln.iter().flat_map(|&g| [2 * g, 2 * g + 1]).collect();
        let mut a_loc = DMatrix::zeros(il.len(), il.len());
        let mut f_loc = DMatrix::zeros(il.len(), rows_i.len());
        for (k, &g) in ln.iter().enumerate() {
            let (la, lf) = &analysis.local[g];
            a_loc
                .view_mut(
                    (SLOTS_PER_GEN * k, SLOTS_PER_GEN * k),
                    (SLOTS_PER_GEN, SLOTS_PER_GEN),
                )
                .copy_from(la);
            f_loc
                .view_mut((SLOTS_PER_GEN * k, 2 * k), (SLOTS_PER_GEN, 2))
                .copy_from(lf);
        }
        let j_l = pick(&analysis.currents.dx, &rows_i, &il);
        let j_n = pick(&analysis.currents.dx, &rows_i, &inl);
        let j_u = pick(&analysis.currents.du, &rows_i, &all_u);
        let c_wl = pick(&w_c, &all_w, &il);
        let c_wn = pick(&w_c, &all_w, &inl);
        // polar-from-rectangular Jacobian at the pre-fault tie voltages
        let mut r = DMatrix::zeros(2 * np, 2 * np);
        for k in 0..np {
            let (x, yv) = (model.v0[2 * k], model.v0[2 * k + 1]);
            let m2 = x * x + yv * yv;
            let m = m2.sqrt();
            r[(2 * k, 2 * k)] = -yv / m2;
            r[(2 * k, 2 * k + 1)] = x / m2;
            r[(2 * k + 1, 2 * k)] = x / m;
            r[(2 * k + 1, 2 * k + 1)] = yv / m;
        }
        let d = &w_d * r;

        let factored = |a_loc: &DMatrix<f64>| LinearBlock {
            a: Csr::from_dense(a_loc),
            a_n: Csr::from_dense(&DMatrix::zeros(il.len(), inl.len())),
            b: Csr::from_dense(&DMatrix::zeros(il.len(), all_u.len())),
            network: Some(NetworkCoupling {
                g: Csr::from_dense(&f_loc),
                h: Csr::from_dense(&j_l),
                h_n: Csr::from_dense(&j_n),
                h_u: Csr::from_dense(&j_u),
            }),
            c: Csr::from_dense(&c_wl),
            c_n: Csr::from_dense(&c_wn),
            d: d.clone(),
            w0: w0.clone(),
            t: None,
            ti: None,
            frame_xi: Vec::new(),
            frame_n: Vec::new(),
            shift: Vec::new(),
        };
        let mut block = if truncation.applies(nl.is_empty()) {
            let a_ll = &a_loc + &f_loc * &j_l;
            let mut inputs = DMatrix::zeros(il.len(), inl.len() + all_u.len());
            inputs.columns_mut(0, inl.len()).copy_from(&(&f_loc * &j_n));
            inputs
                .columns_mut(inl.len(), all_u.len())
                .copy_from(&(&f_loc * &j_u));
            let dz = DMatrix::zeros(n_out, inputs.ncols());
            match balanced_truncate(&a_ll, &inputs, &c_wl, &dz, bt_tol) {
                Ok(bt) => {
                    let block = LinearBlock {
                        a: Csr::from_dense(&bt.a),
                        a_n: Csr::from_dense(&bt.b.columns(0, inl.len()).into_owned()),
                        b: Csr::from_dense(&bt.b.columns(inl.len(), all_u.len()).into_owned()),
                        network: None,
                        c: Csr::from_dense(&bt.c),
                        c_n: Csr::from_dense(&c_wn),
                        d,
                        w0,
                        t: Some(bt.t.clone()),
                        ti: Some(bt.ti.clone()),
                        frame_xi: Vec::new(),
                        frame_n: Vec::new(),
                        shift: Vec::new(),
                    };
                    model.truncation = Some(bt);
                    block
                }
                Err(e) => {
                    warn!("balanced truncation skipped: {e}");
                    factored(&a_loc)
                }
            }
        } else {
            factored(&a_loc)
        };
        let h_tot: f64 = area.group.units.iter().map(|u| u.h).sum();
        let weight = |g: usize| area.group.units[g].h / h_tot;
        let mut frame_l = vec![0.0; il.len()];
        for (k, &g) in ln.iter().enumerate() {
            frame_l[SLOTS_PER_GEN * k + DELTA] = weight(g);
        }
        block.frame_xi = match &block.t {
            Some(t) => (t.transpose() * DVector::from_vec(frame_l))
                .as_slice()
                .to_vec(),
            None => frame_l,
        };
        block.frame_n = vec![0.0; inl.len()];
        for (k, &g) in nl.iter().enumerate() {
            block.frame_n[SLOTS_PER_GEN * k + DELTA] = weight(g);
        }
        block.shift = (0..n_out)
            .map(|i| (0..ng).map(|g| w_c[(i, SLOTS_PER_GEN * g + DELTA)]).sum())
            .collect();
        model.linear = Some(block);
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        SLOTS_PER_GEN * self.nonlinear.len() + self.linear.as_ref().map_or(0, |l| l.n_states())
    }

    pub fn n_ports(&self) -> usize {
        self.v0.len() / 2
    }

    fn n_nl_states(&self) -> usize {
        SLOTS_PER_GEN * self.nonlinear.len()
    }

    /// Model state for a full external state (ordinal order).
    pub fn initial_state(&self, x_ext: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.n_states());
        for &g in &self.nonlinear {
            z.extend_from_slice(&x_ext[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]);
        }
        if let Some(lb) = &self.linear {
            let dx: Vec<f64> = self
                .linearized
                .iter()
                .flat_map(|&g| (0..SLOTS_PER_GEN).map(move |s| SLOTS_PER_GEN * g + s))
                .map(|i| x_ext[i] - self.x0[i])
                .collect();
            match &lb.ti {
                Some(ti) => z.extend((ti * DVector::from_vec(dx)).iter()),
                None => z.extend(dx),
            }
        }
        z
    }

    /// Full external state (ordinal order) represented by `z`.
    pub fn reconstruct(&self, z: &[f64], out: &mut [f64]) {
        for (k, &g) in self.nonlinear.iter().enumerate() {
            out[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]
                .copy_from_slice(&z[SLOTS_PER_GEN * k..SLOTS_PER_GEN * (k + 1)]);
        }
        if let Some(lb) = &self.linear {
            let xi = &z[self.n_nl_states()..];
            let mapped;
            let dx: &[f64] = match &lb.t {
                Some(t) => {
                    mapped = t * DVector::from_column_slice(xi);
                    mapped.as_slice()
                }
                None => xi,
            };
            for (k, &g) in self.linearized.iter().enumerate() {
                for s in 0..SLOTS_PER_GEN {
                    let i = SLOTS_PER_GEN * g + s;
                    out[i] = self.x0[i] + dx[SLOTS_PER_GEN * k + s];
                }
            }
        }
    }

    /// Port relation at state `z`: the current drawn into each tie terminal
    /// is affine in the rectangular tie voltages.
    pub fn stage(&self, z: &[f64]) -> Result<PortStage> {
        let nn = self.nonlinear.len();
        let sources: Vec<MachineSource> = self
            .units
            .iter()
            .enumerate()
            .map(|(k, u)| u.source(&z[SLOTS_PER_GEN * k..]))
            .collect();
        let mut dx_n = Vec::with_capacity(self.n_nl_states());
        for (k, &g) in self.nonlinear.iter().enumerate() {
            for s in 0..SLOTS_PER_GEN {
                dx_n.push(z[SLOTS_PER_GEN * k + s] - self.x0[SLOTS_PER_GEN * g + s]);
            }
        }
        let (ports, w_base, w_v, phi) = match &self.linear {
            None => (
                affine_ports(&self.y, &sources, &ExtraInjection::default())?,
                Vec::new(),
                None,
                0.0,
            ),
            Some(lb) => {
                let xi = &z[SLOTS_PER_GEN * nn..];
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                let phi = dot(&lb.frame_xi, xi) + dot(&lb.frame_n, &dx_n);
                let mut w = lb.w0.clone();
                lb.c.mul_add(xi, &mut w);
                lb.c_n.mul_add(&dx_n, &mut w);
                let dv0 = &lb.d * DVector::from_column_slice(&self.v0);
                for ((wi, d), s) in w.iter_mut().zip(dv0.iter()).zip(&lb.shift) {
                    *wi -= d + phi * s;
                }
                // back from the frame rotated by phi
                let rot = Complex64::from_polar(1.0, phi);
                let wc: Vec<Complex64> = to_complex(&w).into_iter().map(|c| c * rot).collect();
                let mut w_v = lb.d.clone();
                let (c, s) = (rot.re, rot.im);
                for i in (0..w_v.nrows()).step_by(2) {
                    for j in 0..w_v.ncols() {
                        let (a, b) = (w_v[(i, j)], w_v[(i + 1, j)]);
                        w_v[(i, j)] = c * a - s * b;
                        w_v[(i + 1, j)] = s * a + c * b;
                    }
                }
                for j in (0..w_v.ncols()).step_by(2) {
                    for i in 0..w_v.nrows() {
                        let (a, b) = (w_v[(i, j)], w_v[(i, j + 1)]);
                        w_v[(i, j)] = c * a - s * b;
                        w_v[(i, j + 1)] = s * a + c * b;
                    }
                }
                let aff = affine_ports(
                    &self.y,
                    &sources,
                    &ExtraInjection {
                        w0: Some(&wc),
                        w_v: Some(&w_v),
                    },
                )?;
                (aff, wc, Some(w_v), phi)
            }
        };
        Ok(PortStage {
            sources,
            ports,
            w_base,
            w_v,
            phi,
            dx_n,
        })
    }

    /// Derivative of `z` for rectangular tie voltages `v`.
    pub fn derivative(&self, z: &[f64], stage: &PortStage, v: &[f64], dz: &mut [f64]) {
        let nn = self.nonlinear.len();
        let iq = stage.ports.iq(v);
        let port_v = to_complex(v);
        let extra: Option<Vec<Complex64>> = stage.w_v.as_ref().map(|w_v| {
            let dv = w_v * DVector::from_column_slice(v);
            stage
                .w_base
                .iter()
                .enumerate()
                .map(|(i, w)| w + Complex64::new(dv[2 * i], dv[2 * i + 1]))
                .collect()
        });
        let cur = machine_currents(&self.y, &stage.sources, &iq, &port_v, extra.as_deref());
        for (k, (u, c)) in self.units.iter().zip(&cur).enumerate() {
            let r = SLOTS_PER_GEN * k..SLOTS_PER_GEN * (k + 1);
            u.derivative(&z[r.clone()], c.id, c.iq, &mut dz[r]);
        }
        if let Some(lb) = &self.linear {
            let du: Vec<f64> = port_v
                .iter()
                .zip(self.u0.chunks_exact(2))
                .flat_map(|(p, u0)| {
                    [
                        stage.phi + wrap_angle(p.arg() - u0[0] - stage.phi),
                        p.norm() - u0[1],
                    ]
                })
                .collect();
            let xi = &z[SLOTS_PER_GEN * nn..];
            let out = &mut dz[SLOTS_PER_GEN * nn..];
            out.fill(0.0);
            lb.a.mul_add(xi, out);
            lb.a_n.mul_add(&stage.dx_n, out);
            lb.b.mul_add(&du, out);
            if let Some(net) = &lb.network {
                let mut di = vec![0.0; net.h.nrows()];
                net.h.mul_add(xi, &mut di);
                net.h_n.mul_add(&stage.dx_n, &mut di);
                net.h_u.mul_add(&du, &mut di);
                net.g.mul_add(&di, out);
            }
        }
    }

    pub fn clamp(&self, z: &mut [f64]) {
        for (k, u) in self.units.iter().enumerate() {
            u.clamp(&mut z[SLOTS_PER_GEN * k..SLOTS_PER_GEN * (k + 1)]);
        }
    }

    pub fn n_external_states(&self) -> usize {
        SLOTS_PER_GEN * self.n_ext
    }
}

/// Settings shared by the reduction strategies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionConfig {
    pub p_max: f64,
    pub delta_threshold: f64,
    pub dominant_count: usize,
    pub f_max: f64,
    pub excitation: Excitation,
    pub truncation: Truncation,
    pub bt_tol: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            p_max: 0.5,
            delta_threshold: 10f64.to_radians(),
            dominant_count: 2,
            f_max: 1.0,
            excitation: Excitation::default(),
            truncation: Truncation::default(),
            bt_tol: DEFAULT_BT_TOL,
        }
    }
}

/// What a strategy sees at the switch instant.
pub struct SwitchContext<'a> {
    pub sys: &'a PowerSystem,
    pub analysis: &'a ExternalAnalysis,
    /// External-state deviation from the pre-fault point at clearing.
    pub dx0: &'a [f64],
    /// Whole-system trajectory up to clearing.
    pub history: &'a SimResult,
    /// Row range of the fault-on interval in `history`.
    pub fault_rows: std::ops::Range<usize>,
    pub cfg: &'a ReductionConfig,
}

/// Generators a strategy keeps nonlinear, with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Selection {
    pub nonlinear: Vec<usize>,
    pub dominant: Option<DominantModes>,
    /// Per external generator: the score compared against the threshold.
    pub scores: Vec<f64>,
}

/// A rule for choosing the nonlinear set, selected by name at run time.
pub trait ReductionStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, ctx: &SwitchContext<'_>) -> Result<Selection>;
}

/// Every external generator nonlinear.
pub struct FullDetail;

impl ReductionStrategy for FullDetail {
    fn name(&self) -> &'static str {
        "full"
    }

    fn select(&self, ctx: &SwitchContext<'_>) -> Result<Selection> {
        let n = ctx.analysis.n_gen();
        Ok(Selection {
            nonlinear: (0..n).collect(),
            scores: vec![1.0; n],
            dominant: None,
        })
    }
}

/// Every external generator linearized.
pub struct FullyLinear;

impl ReductionStrategy for FullyLinear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn select(&self, ctx: &SwitchContext<'_>) -> Result<Selection> {
        Ok(Selection {
            nonlinear: Vec::new(),
            scores: vec![0.0; ctx.analysis.n_gen()],
            dominant: None,
        })
    }
}

/// Participation factors on the dominant fault-excited modes.
pub struct ParticipationFactor;

/// Generators whose aggregate participation in any dominant mode reaches
/// `p_max`; scores are the best aggregate PF per generator.
pub fn select_by_participation(
    pf: &PfTable,
    dominant: &DominantModes,
    p_max: f64,
) -> (Vec<usize>, Vec<f64>) {
    let scores: Vec<f64> = (0..pf.per_gen.nrows())
        .map(|g| {
            dominant
                .modes
                .iter()
                .map(|m| pf.per_gen[(g, m.index)])
                .fold(0.0, f64::max)
        })
        .collect();
    let chosen = (0..scores.len()).filter(|&g| scores[g] >= p_max).collect();
    (chosen, scores)
}

impl ReductionStrategy for ParticipationFactor {
    fn name(&self) -> &'static str {
        "pf"
    }

    fn select(&self, ctx: &SwitchContext<'_>) -> Result<Selection> {
        let dominant = select_dominant_modes(
            &ctx.analysis.modal,
            ctx.dx0,
            ctx.cfg.dominant_count,
            ctx.cfg.f_max,
            ctx.cfg.excitation,
        )?;
        let (nonlinear, scores) =
            select_by_participation(&ctx.analysis.pf, &dominant, ctx.cfg.p_max);
        Ok(Selection {
            nonlinear,
            dominant: Some(dominant),
            scores,
        })
    }
}

/// Rotor-angle deviation during the fault, relative to the centre of
/// inertia.
pub struct RotorAngle;

/// Largest `|delta(t) - delta(0) - (coi(t) - coi(0))|` over `rows` for
/// every generator of the whole system.
pub fn rotor_deviations(
    sys: &PowerSystem,
    history: &SimResult,
    rows: std::ops::Range<usize>,
) -> Vec<f64> {
    let ng = sys.n_gen();
    let h_tot: f64 = sys.machines.iter().map(|m| m.h).sum();
    let coi = |row: &[f64]| -> f64 {
        sys.machines
            .iter()
            .enumerate()
            .map(|(g, m)| m.h * row[SLOTS_PER_GEN * g + DELTA])
            .sum::<f64>()
            / h_tot
    };
    let first = history.row(0);
    let coi0 = coi(first);
    let mut dev = vec![0.0_f64; ng];
    for i in rows {
        let row = history.row(i);
        let shift = coi(row) - coi0;
        for (g, d) in dev.iter_mut().enumerate() {
            let k = SLOTS_PER_GEN * g + DELTA;
            *d = d.max((row[k] - first[k] - shift).abs());
        }
    }
    dev
}

/// External generators whose deviation reaches `threshold` (radians).
pub fn select_by_rotor_angle(deviation: &[f64], threshold: f64) -> Vec<usize> {
    (0..deviation.len())
        .filter(|&g| deviation[g] >= threshold)
        .collect()
}

impl ReductionStrategy for RotorAngle {
    fn name(&self) -> &'static str {
        "rotor"
    }

    fn select(&self, ctx: &SwitchContext<'_>) -> Result<Selection> {
        let all = rotor_deviations(ctx.sys, ctx.history, ctx.fault_rows.clone());
        let scores: Vec<f64> = ctx.analysis.gens.iter().map(|&g| all[g]).collect();
        Ok(Selection {
            nonlinear: select_by_rotor_angle(&scores, ctx.cfg.delta_threshold),
            scores,
            dominant: None,
        })
    }
}

/// Strategies by name.
pub struct Registry {
    strategies: BTreeMap<&'static str, Box<dyn ReductionStrategy>>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            strategies: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, s: Box<dyn ReductionStrategy>) {
        self.strategies.insert(s.name(), s);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ReductionStrategy> {
        self.strategies
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry::empty();
        r.register(Box::new(FullDetail));
        r.register(Box::new(FullyLinear));
        r.register(Box::new(ParticipationFactor));
        r.register(Box::new(RotorAngle));
        r
    }
}

/// PF-based reduction: nonlinear set from participation factors on the
/// dominant modes excited by `dx0`.
pub fn build_pf_reduced(
    analysis: &ExternalAnalysis,
    dx0: &[f64],
    cfg: &ReductionConfig,
) -> Result<(ReducedExternalModel, Selection)> {
    if analysis.n_gen() == 0 {
        return Err(Error::EmptyExternal);
    }
    let dominant = select_dominant_modes(
        &analysis.modal,
        dx0,
        cfg.dominant_count,
        cfg.f_max,
        cfg.excitation,
    )?;
    let (nonlinear, scores) = select_by_participation(&analysis.pf, &dominant, cfg.p_max);
    let model =
        ReducedExternalModel::build(analysis, "pf", &nonlinear, cfg.truncation, cfg.bt_tol)?;
    Ok((
        model,
        Selection {
            nonlinear,
            dominant: Some(dominant),
            scores,
        },
    ))
}

/// Rotor-angle baseline: nonlinear set from external deviations over the
/// fault-on rows of `history`.
pub fn build_rotor_angle_reduced(
    sys: &PowerSystem,
    analysis: &ExternalAnalysis,
    history: &SimResult,
    fault_rows: std::ops::Range<usize>,
    cfg: &ReductionConfig,
) -> Result<(ReducedExternalModel, Selection)> {
    if analysis.n_gen() == 0 {
        return Err(Error::EmptyExternal);
    }
    let all = rotor_deviations(sys, history, fault_rows);
    let scores: Vec<f64> = analysis.gens.iter().map(|&g| all[g]).collect();
    let nonlinear = select_by_rotor_angle(&scores, cfg.delta_threshold);
    let model =
        ReducedExternalModel::build(analysis, "rotor", &nonlinear, cfg.truncation, cfg.bt_tol)?;
    Ok((
        model,
        Selection {
            nonlinear,
            dominant: None,
            scores,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn lyapunov_identity() {
        let a = -DMatrix::<f64>::identity(3, 3);
        let x = lyapunov_solve(&a, &DMatrix::identity(3, 3)).unwrap();
        assert!((x - DMatrix::identity(3, 3) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn lyapunov_diagonal_closed_form() {
        let a = dmatrix![-1.0, 0.0; 0.0, -2.0];
        let q = DMatrix::from_element(2, 2, 1.0);
        let x = lyapunov_solve(&a, &q).unwrap();
        let expect = dmatrix![0.5, 1.0 / 3.0; 1.0 / 3.0, 0.25];
        assert!((x - expect).amax() < 1e-15);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = dmatrix![0.1, 0.0; 0.0, -1.0];
        assert!(matches!(
            lyapunov_solve(&a, &DMatrix::identity(2, 2)),
            Err(Error::UnstableA { .. })
        ));
    }

    #[test]
    fn siso_first_order_is_kept() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let bt = balanced_truncate(&one(-1.0), &one(1.0), &one(1.0), &one(0.0), 1e-4).unwrap();
        assert_eq!(bt.order, 1);
        assert!((bt.hsv[0] - 0.5).abs() < 1e-14);
        assert!((bt.a[(0, 0)] + 1.0).abs() < 1e-14);
        assert!((bt.b[(0, 0)] * bt.c[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unreachable_state_is_dropped() {
        let a = dmatrix![-1.0, 0.0; 0.0, -2.0];
        let b = dmatrix![1.0; 0.0];
        let c = dmatrix![1.0, 1.0];
        let d = dmatrix![0.0];
        let bt = balanced_truncate(&a, &b, &c, &d, 1e-4).unwrap();
        assert_eq!(bt.order, 1);
        let err = sampled_hinf_error(
            (&a, &b, &c, &d),
            (&bt.a, &bt.b, &bt.c, &bt.d),
            1e-3,
            1e3,
            100,
        );
        assert!(err < 1e-10);
    }

    #[test]
    fn marginal_modes_are_deflated() {
        let a = dmatrix![0.0, 1.0, 0.0; 0.0, -1.0, 0.5; 0.0, 0.0, -3.0];
        let b = dmatrix![0.0; 1.0; 1.0];
        let c = dmatrix![1.0, 0.0, 1.0];
        let d = dmatrix![0.0];
        let bt = balanced_truncate(&a, &b, &c, &d, 1e-4).unwrap();
        assert_eq!(bt.n_unstable, 1);
        // the retained integrator keeps the low-frequency response exact
        let g = transfer_function(&a, &b, &c, &d, 1e-3);
        let gr = transfer_function(&bt.a, &bt.b, &bt.c, &bt.d, 1e-3);
        assert!((g - gr).camax() <= bt.error_bound + 1e-6);
    }

    #[test]
    fn factored_jacobian_matches_direct() {
        use crate::powerflow::{
            init_dynamic_state, solve_power_flow, DEFAULT_MAX_ITER, DEFAULT_TOL,
        };
        let sys = crate::data::two_area();
        let pf = solve_power_flow(&sys, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let eq = init_dynamic_state(&sys, &pf).unwrap();
        let an = ExternalAnalysis::new(&sys, &eq).unwrap();
        let n = an.lin.a.nrows();
        let mut a = DMatrix::zeros(n, n);
        for (g, (la, lf)) in an.local.iter().enumerate() {
            let r = SLOTS_PER_GEN * g;
            let mut blk = a.view_mut((r, r), (SLOTS_PER_GEN, SLOTS_PER_GEN));
            blk += la;
            let mut rows = a.rows_mut(r, SLOTS_PER_GEN);
            rows += lf * an.currents.dx.rows(2 * g, 2);
        }
        let scale = an.lin.a.amax();
        assert!((a - &an.lin.a).amax() < 1e-6 * scale);
    }

    #[test]
    fn csr_matches_dense() {
        let m = dmatrix![1.0, 0.0, 2.0; 0.0, 0.0, 0.0; -3.0, 4.0, 0.0];
        let s = Csr::from_dense(&m);
        assert_eq!(s.nnz(), 4);
        assert_eq!(s.to_dense(), m);
        let mut y = vec![1.0; 3];
        s.mul_add(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![8.0, 1.0, 6.0]);
    }

    #[test]
    fn angle_wrap() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.1) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn registry_lookup() {
        let r = Registry::default();
        assert_eq!(r.names(), vec!["full", "linear", "pf", "rotor"]);
        assert!(matches!(r.get("coherency"), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn rotor_threshold_extremes() {
        let dev = [0.0, 0.2, 0.05];
        assert_eq!(select_by_rotor_angle(&dev, 0.0), vec![0, 1, 2]);
        assert!(select_by_rotor_angle(&dev, f64::INFINITY).is_empty());
        assert_eq!(select_by_rotor_angle(&dev, 0.1), vec![1]);
    }
}
