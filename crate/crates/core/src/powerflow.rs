//! Newton-Raphson power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netsolve::{network_ybus, CMatrix, LoadAdmittances};
use crate::sysmodel::{
    BusKind, PowerSystem, StateLayout, DELTA, ED_P, EFD, EQ_P, OMEGA, OMEGA_S, PGV, PM, RF,
    SLOTS_PER_GEN, VR,
};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus position, per-unit.
    pub vm: Vec<f64>,
    /// Voltage angle per bus position, radians.
    pub va: Vec<f64>,
    /// Machine terminal injection (generation), per machine, per-unit.
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, pos: usize) -> Complex64 {
        Complex64::from_polar(self.vm[pos], self.va[pos])
    }
}

fn injections(y: &CMatrix, v: &[Complex64]) -> Vec<Complex64> {
    (0..v.len())
        .map(|i| {
            let mut cur = Complex64::new(0.0, 0.0);
            for (j, vj) in v.iter().enumerate() {
                cur += y[(i, j)] * vj;
            }
            v[i] * cur.conj()
        })
        .collect()
}

/// Solves the pre-fault power flow from a flat start.
pub fn solve_power_flow(sys: &PowerSystem, tol: f64, max_iter: usize) -> Result<PowerFlowSolution> {
    let n = sys.buses.len();
    let y = network_ybus(sys);
    let kinds: Vec<BusKind> = sys.buses.iter().map(|b| b.kind).collect();
    let slack = kinds
        .iter()
        .position(|&k| k == BusKind::Slack)
        .expect("validated");
    let gen_at: Vec<bool> = {
        let mut g = vec![false; n];
        for m in &sys.machines {
            g[sys.bus_position(m.bus).expect("validated")] = true;
        }
        g
    };
    let p_spec: Vec<f64> = sys
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if gen_at[i] || b.kind == BusKind::Pv {
                b.p_gen - b.p_load
            } else {
                -b.p_load
            }
        })
        .collect();
    let q_spec: Vec<f64> = sys.buses.iter().map(|b| -b.q_load).collect();

    let mut vm: Vec<f64> = sys
        .buses
        .iter()
        .map(|b| {
            if b.kind == BusKind::Pq {
                1.0
            } else {
                b.voltage_mag
            }
        })
        .collect();
    let mut va = vec![sys.buses[slack].voltage_ang; n];

    // unknown ordering: angles of non-slack buses, then magnitudes of PQ buses
    let ang_idx: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
    let na = ang_idx.len();
    let dim = na + mag_idx.len();

    let mut iterations = 0;
    loop {
        let v: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(vm[i], va[i]))
            .collect();
        let s = injections(&y, &v);
        let mut mis = DVector::<f64>::zeros(dim);
        for (r, &i) in ang_idx.iter().enumerate() {
            mis[r] = p_spec[i] - s[i].re;
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            mis[na + r] = q_spec[i] - s[i].im;
        }
        let max_mismatch = mis.amax();
        if !max_mismatch.is_finite() {
            return Err(Error::NoConvergence {
                iterations,
                mismatch: max_mismatch,
            });
        }
        if max_mismatch <= tol {
            let mut p_gen = Vec::with_capacity(sys.n_gen());
            let mut q_gen = Vec::with_capacity(sys.n_gen());
            for m in &sys.machines {
                let i = sys.bus_position(m.bus).expect("validated");
                p_gen.push(s[i].re + sys.buses[i].p_load);
                q_gen.push(s[i].im + sys.buses[i].q_load);
            }
            return Ok(PowerFlowSolution {
                vm,
                va,
                p_gen,
                q_gen,
                iterations,
                max_mismatch,
            });
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                iterations,
                mismatch: max_mismatch,
            });
        }

        // dS_i/dtheta_j = -j V_i conj(Y_ij V_j)       (j != i)
        // dS_i/dtheta_i = j V_i conj(I_i) - j V_i conj(Y_ii V_i)
        // dS_i/d|V_j|   = V_i conj(Y_ij V_j) / |V_j|   (j != i)
        // dS_i/d|V_i|   = (V_i conj(I_i) + V_i conj(Y_ii V_i)) / |V_i|
        let cur: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|j| y[(i, j)] * v[j]).sum())
            .collect();
        let ds_dth = |i: usize, j: usize| -> Complex64 {
            let jv = Complex64::new(0.0, 1.0) * v[i];
            if i == j {
                jv * cur[i].conj() - jv * (y[(i, i)] * v[i]).conj()
            } else {
                -jv * (y[(i, j)] * v[j]).conj()
            }
        };
        let ds_dvm = |i: usize, j: usize| -> Complex64 {
            if i == j {
                (v[i] * cur[i].conj() + v[i] * (y[(i, i)] * v[i]).conj()) / vm[i]
            } else {
                v[i] * (y[(i, j)] * v[j]).conj() / vm[j]
            }
        };
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (r, &i) in ang_idx.iter().chain(mag_idx.iter()).enumerate() {
            let use_q = r >= na;
            for (c, &j) in ang_idx.iter().enumerate() {
                let d = ds_dth(i, j);
                jac[(r, c)] = if use_q { d.im } else { d.re };
            }
            for (c, &j) in mag_idx.iter().enumerate() {
                let d = ds_dvm(i, j);
                jac[(r, na + c)] = if use_q { d.im } else { d.re };
            }
        }
        let dx = jac.lu().solve(&mis).ok_or(Error::NoConvergence {
            iterations,
            mismatch: max_mismatch,
        })?;
        for (r, &i) in ang_idx.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            vm[i] += dx[na + r];
        }
        iterations += 1;
    }
}

/// Pre-fault operating point of the dynamic model.
///
/// `x0` is in [`StateLayout`] order. The controller set points
/// (`v_ref`, `p_ref`, per machine) form the input vector `u0`; they are
/// back-computed so every derivative vanishes at `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x0: Vec<f64>,
    pub v_ref: Vec<f64>,
    pub p_ref: Vec<f64>,
    pub loads: LoadAdmittances,
    /// Solved bus voltages, per bus position.
    pub bus_voltages: Vec<Complex64>,
}

impl Equilibrium {
    pub fn u0(&self) -> Vec<f64> {
        self.v_ref
            .iter()
            .zip(&self.p_ref)
            .flat_map(|(&v, &p)| [v, p])
            .collect()
    }
}

/// Back-solves all nine states of every machine from a converged power
/// flow.
pub fn init_dynamic_state(sys: &PowerSystem, pf: &PowerFlowSolution) -> Result<Equilibrium> {
    let layout: StateLayout = sys.layout();
    let mut x0 = vec![0.0; layout.len()];
    let mut v_ref = Vec::with_capacity(sys.n_gen());
    let mut p_ref = Vec::with_capacity(sys.n_gen());
    for (g, m) in sys.machines.iter().enumerate() {
        let exc = &sys.exciters[g];
        let gov = &sys.governors[g];
        let pos = sys.bus_position(m.bus).expect("validated");
        let v = pf.voltage(pos);
        let i = (Complex64::new(pf.p_gen[g], pf.q_gen[g]) / v).conj();
        let delta = (v + Complex64::new(m.ra, m.xq) * i).arg();
        let rc = Complex64::from_polar(1.0, -(delta - std::f64::consts::FRAC_PI_2));
        let (vdq, idq) = (v * rc, i * rc);
        let ed_p = vdq.re + m.ra * idq.re - m.xq_p * idq.im;
        let eq_p = vdq.im + m.ra * idq.im + m.xd_p * idq.re;
        let efd = eq_p + (m.xd - m.xd_p) * idq.re;
        let vr = (exc.ke + exc.saturation(efd)) * efd;
        if !(exc.vr_min..=exc.vr_max).contains(&vr) {
            return Err(Error::InitInfeasible(format!(
                "generator at bus {} needs VR = {vr:.4}, outside [{}, {}]",
                m.bus, exc.vr_min, exc.vr_max
            )));
        }
        let pm = pf.p_gen[g] + m.ra * i.norm_sqr();
        if !(gov.p_sv_min..=gov.p_sv_max).contains(&pm) {
            return Err(Error::InitInfeasible(format!(
                "generator at bus {} needs Pgv = {pm:.4}, outside [{}, {}]",
                m.bus, gov.p_sv_min, gov.p_sv_max
            )));
        }
        let base = SLOTS_PER_GEN * g;
        x0[base + DELTA] = delta;
        x0[base + PM] = pm;
        x0[base + PGV] = pm;
        x0[base + VR] = vr;
        x0[base + RF] = exc.kf / exc.tf * efd;
        x0[base + EFD] = efd;
        x0[base + ED_P] = ed_p;
        x0[base + EQ_P] = eq_p;
        x0[base + OMEGA] = OMEGA_S;
        v_ref.push(v.norm() + vr / exc.ka);
        p_ref.push(pm);
    }
    Ok(Equilibrium {
        x0,
        v_ref,
        p_ref,
        loads: LoadAdmittances::from_power_flow(sys, pf),
        bus_voltages: (0..sys.buses.len()).map(|k| pf.voltage(k)).collect(),
    })
}
