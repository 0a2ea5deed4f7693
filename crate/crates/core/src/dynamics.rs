//! Generator and controller equations, the monolithic full-order model and
//! fixed-step RK4 integration.
//!
//! Per generator (slots in [`StateLayout`] order):
//!
//! ```text
//! d delta/dt  = omega - ws
//! TCH dPm/dt  = -Pm + Pgv
//! TSV dPgv/dt = -Pgv + Pref - (omega/ws - 1) / RD                [P_sv_min, P_sv_max]
//! TA dVR/dt   = -VR + KA (Vref - Vt + Rf - KF/TF Efd)            [VR_min, VR_max]
//! TF dRf/dt   = -Rf + KF/TF Efd
//! TE dEfd/dt  = -(KE + SE(Efd)) Efd + VR
//! Tq0' dEd'/dt = -Ed' + (Xq - Xq') Iq
//! Td0' dEq'/dt = -Eq' - (Xd - Xd') Id + Efd
//! 2H/ws domega/dt = Pm - Pe - D (omega - ws)/ws
//! Pe = Ed' Id + Eq' Iq + (Xq' - Xd') Id Iq
//! ```
//!
//! Limited states are clamped after every step and their derivative is
//! zeroed while pushing outward.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::warn;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netsolve::{
    affine_ports, machine_currents, AreaNetwork, ExtraInjection, MachineCurrents, MachineSource,
    Snapshot,
};
use crate::powerflow::Equilibrium;
use crate::sysmodel::{
    BusId, FaultSpec, Partition, PowerSystem, DELTA, ED_P, EFD, EQ_P, OMEGA, OMEGA_S, PGV, PM, RF,
    SLOTS_PER_GEN, VR,
};

/// Machine, exciter and governor constants of one generating unit, with
/// its set points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitParams {
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xd_p: f64,
    pub xq: f64,
    pub xq_p: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub ra: f64,
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    pub vr_max: f64,
    pub vr_min: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub v_ref: f64,
    pub rd: f64,
    pub tsv: f64,
    pub tch: f64,
    pub p_sv_max: f64,
    pub p_sv_min: f64,
    pub p_ref: f64,
}

impl UnitParams {
    pub fn saliency(&self) -> f64 {
        self.xq_p - self.xd_p
    }

    pub fn source(&self, x: &[f64]) -> MachineSource {
        MachineSource::new(x[DELTA], x[ED_P], x[EQ_P], self.saliency())
    }

    /// Terminal voltage magnitude for given stator currents.
    pub fn terminal_voltage(&self, x: &[f64], id: f64, iq: f64) -> f64 {
        let vd = x[ED_P] - self.ra * id + self.xq_p * iq;
        let vq = x[EQ_P] - self.ra * iq - self.xd_p * id;
        vd.hypot(vq)
    }

    pub fn electrical_power(&self, x: &[f64], id: f64, iq: f64) -> f64 {
        x[ED_P] * id + x[EQ_P] * iq + (self.xq_p - self.xd_p) * id * iq
    }

    /// Writes the nine derivatives of one unit.
    pub fn derivative(&self, x: &[f64], id: f64, iq: f64, dx: &mut [f64]) {
        let vt = self.terminal_voltage(x, id, iq);
        let pe = self.electrical_power(x, id, iq);
        let omega = x[OMEGA];
        let vr = x[VR].clamp(self.vr_min, self.vr_max);
        let pgv = x[PGV].clamp(self.p_sv_min, self.p_sv_max);
        let efd = x[EFD];
        let kf_tf = self.kf / self.tf;

        dx[DELTA] = omega - OMEGA_S;
        dx[PM] = (-x[PM] + pgv) / self.tch;
        dx[PGV] = limited(
            x[PGV],
            (-x[PGV] + self.p_ref - (omega / OMEGA_S - 1.0) / self.rd) / self.tsv,
            self.p_sv_min,
            self.p_sv_max,
        );
        dx[VR] = limited(
            x[VR],
            (-x[VR] + self.ka * (self.v_ref - vt + x[RF] - kf_tf * efd)) / self.ta,
            self.vr_min,
            self.vr_max,
        );
        dx[RF] = (-x[RF] + kf_tf * efd) / self.tf;
        let se = self.se_a * (self.se_b * efd).exp();
        dx[EFD] = (-(self.ke + se) * efd + vr) / self.te;
        dx[ED_P] = (-x[ED_P] + (self.xq - self.xq_p) * iq) / self.tq0_p;
        dx[EQ_P] = (-x[EQ_P] - (self.xd - self.xd_p) * id + efd) / self.td0_p;
        dx[OMEGA] = OMEGA_S / (2.0 * self.h) * (x[PM] - pe - self.d * (omega - OMEGA_S) / OMEGA_S);
    }

    pub fn clamp(&self, x: &mut [f64]) {
        x[VR] = x[VR].clamp(self.vr_min, self.vr_max);
        x[PGV] = x[PGV].clamp(self.p_sv_min, self.p_sv_max);
    }
}

fn limited(x: f64, dx: f64, lo: f64, hi: f64) -> f64 {
    if (x >= hi && dx > 0.0) || (x <= lo && dx < 0.0) {
        0.0
    } else {
        dx
    }
}

/// Unit parameters of every machine, with set points from `eq`.
pub fn unit_params(sys: &PowerSystem, eq: &Equilibrium) -> Vec<UnitParams> {
    sys.machines
        .iter()
        .zip(&sys.exciters)
        .zip(&sys.governors)
        .enumerate()
        .map(|(g, ((m, e), gov))| UnitParams {
            h: m.h,
            d: m.d,
            xd: m.xd,
            xd_p: m.xd_p,
            xq: m.xq,
            xq_p: m.xq_p,
            td0_p: m.td0_p,
            tq0_p: m.tq0_p,
            ra: m.ra,
            ka: e.ka,
            ta: e.ta,
            ke: e.ke,
            te: e.te,
            kf: e.kf,
            tf: e.tf,
            vr_max: e.vr_max,
            vr_min: e.vr_min,
            se_a: e.se_a,
            se_b: e.se_b,
            v_ref: eq.v_ref[g],
            rd: gov.rd,
            tsv: gov.tsv,
            tch: gov.tch,
            p_sv_max: gov.p_sv_max,
            p_sv_min: gov.p_sv_min,
            p_ref: eq.p_ref[g],
        })
        .collect()
}

/// A set of units wired to one reduced network over
/// `[internal nodes; ports]`.
#[derive(Debug, Clone)]
pub struct UnitGroup {
    pub units: Vec<UnitParams>,
    pub net: AreaNetwork,
}

impl UnitGroup {
    pub fn n_states(&self) -> usize {
        SLOTS_PER_GEN * self.units.len()
    }

    pub fn sources(&self, x: &[f64]) -> Vec<MachineSource> {
        self.units
            .iter()
            .enumerate()
            .map(|(g, u)| u.source(&x[SLOTS_PER_GEN * g..]))
            .collect()
    }

    /// Derivatives once the machine currents are known.
    pub fn derivative_from_currents(&self, x: &[f64], cur: &[MachineCurrents], dx: &mut [f64]) {
        for (g, (u, c)) in self.units.iter().zip(cur).enumerate() {
            let r = SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1);
            u.derivative(&x[r.clone()], c.id, c.iq, &mut dx[r]);
        }
    }

    /// Derivatives for given port voltages (none for a whole-system group).
    pub fn derivative(
        &self,
        snapshot: Snapshot,
        x: &[f64],
        ports: &[Complex64],
        dx: &mut [f64],
    ) -> Result<()> {
        let y = self.net.y(snapshot);
        let sources = self.sources(x);
        let aff = affine_ports(y, &sources, &ExtraInjection::default())?;
        let v = crate::netsolve::to_real(ports);
        let iq = aff.iq(&v);
        let cur = machine_currents(y, &sources, &iq, ports, None);
        self.derivative_from_currents(x, &cur, dx);
        Ok(())
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (g, u) in self.units.iter().enumerate() {
            u.clamp(&mut x[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]);
        }
    }
}

/// A time-invariant ODE model driven through network snapshots.
pub trait Model {
    fn n_states(&self) -> usize;
    fn derivative(&self, snapshot: Snapshot, x: &[f64], dx: &mut [f64]) -> Result<()>;
    /// Clamps limited states after a step.
    fn clamp(&self, x: &mut [f64]);
    /// Number of entries in the full-system state written by `full_state`.
    fn n_full(&self) -> usize;
    /// Full-system state (in layout order) represented by `x`.
    fn full_state(&self, x: &[f64], out: &mut [f64]);
}

/// The whole system in full detail, one network solve per evaluation.
#[derive(Debug, Clone)]
pub struct FullModel {
    pub group: UnitGroup,
}

impl FullModel {
    pub fn new(sys: &PowerSystem, eq: &Equilibrium, fault: Option<&FaultSpec>) -> Result<Self> {
        Ok(FullModel {
            group: UnitGroup {
                units: unit_params(sys, eq),
                net: AreaNetwork::whole(sys, &eq.loads, fault)?,
            },
        })
    }
}

impl Model for FullModel {
    fn n_states(&self) -> usize {
        self.group.n_states()
    }

    fn derivative(&self, snapshot: Snapshot, x: &[f64], dx: &mut [f64]) -> Result<()> {
        if x.len() != self.n_states() || dx.len() != self.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries, model has {}",
                x.len(),
                self.n_states()
            )));
        }
        self.group.derivative(snapshot, x, &[], dx)
    }

    fn clamp(&self, x: &mut [f64]) {
        self.group.clamp(x)
    }

    fn n_full(&self) -> usize {
        self.n_states()
    }

    fn full_state(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x)
    }
}

/// External area in full detail, driven by the tie-line voltages.
///
/// The input vector is `u = (theta_1, V_1, theta_2, V_2, ...)`, one pair
/// per tie line, holding the voltage of the tie's study-side bus. The
/// outputs are the currents the area injects into each boundary bus, as
/// `(Re, Im)` pairs in boundary-bus order.
#[derive(Debug, Clone)]
pub struct ExternalArea {
    pub group: UnitGroup,
    /// Boundary-bus position of each tie line.
    pub tie_boundary: Vec<usize>,
    pub n_boundary: usize,
}

impl ExternalArea {
    pub fn new(sys: &PowerSystem, part: &Partition, eq: &Equilibrium) -> Result<Self> {
        let (_, ext) = sys.split_generators(part);
        if ext.is_empty() {
            return Err(Error::EmptyExternal);
        }
        let units = unit_params(sys, eq);
        let boundary: Vec<BusId> = part.boundary_buses.iter().copied().collect();
        let tie_boundary = (0..part.n_tie())
            .map(|k| {
                let b = part.tie_ends(sys, k).0;
                boundary
                    .iter()
                    .position(|&x| x == b)
                    .expect("boundary bus of tie")
            })
            .collect();
        Ok(ExternalArea {
            group: UnitGroup {
                units: ext.iter().map(|&g| units[g]).collect(),
                net: AreaNetwork::external(sys, part, &eq.loads)?,
            },
            tie_boundary,
            n_boundary: boundary.len(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.group.n_states()
    }

    pub fn n_inputs(&self) -> usize {
        2 * self.tie_boundary.len()
    }

    pub fn n_outputs(&self) -> usize {
        2 * self.n_boundary
    }

    /// Pre-fault input vector from the solved bus voltages.
    pub fn u0(&self, sys: &PowerSystem, eq: &Equilibrium) -> Vec<f64> {
        self.group
            .net
            .port_buses
            .iter()
            .flat_map(|&b| {
                let v = eq.bus_voltages[sys.bus_position(b).expect("validated")];
                [v.arg(), v.norm()]
            })
            .collect()
    }

    /// Boundary injections from the per-tie currents drawn into the area.
    pub fn boundary_injections(&self, tie_currents: &[Complex64], out: &mut [f64]) {
        out.fill(0.0);
        for (k, c) in tie_currents.iter().enumerate() {
            let b = self.tie_boundary[k];
            out[2 * b] -= c.re;
            out[2 * b + 1] -= c.im;
        }
    }

    /// Derivatives `dx` and boundary injections `y` at state `x`, input `u`.
    pub fn evaluate(&self, x: &[f64], u: &[f64], dx: &mut [f64], y: &mut [f64]) -> Result<()> {
        let ports: Vec<Complex64> = u
            .chunks_exact(2)
            .map(|p| Complex64::from_polar(p[1], p[0]))
            .collect();
        let net = self.group.net.y(Snapshot::PreFault);
        let sources = self.group.sources(x);
        let aff = affine_ports(net, &sources, &ExtraInjection::default())?;
        let v = crate::netsolve::to_real(&ports);
        let iq = aff.iq(&v);
        let cur = machine_currents(net, &sources, &iq, &ports, None);
        self.group.derivative_from_currents(x, &cur, dx);
        self.boundary_injections(&aff.port_currents(&v), y);
        Ok(())
    }
}

/// Right-hand side of the whole-system model; the network snapshot must
/// match the interval being evaluated.
pub fn rhs(model: &FullModel, snapshot: Snapshot, x: &[f64]) -> Result<Vec<f64>> {
    let mut dx = vec![0.0; x.len()];
    model.derivative(snapshot, x, &mut dx)?;
    Ok(dx)
}

/// Fixed time grid with the fault interval snapped to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub h: f64,
    pub n_steps: usize,
    /// First step on the fault-on network, and first step after clearing.
    pub fault_steps: Option<(usize, usize)>,
}

impl Grid {
    pub fn new(h: f64, t_end: f64, fault: Option<&FaultSpec>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::validation("h", "time step must be > 0"));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::validation("t_end", "end time must be > 0"));
        }
        let n_steps = snap(t_end, h, "t_end");
        let fault_steps = match fault {
            Some(f) => {
                f.validate(Some(t_end))?;
                let on = snap(f.t_on, h, "t_on");
                let clear = snap(f.t_clear, h, "t_clear").max(on + 1);
                Some((on, clear.min(n_steps)))
            }
            None => None,
        };
        Ok(Grid {
            h,
            n_steps,
            fault_steps,
        })
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.h
    }

    /// Network snapshot used on `[t_step, t_step + h)`.
    pub fn snapshot(&self, step: usize) -> Snapshot {
        match self.fault_steps {
            Some((on, clear)) if step >= on && step < clear => Snapshot::OnFault,
            Some((_, clear)) if step >= clear => Snapshot::PostFault,
            _ => Snapshot::PreFault,
        }
    }
}

fn snap(t: f64, h: f64, what: &str) -> usize {
    let n = (t / h).round();
    if (n * h - t).abs() > 1e-9 * t.abs().max(1.0) {
        warn!(
            "{what} = {t} s is off the {h} s grid; snapped to {} s",
            n * h
        );
    }
    n as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: String,
}

/// Time grid, full-system trajectory and event log of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    /// Row-major, one row per time point.
    #[serde(skip)]
    pub states: Vec<f64>,
    pub events: Vec<Event>,
    /// Seconds spent in the integration loop.
    pub wall_clock: f64,
}

impl SimResult {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_cols();
        &self.states[i * n..(i + 1) * n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.times.len()).map(|i| self.row(i)[j]).collect()
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.times.len() - 1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = std::io::BufWriter::new(file);
        let mut line = String::from("t");
        for c in &self.columns {
            line.push(',');
            line.push_str(c);
        }
        writeln!(w, "{line}").map_err(io_err)?;
        for (i, t) in self.times.iter().enumerate() {
            line.clear();
            line.push_str(&t.to_string());
            for v in self.row(i) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

/// Incremental trajectory recorder shared by the run drivers.
pub struct Recorder {
    pub result: SimResult,
    scratch: Vec<f64>,
}

impl Recorder {
    pub fn new(columns: Vec<String>, capacity: usize) -> Self {
        let n = columns.len();
        Recorder {
            result: SimResult {
                columns,
                times: Vec::with_capacity(capacity),
                states: Vec::with_capacity(capacity * n),
                events: Vec::new(),
                wall_clock: 0.0,
            },
            scratch: vec![0.0; n],
        }
    }

    pub fn push(&mut self, t: f64, model: &dyn Model, x: &[f64]) {
        model.full_state(x, &mut self.scratch);
        self.result.times.push(t);
        self.result.states.extend_from_slice(&self.scratch);
    }

    pub fn event(&mut self, time: f64, kind: impl Into<String>) {
        self.result.events.push(Event {
            time,
            kind: kind.into(),
        });
    }
}

/// One classical RK4 step of length `h` on a fixed snapshot.
pub fn rk4_step(
    model: &dyn Model,
    snapshot: Snapshot,
    x: &mut [f64],
    h: f64,
    work: &mut [Vec<f64>; 5],
) -> Result<()> {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = work;
    model.derivative(snapshot, x, k1)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    model.derivative(snapshot, tmp, k2)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    model.derivative(snapshot, tmp, k3)?;
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    model.derivative(snapshot, tmp, k4)?;
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
    model.clamp(x);
    Ok(())
}

pub fn rk4_work(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

/// Advances `x` over steps `from..to` of `grid`, recording every new point.
pub fn advance(
    model: &dyn Model,
    grid: &Grid,
    x: &mut [f64],
    from: usize,
    to: usize,
    rec: &mut Recorder,
) -> Result<()> {
    let mut work = rk4_work(x.len());
    for step in from..to {
        let snapshot = grid.snapshot(step);
        let prev = if step == 0 {
            Snapshot::PreFault
        } else {
            grid.snapshot(step - 1)
        };
        if snapshot != prev {
            rec.event(grid.time(step), event_name(snapshot));
        }
        rk4_step(model, snapshot, x, grid.h, &mut work)?;
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                time: grid.time(step + 1),
                index,
            });
        }
        rec.push(grid.time(step + 1), model, x);
    }
    Ok(())
}

fn event_name(s: Snapshot) -> &'static str {
    match s {
        Snapshot::OnFault => "fault-on",
        Snapshot::PostFault => "fault-cleared",
        Snapshot::PreFault => "pre-fault",
    }
}

/// Integrates the whole system in full detail from `x0`.
pub fn integrate(
    sys: &PowerSystem,
    eq: &Equilibrium,
    fault: Option<&FaultSpec>,
    t_end: f64,
    h: f64,
) -> Result<SimResult> {
    let grid = Grid::new(h, t_end, fault)?;
    let model = FullModel::new(sys, eq, fault)?;
    integrate_model(&model, &grid, &eq.x0, sys.layout().column_names())
}

/// Integrates any [`Model`] over the whole grid.
pub fn integrate_model(
    model: &dyn Model,
    grid: &Grid,
    x0: &[f64],
    columns: Vec<String>,
) -> Result<SimResult> {
    let mut x = x0.to_vec();
    let mut rec = Recorder::new(columns, grid.n_steps + 1);
    let start = Instant::now();
    rec.push(0.0, model, &x);
    advance(model, grid, &mut x, 0, grid.n_steps, &mut rec)?;
    rec.result.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec.result)
}
