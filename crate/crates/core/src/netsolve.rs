//! Admittance matrices, Kron reduction and the algebraic network solve.
//!
//! Machines connect to the network through an internal node behind
//! `Ra + jXd'`. The internal source of machine `m` is
//!
//! ```text
//! E_m = (Ed' + (Xq' - Xd') Iq + j Eq') * exp(j(delta - pi/2))
//! ```
//!
//! so a salient machine (`Xq' != Xd'`) carries a correction term driven by
//! its own q-axis current. The correction makes the network equations
//! real-linear rather than complex-linear in the unknown currents; they are
//! solved exactly, together with any port voltages, by [`affine_ports`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::powerflow::PowerFlowSolution;
use crate::sysmodel::{Branch, BusId, FaultSpec, Partition, PowerSystem};

pub type CMatrix = DMatrix<Complex64>;

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Snapshot {
    PreFault,
    OnFault,
    PostFault,
}

/// Constant-admittance equivalents of the bus loads, per bus position.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadAdmittances(pub Vec<Complex64>);

impl LoadAdmittances {
    /// `y = (P - jQ) / |V|^2` at the solved voltage of each bus.
    pub fn from_power_flow(sys: &PowerSystem, pf: &PowerFlowSolution) -> Self {
        LoadAdmittances(
            sys.buses
                .iter()
                .zip(&pf.vm)
                .map(|(b, &vm)| Complex64::new(b.p_load, -b.q_load) / (vm * vm))
                .collect(),
        )
    }
}

/// Incremental node-admittance assembly.
#[derive(Debug, Clone)]
pub(crate) struct NodeBuilder {
    y: CMatrix,
}

impl NodeBuilder {
    pub(crate) fn new(n: usize) -> Self {
        NodeBuilder {
            y: CMatrix::zeros(n, n),
        }
    }

    /// Pi-model branch with an off-nominal tap on the `from` side.
    pub(crate) fn branch(&mut self, from: usize, to: usize, br: &Branch) {
        let ys = Complex64::new(br.r, br.x).inv();
        let bc = Complex64::new(0.0, br.b_charging / 2.0);
        let t = br.tap_ratio;
        self.y[(from, from)] += (ys + bc) / (t * t);
        self.y[(to, to)] += ys + bc;
        self.y[(from, to)] -= ys / t;
        self.y[(to, from)] -= ys / t;
    }

    pub(crate) fn shunt(&mut self, node: usize, y: Complex64) {
        self.y[(node, node)] += y;
    }

    pub(crate) fn series(&mut self, a: usize, b: usize, z: Complex64) {
        let y = z.inv();
        self.y[(a, a)] += y;
        self.y[(b, b)] += y;
        self.y[(a, b)] -= y;
        self.y[(b, a)] -= y;
    }

    pub(crate) fn finish(self) -> CMatrix {
        self.y
    }
}

/// Bus admittance matrix of branches and bus shunts (no loads), in bus
/// position order.
pub fn network_ybus(sys: &PowerSystem) -> CMatrix {
    let mut nb = NodeBuilder::new(sys.buses.len());
    for br in sys.branches.iter().filter(|b| b.in_service()) {
        let f = sys.bus_position(br.from_bus).expect("validated");
        let t = sys.bus_position(br.to_bus).expect("validated");
        nb.branch(f, t, br);
    }
    for (i, b) in sys.buses.iter().enumerate() {
        nb.shunt(i, Complex64::new(b.shunt_g, b.shunt_b));
    }
    nb.finish()
}

fn check_fault(snapshot: Snapshot, fault: Option<&FaultSpec>) -> Result<()> {
    match (snapshot, fault) {
        (Snapshot::OnFault, None) => Err(Error::validation(
            "fault",
            "on-fault snapshot needs a fault",
        )),
        (Snapshot::PreFault | Snapshot::PostFault, Some(_)) => Err(Error::validation(
            "fault",
            "fault given for a snapshot without a fault",
        )),
        _ => Ok(()),
    }
}

/// Full bus admittance matrix for one network snapshot: branches, shunts,
/// constant-admittance loads, and the fault shunt when `snapshot` is
/// on-fault. The post-fault network is the restored pre-fault network.
pub fn build_ybus(
    sys: &PowerSystem,
    loads: &LoadAdmittances,
    snapshot: Snapshot,
    fault: Option<&FaultSpec>,
) -> Result<CMatrix> {
    check_fault(snapshot, fault)?;
    let mut y = network_ybus(sys);
    for (i, yl) in loads.0.iter().enumerate() {
        y[(i, i)] += yl;
    }
    if let Some(f) = fault {
        let k = sys
            .bus_position(f.bus)
            .ok_or_else(|| Error::validation("fault.bus", format!("unknown bus {}", f.bus)))?;
        y[(k, k)] += Complex64::new(f.conductance, 0.0);
    }
    Ok(y)
}

/// Network reduced to a set of retained nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork {
    pub retained: Vec<usize>,
    pub y: CMatrix,
    pub snapshot: Snapshot,
}

/// Schur complement `Y_rr - Y_re Y_ee^-1 Y_er` over the retained nodes.
pub fn kron_reduce(y: &CMatrix, retained: &[usize]) -> Result<ReducedNetwork> {
    let n = y.nrows();
    let mut keep = vec![false; n];
    for &r in retained {
        keep[r] = true;
    }
    let elim: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        CMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])])
    };
    let y_rr = pick(retained, retained);
    if elim.is_empty() {
        return Ok(ReducedNetwork {
            retained: retained.to_vec(),
            y: y_rr,
            snapshot: Snapshot::PreFault,
        });
    }
    let y_ee = pick(&elim, &elim);
    let y_er = pick(&elim, retained);
    let y_re = pick(retained, &elim);
    let scale = y_ee.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let lu = y_ee.lu();
    let pivot_min = (0..elim.len())
        .map(|i| lu.u()[(i, i)].norm())
        .fold(f64::INFINITY, f64::min);
    if !(pivot_min > 1e-13 * scale.max(1e-300)) {
        return Err(Error::SingularBlock);
    }
    let x = lu.solve(&y_er).ok_or(Error::SingularBlock)?;
    let y_red = y_rr - y_re * x;
    if y_red.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::SingularBlock);
    }
    Ok(ReducedNetwork {
        retained: retained.to_vec(),
        y: y_red,
        snapshot: Snapshot::PreFault,
    })
}

/// Which part of the network an [`AreaNetwork`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaKind {
    /// The whole system, ports-free.
    Whole,
    /// Study area; ports are the boundary buses.
    Study,
    /// External area; ports are one terminal per tie line, held at the
    /// voltage of that tie's study-side bus.
    External,
}

/// Kron-reduced network of one area over `[machine internal nodes; ports]`.
#[derive(Debug, Clone)]
pub struct AreaNetwork {
    pub kind: AreaKind,
    /// Generator indices (into `PowerSystem::machines`) in node order.
    pub gens: Vec<usize>,
    /// Bus ids of the ports (boundary buses, or tie study-side buses).
    pub port_buses: Vec<BusId>,
    pub snapshots: BTreeMap<Snapshot, ReducedNetwork>,
}

impl AreaNetwork {
    pub fn n_machines(&self) -> usize {
        self.gens.len()
    }

    pub fn n_ports(&self) -> usize {
        self.port_buses.len()
    }

    pub fn y(&self, snapshot: Snapshot) -> &CMatrix {
        let s = match snapshot {
            Snapshot::OnFault if self.snapshots.contains_key(&Snapshot::OnFault) => {
                Snapshot::OnFault
            }
            _ => Snapshot::PreFault,
        };
        &self.snapshots[&s].y
    }

    /// Whole-system network reduced to all machine internal nodes.
    pub fn whole(
        sys: &PowerSystem,
        loads: &LoadAdmittances,
        fault: Option<&FaultSpec>,
    ) -> Result<Self> {
        let gens: Vec<usize> = (0..sys.n_gen()).collect();
        let buses: Vec<BusId> = sys.buses.iter().map(|b| b.id).collect();
        let branches: Vec<usize> = (0..sys.branches.len()).collect();
        build_area(
            sys,
            loads,
            fault,
            AreaKind::Whole,
            &buses,
            &branches,
            &gens,
            &[],
            &[],
        )
    }

    pub fn study(
        sys: &PowerSystem,
        part: &Partition,
        loads: &LoadAdmittances,
        fault: Option<&FaultSpec>,
    ) -> Result<Self> {
        let (gens, _) = sys.split_generators(part);
        let buses: Vec<BusId> = sys
            .buses
            .iter()
            .map(|b| b.id)
            .filter(|&b| part.is_study(b))
            .collect();
        let branches: Vec<usize> = (0..sys.branches.len())
            .filter(|&k| {
                let br = &sys.branches[k];
                part.is_study(br.from_bus) && part.is_study(br.to_bus)
            })
            .collect();
        let ports: Vec<BusId> = part.boundary_buses.iter().copied().collect();
        build_area(
            sys,
            loads,
            fault,
            AreaKind::Study,
            &buses,
            &branches,
            &gens,
            &ports,
            &[],
        )
    }

    pub fn external(sys: &PowerSystem, part: &Partition, loads: &LoadAdmittances) -> Result<Self> {
        let (_, gens) = sys.split_generators(part);
        let buses: Vec<BusId> = sys
            .buses
            .iter()
            .map(|b| b.id)
            .filter(|&b| !part.is_study(b))
            .collect();
        let branches: Vec<usize> = (0..sys.branches.len())
            .filter(|&k| {
                let br = &sys.branches[k];
                !part.is_study(br.from_bus) && !part.is_study(br.to_bus)
            })
            .collect();
        let ports: Vec<BusId> = (0..part.n_tie()).map(|k| part.tie_ends(sys, k).0).collect();
        build_area(
            sys,
            loads,
            None,
            AreaKind::External,
            &buses,
            &branches,
            &gens,
            &ports,
            &part.tie_lines,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn build_area(
    sys: &PowerSystem,
    loads: &LoadAdmittances,
    fault: Option<&FaultSpec>,
    kind: AreaKind,
    buses: &[BusId],
    branches: &[usize],
    gens: &[usize],
    ports: &[BusId],
    ties: &[usize],
) -> Result<AreaNetwork> {
    // node order: buses, tie terminals, machine internal nodes
    let nb = buses.len();
    let nt = ties.len();
    let ng = gens.len();
    let node_of: BTreeMap<BusId, usize> = buses.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let mut builder = NodeBuilder::new(nb + nt + ng);
    for &k in branches {
        let br = &sys.branches[k];
        if br.in_service() {
            builder.branch(node_of[&br.from_bus], node_of[&br.to_bus], br);
        }
    }
    for (t, &k) in ties.iter().enumerate() {
        let br = &sys.branches[k];
        let term = nb + t;
        if let Some(&to) = node_of.get(&br.to_bus) {
            builder.branch(term, to, br);
        } else {
            builder.branch(node_of[&br.from_bus], term, br);
        }
    }
    for &b in buses {
        let pos = sys.bus_position(b).expect("validated");
        let bus = &sys.buses[pos];
        builder.shunt(
            node_of[&b],
            Complex64::new(bus.shunt_g, bus.shunt_b) + loads.0[pos],
        );
    }
    for (i, &g) in gens.iter().enumerate() {
        let m = &sys.machines[g];
        builder.series(nb + nt + i, node_of[&m.bus], Complex64::new(m.ra, m.xd_p));
    }
    let base = builder.finish();

    let mut retained: Vec<usize> = (0..ng).map(|i| nb + nt + i).collect();
    match kind {
        AreaKind::External => retained.extend(nb..nb + nt),
        _ => retained.extend(ports.iter().map(|b| node_of[b])),
    }

    let mut snapshots = BTreeMap::new();
    let mut pre = kron_reduce(&base, &retained)?;
    pre.snapshot = Snapshot::PreFault;
    snapshots.insert(Snapshot::PreFault, pre);
    if let Some(f) = fault {
        if let Some(&node) = node_of.get(&f.bus) {
            let mut y = base.clone();
            y[(node, node)] += Complex64::new(f.conductance, 0.0);
            let mut on = kron_reduce(&y, &retained)?;
            on.snapshot = Snapshot::OnFault;
            snapshots.insert(Snapshot::OnFault, on);
        }
    }
    Ok(AreaNetwork {
        kind,
        gens: gens.to_vec(),
        port_buses: ports.to_vec(),
        snapshots,
    })
}

/// Internal source of one machine, see the module docs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineSource {
    /// `(Ed' + j Eq') * rot`
    pub e: Complex64,
    /// `exp(j(delta - pi/2))`, the dq-to-network rotation.
    pub rot: Complex64,
    /// Saliency `Xq' - Xd'`.
    pub saliency: f64,
}

impl MachineSource {
    pub fn new(delta: f64, ed_p: f64, eq_p: f64, saliency: f64) -> Self {
        let rot = Complex64::from_polar(1.0, delta - std::f64::consts::FRAC_PI_2);
        MachineSource {
            e: Complex64::new(ed_p, eq_p) * rot,
            rot,
            saliency,
        }
    }

    /// Source voltage including the saliency correction.
    pub fn emf(&self, iq: f64) -> Complex64 {
        self.e + self.rot * (self.saliency * iq)
    }
}

/// Machine q-axis currents and port injections as affine functions of the
/// real port voltages `v = [Re V_1, Im V_1, Re V_2, ...]`:
///
/// ```text
/// Iq  = iq0 + iq_v * v
/// I_p = ip0 + ip_v * v     (current injected into the area at port p)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePorts {
    pub iq0: DVector<f64>,
    pub iq_v: DMatrix<f64>,
    pub ip0: Vec<Complex64>,
    pub ip_v: DMatrix<f64>,
}

impl AffinePorts {
    pub fn iq(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.iq0.iter().copied().collect();
        if !v.is_empty() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += (0..v.len()).map(|c| self.iq_v[(i, c)] * v[c]).sum::<f64>();
            }
        }
        out
    }

    pub fn port_currents(&self, v: &[f64]) -> Vec<Complex64> {
        self.ip0
            .iter()
            .enumerate()
            .map(|(p, &c)| {
                let mut re = c.re;
                let mut im = c.im;
                for (k, &vk) in v.iter().enumerate() {
                    re += self.ip_v[(2 * p, k)] * vk;
                    im += self.ip_v[(2 * p + 1, k)] * vk;
                }
                Complex64::new(re, im)
            })
            .collect()
    }
}

/// Extra current injection at the retained nodes, affine in the port
/// voltages: `w = w0 + w_v * v` with `w_v` acting on real/imag pairs.
#[derive(Debug, Clone, Default)]
pub struct ExtraInjection<'a> {
    pub w0: Option<&'a [Complex64]>,
    pub w_v: Option<&'a DMatrix<f64>>,
}

/// Solves the network equations of `[machines; ports]` for the machine
/// q-axis currents and port injections, affine in the port voltages.
///
/// `y` is the `(k + p) x (k + p)` admittance over the retained nodes, with
/// the `k` machine internal nodes first.
pub fn affine_ports(
    y: &CMatrix,
    sources: &[MachineSource],
    extra: &ExtraInjection<'_>,
) -> Result<AffinePorts> {
    let k = sources.len();
    let n = y.nrows();
    if y.ncols() != n || n < k {
        return Err(Error::DimensionMismatch(format!(
            "admittance {}x{} for {} machines",
            y.nrows(),
            y.ncols(),
            k
        )));
    }
    let p = n - k;
    // base injection at every retained node with Iq = 0 and v = 0
    let mut base = vec![Complex64::new(0.0, 0.0); n];
    for (i, b) in base.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, s) in sources.iter().enumerate() {
            acc += y[(i, j)] * s.e;
        }
        if let Some(w0) = extra.w0 {
            acc += w0[i];
        }
        *b = acc;
    }
    // d(injection_i)/d(v) as a 2 x 2p real block per node
    let inj_v = |i: usize, col: usize| -> Complex64 {
        let mut d = Complex64::new(0.0, 0.0);
        let q = col / 2;
        let unit = if col.is_multiple_of(2) {
            Complex64::new(1.0, 0.0)
        } else {
            J
        };
        d += y[(i, k + q)] * unit;
        if let Some(wv) = extra.w_v {
            d += Complex64::new(wv[(2 * i, col)], wv[(2 * i + 1, col)]);
        }
        d
    };

    let salient = sources.iter().any(|s| s.saliency != 0.0);
    // Iq_m = Im(conj(rot_m) * injection_m)
    let mut rhs = DMatrix::<f64>::zeros(k, 1 + 2 * p);
    for (m, s) in sources.iter().enumerate() {
        let rc = s.rot.conj();
        rhs[(m, 0)] = (rc * base[m]).im;
        for col in 0..2 * p {
            rhs[(m, 1 + col)] = (rc * inj_v(m, col)).im;
        }
    }
    let sol = if salient {
        let mut mat = DMatrix::<f64>::identity(k, k);
        for (m, sm) in sources.iter().enumerate() {
            let rc = sm.rot.conj();
            for (j, sj) in sources.iter().enumerate() {
                if sj.saliency != 0.0 {
                    mat[(m, j)] -= sj.saliency * (rc * y[(m, j)] * sj.rot).im;
                }
            }
        }
        mat.lu().solve(&rhs).ok_or(Error::SingularNetwork)?
    } else {
        rhs
    };
    let iq0 = sol.column(0).into_owned();
    let iq_v = sol.columns(1, 2 * p).into_owned();

    let mut ip0 = Vec::with_capacity(p);
    let mut ip_v = DMatrix::<f64>::zeros(2 * p, 2 * p);
    for q in 0..p {
        let i = k + q;
        let mut c0 = base[i];
        for (j, s) in sources.iter().enumerate() {
            if s.saliency != 0.0 {
                c0 += y[(i, j)] * s.rot * (s.saliency * iq0[j]);
            }
        }
        ip0.push(c0);
        for col in 0..2 * p {
            let mut d = inj_v(i, col);
            for (j, s) in sources.iter().enumerate() {
                if s.saliency != 0.0 {
                    d += y[(i, j)] * s.rot * (s.saliency * iq_v[(j, col)]);
                }
            }
            ip_v[(2 * q, col)] = d.re;
            ip_v[(2 * q + 1, col)] = d.im;
        }
    }
    Ok(AffinePorts {
        iq0,
        iq_v,
        ip0,
        ip_v,
    })
}

/// Terminal quantities of one machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineCurrents {
    pub id: f64,
    pub iq: f64,
    /// Network-frame current out of the machine.
    pub current: Complex64,
}

/// Machine and port currents for given sources and port voltages.
///
/// `y` is a reduced network over `[machines; ports]`; `port_voltages` has one
/// entry per port. Returns the per-machine currents and the current each
/// port injects into the network.
pub fn solve_machine_currents(
    y: &CMatrix,
    sources: &[MachineSource],
    port_voltages: &[Complex64],
) -> Result<(Vec<MachineCurrents>, Vec<Complex64>)> {
    let k = sources.len();
    if y.nrows() != k + port_voltages.len() {
        return Err(Error::DimensionMismatch(format!(
            "network has {} nodes, got {} machines and {} ports",
            y.nrows(),
            k,
            port_voltages.len()
        )));
    }
    let aff = affine_ports(y, sources, &ExtraInjection::default())?;
    let v = to_real(port_voltages);
    let iq = aff.iq(&v);
    let machines = machine_currents(y, sources, &iq, port_voltages, None);
    Ok((machines, aff.port_currents(&v)))
}

/// Machine currents once the q-axis currents are known.
pub fn machine_currents(
    y: &CMatrix,
    sources: &[MachineSource],
    iq: &[f64],
    port_voltages: &[Complex64],
    w0: Option<&[Complex64]>,
) -> Vec<MachineCurrents> {
    let k = sources.len();
    let emf: Vec<Complex64> = sources.iter().zip(iq).map(|(s, &q)| s.emf(q)).collect();
    (0..k)
        .map(|m| {
            let mut c = Complex64::new(0.0, 0.0);
            for (j, e) in emf.iter().enumerate() {
                c += y[(m, j)] * e;
            }
            for (q, v) in port_voltages.iter().enumerate() {
                c += y[(m, k + q)] * v;
            }
            if let Some(w) = w0 {
                c += w[m];
            }
            let dq = c * sources[m].rot.conj();
            MachineCurrents {
                id: dq.re,
                iq: dq.im,
                current: c,
            }
        })
        .collect()
}

pub fn to_real(v: &[Complex64]) -> Vec<f64> {
    v.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn from_real(v: &[f64]) -> Vec<Complex64> {
    v.chunks_exact(2)
        .map(|c| Complex64::new(c[0], c[1]))
        .collect()
}

/// Values crossing the study/external boundary at one exchange instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryExchange {
    /// Per tie line: (angle, magnitude) of its study-side bus.
    pub tie_voltages: Vec<(f64, f64)>,
    /// Per boundary bus: current injected from the external area.
    pub boundary_currents: Vec<Complex64>,
}

impl BoundaryExchange {
    /// External-area input vector `(theta_1, V_1, theta_2, V_2, ...)`.
    pub fn u_vector(&self) -> Vec<f64> {
        self.tie_voltages
            .iter()
            .flat_map(|&(a, m)| [a, m])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::BranchStatus;

    fn line(r: f64, x: f64) -> Branch {
        Branch {
            from_bus: 1,
            to_bus: 2,
            r,
            x,
            b_charging: 0.0,
            tap_ratio: 1.0,
            status: BranchStatus::In,
        }
    }

    #[test]
    fn series_branch_sign_convention() {
        let mut nb = NodeBuilder::new(2);
        nb.branch(0, 1, &line(0.0, 0.1));
        let y = nb.finish();
        // 1/(j0.1) = -j10 on the diagonal, +j10 off it
        assert!((y[(0, 0)] - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert!((y[(0, 1)] - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        // power balance oracle: sending power equals receiving power (lossless)
        let v = [
            Complex64::from_polar(1.0, 0.1),
            Complex64::from_polar(1.0, 0.0),
        ];
        let i0 = y[(0, 0)] * v[0] + y[(0, 1)] * v[1];
        let i1 = y[(1, 0)] * v[0] + y[(1, 1)] * v[1];
        let s0 = v[0] * i0.conj();
        let s1 = v[1] * i1.conj();
        assert!((s0.re + s1.re).abs() < 1e-12);
        assert!((s0.re - (0.1f64).sin() / 0.1).abs() < 1e-12);
    }

    #[test]
    fn shunt_lands_on_diagonal() {
        let mut nb = NodeBuilder::new(3);
        nb.shunt(2, Complex64::new(0.0, 0.05));
        assert_eq!(nb.finish()[(2, 2)], Complex64::new(0.0, 0.05));
    }

    #[test]
    fn fault_snapshot_adds_large_conductance() {
        let sys = crate::data::nine_bus();
        let loads = LoadAdmittances(vec![Complex64::new(0.0, 0.0); 9]);
        let f = FaultSpec::new(7, 0.1, 0.2);
        let y = build_ybus(&sys, &loads, Snapshot::OnFault, Some(&f)).unwrap();
        let k = sys.bus_position(7).unwrap();
        assert!(y[(k, k)].re >= 1e6);
        assert!(build_ybus(&sys, &loads, Snapshot::OnFault, None).is_err());
        assert!(build_ybus(&sys, &loads, Snapshot::PreFault, Some(&f)).is_err());
    }

    #[test]
    fn kron_identity_when_nothing_eliminated() {
        let mut nb = NodeBuilder::new(2);
        nb.branch(0, 1, &line(0.01, 0.1));
        nb.shunt(0, Complex64::new(0.1, 0.0));
        let y = nb.finish();
        let red = kron_reduce(&y, &[0, 1]).unwrap();
        assert_eq!(red.y, y);
    }

    #[test]
    fn kron_chain_is_series_combination() {
        let (za, zb) = (Complex64::new(0.01, 0.1), Complex64::new(0.02, 0.3));
        let mut nb = NodeBuilder::new(3);
        nb.series(0, 1, za);
        nb.series(1, 2, zb);
        let red = kron_reduce(&nb.finish(), &[0, 2]).unwrap();
        let y = (za + zb).inv();
        assert!((red.y[(0, 0)] - y).norm() < 1e-12);
        assert!((red.y[(0, 1)] + y).norm() < 1e-12);
    }

    #[test]
    fn kron_isolated_node_is_singular() {
        let mut nb = NodeBuilder::new(3);
        nb.series(0, 1, Complex64::new(0.0, 0.1));
        assert!(matches!(
            kron_reduce(&nb.finish(), &[0, 1]),
            Err(Error::SingularBlock)
        ));
    }

    #[test]
    fn kron_reproduces_retained_voltages() {
        let sys = crate::data::two_area();
        let y = network_ybus(&sys);
        let mut y = y;
        for i in 0..y.nrows() {
            y[(i, i)] += Complex64::new(0.5, -0.2);
        }
        let retained = [0usize, 3, 6, 9];
        let red = kron_reduce(&y, &retained).unwrap();
        let inj = [
            Complex64::new(1.0, 0.2),
            Complex64::new(-0.3, 0.5),
            Complex64::new(0.7, -0.1),
            Complex64::new(0.0, 0.4),
        ];
        let mut full_i = DVector::<Complex64>::zeros(y.nrows());
        for (k, &r) in retained.iter().enumerate() {
            full_i[r] = inj[k];
        }
        let v_full = y.clone().lu().solve(&full_i).unwrap();
        let v_red = red
            .y
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(&inj))
            .unwrap();
        for (k, &r) in retained.iter().enumerate() {
            assert!((v_full[r] - v_red[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn machine_with_emf_equal_to_bus_voltage_carries_no_current() {
        // one machine behind jX to a port held at the EMF
        let mut nb = NodeBuilder::new(2);
        nb.series(0, 1, Complex64::new(0.0, 0.3));
        let y = nb.finish();
        let src = MachineSource::new(0.4, 0.2, 1.0, 0.0);
        let (m, p) = solve_machine_currents(&y, &[src], &[src.e]).unwrap();
        assert!(m[0].current.norm() < 1e-14);
        assert!(p[0].norm() < 1e-14);
    }

    #[test]
    fn symmetric_pair_draws_equal_currents() {
        let mut nb = NodeBuilder::new(3);
        nb.series(0, 2, Complex64::new(0.0, 0.2));
        nb.series(1, 2, Complex64::new(0.0, 0.2));
        nb.shunt(2, Complex64::new(1.0, -0.3));
        let red = kron_reduce(&nb.finish(), &[0, 1]).unwrap();
        let s = MachineSource::new(0.3, 0.1, 1.05, 0.25);
        let (m, _) = solve_machine_currents(&red.y, &[s, s], &[]).unwrap();
        assert!((m[0].current - m[1].current).norm() < 1e-14);
    }

    #[test]
    fn randomized_salient_network_residual() {
        let mut seed = 11u64;
        let mut rnd = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let n = 5;
        let mut nb = NodeBuilder::new(n);
        for a in 0..n {
            for b in (a + 1)..n {
                nb.series(a, b, Complex64::new(0.01 + 0.05 * rnd(), 0.1 + rnd()));
            }
            nb.shunt(a, Complex64::new(0.2 * rnd(), 0.1 * rnd()));
        }
        let y = nb.finish();
        let src: Vec<MachineSource> = (0..3)
            .map(|_| {
                MachineSource::new(
                    2.0 * rnd() - 1.0,
                    0.3 * rnd(),
                    0.9 + 0.2 * rnd(),
                    0.2 * rnd(),
                )
            })
            .collect();
        let vp = [Complex64::new(1.0, 0.1), Complex64::new(0.95, -0.2)];
        let (m, p) = solve_machine_currents(&y, &src, &vp).unwrap();
        let iq: Vec<f64> = m.iter().map(|c| c.iq).collect();
        let mut v = DVector::<Complex64>::zeros(n);
        for (i, s) in src.iter().enumerate() {
            v[i] = s.emf(iq[i]);
        }
        v[3] = vp[0];
        v[4] = vp[1];
        let inj = &y * &v;
        for i in 0..3 {
            assert!((inj[i] - m[i].current).norm() < 1e-10);
        }
        assert!((inj[3] - p[0]).norm() < 1e-10);
        assert!((inj[4] - p[1]).norm() < 1e-10);
    }
}
