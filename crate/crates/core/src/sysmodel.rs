//! Power system description: buses, branches, machines with their exciter
//! and governor blocks, the study/external partition, and the fixed layout
//! of the dynamic state vector.
//!
//! Files are JSON documents. Branch impedances are per-unit on the system
//! base; machine parameters are per-unit on the machine's own rating and are
//! converted to the system base when the file is loaded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BusId = u32;

/// Synchronous speed, rad/s (60 Hz system).
pub const OMEGA_S: f64 = 2.0 * std::f64::consts::PI * 60.0;

/// State entries per generator.
pub const SLOTS_PER_GEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Set-point for slack/PV buses, flat-start value otherwise.
    #[serde(default = "one")]
    pub voltage_mag: f64,
    #[serde(default)]
    pub voltage_ang: f64,
    /// Scheduled generation for PV buses (ignored at the slack).
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default)]
    pub shunt_g: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BranchStatus {
    #[default]
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_charging: f64,
    #[serde(default = "one")]
    pub tap_ratio: f64,
    #[serde(default)]
    pub status: BranchStatus,
}

impl Branch {
    pub fn in_service(&self) -> bool {
        self.status == BranchStatus::In
    }

    pub fn connects(&self, a: BusId, b: BusId) -> bool {
        (self.from_bus == a && self.to_bus == b) || (self.from_bus == b && self.to_bus == a)
    }
}

/// Two-axis synchronous machine.
///
/// `d` is the mechanical damping coefficient; it defaults to zero, in which
/// case damping comes only from the rotor circuits and the controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Machine {
    pub bus: BusId,
    pub mva_base: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "D", default)]
    pub d: f64,
    #[serde(rename = "Xd")]
    pub xd: f64,
    #[serde(rename = "Xd_p")]
    pub xd_p: f64,
    #[serde(rename = "Xq")]
    pub xq: f64,
    #[serde(rename = "Xq_p")]
    pub xq_p: f64,
    #[serde(rename = "Td0_p")]
    pub td0_p: f64,
    #[serde(rename = "Tq0_p")]
    pub tq0_p: f64,
    #[serde(rename = "Ra", default)]
    pub ra: f64,
}

/// IEEE Type-1 rotating exciter with rate feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExciterIeee1 {
    pub bus: BusId,
    #[serde(rename = "KA")]
    pub ka: f64,
    #[serde(rename = "TA")]
    pub ta: f64,
    #[serde(rename = "KE")]
    pub ke: f64,
    #[serde(rename = "TE")]
    pub te: f64,
    #[serde(rename = "KF")]
    pub kf: f64,
    #[serde(rename = "TF")]
    pub tf: f64,
    #[serde(rename = "VR_max")]
    pub vr_max: f64,
    #[serde(rename = "VR_min")]
    pub vr_min: f64,
    #[serde(rename = "SE_a", default)]
    pub se_a: f64,
    #[serde(rename = "SE_b", default)]
    pub se_b: f64,
    /// Back-computed at initialization; any value in the file is a hint only.
    #[serde(rename = "V_ref", default, skip_serializing_if = "Option::is_none")]
    pub v_ref: Option<f64>,
}

impl ExciterIeee1 {
    /// Saturation function SE(Efd) = SE_a * exp(SE_b * Efd).
    pub fn saturation(&self, efd: f64) -> f64 {
        self.se_a * (self.se_b * efd).exp()
    }
}

/// First-order governor driving a non-reheat steam turbine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorTurbine {
    pub bus: BusId,
    #[serde(rename = "RD")]
    pub rd: f64,
    #[serde(rename = "TSV")]
    pub tsv: f64,
    #[serde(rename = "TCH")]
    pub tch: f64,
    #[serde(rename = "P_sv_max")]
    pub p_sv_max: f64,
    #[serde(rename = "P_sv_min")]
    pub p_sv_min: f64,
    #[serde(rename = "P_ref", default, skip_serializing_if = "Option::is_none")]
    pub p_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionFile {
    study_buses: Vec<BusId>,
    #[serde(default)]
    tie_lines: Vec<[BusId; 2]>,
}

/// Study/external split of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub study_buses: BTreeSet<BusId>,
    /// Branch indices of the tie lines, in file order.
    pub tie_lines: Vec<usize>,
    /// Study-side endpoints of the tie lines.
    pub boundary_buses: BTreeSet<BusId>,
}

impl Partition {
    pub fn is_study(&self, bus: BusId) -> bool {
        self.study_buses.contains(&bus)
    }

    pub fn n_tie(&self) -> usize {
        self.tie_lines.len()
    }

    /// (study-side bus, external-side bus) of tie line `k`.
    pub fn tie_ends(&self, sys: &PowerSystem, k: usize) -> (BusId, BusId) {
        let br = &sys.branches[self.tie_lines[k]];
        if self.is_study(br.from_bus) {
            (br.from_bus, br.to_bus)
        } else {
            (br.to_bus, br.from_bus)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    #[serde(rename = "3ph")]
    ThreePhase,
}

/// Three-phase bus fault applied on `[t_on, t_clear)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub bus: BusId,
    pub t_on: f64,
    pub t_clear: f64,
    #[serde(default = "three_phase")]
    pub kind: FaultKind,
    /// Shunt conductance representing the fault, per-unit.
    #[serde(default = "default_fault_g")]
    pub conductance: f64,
}

fn three_phase() -> FaultKind {
    FaultKind::ThreePhase
}

fn default_fault_g() -> f64 {
    1e6
}

fn one() -> f64 {
    1.0
}

fn default_base() -> f64 {
    100.0
}

impl FaultSpec {
    pub fn new(bus: BusId, t_on: f64, t_clear: f64) -> Self {
        FaultSpec {
            bus,
            t_on,
            t_clear,
            kind: FaultKind::ThreePhase,
            conductance: default_fault_g(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let f: FaultSpec = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        f.validate(None)?;
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&read_file(path.as_ref())?)
    }

    /// Checks `0 <= t_on < t_clear (<= t_end when given)`.
    pub fn validate(&self, t_end: Option<f64>) -> Result<()> {
        if !(self.t_on >= 0.0 && self.t_on < self.t_clear) {
            return Err(Error::validation(
                "t_on",
                "fault requires 0 <= t_on < t_clear",
            ));
        }
        if let Some(t_end) = t_end {
            if self.t_clear > t_end {
                return Err(Error::validation("t_clear", "fault must clear by t_end"));
            }
        }
        if !(self.conductance > 0.0) {
            return Err(Error::validation("conductance", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default = "default_base")]
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    machines: Vec<Machine>,
    exciters: Vec<ExciterIeee1>,
    governors: Vec<GovernorTurbine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<PartitionFile>,
}

/// A validated power system. Machines, exciters and governors are stored
/// in ascending bus order and aligned index-for-index; all machine
/// parameters are on the system MVA base.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSystem {
    pub name: Option<String>,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub machines: Vec<Machine>,
    pub exciters: Vec<ExciterIeee1>,
    pub governors: Vec<GovernorTurbine>,
    pub partition: Option<Partition>,
    bus_index: BTreeMap<BusId, usize>,
}

impl PowerSystem {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&read_file(path.as_ref())?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SystemFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: SystemFile) -> Result<Self> {
        let SystemFile {
            name,
            base_mva,
            buses,
            branches,
            mut machines,
            mut exciters,
            mut governors,
            partition,
        } = file;
        if !(base_mva > 0.0) {
            return Err(Error::validation("base_mva", "must be > 0"));
        }
        let mut bus_index = BTreeMap::new();
        for (i, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id, i).is_some() {
                return Err(Error::validation(
                    "buses.id",
                    format!("duplicate bus id {}", b.id),
                ));
            }
            if !(b.voltage_mag > 0.0) {
                return Err(Error::validation(
                    "voltage_mag",
                    format!("bus {}: voltage_mag must be > 0", b.id),
                ));
            }
        }
        let n_slack = buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if n_slack != 1 {
            return Err(Error::validation(
                "kind",
                format!("exactly one slack bus required, found {n_slack}"),
            ));
        }
        for br in &branches {
            for end in [br.from_bus, br.to_bus] {
                if !bus_index.contains_key(&end) {
                    return Err(Error::validation("branches", format!("unknown bus {end}")));
                }
            }
            if br.from_bus == br.to_bus {
                return Err(Error::validation(
                    "from_bus",
                    format!("branch {}-{} is a self loop", br.from_bus, br.to_bus),
                ));
            }
            if br.x == 0.0 || !br.x.is_finite() {
                return Err(Error::validation(
                    "x",
                    format!("branch {}-{}: x must be nonzero", br.from_bus, br.to_bus),
                ));
            }
            if !(br.tap_ratio > 0.0) {
                return Err(Error::validation("tap_ratio", "must be > 0"));
            }
        }

        machines.sort_by_key(|m| m.bus);
        exciters.sort_by_key(|e| e.bus);
        governors.sort_by_key(|g| g.bus);
        for w in machines.windows(2) {
            if w[0].bus == w[1].bus {
                return Err(Error::validation(
                    "machines.bus",
                    format!("more than one machine at bus {}", w[0].bus),
                ));
            }
        }
        let mbuses: Vec<BusId> = machines.iter().map(|m| m.bus).collect();
        let ebuses: Vec<BusId> = exciters.iter().map(|m| m.bus).collect();
        let gbuses: Vec<BusId> = governors.iter().map(|m| m.bus).collect();
        if ebuses != mbuses {
            return Err(Error::validation(
                "exciters",
                "exactly one exciter per machine bus",
            ));
        }
        if gbuses != mbuses {
            return Err(Error::validation(
                "governors",
                "exactly one governor per machine bus",
            ));
        }
        for (m, g) in machines.iter_mut().zip(governors.iter_mut()) {
            match bus_index.get(&m.bus) {
                None => {
                    return Err(Error::validation(
                        "machines.bus",
                        format!("unknown bus {}", m.bus),
                    ))
                }
                Some(&i) if buses[i].kind == BusKind::Pq => {
                    return Err(Error::validation(
                        "machines.bus",
                        format!("machine at PQ bus {}", m.bus),
                    ))
                }
                _ => {}
            }
            validate_machine(m)?;
            validate_governor(g)?;
            let ratio = m.mva_base / base_mva;
            // impedances scale with S_sys/S_mach, inertia and power with S_mach/S_sys
            m.h *= ratio;
            m.d *= ratio;
            m.xd /= ratio;
            m.xd_p /= ratio;
            m.xq /= ratio;
            m.xq_p /= ratio;
            m.ra /= ratio;
            m.mva_base = base_mva;
            g.rd /= ratio;
            g.p_sv_max *= ratio;
            g.p_sv_min *= ratio;
            g.p_ref = g.p_ref.map(|p| p * ratio);
        }
        for e in &exciters {
            validate_exciter(e)?;
        }

        check_connected(&buses, &branches, &bus_index)?;

        let mut sys = PowerSystem {
            name,
            base_mva,
            buses,
            branches,
            machines,
            exciters,
            governors,
            partition: None,
            bus_index,
        };
        if let Some(p) = partition {
            sys.partition = Some(sys.build_partition(&p)?);
        }
        Ok(sys)
    }

    fn build_partition(&self, p: &PartitionFile) -> Result<Partition> {
        let mut study = BTreeSet::new();
        for &b in &p.study_buses {
            if !self.bus_index.contains_key(&b) {
                return Err(Error::validation(
                    "partition.study_buses",
                    format!("unknown bus {b}"),
                ));
            }
            study.insert(b);
        }
        if study.is_empty() {
            return Err(Error::validation(
                "partition.study_buses",
                "study area is empty",
            ));
        }
        if study.len() == self.buses.len() {
            return Err(Error::validation(
                "partition.study_buses",
                "external area is empty",
            ));
        }
        let mut used = vec![false; self.branches.len()];
        let mut ties = Vec::with_capacity(p.tie_lines.len());
        for &[a, b] in &p.tie_lines {
            if study.contains(&a) == study.contains(&b) {
                return Err(Error::validation(
                    "partition.tie_lines",
                    format!("tie line {a}-{b} does not cross the boundary"),
                ));
            }
            let k = self
                .branches
                .iter()
                .enumerate()
                .position(|(k, br)| !used[k] && br.in_service() && br.connects(a, b))
                .ok_or_else(|| {
                    Error::validation("partition.tie_lines", format!("no branch {a}-{b}"))
                })?;
            used[k] = true;
            ties.push(k);
        }
        for (k, br) in self.branches.iter().enumerate() {
            let crosses = study.contains(&br.from_bus) != study.contains(&br.to_bus);
            if br.in_service() && crosses && !used[k] {
                return Err(Error::validation(
                    "partition.tie_lines",
                    format!(
                        "branch {}-{} crosses the boundary but is not listed",
                        br.from_bus, br.to_bus
                    ),
                ));
            }
        }
        let boundary = ties
            .iter()
            .map(|&k| {
                let br = &self.branches[k];
                if study.contains(&br.from_bus) {
                    br.from_bus
                } else {
                    br.to_bus
                }
            })
            .collect();
        Ok(Partition {
            study_buses: study,
            tie_lines: ties,
            boundary_buses: boundary,
        })
    }

    pub fn to_json_string(&self) -> String {
        let partition = self.partition.as_ref().map(|p| PartitionFile {
            study_buses: p.study_buses.iter().copied().collect(),
            tie_lines: p
                .tie_lines
                .iter()
                .map(|&k| [self.branches[k].from_bus, self.branches[k].to_bus])
                .collect(),
        });
        let file = SystemFile {
            name: self.name.clone(),
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            machines: self.machines.clone(),
            exciters: self.exciters.clone(),
            governors: self.governors.clone(),
            partition,
        };
        serde_json::to_string_pretty(&file).expect("system serializes")
    }

    pub fn bus_position(&self, id: BusId) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_position(id).map(|i| &self.buses[i])
    }

    pub fn n_gen(&self) -> usize {
        self.machines.len()
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::new(self.machines.iter().map(|m| m.bus).collect())
    }

    pub fn partition(&self) -> Result<&Partition> {
        self.partition
            .as_ref()
            .ok_or_else(|| Error::validation("partition", "system has no partition"))
    }

    /// Generator indices (into `machines`) in the study and external areas.
    pub fn split_generators(&self, part: &Partition) -> (Vec<usize>, Vec<usize>) {
        (0..self.n_gen()).partition(|&i| part.is_study(self.machines[i].bus))
    }

    /// Replaces the partition, validating it against the network.
    pub fn with_partition(
        mut self,
        study_buses: &[BusId],
        tie_lines: &[[BusId; 2]],
    ) -> Result<Self> {
        let p = PartitionFile {
            study_buses: study_buses.to_vec(),
            tie_lines: tie_lines.to_vec(),
        };
        self.partition = Some(self.build_partition(&p)?);
        Ok(self)
    }
}

fn check_connected(
    buses: &[Bus],
    branches: &[Branch],
    index: &BTreeMap<BusId, usize>,
) -> Result<()> {
    let n = buses.len();
    let mut adj = vec![Vec::new(); n];
    for br in branches.iter().filter(|b| b.in_service()) {
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![buses
        .iter()
        .position(|b| b.kind == BusKind::Slack)
        .unwrap_or(0)];
    while let Some(i) = stack.pop() {
        if !std::mem::replace(&mut seen[i], true) {
            stack.extend(adj[i].iter().copied().filter(|&j| !seen[j]));
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(Error::validation(
            "branches",
            format!("bus {} is not connected to the slack bus", buses[i].id),
        )),
        None => Ok(()),
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn positive(field: &str, owner: BusId, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(
            field,
            format!("generator at bus {owner}: {field} must be > 0, got {v}"),
        ))
    }
}

fn validate_machine(m: &Machine) -> Result<()> {
    positive("mva_base", m.bus, m.mva_base)?;
    positive("H", m.bus, m.h)?;
    positive("Td0_p", m.bus, m.td0_p)?;
    positive("Tq0_p", m.bus, m.tq0_p)?;
    positive("Xd_p", m.bus, m.xd_p)?;
    positive("Xq_p", m.bus, m.xq_p)?;
    if m.xd < m.xd_p {
        return Err(Error::validation(
            "Xd",
            format!("bus {}: Xd must be >= Xd_p", m.bus),
        ));
    }
    if m.xq < m.xq_p {
        return Err(Error::validation(
            "Xq",
            format!("bus {}: Xq must be >= Xq_p", m.bus),
        ));
    }
    if m.ra < 0.0 || m.d < 0.0 {
        return Err(Error::validation(
            "Ra",
            format!("bus {}: Ra and D must be >= 0", m.bus),
        ));
    }
    Ok(())
}

fn validate_exciter(e: &ExciterIeee1) -> Result<()> {
    positive("TA", e.bus, e.ta)?;
    positive("TE", e.bus, e.te)?;
    positive("TF", e.bus, e.tf)?;
    positive("KA", e.bus, e.ka)?;
    if !(e.vr_max > e.vr_min) {
        return Err(Error::validation(
            "VR_max",
            format!("bus {}: VR_max must exceed VR_min", e.bus),
        ));
    }
    Ok(())
}

fn validate_governor(g: &GovernorTurbine) -> Result<()> {
    positive("TSV", g.bus, g.tsv)?;
    positive("TCH", g.bus, g.tch)?;
    positive("RD", g.bus, g.rd)?;
    if !(g.p_sv_max > g.p_sv_min) {
        return Err(Error::validation(
            "P_sv_max",
            format!("bus {}: P_sv_max must exceed P_sv_min", g.bus),
        ));
    }
    Ok(())
}

/// `(N_state, N_in)` of the external area: nine states per external
/// generator, two inputs (angle, magnitude) per tie line.
pub fn state_counts(sys: &PowerSystem, part: &Partition) -> (usize, usize) {
    let (_, ext) = sys.split_generators(part);
    (SLOTS_PER_GEN * ext.len(), 2 * part.n_tie())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Delta,
    Pm,
    Pgv,
    Vr,
    Rf,
    Efd,
    EdP,
    EqP,
    Omega,
}

impl Slot {
    pub const ALL: [Slot; SLOTS_PER_GEN] = [
        Slot::Delta,
        Slot::Pm,
        Slot::Pgv,
        Slot::Vr,
        Slot::Rf,
        Slot::Efd,
        Slot::EdP,
        Slot::EqP,
        Slot::Omega,
    ];

    pub fn offset(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Delta => "delta",
            Slot::Pm => "Pm",
            Slot::Pgv => "Pgv",
            Slot::Vr => "VR",
            Slot::Rf => "Rf",
            Slot::Efd => "Efd",
            Slot::EdP => "Ed_p",
            Slot::EqP => "Eq_p",
            Slot::Omega => "omega",
        }
    }

    pub fn parse(name: &str) -> Result<Slot> {
        Slot::ALL
            .iter()
            .copied()
            .find(|s| s.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownSlot(name.to_string()))
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// Slot offsets used throughout the dynamics code.
pub const DELTA: usize = 0;
pub const PM: usize = 1;
pub const PGV: usize = 2;
pub const VR: usize = 3;
pub const RF: usize = 4;
pub const EFD: usize = 5;
pub const ED_P: usize = 6;
pub const EQ_P: usize = 7;
pub const OMEGA: usize = 8;

/// Bijection between flat state indices and (generator, slot) pairs.
/// Generators are ordered by ascending bus id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    gen_buses: Vec<BusId>,
}

impl StateLayout {
    pub fn new(mut gen_buses: Vec<BusId>) -> Self {
        gen_buses.sort_unstable();
        StateLayout { gen_buses }
    }

    pub fn n_gen(&self) -> usize {
        self.gen_buses.len()
    }

    pub fn len(&self) -> usize {
        SLOTS_PER_GEN * self.gen_buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gen_buses.is_empty()
    }

    pub fn gen_buses(&self) -> &[BusId] {
        &self.gen_buses
    }

    pub fn index(&self, gen: usize, slot: Slot) -> usize {
        SLOTS_PER_GEN * gen + slot.offset()
    }

    /// Flat index of `slot` (by name) for the `gen`-th generator.
    pub fn index_of(&self, gen: usize, slot: &str) -> Result<usize> {
        let slot = Slot::parse(slot)?;
        if gen >= self.n_gen() {
            return Err(Error::validation(
                "gen",
                format!("generator {gen} out of range"),
            ));
        }
        Ok(self.index(gen, slot))
    }

    pub fn locate(&self, index: usize) -> Option<(usize, Slot)> {
        (index < self.len()).then(|| (index / SLOTS_PER_GEN, Slot::ALL[index % SLOTS_PER_GEN]))
    }

    /// Column names `gen<bus>.<slot>` in layout order.
    pub fn column_names(&self) -> Vec<String> {
        self.gen_buses
            .iter()
            .flat_map(|b| Slot::ALL.iter().map(move |s| format!("gen{b}.{s}")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    #[test]
    fn nine_bus_counts() {
        let sys = data::nine_bus();
        assert_eq!(sys.n_gen(), 3);
        assert_eq!(sys.layout().len(), 27);
        let part = sys.partition().unwrap();
        let (_, n_in) = state_counts(&sys, part);
        assert_eq!(n_in, 2 * part.n_tie());
    }

    #[test]
    fn two_tie_lines_give_four_inputs() {
        let sys = data::two_area();
        let part = sys.partition().unwrap();
        assert_eq!(part.n_tie(), 2);
        assert_eq!(state_counts(&sys, part), (18, 4));
    }

    #[test]
    fn paper_scale_counts() {
        // 39 external generators -> 351 states; 9 study generators -> 81.
        let layout = StateLayout::new((1..=39).collect());
        assert_eq!(layout.len(), 351);
        assert_eq!(StateLayout::new((1..=9).collect()).len(), 81);
    }

    #[test]
    fn zero_ties_zero_inputs() {
        let sys = data::nine_bus();
        let sys = sys.clone();
        let mut part = sys.partition().unwrap().clone();
        part.tie_lines.clear();
        assert_eq!(state_counts(&sys, &part).1, 0);
    }

    #[test]
    fn zero_inertia_is_rejected_by_name() {
        let text = data::NINE_BUS_JSON.replacen("\"H\": 23.64", "\"H\": 0.0", 1);
        assert_ne!(text, data::NINE_BUS_JSON);
        let err = PowerSystem::from_json_str(&text).unwrap_err();
        match &err {
            Error::Validation { field, .. } => assert_eq!(field, "H"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("H"));
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        assert!(matches!(
            PowerSystem::from_json_str("{\"buses\": ["),
            Err(Error::Parse(_))
        ));
        let unknown = data::NINE_BUS_JSON.replacen("\"base_mva\"", "\"bogus\": 1, \"base_mva\"", 1);
        assert!(matches!(
            PowerSystem::from_json_str(&unknown),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn unlisted_crossing_branch_is_rejected() {
        let sys = data::two_area();
        let err = sys.with_partition(&[1, 2, 5, 6, 7], &[[7, 8]]).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn index_of_examples() {
        let layout = StateLayout::new(vec![1, 2, 3]);
        assert_eq!(layout.index_of(0, "delta").unwrap(), 0);
        assert_eq!(layout.index_of(1, "omega").unwrap(), 17);
        assert!(matches!(
            layout.index_of(0, "xyz"),
            Err(Error::UnknownSlot(_))
        ));
    }

    #[test]
    fn index_round_trip() {
        let layout = StateLayout::new(vec![30, 4, 17, 2]);
        for k in 0..layout.len() {
            let (g, s) = layout.locate(k).unwrap();
            assert_eq!(layout.index_of(g, s.name()).unwrap(), k);
        }
        assert!(layout.locate(layout.len()).is_none());
        assert_eq!(layout.gen_buses(), &[2, 4, 17, 30]);
    }

    #[test]
    fn machine_base_conversion() {
        let sys = data::two_area();
        // 900 MVA machines on a 100 MVA base
        let m = &sys.machines[0];
        assert!((m.h - 58.5).abs() < 1e-12);
        assert!((m.xd_p - 0.3 / 9.0).abs() < 1e-15);
        assert_eq!(m.mva_base, 100.0);
    }

    #[test]
    fn fault_spec_checks_times() {
        assert!(
            FaultSpec::from_json_str(r#"{"bus":3,"t_on":0.1,"t_clear":0.2,"kind":"3ph"}"#).is_ok()
        );
        assert!(FaultSpec::from_json_str(r#"{"bus":3,"t_on":0.3,"t_clear":0.2}"#).is_err());
        let f = FaultSpec::new(3, 0.0, 1.0);
        assert!(f.validate(Some(0.5)).is_err());
    }
}
