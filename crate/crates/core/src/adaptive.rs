//! Adaptive reduction of the external area at fault clearing.
//!
//! Before clearing the whole system runs in full detail. At clearing the
//! selected strategy picks the external generators to keep nonlinear, the
//! external area is handed to the resulting [`ReducedExternalModel`], and
//! the run continues as a co-simulation with the study area in full detail.
//!
//! The areas are coupled at every RK4 stage: the external model's tie
//! currents are affine in the tie voltages, so the boundary-bus voltages
//! follow from one small real linear solve.

use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{
    advance, unit_params, FullModel, Grid, Model, Recorder, SimResult, UnitGroup,
};
use crate::error::{Error, Result};
use crate::netsolve::{affine_ports, machine_currents, AreaNetwork, ExtraInjection, Snapshot};
use crate::powerflow::{
    init_dynamic_state, solve_power_flow, Equilibrium, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::reduction::{
    BalancedTruncation, ExternalAnalysis, ReducedExternalModel, ReductionConfig, ReductionStrategy,
    Registry, Selection, SwitchContext, Truncation,
};
use crate::smallsignal::DominantModes;
use crate::sysmodel::{BusId, FaultSpec, PowerSystem, SLOTS_PER_GEN};

/// Method name for a run without any reduction.
pub const NO_REDUCTION: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveConfig {
    /// `none` or a registered strategy name.
    pub method: String,
    pub reduction: ReductionConfig,
    pub h: f64,
    pub t_end: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            method: "pf".into(),
            reduction: ReductionConfig::default(),
            h: 0.01,
            t_end: 16.0,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.reduction;
        // p_max = 0 is the all-nonlinear limit
        if r.p_max.is_nan() || r.p_max < 0.0 {
            return Err(Error::validation("p_max", "must be >= 0"));
        }
        if r.delta_threshold.is_nan() || r.delta_threshold < 0.0 {
            return Err(Error::validation("delta_threshold", "must be >= 0"));
        }
        if r.dominant_count == 0 {
            return Err(Error::validation("dominant_count", "must be >= 1"));
        }
        if !(r.f_max > 0.0) {
            return Err(Error::validation("f_max", "must be > 0"));
        }
        if !(r.bt_tol > 0.0 && r.bt_tol < 1.0) {
            return Err(Error::validation("bt_tol", "must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Study area in full detail coupled to a reduced external area.
#[derive(Debug, Clone)]
pub struct CoSimModel {
    study: UnitGroup,
    ext: ReducedExternalModel,
    study_gens: Vec<usize>,
    ext_gens: Vec<usize>,
    /// Boundary-bus position of each tie.
    tie_boundary: Vec<usize>,
    n_boundary: usize,
    n_gen: usize,
}

impl CoSimModel {
    pub fn new(
        sys: &PowerSystem,
        eq: &Equilibrium,
        fault: Option<&FaultSpec>,
        analysis: &ExternalAnalysis,
        ext: ReducedExternalModel,
    ) -> Result<Self> {
        let part = sys.partition()?;
        let (study_gens, ext_gens) = sys.split_generators(part);
        let units = unit_params(sys, eq);
        let net = AreaNetwork::study(sys, part, &eq.loads, fault)?;
        Ok(CoSimModel {
            study: UnitGroup {
                units: study_gens.iter().map(|&g| units[g]).collect(),
                net,
            },
            ext,
            study_gens,
            ext_gens,
            tie_boundary: analysis.area.tie_boundary.clone(),
            n_boundary: analysis.area.n_boundary,
            n_gen: sys.n_gen(),
        })
    }

    pub fn external(&self) -> &ReducedExternalModel {
        &self.ext
    }

    fn n_study(&self) -> usize {
        self.study.n_states()
    }

    /// Model state for a whole-system state.
    pub fn state_from_full(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .study_gens
            .iter()
            .flat_map(|&g| {
                x[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]
                    .iter()
                    .copied()
            })
            .collect();
        let x_ext: Vec<f64> = self
            .ext_gens
            .iter()
            .flat_map(|&g| {
                x[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]
                    .iter()
                    .copied()
            })
            .collect();
        z.extend(self.ext.initial_state(&x_ext));
        z
    }

    /// Boundary-bus voltages (rectangular pairs) at state `x`.
    fn boundary_solve(
        &self,
        ip0: &[Complex64],
        ip_v: &DMatrix<f64>,
        ext: &crate::reduction::PortStage,
    ) -> Result<DVector<f64>> {
        let nb = 2 * self.n_boundary;
        let mut k = ip_v.clone();
        let mut rhs = DVector::from_iterator(nb, ip0.iter().flat_map(|c| [-c.re, -c.im]));
        let l = &ext.ports.ip_v;
        for (t, &b) in self.tie_boundary.iter().enumerate() {
            let j = ext.ports.ip0[t];
            rhs[2 * b] -= j.re;
            rhs[2 * b + 1] -= j.im;
            for (t2, &b2) in self.tie_boundary.iter().enumerate() {
                for r in 0..2 {
                    for c in 0..2 {
                        k[(2 * b + r, 2 * b2 + c)] += l[(2 * t + r, 2 * t2 + c)];
                    }
                }
            }
        }
        k.lu().solve(&rhs).ok_or(Error::SingularNetwork)
    }
}

impl Model for CoSimModel {
    fn n_states(&self) -> usize {
        self.n_study() + self.ext.n_states()
    }

    fn derivative(&self, snapshot: Snapshot, x: &[f64], dx: &mut [f64]) -> Result<()> {
        if x.len() != self.n_states() || dx.len() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries, model has {}",
                x.len(),
                self.n_states()
            )));
        }
        let ns = self.n_study();
        let (xs, z) = x.split_at(ns);
        let (dxs, dz) = dx.split_at_mut(ns);
        let y = self.study.net.y(snapshot);
        let sources = self.study.sources(xs);
        let aff = affine_ports(y, &sources, &ExtraInjection::default())?;
        let stage = self.ext.stage(z)?;
        let vb = self.boundary_solve(&aff.ip0, &aff.ip_v, &stage)?;
        let vb = vb.as_slice();
        let ports: Vec<Complex64> = vb
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let iq = aff.iq(vb);
        let cur = machine_currents(y, &sources, &iq, &ports, None);
        self.study.derivative_from_currents(xs, &cur, dxs);
        let vt: Vec<f64> = self
            .tie_boundary
            .iter()
            .flat_map(|&b| [vb[2 * b], vb[2 * b + 1]])
            .collect();
        self.ext.derivative(z, &stage, &vt, dz);
        Ok(())
    }

    fn clamp(&self, x: &mut [f64]) {
        let ns = self.n_study();
        let (xs, z) = x.split_at_mut(ns);
        self.study.clamp(xs);
        self.ext.clamp(z);
    }

    fn n_full(&self) -> usize {
        SLOTS_PER_GEN * self.n_gen
    }

    fn full_state(&self, x: &[f64], out: &mut [f64]) {
        let ns = self.n_study();
        for (k, &g) in self.study_gens.iter().enumerate() {
            out[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]
                .copy_from_slice(&x[SLOTS_PER_GEN * k..SLOTS_PER_GEN * (k + 1)]);
        }
        let mut ext = vec![0.0; self.ext.n_external_states()];
        self.ext.reconstruct(&x[ns..], &mut ext);
        for (k, &g) in self.ext_gens.iter().enumerate() {
            out[SLOTS_PER_GEN * g..SLOTS_PER_GEN * (g + 1)]
                .copy_from_slice(&ext[SLOTS_PER_GEN * k..SLOTS_PER_GEN * (k + 1)]);
        }
    }
}

/// Seconds spent in each phase of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhaseTimings {
    /// Work that does not depend on the fault trajectory (not part of the
    /// run's wall clock).
    pub offline: f64,
    pub detailed: f64,
    pub switch: f64,
    pub reduced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorScore {
    pub bus: BusId,
    pub score: f64,
    pub nonlinear: bool,
}

/// What the switch decided and what it cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub method: String,
    pub switch_time: Option<f64>,
    pub nonlinear_buses: Vec<BusId>,
    pub linearized_buses: Vec<BusId>,
    /// Per external generator: aggregate PF (`pf`), rotor deviation in
    /// radians (`rotor`), or the trivial 0/1 selection.
    pub scores: Vec<GeneratorScore>,
    pub dominant_modes: Option<DominantModes>,
    pub truncation: Option<BalancedTruncation>,
    pub linear_states: usize,
    pub fallback: Option<String>,
    pub timings: PhaseTimings,
}

impl ReductionReport {
    fn unreduced(method: &str) -> Self {
        ReductionReport {
            method: method.to_string(),
            switch_time: None,
            nonlinear_buses: Vec::new(),
            linearized_buses: Vec::new(),
            scores: Vec::new(),
            dominant_modes: None,
            truncation: None,
            linear_states: 0,
            fallback: None,
            timings: PhaseTimings::default(),
        }
    }
}

/// Everything about one contingency that does not depend on the method:
/// the equilibrium, the grid, the monolithic model and the pre-fault
/// external analysis.
#[derive(Debug)]
pub struct Scenario<'a> {
    pub sys: &'a PowerSystem,
    pub fault: FaultSpec,
    pub eq: Equilibrium,
    pub grid: Grid,
    pub full: FullModel,
    /// `None` when the system has no partition or no external generators.
    pub analysis: Option<ExternalAnalysis>,
    /// Fully linearized external models by (truncation, tolerance); they do
    /// not depend on the fault, so they are built before a run starts.
    linear_cache: Mutex<Vec<(Truncation, f64, ReducedExternalModel)>>,
}

impl<'a> Scenario<'a> {
    pub fn new(sys: &'a PowerSystem, fault: &FaultSpec, h: f64, t_end: f64) -> Result<Self> {
        let grid = Grid::new(h, t_end, Some(fault))?;
        let pf = solve_power_flow(sys, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let eq = init_dynamic_state(sys, &pf)?;
        let full = FullModel::new(sys, &eq, Some(fault))?;
        let analysis = match sys.partition() {
            Ok(part) if !sys.split_generators(part).1.is_empty() => {
                Some(ExternalAnalysis::new(sys, &eq)?)
            }
            _ => None,
        };
        Ok(Scenario {
            sys,
            fault: fault.clone(),
            eq,
            grid,
            full,
            analysis,
            linear_cache: Mutex::new(Vec::new()),
        })
    }

    /// Builds the fault-independent parts of a reduced run for `cfg`;
    /// returns the seconds spent.
    pub fn prepare(&self, cfg: &ReductionConfig) -> Result<f64> {
        let start = Instant::now();
        let analysis = self.analysis()?;
        let mut cache = self.linear_cache.lock().expect("cache lock");
        if !cache
            .iter()
            .any(|(t, tol, _)| *t == cfg.truncation && *tol == cfg.bt_tol)
        {
            let m =
                ReducedExternalModel::build(analysis, "linear", &[], cfg.truncation, cfg.bt_tol)?;
            cache.push((cfg.truncation, cfg.bt_tol, m));
        }
        Ok(start.elapsed().as_secs_f64())
    }

    fn build_reduced(
        &self,
        method: &str,
        nonlinear: &[usize],
        cfg: &ReductionConfig,
    ) -> Result<ReducedExternalModel> {
        if nonlinear.is_empty() {
            let cache = self.linear_cache.lock().expect("cache lock");
            if let Some((_, _, m)) = cache
                .iter()
                .find(|(t, tol, _)| *t == cfg.truncation && *tol == cfg.bt_tol)
            {
                let mut m = m.clone();
                m.method = method.to_string();
                return Ok(m);
            }
        }
        ReducedExternalModel::build(
            self.analysis()?,
            method,
            nonlinear,
            cfg.truncation,
            cfg.bt_tol,
        )
    }

    pub fn columns(&self) -> Vec<String> {
        self.sys.layout().column_names()
    }

    fn analysis(&self) -> Result<&ExternalAnalysis> {
        self.analysis.as_ref().ok_or(Error::EmptyExternal)
    }

    fn check_partitioned(&self) -> Result<()> {
        let part = self.sys.partition()?;
        if !part.is_study(self.fault.bus) {
            return Err(Error::validation(
                "fault.bus",
                format!(
                    "bus {} is in the external area; partitioned runs need the fault in the study area",
                    self.fault.bus
                ),
            ));
        }
        self.analysis().map(|_| ())
    }

    /// Partitioned run with every external generator nonlinear, from t = 0.
    pub fn integrate_partitioned(&self) -> Result<SimResult> {
        self.check_partitioned()?;
        let analysis = self.analysis()?;
        let all: Vec<usize> = (0..analysis.n_gen()).collect();
        let ext = ReducedExternalModel::build(analysis, "full", &all, Default::default(), 1e-4)?;
        let model = CoSimModel::new(self.sys, &self.eq, Some(&self.fault), analysis, ext)?;
        let z0 = model.state_from_full(&self.eq.x0);
        crate::dynamics::integrate_model(&model, &self.grid, &z0, self.columns())
    }

    fn clear_step(&self) -> usize {
        self.grid.fault_steps.expect("scenario grid has a fault").1
    }

    /// Selection and reduced model for the full-system state `x` at the
    /// clearing instant, `history` covering the run so far.
    fn switch(
        &self,
        strategy: &dyn ReductionStrategy,
        method: &str,
        x: &[f64],
        history: &SimResult,
        cfg: &ReductionConfig,
    ) -> Result<(ReducedExternalModel, Selection)> {
        let analysis = self.analysis()?;
        let (on, clear) = self.grid.fault_steps.expect("scenario grid has a fault");
        let x_ext = analysis.external_state(x);
        let dx0: Vec<f64> = x_ext
            .iter()
            .zip(&analysis.lin.x0)
            .map(|(a, b)| a - b)
            .collect();
        let ctx = SwitchContext {
            sys: self.sys,
            analysis,
            dx0: &dx0,
            history,
            fault_rows: on..clear + 1,
            cfg,
        };
        let sel = strategy.select(&ctx)?;
        let model = self.build_reduced(method, &sel.nonlinear, cfg)?;
        Ok((model, sel))
    }

    /// Full-system state at fault clearing and the detailed run up to it.
    pub fn detailed_until_clear(&self) -> Result<(Vec<f64>, SimResult)> {
        let clear = self.clear_step();
        let mut rec = Recorder::new(self.columns(), clear + 1);
        let mut x = self.eq.x0.clone();
        rec.push(0.0, &self.full, &x);
        advance(&self.full, &self.grid, &mut x, 0, clear, &mut rec)?;
        Ok((x, rec.result))
    }

    /// The reduced external model `method` would switch to, built from a
    /// detailed run up to fault clearing. Errors are returned rather than
    /// falling back to full detail.
    pub fn reduce(
        &self,
        method: &str,
        cfg: &ReductionConfig,
        registry: &Registry,
    ) -> Result<(ReducedExternalModel, Selection)> {
        let strategy = registry.get(method)?;
        self.check_partitioned()?;
        self.prepare(cfg)?;
        let (x, history) = self.detailed_until_clear()?;
        self.switch(strategy, method, &x, &history, cfg)
    }

    /// Runs `method` (`none` or a registered strategy).
    pub fn run(
        &self,
        method: &str,
        cfg: &ReductionConfig,
        registry: &Registry,
    ) -> Result<(SimResult, ReductionReport)> {
        if method == NO_REDUCTION {
            let res = crate::dynamics::integrate_model(
                &self.full,
                &self.grid,
                &self.eq.x0,
                self.columns(),
            )?;
            let mut report = ReductionReport::unreduced(method);
            report.timings.detailed = res.wall_clock;
            return Ok((res, report));
        }
        let strategy = registry.get(method)?;
        self.check_partitioned()?;
        let analysis = self.analysis()?;
        let offline = self.prepare(cfg)?;
        let clear = self.clear_step();

        let mut rec = Recorder::new(self.columns(), self.grid.n_steps + 1);
        let mut x = self.eq.x0.clone();
        let start = Instant::now();
        rec.push(0.0, &self.full, &x);
        advance(&self.full, &self.grid, &mut x, 0, clear, &mut rec)?;
        let t_detailed = start.elapsed().as_secs_f64();
        let mut report = ReductionReport::unreduced(method);
        report.timings.offline = offline;
        report.timings.detailed = t_detailed;
        if clear >= self.grid.n_steps {
            rec.result.wall_clock = t_detailed;
            return Ok((rec.result, report));
        }

        let t_switch = Instant::now();
        let (ext, sel) = match self.switch(strategy, method, &x, &rec.result, cfg) {
            Ok(v) => v,
            Err(e) => {
                let err = Error::SwitchFailure(e.to_string());
                warn!("{err}; continuing with the external area in full detail");
                report.fallback = Some(err.to_string());
                let all: Vec<usize> = (0..analysis.n_gen()).collect();
                let m = ReducedExternalModel::build(
                    analysis,
                    method,
                    &all,
                    cfg.truncation,
                    cfg.bt_tol,
                )?;
                (
                    m,
                    Selection {
                        nonlinear: all,
                        ..Default::default()
                    },
                )
            }
        };
        info!(
            "{method}: {} of {} external generators nonlinear, {} linear states",
            ext.nonlinear.len(),
            analysis.n_gen(),
            ext.linear.as_ref().map_or(0, |l| l.n_states())
        );
        let model = CoSimModel::new(self.sys, &self.eq, Some(&self.fault), analysis, ext)?;
        let mut z = model.state_from_full(&x);
        report.timings.switch = t_switch.elapsed().as_secs_f64();
        rec.event(self.grid.time(clear), format!("switch-{method}"));

        let t_reduced = Instant::now();
        advance(
            &model,
            &self.grid,
            &mut z,
            clear,
            self.grid.n_steps,
            &mut rec,
        )?;
        report.timings.reduced = t_reduced.elapsed().as_secs_f64();
        rec.result.wall_clock =
            report.timings.detailed + report.timings.switch + report.timings.reduced;

        let ext = model.external();
        report.switch_time = Some(self.grid.time(clear));
        report.nonlinear_buses = ext.nonlinear_buses.clone();
        report.linearized_buses = ext.linearized_buses.clone();
        report.scores = analysis
            .buses
            .iter()
            .enumerate()
            .map(|(g, &bus)| GeneratorScore {
                bus,
                score: sel.scores.get(g).copied().unwrap_or(f64::NAN),
                nonlinear: ext.nonlinear.contains(&g),
            })
            .collect();
        report.dominant_modes = sel.dominant;
        report.truncation = ext.truncation.clone();
        report.linear_states = ext.linear.as_ref().map_or(0, |l| l.n_states());
        Ok((rec.result, report))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorParticipation {
    pub bus: BusId,
    pub pf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeRow {
    pub index: usize,
    pub real: f64,
    pub imag: f64,
    pub frequency: f64,
    pub damping: f64,
    /// Excitation by the state at fault clearing, when a fault is given.
    pub z: Option<f64>,
    /// Highest per-generator participation, for oscillatory modes below
    /// `f_max`.
    pub top_generators: Vec<GeneratorParticipation>,
}

/// Eigen-analysis of the pre-fault external area.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalReport {
    pub external_buses: Vec<BusId>,
    pub n_states: usize,
    pub modes: Vec<ModeRow>,
    pub dominant_modes: Option<DominantModes>,
}

/// Generators listed per mode in a [`ModalReport`].
pub const TOP_GENERATORS: usize = 3;

/// Modal table of the external area; with a fault, also the modes excited
/// by the state at clearing.
pub fn modal_report(
    sys: &PowerSystem,
    fault: Option<&FaultSpec>,
    cfg: &ReductionConfig,
    h: f64,
) -> Result<ModalReport> {
    let part = sys.partition()?;
    if sys.split_generators(part).1.is_empty() {
        return Err(Error::EmptyExternal);
    }
    let (owned, z, dominant);
    let analysis = match fault {
        Some(f) => {
            let sc = Scenario::new(sys, f, h, f.t_clear + h)?;
            sc.check_partitioned()?;
            let (x, _) = sc.detailed_until_clear()?;
            let a = sc.analysis()?;
            let dx0: Vec<f64> = a
                .external_state(&x)
                .iter()
                .zip(&a.lin.x0)
                .map(|(p, q)| p - q)
                .collect();
            z = Some(crate::smallsignal::mode_excitation(
                &a.modal,
                &dx0,
                cfg.excitation,
            )?);
            dominant = Some(crate::smallsignal::select_dominant_modes(
                &a.modal,
                &dx0,
                cfg.dominant_count,
                cfg.f_max,
                cfg.excitation,
            )?);
            owned = sc.analysis;
            owned.as_ref().expect("checked above")
        }
        None => {
            let pf = solve_power_flow(sys, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let eq = init_dynamic_state(sys, &pf)?;
            z = None;
            dominant = None;
            owned = Some(ExternalAnalysis::new(sys, &eq)?);
            owned.as_ref().expect("just built")
        }
    };
    let modal = &analysis.modal;
    let modes = (0..modal.len())
        .map(|i| {
            let lambda = modal.eigenvalues[i];
            let mut top = Vec::new();
            if lambda.im > 0.0 && modal.frequency(i) < cfg.f_max {
                let mut gens: Vec<usize> = (0..analysis.n_gen()).collect();
                gens.sort_by(|&a, &b| {
                    analysis.pf.per_gen[(b, i)]
                        .total_cmp(&analysis.pf.per_gen[(a, i)])
                        .then(a.cmp(&b))
                });
                top = gens
                    .into_iter()
                    .take(TOP_GENERATORS)
                    .map(|g| GeneratorParticipation {
                        bus: analysis.buses[g],
                        pf: analysis.pf.per_gen[(g, i)],
                    })
                    .collect();
            }
            ModeRow {
                index: i,
                real: lambda.re,
                imag: lambda.im,
                frequency: modal.frequency(i),
                damping: modal.damping(i),
                z: z.as_ref().map(|z: &Vec<f64>| z[i]),
                top_generators: top,
            }
        })
        .collect();
    Ok(ModalReport {
        external_buses: analysis.buses.clone(),
        n_states: modal.len(),
        modes,
        dominant_modes: dominant,
    })
}

/// One adaptive run from scratch.
pub fn run_adaptive(
    sys: &PowerSystem,
    fault: &FaultSpec,
    cfg: &AdaptiveConfig,
) -> Result<(SimResult, ReductionReport)> {
    cfg.validate()?;
    let registry = Registry::default();
    if cfg.method != NO_REDUCTION {
        registry.get(&cfg.method)?;
    }
    let scenario = Scenario::new(sys, fault, cfg.h, cfg.t_end)?;
    scenario.run(&cfg.method, &cfg.reduction, &registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    fn scenario(sys: &PowerSystem) -> Scenario<'_> {
        Scenario::new(sys, &data::two_area_fault(), 0.01, 3.0).unwrap()
    }

    #[test]
    fn none_is_the_monolithic_run() {
        let sys = data::two_area();
        let sc = scenario(&sys);
        let (a, _) = sc
            .run(
                NO_REDUCTION,
                &ReductionConfig::default(),
                &Registry::default(),
            )
            .unwrap();
        let b = crate::dynamics::integrate(&sys, &sc.eq, Some(&sc.fault), 3.0, 0.01).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn cosim_equilibrium_is_stationary() {
        let sys = data::two_area();
        let sc = scenario(&sys);
        let analysis = sc.analysis.as_ref().unwrap();
        let all: Vec<usize> = (0..analysis.n_gen()).collect();
        for nl in [all, vec![]] {
            let ext =
                ReducedExternalModel::build(analysis, "t", &nl, Default::default(), 1e-4).unwrap();
            let model = CoSimModel::new(&sys, &sc.eq, None, analysis, ext).unwrap();
            let z = model.state_from_full(&sc.eq.x0);
            let mut dz = vec![0.0; z.len()];
            model.derivative(Snapshot::PreFault, &z, &mut dz).unwrap();
            let r = dz.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(r < 1e-6, "residual {r} with {} nonlinear", nl.len());
        }
    }

    #[test]
    fn external_fault_rejected() {
        let sys = data::two_area();
        let part = sys.partition().unwrap();
        let bus = sys
            .buses
            .iter()
            .map(|b| b.id)
            .find(|&b| !part.is_study(b))
            .unwrap();
        let fault = FaultSpec::new(bus, 0.1, 0.2);
        let sc = Scenario::new(&sys, &fault, 0.01, 1.0).unwrap();
        let err = sc
            .run("pf", &ReductionConfig::default(), &Registry::default())
            .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn unknown_method_rejected() {
        let sys = data::two_area();
        let cfg = AdaptiveConfig {
            method: "coherency".into(),
            ..Default::default()
        };
        assert!(matches!(
            run_adaptive(&sys, &data::two_area_fault(), &cfg),
            Err(Error::UnknownMethod(_))
        ));
    }

    #[test]
    fn switch_preserves_state() {
        let sys = data::two_area();
        let sc = scenario(&sys);
        let analysis = sc.analysis.as_ref().unwrap();
        let mut x = sc.eq.x0.clone();
        for (i, v) in x.iter_mut().enumerate() {
            *v += 1e-3 * ((i % 7) as f64 - 3.0);
        }
        for nl in [vec![1], vec![]] {
            let ext = ReducedExternalModel::build(
                analysis,
                "t",
                &nl,
                crate::reduction::Truncation::Never,
                1e-4,
            )
            .unwrap();
            let model = CoSimModel::new(&sys, &sc.eq, None, analysis, ext).unwrap();
            let z = model.state_from_full(&x);
            let mut back = vec![0.0; x.len()];
            model.full_state(&z, &mut back);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}
