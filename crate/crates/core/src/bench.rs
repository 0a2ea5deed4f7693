//! Four-way comparison of the external-area treatments against the full
//! model: trajectory errors, timings and the report written by `compare`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::adaptive::{AdaptiveConfig, Scenario, NO_REDUCTION};
use crate::dynamics::SimResult;
use crate::error::{Error, Result};
use crate::reduction::{ReductionConfig, Registry};
use crate::smallsignal::DominantModes;
use crate::sysmodel::{BusId, FaultSpec, PowerSystem, Slot, DELTA, SLOTS_PER_GEN};

/// Label of the monolithic reference run in a comparison.
pub const FULL: &str = "full";

/// Methods compared by default, reference first.
pub const DEFAULT_METHODS: [&str; 4] = [FULL, "linear", "rotor", "pf"];

/// Root-mean-square difference of two equally long series.
pub fn rmse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: x_hat.len(),
        });
    }
    let sum: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / x.len() as f64).sqrt())
}

/// The candidate generator (layout index) whose rotor angle strays
/// furthest from its initial value. Ties go to the lower bus id, which is
/// the lower layout index.
pub fn pick_reference_generator(full: &SimResult, candidates: &[usize]) -> Option<usize> {
    let excursion = |g: usize| {
        let col = SLOTS_PER_GEN * g + DELTA;
        let d0 = full.row(0)[col];
        (0..full.times.len())
            .map(|i| (full.row(i)[col] - d0).abs())
            .fold(0.0, f64::max)
    };
    let mut best: Option<(usize, f64)> = None;
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    for g in sorted {
        let e = excursion(g);
        if best.is_none_or(|(_, b)| e > b) {
            best = Some((g, e));
        }
    }
    best.map(|(g, _)| g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub h: f64,
    pub t_end: f64,
    pub reduction: ReductionConfig,
    pub methods: Vec<String>,
    /// Timed repetitions per method; the reported wall clock is the minimum.
    pub repeats: usize,
    /// Upper bound on concurrently running integrations.
    pub threads: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            h: 0.01,
            t_end: 16.0,
            reduction: ReductionConfig::default(),
            methods: DEFAULT_METHODS.iter().map(|s| s.to_string()).collect(),
            repeats: 3,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotError {
    pub slot: &'static str,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    /// Per state slot of the reference generator; `delta` in degrees, the
    /// rest per-unit.
    pub rmse: Vec<SlotError>,
    pub nonlinear_buses: Vec<BusId>,
    pub linearized_buses: Vec<BusId>,
    pub linear_states: usize,
    pub fallback: Option<String>,
}

impl MethodRow {
    pub fn slot(&self, slot: Slot) -> f64 {
        self.rmse[slot.offset()].rmse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceGenerator {
    pub index: usize,
    pub bus: BusId,
}

/// Accuracy part of a comparison. Contains nothing timing dependent, so
/// equal inputs serialize to equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub system: Option<String>,
    pub fault: FaultSpec,
    pub h: f64,
    pub t_end: f64,
    pub reduction: ReductionConfig,
    pub reference: ReferenceGenerator,
    pub dominant_modes: Option<DominantModes>,
    pub methods: Vec<MethodRow>,
}

impl ComparisonReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodTiming {
    pub method: String,
    /// Minimum over the repetitions, seconds.
    pub wall_clock: f64,
    pub runs: Vec<f64>,
    /// Fault-independent preparation, not part of the wall clock.
    pub offline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub repeats: usize,
    pub threads: usize,
    pub methods: Vec<MethodTiming>,
}

impl TimingReport {
    pub fn wall_clock(&self, method: &str) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.wall_clock)
    }
}

#[derive(Debug)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub timing: TimingReport,
    /// First run of each method, in `methods` order.
    pub results: Vec<(String, SimResult)>,
}

fn engine_name(method: &str) -> &str {
    if method == FULL {
        NO_REDUCTION
    } else {
        method
    }
}

/// Runs every method of `cfg` on the same grid and scores it against the
/// full model.
pub fn compare(sys: &PowerSystem, fault: &FaultSpec, cfg: &CompareConfig) -> Result<Comparison> {
    AdaptiveConfig {
        method: NO_REDUCTION.into(),
        reduction: cfg.reduction.clone(),
        h: cfg.h,
        t_end: cfg.t_end,
    }
    .validate()?;
    if cfg.repeats == 0 {
        return Err(Error::validation("repeats", "must be >= 1"));
    }
    if !cfg.methods.iter().any(|m| m == FULL) {
        return Err(Error::validation(
            "methods",
            "the full reference run is required",
        ));
    }
    let registry = Registry::default();
    for m in &cfg.methods {
        if m != FULL {
            registry.get(m)?;
        }
    }
    let part = sys.partition()?;
    let scenario = Scenario::new(sys, fault, cfg.h, cfg.t_end)?;
    let offline = if cfg.methods.iter().any(|m| m != FULL) {
        scenario.prepare(&cfg.reduction)?
    } else {
        0.0
    };

    let jobs: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|r| (0..cfg.methods.len()).map(move |m| (m, r)))
        .collect();
    let slots: Vec<Mutex<Option<Result<_>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(m, _)) = jobs.get(k) else { break };
        let out = scenario.run(engine_name(&cfg.methods[m]), &cfg.reduction, &registry);
        *slots[k].lock().expect("result lock") = Some(out);
    };
    let threads = cfg.threads.clamp(1, jobs.len());
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
    }

    let mut runs: Vec<Vec<_>> = cfg.methods.iter().map(|_| Vec::new()).collect();
    for ((m, _), slot) in jobs.iter().zip(slots) {
        let out = slot
            .into_inner()
            .expect("result lock")
            .expect("every job ran")?;
        runs[*m].push(out);
    }

    let full_idx = cfg
        .methods
        .iter()
        .position(|m| m == FULL)
        .expect("checked above");
    let (study, _) = sys.split_generators(part);
    let full = &runs[full_idx][0].0;
    let reference = pick_reference_generator(full, &study).ok_or(Error::validation(
        "partition",
        "study area has no generators",
    ))?;

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut dominant = None;
    for (method, method_runs) in cfg.methods.iter().zip(&runs) {
        let (res, rep) = &method_runs[0];
        let mut errs = Vec::with_capacity(SLOTS_PER_GEN);
        for slot in Slot::ALL {
            let col = SLOTS_PER_GEN * reference + slot.offset();
            let (mut a, mut b) = (full.column(col), res.column(col));
            if slot == Slot::Delta {
                a.iter_mut()
                    .chain(b.iter_mut())
                    .for_each(|v| *v = v.to_degrees());
            }
            errs.push(SlotError {
                slot: slot.name(),
                rmse: rmse(&a, &b)?,
            });
        }
        if dominant.is_none() {
            dominant = rep.dominant_modes.clone();
        }
        rows.push(MethodRow {
            method: method.clone(),
            rmse: errs,
            nonlinear_buses: rep.nonlinear_buses.clone(),
            linearized_buses: rep.linearized_buses.clone(),
            linear_states: rep.linear_states,
            fallback: rep.fallback.clone(),
        });
        let walls: Vec<f64> = method_runs.iter().map(|(r, _)| r.wall_clock).collect();
        timings.push(MethodTiming {
            method: method.clone(),
            wall_clock: walls.iter().copied().fold(f64::INFINITY, f64::min),
            runs: walls,
            offline: if method == FULL { 0.0 } else { offline },
        });
    }

    let report = ComparisonReport {
        system: sys.name.clone(),
        fault: fault.clone(),
        h: cfg.h,
        t_end: cfg.t_end,
        reduction: cfg.reduction.clone(),
        reference: ReferenceGenerator {
            index: reference,
            bus: sys.layout().gen_buses()[reference],
        },
        dominant_modes: dominant,
        methods: rows,
    };
    let results = cfg
        .methods
        .iter()
        .cloned()
        .zip(runs.into_iter().map(|mut r| r.swap_remove(0).0))
        .collect();
    Ok(Comparison {
        report,
        timing: TimingReport {
            repeats: cfg.repeats,
            threads,
            methods: timings,
        },
        results,
    })
}
