//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the criteria execute in order on one thread, which keeps the
//! wall-clock comparisons free of interference.

mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use redgrid::adaptive::{modal_report, Scenario};
use redgrid::bench::{compare, rmse, CompareConfig, FULL};
use redgrid::data;
use redgrid::dynamics::{integrate, rhs, FullModel};
use redgrid::netsolve::Snapshot;
use redgrid::powerflow::{init_dynamic_state, solve_power_flow, DEFAULT_MAX_ITER, DEFAULT_TOL};
use redgrid::reduction::{
    balanced_truncate, lyapunov_residual, lyapunov_solve, sampled_hinf_error, ReductionConfig,
    Registry,
};
use redgrid::smallsignal::{eigensolve, linearize_full, participation_factors, Difference};
use redgrid::sysmodel::{Slot, DELTA, SLOTS_PER_GEN};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn equilibrium_fidelity() -> Check {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for sys in [data::nine_bus(), data::two_area()] {
        let pf =
            solve_power_flow(&sys, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
        let eq = init_dynamic_state(&sys, &pf).map_err(|e| e.to_string())?;
        let model = FullModel::new(&sys, &eq, None).map_err(|e| e.to_string())?;
        let f = rhs(&model, Snapshot::PreFault, &eq.x0).map_err(|e| e.to_string())?;
        let res = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let run = integrate(&sys, &eq, None, 10.0, 0.01).map_err(|e| e.to_string())?;
        let drift = (0..run.times.len())
            .flat_map(|i| {
                run.row(i)
                    .iter()
                    .zip(&eq.x0)
                    .map(|(a, b)| (a - b).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0_f64, f64::max);
        ok &= res <= 1e-8 && drift <= 1e-6;
        details.push(format!(
            "{}: |f|inf {res:.1e}, drift {drift:.1e}",
            sys.name.as_deref().unwrap_or("?")
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    details.push(format!("{secs:.2} s"));
    ensure(ok && secs < 5.0, details.join("; "))
}

fn linearization_oracle() -> Check {
    let sys = common::smib();
    let pf = solve_power_flow(&sys, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
    let eq = init_dynamic_state(&sys, &pf).map_err(|e| e.to_string())?;
    let model = FullModel::new(&sys, &eq, None).map_err(|e| e.to_string())?;
    let a = linearize_full(&model, &eq.x0, Difference::Central)
        .map_err(|e| e.to_string())?
        .a;
    let modal = eigensolve(&a).map_err(|e| e.to_string())?;
    let swing = (0..modal.len())
        .map(|i| modal.frequency(i))
        .fold(0.0, f64::max);
    let expect = common::smib_swing_hz(&sys, &pf);
    let rel = (swing - expect).abs() / expect;

    let two = data::two_area();
    let pf2 = solve_power_flow(&two, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
    let eq2 = init_dynamic_state(&two, &pf2).map_err(|e| e.to_string())?;
    let m2 = FullModel::new(&two, &eq2, None).map_err(|e| e.to_string())?;
    let c = linearize_full(&m2, &eq2.x0, Difference::Central)
        .map_err(|e| e.to_string())?
        .a;
    let f = linearize_full(&m2, &eq2.x0, Difference::Forward)
        .map_err(|e| e.to_string())?
        .a;
    let cf = (&c - &f).amax() / c.amax();
    ensure(
        rel < 0.01 && cf <= 1e-4,
        format!("swing {swing:.4} Hz vs closed form {expect:.4} Hz (rel {rel:.1e}); central vs forward {cf:.1e}"),
    )
}

fn modal_math() -> Check {
    let sys = data::two_area();
    let pf = solve_power_flow(&sys, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
    let eq = init_dynamic_state(&sys, &pf).map_err(|e| e.to_string())?;
    let model = FullModel::new(&sys, &eq, None).map_err(|e| e.to_string())?;
    let a = linearize_full(&model, &eq.x0, Difference::Central)
        .map_err(|e| e.to_string())?
        .a;
    let modal = eigensolve(&a).map_err(|e| e.to_string())?;
    let pft = participation_factors(&modal).map_err(|e| e.to_string())?;
    let res = modal.residual(&a) / inf_norm(&a);
    let bio = modal.biorthogonality();
    let n = a.nrows();
    let col = (0..n)
        .map(|i| ((0..n).map(|k| pft.raw[(k, i)]).sum::<Complex64>() - 1.0).norm())
        .fold(0.0, f64::max);
    ensure(
        n >= 36 && res <= 1e-8 && bio <= 1e-7 && col <= 1e-8,
        format!("{n} states; residual {res:.1e} |A|inf; biorthogonality {bio:.1e}; PF column sums {col:.1e}"),
    )
}

fn dominant_mode() -> Check {
    let sys = data::two_area();
    let fault = data::two_area_fault();
    let report = modal_report(&sys, Some(&fault), &ReductionConfig::default(), 0.01)
        .map_err(|e| e.to_string())?;
    let dominant = report.dominant_modes.ok_or("no dominant modes")?;
    let freqs: Vec<f64> = dominant.modes.iter().map(|m| m.frequency).collect();
    let any_oscillatory = report
        .modes
        .iter()
        .any(|m| m.imag > 0.0 && (0.3..=0.8).contains(&m.frequency));
    let ranked = freqs.iter().take(2).any(|f| (0.3..=0.8).contains(f));
    ensure(
        any_oscillatory && ranked,
        format!(
            "top-2 dominant modes at {freqs:.3?} Hz for the bus {} fault",
            fault.bus
        ),
    )
}

fn balanced_truncation() -> Check {
    let sys = data::two_area();
    let sc = Scenario::new(&sys, &data::two_area_fault(), 0.01, 16.0).map_err(|e| e.to_string())?;
    let lin = &sc.analysis.as_ref().ok_or("no external area")?.lin;
    let (a, b, c, d) = (&lin.a, &lin.b, &lin.c, &lin.d);
    let qc = b * b.transpose();
    let qo = c.transpose() * c;
    let wc = lyapunov_solve(a, &qc).map_err(|e| e.to_string())?;
    let wo = lyapunov_solve(&a.transpose(), &qo).map_err(|e| e.to_string())?;
    let rc = lyapunov_residual(a, &wc, &qc) / qc.amax();
    let ro = lyapunov_residual(&a.transpose(), &wo, &qo) / qo.amax();
    let bt = balanced_truncate(a, b, c, d, 1e-4).map_err(|e| e.to_string())?;
    let sorted = bt.hsv.windows(2).all(|w| w[0] >= w[1]);
    let tail: f64 = bt.hsv[bt.order..].iter().sum();
    let err = sampled_hinf_error((a, b, c, d), (&bt.a, &bt.b, &bt.c, &bt.d), 1e-3, 1e3, 100);
    let bound = 2.0 * tail + 1e-6;
    ensure(
        rc <= 1e-8 && ro <= 1e-8 && sorted && err <= bound,
        format!(
            "residuals {rc:.1e}/{ro:.1e} |Q|; order {} of {}; sampled error {err:.2e} <= {bound:.2e}",
            bt.order,
            a.nrows()
        ),
    )
}

fn max_abs_diff(a: &redgrid::dynamics::SimResult, b: &redgrid::dynamics::SimResult) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn delta_rmse_max(
    a: &redgrid::dynamics::SimResult,
    b: &redgrid::dynamics::SimResult,
) -> Result<f64, String> {
    let mut m: f64 = 0.0;
    for g in 0..a.n_cols() / SLOTS_PER_GEN {
        let col = SLOTS_PER_GEN * g + DELTA;
        m = m.max(rmse(&a.column(col), &b.column(col)).map_err(|e| e.to_string())?);
    }
    Ok(m)
}

fn degenerate_thresholds() -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, sys) in [
        ("two-area", data::two_area()),
        ("two-area x9", data::two_area_chain(9)),
    ] {
        let sc =
            Scenario::new(&sys, &data::two_area_fault(), 0.01, 16.0).map_err(|e| e.to_string())?;
        let reg = Registry::default();
        let run = |method: &str, p_max: f64| {
            let cfg = ReductionConfig {
                p_max,
                ..Default::default()
            };
            sc.run(method, &cfg, &reg)
                .map(|r| r.0)
                .map_err(|e| e.to_string())
        };
        let full = run("none", 0.5)?;
        let all_nl = run("pf", 0.0)?;
        let linear = run("linear", 0.5)?;
        let all_lin = run("pf", 1.5)?;
        let e0 = delta_rmse_max(&full, &all_nl)?;
        let e1 = max_abs_diff(&linear, &all_lin);
        ok &= e0 <= 1e-3 && e1 <= 1e-10;
        details.push(format!(
            "{name}: p_max=0 vs full {e0:.1e} rad, p_max>1 vs linear {e1:.1e}"
        ));
    }
    ensure(ok, details.join("; "))
}

fn accuracy_ordering() -> Check {
    let start = Instant::now();
    let cfg = CompareConfig {
        repeats: 1,
        ..Default::default()
    };
    let cmp =
        compare(&data::two_area(), &data::two_area_fault(), &cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let d = |m: &str| {
        cmp.report
            .row(m)
            .map(|r| r.slot(Slot::Delta))
            .unwrap_or(f64::NAN)
    };
    let (pf, lin, rot) = (d("pf"), d("linear"), d("rotor"));
    ensure(
        pf < 0.8 * lin && pf <= rot && secs < 60.0,
        format!(
            "bus {} reference, delta RMSE pf {pf:.3} deg, linear {lin:.3} deg, rotor {rot:.3} deg; {secs:.2} s",
            cmp.report.reference.bus
        ),
    )
}

fn speed_ordering() -> Check {
    let sys = data::two_area_chain(19);
    let n_ext = sys
        .split_generators(sys.partition().map_err(|e| e.to_string())?)
        .1
        .len();
    let cfg = CompareConfig {
        repeats: 3,
        threads: 1,
        ..Default::default()
    };
    let cmp = compare(&sys, &data::two_area_fault(), &cfg).map_err(|e| e.to_string())?;
    let w = |m: &str| cmp.timing.wall_clock(m).unwrap_or(f64::NAN);
    let (full, pf, lin) = (w(FULL), w("pf"), w("linear"));
    let speedup = full / pf;
    ensure(
        n_ext >= 20 && full > pf && pf >= lin && speedup >= 1.3,
        format!(
            "{n_ext} external generators; min of 3: full {full:.4} s, pf {pf:.4} s, linear {lin:.4} s; pf speedup {speedup:.2}x"
        ),
    )
}

fn rmse_examples() -> Check {
    let same = rmse(&[1.0, -2.0, 3.5], &[1.0, -2.0, 3.5]).map_err(|e| e.to_string())?;
    let offset = rmse(&[0.0, 1.0, 2.0, 3.0], &[0.5, 1.5, 2.5, 3.5]).map_err(|e| e.to_string())?;
    let hand = rmse(&[0.0, 3.0], &[4.0, 3.0]).map_err(|e| e.to_string())?;
    ensure(
        same == 0.0 && offset == 0.5 && hand == 8f64.sqrt() && (hand - 2.8284).abs() < 5e-5,
        format!("identical {same}, offset 0.5 -> {offset}, (0,3) vs (4,3) -> {hand:.4}"),
    )
}

fn determinism() -> Check {
    let cfg = CompareConfig {
        repeats: 1,
        ..Default::default()
    };
    let once = || {
        compare(&data::two_area(), &data::two_area_fault(), &cfg)
            .map(|c| c.report.to_json())
            .map_err(|e| e.to_string())
    };
    let (a, b) = (once()?, once()?);
    ensure(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("equilibrium fidelity", equilibrium_fidelity),
        ("linearization oracle", linearization_oracle),
        ("modal math", modal_math),
        ("dominant inter-area mode", dominant_mode),
        ("balanced truncation", balanced_truncation),
        ("degenerate thresholds", degenerate_thresholds),
        ("accuracy ordering", accuracy_ordering),
        ("speed ordering", speed_ordering),
        ("rmse examples", rmse_examples),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let (status, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {status}: {name}: {detail}", k + 1);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
