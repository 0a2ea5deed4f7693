#![allow(dead_code)]

use num_complex::Complex64;
use redgrid::powerflow::PowerFlowSolution;
use redgrid::sysmodel::{PowerSystem, OMEGA_S};

pub const SMIB_H: f64 = 3.5;
pub const SMIB_XD_P: f64 = 0.3;
pub const SMIB_X_LINE: f64 = 0.4;
pub const BUS_XD_P: f64 = 1e-3;
pub const BUS_H: f64 = 1e5;

/// A 3.5 s machine behind a line to a very large, very stiff machine.
/// Flux decay and governor action are made negligibly slow so the swing
/// mode is the classical one.
pub fn smib() -> PowerSystem {
    let text = format!(
        r#"{{
  "name": "smib",
  "base_mva": 100.0,
  "buses": [
    {{"id": 1, "kind": "pv", "voltage_mag": 1.0, "p_gen": 0.8}},
    {{"id": 2, "kind": "slack", "voltage_mag": 1.0, "voltage_ang": 0.0, "p_load": 0.9}}
  ],
  "branches": [{{"from_bus": 1, "to_bus": 2, "x": {SMIB_X_LINE}}}],
  "machines": [
    {{"bus": 1, "mva_base": 100.0, "H": {SMIB_H}, "Xd": 1.8, "Xd_p": {SMIB_XD_P}, "Xq": 1.7, "Xq_p": {SMIB_XD_P},
      "Td0_p": 1e4, "Tq0_p": 1e4}},
    {{"bus": 2, "mva_base": 100.0, "H": {BUS_H}, "Xd": 0.002, "Xd_p": {BUS_XD_P}, "Xq": 0.002, "Xq_p": {BUS_XD_P},
      "Td0_p": 1e4, "Tq0_p": 1e4}}
  ],
  "exciters": [
    {{"bus": 1, "KA": 20.0, "TA": 0.2, "KE": 1.0, "TE": 0.314, "KF": 0.063, "TF": 0.35, "VR_max": 5.0, "VR_min": -5.0}},
    {{"bus": 2, "KA": 20.0, "TA": 0.2, "KE": 1.0, "TE": 0.314, "KF": 0.063, "TF": 0.35, "VR_max": 5.0, "VR_min": -5.0}}
  ],
  "governors": [
    {{"bus": 1, "RD": 1e6, "TSV": 0.2, "TCH": 0.3, "P_sv_max": 2.0, "P_sv_min": 0.0}},
    {{"bus": 2, "RD": 1e6, "TSV": 0.2, "TCH": 0.3, "P_sv_max": 2.0, "P_sv_min": 0.0}}
  ]
}}"#
    );
    PowerSystem::from_json_str(&text).expect("smib system is valid")
}

/// Classical swing frequency (Hz) of the SMIB case from the power-flow
/// solution: internal EMFs behind `Xd'`, a hand-reduced two-node network,
/// and `w^2 = w_s (K12 / 2H1 + K21 / 2H2)`.
pub fn smib_swing_hz(sys: &PowerSystem, pf: &PowerFlowSolution) -> f64 {
    let j = Complex64::new(0.0, 1.0);
    let v: Vec<Complex64> = (0..2)
        .map(|k| Complex64::from_polar(pf.vm[k], pf.va[k]))
        .collect();
    let xp = [SMIB_XD_P, BUS_XD_P];
    let e: Vec<Complex64> = (0..2)
        .map(|k| {
            let i = (Complex64::new(pf.p_gen[k], pf.q_gen[k]) / v[k]).conj();
            v[k] + j * xp[k] * i
        })
        .collect();
    // constant-admittance load at bus 2
    let bus2 = &sys.buses[1];
    let y_load = Complex64::new(bus2.p_load, -bus2.q_load) / (pf.vm[1] * pf.vm[1]);
    // nodes: internal 1, internal 2 (kept); bus 1, bus 2 (eliminated)
    let y1 = 1.0 / (j * SMIB_XD_P);
    let yl = 1.0 / (j * SMIB_X_LINE);
    let y2 = 1.0 / (j * BUS_XD_P);
    let ybb = [[y1 + yl, -yl], [-yl, yl + y2 + y_load]];
    let ybk = [
        [-y1, Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), -y2],
    ];
    let det = ybb[0][0] * ybb[1][1] - ybb[0][1] * ybb[1][0];
    let inv = [
        [ybb[1][1] / det, -ybb[0][1] / det],
        [-ybb[1][0] / det, ybb[0][0] / det],
    ];
    // Y_red = Y_kk - Y_kb Y_bb^-1 Y_bk, with Y_kb = Y_bk^T
    let ykk = [
        [y1, Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), y2],
    ];
    let mut yr = ykk;
    for a in 0..2 {
        for b in 0..2 {
            let mut s = Complex64::new(0.0, 0.0);
            for p in 0..2 {
                for q in 0..2 {
                    s += ybk[p][a] * inv[p][q] * ybk[q][b];
                }
            }
            yr[a][b] -= s;
        }
    }
    let d12 = e[0].arg() - e[1].arg();
    let (m1, m2) = (e[0].norm(), e[1].norm());
    let (g12, b12) = (yr[0][1].re, yr[0][1].im);
    let (g21, b21) = (yr[1][0].re, yr[1][0].im);
    // dPe1/d(d12) and dPe2/d(d21)
    let k12 = m1 * m2 * (-g12 * d12.sin() + b12 * d12.cos());
    let k21 = m1 * m2 * (g21 * d12.sin() + b21 * d12.cos());
    let w2 = OMEGA_S * (k12 / (2.0 * SMIB_H) + k21 / (2.0 * BUS_H));
    w2.sqrt() / (2.0 * std::f64::consts::PI)
}
