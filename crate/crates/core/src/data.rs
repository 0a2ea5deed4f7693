//! Bundled test systems.
//!
//! * `nine_bus`: the WSCC 3-machine, 9-bus system (machine data on 100 MVA,
//!   two-axis constants from the usual textbook set). Study area is buses
//!   1, 4, 5, 6; tie lines 5-7 and 6-9.
//! * `two_area`: the 4-machine, 11-bus two-area system (900 MVA machines,
//!   230 kV lines at 0.0001 + j0.001 pu/km, 0.00175 pu/km charging). Study
//!   area is area 1 (buses 1, 2, 5, 6, 7); tie lines are the two 7-8
//!   circuits.
//! * `two_area_chain(k)`: the two-area system with area 2 replicated `k`
//!   extra times as a chain hanging off the first copy, for scaling runs.
//!
//! All machines carry the same IEEE Type-1 exciter (KA = 20, TA = 0.2,
//! KE = 1, TE = 0.314, KF = 0.063, TF = 0.35, SE = 0.0039 exp(1.555 Efd))
//! and governor/turbine (RD = 0.05, TSV = 0.2 s, TCH = 0.3 s).

use serde_json::Value;

use crate::sysmodel::{FaultSpec, PowerSystem};

pub const NINE_BUS_JSON: &str = include_str!("../data/nine_bus.json");
pub const TWO_AREA_JSON: &str = include_str!("../data/two_area.json");

pub fn nine_bus() -> PowerSystem {
    PowerSystem::from_json_str(NINE_BUS_JSON).expect("bundled nine-bus system is valid")
}

pub fn two_area() -> PowerSystem {
    PowerSystem::from_json_str(TWO_AREA_JSON).expect("bundled two-area system is valid")
}

/// Featured contingency: three-phase fault at the tie-side bus 7, on at
/// 0.1 s and cleared 0.39 s later, through a 20 pu fault conductance. A
/// bolted fault of that duration costs area 1 synchronism.
pub fn two_area_fault() -> FaultSpec {
    FaultSpec {
        conductance: 20.0,
        ..FaultSpec::new(7, 0.1, 0.49)
    }
}

pub fn nine_bus_fault() -> FaultSpec {
    FaultSpec::new(4, 0.1, 0.15)
}

const AREA2_BUSES: [u32; 6] = [3, 4, 8, 9, 10, 11];

/// Two-area system whose external area is the original area 2 followed by
/// `extra_copies` further copies of it, each linked to the previous copy by
/// a double 110 km line from its bus 9 to the new copy's bus 8. Copy `c`
/// renumbers bus `b` to `100 c + b`. Each copy covers its own load and
/// roughly its own line losses, so the base-case inter-area transfer and
/// the original slack output barely change with `extra_copies`.
pub fn two_area_chain(extra_copies: usize) -> PowerSystem {
    let base: Value = serde_json::from_str(TWO_AREA_JSON).expect("bundled json parses");
    let mut sys = base.clone();
    let renum = |b: u64, c: usize| -> u64 { b + 100 * c as u64 };
    let is_area2 = |b: u64| AREA2_BUSES.contains(&(b as u32));
    for c in 1..=extra_copies {
        let buses = sys["buses"].as_array_mut().expect("buses");
        for bus in base["buses"].as_array().expect("buses") {
            let id = bus["id"].as_u64().expect("id");
            if !is_area2(id) {
                continue;
            }
            let mut nb = bus.clone();
            nb["id"] = renum(id, c).into();
            if nb["kind"] == "slack" {
                nb["kind"] = "pv".into();
                nb["p_gen"] = 7.1.into();
            }
            if id == 9 {
                nb["p_load"] = 13.8.into();
            }
            buses.push(nb);
        }
        let branches = sys["branches"].as_array_mut().expect("branches");
        for br in base["branches"].as_array().expect("branches") {
            let f = br["from_bus"].as_u64().expect("from");
            let t = br["to_bus"].as_u64().expect("to");
            if is_area2(f) && is_area2(t) {
                let mut nb = br.clone();
                nb["from_bus"] = renum(f, c).into();
                nb["to_bus"] = renum(t, c).into();
                branches.push(nb);
            }
        }
        let tie = base["branches"]
            .as_array()
            .expect("branches")
            .iter()
            .find(|br| br["from_bus"] == 7 && br["to_bus"] == 8)
            .expect("7-8 line")
            .clone();
        for _ in 0..2 {
            let mut nb = tie.clone();
            nb["from_bus"] = renum(9, c - 1).into();
            nb["to_bus"] = renum(8, c).into();
            branches.push(nb);
        }
        for key in ["machines", "exciters", "governors"] {
            let list = sys[key].as_array_mut().expect("blocks");
            for block in base[key].as_array().expect("blocks") {
                let b = block["bus"].as_u64().expect("bus");
                if is_area2(b) {
                    let mut nb = block.clone();
                    nb["bus"] = renum(b, c).into();
                    list.push(nb);
                }
            }
        }
    }
    sys["name"] = format!("Two-area chain with {} external copies", extra_copies + 1).into();
    PowerSystem::from_json_str(&sys.to_string()).expect("chain system is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_systems_load() {
        assert_eq!(nine_bus().n_gen(), 3);
        let two = two_area();
        assert_eq!(two.n_gen(), 4);
        assert_eq!(two.buses.len(), 11);
    }

    #[test]
    fn chain_grows_external_area() {
        let sys = two_area_chain(9);
        let part = sys.partition().unwrap();
        let (study, ext) = sys.split_generators(part);
        assert_eq!(study.len(), 2);
        assert_eq!(ext.len(), 20);
    }

    #[test]
    fn serialization_round_trip() {
        for sys in [nine_bus(), two_area(), two_area_chain(2)] {
            let again = PowerSystem::from_json_str(&sys.to_json_string()).unwrap();
            assert_eq!(again, sys);
        }
    }
}
