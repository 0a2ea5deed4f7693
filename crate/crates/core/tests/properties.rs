use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use redgrid::reduction::{
    balanced_truncate, lyapunov_residual, lyapunov_solve, sampled_hinf_error,
    select_by_participation, select_by_rotor_angle,
};
use redgrid::smallsignal::{eigensolve, participation_factors, DominantMode, DominantModes};
use redgrid::sysmodel::{Slot, StateLayout, SLOTS_PER_GEN};

/// `-(M M^T) - I + (S - S^T)`: symmetric part negative definite, so stable.
fn stable(n: usize, m: Vec<f64>, s: Vec<f64>) -> DMatrix<f64> {
    let m = DMatrix::from_vec(n, n, m);
    let s = DMatrix::from_vec(n, n, s);
    -(&m * m.transpose()) - DMatrix::identity(n, n) + (&s - s.transpose())
}

fn stable_system() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (2usize..7).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-2.0f64..2.0, n * n),
            prop::collection::vec(-1.0f64..1.0, n * 2),
            prop::collection::vec(-1.0f64..1.0, n * 2),
        )
            .prop_map(move |(m, s, b, c)| {
                (
                    stable(n, m, s),
                    DMatrix::from_vec(n, 2, b),
                    DMatrix::from_vec(2, n, c),
                )
            })
    })
}

proptest! {
    #[test]
    fn layout_index_round_trip(buses in prop::collection::btree_set(1u32..500, 1..12), pick in 0usize..1000) {
        let layout = StateLayout::new(buses.into_iter().collect());
        let idx = pick % layout.len();
        let (g, slot) = layout.locate(idx).unwrap();
        prop_assert_eq!(layout.index(g, slot), idx);
        prop_assert_eq!(layout.index_of(g, slot.name()).unwrap(), idx);
        prop_assert!(layout.locate(layout.len()).is_none());
        prop_assert_eq!(layout.column_names().len(), SLOTS_PER_GEN * layout.n_gen());
    }

    #[test]
    fn participation_ignores_eigenvector_scaling(
        (a, _, _) in stable_system(),
        scales in prop::collection::vec((0.1f64..10.0, -3.0f64..3.0), 7),
    ) {
        let modal = eigensolve(&a).unwrap();
        let base = participation_factors(&modal).unwrap();
        let mut scaled = modal.clone();
        for (i, &(r, th)) in scales.iter().enumerate().take(modal.len()) {
            let c = Complex64::from_polar(r, th);
            for k in 0..modal.len() {
                scaled.phi[(k, i)] *= c;
                scaled.psi[(i, k)] /= c;
            }
        }
        let other = participation_factors(&scaled).unwrap();
        prop_assert!((&base.magnitude - &other.magnitude).amax() < 1e-9);
        for i in 0..modal.len() {
            let s: Complex64 = (0..modal.len()).map(|k| base.raw[(k, i)]).sum();
            prop_assert!((s - 1.0).norm() < 1e-8);
        }
    }

    #[test]
    fn lyapunov_residual_is_small((a, b, _) in stable_system()) {
        let q = &b * b.transpose();
        let x = lyapunov_solve(&a, &q).unwrap();
        prop_assert!(lyapunov_residual(&a, &x, &q) <= 1e-8 * q.amax().max(1e-300));
        prop_assert!((&x - x.transpose()).amax() <= 1e-10 * x.amax().max(1e-300));
    }

    #[test]
    fn truncation_error_within_bound((a, b, c) in stable_system(), tol in 1e-3f64..0.3) {
        let d = DMatrix::zeros(2, 2);
        let bt = balanced_truncate(&a, &b, &c, &d, tol).unwrap();
        prop_assert!(bt.hsv.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(bt.order >= 1 && bt.order <= a.nrows());
        let tail: f64 = bt.hsv[bt.order..].iter().sum();
        let err = sampled_hinf_error((&a, &b, &c, &d), (&bt.a, &bt.b, &bt.c, &bt.d), 1e-3, 1e3, 100);
        prop_assert!(err <= 2.0 * tail + 1e-6, "err {} bound {}", err, 2.0 * tail);
    }

    #[test]
    fn rotor_selection_shrinks_with_threshold(dev in prop::collection::vec(0.0f64..1.0, 1..20), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let big = select_by_rotor_angle(&dev, lo);
        let small = select_by_rotor_angle(&dev, hi);
        prop_assert!(small.iter().all(|g| big.contains(g)));
        prop_assert_eq!(select_by_rotor_angle(&dev, 0.0).len(), dev.len());
    }

    #[test]
    fn participation_selection_shrinks_with_p_max(
        (a, _, _) in stable_system(),
        (a2, _, _) in stable_system(),
        p1 in 0.0f64..1.2,
        p2 in 0.0f64..1.2,
    ) {
        // pad to whole generators so per-generator tables exist
        let mut big = DMatrix::<f64>::zeros(SLOTS_PER_GEN * 2, SLOTS_PER_GEN * 2);
        for i in 0..SLOTS_PER_GEN * 2 {
            big[(i, i)] = -10.0 - i as f64;
        }
        big.view_mut((0, 0), a.shape()).copy_from(&a);
        big.view_mut((SLOTS_PER_GEN, SLOTS_PER_GEN), a2.shape()).copy_from(&a2);
        big[(0, SLOTS_PER_GEN)] = 0.3;
        let modal = eigensolve(&big).unwrap();
        let pf = participation_factors(&modal).unwrap();
        let dominant = DominantModes {
            modes: (0..2)
                .map(|i| DominantMode {
                    index: i,
                    eigenvalue: modal.eigenvalues[i],
                    z: 1.0,
                    frequency: modal.frequency(i),
                    damping: modal.damping(i),
                })
                .collect(),
        };
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let (many, scores) = select_by_participation(&pf, &dominant, lo);
        let (few, _) = select_by_participation(&pf, &dominant, hi);
        prop_assert!(few.iter().all(|g| many.contains(g)));
        prop_assert!(scores.iter().all(|&s| (0.0..=1.0).contains(&s)));
        prop_assert_eq!(select_by_participation(&pf, &dominant, 0.0).0.len(), 2);
        prop_assert!(select_by_participation(&pf, &dominant, 1.0 + 1e-9).0.is_empty());
    }
}

#[test]
fn slot_names_parse_back() {
    for s in Slot::ALL {
        assert_eq!(Slot::parse(s.name()).unwrap(), s);
    }
    assert!(Slot::parse("theta").is_err());
}
