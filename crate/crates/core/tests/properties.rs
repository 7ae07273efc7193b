use num_complex::Complex64;
use proptest::prelude::*;

use collapse_walk::collapse::{apply_shift, CollapseEngine, Direction, FixedSplit, Shift, ShiftParams};
use collapse_walk::rng::{Purpose, TrialRng};
use collapse_walk::sequencer::{sample_orders, EventPoset, SequencerPolicy, SpacetimeEvent};
use collapse_walk::state::{BasisRotation, Bifurcation, BranchSet, EntangledState};

fn amp() -> impl Strategy<Value = Complex64> {
    (0.05f64..1.0, -3.1f64..3.1).prop_map(|(r, th)| Complex64::from_polar(r, th))
}

/// Normalized qutrit with every component nonzero.
fn qutrit() -> impl Strategy<Value = EntangledState> {
    prop::array::uniform3(amp()).prop_map(|a| {
        let labels = vec![vec!["a".into(), "b".into(), "c".into()]];
        EntangledState::normalized(vec![3], labels, a.to_vec()).unwrap()
    })
}

fn two_qubits() -> impl Strategy<Value = EntangledState> {
    prop::array::uniform4(amp()).prop_map(|a| {
        let labels = vec![vec!["x".into(), "y".into()], vec!["x".into(), "y".into()]];
        EntangledState::normalized(vec![2, 2], labels, a.to_vec()).unwrap()
    })
}

proptest! {
    #[test]
    fn shift_keeps_phases_and_ratios(state in qutrit(), d in 0.001f64..0.3, up in any::<bool>()) {
        let bif = Bifurcation::of(&state, BranchSet::new([0, 1])).unwrap();
        let dir = if up { Direction::Increase } else { Direction::Decrease };
        let Shift::Applied { state: s, effective_d, .. } = apply_shift(&state, &bif, dir, d).unwrap() else {
            panic!("live bifurcation");
        };
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        let p_new = s.born_density(bif.interacting()).unwrap();
        prop_assert!((p_new - (bif.p() + dir.sign() * effective_d)).abs() < 1e-12);
        for (old, new) in state.amps().iter().zip(s.amps()) {
            if new.norm() > 1e-9 {
                prop_assert!((old.arg() - new.arg()).abs() < 1e-9);
            }
        }
        let (a, b) = (s.amps()[0], s.amps()[1]);
        if b.norm() > 1e-9 {
            let ratio = (a / b) - (state.amps()[0] / state.amps()[1]);
            prop_assert!(ratio.norm() < 1e-9);
        }
    }

    #[test]
    fn shift_is_a_martingale(state in qutrit(), d in 0.001f64..0.9) {
        let bif = Bifurcation::of(&state, BranchSet::new([2])).unwrap();
        let mean: f64 = [Direction::Increase, Direction::Decrease]
            .iter()
            .map(|&dir| match apply_shift(&state, &bif, dir, d).unwrap() {
                Shift::Applied { state: s, .. } => s.born_density(bif.interacting()).unwrap(),
                Shift::AlreadyAbsorbed => bif.p(),
            })
            .sum::<f64>()
            / 2.0;
        prop_assert!((mean - bif.p()).abs() < 1e-12);
    }

    #[test]
    fn engine_matches_sequential_shifts(state in two_qubits(), d in 0.01f64..0.1, seed in any::<u64>(), n in 1u64..40) {
        let split = state.level_set(0, 0).unwrap();
        let engine = CollapseEngine::new(&state, std::slice::from_ref(&split), ShiftParams::new(d).unwrap()).unwrap();
        let mut draws = TrialRng::new(seed, 0, Purpose::Shifts);
        let (fast, trace) = engine.run_fixed_steps(&mut FixedSplit::new(0), &mut draws, n, true).unwrap();
        let mut slow = state.clone();
        for step in &trace.steps {
            let bif = Bifurcation::of(&slow, split.clone()).unwrap();
            match apply_shift(&slow, &bif, step.direction, d).unwrap() {
                Shift::Applied { state, effective_d, .. } => {
                    prop_assert!((effective_d - step.effective_d).abs() < 1e-9);
                    slow = state;
                }
                Shift::AlreadyAbsorbed => break,
            }
        }
        for (a, b) in fast.amps().iter().zip(slow.amps()) {
            prop_assert!((a - b).norm() < 1e-9, "{:?} vs {:?}", fast.amps(), slow.amps());
        }
    }

    #[test]
    fn rotation_round_trip(state in two_qubits(), g in amp(), dl in amp(), sub in 0usize..2) {
        let n = (g.norm_sqr() + dl.norm_sqr()).sqrt();
        let rot = BasisRotation::new(sub, g / n, dl / n, ["u", "v"]).unwrap();
        let back = state.rotate_subsystem(&rot).unwrap().rotate_subsystem(&rot.inverse(["x", "y"])).unwrap();
        prop_assert!((back.norm_sqr() - 1.0).abs() < 1e-12);
        for (a, b) in state.amps().iter().zip(back.amps()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        prop_assert_eq!(back.labels(), state.labels());
    }

    #[test]
    fn sampled_orders_are_extensions(
        coords in prop::collection::vec((0.0f64..10.0, -10.0f64..10.0), 1..8),
        seed in any::<u64>(),
        uniform in any::<bool>(),
    ) {
        let events: Vec<SpacetimeEvent> = coords
            .iter()
            .enumerate()
            .map(|(i, &(t, x))| SpacetimeEvent { id: 100 + i as u64, t, x, detector: 0, system: 0 })
            .collect();
        let poset = EventPoset::new(events).unwrap();
        let policy = if uniform { SequencerPolicy::UniformExtension } else { SequencerPolicy::RandomTopological };
        for order in sample_orders(&poset, policy, seed, 5).unwrap() {
            prop_assert!(poset.check_extension(&order).is_ok());
        }
    }
}
