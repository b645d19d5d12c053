mod common;

use common::{all_stopping_times, ground_truth_instance, stopped_abs_mean};
use dm_lab::processes::{
    binary_tree, class_d_sup, evaluate_at_stopping_time, gen_ground_truth, gen_squared_walk, is_submartingale,
    martingale_residual, random_tree, reveal_schedule, squared_walk_compensator,
};
use dm_lab::{AdaptedProcess, DyadicTime, RandomVariable};

#[test]
fn ground_truth_invariants_hold_for_many_seeds() {
    for seed in 0..150 {
        let (space, pair) = ground_truth_instance(seed);
        let check = pair.check(&space);
        assert!(check.holds(), "seed {seed}: {check:?}");
        assert!(is_submartingale(&space, &pair.process).unwrap().holds, "seed {seed}");
        assert!(pair.process.check_adapted(&space).is_ok());
    }
}

#[test]
fn generators_are_deterministic() {
    let space = random_tree(7, 4, 20).unwrap();
    let again = random_tree(7, 4, 20).unwrap();
    assert_eq!(space.probs(), again.probs());
    assert_eq!(space.distinct_partitions(), again.distinct_partitions());
    let a = gen_ground_truth(3, &space, 3, 1.0).unwrap();
    let b = gen_ground_truth(3, &space, 3, 1.0).unwrap();
    assert_eq!(a.process, b.process);
    let c = gen_ground_truth(4, &space, 3, 1.0).unwrap();
    assert_ne!(a.process, c.process);
}

#[test]
fn reveal_schedule_is_increasing_and_inside_the_grid() {
    for depth in 1..=8 {
        for signs in 1..=12 {
            let s = reveal_schedule(depth, signs);
            assert!(s.windows(2).all(|w| w[0] <= w[1]));
            assert!(s.iter().all(|&j| j >= 1 && j <= 1 << depth));
        }
    }
}

#[test]
fn squared_walk_minus_compensator_is_a_martingale() {
    for depth in 2..=7 {
        let space = binary_tree(depth, 8.min(1 << depth)).unwrap();
        let s = gen_squared_walk(&space, depth).unwrap();
        let a = squared_walk_compensator(&space).unwrap();
        let m = s.sub(&a).unwrap();
        assert!(martingale_residual(&space, &m) < 1e-12);
        assert!(is_submartingale(&space, &s).unwrap().holds);
        // the compensator is deterministic and ends at the walk's terminal variance
        let a1 = a.terminal();
        assert!(a1.values().iter().all(|&v| (v - a1[0]).abs() < 1e-15));
        assert!((space.expectation(s.terminal()) - a1[0]).abs() < 1e-12);
    }
}

#[test]
fn martingale_is_not_a_strict_submartingale_violation() {
    let space = binary_tree(3, 3).unwrap();
    let s = gen_squared_walk(&space, 3).unwrap();
    let neg = s.scale(-1.0);
    let check = is_submartingale(&space, &neg).unwrap();
    assert!(!check.holds);
    assert!(check.max_violation > 0.0);
}

#[test]
fn class_d_sup_matches_exhaustive_search() {
    for seed in 0..12 {
        let space = if seed % 2 == 0 { binary_tree(2, 3).unwrap() } else { random_tree(seed, 2, 5).unwrap() };
        let pair = gen_ground_truth(seed, &space, 2, 1.5).unwrap();
        let s = &pair.process;
        let brute =
            all_stopping_times(&space, 2).iter().map(|tau| stopped_abs_mean(&space, s, tau)).fold(0.0, f64::max);
        let snell = class_d_sup(&space, s).unwrap();
        assert!((snell - brute).abs() < 1e-12, "seed {seed}: {snell} vs {brute}");
    }
}

#[test]
fn class_d_sup_dominates_constant_times() {
    let (space, pair) = ground_truth_instance(11);
    let s = &pair.process;
    let sup = class_d_sup(&space, s).unwrap();
    for t in s.grid().times() {
        let tau = vec![t; space.num_atoms()];
        assert!(sup >= stopped_abs_mean(&space, s, &tau) - 1e-12);
    }
}

#[test]
fn stopped_values_follow_each_atom() {
    let space = binary_tree(3, 4).unwrap();
    let s = gen_squared_walk(&space, 3).unwrap();
    let tau = s.first_exceedance(&space, 0.3).unwrap();
    let stopped = evaluate_at_stopping_time(&space, &s, &tau).unwrap();
    for atom in 0..space.num_atoms() {
        let t = tau.at(atom);
        assert_eq!(stopped[atom], s.at(t).unwrap()[atom]);
        if t < DyadicTime::ONE {
            assert!(stopped[atom] > 0.3);
        }
        // no earlier grid time exceeds the level
        for u in s.grid().times().filter(|&u| u < t) {
            assert!(s.at(u).unwrap()[atom] <= 0.3);
        }
    }
}

#[test]
fn sampling_keeps_shared_times() {
    let (_, pair) = ground_truth_instance(4);
    let s = &pair.process;
    for level in 0..=s.level() {
        let coarse = s.sample(level).unwrap();
        for t in coarse.grid().times() {
            assert_eq!(coarse.at(t).unwrap(), s.at(t).unwrap());
        }
    }
}

#[test]
fn non_adapted_values_are_rejected() {
    let space = binary_tree(1, 1).unwrap();
    let peek = vec![
        RandomVariable::new(vec![1.0, -1.0]).unwrap(),
        RandomVariable::new(vec![1.0, -1.0]).unwrap(),
        RandomVariable::new(vec![1.0, -1.0]).unwrap(),
    ];
    assert!(AdaptedProcess::new(&space, 1, peek).is_err());
}
