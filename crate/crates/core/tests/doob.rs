mod common;

use common::{brute_decompose, ground_truth_instance};
use dm_lab::doob::{extend_compensator_step, extend_martingale, normalize_terminal, tau_threshold, UI_SLACK};
use dm_lab::processes::{
    binary_tree, evaluate_at_stopping_time, gen_ground_truth, gen_squared_walk, martingale_residual,
};
use dm_lab::{doob_decompose_discrete, ui_diagnostics, DyadicGrid};

#[test]
fn recovers_the_ground_truth() {
    for seed in 0..120 {
        let (space, pair) = ground_truth_instance(seed);
        let d = doob_decompose_discrete(&space, &pair.process, pair.level()).unwrap();
        let scale = 1.0 + pair.process.values().iter().map(|v| v.max_abs()).fold(0.0, f64::max);
        assert!(d.compensator.max_abs_diff(&pair.compensator) < 1e-12 * scale, "seed {seed}");
        assert!(d.martingale.max_abs_diff(&pair.martingale) < 1e-12 * scale, "seed {seed}");
    }
}

#[test]
fn matches_the_textbook_recursion_at_every_level() {
    for seed in 0..60 {
        let (space, pair) = ground_truth_instance(seed);
        for level in 0..=space.depth() {
            let d = doob_decompose_discrete(&space, &pair.process, level).unwrap();
            let (m, a) = brute_decompose(&space, &pair.process, level);
            for j in 0..a.len() {
                for atom in 0..space.num_atoms() {
                    assert!((d.compensator.at_index(j)[atom] - a[j][atom]).abs() < 1e-12);
                    assert!((d.martingale.at_index(j)[atom] - m[j][atom]).abs() < 1e-12);
                }
            }
            assert!(d.predictability_violation(&space).is_none());
            assert!(d.martingale_residual(&space) < 1e-12);
            assert!(d.min_increment() >= -1e-12);
        }
    }
}

#[test]
fn compensator_is_additive_and_monotone_in_submartingale_input() {
    for seed in 0..40 {
        let (space, base) = ground_truth_instance(seed);
        let level = base.level();
        let extra = gen_ground_truth(seed + 1000, &space, level, 0.7).unwrap();
        let sum = base.process.add(&extra.process).unwrap();
        let a_sum = doob_decompose_discrete(&space, &sum, level).unwrap().compensator;
        let a_base = doob_decompose_discrete(&space, &base.process, level).unwrap().compensator;
        let a_extra = doob_decompose_discrete(&space, &extra.process, level).unwrap().compensator;
        assert!(a_sum.max_abs_diff(&a_base.add(&a_extra).unwrap()) < 1e-12);
        for (s, b) in a_sum.values().iter().zip(a_base.values()) {
            assert!(s.values().iter().zip(b.values()).all(|(x, y)| x >= &(y - 1e-12)));
        }
    }
}

#[test]
fn normalization_keeps_the_compensator() {
    for seed in 0..40 {
        let (space, pair) = ground_truth_instance(seed);
        let normalized = normalize_terminal(&space, &pair.process);
        assert!(normalized.terminal().max_abs() < 1e-12);
        assert!(normalized.values().iter().all(|v| v.values().iter().all(|&x| x <= 1e-12)));
        for level in 0..=space.depth() {
            let a = doob_decompose_discrete(&space, &pair.process, level).unwrap().compensator;
            let b = doob_decompose_discrete(&space, &normalized, level).unwrap().compensator;
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }
}

#[test]
fn ui_diagnostics_pass_on_random_submartingales() {
    let cs = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0];
    for seed in 0..30 {
        let (space, pair) = ground_truth_instance(seed);
        let levels: Vec<u32> = (0..=space.depth()).collect();
        let ui = ui_diagnostics(&space, &pair.process, &levels, &cs).unwrap();
        assert_eq!(ui.rows.len(), levels.len() * cs.len());
        assert!(ui.all_pass(), "seed {seed}: {:?}", ui.first_failure());
        assert!(ui.normalization_compensator_gap < 1e-12);
        for row in &ui.rows {
            // tail mass recomputed from the compensator
            let a1 = doob_decompose_discrete(&space, &pair.process, row.level).unwrap().compensator;
            let tail: f64 =
                a1.terminal().values().iter().zip(space.probs()).filter(|(v, _)| **v > row.c).map(|(v, p)| v * p).sum();
            assert!((tail - row.tail_mass).abs() < 1e-12);
            assert!(row.tail_slack() >= -UI_SLACK);
        }
    }
}

#[test]
fn threshold_times_stop_below_the_level() {
    let space = binary_tree(6, 8).unwrap();
    let s = gen_squared_walk(&space, 6).unwrap();
    let pair = gen_ground_truth(5, &space, 6, 1.0).unwrap();
    for process in [&s, &pair.process] {
        let a = doob_decompose_discrete(&space, process, 6).unwrap().compensator;
        for c in [0.05, 0.3, 1.0, 5.0] {
            let tau = tau_threshold(&space, &a, c).unwrap();
            let stopped = evaluate_at_stopping_time(&space, &a, &tau).unwrap();
            assert!(stopped.values().iter().all(|&v| v <= c));
        }
    }
}

#[test]
fn extensions_are_consistent() {
    for seed in 0..30 {
        let (space, pair) = ground_truth_instance(seed);
        let depth = space.depth();
        for level in 0..=depth {
            let d = doob_decompose_discrete(&space, &pair.process, level).unwrap();
            let m = extend_martingale(&space, &d, depth).unwrap();
            let a = extend_compensator_step(&space, &d, depth).unwrap();
            assert!(martingale_residual(&space, &m) < 1e-12);
            let stride = 1usize << (depth - level);
            let grid = DyadicGrid::new(depth);
            for k in 0..grid.len() {
                let coarse = k.div_ceil(stride);
                assert_eq!(a.at_index(k), d.compensator.at_index(coarse));
                if k % stride == 0 {
                    assert_eq!(m.at_index(k), d.martingale.at_index(coarse));
                }
                if k > 0 {
                    let part = space.partition_at(grid.time(k - 1)).unwrap();
                    assert!(part.constant_on_blocks(a.at_index(k).values()).is_ok());
                }
            }
        }
    }
}

#[test]
fn out_of_range_levels_are_rejected() {
    let (space, pair) = ground_truth_instance(2);
    assert!(doob_decompose_discrete(&space, &pair.process, space.depth() + 1).is_err());
    let d = doob_decompose_discrete(&space, &pair.process, space.depth()).unwrap();
    assert!(extend_martingale(&space, &d, space.depth() + 1).is_err());
    assert!(tau_threshold(&space, &d.compensator, 0.0).is_err());
}
