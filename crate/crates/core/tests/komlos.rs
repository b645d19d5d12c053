mod common;

use common::{grid_min_norm, ground_truth_instance, random_rv};
use dm_lab::komlos::{BOUND_TOL, DEFAULT_TOL};
use dm_lab::processes::random_tree;
use dm_lab::{doob_decompose_discrete, komlos_extract, min_norm_convex_hull, FiniteFilteredSpace, RandomVariable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_instance(seed: u64, max_vectors: usize, max_atoms: usize) -> (FiniteFilteredSpace, Vec<RandomVariable>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = rng.gen_range(1..=max_atoms);
    let space = random_tree(seed, 1, atoms).unwrap();
    let m = rng.gen_range(1..=max_vectors);
    let scale = rng.gen_range(0.1..5.0);
    let vectors = (0..m).map(|_| random_rv(&mut rng, atoms, scale)).collect();
    (space, vectors)
}

fn certificate_min(space: &FiniteFilteredSpace, g: &RandomVariable, vectors: &[RandomVariable]) -> f64 {
    vectors.iter().map(|f| space.inner(g, &f.sub(g)) / space.l2_norm(f).max(1.0)).fold(f64::INFINITY, f64::min)
}

#[test]
fn min_norm_matches_grid_search() {
    for seed in 0..200 {
        let (space, vectors) = small_instance(seed, 3, 8);
        let sol = min_norm_convex_hull(&space, &vectors, DEFAULT_TOL).unwrap();
        let raw: Vec<Vec<f64>> = vectors.iter().map(|v| v.values().to_vec()).collect();
        let oracle = grid_min_norm(space.probs(), &raw);
        assert!((sol.norm - oracle).abs() < 1e-6, "seed {seed}: {} vs {oracle}", sol.norm);
        assert!(sol.lower_bound <= oracle + 1e-9);
    }
}

#[test]
fn certificates_hold_on_larger_hulls() {
    for seed in 0..60 {
        let max_vectors = if seed < 20 { 20 } else { 6 };
        let (space, mut vectors) = small_instance(1000 + seed, max_vectors, 12);
        if seed < 20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while vectors.len() < 20 {
                vectors.push(random_rv(&mut rng, space.num_atoms(), 2.0));
            }
        }
        let sol = min_norm_convex_hull(&space, &vectors, DEFAULT_TOL).unwrap();
        assert!(certificate_min(&space, &sol.point, &vectors) >= -1e-8, "seed {seed}");
        // the point is the stated combination
        let direct = sol.weights.combine(&vectors).unwrap();
        assert!(direct.max_abs_diff(&sol.point) < 1e-12);
        let sum: f64 = sol.weights.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(sol.weights.weights().iter().all(|&l| l >= 0.0));
        assert!(sol.lower_bound <= sol.norm + 1e-12);
    }
}

#[test]
fn optimality_by_parallelogram() {
    // for g the min-norm point and any h in the hull, ‖h − g‖² ≤ 2(‖h‖² − ‖g‖²)
    for seed in 0..40 {
        let (space, vectors) = small_instance(5000 + seed, 8, 10);
        let sol = min_norm_convex_hull(&space, &vectors, DEFAULT_TOL).unwrap();
        let g = &sol.point;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..vectors.len()).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut h = RandomVariable::zeros(space.num_atoms());
            for (w, f) in raw.iter().zip(&vectors) {
                h = h.add(&f.scale(w / total));
            }
            let d = h.sub(g);
            let lhs = space.inner(&d, &d);
            let rhs = 2.0 * (space.inner(&h, &h) - space.inner(g, g));
            assert!(lhs <= rhs + 1e-10, "seed {seed}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn extraction_reports_forward_convex_combinations() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = random_tree(seed, 2, rng.gen_range(2..=10)).unwrap();
        let len = rng.gen_range(2..=10);
        let seq: Vec<RandomVariable> = (0..len).map(|_| random_rv(&mut rng, space.num_atoms(), 3.0)).collect();
        let out = komlos_extract(&space, &seq, None, DEFAULT_TOL).unwrap();
        assert_eq!(out.weights.len(), len);
        for (n, (w, g)) in out.weights.iter().zip(&out.combined).enumerate() {
            assert!(w.start() >= n);
            assert!(w.support().all(|(j, l)| j >= n && j < len && l > 0.0));
            let mut direct = vec![0.0; space.num_atoms()];
            for (j, l) in w.support() {
                for (d, v) in direct.iter_mut().zip(seq[j].values()) {
                    *d += l * v;
                }
            }
            let direct = RandomVariable::new(direct).unwrap();
            assert!(direct.max_abs_diff(g) < 1e-12);
        }
        let r = &out.report;
        assert!(r.bounds.holds(BOUND_TOL), "seed {seed}: {:?}", r.bounds);
        assert!(r.bounds.tail_inf_drop <= BOUND_TOL);
        assert!(r.bounds.membership_residual <= 1e-12);
        assert!(r.tail_l1_diameter.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(r.records[0].n, 1);
    }
}

#[test]
fn extraction_is_deterministic() {
    let (space, seq) = small_instance(77, 3, 8);
    let seq: Vec<RandomVariable> = seq.iter().cycle().take(9).cloned().collect();
    let a = komlos_extract(&space, &seq, None, DEFAULT_TOL).unwrap();
    let b = komlos_extract(&space, &seq, None, DEFAULT_TOL).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());
}

#[test]
fn terminal_martingales_of_a_ground_truth_are_reproduced() {
    for seed in 0..20 {
        let (space, pair) = ground_truth_instance(seed);
        let seq: Vec<RandomVariable> = (1..=space.depth())
            .map(|n| doob_decompose_discrete(&space, &pair.process, n).unwrap().martingale.terminal().clone())
            .collect();
        // the level-depth decomposition recovers M exactly, so the last combination is M_1
        let out = komlos_extract(&space, &seq, None, DEFAULT_TOL).unwrap();
        let last = out.combined.last().unwrap();
        assert!(last.max_abs_diff(pair.martingale.terminal()) < 1e-12, "seed {seed}");
        assert!(out.report.bounds.holds(BOUND_TOL));
    }
}

#[test]
fn empty_hull_is_an_error() {
    let space = random_tree(1, 1, 3).unwrap();
    assert!(min_norm_convex_hull(&space, &[], DEFAULT_TOL).is_err());
    assert!(komlos_extract(&space, &[], None, DEFAULT_TOL).is_err());
}
