//! Independent oracles and instance builders shared by the integration tests.
#![allow(dead_code)]

use dm_lab::processes::{binary_tree, gen_ground_truth, random_tree, GroundTruthPair};
use dm_lab::{AdaptedProcess, DyadicTime, FiniteFilteredSpace, RandomVariable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E[f | F_t]` by summing over each atom's block, computed from scratch.
pub fn brute_cond_exp(space: &FiniteFilteredSpace, f: &[f64], t: DyadicTime) -> Vec<f64> {
    let part = space.partition_at(t).unwrap();
    let p = space.probs();
    (0..f.len())
        .map(|a| {
            let (mut num, mut den) = (0.0, 0.0);
            for b in 0..f.len() {
                if part.block_of(b) == part.block_of(a) {
                    num += p[b] * f[b];
                    den += p[b];
                }
            }
            num / den
        })
        .collect()
}

/// Discrete decomposition by the textbook recursion on the brute-force conditional expectation.
pub fn brute_decompose(space: &FiniteFilteredSpace, s: &AdaptedProcess, level: u32) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let stride = 1usize << (s.level() - level);
    let steps = 1usize << level;
    let n = space.num_atoms();
    let sv = |j: usize| s.at_index(j * stride).values().to_vec();
    let mut a = vec![vec![0.0; n]];
    for j in 1..=steps {
        let diff: Vec<f64> = sv(j).iter().zip(sv(j - 1)).map(|(x, y)| x - y).collect();
        let inc = brute_cond_exp(space, &diff, DyadicTime::new(j as u64 - 1, level));
        a.push(a[j - 1].iter().zip(inc).map(|(x, d)| x + d).collect());
    }
    let m = (0..=steps).map(|j| sv(j).iter().zip(&a[j]).map(|(x, y)| x - y).collect()).collect();
    (m, a)
}

/// Whether `{τ ≤ t}` is a union of blocks at every grid time `t`.
pub fn brute_is_stopping_time(space: &FiniteFilteredSpace, tau: &[DyadicTime], level: u32) -> bool {
    (0..=(1u64 << level)).all(|j| {
        let t = DyadicTime::new(j, level);
        let part = space.partition_at(t).unwrap();
        (0..tau.len())
            .all(|a| (0..tau.len()).all(|b| part.block_of(a) != part.block_of(b) || (tau[a] <= t) == (tau[b] <= t)))
    })
}

/// Every stopping time on the level grid, built by deciding block by block whether to stop.
pub fn all_stopping_times(space: &FiniteFilteredSpace, level: u32) -> Vec<Vec<DyadicTime>> {
    fn go(
        space: &FiniteFilteredSpace,
        level: u32,
        j: u64,
        tau: Vec<Option<DyadicTime>>,
        out: &mut Vec<Vec<DyadicTime>>,
    ) {
        let t = DyadicTime::new(j, level);
        if j == 1 << level {
            out.push(tau.into_iter().map(|x| x.unwrap_or(DyadicTime::ONE)).collect());
            return;
        }
        let part = space.partition_at(t).unwrap();
        let open: Vec<usize> = (0..part.num_blocks())
            .filter(|&b| (0..tau.len()).any(|a| part.block_of(a) == b && tau[a].is_none()))
            .collect();
        for mask in 0u64..(1 << open.len()) {
            let mut next = tau.clone();
            for (i, &b) in open.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    for (a, slot) in next.iter_mut().enumerate() {
                        if part.block_of(a) == b {
                            *slot = Some(t);
                        }
                    }
                }
            }
            go(space, level, j + 1, next, out);
        }
    }
    let mut out = Vec::new();
    go(space, level, 0, vec![None; space.num_atoms()], &mut out);
    out
}

/// `E[|S_τ|]` evaluated directly.
pub fn stopped_abs_mean(space: &FiniteFilteredSpace, s: &AdaptedProcess, tau: &[DyadicTime]) -> f64 {
    tau.iter().enumerate().map(|(a, t)| space.probs()[a] * s.at(*t).unwrap()[a].abs()).sum()
}

/// Weighted squared norm of `Σ λ_j f_j` from an explicit Gram matrix.
fn quad(gram: &[Vec<f64>], l: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..l.len() {
        for j in 0..l.len() {
            s += l[i] * l[j] * gram[i][j];
        }
    }
    s
}

/// Minimum norm over the hull of at most three vectors: simplex grid search at step 1e-3,
/// then four rounds of local grid refinement, each ten times finer.
pub fn grid_min_norm(probs: &[f64], vectors: &[Vec<f64>]) -> f64 {
    let m = vectors.len();
    assert!((1..=3).contains(&m));
    let gram: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| (0..probs.len()).map(|a| probs[a] * vectors[i][a] * vectors[j][a]).sum()).collect())
        .collect();
    if m == 1 {
        return quad(&gram, &[1.0]).sqrt();
    }
    let point = |x: f64, y: f64| -> Option<Vec<f64>> {
        if m == 2 {
            (0.0..=1.0).contains(&x).then(|| vec![x, 1.0 - x])
        } else {
            let z = 1.0 - x - y;
            (x >= 0.0 && y >= 0.0 && z >= -1e-15).then(|| vec![x, y, z.max(0.0)])
        }
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let search = |cx: f64, cy: f64, half: f64, step: f64, best: &mut (f64, f64, f64)| {
        let k = (half / step).round() as i64;
        for i in -k..=k {
            let ys = if m == 2 { 0..=0 } else { -k..=k };
            for j in ys {
                let (x, y) = (cx + i as f64 * step, cy + j as f64 * step);
                if let Some(l) = point(x, y) {
                    let v = quad(&gram, &l);
                    if v < best.0 {
                        *best = (v, x, y);
                    }
                }
            }
        }
    };
    search(0.5, 0.5, 0.5, 1e-3, &mut best);
    let mut step = 1e-3;
    for _ in 0..4 {
        let (_, x, y) = best;
        search(x, y, 2.0 * step, step / 10.0, &mut best);
        step /= 10.0;
    }
    best.0.max(0.0).sqrt()
}

pub fn random_rv(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> RandomVariable {
    RandomVariable::new((0..n).map(|_| rng.gen_range(-scale..=scale)).collect()).unwrap()
}

/// Random space with a known decomposition: either a binary tree or a random refining tree.
pub fn ground_truth_instance(seed: u64) -> (FiniteFilteredSpace, GroundTruthPair) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let depth = rng.gen_range(1..=8);
    let space = if seed.is_multiple_of(2) {
        let max_signs = 8.min(1u32 << depth);
        binary_tree(depth, rng.gen_range(1..=max_signs)).unwrap()
    } else {
        random_tree(seed, depth, rng.gen_range(1..=32)).unwrap()
    };
    let level = rng.gen_range(1..=depth);
    let pair = gen_ground_truth(seed, &space, level, rng.gen_range(0.0..2.0)).unwrap();
    let pair = pair.refine(&space, depth).unwrap();
    (space, pair)
}
