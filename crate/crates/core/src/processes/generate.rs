//! Instance generators.
//!
//! Every generator is a deterministic function of its arguments. Randomness
//! comes from `ChaCha8Rng::seed_from_u64(seed)` with `rand` 0.8 uniform
//! draws, which is value-stable across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{is_submartingale, martingale_residual, AdaptedProcess};
use crate::dyadic::{DyadicGrid, DyadicTime};
use crate::error::{Error, Result};
use crate::filtered_space::{FiniteFilteredSpace, RandomVariable, IDENTITY_TOL};

/// Largest supported number of signs in a binary tree (atoms = 2^signs).
pub const MAX_SIGNS: u32 = 20;

/// Master grid indices at which the signs of a binary tree are revealed.
///
/// Sign `k` (1-based) appears at index `ceil(k · 2^depth / (signs + 1))`. With
/// `signs = 2^depth` this is one sign per grid step.
pub fn reveal_schedule(depth: u32, signs: u32) -> Vec<u64> {
    let steps = 1u64 << depth;
    (1..=signs as u64).map(|k| (k * steps).div_ceil(signs as u64 + 1)).collect()
}

/// Binary tree space: atoms are sign sequences of length `signs`, equally likely;
/// the partition at a master time groups atoms sharing the signs revealed so far.
pub fn binary_tree(depth: u32, signs: u32) -> Result<FiniteFilteredSpace> {
    if signs == 0 || signs > MAX_SIGNS {
        return Err(Error::InvalidSpace(format!("sign count must be in 1..={MAX_SIGNS}, got {signs}")));
    }
    if depth == 0 || depth > 30 || signs as u64 > 1u64 << depth {
        return Err(Error::InvalidSpace(format!("cannot reveal {signs} signs on a grid of depth {depth}")));
    }
    let n_atoms = 1usize << signs;
    let atoms = (0..n_atoms)
        .map(|a| (1..=signs).map(|k| if sign_of(a, k, signs) > 0 { '+' } else { '-' }).collect::<String>())
        .collect();
    let probs = vec![1.0 / n_atoms as f64; n_atoms];
    let schedule = reveal_schedule(depth, signs);
    let grid = DyadicGrid::new(depth);
    let labels = (0..grid.len() as u64)
        .map(|j| {
            let revealed = schedule.iter().filter(|&&r| r <= j).count() as u32;
            (0..n_atoms).map(|a| a >> (signs - revealed)).collect()
        })
        .collect();
    FiniteFilteredSpace::from_labels(atoms, probs, depth, labels)
}

fn sign_of(atom: usize, k: u32, signs: u32) -> i64 {
    if (atom >> (signs - k)) & 1 == 0 {
        1
    } else {
        -1
    }
}

/// Recovers the sign count of a binary tree built by [`binary_tree`], or fails.
fn binary_tree_signs(space: &FiniteFilteredSpace) -> Result<u32> {
    let n = space.num_atoms();
    let wrong = |why: &str| Error::InvalidSpace(format!("not a binary tree space: {why}"));
    if !n.is_power_of_two() || n < 2 {
        return Err(wrong("atom count is not a power of two"));
    }
    let signs = n.trailing_zeros();
    let reference = binary_tree(space.depth(), signs).map_err(|_| wrong("too many signs for the depth"))?;
    if space.atoms() != reference.atoms() || space.probs() != reference.probs() {
        return Err(wrong("atoms are not equally likely sign sequences"));
    }
    for t in space.master_grid().times() {
        if space.partition_at(t)? != reference.partition_at(t)? {
            return Err(wrong(&format!("partition at {t} differs from the reveal schedule")));
        }
    }
    Ok(signs)
}

/// Squared scaled random walk `S_t = W_t²` on a binary tree, with `W` moving by
/// `±1/√L` at each reveal (`L` = number of signs). Values are computed as
/// `m²/L` from the integer walk `m`, so they are exact when `L` is a power of two.
pub fn gen_squared_walk(space: &FiniteFilteredSpace, level: u32) -> Result<AdaptedProcess> {
    let signs = binary_tree_signs(space)?;
    if level > space.depth() {
        return Err(Error::LevelOutOfRange { level, min: 0, max: space.depth() });
    }
    let schedule = reveal_schedule(space.depth(), signs);
    let stride = 1u64 << (space.depth() - level);
    let grid = DyadicGrid::new(level);
    let values = (0..grid.len() as u64)
        .map(|j| {
            let revealed = schedule.iter().filter(|&&r| r <= j * stride).count() as u32;
            let v = (0..space.num_atoms())
                .map(|a| {
                    let m: i64 = (1..=revealed).map(|k| sign_of(a, k, signs)).sum();
                    (m * m) as f64 / signs as f64
                })
                .collect();
            RandomVariable::from_vec_unchecked(v)
        })
        .collect();
    AdaptedProcess::new(space, level, values)
}

/// The master-depth compensator of the squared walk: `(#reveals ≤ t) / L`.
pub fn squared_walk_compensator(space: &FiniteFilteredSpace) -> Result<AdaptedProcess> {
    let signs = binary_tree_signs(space)?;
    let schedule = reveal_schedule(space.depth(), signs);
    let grid = space.master_grid();
    let values = (0..grid.len() as u64)
        .map(|j| {
            let revealed = schedule.iter().filter(|&&r| r <= j).count();
            RandomVariable::constant(space.num_atoms(), revealed as f64 / signs as f64)
        })
        .collect();
    AdaptedProcess::new(space, space.depth(), values)
}

/// Random refining filtration on `atoms` atoms with random positive masses.
/// At every master step each block splits in two with probability 1/2.
pub fn random_tree(seed: u64, depth: u32, atoms: usize) -> Result<FiniteFilteredSpace> {
    if atoms == 0 {
        return Err(Error::InvalidSpace("no atoms".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..atoms).map(|_| 0.1 + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let grid = DyadicGrid::new(depth);
    let mut current = vec![0usize; atoms];
    let mut next_label = 1usize;
    let mut labels = Vec::with_capacity(grid.len());
    labels.push(current.clone());
    for _ in 1..grid.len() {
        let blocks = next_label;
        for b in 0..blocks {
            let members: Vec<usize> = (0..atoms).filter(|&a| current[a] == b).collect();
            if members.len() < 2 || !rng.gen_bool(0.5) {
                continue;
            }
            let cut = rng.gen_range(1..members.len());
            for &a in &members[cut..] {
                current[a] = next_label;
            }
            next_label += 1;
        }
        labels.push(current.clone());
    }
    let names = (0..atoms).map(|a| format!("w{a}")).collect();
    FiniteFilteredSpace::from_labels(names, probs, depth, labels)
}

/// A submartingale with a known decomposition `S = M + A`.
#[derive(Debug, Clone)]
pub struct GroundTruthPair {
    pub martingale: AdaptedProcess,
    pub compensator: AdaptedProcess,
    pub process: AdaptedProcess,
}

/// Residuals of the ground-truth invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruthCheck {
    pub martingale_residual: f64,
    /// Most negative compensator increment (0 if none).
    pub min_increment: f64,
    pub predictable: bool,
    pub starts_at_zero: bool,
}

impl GroundTruthCheck {
    pub fn holds(&self) -> bool {
        self.martingale_residual < IDENTITY_TOL && self.min_increment >= 0.0 && self.predictable && self.starts_at_zero
    }
}

impl GroundTruthPair {
    pub fn level(&self) -> u32 {
        self.process.level()
    }

    /// The same pair on the finer level-`target` grid: for `s ∈ (t − h, t]` with `t` on
    /// the original grid, `M_s = E[M_t | F_s]` and `A_s = A_t`. `A` stays predictable
    /// and `M` a martingale, so `S = M + A` is a submartingale on the finer grid.
    pub fn refine(&self, space: &FiniteFilteredSpace, target: u32) -> Result<GroundTruthPair> {
        let level = self.level();
        if target < level || target > space.depth() {
            return Err(Error::LevelOutOfRange { level: target, min: level, max: space.depth() });
        }
        let stride = 1usize << (target - level);
        let grid = DyadicGrid::new(target);
        let mut m = Vec::with_capacity(grid.len());
        let mut a = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let coarse = k.div_ceil(stride);
            let mc = self.martingale.at_index(coarse);
            m.push(if k % stride == 0 {
                mc.clone()
            } else {
                RandomVariable::from_vec_unchecked(space.cond_exp_slice(mc.values(), grid.time(k)))
            });
            a.push(self.compensator.at_index(coarse).clone());
        }
        let martingale = AdaptedProcess::new(space, target, m)?;
        let compensator = AdaptedProcess::new(space, target, a)?;
        let process = martingale.add(&compensator)?;
        Ok(GroundTruthPair { martingale, compensator, process })
    }

    pub fn check(&self, space: &FiniteFilteredSpace) -> GroundTruthCheck {
        let a = &self.compensator;
        let grid = a.grid();
        let mut min_increment: f64 = 0.0;
        let mut predictable = true;
        for j in 1..grid.len() {
            let (prev, cur) = (a.at_index(j - 1), a.at_index(j));
            for atom in 0..space.num_atoms() {
                min_increment = min_increment.min(cur[atom] - prev[atom]);
            }
            let part = space.partition_at(grid.time(j - 1)).expect("grid within depth");
            predictable &= part.constant_on_blocks(cur.values()).is_ok();
        }
        GroundTruthCheck {
            martingale_residual: martingale_residual(space, &self.martingale),
            min_increment,
            predictable,
            starts_at_zero: a.initial().values().iter().all(|&v| v == 0.0),
        }
    }
}

/// Draws `M_1` uniformly in `[-1, 1]` per block of the terminal partition and
/// back-propagates `M_t = E[M_{t+h} | F_t]`; draws `A` with nonnegative increments
/// `jump_scale · U[0,1)` that are constant on the blocks at `t − h`.
pub fn gen_ground_truth(
    seed: u64,
    space: &FiniteFilteredSpace,
    level: u32,
    jump_scale: f64,
) -> Result<GroundTruthPair> {
    if level > space.depth() {
        return Err(Error::LevelOutOfRange { level, min: 0, max: space.depth() });
    }
    if !(jump_scale.is_finite() && jump_scale >= 0.0) {
        return Err(Error::InvalidProcess(format!("jump scale must be finite and >= 0, got {jump_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = DyadicGrid::new(level);
    let n = space.num_atoms();

    let terminal = space.partition_at(DyadicTime::ONE)?;
    let draws: Vec<f64> = (0..terminal.num_blocks()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mut m = vec![RandomVariable::zeros(n); grid.len()];
    m[grid.len() - 1] = RandomVariable::from_vec_unchecked(terminal.spread(&draws));
    for j in (0..grid.len() - 1).rev() {
        m[j] = RandomVariable::from_vec_unchecked(space.cond_exp_slice(m[j + 1].values(), grid.time(j)));
    }

    let mut a = vec![RandomVariable::zeros(n); grid.len()];
    for j in 1..grid.len() {
        let part = space.partition_at(grid.time(j - 1))?;
        let inc: Vec<f64> = (0..part.num_blocks()).map(|_| jump_scale * rng.gen::<f64>()).collect();
        let inc = part.spread(&inc);
        a[j] = RandomVariable::from_vec_unchecked(a[j - 1].values().iter().zip(inc).map(|(x, d)| x + d).collect());
    }

    let martingale = AdaptedProcess::new(space, level, m)?;
    let compensator = AdaptedProcess::new(space, level, a)?;
    let process = martingale.add(&compensator)?;
    Ok(GroundTruthPair { martingale, compensator, process })
}

/// Adds a jump of `size` to the compensator at the grid time `t0 > 0`, on an event
/// that is a random union of blocks of the partition at `t0 − h` (never empty).
pub fn add_predictable_jump(
    space: &FiniteFilteredSpace,
    pair: &GroundTruthPair,
    t0: DyadicTime,
    size: f64,
    seed: u64,
) -> Result<GroundTruthPair> {
    let level = pair.level();
    let grid = DyadicGrid::new(level);
    let j0 =
        t0.index_at(level).filter(|&j| j > 0).ok_or_else(|| {
            Error::InvalidProcess(format!("jump time {t0} must be a positive level-{level} grid time"))
        })? as usize;
    if !(size.is_finite() && size >= 0.0) {
        return Err(Error::InvalidProcess(format!("jump size must be finite and >= 0, got {size}")));
    }
    let part = space.partition_at(grid.time(j0 - 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hit: Vec<f64> = (0..part.num_blocks()).map(|_| if rng.gen_bool(0.5) { size } else { 0.0 }).collect();
    if hit.iter().all(|&h| h == 0.0) {
        hit[0] = size;
    }
    let bump = part.spread(&hit);
    let values = pair
        .compensator
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| {
            if j >= j0 {
                RandomVariable::from_vec_unchecked(v.values().iter().zip(&bump).map(|(x, b)| x + b).collect())
            } else {
                v.clone()
            }
        })
        .collect();
    let compensator = AdaptedProcess::new(space, level, values)?;
    let process = pair.martingale.add(&compensator)?;
    debug_assert!(is_submartingale(space, &process).map(|c| c.holds).unwrap_or(false));
    Ok(GroundTruthPair { martingale: pair.martingale.clone(), compensator, process })
}
