//! Finite filtered probability spaces.
//!
//! A space is a finite set of atoms with strictly positive masses and, for
//! every time of the master dyadic grid, a partition of the atoms into
//! blocks. The sigma-algebra at time `t` is the one generated by the
//! partition at `t`, so conditional expectations are exact block averages.
//! Coarser grids index into the same partitions.

use std::ops::Index;

use crate::dyadic::{DyadicGrid, DyadicTime, MAX_LEVEL};
use crate::error::{Error, Result};

/// Tolerance for construction-time identities.
pub const IDENTITY_TOL: f64 = 1e-12;

/// A real function of the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomVariable(Vec<f64>);

impl RandomVariable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(atom) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { atom });
        }
        Ok(RandomVariable(values))
    }

    pub fn zeros(len: usize) -> Self {
        RandomVariable(vec![0.0; len])
    }

    pub fn constant(len: usize, c: f64) -> Self {
        assert!(c.is_finite());
        RandomVariable(vec![c; len])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        RandomVariable(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        RandomVariable::from_vec_unchecked(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len(), "random variables on different spaces");
        RandomVariable::from_vec_unchecked(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest per-atom absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Index<usize> for RandomVariable {
    type Output = f64;

    fn index(&self, atom: usize) -> &f64 {
        &self.0[atom]
    }
}

/// A partition of the atoms, stored as a block label per atom.
///
/// Labels are canonical: blocks are numbered in order of their first atom,
/// so two partitions are equal iff their label vectors are equal.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    block_of: Vec<u32>,
    block_prob: Vec<f64>,
}

impl Partition {
    fn from_labels(labels: &[usize], probs: &[f64]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut block_of = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = remap.len() as u32;
            block_of.push(*remap.entry(l).or_insert(next));
        }
        let mut block_prob = vec![0.0; remap.len()];
        for (atom, &b) in block_of.iter().enumerate() {
            block_prob[b as usize] += probs[atom];
        }
        Partition { block_of, block_prob }
    }

    fn from_blocks(blocks: &[Vec<usize>], probs: &[f64]) -> Result<Self, String> {
        let n = probs.len();
        let mut labels = vec![usize::MAX; n];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(format!("block {b} is empty"));
            }
            for &atom in block {
                if atom >= n {
                    return Err(format!("block {b} names atom {atom}, but there are only {n} atoms"));
                }
                if labels[atom] != usize::MAX {
                    return Err(format!("atom {atom} appears in more than one block"));
                }
                labels[atom] = b;
            }
        }
        if let Some(atom) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(format!("atom {atom} is not covered by any block"));
        }
        Ok(Partition::from_labels(&labels, probs))
    }

    pub fn num_blocks(&self) -> usize {
        self.block_prob.len()
    }

    pub fn block_of(&self, atom: usize) -> usize {
        self.block_of[atom] as usize
    }

    pub fn block_prob(&self, block: usize) -> f64 {
        self.block_prob[block]
    }

    /// Atom lists of all blocks, in label order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.num_blocks()];
        for (atom, &b) in self.block_of.iter().enumerate() {
            blocks[b as usize].push(atom);
        }
        blocks
    }

    /// True when every block of `self` lies inside a block of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        let mut parent = vec![u32::MAX; self.num_blocks()];
        for (atom, &b) in self.block_of.iter().enumerate() {
            let p = coarser.block_of[atom];
            match parent[b as usize] {
                u32::MAX => parent[b as usize] = p,
                q if q != p => return false,
                _ => {}
            }
        }
        true
    }

    /// True when `values` is constant on every block. Returns the first offending atom pair otherwise.
    pub fn constant_on_blocks(&self, values: &[f64]) -> Result<(), (usize, usize)> {
        let mut first = vec![usize::MAX; self.num_blocks()];
        for (atom, &b) in self.block_of.iter().enumerate() {
            let b = b as usize;
            if first[b] == usize::MAX {
                first[b] = atom;
            } else if values[first[b]] != values[atom] {
                return Err((first[b], atom));
            }
        }
        Ok(())
    }

    /// Block averages of `values` under `probs`, one entry per block.
    pub(crate) fn block_means(&self, values: &[f64], probs: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_blocks()];
        for (atom, &b) in self.block_of.iter().enumerate() {
            sums[b as usize] += probs[atom] * values[atom];
        }
        for (s, p) in sums.iter_mut().zip(&self.block_prob) {
            *s /= p;
        }
        sums
    }

    /// Spreads one value per block back onto the atoms.
    pub(crate) fn spread(&self, per_block: &[f64]) -> Vec<f64> {
        self.block_of.iter().map(|&b| per_block[b as usize]).collect()
    }
}

/// A finite probability space with a filtration indexed by the master dyadic grid.
#[derive(Debug, Clone)]
pub struct FiniteFilteredSpace {
    atoms: Vec<String>,
    probs: Vec<f64>,
    depth: u32,
    partitions: Vec<Partition>,
    /// For every master grid index, the position of its partition in `partitions`.
    time_partition: Vec<usize>,
}

impl FiniteFilteredSpace {
    /// Builds a space from explicit blocks, one partition per master grid time
    /// (`partitions[j]` belongs to `j / 2^depth`).
    pub fn new(atoms: Vec<String>, probs: Vec<f64>, depth: u32, partitions: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        Self::check_masses(&atoms, &probs, depth)?;
        let grid = DyadicGrid::new(depth);
        if partitions.len() != grid.len() {
            return Err(Error::InvalidSpace(format!(
                "expected {} partitions for depth {depth}, got {}",
                grid.len(),
                partitions.len()
            )));
        }
        let parts = partitions
            .iter()
            .enumerate()
            .map(|(j, blocks)| {
                Partition::from_blocks(blocks, &probs)
                    .map_err(|m| Error::InvalidSpace(format!("partition at {}: {m}", grid.time(j))))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(atoms, probs, depth, parts)
    }

    /// Builds a space from per-atom block labels, one label vector per master grid time.
    pub fn from_labels(atoms: Vec<String>, probs: Vec<f64>, depth: u32, labels: Vec<Vec<usize>>) -> Result<Self> {
        Self::check_masses(&atoms, &probs, depth)?;
        let grid = DyadicGrid::new(depth);
        if labels.len() != grid.len() {
            return Err(Error::InvalidSpace(format!(
                "expected {} partitions for depth {depth}, got {}",
                grid.len(),
                labels.len()
            )));
        }
        let mut parts = Vec::with_capacity(labels.len());
        for (j, l) in labels.iter().enumerate() {
            if l.len() != atoms.len() {
                return Err(Error::InvalidSpace(format!(
                    "partition at {} labels {} atoms, expected {}",
                    grid.time(j),
                    l.len(),
                    atoms.len()
                )));
            }
            parts.push(Partition::from_labels(l, &probs));
        }
        Self::assemble(atoms, probs, depth, parts)
    }

    fn check_masses(atoms: &[String], probs: &[f64], depth: u32) -> Result<()> {
        if atoms.is_empty() {
            return Err(Error::InvalidSpace("no atoms".into()));
        }
        if atoms.len() != probs.len() {
            return Err(Error::InvalidSpace(format!("{} atoms but {} probabilities", atoms.len(), probs.len())));
        }
        if depth == 0 || depth > MAX_LEVEL {
            return Err(Error::InvalidSpace(format!("depth must be in 1..={MAX_LEVEL}, got {depth}")));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidSpace(format!("atom {i} has probability {p}; masses must be positive")));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > IDENTITY_TOL {
            return Err(Error::InvalidSpace(format!("probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    fn assemble(atoms: Vec<String>, probs: Vec<f64>, depth: u32, parts: Vec<Partition>) -> Result<Self> {
        let grid = DyadicGrid::new(depth);
        let mut partitions: Vec<Partition> = Vec::new();
        let mut time_partition = Vec::with_capacity(parts.len());
        for (j, p) in parts.into_iter().enumerate() {
            match partitions.last() {
                Some(prev) if prev.block_of == p.block_of => {}
                Some(prev) => {
                    if !p.refines(prev) {
                        return Err(Error::InvalidSpace(format!(
                            "partition at {} does not refine the one at {}",
                            grid.time(j),
                            grid.time(j - 1)
                        )));
                    }
                    partitions.push(p);
                }
                None => partitions.push(p),
            }
            time_partition.push(partitions.len() - 1);
        }
        Ok(FiniteFilteredSpace { atoms, probs, depth, partitions, time_partition })
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Master grid depth `N_max`.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn master_grid(&self) -> DyadicGrid {
        DyadicGrid::new(self.depth)
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn partition_at(&self, t: DyadicTime) -> Result<&Partition> {
        let j = t.index_at(self.depth).ok_or(Error::NoPartition(t))?;
        Ok(&self.partitions[self.time_partition[j as usize]])
    }

    /// The distinct partitions of the filtration, coarsest first.
    pub fn distinct_partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.num_atoms() {
            return Err(Error::DimensionMismatch { expected: self.num_atoms(), got: len });
        }
        Ok(())
    }

    /// `E[f | F_t]`: on each block of the partition at `t`, the probability-weighted average of `f`.
    pub fn conditional_expectation(&self, f: &RandomVariable, t: DyadicTime) -> Result<RandomVariable> {
        self.check_len(f.len())?;
        let part = self.partition_at(t)?;
        let means = part.block_means(f.values(), &self.probs);
        Ok(RandomVariable::from_vec_unchecked(part.spread(&means)))
    }

    pub(crate) fn cond_exp_slice(&self, f: &[f64], t: DyadicTime) -> Vec<f64> {
        let part = self.partition_at(t).expect("time on master grid");
        part.spread(&part.block_means(f, &self.probs))
    }

    pub fn expectation(&self, f: &RandomVariable) -> f64 {
        assert_eq!(f.len(), self.num_atoms());
        self.expect_slice(f.values())
    }

    pub(crate) fn expect_slice(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.probs).map(|(v, p)| p * v).sum()
    }

    /// Weighted inner product `E[f g]`.
    pub fn inner(&self, f: &RandomVariable, g: &RandomVariable) -> f64 {
        assert_eq!(f.len(), self.num_atoms());
        assert_eq!(g.len(), self.num_atoms());
        f.values().iter().zip(g.values()).zip(&self.probs).map(|((a, b), p)| p * a * b).sum()
    }

    pub fn l1_norm(&self, f: &RandomVariable) -> f64 {
        assert_eq!(f.len(), self.num_atoms());
        f.values().iter().zip(&self.probs).map(|(v, p)| p * v.abs()).sum()
    }

    pub fn l2_norm(&self, f: &RandomVariable) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// `(Σ p(ω) |f(ω)|^p)^(1/p)` for `p ∈ {1, 2}`.
    pub fn lp_norm(&self, f: &RandomVariable, p: u32) -> Result<f64> {
        self.check_len(f.len())?;
        match p {
            1 => Ok(self.l1_norm(f)),
            2 => Ok(self.l2_norm(f)),
            other => Err(Error::UnsupportedNorm(other)),
        }
    }

    pub fn l1_distance(&self, f: &RandomVariable, g: &RandomVariable) -> f64 {
        assert_eq!(f.len(), self.num_atoms());
        assert_eq!(g.len(), self.num_atoms());
        f.values().iter().zip(g.values()).zip(&self.probs).map(|((a, b), p)| p * (a - b).abs()).sum()
    }

    /// True iff every `tau` value lies on the level-`level` grid and `{tau <= t}`
    /// is a union of blocks of the partition at `t` for every grid time `t`.
    pub fn is_stopping_time(&self, tau: &[DyadicTime], level: u32) -> bool {
        self.stopping_time_violation(tau, level).is_none()
    }

    /// First grid time at which `{tau <= t}` splits a block, if any.
    /// Off-grid values and bad shapes report `t = 0`.
    pub(crate) fn stopping_time_violation(&self, tau: &[DyadicTime], level: u32) -> Option<DyadicTime> {
        if level > self.depth || tau.len() != self.num_atoms() || tau.iter().any(|t| !t.is_on(level)) {
            return Some(DyadicTime::ZERO);
        }
        let grid = DyadicGrid::new(level);
        for t in grid.times() {
            let part = self.partition_at(t).expect("grid time within depth");
            let mut seen = vec![0u8; part.num_blocks()];
            for (atom, &s) in tau.iter().enumerate() {
                let flag = if s <= t { 1 } else { 2 };
                let b = part.block_of(atom);
                if seen[b] == 0 {
                    seen[b] = flag;
                } else if seen[b] != flag {
                    return Some(t);
                }
            }
        }
        None
    }
}

/// A validated stopping time with values on the level-`level` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTime {
    level: u32,
    times: Vec<DyadicTime>,
}

impl StoppingTime {
    pub fn new(space: &FiniteFilteredSpace, level: u32, times: Vec<DyadicTime>) -> Result<Self> {
        space.check_len(times.len())?;
        if level > space.depth() {
            return Err(Error::LevelOutOfRange { level, min: 0, max: space.depth() });
        }
        if let Some(time) = space.stopping_time_violation(&times, level) {
            return Err(Error::NotStoppingTime { level, time });
        }
        Ok(StoppingTime { level, times })
    }

    pub fn constant(space: &FiniteFilteredSpace, level: u32, t: DyadicTime) -> Result<Self> {
        Self::new(space, level, vec![t; space.num_atoms()])
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn times(&self) -> &[DyadicTime] {
        &self.times
    }

    pub fn at(&self, atom: usize) -> DyadicTime {
        self.times[atom]
    }

    /// The same random time viewed on a finer grid; still a stopping time there.
    pub fn on_level(&self, level: u32) -> StoppingTime {
        assert!(level >= self.level);
        StoppingTime { level, times: self.times.clone() }
    }
}
