//! Adapted processes on a finite filtered space.

mod generate;

pub use generate::{
    add_predictable_jump, binary_tree, gen_ground_truth, gen_squared_walk, random_tree, reveal_schedule,
    squared_walk_compensator, GroundTruthCheck, GroundTruthPair,
};

use crate::dyadic::{DyadicGrid, DyadicTime};
use crate::error::{Error, Result};
use crate::filtered_space::{FiniteFilteredSpace, RandomVariable, StoppingTime};

/// Per-atom values at every time of the level-`level` dyadic grid.
///
/// The value at `t` is constant on each block of the partition at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    level: u32,
    values: Vec<RandomVariable>,
}

impl AdaptedProcess {
    pub fn new(space: &FiniteFilteredSpace, level: u32, values: Vec<RandomVariable>) -> Result<Self> {
        let process = AdaptedProcess { level, values };
        process.check_shape(space)?;
        process.check_adapted(space)?;
        Ok(process)
    }

    pub(crate) fn new_unchecked(level: u32, values: Vec<RandomVariable>) -> Self {
        debug_assert_eq!(values.len(), DyadicGrid::new(level).len());
        AdaptedProcess { level, values }
    }

    fn check_shape(&self, space: &FiniteFilteredSpace) -> Result<()> {
        if self.level > space.depth() {
            return Err(Error::LevelOutOfRange { level: self.level, min: 0, max: space.depth() });
        }
        let expected = self.grid().len();
        if self.values.len() != expected {
            return Err(Error::InvalidProcess(format!(
                "level {} needs {expected} time slices, got {}",
                self.level,
                self.values.len()
            )));
        }
        for v in &self.values {
            space.check_len(v.len())?;
        }
        Ok(())
    }

    /// Exact check that each slice is constant on the blocks of its time's partition.
    pub fn check_adapted(&self, space: &FiniteFilteredSpace) -> Result<()> {
        self.check_shape(space)?;
        for (t, v) in self.grid().times().zip(&self.values) {
            space.partition_at(t)?.constant_on_blocks(v.values()).map_err(|(a, b)| Error::NotAdapted {
                time: t,
                a,
                b,
            })?;
        }
        Ok(())
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn grid(&self) -> DyadicGrid {
        DyadicGrid::new(self.level)
    }

    pub fn values(&self) -> &[RandomVariable] {
        &self.values
    }

    pub fn at_index(&self, j: usize) -> &RandomVariable {
        &self.values[j]
    }

    pub fn at(&self, t: DyadicTime) -> Result<&RandomVariable> {
        let j = t.index_at(self.level).ok_or(Error::NoPartition(t))?;
        Ok(&self.values[j as usize])
    }

    pub fn initial(&self) -> &RandomVariable {
        &self.values[0]
    }

    pub fn terminal(&self) -> &RandomVariable {
        self.values.last().expect("grid is never empty")
    }

    /// The sampled process `(X_t)_{t ∈ D_n}`: values at the shared grid times, no interpolation.
    pub fn sample(&self, level: u32) -> Result<AdaptedProcess> {
        if level > self.level {
            return Err(Error::LevelOutOfRange { level, min: 0, max: self.level });
        }
        let stride = 1usize << (self.level - level);
        let values = self.values.iter().step_by(stride).cloned().collect();
        Ok(AdaptedProcess::new_unchecked(level, values))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&RandomVariable, &RandomVariable) -> RandomVariable) -> Result<Self> {
        if self.level != other.level {
            return Err(Error::InvalidProcess(format!(
                "cannot combine processes of levels {} and {}",
                self.level, other.level
            )));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect();
        Ok(AdaptedProcess::new_unchecked(self.level, values))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, RandomVariable::add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, RandomVariable::sub)
    }

    pub fn scale(&self, c: f64) -> Self {
        AdaptedProcess::new_unchecked(self.level, self.values.iter().map(|v| v.scale(c)).collect())
    }

    /// Largest per-atom difference over all times.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.level, other.level);
        self.values.iter().zip(&other.values).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }

    /// First grid time at which the process is strictly above `c`, capped at 1.
    pub fn first_exceedance(&self, space: &FiniteFilteredSpace, c: f64) -> Result<StoppingTime> {
        let grid = self.grid();
        let times = (0..space.num_atoms())
            .map(|atom| (0..grid.len()).find(|&j| self.values[j][atom] > c).map_or(DyadicTime::ONE, |j| grid.time(j)))
            .collect();
        StoppingTime::new(space, self.level, times)
    }
}

/// `X_{τ(ω)}(ω)` for every atom.
pub fn evaluate_at_stopping_time(
    space: &FiniteFilteredSpace,
    x: &AdaptedProcess,
    tau: &StoppingTime,
) -> Result<RandomVariable> {
    space.check_len(tau.times().len())?;
    let mut out = Vec::with_capacity(space.num_atoms());
    for (atom, &t) in tau.times().iter().enumerate() {
        let j = t.index_at(x.level()).ok_or(Error::NotStoppingTime { level: x.level(), time: t })?;
        out.push(x.values[j as usize][atom]);
    }
    Ok(RandomVariable::from_vec_unchecked(out))
}

/// Outcome of a submartingale check on consecutive grid pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmartingaleCheck {
    pub holds: bool,
    /// Largest `S_s − E[S_t | F_s]` over atoms and consecutive `s < t` (0 if none is positive).
    pub max_violation: f64,
    pub worst_time: Option<DyadicTime>,
}

/// Relative slack allowed in `E[S_t | F_s] ≥ S_s`.
pub const SUBMARTINGALE_TOL: f64 = 1e-12;

/// Checks `E[S_t | F_s] ≥ S_s − tol` for consecutive grid times; the tower property covers the rest.
/// The tolerance is `1e-12 · max(1, |S_s|)` per atom.
pub fn is_submartingale(space: &FiniteFilteredSpace, s: &AdaptedProcess) -> Result<SubmartingaleCheck> {
    s.check_adapted(space)?;
    let grid = s.grid();
    let mut check = SubmartingaleCheck { holds: true, max_violation: 0.0, worst_time: None };
    for j in 1..grid.len() {
        let prev = grid.time(j - 1);
        let ce = space.cond_exp_slice(s.values[j].values(), prev);
        for (atom, &e) in ce.iter().enumerate() {
            let cur = s.values[j - 1][atom];
            let violation = cur - e;
            if violation > check.max_violation {
                check.max_violation = violation;
                check.worst_time = Some(prev);
            }
            if violation > SUBMARTINGALE_TOL * cur.abs().max(1.0) {
                check.holds = false;
            }
        }
    }
    Ok(check)
}

/// Martingale residual `max |E[X_t | F_s] − X_s|` over consecutive grid pairs.
pub fn martingale_residual(space: &FiniteFilteredSpace, x: &AdaptedProcess) -> f64 {
    let grid = x.grid();
    (1..grid.len())
        .map(|j| {
            let ce = space.cond_exp_slice(x.values[j].values(), grid.time(j - 1));
            ce.iter().zip(x.values[j - 1].values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// `sup_τ E[|S_τ|]` over stopping times on the process grid, via the Snell envelope of `|S|`:
/// `U_1 = |S_1|`, `U_t = max(|S_t|, E[U_{t+h} | F_t])`, value `E[U_0]`.
pub fn class_d_sup(space: &FiniteFilteredSpace, s: &AdaptedProcess) -> Result<f64> {
    s.check_adapted(space)?;
    let grid = s.grid();
    let mut envelope: Vec<f64> = s.terminal().values().iter().map(|v| v.abs()).collect();
    for j in (0..grid.len() - 1).rev() {
        let cont = space.cond_exp_slice(&envelope, grid.time(j));
        envelope = s.values[j].values().iter().zip(cont).map(|(v, c)| v.abs().max(c)).collect();
    }
    Ok(space.expect_slice(&envelope))
}
