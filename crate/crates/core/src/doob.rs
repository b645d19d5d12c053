//! Discrete Doob decomposition on dyadic grids, extension of both parts to a
//! finer grid, threshold stopping times and the uniform-integrability diagnostics
//! for the compensators `A^n_1`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dyadic::{DyadicGrid, DyadicTime};
use crate::error::{Error, Result};
use crate::filtered_space::{FiniteFilteredSpace, RandomVariable, StoppingTime};
use crate::processes::{evaluate_at_stopping_time, is_submartingale, martingale_residual, AdaptedProcess};
use crate::report::fmt_f64;

/// Slack allowed in the tail-inequality and Markov-bound checks.
pub const UI_SLACK: f64 = 1e-10;

/// `S = M + A` on the level-`n` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DoobPair {
    pub level: u32,
    pub martingale: AdaptedProcess,
    pub compensator: AdaptedProcess,
}

impl DoobPair {
    /// First time `t > 0` at which `A_t` is not constant on the blocks at `t − h`.
    pub fn predictability_violation(&self, space: &FiniteFilteredSpace) -> Option<DyadicTime> {
        let grid = DyadicGrid::new(self.level);
        (1..grid.len()).map(|j| (j, grid.time(j))).find_map(|(j, t)| {
            let part = space.partition_at(grid.time(j - 1)).expect("grid within depth");
            part.constant_on_blocks(self.compensator.at_index(j).values()).is_err().then_some(t)
        })
    }

    pub fn martingale_residual(&self, space: &FiniteFilteredSpace) -> f64 {
        martingale_residual(space, &self.martingale)
    }

    /// Most negative per-atom increment of `A` (0 when `A` is nondecreasing).
    pub fn min_increment(&self) -> f64 {
        let v = self.compensator.values();
        v.windows(2).flat_map(|w| w[1].values().iter().zip(w[0].values()).map(|(b, a)| b - a)).fold(0.0, f64::min)
    }
}

/// `A_0 = 0`, `A_t − A_{t−h} = E[S_t − S_{t−h} | F_{t−h}]`, `M = S − A` on the level-`n` grid.
/// `s` may live on a finer grid; it is sampled at the shared times.
pub fn doob_decompose_discrete(space: &FiniteFilteredSpace, s: &AdaptedProcess, level: u32) -> Result<DoobPair> {
    s.check_adapted(space)?;
    let sampled = s.sample(level)?;
    let grid = sampled.grid();
    let n = space.num_atoms();
    let mut a = Vec::with_capacity(grid.len());
    a.push(RandomVariable::zeros(n));
    for j in 1..grid.len() {
        let diff: Vec<f64> =
            sampled.at_index(j).values().iter().zip(sampled.at_index(j - 1).values()).map(|(x, y)| x - y).collect();
        let inc = space.cond_exp_slice(&diff, grid.time(j - 1));
        let next = a[j - 1].values().iter().zip(inc).map(|(x, d)| x + d).collect();
        a.push(RandomVariable::from_vec_unchecked(next));
    }
    let compensator = AdaptedProcess::new_unchecked(level, a);
    let martingale = sampled.sub(&compensator)?;
    Ok(DoobPair { level, martingale, compensator })
}

fn check_target(space: &FiniteFilteredSpace, pair: &DoobPair, target: u32) -> Result<()> {
    if target < pair.level || target > space.depth() {
        return Err(Error::LevelOutOfRange { level: target, min: pair.level, max: space.depth() });
    }
    Ok(())
}

/// Extends the martingale part to the level-`target` grid by `M_s := E[M^n_t | F_s]`
/// for `s ∈ (t − 2^-n, t]`; equal to `E[M^n_1 | F_s]` by the tower property and
/// identical to `M^n` on the level-`n` grid.
pub fn extend_martingale(space: &FiniteFilteredSpace, pair: &DoobPair, target: u32) -> Result<AdaptedProcess> {
    check_target(space, pair, target)?;
    let stride = 1usize << (target - pair.level);
    let grid = DyadicGrid::new(target);
    let values = (0..grid.len())
        .map(|k| {
            let coarse = k.div_ceil(stride);
            let m = pair.martingale.at_index(coarse);
            if k % stride == 0 {
                m.clone()
            } else {
                RandomVariable::from_vec_unchecked(space.cond_exp_slice(m.values(), grid.time(k)))
            }
        })
        .collect();
    Ok(AdaptedProcess::new_unchecked(target, values))
}

/// Left-continuous step extension `Σ_t A^n_t 1_{(t − 2^-n, t]}` sampled on the
/// level-`target` grid, with value `A^n_0 = 0` at time 0.
pub fn extend_compensator_step(space: &FiniteFilteredSpace, pair: &DoobPair, target: u32) -> Result<AdaptedProcess> {
    check_target(space, pair, target)?;
    let stride = 1usize << (target - pair.level);
    let grid = DyadicGrid::new(target);
    let values = (0..grid.len()).map(|k| pair.compensator.at_index(k.div_ceil(stride)).clone()).collect();
    Ok(AdaptedProcess::new_unchecked(target, values))
}

/// `τ_n(c) = inf{ (j−1)/2^n : A_{j/2^n} > c } ∧ 1`, with a strict inequality.
///
/// The result is checked to be a stopping time; that holds exactly when `A` is predictable.
pub fn tau_threshold(space: &FiniteFilteredSpace, a: &AdaptedProcess, c: f64) -> Result<StoppingTime> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::NonPositiveThreshold(c));
    }
    let grid = a.grid();
    let times = (0..space.num_atoms())
        .map(|atom| (1..grid.len()).find(|&j| a.at_index(j)[atom] > c).map_or(DyadicTime::ONE, |j| grid.time(j - 1)))
        .collect();
    StoppingTime::new(space, a.level(), times)
}

/// One `(n, c)` row of the uniform-integrability report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UiRow {
    pub level: u32,
    pub c: f64,
    /// `E[A^n_1 1{A^n_1 > c}]`.
    pub tail_mass: f64,
    pub prob_tau_lt_1: f64,
    pub prob_a1_gt_c: f64,
    /// Left side of the tail inequality; equals the tail mass.
    pub lhs_eq1: f64,
    /// `−2 ∫_{τ(c/2)<1} S̃_{τ(c/2)} − ∫_{τ(c)<1} S̃_{τ(c)}` on the normalized process.
    pub rhs_eq1: f64,
    /// `E[A^n_1] / c`.
    pub markov_bound: f64,
    /// `−E[S̃_0] / c` on the normalized process.
    pub normalized_markov_bound: f64,
    /// `max_ω A^n_{τ_n(c)}(ω) − c`; never positive.
    pub stopped_excess: f64,
}

impl UiRow {
    pub fn tail_slack(&self) -> f64 {
        self.rhs_eq1 - self.lhs_eq1
    }

    pub fn markov_slack(&self) -> f64 {
        (self.markov_bound - self.prob_tau_lt_1).min(self.normalized_markov_bound - self.prob_tau_lt_1)
    }

    pub fn passes(&self) -> bool {
        self.tail_slack() >= -UI_SLACK && self.markov_slack() >= -UI_SLACK && self.stopped_excess <= 0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UiDiagnostics {
    pub thresholds: Vec<f64>,
    pub rows: Vec<UiRow>,
    /// `(c, sup_n tail mass)`.
    pub envelope: Vec<(f64, f64)>,
    pub expected_s0_raw: f64,
    pub expected_s0_normalized: f64,
    /// Largest per-atom gap between the compensators of `S` and of the normalized process.
    pub normalization_compensator_gap: f64,
}

impl UiDiagnostics {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(UiRow::passes)
    }

    pub fn first_failure(&self) -> Option<&UiRow> {
        self.rows.iter().find(|r| !r.passes())
    }

    /// `level,c,tail_mass,prob_tau_lt_1,lhs_eq1,rhs_eq1,markov_bound`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,c,tail_mass,prob_tau_lt_1,lhs_eq1,rhs_eq1,markov_bound\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.level,
                fmt_f64(r.c),
                fmt_f64(r.tail_mass),
                fmt_f64(r.prob_tau_lt_1),
                fmt_f64(r.lhs_eq1),
                fmt_f64(r.rhs_eq1),
                fmt_f64(r.markov_bound)
            );
        }
        out
    }
}

/// `S̃_t = S_t − E[S_1 | F_t]`: same compensator, terminal value 0, nonpositive for a submartingale.
pub fn normalize_terminal(space: &FiniteFilteredSpace, s: &AdaptedProcess) -> AdaptedProcess {
    let grid = s.grid();
    let values = grid
        .times()
        .zip(s.values())
        .map(|(t, v)| {
            let ce = space.cond_exp_slice(s.terminal().values(), t);
            RandomVariable::from_vec_unchecked(v.values().iter().zip(ce).map(|(x, e)| x - e).collect())
        })
        .collect();
    AdaptedProcess::new_unchecked(s.level(), values)
}

/// Tail masses, `P[τ_n(c) < 1]`, both sides of the tail inequality and the Markov bounds for every
/// level in `levels` and threshold in `thresholds` (sorted ascending, deduplicated).
pub fn ui_diagnostics(
    space: &FiniteFilteredSpace,
    s: &AdaptedProcess,
    levels: &[u32],
    thresholds: &[f64],
) -> Result<UiDiagnostics> {
    let check = is_submartingale(space, s)?;
    if !check.holds {
        return Err(Error::NotSubmartingale {
            time: check.worst_time.unwrap_or(DyadicTime::ZERO),
            violation: check.max_violation,
        });
    }
    let mut cs: Vec<f64> = thresholds.to_vec();
    if let Some(&c) = cs.iter().find(|&&c| c.is_nan() || c <= 0.0) {
        return Err(Error::NonPositiveThreshold(c));
    }
    cs.sort_by(f64::total_cmp);
    cs.dedup();

    let normalized = normalize_terminal(space, s);
    let mut rows = Vec::new();
    let mut normalization_gap: f64 = 0.0;
    for &level in levels {
        let pair = doob_decompose_discrete(space, &normalized, level)?;
        let raw = doob_decompose_discrete(space, s, level)?;
        normalization_gap = normalization_gap.max(pair.compensator.max_abs_diff(&raw.compensator));
        let a1 = pair.compensator.terminal();
        let expected_a1 = space.expectation(a1);
        let expected_s0 = space.expectation(normalized.initial());
        for &c in &cs {
            let tau = tau_threshold(space, &pair.compensator, c)?;
            let tau_half = tau_threshold(space, &pair.compensator, c / 2.0)?;
            let s_tau = evaluate_at_stopping_time(space, &normalized, &tau)?;
            let s_tau_half = evaluate_at_stopping_time(space, &normalized, &tau_half)?;
            let a_tau = evaluate_at_stopping_time(space, &pair.compensator, &tau)?;
            let probs = space.probs();
            let mut row = UiRow {
                level,
                c,
                tail_mass: 0.0,
                prob_tau_lt_1: 0.0,
                prob_a1_gt_c: 0.0,
                lhs_eq1: 0.0,
                rhs_eq1: 0.0,
                markov_bound: expected_a1 / c,
                normalized_markov_bound: -expected_s0 / c,
                stopped_excess: f64::NEG_INFINITY,
            };
            let (mut int_half, mut int_full) = (0.0, 0.0);
            for atom in 0..space.num_atoms() {
                let p = probs[atom];
                if a1[atom] > c {
                    row.tail_mass += p * a1[atom];
                    row.prob_a1_gt_c += p;
                }
                if tau.at(atom) < DyadicTime::ONE {
                    row.prob_tau_lt_1 += p;
                    int_full += p * s_tau[atom];
                }
                if tau_half.at(atom) < DyadicTime::ONE {
                    int_half += p * s_tau_half[atom];
                }
                row.stopped_excess = row.stopped_excess.max(a_tau[atom] - c);
            }
            row.lhs_eq1 = row.tail_mass;
            row.rhs_eq1 = -2.0 * int_half - int_full;
            rows.push(row);
        }
    }
    let envelope = cs
        .iter()
        .map(|&c| {
            let sup = rows.iter().filter(|r| r.c == c).map(|r| r.tail_mass).fold(0.0, f64::max);
            (c, sup)
        })
        .collect();
    Ok(UiDiagnostics {
        thresholds: cs,
        rows,
        envelope,
        expected_s0_raw: space.expectation(s.initial()),
        expected_s0_normalized: space.expectation(normalized.initial()),
        normalization_compensator_gap: normalization_gap,
    })
}
