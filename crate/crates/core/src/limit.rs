//! Convex combinations of the refining decompositions, their measurement against
//! the master-depth decomposition, round-up stopping times and the
//! predictability surrogate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::doob::{doob_decompose_discrete, extend_martingale, DoobPair};
use crate::dyadic::{DyadicGrid, DyadicTime};
use crate::error::{Error, Result};
use crate::filtered_space::{FiniteFilteredSpace, RandomVariable, StoppingTime};
use crate::komlos::{komlos_extract, ConvexWeights, KomlosReport};
use crate::processes::{evaluate_at_stopping_time, AdaptedProcess};
use crate::report::fmt_f64;

/// Reference jumps below this count as continuity points.
pub const JUMP_THRESHOLD: f64 = 1e-9;

/// Combined processes `𝓜^k = Σ_j λ^k_j M^{n_j}` and `𝓐^k = Σ_j λ^k_j A^{n_j}`
/// (extensions to the master grid), one per level index `k`, with the master
/// decomposition as reference.
#[derive(Debug, Clone)]
pub struct CombinedProcesses {
    levels: Vec<u32>,
    weights: Vec<ConvexWeights>,
    pairs: Vec<DoobPair>,
    reference: DoobPair,
    process: AdaptedProcess,
    compensators: Vec<AdaptedProcess>,
    identity_residual: f64,
}

impl CombinedProcesses {
    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn weights(&self) -> &[ConvexWeights] {
        &self.weights
    }

    /// Per-level decompositions on their own grids.
    pub fn pairs(&self) -> &[DoobPair] {
        &self.pairs
    }

    /// The master-depth decomposition `(M, A)`.
    pub fn reference(&self) -> &DoobPair {
        &self.reference
    }

    /// `S` on the master grid.
    pub fn process(&self) -> &AdaptedProcess {
        &self.process
    }

    /// `𝓐^k` on the master grid.
    pub fn compensator(&self, k: usize) -> &AdaptedProcess {
        &self.compensators[k]
    }

    /// `max_k max_{t ∈ D_{n_k}} |𝓐^k_t + 𝓜^k_t − S_t|`.
    pub fn identity_residual(&self) -> f64 {
        self.identity_residual
    }

    /// `𝓜^k` on the master grid.
    pub fn martingale(&self, space: &FiniteFilteredSpace, k: usize) -> Result<AdaptedProcess> {
        let depth = self.process.level();
        let extended: Vec<(usize, f64, AdaptedProcess)> = self.weights[k]
            .support()
            .map(|(j, w)| extend_martingale(space, &self.pairs[j], depth).map(|m| (j, w, m)))
            .collect::<Result<_>>()?;
        let grid = DyadicGrid::new(depth);
        let values = (0..grid.len())
            .map(|i| {
                let mut acc = vec![0.0; space.num_atoms()];
                for (_, w, m) in &extended {
                    for (a, v) in acc.iter_mut().zip(m.at_index(i).values()) {
                        *a += w * v;
                    }
                }
                RandomVariable::from_vec_unchecked(acc)
            })
            .collect();
        Ok(AdaptedProcess::new_unchecked(depth, values))
    }

    /// Terminal value `𝓜^k_1 = Σ_j λ^k_j M^{n_j}_1`.
    pub fn terminal_martingale(&self, k: usize) -> RandomVariable {
        let terminals: Vec<RandomVariable> = self.pairs.iter().map(|p| p.martingale.terminal().clone()).collect();
        self.weights[k].combine(&terminals).expect("weights validated at construction")
    }

    /// The limit candidate `M_t := E[𝓜^{last}_1 | F_t]` on the master grid.
    pub fn limit_candidate(&self, space: &FiniteFilteredSpace) -> AdaptedProcess {
        let last = self.terminal_martingale(self.levels.len() - 1);
        let grid = DyadicGrid::new(self.process.level());
        let values =
            grid.times().map(|t| RandomVariable::from_vec_unchecked(space.cond_exp_slice(last.values(), t))).collect();
        AdaptedProcess::new_unchecked(grid.level(), values)
    }
}

fn check_levels(space: &FiniteFilteredSpace, s: &AdaptedProcess, levels: &[u32]) -> Result<()> {
    if s.level() != space.depth() {
        return Err(Error::InvalidProcess(format!(
            "process must live on the master grid (level {}), got level {}",
            space.depth(),
            s.level()
        )));
    }
    if levels.is_empty() {
        return Err(Error::InvalidProcess("no levels given".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidProcess(format!("levels must be strictly increasing, got {levels:?}")));
    }
    if let Some(&bad) = levels.iter().find(|&&n| n > space.depth()) {
        return Err(Error::LevelOutOfRange { level: bad, min: 0, max: space.depth() });
    }
    Ok(())
}

/// Decomposes `s` at every level in parallel.
pub fn decompose_levels(space: &FiniteFilteredSpace, s: &AdaptedProcess, levels: &[u32]) -> Result<Vec<DoobPair>> {
    levels.par_iter().map(|&n| doob_decompose_discrete(space, s, n)).collect()
}

/// Builds `𝓜^k`, `𝓐^k` for every level index from weights over the level indices.
///
/// `weights[k]` must have support in `k..levels.len()`.
pub fn build_combined(
    space: &FiniteFilteredSpace,
    s: &AdaptedProcess,
    levels: &[u32],
    weights: Vec<ConvexWeights>,
) -> Result<CombinedProcesses> {
    check_levels(space, s, levels)?;
    let pairs = decompose_levels(space, s, levels)?;
    from_pairs(space, s, levels, pairs, weights)
}

fn from_pairs(
    space: &FiniteFilteredSpace,
    s: &AdaptedProcess,
    levels: &[u32],
    pairs: Vec<DoobPair>,
    weights: Vec<ConvexWeights>,
) -> Result<CombinedProcesses> {
    if weights.len() != levels.len() {
        return Err(Error::WeightMismatch(format!("{} weight vectors for {} levels", weights.len(), levels.len())));
    }
    for (k, w) in weights.iter().enumerate() {
        if w.start() < k || w.end() > levels.len() {
            return Err(Error::WeightMismatch(format!(
                "weights for level index {k} cover indices {}..{}, allowed {k}..{}",
                w.start(),
                w.end(),
                levels.len()
            )));
        }
        ConvexWeights::new(w.start(), w.weights().to_vec())?;
    }
    let depth = space.depth();
    let reference = doob_decompose_discrete(space, s, depth)?;
    let grid = space.master_grid();
    let n = space.num_atoms();

    let compensators: Vec<AdaptedProcess> = weights
        .par_iter()
        .map(|w| {
            let values = grid
                .times()
                .map(|t| {
                    let mut acc = vec![0.0; n];
                    for (j, lambda) in w.support() {
                        let idx = step_index(t, levels[j]);
                        for (a, v) in acc.iter_mut().zip(pairs[j].compensator.at_index(idx).values()) {
                            *a += lambda * v;
                        }
                    }
                    RandomVariable::from_vec_unchecked(acc)
                })
                .collect();
            AdaptedProcess::new_unchecked(depth, values)
        })
        .collect();

    // on the coarsest grid of each support every extension is the level's own value
    let mut identity_residual: f64 = 0.0;
    for (k, w) in weights.iter().enumerate() {
        for t in DyadicGrid::new(levels[k]).times() {
            let mut m = vec![0.0; n];
            for (j, lambda) in w.support() {
                let idx = t.index_at(levels[j]).expect("coarser grid") as usize;
                for (a, v) in m.iter_mut().zip(pairs[j].martingale.at_index(idx).values()) {
                    *a += lambda * v;
                }
            }
            let a = compensators[k].at(t)?;
            let st = s.at(t)?;
            for atom in 0..n {
                identity_residual = identity_residual.max((a[atom] + m[atom] - st[atom]).abs());
            }
        }
    }

    Ok(CombinedProcesses {
        levels: levels.to_vec(),
        weights,
        pairs,
        reference,
        process: s.clone(),
        compensators,
        identity_residual,
    })
}

/// Index on the level-`n` grid of the right endpoint of the interval `(t − 2^-n, t]` containing `t`.
fn step_index(t: DyadicTime, n: u32) -> usize {
    t.ceil_to_level(n).index_at(n).expect("rounded onto the grid") as usize
}

/// Decomposes at every level, extracts Komlos weights from `(M^n_1)` and combines.
pub fn run_pipeline(
    space: &FiniteFilteredSpace,
    s: &AdaptedProcess,
    levels: &[u32],
    tol: f64,
) -> Result<(CombinedProcesses, KomlosReport)> {
    check_levels(space, s, levels)?;
    let pairs = decompose_levels(space, s, levels)?;
    let terminals: Vec<RandomVariable> = pairs.iter().map(|p| p.martingale.terminal().clone()).collect();
    let extraction = komlos_extract(space, &terminals, None, tol)?;
    let combined = from_pairs(space, s, levels, pairs, extraction.weights)?;
    Ok((combined, extraction.report))
}

/// `σ_n = inf{t ∈ D_n : t ≥ τ}` per atom, a level-`n` stopping time.
pub fn sigma_round_up(space: &FiniteFilteredSpace, tau: &StoppingTime, n: u32) -> Result<StoppingTime> {
    let times = tau.times().iter().map(|t| t.ceil_to_level(n)).collect();
    StoppingTime::new(space, n, times)
}

/// One row of the compensator-mean table, for the level index `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauMeanRow {
    pub level: u32,
    /// `E[𝓐^k_τ]`.
    pub combined_mean: f64,
    /// `Σ_j λ^k_j (E[S_{σ_{n_j}}] − E[M^{n_j}_0])`.
    pub mixture_rhs: f64,
    /// `E[A_τ]` for the master compensator.
    pub reference_mean: f64,
    /// `|E[𝓐^k_τ] − E[A_τ]|`.
    pub gap: f64,
    /// `|E[𝓐^k_τ] − mixture_rhs|`.
    pub identity_residual: f64,
    /// `𝓐^k_τ` equals `Σ_j λ^k_j A^{n_j}_{σ_{n_j}}` bit for bit on every atom.
    pub step_identity_exact: bool,
    /// `σ_{n_k} ≥ τ` and `σ_{n_k} − τ < 2^-n_k` on every atom.
    pub sigma_bracket: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauMeanTable {
    pub rows: Vec<TauMeanRow>,
    /// `σ_n` nonincreasing in `n` on every atom.
    pub sigma_monotone: bool,
}

impl TauMeanTable {
    pub fn max_identity_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.identity_residual).fold(0.0, f64::max)
    }

    pub fn gaps_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].gap <= w[0].gap)
    }
}

/// `E[𝓐^k_τ]` against the round-up mixture identity and the reference `E[A_τ]`.
pub fn compensator_mean_at_tau(
    space: &FiniteFilteredSpace,
    combined: &CombinedProcesses,
    tau: &StoppingTime,
) -> Result<TauMeanTable> {
    let depth = combined.process.level();
    if let Some(time) = space.stopping_time_violation(tau.times(), depth) {
        return Err(Error::NotStoppingTime { level: depth, time });
    }
    let tau = tau.on_level(depth.max(tau.level()));
    let n_atoms = space.num_atoms();
    let sigmas: Vec<StoppingTime> =
        combined.levels.iter().map(|&n| sigma_round_up(space, &tau, n)).collect::<Result<_>>()?;
    let at_sigma: Vec<RandomVariable> = combined
        .pairs
        .iter()
        .zip(&sigmas)
        .map(|(p, s)| evaluate_at_stopping_time(space, &p.compensator, s))
        .collect::<Result<_>>()?;
    let rhs_terms: Vec<f64> = combined
        .pairs
        .iter()
        .zip(&sigmas)
        .map(|(p, sigma)| {
            let s_sigma = evaluate_at_stopping_time(space, &combined.process, sigma)?;
            Ok(space.expectation(&s_sigma) - space.expectation(p.martingale.initial()))
        })
        .collect::<Result<_>>()?;
    let reference = space.expectation(&evaluate_at_stopping_time(space, &combined.reference.compensator, &tau)?);

    let mut rows = Vec::with_capacity(combined.levels.len());
    for (k, w) in combined.weights.iter().enumerate() {
        let a_tau = evaluate_at_stopping_time(space, &combined.compensators[k], &tau)?;
        let mixed = w.combine(&at_sigma)?;
        let combined_mean = space.expectation(&a_tau);
        let mixture_rhs: f64 = w.support().map(|(j, l)| l * rhs_terms[j]).sum();
        let n = combined.levels[k];
        let h = DyadicTime::new(1, n).to_f64();
        let sigma_bracket = (0..n_atoms).all(|a| {
            let (s, t) = (sigmas[k].at(a), tau.at(a));
            s >= t && s.to_f64() - t.to_f64() < h
        });
        rows.push(TauMeanRow {
            level: n,
            combined_mean,
            mixture_rhs,
            reference_mean: reference,
            gap: (combined_mean - reference).abs(),
            identity_residual: (combined_mean - mixture_rhs).abs(),
            step_identity_exact: a_tau.values().iter().zip(mixed.values()).all(|(x, y)| x.to_bits() == y.to_bits()),
            sigma_bracket,
        });
    }
    let sigma_monotone = sigmas.windows(2).all(|w| (0..n_atoms).all(|a| w[1].at(a) <= w[0].at(a)));
    Ok(TauMeanTable { rows, sigma_monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingTimeResidual {
    pub label: String,
    /// `max_ω |max_k 𝓐^k_τ(ω) − A_τ(ω)|`.
    pub residual: f64,
}

/// Max-over-levels surrogate for the limsup criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictabilityReport {
    pub levels: Vec<u32>,
    pub jump_threshold: f64,
    pub tol: f64,
    /// `max_{t, ω} (max_k 𝓐^k_t(ω) − A_t(ω))` over the master grid.
    pub upper_bound_excess: f64,
    pub upper_bound_worst_time: Option<DyadicTime>,
    /// Master times where the reference jump is below the threshold.
    pub continuity_times: usize,
    /// `max |max_k 𝓐^k_t − A_t|` over continuity times.
    pub continuity_residual: f64,
    pub continuity_worst_time: Option<DyadicTime>,
    pub stopping_times: Vec<StoppingTimeResidual>,
}

impl PredictabilityReport {
    pub fn upper_bound_holds(&self) -> bool {
        self.upper_bound_excess <= self.tol
    }

    pub fn continuity_holds(&self) -> bool {
        self.continuity_residual <= self.tol
    }

    pub fn stopping_times_hold(&self) -> bool {
        self.stopping_times.iter().all(|r| r.residual <= self.tol)
    }

    pub fn holds(&self) -> bool {
        self.upper_bound_holds() && self.continuity_holds() && self.stopping_times_hold()
    }
}

fn running_max(combined: &CombinedProcesses, j: usize) -> Vec<f64> {
    let mut out = combined.compensators[0].at_index(j).values().to_vec();
    for c in &combined.compensators[1..] {
        for (o, v) in out.iter_mut().zip(c.at_index(j).values()) {
            *o = o.max(*v);
        }
    }
    out
}

pub fn predictability_check(
    space: &FiniteFilteredSpace,
    combined: &CombinedProcesses,
    taus: &[(String, StoppingTime)],
    jump_threshold: f64,
    tol: f64,
) -> Result<PredictabilityReport> {
    let grid = DyadicGrid::new(combined.process.level());
    let reference = &combined.reference.compensator;
    let mut upper = (f64::NEG_INFINITY, None);
    let mut cont = (0.0, None);
    let mut continuity_times = 0;
    for j in 0..grid.len() {
        let top = running_max(combined, j);
        let a = reference.at_index(j).values();
        let excess = top.iter().zip(a).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max);
        if excess > upper.0 {
            upper = (excess, Some(grid.time(j)));
        }
        let jump = if j == 0 {
            0.0
        } else {
            a.iter().zip(reference.at_index(j - 1).values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        if jump < jump_threshold {
            continuity_times += 1;
            let residual = top.iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if residual > cont.0 {
                cont = (residual, Some(grid.time(j)));
            }
        }
    }
    let mut stopping_times = Vec::with_capacity(taus.len());
    for (label, tau) in taus {
        let tau = tau.on_level(grid.level().max(tau.level()));
        let a_tau = evaluate_at_stopping_time(space, reference, &tau)?;
        let mut residual: f64 = 0.0;
        for atom in 0..space.num_atoms() {
            let idx = tau.at(atom).index_at(grid.level()).expect("master grid time") as usize;
            let top = combined.compensators.iter().map(|c| c.at_index(idx)[atom]).fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((top - a_tau[atom]).abs());
        }
        stopping_times.push(StoppingTimeResidual { label: label.clone(), residual });
    }
    Ok(PredictabilityReport {
        levels: combined.levels.clone(),
        jump_threshold,
        tol,
        upper_bound_excess: upper.0,
        upper_bound_worst_time: upper.1,
        continuity_times,
        continuity_residual: cont.0,
        continuity_worst_time: cont.1,
        stopping_times,
    })
}

/// A labelled stopping time at which the curve is measured.
#[derive(Debug, Clone)]
pub struct Probe {
    pub label: String,
    pub tau: StoppingTime,
}

impl Probe {
    /// The constant time `t`, labelled `t=<t>`.
    pub fn at(space: &FiniteFilteredSpace, t: DyadicTime) -> Result<Probe> {
        let level = t.level().max(space.depth());
        Ok(Probe { label: format!("t={t}"), tau: StoppingTime::constant(space, level, t)? })
    }

    /// First master time with `S > c`, labelled `tau=hit(<c>)`.
    pub fn hitting(space: &FiniteFilteredSpace, s: &AdaptedProcess, c: f64) -> Result<Probe> {
        Ok(Probe { label: format!("tau=hit({c})"), tau: s.first_exceedance(space, c)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub depth: u32,
    pub label: String,
    /// `‖𝓐^k_τ − A_τ‖₁`.
    pub l1_gap_a: f64,
    /// `‖𝓜^k_1 − M_1‖₁`.
    pub l1_gap_m1: f64,
    /// `|E[𝓐^k_τ] − E[A_τ]|`.
    pub mean_gap: f64,
    /// `l1_gap_a / min_ω P(ω)`, a bound on the per-atom deviation.
    pub per_atom_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCurve {
    pub rows: Vec<CurveRow>,
    pub min_prob: f64,
}

impl ConvergenceCurve {
    pub const CSV_HEADER: &'static str = "depth,t_or_tau,l1_gap_A,l1_gap_M1,mean_gap_at_tau,per_atom_bound";

    /// Rows for one probe label, in depth order.
    pub fn series<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a CurveRow> + 'a {
        self.rows.iter().filter(move |r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.depth,
                r.label,
                fmt_f64(r.l1_gap_a),
                fmt_f64(r.l1_gap_m1),
                fmt_f64(r.mean_gap),
                fmt_f64(r.per_atom_bound)
            )
            .expect("writing to a string");
        }
        out
    }
}

/// Measures every combined level at every probe against the master reference.
pub fn measure_curve(
    space: &FiniteFilteredSpace,
    combined: &CombinedProcesses,
    probes: &[Probe],
) -> Result<ConvergenceCurve> {
    let depth = combined.process.level();
    let reference = &combined.reference;
    let min_prob = space.min_prob();
    let mut rows = Vec::new();
    for (k, &n) in combined.levels.iter().enumerate() {
        let l1_gap_m1 = space.l1_distance(&combined.terminal_martingale(k), reference.martingale.terminal());
        for probe in probes {
            let tau = probe.tau.on_level(depth.max(probe.tau.level()));
            let a_ref = evaluate_at_stopping_time(space, &reference.compensator, &tau)?;
            let a_k = evaluate_at_stopping_time(space, &combined.compensators[k], &tau)?;
            let l1_gap_a = space.l1_distance(&a_k, &a_ref);
            rows.push(CurveRow {
                depth: n,
                label: probe.label.clone(),
                l1_gap_a,
                l1_gap_m1,
                mean_gap: (space.expectation(&a_k) - space.expectation(&a_ref)).abs(),
                per_atom_bound: l1_gap_a / min_prob,
            });
        }
    }
    Ok(ConvergenceCurve { rows, min_prob })
}

/// Full pipeline per depth followed by measurement at the probes.
pub fn convergence_curve(
    space: &FiniteFilteredSpace,
    s: &AdaptedProcess,
    depths: &[u32],
    probes: &[Probe],
    tol: f64,
) -> Result<ConvergenceCurve> {
    let (combined, _) = run_pipeline(space, s, depths, tol)?;
    measure_curve(space, &combined, probes)
}
