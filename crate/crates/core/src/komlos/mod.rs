//! Forward convex combinations with L¹-convergent tails: the min-norm step in
//! weighted L², the truncation ladder and the staged (diagonal) extraction.

mod min_norm;

pub use min_norm::{min_norm_convex_hull, Method, MinNormPoint, DEFAULT_TOL};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filtered_space::{FiniteFilteredSpace, RandomVariable};

/// Simplex weights tolerance on the total mass.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weights `λ_start, …, λ_{start+len−1}` over a sequence, indices 0-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexWeights {
    start: usize,
    weights: Vec<f64>,
}

impl ConvexWeights {
    pub fn new(start: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::WeightMismatch("empty weight vector".into()));
        }
        if let Some(j) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::WeightMismatch(format!("weight {} is {}", start + j, weights[j])));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightMismatch(format!("weights sum to {total}")));
        }
        Ok(ConvexWeights { start, weights })
    }

    pub(crate) fn from_solver(start: usize, weights: Vec<f64>) -> Self {
        ConvexWeights { start, weights }
    }

    /// Point mass on `index`.
    pub fn unit(index: usize) -> Self {
        ConvexWeights { start: index, weights: vec![1.0] }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// One past the last index covered.
    pub fn end(&self) -> usize {
        self.start + self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(index, λ)` for every nonzero weight, in index order.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(move |(j, w)| (self.start + j, *w))
    }

    /// Shifts every index by `offset`.
    pub fn shifted(&self, offset: usize) -> Self {
        ConvexWeights { start: self.start + offset, weights: self.weights.clone() }
    }

    /// `Σ λ_j items[j]`, accumulated in index order.
    pub fn combine(&self, items: &[RandomVariable]) -> Result<RandomVariable> {
        if self.end() > items.len() {
            return Err(Error::WeightMismatch(format!(
                "weights reach index {} but only {} items given",
                self.end() - 1,
                items.len()
            )));
        }
        let n = items[self.start].len();
        let mut out = vec![0.0; n];
        for (j, w) in self.support() {
            if items[j].len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: items[j].len() });
            }
            for (o, v) in out.iter_mut().zip(items[j].values()) {
                *o += w * v;
            }
        }
        Ok(RandomVariable::from_vec_unchecked(out))
    }

    /// Weights over the original sequence when `self` weighs the combinations `inner[k]`.
    pub fn compose(&self, inner: &[ConvexWeights]) -> Result<ConvexWeights> {
        if self.end() > inner.len() {
            return Err(Error::WeightMismatch("outer weights exceed inner combinations".into()));
        }
        let start = self.support().map(|(k, _)| inner[k].start).min().unwrap_or(self.start);
        let end = self.support().map(|(k, _)| inner[k].end()).max().unwrap_or(start + 1);
        let mut weights = vec![0.0; end - start];
        for (k, w) in self.support() {
            for (j, v) in inner[k].support() {
                weights[j - start] += w * v;
            }
        }
        Ok(ConvexWeights { start, weights })
    }
}

/// `f · 1{|f| ≤ i}` per atom.
pub fn truncate(f: &RandomVariable, i: u32) -> RandomVariable {
    let cap = f64::from(i);
    f.map(|x| if x.abs() <= cap { x } else { 0.0 })
}

/// Result of one Hilbertian step on a tail `f_n, f_{n+1}, …`.
#[derive(Debug, Clone)]
pub struct KomlosStep {
    pub point: RandomVariable,
    /// Weights indexed relative to the full sequence.
    pub weights: ConvexWeights,
    pub norm: f64,
    /// Solver value for the tail infimum `inf{‖g‖₂ : g ∈ conv(tail)}`.
    pub tail_inf: f64,
    /// Certified lower bound on the tail infimum.
    pub lower_bound: f64,
    pub certificate_gap: f64,
}

/// Min-norm point of `conv(tail)` solved to tolerance `min(slack, tol)`;
/// `start` is the index of `tail[0]` in the full sequence.
pub fn hilbert_komlos_step(
    space: &FiniteFilteredSpace,
    tail: &[RandomVariable],
    start: usize,
    slack: f64,
    tol: f64,
) -> Result<KomlosStep> {
    let sol = min_norm_convex_hull(space, tail, slack.min(tol))?;
    Ok(KomlosStep {
        weights: sol.weights.shifted(start),
        norm: sol.norm,
        tail_inf: sol.norm,
        lower_bound: sol.lower_bound,
        certificate_gap: sol.certificate_gap,
        point: sol.point,
    })
}

/// Per-index report line; `n` and the weight indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KomlosRecord {
    pub n: usize,
    pub norm: f64,
    pub tail_inf: f64,
    pub certificate_gap: f64,
    pub weights: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: u32,
    pub skipped: bool,
    pub max_certificate_gap: f64,
}

/// Tolerance on the quantitative bounds.
pub const BOUND_TOL: f64 = 1e-8;

/// Checks of the quantitative bounds; each `*_excess` is `lhs − rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KomlosBounds {
    /// `max_n ‖g_n‖₂ − (A + 1/n)`.
    pub norm_excess: f64,
    /// `max_{m,k ≥ n} ‖g_k − g_m‖₂² − (4(A + 1/n)² − 4(A_n − ε_n)₊²)`, with `ε_n` the
    /// distance from `‖g_n‖₂` to the certified lower bound on the tail infimum.
    pub cauchy_excess: f64,
    /// Largest drop `A_n − A_{n+1}` of the tail infima (hull shrinkage predicts ≤ 0 up to solver tolerance).
    pub tail_inf_drop: f64,
    /// `max_n max_atom |g_n − Σ λ^n_j f_j|` against the untruncated sequence.
    pub membership_residual: f64,
}

impl KomlosBounds {
    /// Both bounds hold up to `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.norm_excess <= tol && self.cauchy_excess <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KomlosReport {
    pub records: Vec<KomlosRecord>,
    /// `A = sup_n A_n`.
    pub sup_tail_inf: f64,
    pub levels: u32,
    pub stages: Vec<StageSummary>,
    /// `‖g_m − g_k‖₁` for all pairs.
    pub pairwise_l1: Vec<Vec<f64>>,
    /// `sup_{m,k ≥ n} ‖g_m − g_k‖₁`.
    pub tail_l1_diameter: Vec<f64>,
    pub bounds: KomlosBounds,
}

impl KomlosReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct KomlosExtraction {
    /// Final weights over the original sequence, one per `n`.
    pub weights: Vec<ConvexWeights>,
    /// `g_n = Σ λ^n_j f_j` on the untruncated sequence.
    pub combined: Vec<RandomVariable>,
    pub report: KomlosReport,
}

/// Default number of truncation levels: `⌈max_n ‖f_n‖_∞⌉`, at least 1.
pub fn default_levels(seq: &[RandomVariable]) -> u32 {
    let m = seq.iter().map(RandomVariable::max_abs).fold(0.0, f64::max);
    (m.ceil() as u32).max(1)
}

/// Staged extraction over truncation levels `1..=levels`.
///
/// Stage `i` runs one Hilbertian step per `n` on the stage-`(i−1)` combinations of the
/// level-`i` truncations and composes the weights. A stage whose truncations coincide
/// with the previous stage's is skipped.
pub fn komlos_extract(
    space: &FiniteFilteredSpace,
    seq: &[RandomVariable],
    levels: Option<u32>,
    tol: f64,
) -> Result<KomlosExtraction> {
    if seq.is_empty() {
        return Err(Error::EmptyHull);
    }
    for f in seq {
        space.check_len(f.len())?;
    }
    let levels = levels.unwrap_or_else(|| default_levels(seq));
    if levels == 0 {
        return Err(Error::LevelOutOfRange { level: 0, min: 1, max: u32::MAX });
    }
    let big_n = seq.len();
    let mut weights: Vec<ConvexWeights> = (0..big_n).map(ConvexWeights::unit).collect();
    let mut steps: Vec<KomlosStep> = Vec::new();
    let mut stages = Vec::new();
    let mut previous: Option<Vec<RandomVariable>> = None;

    for stage in 1..=levels {
        let truncated: Vec<RandomVariable> = seq.iter().map(|f| truncate(f, stage)).collect();
        if previous.as_ref() == Some(&truncated) {
            log::debug!("komlos stage {stage} skipped: truncation inactive");
            stages.push(StageSummary { stage, skipped: true, max_certificate_gap: 0.0 });
            continue;
        }
        let inputs: Vec<RandomVariable> = weights.iter().map(|w| w.combine(&truncated)).collect::<Result<_>>()?;
        let solved: Vec<KomlosStep> =
            (0..big_n)
                .into_par_iter()
                .map(|n| {
                    hilbert_komlos_step(space, &inputs[n..], n, 1.0 / (n + 1) as f64, tol)
                        .map_err(|e| Error::KomlosStage { stage, index: n + 1, source: Box::new(e) })
                })
                .collect::<Result<_>>()?;
        weights = solved.iter().map(|s| s.weights.compose(&weights)).collect::<Result<_>>()?;
        stages.push(StageSummary {
            stage,
            skipped: false,
            max_certificate_gap: solved.iter().map(|s| s.certificate_gap).fold(0.0, f64::max),
        });
        steps = solved;
        previous = Some(truncated);
    }

    let combined: Vec<RandomVariable> = weights.iter().map(|w| w.combine(seq)).collect::<Result<_>>()?;
    let report = build_report(space, seq, &weights, &steps, &combined, stages, levels);
    Ok(KomlosExtraction { weights, combined, report })
}

fn build_report(
    space: &FiniteFilteredSpace,
    seq: &[RandomVariable],
    weights: &[ConvexWeights],
    steps: &[KomlosStep],
    combined: &[RandomVariable],
    stages: Vec<StageSummary>,
    levels: u32,
) -> KomlosReport {
    let big_n = seq.len();
    let records: Vec<KomlosRecord> = steps
        .iter()
        .enumerate()
        .map(|(n, s)| KomlosRecord {
            n: n + 1,
            norm: s.norm,
            tail_inf: s.tail_inf,
            certificate_gap: s.certificate_gap,
            weights: weights[n].support().map(|(j, w)| (j + 1, w)).collect(),
        })
        .collect();
    let sup = steps.iter().map(|s| s.tail_inf).fold(0.0, f64::max);

    let pairwise_l1: Vec<Vec<f64>> =
        (0..big_n).map(|m| (0..big_n).map(|k| space.l1_distance(&combined[m], &combined[k])).collect()).collect();
    let mut tail_l1_diameter = vec![0.0; big_n];
    for n in (0..big_n).rev() {
        let row = (n..big_n).map(|k| pairwise_l1[n][k]).fold(0.0, f64::max);
        tail_l1_diameter[n] = if n + 1 < big_n { row.max(tail_l1_diameter[n + 1]) } else { row };
    }

    let mut norm_excess = f64::NEG_INFINITY;
    let mut cauchy_excess = f64::NEG_INFINITY;
    for (n, s) in steps.iter().enumerate() {
        let slack = 1.0 / (n + 1) as f64;
        norm_excess = norm_excess.max(s.norm - (sup + slack));
        let eps = (s.norm - s.lower_bound).max(0.0);
        let floor = (s.tail_inf - eps).max(0.0);
        let rhs = 4.0 * (sup + slack).powi(2) - 4.0 * floor * floor;
        for m in n..big_n {
            for k in m + 1..big_n {
                let d = steps[m].point.sub(&steps[k].point);
                cauchy_excess = cauchy_excess.max(space.inner(&d, &d) - rhs);
            }
        }
    }
    let tail_inf_drop = steps.windows(2).map(|w| w[0].tail_inf - w[1].tail_inf).fold(f64::NEG_INFINITY, f64::max);
    let membership_residual = weights
        .iter()
        .zip(combined)
        .map(|(w, g)| {
            let mut direct = vec![0.0; g.len()];
            for (j, l) in w.support() {
                for (d, v) in direct.iter_mut().zip(seq[j].values()) {
                    *d += l * v;
                }
            }
            g.values().iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);

    KomlosReport {
        records,
        sup_tail_inf: sup,
        levels,
        stages,
        pairwise_l1,
        tail_l1_diameter,
        bounds: KomlosBounds {
            norm_excess,
            cauchy_excess: if cauchy_excess.is_finite() { cauchy_excess } else { 0.0 },
            tail_inf_drop: if tail_inf_drop.is_finite() { tail_inf_drop } else { 0.0 },
            membership_residual,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::binary_tree;

    fn rv(v: &[f64]) -> RandomVariable {
        RandomVariable::new(v.to_vec()).unwrap()
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate(&rv(&[3.0, -0.5]), 1), rv(&[0.0, -0.5]));
        let f = rv(&[0.9, -1.0]);
        assert_eq!(truncate(&f, 1), f);
    }

    #[test]
    fn weights_validate() {
        assert!(ConvexWeights::new(0, vec![0.5, 0.5]).is_ok());
        assert!(ConvexWeights::new(0, vec![0.5, 0.6]).is_err());
        assert!(ConvexWeights::new(0, vec![1.5, -0.5]).is_err());
        assert!(ConvexWeights::new(0, vec![]).is_err());
    }

    #[test]
    fn compose_weights() {
        let inner = vec![
            ConvexWeights::new(0, vec![0.5, 0.5]).unwrap(),
            ConvexWeights::new(1, vec![0.25, 0.75]).unwrap(),
            ConvexWeights::unit(2),
        ];
        let outer = ConvexWeights::new(0, vec![0.5, 0.5]).unwrap();
        let c = outer.compose(&inner).unwrap();
        assert_eq!(c.start(), 0);
        assert_eq!(c.weights(), &[0.25, 0.375, 0.375]);
    }

    #[test]
    fn constant_sequence() {
        let space = binary_tree(2, 2).unwrap();
        let f = rv(&[1.0, -2.5, 0.5, 3.0]);
        let seq = vec![f.clone(); 5];
        let out = komlos_extract(&space, &seq, None, DEFAULT_TOL).unwrap();
        for g in &out.combined {
            assert!(g.max_abs_diff(&f) < 1e-14);
        }
        assert!(out.report.pairwise_l1.iter().flatten().all(|d| *d < 1e-14));
        assert!(out.report.bounds.holds(BOUND_TOL));
    }

    #[test]
    fn alternating_sequence_collapses() {
        let space = binary_tree(2, 2).unwrap();
        let v = rv(&[0.5, -0.25, 1.0, 0.0]);
        let seq: Vec<_> = (0..6).map(|k| v.scale(if k % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let out = komlos_extract(&space, &seq, None, DEFAULT_TOL).unwrap();
        for g in &out.combined[..5] {
            assert!(g.max_abs() < 1e-12);
        }
        // the last tail is a single vector
        assert!(out.combined[5].max_abs_diff(&seq[5]) < 1e-15);
    }

    #[test]
    fn skipped_stages_are_logged_in_report() {
        let space = binary_tree(1, 1).unwrap();
        let seq = vec![rv(&[0.5, -0.5]), rv(&[0.25, 0.75])];
        let out = komlos_extract(&space, &seq, Some(3), DEFAULT_TOL).unwrap();
        let skipped: Vec<bool> = out.report.stages.iter().map(|s| s.skipped).collect();
        assert_eq!(skipped, vec![false, true, true]);
    }

    #[test]
    fn json_records_are_one_based() {
        let space = binary_tree(1, 1).unwrap();
        let seq = vec![rv(&[2.0, 0.0]), rv(&[0.0, 2.0])];
        let out = komlos_extract(&space, &seq, None, DEFAULT_TOL).unwrap();
        let json: serde_json::Value = serde_json::from_str(&out.report.to_json()).unwrap();
        let rec = &json["records"][0];
        assert_eq!(rec["n"], 1);
        assert!(rec["weights"][0][0].as_u64().unwrap() >= 1);
        assert!(rec.get("tail_inf").is_some() && rec.get("certificate_gap").is_some());
    }
}
