use std::fmt::Write as _;

use serde_json::json;

use super::config::{ExperimentConfig, Generator, StoppingSpec};
use super::{Experiment, Failure};
use crate::doob::{doob_decompose_discrete, ui_diagnostics};
use crate::error::Error;
use crate::filtered_space::FiniteFilteredSpace;
use crate::io::load_instance;
use crate::komlos::{komlos_extract, BOUND_TOL};
use crate::limit::{
    compensator_mean_at_tau, decompose_levels, measure_curve, predictability_check, run_pipeline, Probe,
};
use crate::processes::{
    add_predictable_jump, binary_tree, class_d_sup, gen_ground_truth, gen_squared_walk, is_submartingale, random_tree,
    squared_walk_compensator, AdaptedProcess,
};
use crate::report::fmt_f64;

/// Bound on identities that hold by construction.
const IDENTITY_TOL: f64 = 1e-12;

/// Report files (name, contents), asserted-invariant failures and a summary.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub failures: Vec<String>,
    pub summary: Vec<String>,
}

impl Outcome {
    fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    fn json(&mut self, name: &str, value: &impl serde::Serialize) {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.file(name, text);
    }

    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

/// Known decomposition of a generated instance, on the master grid.
#[derive(Debug, Clone)]
pub struct Truth {
    pub martingale: AdaptedProcess,
    pub compensator: AdaptedProcess,
    /// Levels from which the discrete decomposition must recover the truth.
    pub from_level: u32,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub space: FiniteFilteredSpace,
    pub process: Option<AdaptedProcess>,
    pub truth: Option<Truth>,
}

/// Library errors caused by the input are usage errors; everything else is an invariant failure.
pub(super) fn classify(e: Error) -> Failure {
    match e {
        Error::Schema { .. }
        | Error::ParseTime(_)
        | Error::InvalidSpace(_)
        | Error::LevelOutOfRange { .. }
        | Error::NonPositiveThreshold(_)
        | Error::NotAdapted { .. }
        | Error::Io(_)
        | Error::Json(_) => Failure::Usage(e.to_string()),
        other => Failure::Invariant(other.to_string()),
    }
}

pub fn resolve(config: &ExperimentConfig) -> Result<Resolved, Failure> {
    if let Some(path) = &config.instance {
        let inst = load_instance(path).map_err(classify)?;
        return Ok(Resolved { space: inst.space, process: inst.process, truth: None });
    }
    let generator = config.generator.ok_or_else(|| Failure::Usage("no instance source".into()))?;
    let depth = config.depth.ok_or_else(|| Failure::Usage("a depth is required when generating".into()))?;
    let seed = config.seed.unwrap_or(0);
    let signs = config.signs.unwrap_or(if depth >= 3 { 8 } else { 1 << depth });
    let space = match generator {
        Generator::GroundTruth | Generator::SquaredWalk => binary_tree(depth, signs),
        Generator::Random => random_tree(seed, depth, config.atoms),
    }
    .map_err(classify)?;

    if generator == Generator::SquaredWalk {
        let s = gen_squared_walk(&space, depth).map_err(classify)?;
        let compensator = squared_walk_compensator(&space).map_err(classify)?;
        let martingale = s.sub(&compensator).map_err(classify)?;
        let truth = Truth { martingale, compensator, from_level: 0 };
        return Ok(Resolved { space, process: Some(s), truth: Some(truth) });
    }
    let level = config.predictable_level.unwrap_or(depth);
    if level > depth {
        return Err(Failure::Usage(format!("predictable_level {level} exceeds the depth {depth}")));
    }
    let mut pair = gen_ground_truth(seed, &space, level, config.jump_scale).map_err(classify)?;
    if let Some(jump) = &config.jump {
        pair = add_predictable_jump(&space, &pair, jump.time, jump.size, seed.wrapping_add(1)).map_err(classify)?;
    }
    let pair = pair.refine(&space, depth).map_err(classify)?;
    let truth = Truth { martingale: pair.martingale, compensator: pair.compensator, from_level: level };
    Ok(Resolved { space, process: Some(pair.process), truth: Some(truth) })
}

fn require_process(r: &Resolved) -> Result<&AdaptedProcess, Failure> {
    r.process.as_ref().ok_or_else(|| Failure::Usage("the instance has no process".into()))
}

fn require_master(r: &Resolved) -> Result<&AdaptedProcess, Failure> {
    let s = require_process(r)?;
    if s.level() != r.space.depth() {
        return Err(Failure::Usage(format!(
            "the process lives on level {} but this experiment needs the master level {}",
            s.level(),
            r.space.depth()
        )));
    }
    Ok(s)
}

pub fn execute(experiment: Experiment, config: &ExperimentConfig) -> Result<Outcome, Failure> {
    let resolved = resolve(config)?;
    match experiment {
        Experiment::Decompose => decompose(config, &resolved),
        Experiment::Ui => ui(config, &resolved),
        Experiment::Komlos => komlos(config, &resolved),
        Experiment::Convergence => convergence(config, &resolved),
        Experiment::Validate => validate(&resolved),
    }
}

fn decompose(config: &ExperimentConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let s = require_process(r)?;
    let levels = config.levels(s.level()).map_err(Failure::Usage)?;
    let sub = is_submartingale(&r.space, s).map_err(classify)?;
    let mut out = Outcome::default();
    let mut csv = String::from("level,martingale_residual,min_increment,recovery_error\n");
    let mut records = Vec::new();
    let mut worst_recovery: f64 = 0.0;
    for &n in &levels {
        let pair = doob_decompose_discrete(&r.space, s, n).map_err(classify)?;
        let residual = pair.martingale_residual(&r.space);
        let min_increment = pair.min_increment();
        let unpredictable = pair.predictability_violation(&r.space);
        let recovery = match &r.truth {
            Some(t) if n >= t.from_level => {
                let a = t.compensator.sample(n).map_err(classify)?;
                let m = t.martingale.sample(n).map_err(classify)?;
                Some(pair.compensator.max_abs_diff(&a).max(pair.martingale.max_abs_diff(&m)))
            }
            _ => None,
        };
        out.require(residual < config.recovery_tol, || {
            format!("level {n}: martingale residual {residual:e} exceeds {:e}", config.recovery_tol)
        });
        out.require(unpredictable.is_none(), || {
            format!("level {n}: compensator not predictable at {}", unpredictable.expect("checked"))
        });
        if sub.holds {
            out.require(min_increment >= -config.recovery_tol, || {
                format!("level {n}: compensator decreases by {:e}", -min_increment)
            });
        }
        if let Some(err) = recovery {
            worst_recovery = worst_recovery.max(err);
            out.require(err < config.recovery_tol, || {
                format!("level {n}: recovery error {err:e} exceeds {:e}", config.recovery_tol)
            });
        }
        let _ = writeln!(
            csv,
            "{n},{},{},{}",
            fmt_f64(residual),
            fmt_f64(min_increment),
            recovery.map(fmt_f64).unwrap_or_default()
        );
        records.push(json!({
            "level": n,
            "martingale_residual": residual,
            "min_increment": min_increment,
            "predictable": unpredictable.is_none(),
            "recovery_error": recovery,
        }));
    }
    out.json(
        "decompose.json",
        &json!({
            "submartingale": sub.holds,
            "max_recovery_error": r.truth.as_ref().map(|_| worst_recovery),
            "levels": records,
        }),
    );
    out.file("decompose.csv", csv);
    out.summary.push(match &r.truth {
        Some(_) => format!("decompose: {} levels, max recovery error {worst_recovery:e}", levels.len()),
        None => format!("decompose: {} levels", levels.len()),
    });
    Ok(out)
}

fn ui(config: &ExperimentConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let s = require_process(r)?;
    let levels = config.levels(s.level()).map_err(Failure::Usage)?;
    let diag = ui_diagnostics(&r.space, s, &levels, &config.thresholds).map_err(classify)?;
    let mut out = Outcome::default();
    if let Some(row) = diag.first_failure() {
        out.failures.push(format!(
            "level {}, c = {}: tail slack {:e}, Markov slack {:e}",
            row.level,
            row.c,
            row.tail_slack(),
            row.markov_slack()
        ));
    }
    out.summary.push(format!("ui: {} rows, {} pass", diag.rows.len(), diag.rows.iter().filter(|r| r.passes()).count()));
    out.file("ui.csv", diag.to_csv());
    out.json("ui.json", &diag);
    Ok(out)
}

fn komlos(config: &ExperimentConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let s = require_master(r)?;
    let levels = config.levels(s.level()).map_err(Failure::Usage)?;
    let pairs = decompose_levels(&r.space, s, &levels).map_err(classify)?;
    let seq: Vec<_> = pairs.iter().map(|p| p.martingale.terminal().clone()).collect();
    let ex = komlos_extract(&r.space, &seq, None, config.tol).map_err(classify)?;
    let mut out = Outcome::default();
    check_komlos(&mut out, &ex.report);
    out.summary.push(format!(
        "komlos: {} vectors, A = {:e}, final tail L1 diameter {:e}",
        seq.len(),
        ex.report.sup_tail_inf,
        ex.report.tail_l1_diameter.first().copied().unwrap_or(0.0)
    ));
    out.json("komlos.json", &json!({ "levels": levels, "report": ex.report }));
    Ok(out)
}

fn check_komlos(out: &mut Outcome, report: &crate::komlos::KomlosReport) {
    let b = &report.bounds;
    out.require(b.norm_excess <= BOUND_TOL, || format!("komlos norm bound exceeded by {:e}", b.norm_excess));
    out.require(b.cauchy_excess <= BOUND_TOL, || format!("komlos pairwise bound exceeded by {:e}", b.cauchy_excess));
    out.require(b.tail_inf_drop <= BOUND_TOL, || format!("komlos tail infima drop by {:e}", b.tail_inf_drop));
    out.require(b.membership_residual <= IDENTITY_TOL, || {
        format!("komlos membership residual {:e}", b.membership_residual)
    });
}

fn probes(config: &ExperimentConfig, space: &FiniteFilteredSpace, s: &AdaptedProcess) -> Result<Vec<Probe>, Failure> {
    let mut probes = Vec::new();
    for &t in &config.times {
        probes.push(Probe::at(space, t).map_err(classify)?);
    }
    for stop in &config.stopping_times {
        probes.push(
            match *stop {
                StoppingSpec::Constant(t) => Probe::at(space, t),
                StoppingSpec::Hitting(c) => Probe::hitting(space, s, c),
            }
            .map_err(classify)?,
        );
    }
    Ok(probes)
}

fn convergence(config: &ExperimentConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let s = require_master(r)?;
    let levels = config.levels(s.level()).map_err(Failure::Usage)?;
    let probes = probes(config, &r.space, s)?;
    let (combined, komlos_report) = run_pipeline(&r.space, s, &levels, config.tol).map_err(classify)?;
    let curve = measure_curve(&r.space, &combined, &probes).map_err(classify)?;
    let mut out = Outcome::default();
    check_komlos(&mut out, &komlos_report);
    let identity = combined.identity_residual();
    out.require(identity < IDENTITY_TOL, || format!("combined identity residual {identity:e}"));

    let mut tau_tables = Vec::new();
    for probe in &probes {
        let table = compensator_mean_at_tau(&r.space, &combined, &probe.tau).map_err(classify)?;
        let label = &probe.label;
        let worst = table.max_identity_residual();
        out.require(worst < IDENTITY_TOL, || format!("{label}: mean identity residual {worst:e}"));
        out.require(table.rows.iter().all(|row| row.step_identity_exact), || {
            format!("{label}: step extension differs from the round-up value")
        });
        out.require(table.rows.iter().all(|row| row.sigma_bracket) && table.sigma_monotone, || {
            format!("{label}: round-up times out of bracket")
        });
        tau_tables.push(json!({ "label": label, "table": table }));
    }

    let labelled: Vec<(String, _)> = probes.iter().map(|p| (p.label.clone(), p.tau.clone())).collect();
    let pred = predictability_check(&r.space, &combined, &labelled, config.jump_threshold, config.predictability_tol)
        .map_err(classify)?;
    if config.check_predictability {
        out.require(pred.upper_bound_holds(), || {
            format!("max over levels exceeds the reference by {:e}", pred.upper_bound_excess)
        });
        out.require(pred.continuity_holds(), || format!("continuity-time residual {:e}", pred.continuity_residual));
        out.require(pred.stopping_times_hold(), || "stopping-time residual above tolerance".to_string());
    }

    out.summary.push(format!("convergence: levels {levels:?}, {} probes", probes.len()));
    out.file("curve.csv", curve.to_csv());
    out.json(
        "convergence.json",
        &json!({
            "levels": levels,
            "identity_residual": identity,
            "limit_candidate_l1_gap": r.space.l1_distance(
                combined.limit_candidate(&r.space).terminal(),
                combined.reference().martingale.terminal(),
            ),
            "curve": curve,
            "tau_means": tau_tables,
            "predictability": pred,
            "komlos": komlos_report,
        }),
    );
    Ok(out)
}

fn validate(r: &Resolved) -> Result<Outcome, Failure> {
    let mut out = Outcome::default();
    let space = &r.space;
    let mut report = json!({
        "atoms": space.num_atoms(),
        "depth": space.depth(),
        "distinct_partitions": space.distinct_partitions().len(),
        "min_prob": space.min_prob(),
    });
    if let Some(s) = &r.process {
        let sub = is_submartingale(space, s).map_err(classify)?;
        out.require(sub.holds, || {
            format!(
                "process is not a submartingale: violation {:e} at {}",
                sub.max_violation,
                sub.worst_time.map(|t| t.to_string()).unwrap_or_default()
            )
        });
        report["process"] = json!({
            "level": s.level(),
            "submartingale": sub.holds,
            "max_violation": sub.max_violation,
            "class_d_sup": class_d_sup(space, s).map_err(classify)?,
        });
    }
    out.summary.push(format!("validate: {} atoms, depth {}", space.num_atoms(), space.depth()));
    out.json("validate.json", &report);
    Ok(out)
}
