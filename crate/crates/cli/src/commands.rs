//! The config-driven commands. Every record carries the config hash and the
//! master seed.

use serde::Serialize;

use qtraj_core::darkness::{search_gray, DefectReport, EmptinessEstimate};
use qtraj_core::trajectory::{enumerate_distribution, purification_report, OmegaSummary, PurificationConfig};
use qtraj_core::{purity_moment, validate_kraus, DensityMatrix};

use crate::config::Experiment;
use crate::output::emit;
use crate::CliError;

#[derive(Serialize)]
struct ValidateRow<'a> {
    config_hash: &'a str,
    seed: u64,
    omega_seed: u64,
    position: i64,
    ensemble: &'a str,
    max_deviation: f64,
    pass: bool,
}

pub fn validate(exp: &Experiment) -> Result<bool, CliError> {
    let mut rows = Vec::with_capacity(exp.omega_seeds.len());
    for &omega_seed in &exp.omega_seeds {
        let omega = exp.ensemble.sample_point(omega_seed);
        let set = exp.ensemble.generate(&omega)?;
        let report = validate_kraus(&set, exp.validate_tol);
        rows.push(ValidateRow {
            config_hash: &exp.config_hash,
            seed: exp.seed,
            omega_seed,
            position: omega.position(),
            ensemble: exp.ensemble.name(),
            max_deviation: report.max_deviation,
            pass: report.pass,
        });
    }
    emit(exp.format, exp.out.as_deref(), &rows, &rows)?;
    let worst = rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    eprintln!(
        "validate: {} point(s), max completeness deviation {worst:e} (tol {:e}): {}",
        rows.len(),
        exp.validate_tol,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

#[derive(Serialize)]
struct PurifyRow<'a> {
    config_hash: &'a str,
    seed: u64,
    omega_seed: u64,
    n: usize,
    mean_m2: f64,
    stderr: f64,
    frac_pure: f64,
    median_m2: f64,
    phi_exact: Option<f64>,
    increment_partial_sum: Option<f64>,
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a T,
}

pub fn purify(exp: &Experiment) -> Result<bool, CliError> {
    let config = PurificationConfig {
        initial: exp.initial.clone(),
        n_steps: exp.purify_steps,
        n_traj: exp.purify_traj,
        branch_budget: exp.purify_budget,
        seed: exp.seed,
    };
    let summaries: Vec<OmegaSummary> = purification_report(&exp.ensemble, &exp.omega_seeds, &config)?;
    let rows: Vec<PurifyRow> = summaries
        .iter()
        .flat_map(|s| {
            s.curve.iter().map(move |d| PurifyRow {
                config_hash: &exp.config_hash,
                seed: exp.seed,
                omega_seed: s.omega_seed,
                n: d.n,
                mean_m2: d.mean_m2,
                stderr: d.stderr,
                frac_pure: d.frac_pure,
                median_m2: d.median_m2,
                phi_exact: d.phi_exact,
                increment_partial_sum: d.increment_partial_sum,
            })
        })
        .collect();
    let json: Vec<Tagged<OmegaSummary>> =
        summaries.iter().map(|s| Tagged { config_hash: &exp.config_hash, seed: exp.seed, record: s }).collect();
    emit(exp.format, exp.out.as_deref(), &rows, &json)?;
    let count = summaries.len() as f64;
    let mean_final: f64 = summaries.iter().map(|s| s.final_mean_m2).sum::<f64>() / count;
    let pure_final: f64 = summaries.iter().map(|s| s.final_frac_pure).sum::<f64>() / count;
    eprintln!(
        "purify: {} point(s) x {} trajectories, n = {}: mean M2 {mean_final:.6}, purified fraction {pure_final:.4}",
        summaries.len(),
        exp.purify_traj,
        exp.purify_steps
    );
    Ok(true)
}

#[derive(Serialize)]
struct EnumerateRow<'a> {
    config_hash: &'a str,
    seed: u64,
    omega_seed: u64,
    depth: usize,
    word: String,
    probability: f64,
    m2: f64,
}

#[derive(Serialize)]
struct EnumerateBranch {
    word: String,
    probability: f64,
    state: DensityMatrix,
}

#[derive(Serialize)]
struct EnumerateRecord<'a> {
    config_hash: &'a str,
    seed: u64,
    omega_seed: u64,
    depth: usize,
    total_probability: f64,
    pruned_mass: f64,
    branches: Vec<EnumerateBranch>,
}

pub fn enumerate(exp: &Experiment) -> Result<bool, CliError> {
    let alphabet = exp.ensemble.alphabet();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &omega_seed in &exp.omega_seeds {
        let omega = exp.ensemble.sample_point(omega_seed);
        let rho0 = exp.initial.resolve(&exp.ensemble, &omega)?;
        let dist = enumerate_distribution(&exp.ensemble, &omega, &rho0, exp.enumerate_depth, exp.enumerate_budget)?;
        for b in &dist.branches {
            rows.push(EnumerateRow {
                config_hash: &exp.config_hash,
                seed: exp.seed,
                omega_seed,
                depth: dist.depth,
                word: b.word.render(alphabet),
                probability: b.probability,
                m2: purity_moment(&b.state, 2),
            });
        }
        records.push(EnumerateRecord {
            config_hash: &exp.config_hash,
            seed: exp.seed,
            omega_seed,
            depth: dist.depth,
            total_probability: dist.total_probability(),
            pruned_mass: dist.pruned_mass,
            branches: dist
                .branches
                .into_iter()
                .map(|b| EnumerateBranch { word: b.word.render(alphabet), probability: b.probability, state: b.state })
                .collect(),
        });
    }
    emit(exp.format, exp.out.as_deref(), &rows, &records)?;
    eprintln!("enumerate: {} point(s), {} branch(es) at depth {}", records.len(), rows.len(), exp.enumerate_depth);
    Ok(true)
}

#[derive(Serialize)]
struct DarkRow<'a> {
    config_hash: &'a str,
    seed: u64,
    omega_seed: u64,
    #[serde(rename = "N")]
    depth: usize,
    r: usize,
    min_defect: f64,
    found_gray: bool,
    restarts_run: usize,
    converged_restarts: usize,
}

pub fn dark(exp: &Experiment) -> Result<bool, CliError> {
    let mut reports: Vec<Vec<DefectReport>> = Vec::with_capacity(exp.omega_seeds.len());
    for &omega_seed in &exp.omega_seeds {
        let omega = exp.ensemble.sample_point(omega_seed);
        let per_rank = exp
            .dark_ranks
            .iter()
            .map(|&r| search_gray(&exp.ensemble, &omega, exp.dark_depth, r, &exp.search))
            .collect::<qtraj_core::Result<Vec<_>>>()?;
        reports.push(per_rank);
    }
    let flat: Vec<&DefectReport> = reports.iter().flatten().collect();
    let rows: Vec<DarkRow> = flat
        .iter()
        .map(|r| DarkRow {
            config_hash: &exp.config_hash,
            seed: exp.seed,
            omega_seed: r.omega_seed,
            depth: r.depth,
            r: r.r,
            min_defect: r.min_defect,
            found_gray: r.found_gray,
            restarts_run: r.restarts_run,
            converged_restarts: r.converged_restarts,
        })
        .collect();
    let json: Vec<Tagged<DefectReport>> =
        flat.iter().map(|r| Tagged { config_hash: &exp.config_hash, seed: exp.seed, record: *r }).collect();
    emit(exp.format, exp.out.as_deref(), &rows, &json)?;
    let estimate = EmptinessEstimate::from_reports(
        exp.ensemble.name(),
        exp.dark_depth,
        &exp.dark_ranks,
        &reports,
        exp.search.evidence_threshold,
    );
    eprintln!(
        "dark: N = {}, ranks {:?}: no gray projection found at {}/{} point(s); Pr[empty] ~ {:.3} (95% CI {:.3}-{:.3}) [{}]",
        exp.dark_depth,
        exp.dark_ranks,
        estimate.empty_count,
        estimate.n_omegas,
        estimate.fraction,
        estimate.ci_low,
        estimate.ci_high,
        estimate.label
    );
    Ok(true)
}
