//! Trajectories: Born-rule sampling, exact enumeration of the outcome tree,
//! and the moment diagnostics built on them.
//!
//! For a fixed disorder point `ω` the `n`-th measurement uses the Kraus set
//! realized at `θⁿ(ω)` (see [`DisorderedEnsemble::schedule`]). The moments
//! `M^(m,n) = tr((ρ^(n))^m)` form a bounded submartingale under the quantum
//! probability; their expectations `Φ^(n)` and the conditional squared
//! increments `δ^(m)` are what the purification analysis looks at.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::disorder::DisorderPoint;
use crate::ensemble::{DisorderedEnsemble, OutcomeWord};
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::random::{mix64, random_mixed_state, random_pure_state, stream, substream};
use crate::state::{apply_measurement, purity_moment, DensityMatrix, KrausSet, ZERO_PROBABILITY};
use crate::stats::{compensated_sum, mean_estimate, median, CompensatedSum};

/// Default cap on the number of leaves of an enumerated outcome tree.
pub const DEFAULT_BRANCH_BUDGET: u128 = 1 << 20;

/// Largest total probability that pruning may discard.
pub const MAX_PRUNED_MASS: f64 = 1e-10;

/// Second moment at or above `1 - PURE_TOL` counts as purified.
pub const PURE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRecord {
    pub initial_state: DensityMatrix,
    pub omega_seed: u64,
    pub omega_position: i64,
    pub outcomes: OutcomeWord,
    /// `ρ^(0) = ρ0, ρ^(1), …, ρ^(n)`.
    pub states: Vec<DensityMatrix>,
    /// Born probability of each chosen outcome.
    pub step_probs: Vec<f64>,
}

impl TrajectoryRecord {
    /// `M^(m,k)` for `k = 0..=n`.
    pub fn moments(&self, m: u32) -> Vec<f64> {
        self.states.iter().map(|s| purity_moment(s, m)).collect()
    }
}

/// Samples one trajectory of `n_steps` measurements from `ρ0`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    rho0: &DensityMatrix,
    n_steps: usize,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    check_state(ensemble, rho0)?;
    let sets = ensemble.schedule(omega, n_steps)?;
    let (outcomes, states, step_probs) = sample_path(&sets, rho0, rng)?;
    Ok(TrajectoryRecord {
        initial_state: rho0.clone(),
        omega_seed: omega.master_seed(),
        omega_position: omega.position(),
        outcomes,
        states,
        step_probs,
    })
}

/// Samples a path through a precomputed schedule.
pub fn sample_path<R: Rng + ?Sized>(
    sets: &[KrausSet],
    rho0: &DensityMatrix,
    rng: &mut R,
) -> Result<(OutcomeWord, Vec<DensityMatrix>, Vec<f64>)> {
    let mut states = Vec::with_capacity(sets.len() + 1);
    let mut labels = Vec::with_capacity(sets.len());
    let mut probs = Vec::with_capacity(sets.len());
    let mut rho = rho0.clone();
    states.push(rho.clone());
    for (step, set) in sets.iter().enumerate() {
        let weights = set.outcome_probabilities(&rho);
        let total: f64 = weights.iter().filter(|&&w| w > ZERO_PROBABILITY).sum();
        if total <= 0.0 {
            return Err(Error::Internal(format!("every outcome has probability zero at step {}", step + 1)));
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (a, &w) in weights.iter().enumerate() {
            if w <= ZERO_PROBABILITY {
                continue;
            }
            acc += w;
            chosen = Some(a);
            if u < acc {
                break;
            }
        }
        let a = chosen.expect("total > 0 implies a live outcome");
        let (next, p) = apply_measurement(set.operator(a), &rho)?;
        if p <= ZERO_PROBABILITY {
            return Err(Error::Internal(format!("sampled a dead branch at step {}", step + 1)));
        }
        labels.push(a);
        probs.push(p);
        rho = next;
        states.push(rho.clone());
    }
    Ok((OutcomeWord::new(labels), states, probs))
}

#[derive(Clone, Debug, Serialize)]
pub struct Branch {
    pub word: OutcomeWord,
    pub probability: f64,
    pub state: DensityMatrix,
}

/// The quantum probability `Q^(n)` on `A^n`, as the list of live branches.
/// Branches below [`ZERO_PROBABILITY`] are pruned; their total mass is kept
/// in `pruned_mass`.
#[derive(Clone, Debug, Serialize)]
pub struct OutcomeDistribution {
    pub depth: usize,
    pub branches: Vec<Branch>,
    pub pruned_mass: f64,
}

impl OutcomeDistribution {
    pub fn total_probability(&self) -> f64 {
        compensated_sum(self.branches.iter().map(|b| b.probability))
    }

    /// The live branch for `word`, if any.
    pub fn branch(&self, word: &OutcomeWord) -> Option<&Branch> {
        self.branches.binary_search_by(|b| b.word.cmp(word)).ok().map(|i| &self.branches[i])
    }

    /// Probability of `word`; zero for pruned or impossible words.
    pub fn probability(&self, word: &OutcomeWord) -> f64 {
        self.branch(word).map_or(0.0, |b| b.probability)
    }

    /// Expectation of `f(state)` under the distribution.
    pub fn expectation(&self, f: impl Fn(&DensityMatrix) -> f64) -> f64 {
        compensated_sum(self.branches.iter().map(|b| b.probability * f(&b.state)))
    }
}

/// A node of the outcome tree handed to [`walk_tree`] visitors.
pub struct TreeNode<'a> {
    pub depth: usize,
    pub word: &'a [usize],
    /// `tr(V^(n) ρ0 V^(n)†)`.
    pub probability: f64,
    pub state: &'a DensityMatrix,
}

/// Depth-first walk of the outcome tree over `sets`, visiting every live node
/// (including the root). Returns the pruned mass per depth.
///
/// Probabilities are traces of the unnormalized branch operators
/// `V^(n) ρ0 V^(n)†`, not products of conditional probabilities.
pub fn walk_tree(sets: &[KrausSet], rho0: &DensityMatrix, visit: &mut dyn FnMut(&TreeNode<'_>)) -> Vec<f64> {
    let mut pruned = vec![0.0; sets.len() + 1];
    let mut word = Vec::with_capacity(sets.len());
    visit(&TreeNode { depth: 0, word: &word, probability: 1.0, state: rho0 });
    descend(sets, rho0.matrix(), &mut word, &mut pruned, visit);
    pruned
}

fn descend(
    sets: &[KrausSet],
    unnormalized: &ComplexMatrix,
    word: &mut Vec<usize>,
    pruned: &mut [f64],
    visit: &mut dyn FnMut(&TreeNode<'_>),
) {
    let depth = word.len();
    if depth == sets.len() {
        return;
    }
    for (a, v) in sets[depth].operators().iter().enumerate() {
        let child = unnormalized.conjugate_by(v).hermitian_part();
        let probability = child.trace().re;
        if probability <= ZERO_PROBABILITY {
            pruned[depth + 1] += probability.max(0.0);
            continue;
        }
        let state = DensityMatrix::from_trusted(child.scale(1.0 / probability));
        word.push(a);
        visit(&TreeNode { depth: depth + 1, word, probability: probability.min(1.0), state: &state });
        descend(sets, &child, word, pruned, visit);
        word.pop();
    }
}

fn check_state(ensemble: &DisorderedEnsemble, rho0: &DensityMatrix) -> Result<()> {
    if rho0.dim() != ensemble.dim() {
        return Err(Error::Structural(format!(
            "state has dimension {}, ensemble `{}` has {}",
            rho0.dim(),
            ensemble.name(),
            ensemble.dim()
        )));
    }
    if rho0.is_zero() {
        return Err(Error::InvalidState("initial state is the zero matrix".into()));
    }
    Ok(())
}

fn check_budget(ensemble: &DisorderedEnsemble, depth: usize, budget: u128) -> Result<()> {
    let required = (ensemble.alphabet_size() as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
    if required > budget {
        return Err(Error::Budget {
            what: format!("outcome tree of `{}` at depth {depth}", ensemble.name()),
            required,
            budget,
        });
    }
    Ok(())
}

fn check_pruned(pruned: &[f64]) -> Result<()> {
    let total: f64 = pruned.iter().sum();
    if total > MAX_PRUNED_MASS {
        return Err(Error::Internal(format!("pruned branches carry mass {total:e}")));
    }
    Ok(())
}

/// Exact `Q^(n)_{ρ0;ω}` by walking the outcome tree.
pub fn enumerate_distribution(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    rho0: &DensityMatrix,
    depth: usize,
    budget: u128,
) -> Result<OutcomeDistribution> {
    check_state(ensemble, rho0)?;
    check_budget(ensemble, depth, budget)?;
    let sets = ensemble.schedule(omega, depth)?;
    let mut branches = Vec::new();
    let pruned = walk_tree(&sets, rho0, &mut |node| {
        if node.depth == depth {
            branches.push(Branch {
                word: OutcomeWord::new(node.word.to_vec()),
                probability: node.probability,
                state: node.state.clone(),
            });
        }
    });
    check_pruned(&pruned)?;
    // DFS order over outcome indices is already lexicographic.
    Ok(OutcomeDistribution { depth, branches, pruned_mass: pruned.iter().sum() })
}

/// How expectations over the outcome tree are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentOptions {
    /// Enumerate exactly when `|A|^n` is at most this.
    pub branch_budget: u128,
    /// Trajectories per point when falling back to Monte Carlo.
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self { branch_budget: DEFAULT_BRANCH_BUDGET, mc_samples: 10_000, mc_seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub n: usize,
    pub value: f64,
    /// Zero for exact values.
    pub stderr: f64,
    pub exact: bool,
}

/// `E_{Q_{ρ0;ω}}[M^(m,n)]` (with `m = 2` this is `Φ^(n)_ω(ρ0)`).
pub fn expected_moment(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    rho0: &DensityMatrix,
    m: u32,
    n: usize,
    options: &MomentOptions,
) -> Result<MomentEstimate> {
    Ok(*moment_curve(ensemble, omega, rho0, m, n, options)?.last().expect("curve has n + 1 entries"))
}

/// `E[M^(m,k)]` for every `k = 0..=n_max`, exact when the tree at `n_max`
/// fits the budget and by Monte Carlo otherwise.
pub fn moment_curve(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    rho0: &DensityMatrix,
    m: u32,
    n_max: usize,
    options: &MomentOptions,
) -> Result<Vec<MomentEstimate>> {
    check_state(ensemble, rho0)?;
    let sets = ensemble.schedule(omega, n_max)?;
    if check_budget(ensemble, n_max, options.branch_budget).is_ok() {
        let mut sums = vec![CompensatedSum::default(); n_max + 1];
        let pruned = walk_tree(&sets, rho0, &mut |node| {
            sums[node.depth].add(node.probability * purity_moment(node.state, m));
        });
        check_pruned(&pruned)?;
        return Ok(sums
            .iter()
            .enumerate()
            .map(|(n, s)| MomentEstimate { n, value: s.value(), stderr: 0.0, exact: true })
            .collect());
    }
    let seed = mix64(options.mc_seed, omega.master_seed() as i64);
    let paths = sample_moment_paths(&sets, rho0, m, options.mc_samples, seed)?;
    Ok((0..=n_max)
        .map(|n| {
            let column: Vec<f64> = paths.iter().map(|p| p[n]).collect();
            let est = mean_estimate(&column);
            MomentEstimate { n, value: est.mean, stderr: est.stderr, exact: false }
        })
        .collect())
}

/// `M^(m,k)` along `count` independent sampled paths; path `j` uses
/// `substream(seed, j)` so the result does not depend on the thread count.
pub fn sample_moment_paths(
    sets: &[KrausSet],
    rho0: &DensityMatrix,
    m: u32,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, j as u64);
            let (_, states, _) = sample_path(sets, rho0, &mut rng)?;
            Ok(states.iter().map(|s| purity_moment(s, m)).collect())
        })
        .collect()
}

/// `Σ_a tr(V_aρV_a†)·tr((V_a·ρ)^m) − tr(ρ^m)`; non-negative for complete
/// Kraus sets (the one-step submartingale inequality).
pub fn submartingale_gap(set: &KrausSet, rho: &DensityMatrix, m: u32) -> Result<f64> {
    let before = purity_moment(rho, m);
    let mut after = CompensatedSum::default();
    for v in set.operators() {
        let (post, p) = apply_measurement(v, rho)?;
        after.add(p * purity_moment(&post, m));
    }
    Ok(after.value() - before)
}

/// `δ^(m)(ρ) = Σ_a tr(V_aρV_a†)·(tr((V_a·ρ)^m) − tr(ρ^m))²`.
pub fn delta_m(set: &KrausSet, rho: &DensityMatrix, m: u32) -> Result<f64> {
    let before = purity_moment(rho, m);
    let mut acc = CompensatedSum::default();
    for v in set.operators() {
        let (post, p) = apply_measurement(v, rho)?;
        if p > 0.0 {
            acc.add(p * (purity_moment(&post, m) - before).powi(2));
        }
    }
    Ok(acc.value().max(0.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct IncrementSeries {
    /// `E[δ^(m)_{θ^{n+1}ω}(ρ^(n))]` for `n = 0..n_max`.
    pub terms: Vec<f64>,
    /// Running sums of `terms`; bounded by 1.
    pub partial_sums: Vec<f64>,
}

/// Expected conditional squared increments of `M^(m,·)` and their partial
/// sums, by exact enumeration to depth `n_max - 1`.
pub fn increment_sum(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    rho0: &DensityMatrix,
    m: u32,
    n_max: usize,
    budget: u128,
) -> Result<IncrementSeries> {
    check_state(ensemble, rho0)?;
    if n_max == 0 {
        return Ok(IncrementSeries { terms: vec![], partial_sums: vec![] });
    }
    check_budget(ensemble, n_max - 1, budget)?;
    let sets = ensemble.schedule(omega, n_max)?;
    let mut sums = vec![CompensatedSum::default(); n_max];
    let mut failure = None;
    let pruned = walk_tree(&sets[..n_max - 1], rho0, &mut |node| match delta_m(&sets[node.depth], node.state, m) {
        Ok(delta) => sums[node.depth].add(node.probability * delta),
        Err(e) => failure = Some(e),
    });
    if let Some(e) = failure {
        return Err(e);
    }
    check_pruned(&pruned)?;
    let terms: Vec<f64> = sums.iter().map(CompensatedSum::value).collect();
    let mut acc = CompensatedSum::default();
    let partial_sums = terms
        .iter()
        .map(|&t| {
            acc.add(t);
            acc.value()
        })
        .collect();
    Ok(IncrementSeries { terms, partial_sums })
}

/// Choice of initial state for a purification run.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialPolicy {
    MaximallyMixed,
    Literal(DensityMatrix),
    /// Haar-random pure state drawn from `mix64(seed, ω seed)`.
    RandomPure {
        seed: u64,
    },
    /// Hilbert–Schmidt random mixed state drawn from `mix64(seed, ω seed)`.
    RandomMixed {
        seed: u64,
    },
    /// Half the rank-2 dark certificate of the shifted-columns example.
    DarkCertificateHalf,
}

impl InitialPolicy {
    pub fn resolve(&self, ensemble: &DisorderedEnsemble, omega: &DisorderPoint) -> Result<DensityMatrix> {
        let d = ensemble.dim();
        let rho = match self {
            Self::MaximallyMixed => DensityMatrix::maximally_mixed(d),
            Self::Literal(rho) => rho.clone(),
            Self::RandomPure { seed } => random_pure_state(d, &mut stream(mix64(*seed, omega.master_seed() as i64))),
            Self::RandomMixed { seed } => random_mixed_state(d, &mut stream(mix64(*seed, omega.master_seed() as i64))),
            Self::DarkCertificateHalf => {
                let frame = crate::darkness::example2_certificate(ensemble, omega)?;
                DensityMatrix::normalized_projection(&frame.projection())
            }
        };
        check_state(ensemble, &rho)?;
        Ok(rho)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DepthSummary {
    pub n: usize,
    /// Trajectory mean of `M^(2,n)`.
    pub mean_m2: f64,
    pub stderr: f64,
    pub median_m2: f64,
    /// Fraction of trajectories with `M^(2,n) ≥ 1 − 1e-8`.
    pub frac_pure: f64,
    /// Exact `Φ^(n)` when the outcome tree fits the budget.
    pub phi_exact: Option<f64>,
    /// Exact `Σ_{k<n} E[δ^(2)_{θ^{k+1}ω}(ρ^(k))]` when the tree fits.
    pub increment_partial_sum: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OmegaSummary {
    pub ensemble: String,
    pub omega_seed: u64,
    pub n_steps: usize,
    pub n_traj: usize,
    pub initial_m2: f64,
    pub curve: Vec<DepthSummary>,
    pub final_mean_m2: f64,
    pub final_median_m2: f64,
    pub final_frac_pure: f64,
    /// `1 − Φ^(n_steps)` (exact when available, else the trajectory mean):
    /// how far the expected second moment still is from purity.
    pub tail_bound: f64,
    /// Exact `Σ_{n<n_steps} E[δ^(2)]` when the tree fits the budget.
    pub increment_sum: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PurificationConfig {
    pub initial: InitialPolicy,
    pub n_steps: usize,
    pub n_traj: usize,
    pub branch_budget: u128,
    pub seed: u64,
}

/// Per-point purification summary from sampled trajectories, with exact
/// `Φ^(n)` and increment sums when the outcome tree is small enough.
pub fn purification_report(
    ensemble: &DisorderedEnsemble,
    omega_seeds: &[u64],
    config: &PurificationConfig,
) -> Result<Vec<OmegaSummary>> {
    omega_seeds.iter().map(|&seed| summarize_point(ensemble, seed, config)).collect()
}

fn summarize_point(ensemble: &DisorderedEnsemble, seed: u64, config: &PurificationConfig) -> Result<OmegaSummary> {
    let omega = ensemble.sample_point(seed);
    let rho0 = config.initial.resolve(ensemble, &omega)?;
    let n = config.n_steps;
    let sets = ensemble.schedule(&omega, n)?;
    let paths = sample_moment_paths(&sets, &rho0, 2, config.n_traj, mix64(config.seed, seed as i64))?;

    let exact = check_budget(ensemble, n, config.branch_budget).is_ok();
    let phi: Option<Vec<f64>> = if exact {
        let options = MomentOptions { branch_budget: config.branch_budget, ..MomentOptions::default() };
        Some(moment_curve(ensemble, &omega, &rho0, 2, n, &options)?.iter().map(|e| e.value).collect())
    } else {
        None
    };
    let increments: Option<Vec<f64>> = if exact {
        let mut sums = vec![0.0];
        sums.extend(increment_sum(ensemble, &omega, &rho0, 2, n, config.branch_budget)?.partial_sums);
        Some(sums)
    } else {
        None
    };

    let curve: Vec<DepthSummary> = (0..=n)
        .map(|k| {
            let column: Vec<f64> = paths.iter().map(|p| p[k]).collect();
            let est = mean_estimate(&column);
            let pure = column.iter().filter(|&&x| x >= 1.0 - PURE_TOL).count();
            DepthSummary {
                n: k,
                mean_m2: est.mean,
                stderr: est.stderr,
                median_m2: median(&column),
                frac_pure: if column.is_empty() { f64::NAN } else { pure as f64 / column.len() as f64 },
                phi_exact: phi.as_ref().map(|p| p[k]),
                increment_partial_sum: increments.as_ref().map(|s| s[k]),
            }
        })
        .collect();
    let last = *curve.last().expect("n + 1 entries");
    let phi_last = last.phi_exact.unwrap_or(last.mean_m2);
    Ok(OmegaSummary {
        ensemble: ensemble.name().to_string(),
        omega_seed: seed,
        n_steps: n,
        n_traj: config.n_traj,
        initial_m2: purity_moment(&rho0, 2),
        final_mean_m2: last.mean_m2,
        final_median_m2: last.median_m2,
        final_frac_pure: last.frac_pure,
        tail_bound: 1.0 - phi_last,
        increment_sum: increments.as_ref().map(|s| s[n]),
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::shift;
    use crate::random::{random_kraus_set, random_mixed_state, random_pure_state};
    use crate::state::trace_distance;

    fn projective() -> DisorderedEnsemble {
        DisorderedEnsemble::fixed(
            "projective",
            KrausSet::new(vec![ComplexMatrix::diag(&[1.0, 0.0]), ComplexMatrix::diag(&[0.0, 1.0])]).unwrap(),
        )
    }

    fn single_unitary(d: usize, seed: u64) -> DisorderedEnsemble {
        let u = crate::random::haar_unitary(d, &mut stream(seed));
        DisorderedEnsemble::fixed("unitary", KrausSet::new(vec![u]).unwrap())
    }

    #[test]
    fn unitary_trajectory_keeps_purity() {
        let e = single_unitary(3, 1);
        let omega = e.sample_point(0);
        let rho0 = random_mixed_state(3, &mut stream(2));
        let rec = sample_trajectory(&e, &omega, &rho0, 25, &mut stream(3)).unwrap();
        let m2 = rec.moments(2);
        assert!(rec.outcomes.labels().iter().all(|&a| a == 0));
        assert!(m2.iter().all(|x| (x - m2[0]).abs() < 1e-10));
    }

    #[test]
    fn example1_is_pure_after_outcome_b() {
        let e = DisorderedEnsemble::example1();
        let rho0 = DensityMatrix::maximally_mixed(3);
        for seed in 0..30 {
            let omega = e.sample_point(seed);
            let rec = sample_trajectory(&e, &omega, &rho0, 15, &mut stream(100 + seed)).unwrap();
            if let Some(first_b) = rec.outcomes.labels().iter().position(|&a| a == 1) {
                for state in &rec.states[first_b + 1..] {
                    assert!(purity_moment(state, 2) > 1.0 - 1e-10);
                }
            }
        }
    }

    #[test]
    fn records_rederive_from_outcomes() {
        let e = DisorderedEnsemble::example3();
        let omega = e.sample_point(4);
        let rho0 = DensityMatrix::maximally_mixed(4);
        let rec = sample_trajectory(&e, &omega, &rho0, 10, &mut stream(8)).unwrap();
        let sets = e.schedule(&omega, 10).unwrap();
        let mut rho = rho0.clone();
        for (k, &a) in rec.outcomes.labels().iter().enumerate() {
            let (next, p) = apply_measurement(sets[k].operator(a), &rho).unwrap();
            assert!(p > ZERO_PROBABILITY);
            assert!((p - rec.step_probs[k]).abs() < 1e-15);
            rho = next;
            assert!(rho.matrix().max_abs_diff(rec.states[k + 1].matrix()) < 1e-15);
        }
    }

    #[test]
    fn sampled_projective_lock_in_matches_enumeration() {
        let e = projective();
        let omega = e.sample_point(0);
        let rho0 = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
        let dist = enumerate_distribution(&e, &omega, &rho0, 2, DEFAULT_BRANCH_BUDGET).unwrap();
        let p_zero = dist.probability(&OutcomeWord::new(vec![0, 0]));
        assert!((p_zero - 0.3).abs() < 1e-15);

        let runs = 10_000;
        let sets = e.schedule(&omega, 5).unwrap();
        let mut all_zero = 0;
        for j in 0..runs {
            let (word, _, _) = sample_path(&sets, &rho0, &mut substream(77, j)).unwrap();
            let first = word.labels()[0];
            assert!(word.labels().iter().all(|&a| a == first));
            if first == 0 {
                all_zero += 1;
            }
        }
        let se = (0.3f64 * 0.7 / runs as f64).sqrt();
        assert!((all_zero as f64 / runs as f64 - 0.3).abs() < 3.0 * se);
    }

    #[test]
    fn enumerate_examples() {
        let e = projective();
        let omega = e.sample_point(0);
        let rho0 = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
        let d0 = enumerate_distribution(&e, &omega, &rho0, 0, DEFAULT_BRANCH_BUDGET).unwrap();
        assert_eq!(d0.branches.len(), 1);
        assert_eq!(d0.branches[0].probability, 1.0);
        assert_eq!(d0.branches[0].state, rho0);

        let d2 = enumerate_distribution(&e, &omega, &rho0, 2, DEFAULT_BRANCH_BUDGET).unwrap();
        assert!((d2.probability(&OutcomeWord::new(vec![0, 0])) - 0.3).abs() < 1e-15);
        assert!((d2.probability(&OutcomeWord::new(vec![1, 1])) - 0.7).abs() < 1e-15);
        assert_eq!(d2.probability(&OutcomeWord::new(vec![0, 1])), 0.0);
        assert_eq!(d2.probability(&OutcomeWord::new(vec![1, 0])), 0.0);

        let e1 = DisorderedEnsemble::example1();
        let d3 =
            enumerate_distribution(&e1, &e1.sample_point(5), &DensityMatrix::maximally_mixed(3), 3, 1 << 20).unwrap();
        assert!((d3.total_probability() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn enumerate_budget_error_reports_requirement() {
        let e = DisorderedEnsemble::example1();
        let err =
            enumerate_distribution(&e, &e.sample_point(0), &DensityMatrix::maximally_mixed(3), 12, 1000).unwrap_err();
        assert!(matches!(err, Error::Budget { required: 4096, budget: 1000, .. }));
    }

    #[test]
    fn branch_probabilities_match_word_operators() {
        let e = DisorderedEnsemble::example2();
        let omega = e.sample_point(12);
        let rho0 = random_mixed_state(3, &mut stream(6));
        let dist = enumerate_distribution(&e, &omega, &rho0, 4, DEFAULT_BRANCH_BUDGET).unwrap();
        for b in &dist.branches {
            let v = e.word_operator(&omega, &b.word).unwrap();
            let p = rho0.matrix().conjugate_by(&v).trace().re;
            assert!((p - b.probability).abs() < 1e-13);
        }
    }

    #[test]
    fn marginals_are_consistent() {
        let e = DisorderedEnsemble::example3();
        let omega = e.sample_point(3);
        let rho0 = random_mixed_state(4, &mut stream(1));
        for n in 0..5 {
            let shallow = enumerate_distribution(&e, &omega, &rho0, n, DEFAULT_BRANCH_BUDGET).unwrap();
            let deep = enumerate_distribution(&e, &omega, &rho0, n + 1, DEFAULT_BRANCH_BUDGET).unwrap();
            for b in &shallow.branches {
                let marginal: f64 = (0..e.alphabet_size()).map(|a| deep.probability(&b.word.extended(a))).sum();
                assert!((marginal - b.probability).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn expected_moment_examples() {
        let e = single_unitary(3, 9);
        let rho0 = random_mixed_state(3, &mut stream(10));
        let omega = e.sample_point(0);
        for m in [2, 3] {
            let curve = moment_curve(&e, &omega, &rho0, m, 6, &MomentOptions::default()).unwrap();
            for est in &curve {
                assert!((est.value - purity_moment(&rho0, m)).abs() < 1e-10);
            }
        }
        let e1 = DisorderedEnsemble::example1();
        let omega = e1.sample_point(2);
        let zero = expected_moment(&e1, &omega, &rho0, 2, 0, &MomentOptions::default()).unwrap();
        assert_eq!(zero.value, purity_moment(&rho0, 2));
        assert!(zero.exact);
    }

    #[test]
    fn dark_certificate_keeps_moment_at_half() {
        let e = DisorderedEnsemble::example2();
        for seed in 0..5 {
            let omega = e.sample_point(seed);
            let rho0 = InitialPolicy::DarkCertificateHalf.resolve(&e, &omega).unwrap();
            let curve = moment_curve(&e, &omega, &rho0, 2, 8, &MomentOptions::default()).unwrap();
            for est in curve {
                assert!((est.value - 0.5).abs() < 1e-9, "n = {}: {}", est.n, est.value);
            }
            let inc = increment_sum(&e, &omega, &rho0, 2, 8, DEFAULT_BRANCH_BUDGET).unwrap();
            assert!(inc.partial_sums.last().unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn monte_carlo_fallback_agrees_with_enumeration() {
        let e = DisorderedEnsemble::example3();
        let omega = e.sample_point(21);
        let rho0 = DensityMatrix::maximally_mixed(4);
        let exact = expected_moment(&e, &omega, &rho0, 2, 6, &MomentOptions::default()).unwrap();
        let mc_options = MomentOptions { branch_budget: 8, mc_samples: 20_000, mc_seed: 5 };
        let mc = expected_moment(&e, &omega, &rho0, 2, 6, &mc_options).unwrap();
        assert!(!mc.exact && mc.stderr > 0.0);
        assert!((mc.value - exact.value).abs() < 4.0 * mc.stderr);
    }

    #[test]
    fn monotone_in_depth() {
        for e in [DisorderedEnsemble::example1(), DisorderedEnsemble::example3()] {
            let omega = e.sample_point(13);
            let rho0 = random_mixed_state(e.dim(), &mut stream(4));
            for m in [2, 3] {
                let curve = moment_curve(&e, &omega, &rho0, m, 8, &MomentOptions::default()).unwrap();
                for w in curve.windows(2) {
                    assert!(w[1].value >= w[0].value - 1e-10);
                }
            }
        }
    }

    #[test]
    fn gap_examples() {
        let mut rng = stream(12);
        let set = random_kraus_set(3, 3, &mut rng);
        let rho = random_mixed_state(3, &mut rng);
        assert!(submartingale_gap(&set, &rho, 1).unwrap().abs() < 1e-12);
        let u = KrausSet::new(vec![crate::random::haar_unitary(3, &mut rng)]).unwrap();
        for m in 1..5 {
            assert!(submartingale_gap(&u, &rho, m).unwrap().abs() < 1e-10);
            assert!(delta_m(&u, &rho, m).unwrap().abs() < 1e-12);
        }
        for _ in 0..500 {
            let set = random_kraus_set(3, 2 + rng.random_range(0..3usize), &mut rng);
            let rho = random_mixed_state(3, &mut rng);
            let m = rng.random_range(2..5u32);
            assert!(submartingale_gap(&set, &rho, m).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn delta_examples() {
        let set = KrausSet::new(vec![ComplexMatrix::diag(&[1.0, 0.0]), ComplexMatrix::diag(&[0.0, 1.0])]).unwrap();
        let rho = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
        // Both post-states pure; (1 − 0.58)² with total weight 1.
        assert!((delta_m(&set, &rho, 2).unwrap() - 0.1764).abs() < 1e-14);
        let pure = DensityMatrix::diagonal(&[1.0, 0.0]).unwrap();
        assert!(delta_m(&set, &pure, 2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn increment_identity_on_every_branch() {
        let e = DisorderedEnsemble::example3();
        let omega = e.sample_point(8);
        let rho0 = random_mixed_state(4, &mut stream(3));
        for n in 0..4 {
            let dist = enumerate_distribution(&e, &omega, &rho0, n, DEFAULT_BRANCH_BUDGET).unwrap();
            let here = shift(&omega, n as i64);
            let next_set = e.realize(&shift(&omega, n as i64 + 1)).unwrap();
            for b in &dist.branches {
                let delta = delta_m(&next_set, &b.state, 3).unwrap();
                let one_step = enumerate_distribution(&e, &here, &b.state, 1, 16).unwrap();
                let m_now = purity_moment(&b.state, 3);
                let conditional = one_step.expectation(|s| (purity_moment(s, 3) - m_now).powi(2));
                assert!((delta - conditional).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn increment_sums_are_bounded_and_nondecreasing() {
        let e = DisorderedEnsemble::example1();
        let omega = e.sample_point(1);
        let inc = increment_sum(&e, &omega, &DensityMatrix::maximally_mixed(3), 2, 8, DEFAULT_BRANCH_BUDGET).unwrap();
        assert_eq!(inc.partial_sums.len(), 8);
        for w in inc.partial_sums.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(*inc.partial_sums.last().unwrap() <= 1.0 + 1e-9);
        let u = single_unitary(2, 3);
        let inc = increment_sum(&u, &u.sample_point(0), &DensityMatrix::maximally_mixed(2), 2, 5, 1 << 20).unwrap();
        assert!(inc.partial_sums.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn lipschitz_bound_small_sample() {
        let e = DisorderedEnsemble::example1();
        let omega = e.sample_point(2);
        let mut rng = stream(19);
        for _ in 0..20 {
            let a = random_mixed_state(3, &mut rng);
            let b = random_pure_state(3, &mut rng);
            let fa = expected_moment(&e, &omega, &a, 2, 5, &MomentOptions::default()).unwrap().value;
            let fb = expected_moment(&e, &omega, &b, 2, 5, &MomentOptions::default()).unwrap().value;
            assert!((fa - fb).abs() <= 5.0 * trace_distance(&a, &b) + 1e-9);
        }
    }

    #[test]
    fn report_examples() {
        let config = PurificationConfig {
            initial: InitialPolicy::DarkCertificateHalf,
            n_steps: 10,
            n_traj: 200,
            branch_budget: DEFAULT_BRANCH_BUDGET,
            seed: 1,
        };
        let e2 = DisorderedEnsemble::example2();
        for summary in purification_report(&e2, &[1, 2, 3], &config).unwrap() {
            assert!(summary.curve.iter().all(|d| d.frac_pure == 0.0));
            assert!(summary.curve.iter().all(|d| (d.phi_exact.unwrap() - 0.5).abs() < 1e-9));
        }
        let u = single_unitary(2, 5);
        let mixed = PurificationConfig { initial: InitialPolicy::MaximallyMixed, ..config.clone() };
        for summary in purification_report(&u, &[0], &mixed).unwrap() {
            assert_eq!(summary.final_frac_pure, 0.0);
        }
        // The certificate only exists for the shifted-columns example.
        assert!(purification_report(&DisorderedEnsemble::example1(), &[0], &config).is_err());
    }

    #[test]
    fn report_is_reproducible_across_thread_counts() {
        let e = DisorderedEnsemble::example3();
        let config = PurificationConfig {
            initial: InitialPolicy::MaximallyMixed,
            n_steps: 12,
            n_traj: 300,
            branch_budget: 64,
            seed: 9,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| purification_report(&e, &[4, 5], &config).unwrap())
        };
        let one = serde_json_like(&run(1));
        let four = serde_json_like(&run(4));
        assert_eq!(one, four);
    }

    fn serde_json_like(summaries: &[OmegaSummary]) -> Vec<u64> {
        summaries.iter().flat_map(|s| s.curve.iter().map(|d| d.mean_m2.to_bits())).collect()
    }
}
