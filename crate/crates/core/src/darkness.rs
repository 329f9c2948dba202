//! Gray and dark projections.
//!
//! A rank-`r` projection `p` is `N`-gray at `ω` when `p W_ā p = λ_ā p` for
//! every word of length `N`, where `W_ā = V^(N)†_{ā;ω} V^(N)_{ā;ω}`; it is
//! dark when this holds for every `N`. Projections are parametrized by
//! orthonormal frames `F` (`p = F F†`), and the defect
//!
//! ```text
//! D_N(F) = Σ_ā ‖F†W_āF − λ_ā I‖²_F,   λ_ā = tr(F†W_āF)/r
//! ```
//!
//! vanishes exactly on gray frames. The search minimizes it over the Stiefel
//! manifold from random starts; not finding a zero is evidence, not proof,
//! that no gray projection exists.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::disorder::DisorderPoint;
use crate::ensemble::{all_words, word_product, DisorderedEnsemble, Generator, OutcomeWord};
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::random::{haar_isometry, mix64, substream};
use crate::state::{Projection, STATE_TOL};
use crate::stats::{compensated_sum, wilson_interval};

pub const DEFAULT_WORD_BUDGET: u128 = 1 << 16;
pub const FOUND_THRESHOLD: f64 = 1e-12;
pub const EVIDENCE_THRESHOLD: f64 = 1e-6;

/// Label attached to every emptiness estimate.
pub const HEURISTIC_LABEL: &str = "heuristic - restarts-based, no emptiness certificate";

/// A d×r matrix with orthonormal columns, standing for `p = F F†`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frame {
    columns: ComplexMatrix,
}

impl Frame {
    /// Requires `F†F = I` within 1e-10 and `r ≥ 2` unless `r = d`.
    pub fn new(columns: ComplexMatrix) -> Result<Self> {
        let (d, r) = (columns.rows(), columns.cols());
        if r == 0 || r > d {
            return Err(Error::Structural(format!("frame of rank {r} in dimension {d}")));
        }
        if r == 1 && d > 1 {
            return Err(Error::Structural("rank-1 frames are excluded (every rank-1 projection is dark)".into()));
        }
        if !columns.is_finite() {
            return Err(Error::InvalidState("frame has non-finite entries".into()));
        }
        let defect = columns.isometry_defect();
        if defect > STATE_TOL {
            return Err(Error::InvalidState(format!("frame columns are not orthonormal (deviation {defect:e})")));
        }
        Ok(Self { columns })
    }

    pub(crate) fn from_trusted(columns: ComplexMatrix) -> Self {
        Self { columns }
    }

    pub fn columns(&self) -> &ComplexMatrix {
        &self.columns
    }

    pub fn dim(&self) -> usize {
        self.columns.rows()
    }

    pub fn rank(&self) -> usize {
        self.columns.cols()
    }

    pub fn projection(&self) -> Projection {
        Projection::from_orthonormal_columns(&self.columns).expect("frame columns are orthonormal")
    }

    /// `F U` for an r×r unitary `U`; describes the same projection.
    pub fn regauged(&self, u: &ComplexMatrix) -> Result<Self> {
        Self::new(&self.columns * u)
    }
}

/// The operators `W_ā` for every word of length `N` at a fixed point.
#[derive(Clone, Debug)]
pub struct WordGrams {
    depth: usize,
    words: Vec<OutcomeWord>,
    grams: Vec<ComplexMatrix>,
}

impl WordGrams {
    pub fn new(ensemble: &DisorderedEnsemble, omega: &DisorderPoint, depth: usize, budget: u128) -> Result<Self> {
        let required = (ensemble.alphabet_size() as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
        if required > budget {
            return Err(Error::Budget {
                what: format!("words of length {depth} over the alphabet of `{}`", ensemble.name()),
                required,
                budget,
            });
        }
        let sets = ensemble.schedule(omega, depth)?;
        let words: Vec<OutcomeWord> = all_words(ensemble.alphabet_size(), depth).collect();
        let grams = words
            .iter()
            .map(|w| {
                let v = word_product(&sets, w);
                (&v.dagger() * &v).hermitian_part()
            })
            .collect();
        Ok(Self { depth, words, grams })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn words(&self) -> &[OutcomeWord] {
        &self.words
    }

    pub fn grams(&self) -> &[ComplexMatrix] {
        &self.grams
    }

    /// `λ_ā = tr(F†W_āF)/r` for every word.
    pub fn lambdas(&self, frame: &ComplexMatrix) -> Vec<f64> {
        let r = frame.cols() as f64;
        self.grams.iter().map(|w| w.conjugate_by(&frame.dagger()).trace().re / r).collect()
    }

    /// `D_N` at an arbitrary d×r matrix (the formula does not need
    /// orthonormal columns, which the finite-difference checks rely on).
    pub fn defect(&self, frame: &ComplexMatrix) -> f64 {
        compensated_sum(self.grams.iter().map(|w| centred_block(w, frame).1.frobenius_norm_sq()))
    }

    /// `D_N` and its Euclidean gradient `4 Σ_ā W_ā F C_ā`, where
    /// `C_ā = F†W_āF − λ_ā I`, for the pairing `Re tr(G†X)`.
    pub fn defect_and_euclidean_gradient(&self, frame: &ComplexMatrix) -> (f64, ComplexMatrix) {
        let mut gradient = ComplexMatrix::zeros(frame.rows(), frame.cols());
        let mut terms = Vec::with_capacity(self.grams.len());
        for w in &self.grams {
            let (wf, c) = centred_block(w, frame);
            terms.push(c.frobenius_norm_sq());
            gradient = &gradient + &(&wf * &c);
        }
        (compensated_sum(terms), gradient.scale(4.0))
    }

    /// `D_N` and its Riemannian gradient `G − F·herm(F†G)` on the Stiefel
    /// manifold.
    pub fn defect_and_gradient(&self, frame: &ComplexMatrix) -> (f64, ComplexMatrix) {
        let (value, euclidean) = self.defect_and_euclidean_gradient(frame);
        (value, project_tangent(frame, &euclidean))
    }
}

/// `(W F, F†W F − tr(F†W F)/r · I)`.
fn centred_block(w: &ComplexMatrix, frame: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let wf = w * frame;
    let mut b = (&frame.dagger() * &wf).hermitian_part();
    let r = frame.cols();
    let lambda = b.trace().re / r as f64;
    for k in 0..r {
        let diag = b.get(k, k);
        b.set(k, k, diag - lambda);
    }
    (wf, b)
}

/// Projects `G` onto the tangent space of the Stiefel manifold at `F`.
pub fn project_tangent(frame: &ComplexMatrix, g: &ComplexMatrix) -> ComplexMatrix {
    let sym = (&frame.dagger() * g).hermitian_part();
    g - &(frame * &sym)
}

/// QR retraction: the orthonormal factor of `F` with positive `diag(R)`.
pub fn retract(point: &ComplexMatrix) -> ComplexMatrix {
    point.qr_positive().0
}

pub fn defect(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    frame: &Frame,
    depth: usize,
    budget: u128,
) -> Result<f64> {
    check_frame(ensemble, frame)?;
    Ok(WordGrams::new(ensemble, omega, depth, budget)?.defect(frame.columns()))
}

/// Riemannian gradient of the defect at `frame`.
pub fn defect_gradient(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    frame: &Frame,
    depth: usize,
    budget: u128,
) -> Result<ComplexMatrix> {
    check_frame(ensemble, frame)?;
    Ok(WordGrams::new(ensemble, omega, depth, budget)?.defect_and_gradient(frame.columns()).1)
}

fn check_frame(ensemble: &DisorderedEnsemble, frame: &Frame) -> Result<()> {
    if frame.dim() != ensemble.dim() {
        return Err(Error::Structural(format!(
            "frame has dimension {}, ensemble `{}` has {}",
            frame.dim(),
            ensemble.name(),
            ensemble.dim()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Riemannian gradient norm below which a restart has converged.
    pub tol: f64,
    pub found_threshold: f64,
    pub evidence_threshold: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub word_budget: u128,
    /// Skip the remaining restarts once one finds a gray frame.
    pub stop_on_found: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iters: 2000,
            tol: 1e-9,
            found_threshold: FOUND_THRESHOLD,
            evidence_threshold: EVIDENCE_THRESHOLD,
            armijo: 1e-4,
            word_budget: DEFAULT_WORD_BUDGET,
            stop_on_found: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DefectReport {
    pub ensemble: String,
    pub omega_seed: u64,
    pub omega_position: i64,
    #[serde(rename = "N")]
    pub depth: usize,
    pub r: usize,
    pub min_defect: f64,
    pub best_frame: Frame,
    pub restarts_run: usize,
    pub converged_restarts: usize,
    pub per_restart_defects: Vec<f64>,
    pub found_gray: bool,
    pub note: &'static str,
}

/// One minimization run.
#[derive(Clone, Debug)]
pub struct RestartOutcome {
    pub frame: ComplexMatrix,
    pub defect: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent with QR retraction from `start`, using a
/// Barzilai–Borwein trial step and Armijo backtracking.
pub fn minimize_from(grams: &WordGrams, start: ComplexMatrix, config: &SearchConfig) -> Result<RestartOutcome> {
    let dim = grams.grams.first().map_or(0, |g| g.rows());
    if start.rows() != dim || start.cols() == 0 || start.cols() > dim {
        return Err(Error::Structural(format!(
            "starting frame is {}x{}, expected {dim} rows and 1..={dim} columns",
            start.rows(),
            start.cols()
        )));
    }
    let mut frame = start;
    let (mut value, mut grad) = grams.defect_and_gradient(&frame);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        if !value.is_finite() {
            return Err(Error::Internal("defect became non-finite during the search".into()));
        }
        let gnorm_sq = grad.frobenius_norm_sq();
        if value < config.found_threshold || gnorm_sq.sqrt() < config.tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iters {
            break;
        }
        iterations += 1;
        let mut t = step;
        let accepted = loop {
            let trial = retract(&(&frame - &grad.scale(t)));
            let trial_value = grams.defect(&trial);
            if trial_value <= value - config.armijo * t * gnorm_sq {
                break Some((trial, trial_value));
            }
            t *= 0.5;
            if t < 1e-16 {
                break None;
            }
        };
        let Some((next, next_value)) = accepted else {
            // No decrease is available at working precision.
            break;
        };
        let (_, next_grad) = grams.defect_and_gradient(&next);
        let s = &next - &frame;
        let y = &next_grad - &grad;
        let sy = s.real_inner(&y);
        step = if sy > 0.0 { (s.frobenius_norm_sq() / sy).clamp(1e-8, 1e4) } else { (2.0 * t).min(1e4) };
        frame = next;
        value = next_value;
        grad = next_grad;
    }
    Ok(RestartOutcome { gradient_norm: grad.frobenius_norm(), frame, defect: value, iterations, converged })
}

/// Restart-based search for an `N`-gray projection of rank `r` at `ω`.
pub fn search_gray(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    depth: usize,
    rank: usize,
    config: &SearchConfig,
) -> Result<DefectReport> {
    let d = ensemble.dim();
    if rank > d || (rank < 2 && d > 1) || rank == 0 {
        return Err(Error::Structural(format!("search rank must satisfy 2 <= r <= d, got r = {rank}, d = {d}")));
    }
    if config.restarts == 0 {
        return Err(Error::Structural("search needs at least one restart".into()));
    }
    let grams = WordGrams::new(ensemble, omega, depth, config.word_budget)?;
    let base = mix64(mix64(config.seed, omega.master_seed() as i64), ((depth as i64) << 16) | rank as i64);
    let run = |j: usize| -> Result<RestartOutcome> {
        let mut rng = substream(base, j as u64);
        minimize_from(&grams, haar_isometry(d, rank, &mut rng), config)
    };
    let outcomes: Vec<RestartOutcome> = if config.stop_on_found {
        // Batches keep the cut-off point independent of the thread count.
        let batch = 8;
        let mut done = Vec::new();
        let mut next = 0;
        while next < config.restarts {
            let end = (next + batch).min(config.restarts);
            let chunk = (next..end).into_par_iter().map(run).collect::<Result<Vec<_>>>()?;
            done.extend(chunk);
            next = end;
            if done.iter().any(|o| o.defect < config.found_threshold) {
                break;
            }
        }
        done
    } else {
        (0..config.restarts).into_par_iter().map(run).collect::<Result<Vec<_>>>()?
    };
    let best = outcomes.iter().min_by(|a, b| a.defect.total_cmp(&b.defect)).expect("at least one restart");
    Ok(DefectReport {
        ensemble: ensemble.name().to_string(),
        omega_seed: omega.master_seed(),
        omega_position: omega.position(),
        depth,
        r: rank,
        min_defect: best.defect,
        best_frame: Frame::from_trusted(best.frame.clone()),
        restarts_run: outcomes.len(),
        converged_restarts: outcomes.iter().filter(|o| o.converged).count(),
        per_restart_defects: outcomes.iter().map(|o| o.defect).collect(),
        found_gray: best.defect < config.found_threshold,
        note: HEURISTIC_LABEL,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DarkCandidateReport {
    pub is_candidate: bool,
    pub n_max: usize,
    pub tol: f64,
    /// Defect at `N = 1..=n_max`.
    pub defects: Vec<f64>,
    /// `λ_ā` per word, for each `N`, words in lexicographic order.
    pub lambdas: Vec<Vec<f64>>,
    pub lambda_sums: Vec<f64>,
    /// Every `N + 1` at which the frame is gray is preceded by a gray `N`.
    pub nesting_ok: bool,
}

/// Checks a frame for grayness at every `N ≤ n_max`.
pub fn verify_dark_candidate(
    ensemble: &DisorderedEnsemble,
    omega: &DisorderPoint,
    frame: &Frame,
    n_max: usize,
    tol: f64,
    budget: u128,
) -> Result<DarkCandidateReport> {
    check_frame(ensemble, frame)?;
    let mut defects = Vec::with_capacity(n_max);
    let mut lambdas = Vec::with_capacity(n_max);
    for depth in 1..=n_max {
        let grams = WordGrams::new(ensemble, omega, depth, budget)?;
        defects.push(grams.defect(frame.columns()));
        lambdas.push(grams.lambdas(frame.columns()));
    }
    let lambda_sums = lambdas.iter().map(|l| compensated_sum(l.iter().copied())).collect();
    let nesting_ok = defects.windows(2).all(|w| w[1] >= FOUND_THRESHOLD || w[0] < 1e-10);
    Ok(DarkCandidateReport {
        is_candidate: defects.iter().all(|&x| x <= tol),
        n_max,
        tol,
        defects,
        lambdas,
        lambda_sums,
        nesting_ok,
    })
}

/// The exact dark frame of a shifted column-partition ensemble: the columns
/// of the site-1 unitary belonging to the first group with at least two
/// columns (columns 1 and 2 for the built-in example).
pub fn example2_certificate(ensemble: &DisorderedEnsemble, omega: &DisorderPoint) -> Result<Frame> {
    let Generator::ShiftedColumnPartition { groups } = ensemble.generator() else {
        return Err(Error::Structural(format!(
            "ensemble `{}` has no shifted column partition, so no built-in dark certificate",
            ensemble.name()
        )));
    };
    if omega.model() != ensemble.model() {
        return Err(Error::Structural(format!(
            "point from a {} model passed to ensemble `{}`",
            omega.model_id(),
            ensemble.name()
        )));
    }
    let group = groups
        .iter()
        .find(|g| g.len() >= 2)
        .ok_or_else(|| Error::Degenerate("every partition group has a single column".into()))?;
    let u1 = ensemble.site_unitary(omega, 1)?;
    Frame::new(u1.select_columns(group))
}

/// How far `V_next` restricted to `ran(V_prev)` is from a multiple of an
/// isometry: `‖Q†V_next†V_next Q − μ I‖_F` with `Q` an orthonormal basis of
/// the range and `μ` the least-squares constant. Returns `(deviation, μ)`.
pub fn isometry_proportionality(v_next: &ComplexMatrix, v_prev: &ComplexMatrix) -> Result<(f64, f64)> {
    if v_next.cols() != v_prev.rows() {
        return Err(Error::Structural(format!(
            "cannot compose {}x{} after {}x{}",
            v_next.rows(),
            v_next.cols(),
            v_prev.rows(),
            v_prev.cols()
        )));
    }
    let (values, vectors) = (v_prev * &v_prev.dagger()).hermitian_eigen();
    let top = values.iter().fold(0.0f64, |a, &b| a.max(b));
    if top <= 0.0 || !top.is_finite() {
        return Err(Error::Degenerate("V_prev has zero range".into()));
    }
    let cutoff = top * 1e-10;
    let basis: Vec<usize> = (0..values.len()).filter(|&k| values[k] > cutoff).collect();
    let q = vectors.select_columns(&basis);
    let gram = (&v_next.dagger() * v_next).conjugate_by(&q.dagger()).hermitian_part();
    let k = basis.len();
    let mu = gram.trace().re / k as f64;
    let deviation = (&gram - &ComplexMatrix::identity(k).scale(mu)).frobenius_norm();
    Ok((deviation, mu))
}

#[derive(Clone, Debug, Serialize)]
pub struct OmegaEvidence {
    pub omega_seed: u64,
    /// Smallest defect over all searched ranks.
    pub min_defect: f64,
    pub rank_of_min: usize,
    pub empty: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EmptinessEstimate {
    pub ensemble: String,
    #[serde(rename = "N")]
    pub depth: usize,
    pub ranks: Vec<usize>,
    pub n_omegas: usize,
    pub empty_count: usize,
    pub fraction: f64,
    /// 95% Wilson interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub per_omega: Vec<OmegaEvidence>,
    pub label: &'static str,
}

/// Fraction of sampled `ω` for which no rank in `ranks` yields a frame with
/// defect at or below the evidence threshold: a restart-based estimate of
/// `Pr[G^(N)_ω = ∅]`.
pub fn estimate_empty_probability(
    ensemble: &DisorderedEnsemble,
    depth: usize,
    ranks: &[usize],
    omega_seeds: &[u64],
    config: &SearchConfig,
) -> Result<EmptinessEstimate> {
    if ranks.is_empty() {
        return Err(Error::Structural("rank range is empty".into()));
    }
    let config = SearchConfig { stop_on_found: true, ..*config };
    let mut reports = Vec::with_capacity(omega_seeds.len());
    for &seed in omega_seeds {
        let omega = ensemble.sample_point(seed);
        let mut per_rank = Vec::new();
        for &r in ranks {
            let report = search_gray(ensemble, &omega, depth, r, &config)?;
            let done = report.min_defect <= config.evidence_threshold;
            per_rank.push(report);
            if done {
                break;
            }
        }
        reports.push(per_rank);
    }
    Ok(EmptinessEstimate::from_reports(ensemble.name(), depth, ranks, &reports, config.evidence_threshold))
}

impl EmptinessEstimate {
    /// Summarizes searches grouped by point (one inner list per `ω`, one
    /// report per searched rank).
    pub fn from_reports(
        ensemble: &str,
        depth: usize,
        ranks: &[usize],
        reports: &[Vec<DefectReport>],
        evidence_threshold: f64,
    ) -> Self {
        let per_omega: Vec<OmegaEvidence> = reports
            .iter()
            .filter_map(|per_rank| {
                let best = per_rank.iter().min_by(|a, b| a.min_defect.total_cmp(&b.min_defect))?;
                Some(OmegaEvidence {
                    omega_seed: best.omega_seed,
                    min_defect: best.min_defect,
                    rank_of_min: best.r,
                    empty: best.min_defect > evidence_threshold,
                })
            })
            .collect();
        let empty_count = per_omega.iter().filter(|o| o.empty).count();
        let n = per_omega.len();
        let (ci_low, ci_high) = wilson_interval(empty_count, n, 1.959_963_984_540_054);
        Self {
            ensemble: ensemble.to_string(),
            depth,
            ranks: ranks.to_vec(),
            n_omegas: n,
            empty_count,
            fraction: if n == 0 { f64::NAN } else { empty_count as f64 / n as f64 },
            ci_low,
            ci_high,
            per_omega,
            label: HEURISTIC_LABEL,
        }
    }
}

/// Random tangent vector at `frame`, used by gradient checks.
pub fn random_tangent<R: Rng + ?Sized>(frame: &ComplexMatrix, rng: &mut R) -> ComplexMatrix {
    let g = crate::random::ginibre(frame.rows(), frame.cols(), rng);
    project_tangent(frame, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{haar_isometry, haar_unitary, stream};
    use crate::state::KrausSet;

    fn unitary_ensemble(d: usize) -> DisorderedEnsemble {
        DisorderedEnsemble::fixed("unitary", KrausSet::new(vec![haar_unitary(d, &mut stream(41))]).unwrap())
    }

    fn random_frame(d: usize, r: usize, seed: u64) -> Frame {
        Frame::new(haar_isometry(d, r, &mut stream(seed))).unwrap()
    }

    #[test]
    fn frame_validation() {
        assert!(Frame::new(ComplexMatrix::identity(3).select_columns(&[0, 2])).is_ok());
        assert!(Frame::new(ComplexMatrix::identity(3).select_columns(&[0])).is_err());
        assert!(Frame::new(ComplexMatrix::identity(3).scale(2.0).select_columns(&[0, 1])).is_err());
        let f = random_frame(4, 2, 1);
        assert_eq!(f.projection().rank(), 2);
    }

    #[test]
    fn unitary_ensemble_is_gray_everywhere() {
        let e = unitary_ensemble(3);
        let omega = e.sample_point(0);
        for depth in 1..4 {
            let f = random_frame(3, 2, depth as u64);
            assert!(defect(&e, &omega, &f, depth, DEFAULT_WORD_BUDGET).unwrap() < 1e-12);
            let g = defect_gradient(&e, &omega, &f, depth, DEFAULT_WORD_BUDGET).unwrap();
            assert!(g.frobenius_norm() < 1e-10);
            let report =
                search_gray(&e, &omega, depth, 2, &SearchConfig { restarts: 3, ..Default::default() }).unwrap();
            assert!(report.found_gray);
        }
    }

    #[test]
    fn example2_certificate_is_dark_to_depth_four() {
        let e = DisorderedEnsemble::example2();
        for seed in 0..10 {
            let omega = e.sample_point(seed);
            let f = example2_certificate(&e, &omega).unwrap();
            assert!(f.columns().isometry_defect() < 1e-12);
            let report = verify_dark_candidate(&e, &omega, &f, 4, 1e-12, DEFAULT_WORD_BUDGET).unwrap();
            assert!(report.is_candidate, "{:?}", report.defects);
            assert!(report.nesting_ok);
            for (lambdas, sum) in report.lambdas.iter().zip(&report.lambda_sums) {
                assert!(lambdas.iter().all(|&l| (-1e-12..=1.0 + 1e-10).contains(&l)));
                assert!((sum - 1.0).abs() < 1e-9);
            }
            let g = defect_gradient(&e, &omega, &f, 2, DEFAULT_WORD_BUDGET).unwrap();
            assert!(g.frobenius_norm() < 1e-8);
        }
        assert!(matches!(
            example2_certificate(&DisorderedEnsemble::example1(), &DisorderedEnsemble::example1().sample_point(0)),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn identity_frame_on_projective_set_is_not_gray() {
        let set = KrausSet::new(vec![ComplexMatrix::diag(&[1.0, 0.0]), ComplexMatrix::diag(&[0.0, 1.0])]).unwrap();
        let e = DisorderedEnsemble::fixed("projective", set);
        let f = Frame::new(ComplexMatrix::identity(2)).unwrap();
        let report = verify_dark_candidate(&e, &e.sample_point(0), &f, 2, 1e-12, 1 << 10).unwrap();
        assert!(!report.is_candidate);
        // λ_ā = tr(W_ā)/d.
        assert_eq!(report.lambdas[0], vec![0.5, 0.5]);
    }

    #[test]
    fn random_frames_on_example3_have_macroscopic_defect() {
        let e = DisorderedEnsemble::example3();
        let mut smallest = f64::INFINITY;
        for seed in 0..200 {
            let omega = e.sample_point(seed);
            let f = random_frame(4, 2, 1000 + seed);
            smallest = smallest.min(defect(&e, &omega, &f, 2, DEFAULT_WORD_BUDGET).unwrap());
        }
        assert!(smallest > 1e-3, "smallest random-frame defect {smallest}");
    }

    #[test]
    fn defect_is_gauge_invariant() {
        let e = DisorderedEnsemble::example3();
        let omega = e.sample_point(6);
        let mut rng = stream(17);
        for _ in 0..20 {
            let f = random_frame(4, 2, rng.random());
            let g = f.regauged(&haar_unitary(2, &mut rng)).unwrap();
            let a = defect(&e, &omega, &f, 2, DEFAULT_WORD_BUDGET).unwrap();
            let b = defect(&e, &omega, &g, 2, DEFAULT_WORD_BUDGET).unwrap();
            assert!(a >= 0.0 && (a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-5;
        let mut rng = stream(23);
        for (e, d) in [(DisorderedEnsemble::example3(), 4), (DisorderedEnsemble::example1(), 3)] {
            for depth in 1..=2 {
                let omega = e.sample_point(rng.random());
                let grams = WordGrams::new(&e, &omega, depth, DEFAULT_WORD_BUDGET).unwrap();
                let f = haar_isometry(d, 2, &mut rng);
                let t = random_tangent(&f, &mut rng);
                let (_, g) = grams.defect_and_gradient(&f);
                let analytic = g.real_inner(&t);
                let numeric = (grams.defect(&(&f + &t.scale(h))) - grams.defect(&(&f - &t.scale(h)))) / (2.0 * h);
                let scale = analytic.abs().max(numeric.abs()).max(1e-12);
                assert!((analytic - numeric).abs() / scale < 1e-5, "{analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn search_finds_example2_certificate() {
        let e = DisorderedEnsemble::example2();
        for seed in [3, 8] {
            let omega = e.sample_point(seed);
            let report = search_gray(&e, &omega, 1, 2, &SearchConfig { seed: 1, ..Default::default() }).unwrap();
            assert!(report.found_gray, "min defect {}", report.min_defect);
            assert_eq!(report.per_restart_defects.len(), report.restarts_run);
            let cert = example2_certificate(&e, &omega).unwrap();
            // The defect grows like the fourth power of the angle to the
            // certificate, so a 1e-12 defect only pins the frame to ~1e-3.
            let p = report.best_frame.projection();
            assert!(p.matrix().max_abs_diff(cert.projection().matrix()) < 1e-2);
        }
    }

    #[test]
    fn search_is_reproducible() {
        let e = DisorderedEnsemble::example3();
        let omega = e.sample_point(2);
        let config = SearchConfig { restarts: 6, max_iters: 200, seed: 4, ..Default::default() };
        let a = search_gray(&e, &omega, 2, 2, &config).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| search_gray(&e, &omega, 2, 2, &config).unwrap());
        assert_eq!(a.per_restart_defects, b.per_restart_defects);
    }

    #[test]
    fn search_rejects_bad_ranks_and_budgets() {
        let e = DisorderedEnsemble::example3();
        let omega = e.sample_point(0);
        assert!(search_gray(&e, &omega, 2, 1, &SearchConfig::default()).is_err());
        assert!(search_gray(&e, &omega, 2, 5, &SearchConfig::default()).is_err());
        let tight = SearchConfig { word_budget: 3, ..Default::default() };
        assert!(matches!(search_gray(&e, &omega, 2, 2, &tight), Err(Error::Budget { required: 4, .. })));
        let grams = WordGrams::new(&e, &omega, 1, DEFAULT_WORD_BUDGET).unwrap();
        let wrong = haar_isometry(3, 2, &mut stream(0));
        assert!(matches!(minimize_from(&grams, wrong, &SearchConfig::default()), Err(Error::Structural(_))));
    }

    #[test]
    fn isometry_proportionality_examples() {
        let mut rng = stream(31);
        let u = haar_unitary(4, &mut rng);
        let prev = haar_unitary(4, &mut rng);
        let (dev, mu) = isometry_proportionality(&u, &prev).unwrap();
        assert!(dev < 1e-12 && (mu - 1.0).abs() < 1e-12);

        let next = ComplexMatrix::diag(&[2.0, 2.0, 0.0, 0.0]);
        let prev = ComplexMatrix::diag(&[1.0, 1.0, 0.0, 0.0]);
        let (dev, mu) = isometry_proportionality(&next, &prev).unwrap();
        assert!(dev < 1e-12 && (mu - 4.0).abs() < 1e-12);

        assert!(matches!(isometry_proportionality(&next, &ComplexMatrix::zeros(4, 4)), Err(Error::Degenerate(_))));

        // Same-outcome pair of the rank-2 example: generically far from an
        // isometry multiple.
        let e = DisorderedEnsemble::example3();
        let mut smallest = f64::INFINITY;
        for seed in 0..200 {
            let omega = e.sample_point(seed);
            let sets = e.schedule(&omega, 2).unwrap();
            let (dev, _) = isometry_proportionality(sets[1].operator(0), sets[0].operator(0)).unwrap();
            smallest = smallest.min(dev);
        }
        assert!(smallest > 1e-2, "smallest deviation {smallest}");
    }

    #[test]
    fn emptiness_estimates() {
        let config = SearchConfig { restarts: 10, seed: 2, ..Default::default() };
        let e2 = DisorderedEnsemble::example2();
        let est = estimate_empty_probability(&e2, 1, &[2, 3], &[1, 2, 3], &config).unwrap();
        assert_eq!(est.fraction, 0.0);
        assert_eq!(est.label, HEURISTIC_LABEL);
        let u = unitary_ensemble(3);
        let est = estimate_empty_probability(&u, 2, &[2, 3], &[0, 1], &config).unwrap();
        assert_eq!(est.fraction, 0.0);
    }
}
