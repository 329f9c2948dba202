//! Ergodic disorder: invertible shift dynamics with index-addressable,
//! counter-based randomness.
//!
//! A [`DisorderPoint`] is an immutable value `(model, seed, position)`.
//! Every random quantity attached to site `k ∈ ℤ` is a pure function of the
//! master seed and `k`, so `θ` and `θ⁻¹` are both just changes of position and
//! `step_back(step(ω)) == ω` holds bit for bit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{mix64, splitmix64, unit_interval};

const STOCHASTIC_TOL: f64 = 1e-12;
/// Domain separator for the Markov anchor draw, so it never collides with a
/// per-site draw.
const ANCHOR_TAG: u64 = 0x6d61_726b_6f76_3030;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DisorderModel {
    /// Two-sided i.i.d. sequence of site payloads (used to seed one Haar
    /// unitary per site); `θ` is the left shift.
    IidHaarShift { dim: usize },
    /// Stationary Markov chain over finitely many states; site payload is the
    /// seed attached to the chain state at that site.
    MarkovShift { transition: Vec<Vec<f64>>, payload_seeds: Vec<u64> },
    /// Circle rotation `φ ↦ φ + α mod 1`.
    Rotation { alpha: f64 },
    /// One-point space; `θ` is the identity.
    Point,
}

impl DisorderModel {
    /// Validated Markov shift: rows must be stochastic and the chain
    /// irreducible.
    pub fn markov(transition: Vec<Vec<f64>>, payload_seeds: Vec<u64>) -> Result<Self> {
        let model = Self::MarkovShift { transition, payload_seeds };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::IidHaarShift { dim } if *dim == 0 => {
                Err(Error::Structural("iid shift dimension must be positive".into()))
            }
            Self::Rotation { alpha } if !alpha.is_finite() => {
                Err(Error::Structural("rotation angle must be finite".into()))
            }
            Self::MarkovShift { transition, payload_seeds } => {
                let n = transition.len();
                if n == 0 || payload_seeds.len() != n {
                    return Err(Error::Structural(format!(
                        "markov shift needs a non-empty square transition matrix and one payload seed per \
                         state (states: {n}, seeds: {})",
                        payload_seeds.len()
                    )));
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::Structural(format!("transition row {i} has length {}", row.len())));
                    }
                    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                        return Err(Error::Structural(format!("transition row {i} has entries outside [0,1]")));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > STOCHASTIC_TOL {
                        return Err(Error::Structural(format!("transition row {i} sums to {sum}")));
                    }
                }
                if !is_irreducible(transition) {
                    return Err(Error::Structural("markov transition matrix is not irreducible".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::IidHaarShift { .. } => "iid_haar_shift",
            Self::MarkovShift { .. } => "markov_shift",
            Self::Rotation { .. } => "rotation",
            Self::Point => "point",
        }
    }

    /// True for models exposing per-site payloads via [`site_value`].
    pub fn has_sites(&self) -> bool {
        matches!(self, Self::IidHaarShift { .. } | Self::MarkovShift { .. })
    }

    /// Stationary distribution of the Markov variant, by solving
    /// `πP = π, Σπ = 1` directly.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let Self::MarkovShift { transition, .. } = self else {
            return Err(Error::Unsupported(format!("{} has no stationary vector", self.name())));
        };
        Ok(solve_stationary(transition))
    }

    /// The point `ω` determined by `seed`, at position 0.
    pub fn sample_point(&self, seed: u64) -> DisorderPoint {
        let model = Arc::new(self.clone());
        match self {
            Self::Point => DisorderPoint { model, master_seed: 0, position: 0, chain_state: None },
            Self::MarkovShift { .. } => {
                let anchor = markov_anchor(self, seed);
                DisorderPoint { model, master_seed: seed, position: 0, chain_state: Some(anchor) }
            }
            _ => DisorderPoint { model, master_seed: seed, position: 0, chain_state: None },
        }
    }
}

/// A point of the disorder space: the master seed fixes the whole two-sided
/// sequence, the position says where `θⁿ` has moved it.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderPoint {
    model: Arc<DisorderModel>,
    master_seed: u64,
    position: i64,
    /// Markov chain state at `position` (a cache; fully determined by the
    /// seed and position).
    chain_state: Option<usize>,
}

impl DisorderPoint {
    pub fn model(&self) -> &DisorderModel {
        &self.model
    }

    pub fn model_id(&self) -> &'static str {
        self.model.name()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn position(&self) -> i64 {
        self.position
    }

    /// Rotation phase at the current position, in `[0, 1)`.
    pub fn phase(&self) -> Result<f64> {
        self.phase_at(0)
    }

    /// Rotation phase at `position + offset`.
    pub fn phase_at(&self, offset: i64) -> Result<f64> {
        let DisorderModel::Rotation { alpha } = *self.model else {
            return Err(Error::Unsupported(format!("{} model has no phase", self.model.name())));
        };
        let start = unit_interval(mix64(self.master_seed, 0));
        let phase = (start + (self.position + offset) as f64 * alpha).rem_euclid(1.0);
        // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
        Ok(if phase >= 1.0 { 0.0 } else { phase })
    }

    /// Markov chain state at the current position.
    pub fn chain_state(&self) -> Option<usize> {
        self.chain_state
    }
}

/// `θ(ω)`.
pub fn step(omega: &DisorderPoint) -> DisorderPoint {
    shift(omega, 1)
}

/// `θ⁻¹(ω)`.
pub fn step_back(omega: &DisorderPoint) -> DisorderPoint {
    shift(omega, -1)
}

/// `θⁿ(ω)` for any `n ∈ ℤ`.
pub fn shift(omega: &DisorderPoint, n: i64) -> DisorderPoint {
    match &*omega.model {
        DisorderModel::Point => omega.clone(),
        DisorderModel::MarkovShift { .. } => {
            let target = omega.position + n;
            let state = markov_state_at(omega, target);
            DisorderPoint { position: target, chain_state: Some(state), ..omega.clone() }
        }
        _ => DisorderPoint { position: omega.position + n, ..omega.clone() },
    }
}

/// Payload seed `ω_i` of site `i` relative to the current position.
///
/// For the i.i.d. shift this is `mix64(master_seed, position + i)`; for the
/// Markov shift it is the payload seed of the chain state at that site.
pub fn site_value(omega: &DisorderPoint, i: i64) -> Result<u64> {
    let index = omega.position + i;
    match &*omega.model {
        DisorderModel::IidHaarShift { .. } => Ok(mix64(omega.master_seed, index)),
        DisorderModel::MarkovShift { payload_seeds, .. } => Ok(payload_seeds[markov_state_at(omega, index)]),
        other => Err(Error::Unsupported(format!("{} model has no site structure", other.name()))),
    }
}

fn markov_anchor(model: &DisorderModel, seed: u64) -> usize {
    let pi = model.stationary_distribution().expect("markov model");
    let u = unit_interval(splitmix64(seed ^ ANCHOR_TAG));
    sample_index(&pi, u)
}

fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // Rounding left `u` beyond the last partial sum; take the last state with
    // positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Chain state at absolute index `target`.
///
/// For `k ≥ 1`, `X_k` is drawn from row `X_{k-1}` of `P` with the uniform
/// attached to site `k`; for `k ≤ -1`, `X_k` is drawn from the time-reversed
/// kernel `π(x)P(x,y)/π(y)` given `X_{k+1}`. The resulting two-sided sequence
/// is a stationary Markov chain with transition matrix `P`.
fn markov_state_at(omega: &DisorderPoint, target: i64) -> usize {
    let DisorderModel::MarkovShift { transition, .. } = &*omega.model else {
        unreachable!("markov_state_at on non-markov point");
    };
    let cached_index = omega.position;
    let cached_state = omega.chain_state.expect("markov points carry their chain state");
    if target == cached_index {
        return cached_state;
    }
    // Walk outward from the cache when it lies on the path from the anchor,
    // otherwise restart from the anchor at index 0.
    let (mut index, mut state) =
        if (cached_index >= 0 && target > cached_index) || (cached_index <= 0 && target < cached_index) {
            (cached_index, cached_state)
        } else {
            (0, markov_anchor(&omega.model, omega.master_seed))
        };
    if target > index {
        while index < target {
            index += 1;
            let u = unit_interval(mix64(omega.master_seed, index));
            state = sample_index(&transition[state], u);
        }
    } else if target < index {
        let pi = solve_stationary(transition);
        while index > target {
            index -= 1;
            let u = unit_interval(mix64(omega.master_seed, index));
            let next = state;
            let reversed: Vec<f64> = (0..pi.len())
                .map(|x| if pi[next] > 0.0 { pi[x] * transition[x][next] / pi[next] } else { 0.0 })
                .collect();
            state = sample_index(&reversed, u);
        }
    }
    state
}

fn is_irreducible(transition: &[Vec<f64>]) -> bool {
    let n = transition.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { transition[i][j] } else { transition[j][i] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

fn solve_stationary(transition: &[Vec<f64>]) -> Vec<f64> {
    let n = transition.len();
    // Rows 0..n-1 of (Pᵀ - I) plus the normalization row replacing the last.
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).expect("irreducible chain has a unique stationary vector");
    x.iter().map(|v| v.max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_state() -> DisorderModel {
        DisorderModel::markov(vec![vec![0.9, 0.1], vec![0.3, 0.7]], vec![11, 22]).unwrap()
    }

    /// Power iteration, independent of the linear solve used by the model.
    fn power_iteration(p: &[Vec<f64>]) -> Vec<f64> {
        let n = p.len();
        let mut v = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += v[i] * p[i][j];
                }
            }
            v = next;
        }
        v
    }

    #[test]
    fn point_model_is_fixed() {
        let omega = DisorderModel::Point.sample_point(1234);
        assert_eq!(omega.position(), 0);
        assert_eq!(omega, DisorderModel::Point.sample_point(99));
        assert_eq!(step(&omega), omega);
        assert_eq!(step_back(&omega), omega);
        assert!(matches!(site_value(&omega, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn iid_payload_is_reproducible_from_seed() {
        let model = DisorderModel::IidHaarShift { dim: 3 };
        let a = model.sample_point(77);
        let b = model.sample_point(77);
        assert_eq!(site_value(&a, 0).unwrap(), site_value(&b, 0).unwrap());
        assert_eq!(site_value(&a, 0).unwrap(), mix64(77, 0));
        assert_ne!(site_value(&a, 0).unwrap(), site_value(&model.sample_point(78), 0).unwrap());
    }

    #[test]
    fn iid_shift_covariance_and_negative_sites() {
        let omega = DisorderModel::IidHaarShift { dim: 2 }.sample_point(5);
        assert_eq!(site_value(&omega, 1).unwrap(), site_value(&step(&omega), 0).unwrap());
        assert_eq!(site_value(&omega, -5).unwrap(), site_value(&shift(&omega, -5), 0).unwrap());
        assert_eq!(site_value(&omega, -5).unwrap(), site_value(&omega, -5).unwrap());
    }

    #[test]
    fn rotation_adds_alpha() {
        let alpha = (5f64.sqrt() - 1.0) / 2.0;
        let omega = DisorderModel::Rotation { alpha }.sample_point(3);
        let before = omega.phase().unwrap();
        let after = step(&omega).phase().unwrap();
        let expected = (before + alpha).rem_euclid(1.0);
        assert!((after - expected).abs() < 1e-12);
        assert!(matches!(site_value(&omega, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn markov_validation() {
        assert!(DisorderModel::markov(vec![vec![0.5, 0.4], vec![0.5, 0.5]], vec![1, 2]).is_err());
        // Reducible: state 1 is absorbing.
        assert!(DisorderModel::markov(vec![vec![0.5, 0.5], vec![0.0, 1.0]], vec![1, 2]).is_err());
        assert!(DisorderModel::markov(vec![vec![1.0]], vec![1, 2]).is_err());
        assert!(DisorderModel::markov(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1, 2]).is_ok());
    }

    #[test]
    fn markov_stationary_matches_power_iteration() {
        let model = two_state();
        let DisorderModel::MarkovShift { transition, .. } = &model else { unreachable!() };
        let oracle = power_iteration(transition);
        let pi = model.stationary_distribution().unwrap();
        for (a, b) in pi.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        // 0.75 / 0.25 for this chain.
        assert!((oracle[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn markov_initial_state_follows_stationary_law() {
        let model = two_state();
        let n = 20_000;
        let zeros = (0..n).filter(|&s| model.sample_point(s).chain_state() == Some(0)).count();
        let p = 0.75;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn markov_empirical_frequencies_match_stationary() {
        let model = two_state();
        let mut omega = model.sample_point(42);
        let steps = 100_000;
        let mut visits = [0usize; 2];
        let mut flips = 0usize;
        let mut prev = omega.chain_state().unwrap();
        for _ in 0..steps {
            omega = step(&omega);
            let s = omega.chain_state().unwrap();
            visits[s] += 1;
            if s != prev {
                flips += 1;
            }
            prev = s;
        }
        // Correlated samples: inflate the i.i.d. standard error by the
        // integrated autocorrelation factor (1 + λ)/(1 - λ), λ = 0.6.
        let p = 0.75;
        let lambda: f64 = 0.6;
        let se = (p * (1.0 - p) / steps as f64 * (1.0 + lambda) / (1.0 - lambda)).sqrt();
        assert!((visits[0] as f64 / steps as f64 - p).abs() < 3.0 * se);
        assert!(flips > 0);
    }

    #[test]
    fn markov_backward_sites_are_consistent() {
        let model = two_state();
        let omega = model.sample_point(9);
        let far = shift(&omega, -40);
        for i in -10..10 {
            assert_eq!(site_value(&far, 40 + i).unwrap(), site_value(&omega, i).unwrap());
        }
    }

    proptest! {
        #[test]
        fn step_back_inverts_step(seed in any::<u64>(), moves in proptest::collection::vec(any::<bool>(), 0..60)) {
            for model in [
                DisorderModel::IidHaarShift { dim: 3 },
                two_state(),
                DisorderModel::Rotation { alpha: 0.618_033_988_749_894_8 },
                DisorderModel::Point,
            ] {
                let start = model.sample_point(seed);
                let mut omega = start.clone();
                for &forward in &moves {
                    omega = if forward { step(&omega) } else { step_back(&omega) };
                    let back = if forward { step_back(&omega) } else { step(&omega) };
                    let fwd = if forward { step(&back) } else { step_back(&back) };
                    prop_assert_eq!(&fwd, &omega);
                }
                let net: i64 = moves.iter().map(|&f| if f { 1 } else { -1 }).sum();
                prop_assert_eq!(shift(&omega, -net), start);
            }
        }

        #[test]
        fn shift_covariance(seed in any::<u64>(), n in -30i64..30, i in -30i64..30) {
            for model in [DisorderModel::IidHaarShift { dim: 2 }, two_state()] {
                let omega = model.sample_point(seed);
                prop_assert_eq!(site_value(&shift(&omega, n), i).unwrap(), site_value(&omega, i + n).unwrap());
            }
        }
    }
}
