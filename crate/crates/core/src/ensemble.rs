//! Disordered Kraus measurement ensembles `ω ↦ {V_{a;ω}}`, outcome words and
//! word operators, and time coarse-graining.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::disorder::{shift, site_value, DisorderModel, DisorderPoint};
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::random::{haar_unitary, random_kraus_set, stream};
use crate::state::{validate_kraus, KrausSet, KRAUS_TOL};

/// Default cap on `|A|^N` for coarse-graining.
pub const DEFAULT_ALPHABET_BUDGET: u128 = 1 << 16;

/// A finite outcome sequence `(a_1, …, a_n)`, stored as outcome indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeWord(Vec<usize>);

impl OutcomeWord {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn extended(&self, outcome: usize) -> Self {
        let mut labels = self.0.clone();
        labels.push(outcome);
        Self(labels)
    }

    /// Word number `index` among all `alphabet^len` words in lexicographic
    /// order (first letter most significant).
    pub fn from_index(mut index: u128, len: usize, alphabet: usize) -> Self {
        let mut labels = vec![0; len];
        for slot in labels.iter_mut().rev() {
            *slot = (index % alphabet as u128) as usize;
            index /= alphabet as u128;
        }
        Self(labels)
    }

    /// Renders the word with the given label names.
    pub fn render(&self, alphabet: &[String]) -> String {
        let single = alphabet.iter().all(|l| l.chars().count() == 1);
        let parts: Vec<&str> = self.0.iter().map(|&a| alphabet[a].as_str()).collect();
        if single {
            parts.concat()
        } else {
            parts.join(".")
        }
    }
}

impl fmt::Display for OutcomeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// All words of length `len` over `alphabet` outcomes, lexicographically.
pub fn all_words(alphabet: usize, len: usize) -> impl Iterator<Item = OutcomeWord> {
    let count = (alphabet as u128).pow(len as u32);
    (0..count).map(move |i| OutcomeWord::from_index(i, len, alphabet))
}

/// How a Kraus set is produced from a disorder point.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    /// The same set at every point.
    Fixed(KrausSet),
    /// `V_g = Σ_{j∈g} |ω_0, j⟩⟨ω_0, j|`: projections onto spans of column
    /// groups of the site-0 unitary.
    ColumnPartition { groups: Vec<Vec<usize>> },
    /// `W_g = Σ_{j∈g} |ω_1, j⟩⟨ω_0, j|`: bras from site 0, kets from site 1.
    ShiftedColumnPartition { groups: Vec<Vec<usize>> },
    /// Haar-random isometry `C^d → C^{d·k}` per site, cut into `k` blocks.
    RandomIsometry { outcomes: usize },
    /// Qubit measurement whose strength follows a circle rotation:
    /// `V_0 = diag(√s, √(1-s))`, `V_1 = diag(√(1-s), √s)`, with
    /// `s = (1 + strength·cos 2πφ)/2`.
    QuasiPeriodicQubit { strength: f64 },
    /// `{V^(N)_{ā}}_{ā ∈ A^N}` composed from the base ensemble.
    CoarseGrained { base: Box<DisorderedEnsemble>, grain: usize },
}

/// Names accepted by [`DisorderedEnsemble::builtin`]. `random_isometry` is
/// the d = 2, three-outcome variant; `quasi_periodic_qubit` uses strength 0.8.
pub const BUILTIN_NAMES: [&str; 5] = ["example1", "example2", "example3", "random_isometry", "quasi_periodic_qubit"];

/// A disordered perfect Kraus measurement: a deterministic map from
/// disorder points to Kraus sets over a fixed alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderedEnsemble {
    name: String,
    dim: usize,
    alphabet: Vec<String>,
    model: DisorderModel,
    generator: Generator,
}

fn letter_labels(count: usize) -> Vec<String> {
    if count <= 26 {
        (0..count).map(|k| ((b'a' + k as u8) as char).to_string()).collect()
    } else {
        (0..count).map(|k| k.to_string()).collect()
    }
}

fn check_partition(dim: usize, groups: &[Vec<usize>]) -> Result<()> {
    if dim == 0 {
        return Err(Error::Structural("dimension must be positive".into()));
    }
    let mut seen = vec![false; dim];
    for group in groups {
        if group.is_empty() {
            return Err(Error::Structural("partition groups must be non-empty".into()));
        }
        for &j in group {
            if j >= dim {
                return Err(Error::Structural(format!("column {j} out of range for d = {dim}")));
            }
            if seen[j] {
                return Err(Error::Structural(format!("column {j} appears in two groups")));
            }
            seen[j] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Structural(format!("column {missing} is not covered by the partition")));
    }
    Ok(())
}

impl DisorderedEnsemble {
    /// Point disorder wrapping one fixed Kraus set. Completeness is not
    /// checked here; [`realize`](Self::realize) reports violations.
    pub fn fixed(name: impl Into<String>, set: KrausSet) -> Self {
        Self {
            name: name.into(),
            dim: set.dim(),
            alphabet: letter_labels(set.len()),
            model: DisorderModel::Point,
            generator: Generator::Fixed(set),
        }
    }

    /// Projections onto spans of column groups of a Haar unitary per site.
    pub fn column_partition(name: impl Into<String>, dim: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        check_partition(dim, &groups)?;
        Ok(Self {
            name: name.into(),
            dim,
            alphabet: letter_labels(groups.len()),
            model: DisorderModel::IidHaarShift { dim },
            generator: Generator::ColumnPartition { groups },
        })
    }

    /// Maps column groups of the site-0 unitary onto the same groups of the
    /// site-1 unitary.
    pub fn shifted_column_partition(name: impl Into<String>, dim: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        check_partition(dim, &groups)?;
        Ok(Self {
            name: name.into(),
            dim,
            alphabet: letter_labels(groups.len()),
            model: DisorderModel::IidHaarShift { dim },
            generator: Generator::ShiftedColumnPartition { groups },
        })
    }

    /// d = 3, `V_a` projects onto the first two columns of `ω_0`, `V_b` onto
    /// the third. Purifies eventually.
    pub fn example1() -> Self {
        Self::column_partition("example1", 3, vec![vec![0, 1], vec![2]]).expect("valid partition")
    }

    /// d = 3, `W_a = Σ_{j≤2} |ω_1,j⟩⟨ω_0,j|`, `W_b = |ω_1,3⟩⟨ω_0,3|`. Has a
    /// rank-2 dark projection at every point.
    pub fn example2() -> Self {
        Self::shifted_column_partition("example2", 3, vec![vec![0, 1], vec![2]]).expect("valid partition")
    }

    /// d = 4, two rank-2 projections onto column spans of `ω_0`. Purifies
    /// asymptotically but not eventually.
    pub fn example3() -> Self {
        Self::column_partition("example3", 4, vec![vec![0, 1], vec![2, 3]]).expect("valid partition")
    }

    /// Column-span projections for an arbitrary partition of `0..dim`
    /// (0-based column indices).
    pub fn example3_general(dim: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        Self::column_partition(format!("column_partition_d{dim}"), dim, groups)
    }

    pub fn random_isometry(dim: usize, outcomes: usize) -> Result<Self> {
        if dim == 0 || outcomes == 0 {
            return Err(Error::Structural("dimension and outcome count must be positive".into()));
        }
        Ok(Self {
            name: format!("random_isometry_d{dim}_k{outcomes}"),
            dim,
            alphabet: letter_labels(outcomes),
            model: DisorderModel::IidHaarShift { dim },
            generator: Generator::RandomIsometry { outcomes },
        })
    }

    /// Quasi-periodic qubit measurement driven by a golden-ratio rotation.
    pub fn quasi_periodic_qubit(strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::Structural("strength must lie in [0, 1]".into()));
        }
        Ok(Self {
            name: "quasi_periodic_qubit".into(),
            dim: 2,
            alphabet: letter_labels(2),
            model: DisorderModel::Rotation { alpha: (5f64.sqrt() - 1.0) / 2.0 },
            generator: Generator::QuasiPeriodicQubit { strength },
        })
    }

    /// Looks up one of [`BUILTIN_NAMES`].
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::example1()),
            "example2" => Ok(Self::example2()),
            "example3" => Ok(Self::example3()),
            "random_isometry" => Self::random_isometry(2, 3),
            "quasi_periodic_qubit" => Self::quasi_periodic_qubit(0.8),
            other => Err(Error::Structural(format!(
                "unknown built-in ensemble `{other}` (known: {})",
                BUILTIN_NAMES.join(", ")
            ))),
        }
    }

    /// Replaces the disorder model, checking that the generator can read it.
    pub fn with_model(mut self, model: DisorderModel) -> Result<Self> {
        model.validate()?;
        let ok = match (&self.generator, &model) {
            (Generator::Fixed(_), _) => true,
            (Generator::QuasiPeriodicQubit { .. }, DisorderModel::Rotation { .. }) => true,
            (Generator::CoarseGrained { .. }, _) => false,
            (_, DisorderModel::IidHaarShift { dim }) => *dim == self.dim,
            (_, DisorderModel::MarkovShift { .. }) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Structural(format!(
                "ensemble `{}` cannot be driven by a {} model",
                self.name,
                model.name()
            )));
        }
        self.model = model;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn model(&self) -> &DisorderModel {
        &self.model
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// The disorder point for `seed` under this ensemble's model.
    pub fn sample_point(&self, seed: u64) -> DisorderPoint {
        self.model.sample_point(seed)
    }

    /// Base shift steps per measurement step (`N` for an `N`-grained
    /// ensemble).
    pub fn stride(&self) -> i64 {
        match &self.generator {
            Generator::CoarseGrained { base, grain } => base.stride() * *grain as i64,
            _ => 1,
        }
    }

    /// The shift this ensemble's time step applies: `θ^stride`.
    pub fn advance(&self, omega: &DisorderPoint) -> DisorderPoint {
        self.advance_by(omega, 1)
    }

    pub fn advance_by(&self, omega: &DisorderPoint, steps: i64) -> DisorderPoint {
        shift(omega, steps * self.stride())
    }

    /// Haar unitary attached to site `i` (relative to `ω`'s position), seeded
    /// by the site payload; the same site always yields the same unitary.
    pub fn site_unitary(&self, omega: &DisorderPoint, i: i64) -> Result<ComplexMatrix> {
        let seed = site_value(omega, i)?;
        Ok(haar_unitary(self.dim, &mut stream(seed)))
    }

    /// The Kraus set at `ω` without the completeness check.
    pub fn generate(&self, omega: &DisorderPoint) -> Result<KrausSet> {
        if omega.model() != &self.model {
            return Err(Error::Structural(format!(
                "point from a {} model passed to ensemble `{}` driven by {}",
                omega.model_id(),
                self.name,
                self.model.name()
            )));
        }
        match &self.generator {
            Generator::Fixed(set) => Ok(set.clone()),
            Generator::ColumnPartition { groups } => {
                let u = self.site_unitary(omega, 0)?;
                let ops = groups
                    .iter()
                    .map(|g| {
                        let cols = u.select_columns(g);
                        &cols * &cols.dagger()
                    })
                    .collect();
                KrausSet::new(ops)
            }
            Generator::ShiftedColumnPartition { groups } => {
                let u0 = self.site_unitary(omega, 0)?;
                let u1 = self.site_unitary(omega, 1)?;
                let ops = groups.iter().map(|g| &u1.select_columns(g) * &u0.select_columns(g).dagger()).collect();
                KrausSet::new(ops)
            }
            Generator::RandomIsometry { outcomes } => {
                let seed = site_value(omega, 0)?;
                Ok(random_kraus_set(self.dim, *outcomes, &mut stream(seed)))
            }
            Generator::QuasiPeriodicQubit { strength } => {
                let phi = omega.phase()?;
                let s = 0.5 * (1.0 + strength * (std::f64::consts::TAU * phi).cos());
                let (hi, lo) = (s.sqrt(), (1.0 - s).sqrt());
                KrausSet::new(vec![ComplexMatrix::diag(&[hi, lo]), ComplexMatrix::diag(&[lo, hi])])
            }
            Generator::CoarseGrained { base, grain } => {
                // The grained step ending at ω covers the base steps
                // θ^{-(N-1)}ω, …, θ^{-1}ω, ω, so that k grained steps from ω
                // reproduce base steps 1..kN.
                let sets = (0..*grain)
                    .map(|j| base.realize(&base.advance_by(omega, j as i64 + 1 - *grain as i64)))
                    .collect::<Result<Vec<_>>>()?;
                let ops = all_words(base.alphabet_size(), *grain)
                    .map(|word| {
                        let mut product = ComplexMatrix::identity(self.dim);
                        for (set, &a) in sets.iter().zip(word.labels()) {
                            product = &set.operators()[a] * &product;
                        }
                        product
                    })
                    .collect();
                KrausSet::new(ops)
            }
        }
    }

    /// The validated Kraus set `{V_{a;ω}}`.
    pub fn realize(&self, omega: &DisorderPoint) -> Result<KrausSet> {
        let set = self.generate(omega)?;
        let report = validate_kraus(&set, KRAUS_TOL);
        if !report.pass {
            return Err(Error::EnsembleInvalid {
                ensemble: self.name.clone(),
                seed: omega.master_seed(),
                position: omega.position(),
                deviation: report.max_deviation,
            });
        }
        Ok(set)
    }

    /// Kraus sets for measurement steps `1..=n` from `ω`, i.e. realized at
    /// `θ(ω), …, θⁿ(ω)` (in units of this ensemble's stride).
    pub fn schedule(&self, omega: &DisorderPoint, n: usize) -> Result<Vec<KrausSet>> {
        let mut point = omega.clone();
        let mut sets = Vec::with_capacity(n);
        for _ in 0..n {
            point = self.advance(&point);
            sets.push(self.realize(&point)?);
        }
        Ok(sets)
    }

    /// `V^(n)_{ā;ω} = V_{a_n;θⁿ(ω)} ⋯ V_{a_1;θ(ω)}`. The first factor applied
    /// is realized at `θ(ω)`, not `ω`. The empty word gives the identity.
    pub fn word_operator(&self, omega: &DisorderPoint, word: &OutcomeWord) -> Result<ComplexMatrix> {
        let sets = self.schedule(omega, word.len())?;
        Ok(word_product(&sets, word))
    }

    /// The `N`-step coarse-grained ensemble over `A^N`, whose time step is
    /// `θ^N`.
    pub fn coarse_grain(&self, grain: usize, alphabet_budget: u128) -> Result<Self> {
        if grain == 0 {
            return Err(Error::Structural("coarse-graining factor must be at least 1".into()));
        }
        let size = (self.alphabet_size() as u128).checked_pow(grain as u32).unwrap_or(u128::MAX);
        if size > alphabet_budget {
            return Err(Error::Budget {
                what: format!("coarse-grained alphabet of `{}` at N = {grain}", self.name),
                required: size,
                budget: alphabet_budget,
            });
        }
        let alphabet = all_words(self.alphabet_size(), grain).map(|w| w.render(&self.alphabet)).collect();
        Ok(Self {
            name: format!("{}^({grain})", self.name),
            dim: self.dim,
            alphabet,
            model: self.model.clone(),
            generator: Generator::CoarseGrained { base: Box::new(self.clone()), grain },
        })
    }
}

/// `V_{a_n} ⋯ V_{a_1}` with `sets[k]` supplying step `k + 1`.
pub fn word_product(sets: &[KrausSet], word: &OutcomeWord) -> ComplexMatrix {
    assert!(sets.len() >= word.len(), "schedule shorter than word");
    let d = sets.first().map_or(1, KrausSet::dim);
    let mut product = ComplexMatrix::identity(d);
    for (set, &a) in sets.iter().zip(word.labels()) {
        product = &set.operators()[a] * &product;
    }
    product
}
