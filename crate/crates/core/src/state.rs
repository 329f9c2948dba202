//! Density matrices, projections, Kraus sets and the single-outcome update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;

/// Branch probabilities below this are treated as exactly zero.
pub const ZERO_PROBABILITY: f64 = 1e-14;

/// Tolerance used for the Hermitian / PSD / unit-trace checks.
pub const STATE_TOL: f64 = 1e-10;

/// Default completeness tolerance for Kraus sets.
pub const KRAUS_TOL: f64 = 1e-10;

/// A d×d Hermitian, positive semi-definite, unit-trace matrix, or the exact
/// zero matrix standing in for a branch of probability zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates `matrix` as a state. It is symmetrized first, so a
    /// Hermiticity defect up to [`STATE_TOL`] is accepted and repaired.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Structural(format!(
                "density matrix must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let herm = matrix.hermiticity_defect();
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let matrix = matrix.hermitian_part();
        if matrix.max_abs() == 0.0 {
            return Ok(Self { matrix });
        }
        let trace = matrix.trace().re;
        if (trace - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {trace} is not 1")));
        }
        let min_eig = matrix.hermitian_eigenvalues()[0];
        if min_eig < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn from_trusted(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn zero(dim: usize) -> Self {
        Self { matrix: ComplexMatrix::zeros(dim, dim) }
    }

    /// `I/d`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self { matrix: ComplexMatrix::identity(dim).scale(1.0 / dim as f64) }
    }

    /// Diagonal state with the given populations.
    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        Self::new(ComplexMatrix::diag(populations))
    }

    /// `|ψ⟩⟨ψ|/⟨ψ|ψ⟩` for a nonzero column vector.
    pub fn pure(ket: &ComplexMatrix) -> Result<Self> {
        let norm_sq = ket.frobenius_norm_sq();
        if ket.cols() != 1 || norm_sq == 0.0 {
            return Err(Error::InvalidState("pure state needs a nonzero column vector".into()));
        }
        Self::new(ComplexMatrix::outer(ket, ket).scale(1.0 / norm_sq))
    }

    /// `p / rank(p)`.
    pub fn normalized_projection(p: &Projection) -> Self {
        Self { matrix: p.matrix().scale(1.0 / p.rank() as f64) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// True for the dead-branch sentinel.
    pub fn is_zero(&self) -> bool {
        self.matrix.max_abs() == 0.0
    }

    /// Number of eigenvalues above `tol`.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        self.matrix.hermitian_eigenvalues().iter().filter(|&&v| v > tol).count()
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = ComplexMatrix::deserialize(d)?;
        DensityMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// An orthogonal projection of rank `r`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    matrix: ComplexMatrix,
    rank: usize,
}

impl Projection {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Structural("projection must be square".into()));
        }
        let idempotency = (&matrix * &matrix).max_abs_diff(&matrix);
        let herm = matrix.hermiticity_defect();
        if idempotency > STATE_TOL || herm > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "not an orthogonal projection (p²-p: {idempotency:e}, p-p†: {herm:e})"
            )));
        }
        let trace = matrix.trace().re;
        let rank = trace.round();
        if (trace - rank).abs() > 1e-8 || rank < 1.0 {
            return Err(Error::InvalidState(format!("projection trace {trace} is not a positive integer")));
        }
        Ok(Self { matrix, rank: rank as usize })
    }

    /// `F F†` for a d×r matrix with orthonormal columns.
    pub fn from_orthonormal_columns(columns: &ComplexMatrix) -> Result<Self> {
        Self::new(columns * &columns.dagger())
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// One realization `{V_a}` of a Kraus measurement, indexed by outcome.
///
/// Construction checks shapes only; completeness is checked with
/// [`validate_kraus`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ComplexMatrix>", into = "Vec<ComplexMatrix>")]
pub struct KrausSet {
    operators: Vec<ComplexMatrix>,
}

impl KrausSet {
    pub fn new(operators: Vec<ComplexMatrix>) -> Result<Self> {
        let Some(first) = operators.first() else {
            return Err(Error::Structural("a Kraus set needs at least one operator".into()));
        };
        let d = first.rows();
        for (a, v) in operators.iter().enumerate() {
            if v.rows() != d || v.cols() != d {
                return Err(Error::Structural(format!("operator {a} is {}x{}, expected {d}x{d}", v.rows(), v.cols())));
            }
        }
        Ok(Self { operators })
    }

    /// Builds the set and rejects it unless it is complete within `tol`.
    pub fn checked(operators: Vec<ComplexMatrix>, tol: f64) -> Result<Self> {
        let set = Self::new(operators)?;
        let report = validate_kraus(&set, tol);
        if !report.pass {
            return Err(Error::InvalidState(format!(
                "Kraus set is not complete (deviation {:e})",
                report.max_deviation
            )));
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.operators[0].rows()
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    pub fn operator(&self, outcome: usize) -> &ComplexMatrix {
        &self.operators[outcome]
    }

    /// `Σ_a V_a† V_a`.
    pub fn completeness_sum(&self) -> ComplexMatrix {
        let d = self.dim();
        self.operators.iter().fold(ComplexMatrix::zeros(d, d), |acc, v| &acc + &(&v.dagger() * v))
    }

    /// Born probabilities `tr(V_a ρ V_a†)` for every outcome.
    pub fn outcome_probabilities(&self, rho: &DensityMatrix) -> Vec<f64> {
        self.operators.iter().map(|v| born_probability(v, rho)).collect()
    }
}

impl TryFrom<Vec<ComplexMatrix>> for KrausSet {
    type Error = Error;
    fn try_from(operators: Vec<ComplexMatrix>) -> Result<Self> {
        KrausSet::new(operators)
    }
}

impl From<KrausSet> for Vec<ComplexMatrix> {
    fn from(set: KrausSet) -> Self {
        set.operators
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KrausValidation {
    pub pass: bool,
    pub max_deviation: f64,
}

/// Checks `Σ_a V_a†V_a = I` entrywise within `tol`.
pub fn validate_kraus(set: &KrausSet, tol: f64) -> KrausValidation {
    let deviation = set.completeness_sum().max_abs_diff(&ComplexMatrix::identity(set.dim()));
    KrausValidation { pass: deviation <= tol, max_deviation: deviation }
}

fn born_probability(v: &ComplexMatrix, rho: &DensityMatrix) -> f64 {
    rho.matrix().conjugate_by(v).trace().re.clamp(0.0, 1.0)
}

/// Applies one Kraus operator: returns `(V·ρ, tr(VρV†))`.
///
/// Below [`ZERO_PROBABILITY`] the branch is dead: the zero sentinel and a
/// probability of exactly `0.0` are returned.
pub fn apply_measurement(v: &ComplexMatrix, rho: &DensityMatrix) -> Result<(DensityMatrix, f64)> {
    let d = rho.dim();
    if v.rows() != d || v.cols() != d {
        return Err(Error::Structural(format!("operator is {}x{}, state is {d}x{d}", v.rows(), v.cols())));
    }
    let unnormalized = rho.matrix().conjugate_by(v);
    let prob = unnormalized.trace().re;
    if prob <= ZERO_PROBABILITY {
        return Ok((DensityMatrix::zero(d), 0.0));
    }
    let post = unnormalized.hermitian_part().scale(1.0 / prob);
    Ok((DensityMatrix::from_trusted(post), prob.min(1.0)))
}

/// `tr(ρ^m)`; exactly `1` for `m = 1` and `0` on the dead-branch sentinel.
pub fn purity_moment(rho: &DensityMatrix, m: u32) -> f64 {
    assert!(m >= 1, "moment order must be positive");
    if rho.is_zero() {
        return 0.0;
    }
    if m == 1 {
        return 1.0;
    }
    rho.matrix().pow(m).trace().re.clamp(0.0, 1.0)
}

/// Trace norm `tr|ρ - ρ'|`, from the eigenvalues of the Hermitian difference.
pub fn trace_distance(rho: &DensityMatrix, other: &DensityMatrix) -> f64 {
    assert_eq!(rho.dim(), other.dim(), "dimension mismatch");
    (rho.matrix() - other.matrix()).hermitian_eigenvalues().iter().map(|v| v.abs()).sum()
}
