//! Seeded random streams, the index hash behind the disorder models, and
//! Haar / Ginibre sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::{ComplexMatrix, C64};
use crate::state::{DensityMatrix, KrausSet};

/// The deterministic random stream used throughout the crate.
pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// Independent stream for work item `index` under `seed`; used so results do
/// not depend on how work is split between threads.
pub fn substream(seed: u64, index: u64) -> Stream {
    stream(mix64(seed, index as i64))
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Avalanche hash of `(seed, index)` for any `index` in ℤ:
/// `splitmix64(splitmix64(seed) + index·φ64)` with φ64 the 64-bit golden
/// ratio constant.
pub fn mix64(seed: u64, index: i64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    splitmix64(splitmix64(seed).wrapping_add((index as u64).wrapping_mul(GOLDEN)))
}

/// Uniform double in `[0, 1)` from the top 53 bits of a hash.
pub fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of i.i.d. standard complex Gaussians (`E|z|² = 1`).
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m.set(i, j, complex_gaussian(rng));
        }
    }
    m
}

/// Haar-distributed d×d unitary.
///
/// QR of a Ginibre matrix, with the phases of `R`'s diagonal moved into `Q`;
/// without that correction the result is not Haar distributed.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    assert!(dim >= 1);
    ginibre(dim, dim, rng).qr_positive().0
}

/// `d×r` matrix with Haar-random orthonormal columns.
pub fn haar_isometry<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> ComplexMatrix {
    assert!(rank >= 1 && rank <= dim);
    ginibre(dim, rank, rng).qr_positive().0
}

/// Uniformly random pure state.
pub fn random_pure_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let ket = ginibre(dim, 1, rng);
    DensityMatrix::pure(&ket).expect("gaussian vector is nonzero")
}

/// Hilbert–Schmidt random mixed state `G G† / tr(G G†)`.
pub fn random_mixed_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(dim, dim, rng);
    let gg = &g * &g.dagger();
    let tr = gg.trace().re;
    DensityMatrix::from_trusted(gg.scale(1.0 / tr).hermitian_part())
}

/// Random complete Kraus set with `outcomes` operators: the first `d`
/// columns of a Haar unitary of size `d·outcomes`, cut into d×d blocks.
pub fn random_kraus_set<R: Rng + ?Sized>(dim: usize, outcomes: usize, rng: &mut R) -> KrausSet {
    let iso = haar_isometry(dim * outcomes, dim, rng);
    let operators = (0..outcomes).map(|a| ComplexMatrix::from_fn(dim, dim, |i, j| iso.get(a * dim + i, j))).collect();
    KrausSet::new(operators).expect("blocks are square")
}
