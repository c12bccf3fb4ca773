//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! user seed plus a fixed stream id, so independent consumers (adapter init,
//! batch sampling, data generation) never share a sequence.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::Matrix;

pub type Rng = ChaCha8Rng;

pub mod stream {
    pub const ADAPTER_A: u64 = 1;
    pub const ADAPTER_B: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const BATCHES: u64 = 4;
    pub const TASK_DATA: u64 = 5;
    pub const FIXTURE_SUBSET: u64 = 6;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Matrix with i.i.d. `Normal(0, std²)` entries.
pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("standard deviation must be finite and non-negative");
    let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("normal draws are finite")
}
