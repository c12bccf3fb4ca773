//! Common-subspace low-rank adaptation on a desk-scale transformer.
//!
//! The crate is `no_std` (with `alloc`) and purely computational: dense
//! linear algebra, extraction of a shared basis from an ensemble of
//! fine-tuned attention weights, low-rank adapters that use that basis in
//! place of their `B` factor, a single-block transformer with an analytic
//! backward pass, the seeded training loop and the synthetic tasks that
//! feed it. File formats, caching and the command line live in `cora-lab`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adapter;
pub mod error;
pub mod extraction;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod tasks;
pub mod train;

pub use adapter::{AdaptedWeights, Adapter, AdapterShape, InitMode, ParamCount};
pub use error::{Error, Result};
pub use extraction::{
    extract_common_basis_pca, extract_common_basis_svd, merge_ensemble, variance_report,
    BasisMethod, CommonBasis, Ensemble, StackedAttentionWeights, VarianceReport, VarianceRow,
};
pub use linalg::{Matrix, SvdFactors, EigenFactors};
pub use model::{BlockSet, GradientSet, ModelConfig, ParamBlock, ToyTransformer};
pub use tasks::{Sample, TaskData, TaskKind, TaskSpec};
pub use tasks::{build_ensemble_fixture, Fixture, FixtureConfig};
pub use train::{rank_sweep, run_training, Regime, RunMetrics, SweepTable, TrainConfig};
