//! Low-rank adapters on stacked attention weights: `W = W₀ + s · A · B`.
//!
//! One adapter covers the whole `[W_Q; W_K; W_V]` block, so `A` is
//! `3·d_model × r` and `B` is `r × d_k`.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{BasisMethod, CommonBasis, StackedAttentionWeights};
use crate::linalg::Matrix;
use crate::rng::{normal_matrix, seeded, stream};

/// How `B` is populated at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Zero `B`, the usual low-rank adaptation start.
    LoraZeroB,
    /// `B` copied from an SVD common basis.
    CoraCommonBasis,
    AblateZeros,
    AblateOnes,
    /// `B ~ Normal(0, 1/d_k)`.
    AblateRandom,
}

impl InitMode {
    pub const ALL: [InitMode; 5] = [
        InitMode::LoraZeroB,
        InitMode::CoraCommonBasis,
        InitMode::AblateZeros,
        InitMode::AblateOnes,
        InitMode::AblateRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::LoraZeroB => "lora_zero_b",
            InitMode::CoraCommonBasis => "cora_common_basis",
            InitMode::AblateZeros => "ablate_zeros",
            InitMode::AblateOnes => "ablate_ones",
            InitMode::AblateRandom => "ablate_random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Shape of the weight an adapter attaches to: `rows = 3·d_model`, `cols = d_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterShape {
    pub rows: usize,
    pub cols: usize,
}

impl AdapterShape {
    pub fn of(w: &StackedAttentionWeights) -> Self {
        let (rows, cols) = w.stacked().shape();
        Self { rows, cols }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub(crate) a: Matrix,
    pub(crate) b: Matrix,
    pub(crate) rank: usize,
    pub(crate) scale: f64,
    pub(crate) b_frozen: bool,
    pub(crate) init_mode: InitMode,
    pub(crate) seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub a_params: usize,
    pub b_params: usize,
    pub trainable: usize,
    pub total: usize,
}

impl ParamCount {
    /// Share of adapter parameters that live in `B`. It is one half only
    /// when `3·d_model = d_k`.
    pub fn b_fraction(&self) -> f64 {
        self.b_params as f64 / self.total as f64
    }
}

impl Adapter {
    /// Builds an adapter with `A ~ Normal(0, 1/r)` and `B` set by `mode`.
    ///
    /// `basis` must be given exactly when `mode` is
    /// [`InitMode::CoraCommonBasis`], and must be an SVD basis of rank `r`
    /// and width `shape.cols`. The adapter starts with `scale = 1` and a
    /// trainable `B`.
    pub fn init(
        mode: InitMode,
        shape: AdapterShape,
        r: usize,
        seed: u64,
        basis: Option<&CommonBasis>,
    ) -> Result<Self> {
        let max = shape.rows.min(shape.cols);
        if r == 0 || r > max {
            return Err(Error::RankOutOfRange { rank: r, max });
        }
        let a = normal_matrix(
            &mut seeded(seed, stream::ADAPTER_A),
            shape.rows,
            r,
            1.0 / libm::sqrt(r as f64),
        );
        let b = match (mode, basis) {
            (InitMode::CoraCommonBasis, None) => {
                return Err(Error::Adapter("cora_common_basis requires a common basis".into()))
            }
            (InitMode::CoraCommonBasis, Some(basis)) => {
                if basis.method != BasisMethod::Svd {
                    return Err(Error::Adapter(format!(
                        "only svd bases initialize adapters, got {}",
                        basis.method.as_str()
                    )));
                }
                if basis.rank != r || basis.b.shape() != (r, shape.cols) {
                    return Err(Error::Adapter(format!(
                        "basis is {:?} with rank {}, adapter needs {}x{}",
                        basis.b.shape(),
                        basis.rank,
                        r,
                        shape.cols
                    )));
                }
                basis.b.clone()
            }
            (_, Some(_)) => {
                return Err(Error::Adapter(format!(
                    "{} does not take a common basis",
                    mode.as_str()
                )))
            }
            (InitMode::LoraZeroB | InitMode::AblateZeros, None) => Matrix::zeros(r, shape.cols),
            (InitMode::AblateOnes, None) => Matrix::filled(r, shape.cols, 1.0),
            (InitMode::AblateRandom, None) => normal_matrix(
                &mut seeded(seed, stream::ADAPTER_B),
                r,
                shape.cols,
                1.0 / libm::sqrt(shape.cols as f64),
            ),
        };
        Ok(Self {
            a,
            b,
            rank: r,
            scale: 1.0,
            b_frozen: false,
            init_mode: mode,
            seed,
        })
    }

    /// Reassembles an adapter from stored parts.
    pub fn from_parts(
        a: Matrix,
        b: Matrix,
        scale: f64,
        b_frozen: bool,
        init_mode: InitMode,
        seed: u64,
    ) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "adapter",
                left: a.shape(),
                right: b.shape(),
            });
        }
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Adapter(format!("scale must be finite and >= 0, got {scale}")));
        }
        Ok(Self {
            rank: a.cols(),
            a,
            b,
            scale,
            b_frozen,
            init_mode,
            seed,
        })
    }

    pub fn with_b_frozen(mut self, frozen: bool) -> Self {
        self.b_frozen = frozen;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Adapter(format!("scale must be finite and >= 0, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut Matrix {
        &mut self.a
    }

    /// Mutable `B`. Training code must not call this on frozen adapters.
    pub fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn b_frozen(&self) -> bool {
        self.b_frozen
    }

    pub fn init_mode(&self) -> InitMode {
        self.init_mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shape(&self) -> AdapterShape {
        AdapterShape {
            rows: self.a.rows(),
            cols: self.b.cols(),
        }
    }

    /// `s · A · B`.
    pub fn delta(&self) -> Matrix {
        let ab = self.a.matmul(&self.b).expect("adapter factors agree by construction");
        if self.scale == 1.0 {
            ab
        } else {
            ab.scale(self.scale)
        }
    }

    pub fn trainable_parameter_count(&self) -> ParamCount {
        let a_params = self.a.rows() * self.rank;
        let b_params = self.rank * self.b.cols();
        ParamCount {
            a_params,
            b_params,
            trainable: if self.b_frozen { a_params } else { a_params + b_params },
            total: a_params + b_params,
        }
    }
}

pub fn trainable_parameter_count(adapter: &Adapter) -> ParamCount {
    adapter.trainable_parameter_count()
}

/// Base attention weights with an optional adapter on top.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedWeights {
    pub base: StackedAttentionWeights,
    pub adapter: Option<Adapter>,
}

impl AdaptedWeights {
    pub fn new(base: StackedAttentionWeights, adapter: Option<Adapter>) -> Result<Self> {
        if let Some(a) = &adapter {
            let shape = a.shape();
            if (shape.rows, shape.cols) != base.stacked().shape() {
                return Err(Error::ShapeMismatch {
                    op: "attach_adapter",
                    left: base.stacked().shape(),
                    right: (shape.rows, shape.cols),
                });
            }
        }
        Ok(Self { base, adapter })
    }

    /// `W₀ + s · A · B`, or `W₀` when no adapter is attached.
    pub fn effective_weight(&self) -> Matrix {
        match &self.adapter {
            None => self.base.stacked().clone(),
            Some(a) => {
                let mut w = self.base.stacked().clone();
                w.add_scaled_in_place(1.0, &a.delta())
                    .expect("adapter shape checked on attach");
                w
            }
        }
    }

    /// Folds the adapter update into the base weights.
    pub fn merge_adapter(&self) -> StackedAttentionWeights {
        StackedAttentionWeights::from_stacked(self.effective_weight())
            .expect("base rows are a multiple of three")
    }
}

pub fn effective_weight(aw: &AdaptedWeights) -> Matrix {
    aw.effective_weight()
}

pub fn merge_adapter(aw: &AdaptedWeights) -> StackedAttentionWeights {
    aw.merge_adapter()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::extract_common_basis_svd;
    use crate::linalg::test_util::random;

    fn base(d_model: usize, d_k: usize, seed: u64) -> StackedAttentionWeights {
        StackedAttentionWeights::from_stacked(random(3 * d_model, d_k, seed)).unwrap()
    }

    #[test]
    fn lora_starts_neutral() {
        let w = base(4, 6, 1);
        let ad = Adapter::init(InitMode::LoraZeroB, AdapterShape::of(&w), 2, 9, None).unwrap();
        assert_eq!(ad.b().max_abs(), 0.0);
        let aw = AdaptedWeights::new(w.clone(), Some(ad)).unwrap();
        assert_eq!(&aw.effective_weight(), w.stacked());
        assert_eq!(aw.merge_adapter(), w);
    }

    #[test]
    fn ones_give_constant_rows() {
        let w = base(3, 5, 2);
        let ad = Adapter::init(InitMode::AblateOnes, AdapterShape::of(&w), 2, 3, None).unwrap();
        assert!(ad.b().as_slice().iter().all(|x| *x == 1.0));
        let ab = ad.delta();
        for r in 0..ab.rows() {
            let row_sum: f64 = ad.a().row(r).iter().sum();
            for c in 0..ab.cols() {
                assert!((ab.get(r, c) - row_sum).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn common_basis_mode_copies_orthonormal_rows() {
        let w = base(4, 8, 3);
        let basis = extract_common_basis_svd(w.stacked(), 3).unwrap();
        let ad = Adapter::init(InitMode::CoraCommonBasis, AdapterShape::of(&w), 3, 1, Some(&basis)).unwrap();
        let g = ad.b().matmul_t(ad.b()).unwrap();
        assert!(g.max_abs_diff(&Matrix::identity(3)).unwrap() <= 1e-8);
    }

    #[test]
    fn basis_required_iff_common_basis_mode() {
        let w = base(4, 8, 3);
        let shape = AdapterShape::of(&w);
        let basis = extract_common_basis_svd(w.stacked(), 3).unwrap();
        assert!(Adapter::init(InitMode::CoraCommonBasis, shape, 3, 1, None).is_err());
        assert!(Adapter::init(InitMode::CoraCommonBasis, shape, 2, 1, Some(&basis)).is_err());
        assert!(Adapter::init(InitMode::LoraZeroB, shape, 3, 1, Some(&basis)).is_err());
        let pca = crate::extraction::extract_common_basis_pca(w.stacked(), 3).unwrap();
        assert!(Adapter::init(InitMode::CoraCommonBasis, shape, 3, 1, Some(&pca)).is_err());
    }

    #[test]
    fn random_b_is_seeded() {
        let shape = AdapterShape { rows: 12, cols: 9 };
        let a = Adapter::init(InitMode::AblateRandom, shape, 3, 5, None).unwrap();
        let b = Adapter::init(InitMode::AblateRandom, shape, 3, 5, None).unwrap();
        let c = Adapter::init(InitMode::AblateRandom, shape, 3, 6, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.b(), c.b());
    }

    #[test]
    fn effective_weight_matches_triple_loop() {
        let w = base(4, 7, 8);
        let shape = AdapterShape::of(&w);
        let ad = Adapter::from_parts(random(12, 4, 1), random(4, 7, 2), 0.7, false, InitMode::AblateRandom, 0).unwrap();
        let aw = AdaptedWeights::new(w.clone(), Some(ad.clone())).unwrap();
        let eff = aw.effective_weight();
        for i in 0..shape.rows {
            for j in 0..shape.cols {
                let mut s = 0.0;
                for k in 0..4 {
                    s += ad.a().get(i, k) * ad.b().get(k, j);
                }
                assert!((eff.get(i, j) - (w.stacked().get(i, j) + 0.7 * s)).abs() <= 1e-12);
            }
        }
        let zero_scale = AdaptedWeights::new(w.clone(), Some(ad.with_scale(0.0).unwrap())).unwrap();
        assert_eq!(&zero_scale.effective_weight(), w.stacked());
    }

    #[test]
    fn linear_in_scale_and_a() {
        let w = base(2, 5, 4);
        let a = random(6, 2, 5);
        let b = random(2, 5, 6);
        let delta = |a: &Matrix, s: f64| {
            let ad = Adapter::from_parts(a.clone(), b.clone(), s, false, InitMode::AblateRandom, 0).unwrap();
            AdaptedWeights::new(w.clone(), Some(ad))
                .unwrap()
                .effective_weight()
                .sub(w.stacked())
                .unwrap()
        };
        let d1 = delta(&a, 1.0);
        assert!(delta(&a, 2.5).max_abs_diff(&d1.scale(2.5)).unwrap() < 1e-12);
        assert!(delta(&a.scale(-3.0), 1.0).max_abs_diff(&d1.scale(-3.0)).unwrap() < 1e-12);
        let zero_a = Adapter::from_parts(Matrix::zeros(6, 2), b.clone(), 1.0, false, InitMode::AblateRandom, 0).unwrap();
        assert_eq!(
            &AdaptedWeights::new(w.clone(), Some(zero_a)).unwrap().effective_weight(),
            w.stacked()
        );
    }

    #[test]
    fn merge_then_fresh_zero_adapter_is_identity() {
        let w = base(3, 4, 7);
        let ad = Adapter::from_parts(random(9, 2, 1), random(2, 4, 2), 1.0, false, InitMode::AblateRandom, 0).unwrap();
        let merged = AdaptedWeights::new(w, Some(ad)).unwrap().merge_adapter();
        let fresh = Adapter::init(InitMode::LoraZeroB, AdapterShape::of(&merged), 2, 3, None).unwrap();
        let again = AdaptedWeights::new(merged.clone(), Some(fresh)).unwrap();
        assert_eq!(&again.effective_weight(), merged.stacked());
    }

    #[test]
    fn parameter_counts() {
        let shape = AdapterShape { rows: 24, cols: 8 };
        let ad = Adapter::init(InitMode::LoraZeroB, shape, 4, 0, None).unwrap();
        let open = ad.trainable_parameter_count();
        assert_eq!((open.trainable, open.total), (128, 128));
        let frozen = ad.with_b_frozen(true).trainable_parameter_count();
        assert_eq!((frozen.a_params, frozen.b_params, frozen.trainable, frozen.total), (96, 32, 96, 128));
        assert_eq!(frozen.b_fraction(), 0.25);
        let square = Adapter::init(InitMode::LoraZeroB, AdapterShape { rows: 24, cols: 24 }, 4, 0, None).unwrap();
        assert_eq!(square.trainable_parameter_count().b_fraction(), 0.5);
    }

    #[test]
    fn mismatched_attach_fails() {
        let w = base(3, 4, 7);
        let ad = Adapter::init(InitMode::LoraZeroB, AdapterShape { rows: 9, cols: 5 }, 2, 0, None).unwrap();
        assert!(AdaptedWeights::new(w, Some(ad)).is_err());
    }
}
