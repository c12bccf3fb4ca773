//! Seeded adapter training under the six regimes, and rank sweeps.

mod optim;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterShape, InitMode};
use crate::error::{Error, Result};
use crate::extraction::{extract_common_basis_svd, CommonBasis};
use crate::linalg::Matrix;
use crate::model::{BlockSet, ParamBlock, ToyTransformer};
use crate::rng::{seeded, stream};
use crate::tasks::{generate, Sample, TaskSpec};

pub use optim::{optimizer_step, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

/// Largest number of samples scored per eval pass for the train-loss probe.
const TRAIN_PROBE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Lora,
    /// Common basis as `B`, frozen.
    CoraFb,
    /// Common basis as `B`, trained with `A`.
    CoraTb,
    AblateZerosFrozen,
    AblateOnesFrozen,
    AblateRandomFrozen,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Lora,
        Regime::CoraFb,
        Regime::CoraTb,
        Regime::AblateZerosFrozen,
        Regime::AblateOnesFrozen,
        Regime::AblateRandomFrozen,
    ];

    pub fn init_mode(self) -> InitMode {
        match self {
            Regime::Lora => InitMode::LoraZeroB,
            Regime::CoraFb | Regime::CoraTb => InitMode::CoraCommonBasis,
            Regime::AblateZerosFrozen => InitMode::AblateZeros,
            Regime::AblateOnesFrozen => InitMode::AblateOnes,
            Regime::AblateRandomFrozen => InitMode::AblateRandom,
        }
    }

    pub fn b_frozen(self) -> bool {
        !matches!(self, Regime::Lora | Regime::CoraTb)
    }

    pub fn needs_basis(self) -> bool {
        self.init_mode() == InitMode::CoraCommonBasis
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Lora => "lora",
            Regime::CoraFb => "cora_fb",
            Regime::CoraTb => "cora_tb",
            Regime::AblateZerosFrozen => "ablate_zeros_frozen",
            Regime::AblateOnesFrozen => "ablate_ones_frozen",
            Regime::AblateRandomFrozen => "ablate_random_frozen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub rank: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub task: TaskSpec,
    pub eval_every: usize,
    /// Multiplier `s` on the adapter update.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Rescale gradients whose global norm exceeds this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_grad_norm: Option<f64>,
    /// Also train embeddings, feed-forward and output weights.
    #[serde(default)]
    pub train_non_adapter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Lora,
            rank: 8,
            steps: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 1,
            task: TaskSpec::default(),
            eval_every: 100,
            scale: 1.0,
            clip_grad_norm: None,
            train_non_adapter: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be >= 0, got {}", self.scale));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip_grad_norm must be > 0, got {c}"));
            }
        }
        self.task.validate()
    }

    /// Blocks updated by this configuration.
    pub fn trainable_blocks(&self) -> BlockSet {
        let mut s = BlockSet::adapter(self.regime.b_frozen());
        if self.train_non_adapter {
            for b in [
                ParamBlock::Embed,
                ParamBlock::PosEmbed,
                ParamBlock::FfnW1,
                ParamBlock::FfnW2,
                ParamBlock::OutProj,
            ] {
                s = s.with(b);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub trainable_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_eval_loss: f64,
    pub final_eval_loss: f64,
    pub final_train_loss: f64,
    pub final_eval_accuracy: f64,
    pub wall_steps: usize,
    pub trainable_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<MetricRow>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    /// Final model with its adapter attached.
    pub model: ToyTransformer,
}

/// Flattened token batch for equal-length samples.
pub struct Batch {
    tokens: Vec<Vec<usize>>,
    targets: Vec<Option<usize>>,
}

impl Batch {
    pub fn new<'a>(samples: impl IntoIterator<Item = &'a Sample>, sep: usize) -> Self {
        let mut tokens = Vec::new();
        let mut targets = Vec::new();
        for s in samples {
            let (t, y) = s.lm_sequence(sep);
            tokens.push(t);
            targets.extend(y);
        }
        Self { tokens, targets }
    }

    pub fn seqs(&self) -> Vec<&[usize]> {
        self.tokens.iter().map(|t| t.as_slice()).collect()
    }

    pub fn targets(&self) -> &[Option<usize>] {
        &self.targets
    }
}

/// Mean target-token cross-entropy and token accuracy over `samples`.
pub fn evaluate(model: &ToyTransformer, samples: &[Sample], sep: usize) -> Result<(f64, f64)> {
    let batch = Batch::new(samples, sep);
    let fwd = model.forward_batch(&batch.seqs())?;
    let (sum, count) = fwd.cross_entropy_sum(batch.targets())?;
    if count == 0 {
        return Err(Error::Model("no target positions".into()));
    }
    let correct = batch
        .targets()
        .iter()
        .enumerate()
        .filter(|(r, t)| t.is_some_and(|t| fwd.argmax(*r) == t))
        .count();
    Ok((sum / count as f64, correct as f64 / count as f64))
}

/// Hyperparameters shared by adapter runs and full fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eval_every: usize,
    pub clip_grad_norm: Option<f64>,
}

/// Trains `model` in place on `train`, updating only `trainable`, and
/// records an eval row at step 0, every `eval_every` steps and at the end.
pub fn train_loop(
    model: &mut ToyTransformer,
    train: &[Sample],
    eval: &[Sample],
    sep: usize,
    trainable: BlockSet,
    settings: &LoopSettings,
    trainable_params: usize,
) -> Result<RunMetrics> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Config("train and eval sets must be non-empty".into()));
    }
    let mut optimizer = Optimizer::new(settings.optimizer, settings.learning_rate)?;
    let rng = &mut seeded(settings.seed, stream::BATCHES);
    let probe = &train[..train.len().min(TRAIN_PROBE)];
    let mut rows = Vec::new();

    let record = |model: &ToyTransformer, step: usize, rows: &mut Vec<MetricRow>| -> Result<()> {
        let (train_loss, _) = evaluate(model, probe, sep)?;
        let (eval_loss, eval_accuracy) = evaluate(model, eval, sep)?;
        if !eval_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: if eval_loss.is_finite() { train_loss } else { eval_loss },
            });
        }
        rows.push(MetricRow {
            step,
            train_loss,
            eval_loss,
            eval_accuracy,
            trainable_params,
        });
        Ok(())
    };

    record(model, 0, &mut rows)?;
    for step in 1..=settings.steps {
        let picks: Vec<&Sample> = (0..settings.batch_size)
            .map(|_| &train[rng.random_range(0..train.len())])
            .collect();
        let batch = Batch::new(picks, sep);
        let fwd = model.forward_batch(&batch.seqs())?;
        let (loss, mut grads) = model.backward(&fwd, batch.targets(), trainable)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if let Some(max) = settings.clip_grad_norm {
            let norm = grads.global_norm();
            if norm > max {
                grads.scale_in_place(max / norm);
            }
        }
        optimizer.step(model, &grads)?;
        if step % settings.eval_every == 0 || step == settings.steps {
            record(model, step, &mut rows)?;
        }
    }

    let last = rows.last().expect("initial row is always recorded");
    let summary = RunSummary {
        best_eval_loss: rows.iter().map(|r| r.eval_loss).fold(f64::INFINITY, f64::min),
        final_eval_loss: last.eval_loss,
        final_train_loss: last.train_loss,
        final_eval_accuracy: last.eval_accuracy,
        wall_steps: settings.steps,
        trainable_params,
    };
    Ok(RunMetrics { rows, summary })
}

/// Attaches a fresh adapter for `cfg.regime` to `base` and trains it.
///
/// `basis` is required by the `cora_*` regimes and ignored otherwise. Any
/// adapter already on `base` is merged into its weights first. The result
/// depends only on `(cfg, base, basis)`.
pub fn run_training(cfg: &TrainConfig, base: &ToyTransformer, basis: Option<&CommonBasis>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mc = base.config();
    if cfg.task.vocab_size != mc.vocab_size {
        return Err(Error::Config(format!(
            "task vocabulary {} differs from model vocabulary {}",
            cfg.task.vocab_size, mc.vocab_size
        )));
    }
    if cfg.task.model_len() > mc.seq_len {
        return Err(Error::Config(format!(
            "task sequences of {} tokens exceed model context {}",
            cfg.task.model_len(),
            mc.seq_len
        )));
    }
    let basis = if cfg.regime.needs_basis() {
        Some(basis.ok_or_else(|| Error::Config(format!("regime {} needs a common basis", cfg.regime.as_str())))?)
    } else {
        None
    };

    let mut model = base.merged();
    let adapter = Adapter::init(
        cfg.regime.init_mode(),
        AdapterShape::of(&model.attention.base),
        cfg.rank,
        cfg.seed,
        basis,
    )?
    .with_b_frozen(cfg.regime.b_frozen())
    .with_scale(cfg.scale)?;
    let mut trainable_params = adapter.trainable_parameter_count().trainable;
    model.attention.adapter = Some(adapter);

    let trainable = cfg.trainable_blocks();
    for b in trainable.iter() {
        if !matches!(b, ParamBlock::AdapterA | ParamBlock::AdapterB) {
            trainable_params += model.param(b).map_or(0, |m| m.as_slice().len());
        }
    }

    let data = generate(&cfg.task)?;
    let settings = LoopSettings {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        optimizer: cfg.optimizer,
        seed: cfg.seed,
        eval_every: cfg.eval_every,
        clip_grad_norm: cfg.clip_grad_norm,
    };
    let metrics = train_loop(
        &mut model,
        &data.train,
        &data.eval,
        cfg.task.separator(),
        trainable,
        &settings,
        trainable_params,
    )?;
    Ok(TrainOutcome { metrics, model })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepCell {
    pub rank: usize,
    pub regime: Regime,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    /// Metrics of a completed cell, or the error that stopped it.
    pub result: core::result::Result<RunMetrics, String>,
}

/// Cross product in rank-major, then regime, then seed order.
pub fn sweep_cells(ranks: &[usize], regimes: &[Regime], seeds: &[u64]) -> Result<Vec<SweepCell>> {
    if ranks.is_empty() || regimes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one rank, regime and seed".into()));
    }
    let mut cells = Vec::with_capacity(ranks.len() * regimes.len() * seeds.len());
    for &rank in ranks {
        for &regime in regimes {
            for &seed in seeds {
                cells.push(SweepCell { rank, regime, seed });
            }
        }
    }
    Ok(cells)
}

/// Runs one cell of a sweep from `template`.
pub fn run_cell(
    template: &TrainConfig,
    cell: SweepCell,
    base: &ToyTransformer,
    basis: Option<&CommonBasis>,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        regime: cell.regime,
        rank: cell.rank,
        seed: cell.seed,
        ..template.clone()
    };
    run_training(&cfg, base, basis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// `None` aggregates across all ranks.
    pub rank: Option<usize>,
    pub regime: Regime,
    pub completed: usize,
    pub failed: usize,
    pub mean_final_eval_loss: f64,
    pub min_final_eval_loss: f64,
    pub max_final_eval_loss: f64,
    pub mean_final_eval_accuracy: f64,
}

impl SweepTable {
    fn aggregate_where(&self, rank: Option<usize>, regime: Regime) -> Option<Aggregate> {
        let cells: Vec<&SweepRow> = self
            .rows
            .iter()
            .filter(|r| r.cell.regime == regime && rank.is_none_or(|k| r.cell.rank == k))
            .collect();
        if cells.is_empty() {
            return None;
        }
        let done: Vec<&RunSummary> = cells
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(|m| &m.summary))
            .collect();
        let n = done.len() as f64;
        let losses = done.iter().map(|s| s.final_eval_loss);
        Some(Aggregate {
            rank,
            regime,
            completed: done.len(),
            failed: cells.len() - done.len(),
            mean_final_eval_loss: losses.clone().sum::<f64>() / n,
            min_final_eval_loss: losses.clone().fold(f64::INFINITY, f64::min),
            max_final_eval_loss: losses.fold(f64::NEG_INFINITY, f64::max),
            mean_final_eval_accuracy: done.iter().map(|s| s.final_eval_accuracy).sum::<f64>() / n,
        })
    }

    /// Mean/min/max final eval loss per (rank, regime), then per regime.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut ranks: Vec<usize> = self.rows.iter().map(|r| r.cell.rank).collect();
        ranks.dedup();
        let mut regimes: Vec<Regime> = Vec::new();
        for r in &self.rows {
            if !regimes.contains(&r.cell.regime) {
                regimes.push(r.cell.regime);
            }
        }
        let mut out = Vec::new();
        for &rank in &ranks {
            for &regime in &regimes {
                out.extend(self.aggregate_where(Some(rank), regime));
            }
        }
        for &regime in &regimes {
            out.extend(self.aggregate_where(None, regime));
        }
        out
    }

    pub fn regime_mean(&self, regime: Regime) -> Option<f64> {
        self.aggregate_where(None, regime).map(|a| a.mean_final_eval_loss)
    }

    /// Cells where the largest rank ended with a train loss more than
    /// `tolerance` nats above the smallest rank, for the same regime and
    /// seed. Reported, not enforced.
    pub fn capacity_anomalies(&self, tolerance: f64) -> Vec<(Regime, u64, f64, f64)> {
        let (Some(lo), Some(hi)) = (
            self.rows.iter().map(|r| r.cell.rank).min(),
            self.rows.iter().map(|r| r.cell.rank).max(),
        ) else {
            return Vec::new();
        };
        let final_train = |rank: usize, regime: Regime, seed: u64| {
            self.rows
                .iter()
                .find(|r| r.cell == SweepCell { rank, regime, seed })
                .and_then(|r| r.result.as_ref().ok())
                .map(|m| m.summary.final_train_loss)
        };
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| r.cell.rank == hi) {
            if let (Some(big), Some(small)) = (
                final_train(hi, r.cell.regime, r.cell.seed),
                final_train(lo, r.cell.regime, r.cell.seed),
            ) {
                if big > small + tolerance {
                    out.push((r.cell.regime, r.cell.seed, small, big));
                }
            }
        }
        out
    }
}

/// Common bases for each rank, extracted once from `w0`.
pub fn bases_for_ranks(w0: &Matrix, ranks: &[usize]) -> Vec<(usize, Result<CommonBasis>)> {
    let mut out: Vec<(usize, Result<CommonBasis>)> = Vec::new();
    for &r in ranks {
        if out.iter().all(|(k, _)| *k != r) {
            out.push((r, extract_common_basis_svd(w0, r)));
        }
    }
    out
}

/// Runs every (rank, regime, seed) cell. Cells that fail are recorded with
/// their error and the sweep carries on.
pub fn rank_sweep(
    template: &TrainConfig,
    ranks: &[usize],
    regimes: &[Regime],
    seeds: &[u64],
    base: &ToyTransformer,
    w0: Option<&Matrix>,
) -> Result<SweepTable> {
    let cells = sweep_cells(ranks, regimes, seeds)?;
    let bases = w0.map(|w| bases_for_ranks(w, ranks)).unwrap_or_default();
    let rows = cells
        .into_iter()
        .map(|cell| {
            let basis = if cell.regime.needs_basis() {
                match bases.iter().find(|(k, _)| *k == cell.rank) {
                    Some((_, Ok(b))) => Some(b),
                    Some((_, Err(e))) => {
                        return SweepRow {
                            cell,
                            result: Err(e.to_string()),
                        }
                    }
                    None => None,
                }
            } else {
                None
            };
            SweepRow {
                cell,
                result: run_cell(template, cell, base, basis)
                    .map(|o| o.metrics)
                    .map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(SweepTable { rows })
}
