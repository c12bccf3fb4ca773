//! Pretrained base plus an ensemble of fully fine-tuned members.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{generate, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::extraction::Ensemble;
use crate::model::{BlockSet, ModelConfig, ToyTransformer};
use crate::rng::{seeded, stream};
use crate::train::{train_loop, LoopSettings, OptimizerKind, RunMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub pool: Vec<TaskKind>,
    pub members: usize,
    /// Task the base is trained on before fine-tuning.
    pub source_task: TaskKind,
    /// Fine-tune every member on this one task (with distinct data seeds)
    /// instead of drawing distinct tasks from `pool`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub same_task: Option<TaskKind>,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub task_seq_len: usize,
    pub train_size: usize,
    pub eval_size: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            seed: 7,
            pool: TaskKind::ALL.to_vec(),
            members: 5,
            source_task: TaskKind::Reverse,
            same_task: None,
            pretrain_steps: 3000,
            finetune_steps: 1000,
            batch_size: 32,
            learning_rate: 3e-3,
            task_seq_len: 4,
            train_size: 1024,
            eval_size: 256,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.pool.is_empty() {
            return Err(Error::Config("fixture pool is empty".into()));
        }
        let available = if self.same_task.is_some() { usize::MAX } else { self.pool.len() };
        if self.members == 0 || self.members > available {
            return Err(Error::Config(format!(
                "members must be between 1 and {}, got {}",
                self.pool.len(),
                self.members
            )));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("batch_size and learning_rate must be positive".into()));
        }
        self.task(self.source_task, 0)?.validate()?;
        for k in self.selected_tasks() {
            self.task(k, 0)?.validate()?;
        }
        Ok(())
    }

    /// Task spec for `kind`, with train/eval sizes clamped to the input space.
    pub fn task(&self, kind: TaskKind, seed: u64) -> Result<TaskSpec> {
        let mut spec = TaskSpec {
            kind,
            vocab_size: self.model.vocab_size,
            seq_len: self.task_seq_len,
            seed,
            train_size: self.train_size,
            eval_size: self.eval_size,
            ..TaskSpec::default()
        };
        let space = usize::try_from(spec.input_space()).unwrap_or(usize::MAX);
        if spec.train_size + spec.eval_size > space {
            spec.eval_size = spec.eval_size.min(space / 4).max(1);
            spec.train_size = space.saturating_sub(spec.eval_size);
        }
        if spec.model_len() > self.model.seq_len {
            return Err(Error::Config(format!(
                "task {} needs {} positions but the model holds {}",
                kind.as_str(),
                spec.model_len(),
                self.model.seq_len
            )));
        }
        Ok(spec)
    }

    /// Member tasks: a seeded shuffle of the pool truncated to `members`,
    /// or `members` copies of `same_task`.
    pub fn selected_tasks(&self) -> Vec<TaskKind> {
        if let Some(k) = self.same_task {
            return alloc::vec![k; self.members];
        }
        let mut pool = self.pool.clone();
        pool.shuffle(&mut seeded(self.seed, stream::FIXTURE_SUBSET));
        pool.truncate(self.members);
        pool
    }

    fn settings(&self, steps: usize, seed: u64) -> LoopSettings {
        LoopSettings {
            steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: OptimizerKind::Adam,
            seed,
            eval_every: steps.max(1),
            clip_grad_norm: Some(5.0),
        }
    }

    fn member_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(1000 * (index as u64 + 1))
    }
}

fn fit(
    model: &mut ToyTransformer,
    cfg: &FixtureConfig,
    kind: TaskKind,
    seed: u64,
    steps: usize,
) -> Result<RunMetrics> {
    let spec = cfg.task(kind, seed)?;
    let data = generate(&spec)?;
    let full = BlockSet::full_model();
    let params = full.iter().filter_map(|b| model.param(b)).map(|m| m.as_slice().len()).sum();
    train_loop(
        model,
        &data.train,
        &data.eval,
        spec.separator(),
        full,
        &cfg.settings(steps, seed),
        params,
    )
}

/// Randomly initialised model trained on the source task.
pub fn pretrain_base(cfg: &FixtureConfig) -> Result<(ToyTransformer, RunMetrics)> {
    cfg.validate()?;
    let mut model = ToyTransformer::init(cfg.model, cfg.seed)?;
    let metrics = fit(&mut model, cfg, cfg.source_task, cfg.seed, cfg.pretrain_steps)?;
    Ok((model, metrics))
}

/// Copy of `base` with every block fine-tuned on `kind`.
pub fn finetune_member(
    cfg: &FixtureConfig,
    base: &ToyTransformer,
    index: usize,
    kind: TaskKind,
) -> Result<(ToyTransformer, RunMetrics)> {
    let mut model = base.merged();
    let metrics = fit(&mut model, cfg, kind, cfg.member_seed(index), cfg.finetune_steps)?;
    Ok((model, metrics))
}

pub fn member_label(index: usize, kind: TaskKind) -> String {
    format!("member{index}_{}", kind.as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub base: ToyTransformer,
    /// `(label, fine-tuned model)` in selection order.
    pub members: Vec<(String, ToyTransformer)>,
}

impl Fixture {
    pub fn ensemble(&self) -> Result<Ensemble> {
        Ensemble::new(
            self.members
                .iter()
                .map(|(l, m)| (l.clone(), m.attention.merge_adapter()))
                .collect(),
        )
    }
}

/// Pretrains a base and fine-tunes `cfg.members` copies of it.
pub fn build_ensemble_fixture(cfg: &FixtureConfig) -> Result<Fixture> {
    let (base, _) = pretrain_base(cfg)?;
    let mut members = Vec::with_capacity(cfg.members);
    for (i, kind) in cfg.selected_tasks().into_iter().enumerate() {
        let (m, _) = finetune_member(cfg, &base, i, kind)?;
        members.push((member_label(i, kind), m));
    }
    Ok(Fixture { base, members })
}
