//! Synthetic sequence-to-sequence tasks rendered as causal LM sequences.
//!
//! Token `vocab_size − 1` is the separator; the remaining `vocab_size − 1`
//! tokens form the task alphabet. A sample `(input, target)` is fed as
//! `input ++ [SEP] ++ target[..−1]` and the model is scored on predicting
//! `target` from the separator onward.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, stream};

pub mod fixture;

pub use fixture::{build_ensemble_fixture, Fixture, FixtureConfig};

/// Above this many distinct inputs, generation samples instead of enumerating.
const ENUMERATION_LIMIT: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Copy,
    Reverse,
    /// Input `[a, b]`, target `[(a + b) mod m]`.
    ModularAdd,
    SortTokens,
    /// `target_i = (input_i + offset) mod alphabet`.
    CopyOffset,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Copy,
        TaskKind::Reverse,
        TaskKind::ModularAdd,
        TaskKind::SortTokens,
        TaskKind::CopyOffset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::ModularAdd => "modular_add",
            TaskKind::SortTokens => "sort_tokens",
            TaskKind::CopyOffset => "copy_offset",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    /// Input length (ignored by `modular_add`, whose input is two tokens).
    pub seq_len: usize,
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
    /// Modulus for `modular_add`; defaults to the alphabet size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<usize>,
    /// Shift for `copy_offset`; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Copy,
            vocab_size: 9,
            seq_len: 4,
            seed: 0,
            train_size: 1024,
            eval_size: 256,
            modulus: None,
            offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
}

impl Sample {
    /// Tokens fed to the model and the per-position targets.
    pub fn lm_sequence(&self, sep: usize) -> (Vec<usize>, Vec<Option<usize>>) {
        let mut tokens = self.input.clone();
        tokens.push(sep);
        tokens.extend_from_slice(&self.target[..self.target.len() - 1]);
        let mut targets: Vec<Option<usize>> = alloc::vec![None; self.input.len()];
        targets.extend(self.target.iter().map(|t| Some(*t)));
        (tokens, targets)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn alphabet(&self) -> usize {
        self.vocab_size.saturating_sub(1)
    }

    pub fn separator(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn modulus(&self) -> usize {
        self.modulus.unwrap_or(self.alphabet())
    }

    pub fn offset(&self) -> usize {
        self.offset.unwrap_or(1)
    }

    pub fn input_len(&self) -> usize {
        match self.kind {
            TaskKind::ModularAdd => 2,
            _ => self.seq_len,
        }
    }

    pub fn target_len(&self) -> usize {
        match self.kind {
            TaskKind::ModularAdd => 1,
            _ => self.seq_len,
        }
    }

    /// Length of the token sequence the model sees.
    pub fn model_len(&self) -> usize {
        self.input_len() + self.target_len()
    }

    /// Number of distinct inputs, saturating at `u64::MAX`.
    pub fn input_space(&self) -> u64 {
        let symbols = match self.kind {
            TaskKind::ModularAdd => self.modulus(),
            _ => self.alphabet(),
        } as u64;
        let mut n: u64 = 1;
        for _ in 0..self.input_len() {
            n = n.saturating_mul(symbols);
        }
        n
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |requirement: String| {
            Err(Error::TaskRequirement {
                task: self.kind.as_str().into(),
                requirement,
            })
        };
        if self.alphabet() < 2 {
            return fail(format!("vocab_size >= 3 (alphabet of 2 plus separator), got {}", self.vocab_size));
        }
        if self.kind == TaskKind::ModularAdd {
            let m = self.modulus();
            if m < 2 || m > self.alphabet() {
                return fail(format!(
                    "vocab_size >= modulus + 1 = {} for operand/result symbols plus separator, got {}",
                    m + 1,
                    self.vocab_size
                ));
            }
        } else if self.seq_len == 0 {
            return fail("seq_len >= 1".into());
        }
        let wanted = (self.train_size as u64).saturating_add(self.eval_size as u64);
        if self.train_size == 0 || wanted > self.input_space() {
            return fail(format!(
                "train_size >= 1 and train_size + eval_size <= {} distinct inputs, got {}",
                self.input_space(),
                wanted
            ));
        }
        Ok(())
    }

    /// Target for an input under this task's rule.
    pub fn target_for(&self, input: &[usize]) -> Vec<usize> {
        match self.kind {
            TaskKind::Copy => input.to_vec(),
            TaskKind::Reverse => input.iter().rev().copied().collect(),
            TaskKind::ModularAdd => alloc::vec![(input[0] + input[1]) % self.modulus()],
            TaskKind::SortTokens => {
                let mut v = input.to_vec();
                v.sort_unstable();
                v
            }
            TaskKind::CopyOffset => input.iter().map(|x| (x + self.offset()) % self.alphabet()).collect(),
        }
    }

    fn decode_input(&self, mut index: u64) -> Vec<usize> {
        let symbols = match self.kind {
            TaskKind::ModularAdd => self.modulus(),
            _ => self.alphabet(),
        } as u64;
        let mut v = alloc::vec![0; self.input_len()];
        for slot in v.iter_mut().rev() {
            *slot = (index % symbols) as usize;
            index /= symbols;
        }
        v
    }
}

/// Disjoint train and eval sets, deterministic in `spec.seed`.
///
/// Small input spaces are enumerated and shuffled; large ones are sampled
/// without replacement.
pub fn generate(spec: &TaskSpec) -> Result<TaskData> {
    spec.validate()?;
    let rng = &mut seeded(spec.seed, stream::TASK_DATA);
    let space = spec.input_space();
    let wanted = spec.train_size + spec.eval_size;
    let indices: Vec<u64> = if space <= ENUMERATION_LIMIT {
        let mut all: Vec<u64> = (0..space).collect();
        all.shuffle(rng);
        all.truncate(wanted);
        all
    } else {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(wanted);
        while out.len() < wanted {
            let i = rng.random_range(0..space);
            if seen.insert(i) {
                out.push(i);
            }
        }
        out
    };
    let mut samples = indices.into_iter().map(|i| {
        let input = spec.decode_input(i);
        let target = spec.target_for(&input);
        Sample { input, target }
    });
    let train = samples.by_ref().take(spec.train_size).collect();
    let eval = samples.collect();
    Ok(TaskData {
        spec: spec.clone(),
        train,
        eval,
    })
}
