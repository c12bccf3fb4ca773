//! On-disk cache for ensemble fixtures.
//!
//! Entries live under `<dir>/<key>/`, where the key is the SHA-256 of the
//! fixture config as JSON. Each checkpoint is written atomically, so an
//! interrupted build resumes from the members already on disk.

use std::fs;
use std::path::{Path, PathBuf};

use cora_core::tasks::fixture::{finetune_member, member_label, pretrain_base};
use cora_core::{Fixture, FixtureConfig, ToyTransformer};
use sha2::{Digest, Sha256};

use crate::checkpoint::{read_checkpoint, write_atomic, write_checkpoint, Checkpoint};

pub const CACHE_ENV: &str = "CORA_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".cora-cache";

#[derive(Debug, Clone)]
pub struct FixtureCache {
    dir: PathBuf,
}

impl FixtureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `flag`, else `$CORA_CACHE_DIR`, else `.cora-cache`.
    pub fn resolve(flag: Option<&Path>) -> Self {
        match flag {
            Some(p) => Self::new(p),
            None => Self::new(std::env::var_os(CACHE_ENV).map_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR), PathBuf::from)),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(cfg: &FixtureConfig) -> String {
        let json = serde_json::to_vec(cfg).expect("fixture config serializes");
        Sha256::digest(&json).iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn entry_dir(&self, cfg: &FixtureConfig) -> PathBuf {
        self.dir.join(Self::key(cfg))
    }

    fn load_or<F>(path: &Path, label: &str, seed: u64, build: F) -> anyhow::Result<ToyTransformer>
    where
        F: FnOnce() -> cora_core::Result<ToyTransformer>,
    {
        if path.exists() {
            log::debug!("fixture cache hit {}", path.display());
            return Ok(read_checkpoint(path)?.to_model()?);
        }
        log::info!("training {label}");
        let model = build()?;
        write_checkpoint(path, &Checkpoint::from_model(&model, label, seed))?;
        Ok(model)
    }

    /// Loads the fixture for `cfg`, training and storing any missing part.
    pub fn load_or_build(&self, cfg: &FixtureConfig) -> anyhow::Result<Fixture> {
        cfg.validate()?;
        let dir = self.entry_dir(cfg);
        fs::create_dir_all(&dir)?;
        let config_path = dir.join("fixture.json");
        if !config_path.exists() {
            write_atomic(&config_path, serde_json::to_string_pretty(cfg)?.as_bytes())?;
        }
        let base = Self::load_or(&dir.join("base.ck"), "base", cfg.seed, || {
            pretrain_base(cfg).map(|(m, _)| m)
        })?;
        let mut members = Vec::with_capacity(cfg.members);
        for (i, kind) in cfg.selected_tasks().into_iter().enumerate() {
            let label = member_label(i, kind);
            let model = Self::load_or(&dir.join(format!("{label}.ck")), &label, cfg.seed, || {
                finetune_member(cfg, &base, i, kind).map(|(m, _)| m)
            })?;
            members.push((label, model));
        }
        Ok(Fixture { base, members })
    }
}

/// Writes the fixture as an ensemble directory: `base.ck` plus one model
/// checkpoint per member under `ensemble/`.
pub fn write_ensemble_dir(fixture: &Fixture, dir: &Path, seed: u64) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_checkpoint(&dir.join("base.ck"), &Checkpoint::from_model(&fixture.base, "base", seed))?;
    let members = dir.join("ensemble");
    fs::create_dir_all(&members)?;
    for (label, m) in &fixture.members {
        write_checkpoint(&members.join(format!("{label}.ck")), &Checkpoint::from_model(m, label.as_str(), seed))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_tracks_config() {
        let a = FixtureConfig::default();
        let mut b = a.clone();
        assert_eq!(FixtureCache::key(&a), FixtureCache::key(&b));
        b.finetune_steps += 1;
        assert_ne!(FixtureCache::key(&a), FixtureCache::key(&b));
        assert_eq!(FixtureCache::key(&a).len(), 32);
    }
}
