//! Steps shared by the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cora_core::extraction::{extract_common_basis_svd, merge_ensemble, variance_report, CommonBasis, Ensemble, VarianceReport};
use cora_core::{Fixture, Matrix};

use crate::cache::FixtureCache;
use crate::checkpoint::read_checkpoint;
use crate::config::RunConfigFile;

/// Every `*.ck` file directly inside `dir`, in file-name order.
pub fn checkpoint_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading ensemble directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "ck"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .ck checkpoints in {}", dir.display());
    }
    Ok(files)
}

/// Reads every checkpoint in `dir` as one ensemble member, labelled by the
/// checkpoint header.
pub fn load_ensemble(dir: &Path) -> anyhow::Result<Ensemble> {
    let mut members = Vec::new();
    for path in checkpoint_files(dir)? {
        let ck = read_checkpoint(&path).with_context(|| format!("reading {}", path.display()))?;
        members.push((ck.header.label.clone(), ck.to_attention()?));
    }
    Ok(Ensemble::new(members)?)
}

pub struct Extraction {
    pub w0: Matrix,
    pub basis: CommonBasis,
    pub report: VarianceReport,
}

pub fn extract(ensemble: &Ensemble, rank: usize, thresholds: &[f64]) -> anyhow::Result<Extraction> {
    let w0 = merge_ensemble(ensemble)?;
    let basis = extract_common_basis_svd(&w0, rank)?;
    let report = variance_report(&w0, thresholds)?;
    Ok(Extraction { w0, basis, report })
}

/// Fixture described by the config's `[fixture]` section, from the cache.
pub fn fixture_from_config(cfg: &RunConfigFile, cache: &FixtureCache) -> anyhow::Result<Fixture> {
    cache.load_or_build(&cfg.fixture).context("building ensemble fixture")
}

/// Inclusive seed ranges and lists: `1..5`, `1,2,9`, `4`.
pub fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed {x:?}")))
        .collect()
}
