//! The `cora` command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use cora_core::extraction::{extract_common_basis_svd, variance_report, CommonBasis};
use cora_core::train::{evaluate, rank_sweep, run_training};
use cora_core::tasks::generate;
use cora_core::{Adapter, AdapterShape, Matrix, Regime, TaskKind, ToyTransformer, TrainConfig};

use crate::cache::{write_ensemble_dir, FixtureCache};
use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointKind};
use crate::config::RunConfigFile;
use crate::pipeline::{extract, fixture_from_config, load_ensemble, parse_seeds};
use crate::report::{save, write_curves, write_metrics, write_summary, write_table, write_variance};

#[derive(Debug, Parser)]
#[command(name = "cora", version, about = "Common-basis low-rank adapter laboratory", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Sources {
    /// Run configuration (TOML). Omitted sections use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixture cache directory [env: CORA_CACHE_DIR, default .cora-cache]
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Base model checkpoint; defaults to the fixture base.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Directory of ensemble member checkpoints; defaults to the fixture members.
    #[arg(long)]
    ensemble: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build (or load from cache) the pretrained base and fine-tuned ensemble.
    Fixture {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Also write `base.ck` and `ensemble/*.ck` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge an ensemble and extract its rank-r common basis.
    Extract {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        out: PathBuf,
        /// Variance counts CSV (method,threshold,count).
        #[arg(long)]
        variance_csv: Option<PathBuf>,
        /// Full cumulative variance curves CSV.
        #[arg(long)]
        curves_csv: Option<PathBuf>,
        /// Merged weight W₀ as an attention checkpoint.
        #[arg(long)]
        w0_out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.9, 0.95, 0.99, 0.999])]
        thresholds: Vec<f64>,
    },
    /// Train one adapter run from a config file.
    Train {
        #[command(flatten)]
        sources: Sources,
        /// Basis checkpoint for the cora regimes; extracted from the ensemble if omitted.
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Writes metrics.csv and model.ck here.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run every (rank, regime, seed) cell and tabulate final losses.
    Sweep {
        #[command(flatten)]
        sources: Sources,
        #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32])]
        ranks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["lora", "cora_fb", "cora_tb"])]
        regimes: Vec<String>,
        #[arg(long, default_value = "1..5")]
        seeds: String,
        /// Per-cell table CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-(rank, regime) and per-regime aggregate CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Per-step metrics of every cell.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Compare the three ablations with LoRA and both common-basis regimes.
    Ablate {
        #[command(flatten)]
        sources: Sources,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        #[arg(long, default_value = "1..5")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Explained-variance counts for a weight checkpoint.
    VarianceReport {
        /// Attention or model checkpoint holding W₀.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.9, 0.95, 0.99, 0.999])]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Loss and token accuracy of a model checkpoint on a task's eval set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        /// Task sizes and seed come from `[train.task]` here.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a checkpoint's header and blocks.
    Inspect {
        checkpoint: PathBuf,
        /// Write each block as `<dir>/<name>.csv`.
        #[arg(long)]
        export_csv: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfigFile> {
    match path {
        Some(p) => RunConfigFile::load(p).with_context(|| format!("config {}", p.display())),
        None => Ok(RunConfigFile::default()),
    }
}

fn parse_task(s: &str) -> anyhow::Result<TaskKind> {
    TaskKind::parse(s).with_context(|| {
        let names: Vec<&str> = TaskKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown task {s:?}, expected one of {}", names.join(", "))
    })
}

fn parse_regime(s: &str) -> anyhow::Result<Regime> {
    Regime::parse(s).with_context(|| {
        let names: Vec<&str> = Regime::ALL.iter().map(|r| r.as_str()).collect();
        format!("unknown regime {s:?}, expected one of {}", names.join(", "))
    })
}

/// Base model and merged ensemble weight W₀ for a run.
struct Resolved {
    cfg: RunConfigFile,
    base: ToyTransformer,
    w0: Option<Matrix>,
}

fn resolve(sources: &Sources, need_w0: bool) -> anyhow::Result<Resolved> {
    let cfg = load_config(sources.config.as_deref())?;
    let cache = FixtureCache::resolve(sources.cache_dir.as_deref());
    let mut fixture = None;
    let base = match &sources.base {
        Some(p) => read_checkpoint(p).with_context(|| format!("base {}", p.display()))?.to_model()?,
        None => {
            let f = fixture_from_config(&cfg, &cache)?;
            let b = f.base.clone();
            fixture = Some(f);
            b
        }
    };
    let w0 = if !need_w0 {
        None
    } else if let Some(dir) = &sources.ensemble {
        Some(cora_core::extraction::merge_ensemble(&load_ensemble(dir)?)?)
    } else {
        let f = match fixture {
            Some(f) => f,
            None => fixture_from_config(&cfg, &cache)?,
        };
        Some(cora_core::extraction::merge_ensemble(&f.ensemble()?)?)
    };
    Ok(Resolved { cfg, base, w0 })
}

fn describe_params(cfg: &TrainConfig, base: &ToyTransformer) -> anyhow::Result<String> {
    let a = Adapter::init(
        cora_core::InitMode::AblateZeros,
        AdapterShape::of(&base.attention.base),
        cfg.rank,
        0,
        None,
    )?
    .with_b_frozen(cfg.regime.b_frozen());
    let c = a.trainable_parameter_count();
    Ok(format!(
        "adapter parameters: A {} + B {} = {} ({}trainable {}); B is {:.4} of the adapter",
        c.a_params,
        c.b_params,
        c.total,
        if cfg.regime.b_frozen() { "B frozen, " } else { "" },
        c.trainable,
        c.b_fraction()
    ))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fixture { config, cache_dir, out } => {
            let cfg = load_config(config.as_deref())?;
            let cache = FixtureCache::resolve(cache_dir.as_deref());
            let fixture = fixture_from_config(&cfg, &cache)?;
            println!("fixture {}", cache.entry_dir(&cfg.fixture).display());
            for (label, _) in &fixture.members {
                println!("  {label}");
            }
            if let Some(dir) = out {
                write_ensemble_dir(&fixture, &dir, cfg.fixture.seed)?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Extract {
            ensemble,
            rank,
            out,
            variance_csv,
            curves_csv,
            w0_out,
            thresholds,
        } => {
            let e = load_ensemble(&ensemble)?;
            let x = extract(&e, rank, &thresholds)?;
            write_checkpoint(&out, &Checkpoint::from_basis(&x.basis, format!("basis_r{rank}"), 0))?;
            if let Some(p) = variance_csv {
                save(&p, |w| write_variance(w, &x.report))?;
            }
            if let Some(p) = curves_csv {
                save(&p, |w| write_curves(w, &x.report))?;
            }
            if let Some(p) = w0_out {
                let w = cora_core::extraction::StackedAttentionWeights::from_stacked(x.w0.clone())?;
                write_checkpoint(&p, &Checkpoint::from_attention(&w, "w0", 0))?;
            }
            println!(
                "extracted rank {rank} basis from {} members; variance captured {:.6}",
                e.len(),
                x.basis.variance_captured
            );
            if x.basis.exceeds_low_rank_guideline {
                println!("note: rank {rank} exceeds half of min{:?}", x.w0.shape());
            }
        }
        Command::Train { sources, basis, out_dir } => {
            let needs_basis = {
                let cfg = load_config(sources.config.as_deref())?;
                cfg.train.regime.needs_basis()
            };
            let r = resolve(&sources, needs_basis && basis.is_none())?;
            let tc = &r.cfg.train;
            let basis: Option<CommonBasis> = match (&basis, &r.w0) {
                (Some(p), _) => Some(read_checkpoint(p)?.to_basis()?),
                (None, Some(w0)) => Some(extract_common_basis_svd(w0, tc.rank)?),
                (None, None) => None,
            };
            println!("{}", describe_params(tc, &r.base)?);
            let out = run_training(tc, &r.base, basis.as_ref())?;
            std::fs::create_dir_all(&out_dir)?;
            save(&out_dir.join("metrics.csv"), |w| {
                write_metrics(w, &[(tc.rank, tc.regime, tc.seed, &out.metrics)])
            })?;
            write_checkpoint(
                &out_dir.join("model.ck"),
                &Checkpoint::from_model(&out.model, tc.regime.as_str(), tc.seed),
            )?;
            let s = &out.metrics.summary;
            println!(
                "{} r={} seed={}: final eval loss {:.6}, accuracy {:.4}",
                tc.regime.as_str(),
                tc.rank,
                tc.seed,
                s.final_eval_loss,
                s.final_eval_accuracy
            );
        }
        Command::Sweep {
            sources,
            ranks,
            regimes,
            seeds,
            out,
            summary,
            metrics,
        } => {
            let regimes = regimes.iter().map(|s| parse_regime(s)).collect::<anyhow::Result<Vec<_>>>()?;
            let seeds = parse_seeds(&seeds)?;
            let need_w0 = regimes.iter().any(|r| r.needs_basis());
            let r = resolve(&sources, need_w0)?;
            let table = rank_sweep(&r.cfg.train, &ranks, &regimes, &seeds, &r.base, r.w0.as_ref())?;
            finish_table(&table, &out, summary.as_deref())?;
            if let Some(p) = metrics {
                let runs: Vec<_> = table
                    .rows
                    .iter()
                    .filter_map(|row| {
                        row.result
                            .as_ref()
                            .ok()
                            .map(|m| (row.cell.rank, row.cell.regime, row.cell.seed, m))
                    })
                    .collect();
                save(&p, |w| write_metrics(w, &runs))?;
            }
            for (regime, seed, small, big) in table.capacity_anomalies(0.05) {
                println!(
                    "capacity anomaly: {} seed {seed} final train loss {big:.4} at the largest rank vs {small:.4} at the smallest",
                    regime.as_str()
                );
            }
        }
        Command::Ablate {
            sources,
            task,
            rank,
            seeds,
            out,
            summary,
        } => {
            let seeds = parse_seeds(&seeds)?;
            let mut r = resolve(&sources, true)?;
            if let Some(t) = task {
                r.cfg.train.task.kind = parse_task(&t)?;
            }
            let table = rank_sweep(&r.cfg.train, &[rank], &Regime::ALL, &seeds, &r.base, r.w0.as_ref())?;
            finish_table(&table, &out, summary.as_deref())?;
        }
        Command::VarianceReport {
            weights,
            thresholds,
            out,
            curves,
        } => {
            let w = read_checkpoint(&weights)?.to_attention()?;
            let report = variance_report(w.stacked(), &thresholds)?;
            save(&out, |o| write_variance(o, &report))?;
            if let Some(p) = curves {
                save(&p, |o| write_curves(o, &report))?;
            }
            for row in &report.rows {
                println!("{} {} {}", row.method.as_str(), row.threshold, row.count);
            }
        }
        Command::Eval { checkpoint, task, config } => {
            let cfg = load_config(config.as_deref())?;
            let model = read_checkpoint(&checkpoint)?.to_model()?;
            let mut spec = cfg.train.task.clone();
            spec.kind = parse_task(&task)?;
            spec.vocab_size = model.config().vocab_size;
            let data = generate(&spec)?;
            let (loss, acc) = evaluate(&model, &data.eval, spec.separator())?;
            println!("task={} loss={loss} accuracy={acc}", spec.kind.as_str());
        }
        Command::Inspect { checkpoint, export_csv } => {
            let ck = read_checkpoint(&checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&ck.header)?);
            if ck.header.kind == CheckpointKind::Model {
                if let Some(a) = &ck.to_model()?.attention.adapter {
                    let c = a.trainable_parameter_count();
                    println!("adapter B share {:.4} ({} of {})", c.b_fraction(), c.b_params, c.total);
                }
            }
            if let Some(dir) = export_csv {
                std::fs::create_dir_all(&dir)?;
                for (name, m) in &ck.blocks {
                    save(&dir.join(format!("{name}.csv")), |w| {
                        let mut csv = csv::WriterBuilder::new()
                            .has_headers(false)
                            .terminator(csv::Terminator::Any(b'\n'))
                            .from_writer(w);
                        for r in 0..m.rows() {
                            csv.write_record(m.row(r).iter().map(|x| x.to_string()))?;
                        }
                        csv.flush()?;
                        Ok(())
                    })?;
                }
                println!("exported {} blocks to {}", ck.blocks.len(), dir.display());
            }
        }
    }
    Ok(())
}

fn finish_table(table: &cora_core::SweepTable, out: &Path, summary: Option<&Path>) -> anyhow::Result<()> {
    save(out, |w| write_table(w, &table.rows))?;
    let agg = table.aggregates();
    if let Some(p) = summary {
        save(p, |w| write_summary(w, &agg))?;
    }
    for a in agg.iter().filter(|a| a.rank.is_none()) {
        println!(
            "{:<22} mean final eval loss {:.6} over {} runs ({} failed)",
            a.regime.as_str(),
            a.mean_final_eval_loss,
            a.completed,
            a.failed
        );
    }
    let failed = table.rows.iter().filter(|r| r.result.is_err()).count();
    if failed == table.rows.len() {
        bail!("all {failed} runs failed");
    }
    Ok(())
}
