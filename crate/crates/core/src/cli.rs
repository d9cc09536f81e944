//! The `losnet` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{grouped_split, kfold_splits, EvalReport, EvalSummary};
use crate::gsf::{GsfConfig, Method, Scale};
use crate::io::format::{read_records, write_records};
use crate::io::synth::{gen_synthetic, SynthConfig};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::model::config::TrainConfig;
use crate::model::network::predict_scores;
use crate::model::train::{finetune, train, TrainHistory};
use crate::signature::LosRecord;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "losnet", version, about = "Score LLM output signatures and train LOS-Net detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitMode {
    Grouped,
    Kfold,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score records with a heuristic detector.
    Score {
        #[arg(long, value_parser = clap::value_parser!(Method))]
        method: Method,
        #[arg(long, default_value = "prob", value_parser = clap::value_parser!(Scale))]
        scale: Scale,
        #[arg(long, default_value_t = 20.0)]
        k_frac: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector from scratch.
    Train {
        /// key=value lines over the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Continue training a checkpoint on new data (no early stopping).
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        /// Output checkpoint; defaults to `<ckpt>.ft`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score records with a trained detector.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// AUC report over one or more score files.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        /// Text report; a JSON copy is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a record file into train/test (grouped) or k folds.
    Split {
        #[arg(long, value_enum)]
        mode: SplitMode,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Write synthetic records with a planted signal of strength `delta`.
    GenSynth {
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_per_class: usize,
        #[arg(long, default_value_t = 1000)]
        vocab: usize,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        min_len: usize,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
    },
    /// Mean captured probability mass for several top-K widths.
    InspectMass {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,50,100,500,1000")]
        k_list: Vec<usize>,
    },
    /// Check every record invariant.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

/// One row of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub record_index: usize,
    pub group_id: String,
    pub label: Option<u8>,
    pub score: f64,
}

pub fn write_scores(path: &Path, records: &[LosRecord], scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (i, (r, &s)) in records.iter().zip(scores).enumerate() {
        w.serialize(ScoreRow {
            record_index: i,
            group_id: r.group_id.clone().unwrap_or_default(),
            label: r.label.map(u8::from),
            score: s,
        })
        .map_err(csv_err)?;
    }
    if records.is_empty() {
        w.write_record(["record_index", "group_id", "label", "score"]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Domain(format!("score file: {other:?}")),
    }
}

fn print_history(h: &TrainHistory) {
    println!("epoch=0 val_auc={:.6}", h.initial_val_auc);
    for e in &h.epochs {
        println!("epoch={} train_loss={:.6} val_auc={:.6} lr={:.3e}", e.epoch, e.train_loss, e.val_auc, e.lr);
    }
    println!("best_epoch={} best_val_auc={:.6} stopped_early={}", h.best_epoch, h.best_val_auc, h.stopped_early);
}

fn method_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scores".into(), |s| s.to_string_lossy().into_owned())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Score { method, scale, k_frac, input, out } => {
            let cfg = GsfConfig { k_frac, scale, ..GsfConfig::default() };
            cfg.validate()?;
            let records = read_records(&input)?;
            let scores: Vec<f64> = records.par_iter().map(|r| method.score(r, &cfg)).collect::<Result<_>>()?;
            write_scores(&out, &records, &scores)
        }
        Command::Train { config, train: tr, val, ckpt, seed } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::from_kv_text(&fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (params, hist) = train(&read_records(&tr)?, &read_records(&val)?, &cfg)?;
            print_history(&hist);
            save_checkpoint(&Checkpoint { config: cfg, params }, ckpt)
        }
        Command::Finetune { ckpt, train: tr, val, epochs, out, seed } => {
            let Checkpoint { mut config, params } = load_checkpoint(&ckpt)?;
            config.epochs = epochs;
            if let Some(s) = seed {
                config.seed = s;
            }
            let (params, hist) = finetune(&params, &read_records(&tr)?, &read_records(&val)?, &config)?;
            print_history(&hist);
            let out = out.unwrap_or_else(|| {
                let mut p = ckpt.into_os_string();
                p.push(".ft");
                p.into()
            });
            save_checkpoint(&Checkpoint { config, params }, out)
        }
        Command::Predict { ckpt, input, out } => {
            let ck = load_checkpoint(ckpt)?;
            let records = read_records(&input)?;
            let scores = predict_scores(&ck.params, &records)?;
            write_scores(&out, &records, &scores)
        }
        Command::Eval { scores, out } => {
            let mut runs = Vec::new();
            for path in &scores {
                let rows = read_scores(path)?;
                let labels = rows
                    .iter()
                    .map(|r| match r.label {
                        Some(0) => Ok(false),
                        Some(1) => Ok(true),
                        _ => Err(Error::Domain(format!(
                            "{}: record {} has no 0/1 label",
                            path.display(),
                            r.record_index
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let vals: Vec<f64> = rows.iter().map(|r| r.score).collect();
                runs.push(EvalReport::new(&method_name(path), &path.display().to_string(), &vals, &labels)?);
            }
            let summary = EvalSummary::new(runs);
            let text = summary.to_text();
            print!("{text}");
            fs::write(&out, text)?;
            let mut json_path = out.into_os_string();
            json_path.push(".json");
            fs::write(json_path, serde_json::to_string_pretty(&summary).map_err(|e| Error::Domain(e.to_string()))?)?;
            Ok(())
        }
        Command::Split { mode, seed, input, out_dir, train_frac, folds } => {
            let records = read_records(&input)?;
            fs::create_dir_all(&out_dir)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
            match mode {
                SplitMode::Grouped => {
                    let (tr, te) = grouped_split(&records, train_frac, seed)?;
                    write_records(&pick(&tr), out_dir.join("train.los"))?;
                    write_records(&pick(&te), out_dir.join("test.los"))?;
                    println!("train={} test={}", tr.len(), te.len());
                }
                SplitMode::Kfold => {
                    for (f, fold) in kfold_splits(records.len(), folds, seed)?.iter().enumerate() {
                        write_records(&pick(&fold.train), out_dir.join(format!("fold{f}_train.los")))?;
                        write_records(&pick(&fold.val), out_dir.join(format!("fold{f}_val.los")))?;
                        write_records(&pick(&fold.test), out_dir.join(format!("fold{f}_test.los")))?;
                        println!("fold={f} train={} val={} test={}", fold.train.len(), fold.val.len(), fold.test.len());
                    }
                }
            }
            Ok(())
        }
        Command::GenSynth { delta, seed, out, n_per_class, vocab, k, min_len, max_len } => {
            let cfg = SynthConfig { n_per_class, min_len, max_len, vocab, k, delta, seed, ..SynthConfig::default() };
            write_records(&gen_synthetic(&cfg)?, out)
        }
        Command::InspectMass { input, k_list } => {
            let records = read_records(&input)?;
            if records.is_empty() {
                return Err(Error::Domain("no records".into()));
            }
            println!("k,mass");
            for k in k_list {
                let masses = records.iter().map(|r| r.mass_at(k)).collect::<Result<Vec<_>>>()?;
                println!("{k},{:.8}", masses.iter().sum::<f64>() / masses.len() as f64);
            }
            Ok(())
        }
        Command::Validate { input } => {
            let records = read_records(&input)?;
            let mut bad = 0;
            for (i, r) in records.iter().enumerate() {
                for v in r.violations() {
                    eprintln!("record {i}: {v}");
                    bad += 1;
                }
            }
            if bad > 0 {
                return Err(Error::Domain(format!("{bad} violations in {} records", records.len())));
            }
            println!("ok records={}", records.len());
            Ok(())
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("LOS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}
