use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use maskctc::decoder::DecodeConfig;
use maskctc::harness::experiment::{decode_corpus, evaluate, loss_csv, report_paths, write_report};
use maskctc::harness::{
    gen_data, load_checkpoint, read_dataset, run_experiment, save_checkpoint, scatter_export, train_model,
    write_dataset, Dataset, ExperimentReport, ExperimentTag, LossKind, RunConfig, ScatterConfig, ScatterInput, Split,
    TrainSummary,
};

#[derive(Parser)]
#[command(
    name = "maskctc",
    version,
    about = "Mask CTC with aligned cross entropy on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for data, initialization, batching and masking.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DataArg {
    /// Dataset written by `gen-data`. Generated in memory from the config when absent.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev/test corpus.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one system and save its checkpoint and loss curve.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        tag: Option<ExperimentTag>,
    },
    /// Decode a split with a checkpoint; writes hypotheses and a JSONL trace.
    Decode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Decoding iterations; defaults to the config's decode setting.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// WER of a checkpoint on dev and test at every configured iteration count.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tag: Option<ExperimentTag>,
    },
    /// Per-utterance decoder loss vs edit distance, with Pearson correlation.
    Scatter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "axe")]
        loss_kind: LossKind,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Decoder input for the loss: all_masked or train_mask.
        #[arg(long, default_value = "all_masked")]
        input: ScatterInput,
    },
    /// Train and evaluate systems end to end (all three when no tag is given).
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        tag: Option<ExperimentTag>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).map_err(|e| maskctc::Error::InvalidConfig(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(cfg: &RunConfig, data: &DataArg) -> Result<Dataset> {
    Ok(match &data.data_dir {
        Some(dir) => read_dataset(dir).with_context(|| format!("reading dataset from {}", dir.display()))?,
        None => gen_data(&cfg.synth)?,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            let ds = gen_data(&cfg.synth)?;
            write_dataset(&ds, &cfg.out_dir)?;
            println!("wrote dataset to {}", cfg.out_dir.display());
        }
        Command::Train { common, data, tag } => {
            let mut cfg = load_config(&common)?;
            if let Some(tag) = tag {
                cfg.tag = tag;
            }
            let ds = dataset(&cfg, &data)?;
            let (model, report) = train_model(&cfg, &ds)?;
            fs::create_dir_all(&cfg.out_dir)?;
            let [.., loss_path, ckpt_path] = report_paths(&cfg.out_dir, cfg.tag);
            save_checkpoint(&model, &ckpt_path)?;
            fs::write(loss_path, loss_csv(&report.losses))?;
            let summary = TrainSummary::from_report(&report, None);
            write_json(&cfg.out_dir.join(format!("train_{}.json", cfg.tag.name())), &summary)?;
            println!("saved {}", ckpt_path.display());
        }
        Command::Decode {
            common,
            data,
            checkpoint,
            split,
            iterations,
        } => {
            let cfg = load_config(&common)?;
            let model = load_checkpoint(&checkpoint)?;
            let ds = dataset(&cfg, &data)?;
            let corpus = ds.split(split);
            let decode = DecodeConfig {
                iterations: iterations.unwrap_or(cfg.decode.iterations),
                ..cfg.decode.clone()
            };
            let traces = decode_corpus(&model, corpus, &decode, cfg.exec())?;
            fs::create_dir_all(&cfg.out_dir)?;
            let mut hyps = String::new();
            let mut jsonl = String::new();
            for (id, t) in corpus.ids.iter().zip(&traces) {
                hyps.push_str(&format!("{id} {}\n", model.vocab.format(&t.output)));
                for line in t.to_jsonl(&model.vocab).lines() {
                    let mut record: serde_json::Value = serde_json::from_str(line)?;
                    record["id"] = id.as_str().into();
                    jsonl.push_str(&record.to_string());
                    jsonl.push('\n');
                }
            }
            let stem = format!("decode_{}_k{}", split.name(), decode.iterations);
            fs::write(cfg.out_dir.join(format!("{stem}.txt")), hyps)?;
            fs::write(cfg.out_dir.join(format!("{stem}.jsonl")), jsonl)?;
            println!("decoded {} utterances", traces.len());
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            tag,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(tag) = tag {
                cfg.tag = tag;
            }
            let model = load_checkpoint(&checkpoint)?;
            let ds = dataset(&cfg, &data)?;
            let (rows, _) = evaluate(&model, &ds, &cfg.decode, &cfg.iterations, cfg.exec())?;
            let report = ExperimentReport {
                tag: cfg.tag,
                seed: model.seed,
                train: TrainSummary::from_report(&Default::default(), None),
                rows,
            };
            write_report(&cfg.out_dir, &report)?;
            print!("{}", report.to_csv());
        }
        Command::Scatter {
            common,
            data,
            checkpoint,
            loss_kind,
            split,
            input,
        } => {
            let cfg = load_config(&common)?;
            let model = load_checkpoint(&checkpoint)?;
            let ds = dataset(&cfg, &data)?;
            let scfg = ScatterConfig {
                input,
                axe: cfg.loss.axe,
                mask: cfg.mask.clone(),
                decode: cfg.decode.clone(),
                exec: cfg.exec(),
            };
            let report = scatter_export(&model, ds.split(split), loss_kind, &scfg)?;
            fs::create_dir_all(&cfg.out_dir)?;
            let stem = format!("scatter_{}_{}", loss_kind.name(), split.name());
            fs::write(cfg.out_dir.join(format!("{stem}.csv")), report.to_csv())?;
            write_json(
                &cfg.out_dir.join(format!("{stem}.json")),
                &serde_json::json!({ "loss_kind": loss_kind, "utterances": report.rows.len(), "pearson": report.pearson }),
            )?;
            println!("pearson {:?}", report.pearson);
        }
        Command::Run { common, data, tag } => {
            let cfg = load_config(&common)?;
            let ds = dataset(&cfg, &data)?;
            let tags = tag.map_or(ExperimentTag::ALL.to_vec(), |t| vec![t]);
            for tag in tags {
                let out = run_experiment(&cfg.clone().with_tag(tag), &ds)?;
                print!("{}", out.report.to_csv());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err.downcast_ref::<maskctc::Error>().map_or("Error", |e| e.kind());
            let record = serde_json::json!({ "error": kind, "message": format!("{err:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
