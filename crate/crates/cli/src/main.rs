use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use codedit::benchdata::{
    build_benchmark, dataset_stats, load_benchmark, load_corpus, save_benchmark, save_corpus, synth_corpus,
    BuildOptions, CorpusPair, Task,
};
use codedit::grace::{fit_encoder, EncoderTraining, EncoderWeights};
use codedit::harness::{
    analyze_distances, distances_csv, load_report, make_report, ordering_accuracy, parse_decode_mode, run_experiment,
    write_report, EditorKind, ExperimentConfig, KeyPipeline, LabOptions, Protocol,
};
use codedit::toymodel::{pretrain_with, KeyMode, ModelConfig, PretrainOptions, TokenPair, ToyDecoder};

#[derive(Parser)]
#[command(name = "codedit", about = "Knowledge editing experiments on toy code models", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic intent/code corpus.
    GenData {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        size: usize,
        #[arg(long, default_value = "nl2pl")]
        task: Task,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a toy decoder on a corpus, optionally leaving out its head.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        /// Leading pairs to exclude (reserved as edit targets).
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        /// Train next-token prediction on prompt tokens as well.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        prompt_loss: bool,
        #[arg(long, default_value_t = 1)]
        model_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an edit benchmark: targets from one corpus range, neighbors from another.
    BuildBench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// First target pair.
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Number of targets.
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Index where the neighbor pool begins; it runs to the end of the corpus.
        #[arg(long)]
        pool_from: usize,
        #[arg(long, default_value_t = 16)]
        neighbor_tokens: usize,
        #[arg(long)]
        embed_layer: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a contrastive key encoder on a benchmark.
    TrainEncoder {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value = "mean")]
        pooling: String,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        holdout: f64,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply an editor to every benchmark instance and score the results.
    EditEval {
        /// key = value experiment file; flags below override its entries.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        bench: Option<PathBuf>,
        #[arg(long)]
        editor: Option<String>,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        cov_corpus: Option<PathBuf>,
        #[arg(long)]
        edit_layer: Option<usize>,
        #[arg(long)]
        fluency_tokens: Option<usize>,
        #[arg(long)]
        decode: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        /// File stem of the written reports; defaults to the editor name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Distances from each input to its rewrite and to its first neighbor.
    AnalyzeDistances {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value = "raw-last")]
        pipeline: KeyPipeline,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine edit-eval reports into one technique table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        txt: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn key_mode(s: &str) -> Result<KeyMode> {
    match s {
        "mean" => Ok(KeyMode::Mean),
        "last" => Ok(KeyMode::Last),
        _ => bail!("pooling must be mean or last, got {s:?}"),
    }
}

fn load_model(path: &Path) -> Result<ToyDecoder> {
    ToyDecoder::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { seed, size, task, out } => {
            let corpus = synth_corpus(seed, size, task);
            save_corpus(&out, &corpus)?;
            println!("wrote {} pairs to {}", corpus.len(), out.display());
        }
        Command::Pretrain { corpus, skip, steps, batch_size, lr, prompt_loss, model_seed, out } => {
            let pairs = load_corpus(&corpus)?;
            if skip >= pairs.len() {
                bail!("skipping {skip} pairs leaves nothing of {} to train on", pairs.len());
            }
            let train: Vec<TokenPair> = pairs[skip..].iter().map(CorpusPair::tokens).collect();
            let cfg = ModelConfig { rng_seed: model_seed, ..LabOptions::default().model };
            let opts = PretrainOptions { steps, batch_size, lr, prompt_loss, ..PretrainOptions::default() };
            let outcome = pretrain_with(&train, cfg, opts)?;
            outcome.model.save(&out)?;
            let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!("trained on {} pairs for {steps} steps, final loss {last:.4}", train.len());
        }
        Command::BuildBench { model, corpus, start, count, pool_from, neighbor_tokens, embed_layer, out } => {
            let model = load_model(&model)?;
            let pairs = load_corpus(&corpus)?;
            let end = start + count;
            if end > pairs.len() || pool_from > pairs.len() {
                bail!("corpus has only {} pairs", pairs.len());
            }
            if start.max(pool_from) < end {
                bail!("targets {start}..{end} overlap the pool starting at {pool_from}");
            }
            let mut joined = pairs[start..end].to_vec();
            joined.extend_from_slice(&pairs[pool_from..]);
            let opts = BuildOptions {
                embed_layer: embed_layer.unwrap_or(model.config.grace_layer()),
                neighbor_tokens,
            };
            let bench = build_benchmark(&model, &joined, count, opts)?;
            save_benchmark(&out, &bench)?;
            let s = dataset_stats(&bench)?;
            println!(
                "wrote {} instances; mean tokens: input {:.2}, rewrite {:.2}, neighbor {:.2}, target {:.2}",
                s.instances, s.effectiveness.mean, s.generalization.mean, s.specificity.mean, s.targets.mean
            );
        }
        Command::TrainEncoder { model, bench, pooling, layer, holdout, lr, epochs, seed, out } => {
            let model = load_model(&model)?;
            let bench = load_benchmark(&bench)?;
            let mut hyper = EncoderTraining { seed, ..EncoderTraining::default() };
            if let Some(lr) = lr {
                hyper.lr = lr;
            }
            if let Some(e) = epochs {
                hyper.epochs = e;
            }
            let layer = layer.unwrap_or(model.config.grace_layer());
            let trained = fit_encoder(&model, &bench, layer, key_mode(&pooling)?, holdout, hyper)?;
            trained.weights.save(&out)?;
            println!(
                "kept epoch {}; train loss {:.4} -> {:.4}",
                trained.best_epoch, trained.initial_train_loss, trained.final_train_loss
            );
        }
        Command::EditEval {
            config,
            model,
            bench,
            editor,
            protocol,
            seed,
            encoder,
            cov_corpus,
            edit_layer,
            fluency_tokens,
            decode,
            limit,
            out_dir,
            name,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    let (Some(m), Some(b), Some(e)) = (&model, &bench, &editor) else {
                        bail!("without --config, --model, --bench and --editor are required");
                    };
                    ExperimentConfig::new(m, b, e.parse::<EditorKind>()?)
                }
            };
            if let Some(m) = model {
                cfg.model = m;
            }
            if let Some(b) = bench {
                cfg.benchmark = b;
            }
            if let Some(e) = editor {
                cfg.editor = e.parse()?;
            }
            if let Some(p) = protocol {
                cfg.protocol = p.parse::<Protocol>()?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.encoder = encoder.or(cfg.encoder);
            cfg.cov_corpus = cov_corpus.or(cfg.cov_corpus);
            cfg.edit_layer = edit_layer.or(cfg.edit_layer);
            cfg.limit = limit.or(cfg.limit);
            if let Some(n) = fluency_tokens {
                cfg.fluency_tokens = n;
            }
            if let Some(d) = decode {
                cfg.decode = parse_decode_mode(&d)?;
            }
            let report = run_experiment(&cfg)?;
            let stem = name.unwrap_or_else(|| cfg.editor.name().to_string());
            let path = write_report(&report, &out_dir, &stem)?;
            std::fs::write(out_dir.join(format!("{stem}.config")), cfg.to_text())?;
            print!("{}", make_report(std::slice::from_ref(&report))?.to_text(true));
            let failed = report.failed_count();
            println!("\nreport written to {}; {failed} failed rows", path.display());
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::AnalyzeDistances { model, bench, pipeline, encoder, layer, out } => {
            let model = load_model(&model)?;
            let bench = load_benchmark(&bench)?;
            let enc = encoder.map(EncoderWeights::load).transpose()?;
            let layer = layer.unwrap_or(model.config.grace_layer());
            let rows = analyze_distances(&model, &bench, layer, pipeline, enc.as_ref())?;
            std::fs::write(&out, distances_csv(&rows))?;
            println!("{pipeline}: ordering accuracy {:.4} over {} instances", ordering_accuracy(&rows), rows.len());
        }
        Command::Report { reports, csv, txt } => {
            let loaded = reports
                .iter()
                .map(|p| load_report(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let table = make_report(&loaded)?;
            let text = table.to_text(true);
            if let Some(p) = csv {
                std::fs::write(p, table.to_csv(true))?;
            }
            if let Some(p) = txt {
                std::fs::write(p, &text)?;
            }
            print!("{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}
