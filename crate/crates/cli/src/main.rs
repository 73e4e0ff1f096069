use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use prosody_vc::config::{ExperimentConfig, Representation};
use prosody_vc::experiment::{self, final_checkpoint_path, run_dir};
use prosody_vc::pipelines::{Checkpoint, Strategy};
use prosody_vc::toy::{self, ToyExperiment};
use prosody_vc::viz::EmbeddingMode;

#[derive(Parser)]
#[command(name = "pvc", version, about = "Recognition-synthesis voice conversion with prosody modelling")]
struct Cli {
    /// Worker threads for per-utterance work; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured recognizer representation.
    #[arg(long, value_parser = ["text", "frame-code"])]
    representation: Option<String>,
    /// Output root; defaults to the configured one.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs every training stage of a strategy, resuming finished stages.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: String,
        /// Keep every gst.* group fixed while fine-tuning SPT.
        #[arg(long)]
        freeze_refenc: bool,
    },
    /// Converts a source manifest with a trained checkpoint.
    Convert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        freeze_refenc: bool,
        /// Defaults to the final checkpoint of the strategy's run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the configured source_eval manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Scores converted outputs against reference renditions.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `convert`.
        #[arg(long)]
        converted: PathBuf,
        /// Defaults to the configured reference manifest.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// JSON lines of {"utterance_id", "text"} transcripts of the converted speech.
        #[arg(long)]
        hypotheses: Option<PathBuf>,
    },
    /// Projects style embeddings to 2-D and scores speaker clustering.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the configured target manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "refenc", value_parser = ["refenc", "tp"])]
        mode: String,
    },
    /// Writes a synthetic multispeaker corpus and a matching config.
    ToyCorpus {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 10)]
        per_speaker: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Loaded {
    cfg: ExperimentConfig,
    root: PathBuf,
}

fn load(common: &Common) -> Result<Loaded> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading config {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(r) = &common.representation {
        cfg.recognizer.representation = r.parse::<Representation>()?;
    }
    cfg.validate()?;
    let root = common.output.clone().unwrap_or_else(|| cfg.output_root());
    Ok(Loaded { cfg, root })
}

fn configured(cfg: &ExperimentConfig, flag: Option<&PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    match (flag, fallback) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(p)) => Ok(cfg.resolve(p)),
        (None, None) => bail!("no {what} given and none configured"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, strategy, freeze_refenc } => {
            let strategy: Strategy = strategy.parse()?;
            let l = load(&common)?;
            let run = run_dir(&l.root, strategy, freeze_refenc);
            let ckpt = experiment::train(&l.cfg, strategy, freeze_refenc, &run)?;
            for s in &ckpt.provenance.stages {
                println!(
                    "stage {} {:<18} steps {:>5}  L1 {:.4} -> {:.4}",
                    s.stage_index,
                    s.kind.as_str(),
                    s.steps,
                    s.initial_l1,
                    s.final_l1
                );
            }
            println!("checkpoint {}", final_checkpoint_path(&run).display());
        }
        Command::Convert { common, strategy, freeze_refenc, checkpoint, manifest } => {
            let strategy: Strategy = strategy.parse()?;
            let l = load(&common)?;
            let run = run_dir(&l.root, strategy, freeze_refenc);
            let ckpt_path = checkpoint.unwrap_or_else(|| final_checkpoint_path(&run));
            let ckpt = Checkpoint::load(&ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
            let manifest = configured(&l.cfg, manifest.as_ref(), l.cfg.data.source_eval.as_ref(), "source manifest")?;
            let out = run.join("converted");
            let s = experiment::convert_corpus(&l.cfg, &ckpt, strategy, &manifest, &out)?;
            println!("converted {} utterances into {}", s.converted.len(), out.display());
            if !s.truncated.is_empty() {
                println!("{} outputs reached the frame limit", s.truncated.len());
            }
            for (id, why) in &s.failures {
                println!("failed {id}: {why}");
            }
        }
        Command::Evaluate { common, converted, reference, hypotheses } => {
            let l = load(&common)?;
            let reference = configured(&l.cfg, reference.as_ref(), l.cfg.data.reference.as_ref(), "reference manifest")?;
            let report = experiment::evaluate_converted(&l.cfg, &converted, &reference, hypotheses.as_deref())?;
            let out = converted.parent().unwrap_or(Path::new(".")).join("eval");
            report.write(&out)?;
            print!("{}", report.table());
        }
        Command::Visualize { common, checkpoint, manifest, mode } => {
            let l = load(&common)?;
            let mode: EmbeddingMode = mode.parse()?;
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let manifest = configured(&l.cfg, manifest.as_ref(), Some(&l.cfg.data.target), "manifest")?;
            let name = match mode {
                EmbeddingMode::RefEnc => "viz-refenc",
                EmbeddingMode::Tp => "viz-tp",
            };
            let out = l.root.join(name);
            let s = experiment::visualize(&l.cfg, &ckpt, &manifest, mode, &out)?;
            match s.silhouette {
                Some(v) => println!("silhouette by speaker {v:.4} over {} utterances", s.utterances),
                None => println!("silhouette undefined (needs two speakers with two utterances each)"),
            }
            println!("plot {}", out.join("plot.svg").display());
        }
        Command::ToyCorpus { output, speakers, per_speaker, seed } => {
            let spec = ToyExperiment { pretrain_speakers: speakers, per_speaker, seed, ..Default::default() };
            let path = toy::write_experiment(&output, &spec)?;
            println!("config {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
        info!("using {n} worker threads");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
