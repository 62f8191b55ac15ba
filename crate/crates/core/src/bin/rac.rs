//! `rac`: every pipeline stage as a subcommand over one work directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rac_core::lm::ModelRole;
use rac_core::pipeline::artifacts::{names, write_json, write_jsonl};
use rac_core::pipeline::stages::{evaluate_inputs, EvalInput, Split, WorkDir};
use rac_core::pipeline::{run_end_to_end, NegativeSource, PositiveSource, RunConfig, SftData};
use rac_core::retrieval::{InvertedIndex, Strategy};
use rac_core::{RacError, Result};

#[derive(Parser)]
#[command(name = "rac", version, about = "Retrieval-augmented clarifying-question pipeline")]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    cmd: Command,
}

/// Config location and per-key overrides, accepted by every subcommand.
#[derive(Args)]
struct Overrides {
    /// RunConfig JSON. Defaults to `<work-dir>/config.json` when it exists.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "rac-work")]
    work_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    chunk_size: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    dpo_epochs: Option<usize>,
    /// Next-token pre-training epochs for the base model (0 keeps the random init).
    #[arg(long, global = true)]
    pretrain_epochs: Option<usize>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// `uncond` or `base_lm`.
    #[arg(long, global = true)]
    negative_source: Option<NegativeSource>,
    /// `generated` or `gold`.
    #[arg(long, global = true)]
    positive_source: Option<PositiveSource>,
    #[arg(long, global = true)]
    negatives_per_tuple: Option<usize>,
    /// `half` or `full`.
    #[arg(long, global = true)]
    sft_data: Option<SftData>,
    /// `bm25` or `random`.
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic documents and gold clarifications.
    MakeCorpus,
    /// Chunk and index a document file.
    Index {
        /// Documents as JSON Lines `{doc_id, text}`; defaults to the work directory's.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite queries, retrieve evidence and split T1.
    Adapt,
    /// Fine-tune the grounded model.
    TrainSft,
    /// Fine-tune the query-only model.
    TrainUncond,
    /// Build preference pairs with mixture-decoded negatives.
    GenNegatives,
    /// Train the policy with the joint objective.
    TrainDpo,
    /// Greedy generations of a checkpoint, written as evaluation input.
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// `grounded`, `ungrounded`, `policy` or `base_lm`.
        #[arg(long, default_value = "grounded")]
        role: ModelRole,
        /// `train`, `val`, `half_a` or `half_b`.
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generations against their evidence.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Index resolving `passage_ids`; defaults to the work directory's.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value = "lexical")]
        scorer: String,
        /// Summary JSON; per-record metrics go next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hallucination and gate statistics of mixture decoding per alpha.
    SweepAlpha {
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        alphas: Vec<f64>,
        /// Gate-marked example generations kept per alpha.
        #[arg(long, default_value_t = 3)]
        examples: usize,
    },
    /// Retrain the grounded model per passage count.
    SweepPassages {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8")]
        ks: Vec<usize>,
    },
    /// Retrain the grounded model per retrieval strategy.
    SweepRetrieval {
        #[arg(long, value_delimiter = ',', default_value = "bm25,random")]
        strategies: Vec<Strategy>,
    },
    /// Every stage end to end, with all artifacts in the work directory.
    RunAll,
}

impl Overrides {
    fn config(&self) -> Result<RunConfig> {
        let existing = self.work_dir.join("config.json");
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None if existing.exists() => RunConfig::load(existing)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(
            seed, alpha, beta, gamma, k, chunk_size, epochs, dpo_epochs, pretrain_epochs, temperature, top_k,
            negative_source, positive_source, negatives_per_tuple, sft_data, strategy
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{body}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.opts.config()?;
    let wd = WorkDir::new(&cli.opts.work_dir, cfg)?;
    match cli.cmd {
        Command::MakeCorpus => {
            let c = wd.make_corpus()?;
            print(&serde_json::json!({"documents": c.documents.len(), "gold": c.gold.len()}))
        }
        Command::Index { corpus, out } => {
            let index = wd.index(corpus.as_deref(), out.as_deref())?;
            print(&serde_json::json!({"passages": index.num_docs(), "avgdl": index.avg_doc_len()}))
        }
        Command::Adapt => {
            let a = wd.adapt()?;
            print(&serde_json::json!({"tuples": a.tuples.len(), "dropped": a.dropped.len()}))
        }
        Command::TrainSft => print(&wd.train_sft(wd.cfg.sft_data)?.log.epochs),
        Command::TrainUncond => print(&wd.train_uncond()?.log.epochs),
        Command::GenNegatives => {
            let t2 = wd.gen_negatives()?;
            print(&serde_json::json!({"pairs": t2.pairs.len(), "dropped": t2.dropped}))
        }
        Command::TrainDpo => print(&wd.train_dpo()?.log.epochs),
        Command::Generate { model, role, split, out } => {
            let g = wd.generate(&model, role, split, &out)?;
            print(&serde_json::json!({"records": g.len(), "out": out}))
        }
        Command::Evaluate { input, index, scorer, out } => {
            if scorer != "lexical" {
                return Err(RacError::InvalidConfig(format!("unknown scorer `{scorer}`")));
            }
            let (_, inputs) = rac_core::pipeline::artifacts::read_records::<EvalInput>(&input)?;
            let index = index
                .or_else(|| Some(wd.path(names::INDEX)).filter(|p| p.exists()))
                .map(InvertedIndex::load)
                .transpose()?;
            let (report, per) = evaluate_inputs(&inputs, index.as_ref())?;
            let out = out.unwrap_or_else(|| sibling(&input, ".report.json"));
            write_json(&out, &report)?;
            write_jsonl(sibling(&out, ".records.jsonl"), &wd.header("eval-records"), &per)?;
            print(&report)
        }
        Command::SweepAlpha { alphas, examples } => print(&wd.sweep_alpha(&alphas, examples)?),
        Command::SweepPassages { ks } => print(&wd.sweep_passages(&ks)?),
        Command::SweepRetrieval { strategies } => print(&wd.sweep_retrieval(&strategies)?),
        Command::RunAll => print(&run_end_to_end(&wd.cfg, Some(&wd.root))?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rac: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
