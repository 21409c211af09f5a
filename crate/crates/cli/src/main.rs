//! `cosmo`: synthesize, train, predict, segment and evaluate page streams.

mod parallel;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cosmo_core::embedding::{load_store, write_store};
use cosmo_core::metrics::{evaluate, EvalReport};
use cosmo_core::model::{argmax_labels, predict_logits, CosmoModel, Stores, Variant};
use cosmo_core::stream::{
    decode_segments, read_book_labels, read_manifest, write_manifest, write_page_labels, write_segments,
    BookSegments, PageLabel, PageLabelRecord, PageStream,
};
use cosmo_core::synth::{generate, Signal, SynthConfig};
use cosmo_core::train::{prepare_examples, split_books, train_with, write_history, TrainConfig};

#[derive(Parser)]
#[command(name = "cosmo", version, about = "Page stream segmentation for comic books")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: manifest.jsonl, vis.psse, text.psse.
    Synth(SynthArgs),
    /// Train a model and write the best checkpoint plus its history.
    Train(TrainArgs),
    /// Label every page of a manifest.
    Predict(PredictArgs),
    /// Turn page labels into segments.
    Segment(SegmentArgs),
    /// Score predicted labels against gold labels.
    Eval(EvalArgs),
    /// Print a summary of an evaluation report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 40)]
    books: usize,
    #[arg(long, default_value_t = 16)]
    min_pages: usize,
    #[arg(long, default_value_t = 48)]
    max_pages: usize,
    #[arg(long, default_value_t = 64)]
    d_vis: usize,
    #[arg(long, default_value_t = 64)]
    d_text: usize,
    /// Class-mean distance in noise standard deviations.
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    /// `full` or `text_first_page_only`.
    #[arg(long, default_value = "full")]
    signal: Signal,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct Embeddings {
    #[arg(long)]
    emb_vis: Option<PathBuf>,
    #[arg(long)]
    emb_text: Option<PathBuf>,
}

impl Embeddings {
    /// Loads the stores `variant` needs; a missing flag is a usage error.
    fn load(&self, variant: Variant) -> Result<Stores, CliError> {
        let load = |needed: bool, path: &Option<PathBuf>, flag: &str| -> Result<_, CliError> {
            match (needed, path) {
                (false, _) => Ok(None),
                (true, None) => Err(CliError::Usage(format!("the {variant} variant needs {flag}"))),
                (true, Some(p)) => Ok(Some(load_store(p)?)),
            }
        };
        Ok(Stores {
            vis: load(variant.uses_vision(), &self.emb_vis, "--emb-vis")?,
            text: load(variant.uses_text(), &self.emb_text, "--emb-text")?,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    emb: Embeddings,
    /// `key = value` training config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// vision, text, multitoken or fused.
    #[arg(long)]
    variant: Variant,
    /// Checkpoint path; the history goes next to it as `<stem>.history.jsonl`.
    #[arg(long)]
    out: PathBuf,
    /// Validation books; without it the tail of the manifest is held out.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Seeds model initialization, dropout and book order.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    emb: Embeddings,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    /// Page label file (or a manifest with gold labels).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
}

enum CliError {
    Usage(String),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

impl From<cosmo_core::Error> for CliError {
    fn from(e: cosmo_core::Error) -> Self {
        CliError::Failed(e.into())
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_books: a.books,
        min_pages: a.min_pages,
        max_pages: a.max_pages,
        d_vis: a.d_vis,
        d_text: a.d_text,
        separation: a.separation,
        seed: a.seed,
        signal: a.signal,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_manifest(a.out_dir.join("manifest.jsonl"), &corpus.streams)?;
    write_store(&corpus.vis, a.out_dir.join("vis.psse"))?;
    write_store(&corpus.text, a.out_dir.join("text.psse"))?;
    let pages: usize = corpus.streams.iter().map(PageStream::len).sum();
    println!("wrote {} books, {pages} pages to {}", corpus.streams.len(), a.out_dir.display());
    Ok(())
}

fn history_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    ckpt.with_file_name(format!("{stem}.history.jsonl"))
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    let stores = a.emb.load(a.variant)?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = a.seed;
    let books = read_manifest(&a.manifest)?;
    let (train_books, val_books) = match &a.val_manifest {
        Some(p) => (books, read_manifest(p)?),
        None => split_books(&books, cfg.val_fraction)?,
    };
    let dim = |s: &Option<cosmo_core::embedding::EmbeddingMatrix>| s.as_ref().map_or(0, |m| m.dim());
    let arch = cfg.model.arch(a.variant, dim(&stores.vis), dim(&stores.text));
    let model = CosmoModel::<f32>::new(arch, a.seed)?;
    let train_ex = prepare_examples(&model, &train_books, &stores)?;
    let val_ex = prepare_examples(&model, &val_books, &stores)?;
    eprintln!(
        "training {} ({} params) on {} books, validating on {}",
        a.variant,
        cosmo_core::nn::Module::param_count(&model),
        train_ex.len(),
        val_ex.len()
    );
    let out = train_with(model, &train_ex, &val_ex, &cfg, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  val loss {:.5}  val F1-Macro {:.4}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_f1_macro,
            if r.improved { "  *" } else { "" }
        )
    })
    ?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    out.model.save(&a.out)?;
    write_history(history_path(&a.out), &out.history)?;
    println!(
        "best epoch {} of {}, validation F1-Macro {:.6}",
        out.best_epoch,
        out.history.len(),
        out.best_val_f1_macro
    );
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = CosmoModel::<f32>::load(&a.ckpt)?;
    let stores = a.emb.load(model.variant())?;
    let mut books = read_manifest(&a.manifest)?;
    books.sort_by(|x, y| x.book_id.cmp(&y.book_id));
    let logits = parallel::map(&books, parallel::threads(), |s| predict_logits(&model, s, &stores));
    let mut records = Vec::new();
    for (book, logits) in books.iter().zip(logits) {
        let logits = logits.with_context(|| format!("predicting book {}", book.book_id))?;
        let labels = argmax_labels(&logits);
        for (r, (page, label)) in book.pages.iter().zip(labels).enumerate() {
            records.push(PageLabelRecord {
                book_id: book.book_id.clone(),
                page_id: page.page_id.clone(),
                label,
                logits: Some(logits.row(r).to_vec()),
            });
        }
    }
    write_page_labels(&a.out, &records)?;
    println!("labeled {} pages in {} books", records.len(), books.len());
    Ok(())
}

fn segment(a: &SegmentArgs) -> Result<()> {
    let books = read_book_labels(&a.labels)?;
    let segs = books
        .iter()
        .map(|b| {
            Ok(BookSegments {
                book_id: b.book_id.clone(),
                segments: decode_segments(&b.labels).with_context(|| format!("book {}", b.book_id))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_segments(&a.out, &segs)?;
    let n: usize = segs.iter().map(|b| b.segments.len()).sum();
    println!("wrote {n} segments for {} books", segs.len());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let gold = read_book_labels(&a.gold).with_context(|| format!("reading {}", a.gold.display()))?;
    let pred = read_book_labels(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let report = evaluate(&gold, &pred)?;
    std::fs::write(&a.out, report.to_json() + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}", summary(&report));
    Ok(())
}

fn summary(r: &EvalReport) -> String {
    let mut s = format!(
        "books {}  pages {}\nF1-Macro {:.4}  accuracy {:.4}\nDocF1 {:.4}  SQ {:.4}  PQ {:.4}  (TP {} FP {} FN {})\nMnDD total {}  mean per book {:.3}\n",
        r.books, r.pages, r.f1_macro, r.accuracy, r.doc_f1, r.sq, r.pq, r.tp, r.fp, r.fn_, r.mndd_total, r.mndd_mean
    );
    s.push_str("class            precision  recall     F1\n");
    for c in 0..r.per_class_f1.len() {
        let name = PageLabel::from_id(c).map_or("?", |l| l.as_str());
        s.push_str(&format!(
            "{name:<16} {:>9.4} {:>7.4} {:>6.4}\n",
            r.per_class_precision[c], r.per_class_recall[c], r.per_class_f1[c]
        ));
    }
    s.trim_end().to_string()
}

fn report(a: &ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    println!("{}", summary(&EvalReport::from_json(&text)?));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Train(a) => train(a)?,
        Command::Predict(a) => predict(a)?,
        Command::Segment(a) => segment(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Report(a) => report(a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
