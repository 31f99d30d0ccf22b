//! `lctlab` command-line interface.
//!
//! Every verb reads one JSON config (`--config`), writes under `--out`, and
//! accepts `--seed`; see `docs/config.md` for what the seed overrides in each
//! verb.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize};

use lctlab::checkpoint;
use lctlab::data::{generate_synthetic, load_csv_with, write_csv, DataSource, SyntheticSpec};
use lctlab::harness::{
    best_per_method, emit_curves, lambda_grid, run_sweep, table_metrics, write_aggregates,
    CurveSelection, Direction, ResultStore, SweepOptions, SweepSpec,
};
use lctlab::trainer::{
    evaluate_with, train_with, EvalOptions, JsonLinesTrace, Method, TrainConfig,
    DEFAULT_RECALL_GRID,
};

#[derive(Parser)]
#[command(
    name = "lctlab",
    version,
    about = "Loss-conditional training experiments"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate a synthetic train/test pair as CSV.
    GenerateData(Common),
    /// Train one model.
    Train(Common),
    /// Evaluate a checkpoint over a λ grid.
    Evaluate(Common),
    /// Run a full sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (defaults to the number of CPUs).
        #[arg(long)]
        workers: Option<usize>,
        /// Retrain cells that already completed.
        #[arg(long)]
        fresh: bool,
        #[arg(long)]
        no_checkpoints: bool,
    },
    /// Recompute aggregates and curve data for a sweep directory.
    Report(Common),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRun {
    data: DataSource,
    #[serde(default)]
    beta: Option<f64>,
    train: TrainConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRun {
    model: PathBuf,
    data: DataSource,
    /// Per-coordinate λ values; empty evaluates at the training λ.
    #[serde(default)]
    eval: Vec<Vec<f64>>,
    #[serde(default)]
    recall_grid: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ReportRun {
    selection: CurveSelection,
}

fn read_config<T: DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    let path = path.context("--config is required for this verb")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().verb {
        Verb::GenerateData(c) => generate(c),
        Verb::Train(c) => train_cmd(c),
        Verb::Evaluate(c) => evaluate_cmd(c),
        Verb::Sweep {
            common,
            workers,
            fresh,
            no_checkpoints,
        } => sweep_cmd(
            common,
            SweepOptions {
                workers,
                resume: !fresh,
                write_checkpoints: !no_checkpoints,
            },
        ),
        Verb::Report(c) => report_cmd(c),
    }
}

fn generate(c: Common) -> Result<()> {
    let mut spec: SyntheticSpec = read_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    let (train, test) = generate_synthetic(&spec)?;
    fs::create_dir_all(&c.out)?;
    write_csv(&train, c.out.join("train.csv"))?;
    write_csv(&test, c.out.join("test.csv"))?;
    fs::write(
        c.out.join("data.json"),
        serde_json::to_string_pretty(&spec)? + "\n",
    )?;
    println!(
        "train: {} rows (n_- = {}, n_+ = {}), test: {} rows -> {}",
        train.len(),
        train.n_minus(),
        train.n_plus(),
        test.len(),
        c.out.display()
    );
    Ok(())
}

fn train_cmd(c: Common) -> Result<()> {
    let mut run: TrainRun = read_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        run.train.seed = s;
    }
    let (train_ds, _) = run.data.load(run.beta)?;
    fs::create_dir_all(&c.out)?;
    let trace_path = c.out.join("trace.jsonl");
    let mut trace = JsonLinesTrace::new(std::io::BufWriter::new(fs::File::create(&trace_path)?));
    let model = train_with(&run.train, &train_ds, &mut trace)?;
    std::io::Write::flush(&mut trace.into_inner())?;
    checkpoint::save(&model, c.out.join("model.ckpt"))?;
    let last = model.history.last().map_or(f64::NAN, |h| h.mean_loss);
    println!(
        "trained {} epochs on {} rows (beta = {:.3}), final mean loss {last:.6} -> {}",
        model.history.len(),
        train_ds.len(),
        train_ds.beta(),
        c.out.display()
    );
    Ok(())
}

fn evaluate_cmd(c: Common) -> Result<()> {
    let run: EvalRun = read_config(c.config.as_deref())?;
    let model = checkpoint::load(&run.model)?;
    let data = match c.seed {
        Some(s) => run.data.with_seed(s),
        None => run.data,
    };
    let test = match (&data, &model.schema, &model.standardizer) {
        (DataSource::Csv { test, .. }, Some(schema), Some(st)) => load_csv_with(test, schema, st)?,
        (DataSource::Csv { .. }, _, _) => bail!("model was not trained on CSV data"),
        (DataSource::Synthetic(_), _, _) => data.load(None)?.1,
    };
    let grid = if run.eval.is_empty() {
        match model.config.lambda.as_point() {
            Some(l) => vec![l],
            None => bail!("an LCT model needs an `eval` grid"),
        }
    } else {
        lambda_grid(&run.eval)
    };
    if model.config.method == Method::Baseline && grid.len() > 1 {
        bail!("baseline models are evaluated at a single lambda");
    }
    let opts = EvalOptions {
        recall_grid: run
            .recall_grid
            .unwrap_or_else(|| DEFAULT_RECALL_GRID.to_vec()),
        ..EvalOptions::default()
    };
    let reports = evaluate_with(&model, &test, &grid, &opts)?;
    fs::create_dir_all(&c.out)?;
    fs::write(
        c.out.join("reports.json"),
        serde_json::to_string_pretty(&reports)? + "\n",
    )?;
    let mut summary = String::from("lambda,auc,ap,brier,f1,balanced_acc\n");
    for r in &reports {
        let l: Vec<String> = r.lambda.0.iter().map(f64::to_string).collect();
        let m = &r.metrics;
        summary += &format!(
            "{},{},{},{},{},{}\n",
            l.join(" "),
            m.auc,
            m.ap,
            m.brier,
            m.f1,
            m.balanced_acc
        );
    }
    fs::write(c.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn sweep_cmd(c: Common, opts: SweepOptions) -> Result<()> {
    let mut spec: SweepSpec = read_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        spec.seeds = vec![s];
    }
    let store = run_sweep(&spec, &c.out, &opts)?;
    let failures = store.failures();
    println!(
        "{} models x {} seeds -> {}",
        store.manifest.entries.len(),
        spec.seeds.len(),
        c.out.display()
    );
    for (method, hyper, seed, err) in &failures {
        eprintln!("failed: {method}/{hyper}/seed-{seed}: {err}");
    }
    print_best(&store, None)
}

fn report_cmd(c: Common) -> Result<()> {
    let mut run: ReportRun = match c.config.as_deref() {
        Some(p) => read_config(Some(p))?,
        None => ReportRun::default(),
    };
    if c.seed.is_some() {
        run.selection.seed = c.seed;
    }
    let store = ResultStore::open(&c.out)?;
    write_aggregates(&store, c.seed)?;
    let files = emit_curves(&store, &run.selection, c.out.join("curves"))?;
    println!(
        "wrote aggregates and {} curve files under {}",
        files.len(),
        c.out.display()
    );
    print_best(&store, c.seed)
}

fn print_best(store: &ResultStore, only_seed: Option<u64>) -> Result<()> {
    let cells = lctlab::harness::aggregate(store, only_seed)?;
    let mut text = String::new();
    for metric in table_metrics(&store.manifest.spec.recall_grid) {
        text += &format!("best {metric}:\n");
        for b in best_per_method(&cells, &metric, Direction::for_metric(&metric))? {
            let beta = b.beta.map_or_else(|| "-".into(), |v| v.to_string());
            text += &format!(
                "  {:<20} beta {:<6} {:.4}  train {}  eval {:?}\n",
                b.method, beta, b.value, b.train_lambda, b.eval_lambda.0
            );
        }
    }
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = std::io::Write::write_all(&mut std::io::stdout(), text.as_bytes());
    Ok(())
}
