//! Sweep runner and result store.
//!
//! A sweep trains every (method, β, training hyperparameters, seed) cell,
//! evaluates each model over its inference grid and writes one JSON report
//! per evaluation λ:
//!
//! ```text
//! <out>/manifest.json
//! <out>/results/<method>/<hyper>/seed-<s>/status.json
//! <out>/results/<method>/<hyper>/seed-<s>/eval-<k>.json
//! <out>/results/<method>/<hyper>/seed-<s>/model.ckpt
//! <out>/results/<method>/<hyper>/seed-<s>/trace.jsonl
//! <out>/aggregate/...
//! ```
//!
//! `<hyper>` is a short SHA-256 digest of everything that defines the
//! trained model except the seed; the manifest maps digests back to
//! hyperparameters. Aggregates are recomputed from the cell files alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{DataSource, Dataset};
use crate::error::{Error, Result};
use crate::losses::{LambdaMap, LambdaVec, LossFamily};
use crate::optim::OptimizerConfig;
use crate::sampler::{LambdaDistribution, LinearPdf};
use crate::trainer::{
    evaluate_with, seed_average, train_with, EvalOptions, EvalReport, JsonLinesTrace, Method,
    MetricSummary, NetworkConfig, TrainConfig, DEFAULT_RECALL_GRID,
};

/// SAM radius used by `+sam` methods unless the method sets `sam_rho`.
pub const DEFAULT_SAM_RHO: f64 = 0.05;

/// A parsed method name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MethodKind {
    pub family: LossFamily,
    pub method: Method,
    pub sam: bool,
}

impl MethodKind {
    /// Accepts `focal`, `focal+lct`, `vs`, `vs+lct`, `vs+sam`, `vs+sam+lct`,
    /// and the ablations `focal+lct-nofilm`, `vs+lct-nofilm`,
    /// `vs+sam+lct-nofilm`.
    pub fn parse(name: &str) -> Result<Self> {
        let (family, sam, method) = match name {
            "focal" => (LossFamily::Focal, false, Method::Baseline),
            "focal+lct" => (LossFamily::Focal, false, Method::Lct),
            "focal+lct-nofilm" => (LossFamily::Focal, false, Method::LctNoFilm),
            "vs" => (LossFamily::Vs, false, Method::Baseline),
            "vs+lct" => (LossFamily::Vs, false, Method::Lct),
            "vs+lct-nofilm" => (LossFamily::Vs, false, Method::LctNoFilm),
            "vs+sam" => (LossFamily::Vs, true, Method::Baseline),
            "vs+sam+lct" => (LossFamily::Vs, true, Method::Lct),
            "vs+sam+lct-nofilm" => (LossFamily::Vs, true, Method::LctNoFilm),
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        };
        Ok(Self {
            family,
            method,
            sam,
        })
    }
}

/// Shared training settings; every field defaults to the trainer's default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub optimizer: OptimizerConfig,
    pub lr_drop_at: f64,
    pub lr_drop_factor: f64,
    pub network: NetworkConfig,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let c = TrainConfig::new(
            Method::Baseline,
            LossFamily::Vs,
            LambdaDistribution::new(vec![]),
        );
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            clip_norm: c.clip_norm,
            optimizer: c.optimizer,
            lr_drop_at: c.lr_drop_at,
            lr_drop_factor: c.lr_drop_factor,
            network: c.network,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    /// Per-coordinate training values: bare numbers for point λ,
    /// `"L(a,b,h_b)"` strings for distributions. The training grid is their
    /// Cartesian product, first coordinate varying slowest.
    pub train: Vec<Vec<LinearPdf>>,
    /// Per-coordinate inference values for LCT methods; product as above.
    /// Must be empty for baselines, which are evaluated at their training λ.
    #[serde(default)]
    pub eval: Vec<Vec<f64>>,
    #[serde(default)]
    pub sam_rho: Option<f64>,
    #[serde(default)]
    pub lambda_map: LambdaMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub data: DataSource,
    /// Training imbalance ratios. Empty means the data source's own.
    #[serde(default)]
    pub betas: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default = "default_recall_grid")]
    pub recall_grid: Vec<f64>,
}

fn default_recall_grid() -> Vec<f64> {
    DEFAULT_RECALL_GRID.to_vec()
}

/// Runner knobs that do not change results.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    /// Worker threads; `None` lets rayon decide.
    pub workers: Option<usize>,
    /// Reuse cells whose status file says they completed.
    pub resume: bool,
    pub write_checkpoints: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            workers: None,
            resume: true,
            write_checkpoints: true,
        }
    }
}

fn product<T: Clone>(lists: &[Vec<T>]) -> Vec<Vec<T>> {
    lists.iter().fold(vec![Vec::new()], |acc, list| {
        acc.iter()
            .flat_map(|prefix| {
                list.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

/// Cartesian product of per-coordinate values, first coordinate slowest.
pub fn lambda_grid(per_coord: &[Vec<f64>]) -> Vec<LambdaVec> {
    product(per_coord).into_iter().map(LambdaVec).collect()
}

impl MethodSpec {
    pub fn kind(&self) -> Result<MethodKind> {
        MethodKind::parse(&self.name)
    }

    pub fn train_grid(&self) -> Vec<LambdaDistribution> {
        product(&self.train)
            .into_iter()
            .map(LambdaDistribution::new)
            .collect()
    }

    pub fn eval_grid(&self) -> Vec<LambdaVec> {
        lambda_grid(&self.eval)
    }

    fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        let ctx = |msg: String| Error::Config(format!("method {}: {msg}", self.name));
        if self.train.is_empty() || self.train.iter().any(Vec::is_empty) {
            return Err(ctx(
                "every training coordinate needs at least one value".into()
            ));
        }
        if self.train.len() != self.lambda_map.dim() {
            return Err(ctx(format!(
                "{} training coordinates, lambda map expects {}",
                self.train.len(),
                self.lambda_map.dim()
            )));
        }
        match kind.method {
            Method::Baseline => {
                if !self.eval.is_empty() {
                    return Err(ctx(
                        "baselines are evaluated at their training lambda; drop `eval`".into(),
                    ));
                }
                if self.train.iter().flatten().any(|p| !p.is_point()) {
                    return Err(ctx("baseline training values must be numbers".into()));
                }
            }
            Method::Lct | Method::LctNoFilm => {
                if self.eval.len() != self.train.len() || self.eval.iter().any(Vec::is_empty) {
                    return Err(ctx(
                        "LCT methods need one non-empty eval list per coordinate".into(),
                    ));
                }
            }
        }
        if !kind.sam && self.sam_rho.is_some() {
            return Err(ctx("sam_rho given for a method without SAM".into()));
        }
        Ok(())
    }

    fn config(
        &self,
        settings: &TrainingSettings,
        lambda: LambdaDistribution,
    ) -> Result<TrainConfig> {
        let kind = self.kind()?;
        let mut c = TrainConfig::new(kind.method, kind.family, lambda);
        c.lambda_map = self.lambda_map;
        c.sam_rho = kind.sam.then(|| self.sam_rho.unwrap_or(DEFAULT_SAM_RHO));
        c.epochs = settings.epochs;
        c.batch_size = settings.batch_size;
        c.clip_norm = settings.clip_norm;
        c.optimizer = settings.optimizer.clone();
        c.lr_drop_at = settings.lr_drop_at;
        c.lr_drop_factor = settings.lr_drop_factor;
        c.network = settings.network.clone();
        c.validate()?;
        Ok(c)
    }
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "a sweep needs at least one method and one seed".into(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.methods {
            m.validate()?;
            if !names.insert(&m.name) {
                return Err(Error::Config(format!("method {} listed twice", m.name)));
            }
        }
        if self.betas.iter().any(|b| !(*b >= 1.0 && b.is_finite())) {
            return Err(Error::Config("betas must be >= 1".into()));
        }
        if self.recall_grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Config(
                "recall grid values must lie in (0, 1]".into(),
            ));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        Ok(())
    }

    fn beta_list(&self) -> Vec<Option<f64>> {
        if self.betas.is_empty() {
            vec![None]
        } else {
            self.betas.iter().copied().map(Some).collect()
        }
    }

    /// Every trained model of the sweep, seeds excluded, in a fixed order.
    pub fn entries(&self) -> Result<Vec<ManifestEntry>> {
        let mut out = Vec::new();
        for beta in self.beta_list() {
            for m in &self.methods {
                let kind = m.kind()?;
                for dist in m.train_grid() {
                    let config = m.config(&self.training, dist.clone())?;
                    let eval_grid = match kind.method {
                        Method::Baseline => vec![dist.as_point().expect("validated point")],
                        _ => m.eval_grid(),
                    };
                    let hyper = hyper_hash(&HyperKey {
                        method: &m.name,
                        beta,
                        data: &self.data,
                        config: &config,
                    })?;
                    out.push(ManifestEntry {
                        method: m.name.clone(),
                        beta,
                        hyper,
                        train_lambda: dist.to_string(),
                        config,
                        eval_grid,
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct HyperKey<'a> {
    method: &'a str,
    beta: Option<f64>,
    data: &'a DataSource,
    config: &'a TrainConfig,
}

fn hyper_hash(key: &HyperKey<'_>) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(key)?);
    Ok(hex::encode(&digest[..8]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub method: String,
    /// Requested training β; `None` keeps the data source's own.
    pub beta: Option<f64>,
    pub hyper: String,
    pub train_lambda: String,
    /// Training configuration; the per-cell seed replaces `config.seed`.
    pub config: TrainConfig,
    pub eval_grid: Vec<LambdaVec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SweepSpec,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok { evals: usize },
    Failed { error: String },
}

/// A sweep directory on disk.
#[derive(Clone, Debug)]
pub struct ResultStore {
    pub root: PathBuf,
    pub manifest: Manifest,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl ResultStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = read_json(&root.join("manifest.json"))?;
        Ok(Self { root, manifest })
    }

    pub fn seed_dir(&self, entry: &ManifestEntry, seed: u64) -> PathBuf {
        self.root
            .join("results")
            .join(&entry.method)
            .join(&entry.hyper)
            .join(format!("seed-{seed}"))
    }

    pub fn status(&self, entry: &ManifestEntry, seed: u64) -> Option<CellStatus> {
        read_json(&self.seed_dir(entry, seed).join("status.json")).ok()
    }

    /// Reports of one trained model, in eval-grid order.
    pub fn reports(&self, entry: &ManifestEntry, seed: u64) -> Result<Vec<EvalReport>> {
        let dir = self.seed_dir(entry, seed);
        (0..entry.eval_grid.len())
            .map(|k| read_json(&dir.join(format!("eval-{k}.json"))))
            .collect()
    }

    /// `(method, hyper, seed, error)` for every failed cell.
    pub fn failures(&self) -> Vec<(String, String, u64, String)> {
        let mut out = Vec::new();
        for e in &self.manifest.entries {
            for &s in &self.manifest.spec.seeds {
                if let Some(CellStatus::Failed { error }) = self.status(e, s) {
                    out.push((e.method.clone(), e.hyper.clone(), s, error));
                }
            }
        }
        out
    }
}

/// Trains and evaluates every cell of `spec` under `out`, then writes the
/// aggregate tables. Cell failures are recorded in their status files and do
/// not stop the sweep.
pub fn run_sweep(
    spec: &SweepSpec,
    out: impl AsRef<Path>,
    opts: &SweepOptions,
) -> Result<ResultStore> {
    spec.validate()?;
    let root = out.as_ref().to_path_buf();
    create_dir(&root)?;
    let store = ResultStore {
        root: root.clone(),
        manifest: Manifest {
            spec: spec.clone(),
            entries: spec.entries()?,
        },
    };
    write_json(&root.join("manifest.json"), &store.manifest)?;

    let mut data: BTreeMap<String, std::result::Result<(Dataset, Dataset), String>> =
        BTreeMap::new();
    for beta in spec.beta_list() {
        data.insert(
            beta_key(beta),
            spec.data.load(beta).map_err(|e| e.to_string()),
        );
    }
    let eval_opts = EvalOptions {
        recall_grid: spec.recall_grid.clone(),
        ..EvalOptions::default()
    };
    let jobs: Vec<(&ManifestEntry, u64)> = store
        .manifest
        .entries
        .iter()
        .flat_map(|e| spec.seeds.iter().map(move |&s| (e, s)))
        .collect();

    let run = || -> Result<()> {
        jobs.par_iter().try_for_each(|&(entry, seed)| {
            let dir = store.seed_dir(entry, seed);
            if opts.resume {
                if let Some(CellStatus::Ok { evals }) = store.status(entry, seed) {
                    if evals == entry.eval_grid.len() {
                        return Ok(());
                    }
                }
            }
            create_dir(&dir)?;
            let outcome = match &data[&beta_key(entry.beta)] {
                Ok((train_ds, test_ds)) => {
                    run_cell(entry, seed, train_ds, test_ds, &dir, &eval_opts, opts)
                }
                Err(e) => Err(Error::Input(format!("dataset unavailable: {e}"))),
            };
            let status = match outcome {
                Ok(n) => CellStatus::Ok { evals: n },
                Err(e) => CellStatus::Failed {
                    error: e.to_string(),
                },
            };
            write_json(&dir.join("status.json"), &status)
        })
    };
    match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    }

    write_aggregates(&store, None)?;
    Ok(store)
}

fn beta_key(beta: Option<f64>) -> String {
    beta.map_or_else(|| "native".to_string(), |b| b.to_string())
}

fn run_cell(
    entry: &ManifestEntry,
    seed: u64,
    train_ds: &Dataset,
    test_ds: &Dataset,
    dir: &Path,
    eval_opts: &EvalOptions,
    opts: &SweepOptions,
) -> Result<usize> {
    let mut cfg = entry.config.clone();
    cfg.seed = seed;
    let trace_path = dir.join("trace.jsonl");
    let file = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let mut trace = JsonLinesTrace::new(std::io::BufWriter::new(file));
    let model = train_with(&cfg, train_ds, &mut trace)?;
    std::io::Write::flush(&mut trace.into_inner()).map_err(|e| Error::io(&trace_path, e))?;
    if opts.write_checkpoints {
        checkpoint::save(&model, dir.join("model.ckpt"))?;
    }
    let reports = evaluate_with(&model, test_ds, &entry.eval_grid, eval_opts)?;
    for (k, r) in reports.iter().enumerate() {
        let path = dir.join(format!("eval-{k}.json"));
        fs::write(&path, serde_json::to_vec(r)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(reports.len())
}

/// Seed-averaged metrics of one (trained model, eval λ) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub method: String,
    pub beta: Option<f64>,
    pub hyper: String,
    pub train_lambda: String,
    pub eval_index: usize,
    pub eval_lambda: LambdaVec,
    pub seeds: Vec<u64>,
    pub mean: MetricSummary,
    pub per_seed: Vec<MetricSummary>,
}

/// Seed-averages every completed cell. With `only_seed` the average runs
/// over that single seed.
pub fn aggregate(store: &ResultStore, only_seed: Option<u64>) -> Result<Vec<AggregateCell>> {
    let mut out = Vec::new();
    for entry in &store.manifest.entries {
        let mut seeds = Vec::new();
        let mut per_seed = Vec::new();
        for &s in &store.manifest.spec.seeds {
            if only_seed.is_some_and(|o| o != s) {
                continue;
            }
            if let Some(CellStatus::Ok { .. }) = store.status(entry, s) {
                per_seed.push(store.reports(entry, s)?);
                seeds.push(s);
            }
        }
        if per_seed.is_empty() {
            continue;
        }
        for (k, avg) in seed_average(&per_seed)?.into_iter().enumerate() {
            out.push(AggregateCell {
                method: entry.method.clone(),
                beta: entry.beta,
                hyper: entry.hyper.clone(),
                train_lambda: entry.train_lambda.clone(),
                eval_index: k,
                eval_lambda: avg.lambda,
                seeds: seeds.clone(),
                mean: avg.mean,
                per_seed: avg.per_seed,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Max,
    Min,
}

impl Direction {
    /// Lower is better for Brier score and false-positive rate.
    pub fn for_metric(metric: &str) -> Self {
        match metric {
            "brier" | "fpr" => Direction::Min,
            _ => Direction::Max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub method: String,
    pub beta: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub hyper: String,
    pub train_lambda: String,
    pub eval_lambda: LambdaVec,
}

/// Best seed-averaged value per (β, method) over training hyperparameters
/// and eval λ. Ties keep the first cell in manifest order.
pub fn best_per_method(
    cells: &[AggregateCell],
    metric: &str,
    direction: Direction,
) -> Result<Vec<BestRow>> {
    let mut best: Vec<BestRow> = Vec::new();
    for c in cells {
        let value = c
            .mean
            .get(metric)
            .ok_or_else(|| Error::Input(format!("unknown metric {metric:?}")))?;
        let better = |old: f64| match direction {
            Direction::Max => value > old,
            Direction::Min => value < old,
        };
        let row = BestRow {
            method: c.method.clone(),
            beta: c.beta,
            metric: metric.to_string(),
            value,
            hyper: c.hyper.clone(),
            train_lambda: c.train_lambda.clone(),
            eval_lambda: c.eval_lambda.clone(),
        };
        match best
            .iter_mut()
            .find(|b| b.method == c.method && b.beta == c.beta)
        {
            Some(b) if better(b.value) || b.value.is_nan() => *b = row,
            Some(_) => {}
            None => best.push(row),
        }
    }
    Ok(best)
}

/// Metrics given their own aggregate table.
pub fn table_metrics(recall_grid: &[f64]) -> Vec<String> {
    let mut m: Vec<String> = ["auc", "ap", "brier", "f1", "balanced_acc"]
        .map(String::from)
        .to_vec();
    if recall_grid.contains(&0.99) {
        m.push("p_at_r:0.99".into());
    }
    m
}

fn fmt_beta(beta: Option<f64>) -> String {
    beta.map_or_else(String::new, |b| b.to_string())
}

fn fmt_lambda(l: &LambdaVec) -> String {
    let parts: Vec<String> = l.0.iter().map(f64::to_string).collect();
    parts.join(" ")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn metric_file_stem(metric: &str) -> String {
    metric.replace(':', "")
}

/// Writes `<root>/aggregate/`: `cells.json`, one CSV per table metric and
/// `best.csv`. Output depends only on the manifest and cell files.
pub fn write_aggregates(store: &ResultStore, only_seed: Option<u64>) -> Result<Vec<AggregateCell>> {
    let cells = aggregate(store, only_seed)?;
    let dir = store.root.join("aggregate");
    create_dir(&dir)?;
    write_json(&dir.join("cells.json"), &cells)?;

    let metrics = table_metrics(&store.manifest.spec.recall_grid);
    for metric in &metrics {
        let mut text =
            String::from("method,beta,hyper,train_lambda,eval_lambda,n_seeds,mean,std\n");
        for c in &cells {
            let vals: Vec<f64> = c.per_seed.iter().filter_map(|m| m.get(metric)).collect();
            let mean = c.mean.get(metric).unwrap_or(f64::NAN);
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len().max(1) as f64;
            writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                csv_field(&c.method),
                fmt_beta(c.beta),
                c.hyper,
                csv_field(&c.train_lambda),
                fmt_lambda(&c.eval_lambda),
                c.seeds.len(),
                mean,
                var.sqrt()
            )
            .expect("write to String");
        }
        let path = dir.join(format!("{}.csv", metric_file_stem(metric)));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }

    let mut text =
        String::from("metric,direction,method,beta,value,hyper,train_lambda,eval_lambda\n");
    for metric in &metrics {
        let dir_ = Direction::for_metric(metric);
        for b in best_per_method(&cells, metric, dir_)? {
            writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                metric,
                if dir_ == Direction::Max { "max" } else { "min" },
                csv_field(&b.method),
                fmt_beta(b.beta),
                b.value,
                b.hyper,
                csv_field(&b.train_lambda),
                fmt_lambda(&b.eval_lambda)
            )
            .expect("write to String");
        }
    }
    let path = dir.join("best.csv");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(cells)
}

/// Which aggregate cells to emit curve data for; `None` fields match all.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveSelection {
    pub methods: Option<Vec<String>>,
    pub hypers: Option<Vec<String>>,
    /// Also write each seed's ROC and PR curve CSVs.
    pub per_seed_curves: bool,
    /// Restrict to one seed instead of averaging over all.
    pub seed: Option<u64>,
}

impl CurveSelection {
    fn matches(&self, method: &str, hyper: &str) -> bool {
        self.methods
            .as_ref()
            .is_none_or(|m| m.iter().any(|x| x == method))
            && self
                .hypers
                .as_ref()
                .is_none_or(|h| h.iter().any(|x| x == hyper))
    }
}

/// Writes `<out_dir>/precision_at_recall.csv` (one row per cell and recall
/// level) and `<out_dir>/scatter.csv` (one row per cell, i.e. per eval λ of
/// each trained model). Returns the files written.
pub fn emit_curves(
    store: &ResultStore,
    sel: &CurveSelection,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    create_dir(out_dir)?;
    let cells = aggregate(store, sel.seed)?;
    let selected: Vec<&AggregateCell> = cells
        .iter()
        .filter(|c| sel.matches(&c.method, &c.hyper))
        .collect();
    let key = |c: &AggregateCell| {
        format!(
            "{},{},{},{},{}",
            csv_field(&c.method),
            fmt_beta(c.beta),
            c.hyper,
            csv_field(&c.train_lambda),
            fmt_lambda(&c.eval_lambda)
        )
    };

    let mut par = String::from("method,beta,hyper,train_lambda,eval_lambda,recall,precision\n");
    let mut scatter = String::from(
        "method,beta,hyper,train_lambda,eval_lambda,auc,ap,brier,f1,balanced_acc,p_at_r99\n",
    );
    for c in &selected {
        for rp in &c.mean.precision_at_recall {
            writeln!(par, "{},{},{}", key(c), rp.recall, rp.precision).expect("write to String");
        }
        let m = &c.mean;
        let p99 = m
            .get("p_at_r:0.99")
            .map_or_else(String::new, |v| v.to_string());
        writeln!(
            scatter,
            "{},{},{},{},{},{},{}",
            key(c),
            m.auc,
            m.ap,
            m.brier,
            m.f1,
            m.balanced_acc,
            p99
        )
        .expect("write to String");
    }
    let mut written = Vec::new();
    for (name, text) in [("precision_at_recall.csv", par), ("scatter.csv", scatter)] {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    if sel.per_seed_curves {
        for entry in &store.manifest.entries {
            if !sel.matches(&entry.method, &entry.hyper) {
                continue;
            }
            for &s in &store.manifest.spec.seeds {
                if sel.seed.is_some_and(|o| o != s) {
                    continue;
                }
                if !matches!(store.status(entry, s), Some(CellStatus::Ok { .. })) {
                    continue;
                }
                let dir = out_dir
                    .join(&entry.method)
                    .join(&entry.hyper)
                    .join(format!("seed-{s}"));
                create_dir(&dir)?;
                for (k, r) in store.reports(entry, s)?.iter().enumerate() {
                    for (kind, curve) in [("roc", &r.roc), ("pr", &r.pr)] {
                        let path = dir.join(format!("eval-{k}-{kind}.csv"));
                        fs::write(&path, curve.to_csv_string()).map_err(|e| Error::io(&path, e))?;
                        written.push(path);
                    }
                }
            }
        }
    }
    Ok(written)
}
