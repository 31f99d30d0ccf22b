//! One training loop covering three objectives:
//!
//! * `baseline`: a single fixed λ in the loss; the network never sees λ.
//! * `lct`: λ drawn from `P_Λ` once per mini-batch, fed to the loss and,
//!   through FiLM, to the network.
//! * `lct_no_film`: λ drawn per mini-batch but only fed to the loss.
//!
//! A point-mass `P_Λ` makes `lct` collapse onto `baseline`: FiLM is switched
//! off whenever the distribution is degenerate, so the two runs consume the
//! same random streams and perform identical arithmetic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{shuffled_batches, CsvSchema, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::film_net::{Architecture, FilmMlp};
use crate::losses::{value_and_grad, LambdaMap, LambdaVec, LossFamily, LossSpec};
use crate::metrics::{
    best_balanced_accuracy, brier, confusion_at, pr_ap, precision_at_recall, roc_auc,
    scalar_metrics, Curve, ScoredSet,
};
use crate::ndmath::{Matrix, Rng};
use crate::optim::{clip_grad, l2_norm, OptimizerConfig, Sam};
use crate::sampler::{sample_lambda, LambdaDistribution};

/// Recall levels used for precision-at-recall unless configured otherwise.
pub const DEFAULT_RECALL_GRID: [f64; 8] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99];

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const LAMBDA_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Lct,
    LctNoFilm,
}

/// Hidden-layer sizes; input and λ dimensions come from the data and loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub channels: usize,
    pub film_hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let a = Architecture::desk_default(1, 1);
        Self {
            hidden: a.hidden,
            channels: a.channels,
            film_hidden: a.film_hidden,
        }
    }
}

impl NetworkConfig {
    pub fn architecture(&self, input_dim: usize, lambda_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            channels: self.channels,
            film_hidden: self.film_hidden,
            lambda_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub loss: LossFamily,
    #[serde(default)]
    pub lambda_map: LambdaMap,
    /// Training λ. Baseline needs every coordinate to be a point mass.
    pub lambda: LambdaDistribution,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// SAM neighbourhood radius; `None` trains with the plain optimizer.
    #[serde(default)]
    pub sam_rho: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Maximum global gradient norm; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    /// Fraction of the epochs after which the learning rate is multiplied by
    /// `lr_drop_factor`; the drop happens at epoch `ceil(lr_drop_at · epochs)`.
    #[serde(default = "default_drop_at")]
    pub lr_drop_at: f64,
    #[serde(default = "default_drop_factor")]
    pub lr_drop_factor: f64,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    128
}
fn default_clip() -> Option<f64> {
    Some(0.5)
}
fn default_drop_at() -> f64 {
    0.8
}
fn default_drop_factor() -> f64 {
    0.1
}

impl TrainConfig {
    /// Defaults for everything but the objective.
    pub fn new(method: Method, loss: LossFamily, lambda: LambdaDistribution) -> Self {
        Self {
            method,
            loss,
            lambda_map: LambdaMap::Full,
            lambda,
            optimizer: OptimizerConfig::default(),
            sam_rho: None,
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            clip_norm: default_clip(),
            lr_drop_at: default_drop_at(),
            lr_drop_factor: default_drop_factor(),
            network: NetworkConfig::default(),
            seed: 0,
        }
    }

    pub fn loss_spec(&self, beta: f64) -> LossSpec {
        LossSpec {
            family: self.loss,
            beta,
            map: self.lambda_map,
        }
    }

    /// Whether λ reaches the network during training and inference.
    pub fn film_enabled(&self) -> bool {
        self.method == Method::Lct && !self.lambda.is_degenerate()
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.method == Method::Baseline && !self.lambda.is_degenerate() {
            return Err(Error::Config(format!(
                "baseline training needs a point lambda, got {}",
                self.lambda
            )));
        }
        if self.lambda.dim() != self.lambda_map.dim() {
            return Err(Error::Config(format!(
                "lambda has {} coordinates, {} loss with this map expects {}",
                self.lambda.dim(),
                self.loss,
                self.lambda_map.dim()
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        if let Some(rho) = self.sam_rho {
            if !(rho >= 0.0 && rho.is_finite()) {
                return Err(Error::Config(format!("sam_rho must be >= 0, got {rho}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lr_drop_at) || !(self.lr_drop_factor > 0.0) {
            return Err(Error::Config(
                "lr_drop_at must lie in [0, 1] and lr_drop_factor be > 0".into(),
            ));
        }
        // Every corner of the support must give valid loss parameters.
        let spec = self.loss_spec(2.0);
        let coords = self.lambda.coords();
        for mask in 0..(1usize << coords.len()) {
            let corner = coords
                .iter()
                .enumerate()
                .map(|(i, c)| if mask >> i & 1 == 1 { c.b() } else { c.a() })
                .collect();
            spec.params(&LambdaVec(corner))?;
        }
        self.network.architecture(1, self.lambda.dim()).validate()
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let drop_epoch = (self.lr_drop_at * self.epochs as f64 - 1e-9).ceil() as usize;
        if epoch >= drop_epoch {
            self.optimizer.lr() * self.lr_drop_factor
        } else {
            self.optimizer.lr()
        }
    }
}

/// Per-epoch summary; also the JSON-lines trace record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub batches: usize,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    pub lambda_mean: Vec<f64>,
    pub lambda_min: Vec<f64>,
    pub lambda_max: Vec<f64>,
}

/// What happened in one mini-batch step.
#[derive(Clone, Debug)]
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub batch_size: usize,
    /// λ used in the loss.
    pub loss_lambda: &'a LambdaVec,
    /// λ fed to the network, if any.
    pub network_lambda: Option<&'a LambdaVec>,
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

pub trait TrainObserver {
    fn on_batch(&mut self, _event: &BatchEvent<'_>) {}
    fn on_epoch(&mut self, _log: &EpochLog) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Writes one JSON object per epoch.
pub struct JsonLinesTrace<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesTrace<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TrainObserver for JsonLinesTrace<W> {
    fn on_epoch(&mut self, log: &EpochLog) -> Result<()> {
        serde_json::to_writer(&mut self.out, log)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::Internal(format!("trace write failed: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub net: FilmMlp,
    pub config: TrainConfig,
    /// Imbalance ratio of the training set, as used by the VS loss.
    pub train_beta: f64,
    pub history: Vec<EpochLog>,
    pub standardizer: Option<Standardizer>,
    pub schema: Option<CsvSchema>,
}

impl TrainedModel {
    pub fn film_enabled(&self) -> bool {
        self.config.film_enabled()
    }

    /// Positive-class probabilities for every row.
    pub fn scores(&self, x: &Matrix, lambda: &LambdaVec) -> Result<Vec<f64>> {
        self.check_eval_lambda(lambda)?;
        Ok(self
            .net
            .logits(x, lambda, self.film_enabled())?
            .iter()
            .map(|z| z.p_plus())
            .collect())
    }

    fn check_eval_lambda(&self, lambda: &LambdaVec) -> Result<()> {
        if lambda.dim() != self.config.lambda.dim() {
            return Err(Error::Config(format!(
                "evaluation lambda has {} coordinates, model was trained with {}",
                lambda.dim(),
                self.config.lambda.dim()
            )));
        }
        if lambda.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "evaluation lambda {:?} is not finite",
                lambda.0
            )));
        }
        Ok(())
    }
}

/// The network `train` starts from for this config and dataset.
pub fn init_model(cfg: &TrainConfig, ds: &Dataset) -> Result<FilmMlp> {
    cfg.validate()?;
    let arch = cfg.network.architecture(ds.dim(), cfg.lambda.dim());
    FilmMlp::new(arch, &mut Rng::new(cfg.seed).substream(INIT_STREAM))
}

pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainedModel> {
    train_with(cfg, ds, &mut ())
}

pub fn train_with(
    cfg: &TrainConfig,
    ds: &Dataset,
    observer: &mut dyn TrainObserver,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let spec = cfg.loss_spec(ds.beta());
    let root = Rng::new(cfg.seed);
    let mut shuffle_rng = root.substream(SHUFFLE_STREAM);
    let mut lambda_rng = root.substream(LAMBDA_STREAM);

    let mut net = init_model(cfg, ds)?;
    let mut theta = net.params().to_vec();
    let mut sam = Sam::new(cfg.sam_rho.unwrap_or(0.0), cfg.optimizer.build(theta.len()));
    let film = cfg.film_enabled();
    let dim = cfg.lambda.dim();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        sam.inner.set_lr(lr);
        let batches = shuffled_batches(ds.len(), cfg.batch_size, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut norm_max: f64 = 0.0;
        let mut lam_sum = vec![0.0; dim];
        let mut lam_min = vec![f64::INFINITY; dim];
        let mut lam_max = vec![f64::NEG_INFINITY; dim];

        for (bi, idx) in batches.iter().enumerate() {
            let lambda = sample_lambda(&cfg.lambda, &mut lambda_rng);
            let params = spec.params(&lambda)?;
            let x = ds.features().select_rows(idx);
            let y: Vec<_> = idx.iter().map(|&i| ds.labels()[i]).collect();
            let inv_n = 1.0 / idx.len() as f64;
            let mut first_norm = None;

            let mut objective = |point: &[f64]| -> Result<(f64, Vec<f64>)> {
                let diverged = |grad_norm| Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    lambda: lambda.0.clone(),
                    grad_norm,
                };
                net.params_mut().copy_from_slice(point);
                // Overflowing logits are rejected by the forward pass itself.
                let (z, tape) = match net.forward(&x, &lambda, film) {
                    Err(Error::Input(_)) => return Err(diverged(f64::NAN)),
                    other => other?,
                };
                let mut loss = 0.0;
                let mut dz = Vec::with_capacity(2 * y.len());
                for (r, &label) in y.iter().enumerate() {
                    let logits = crate::losses::Logits::new(z.get(r, 0), z.get(r, 1));
                    let (l, (g_minus, g_plus)) = value_and_grad(label, logits, &params)?;
                    loss += l;
                    dz.push(g_minus * inv_n);
                    dz.push(g_plus * inv_n);
                }
                loss *= inv_n;
                let mut g = net.backward(tape, &Matrix::new(y.len(), 2, dz)?)?;
                let norm = match cfg.clip_norm {
                    Some(c) => clip_grad(&mut g, c),
                    None => l2_norm(&g),
                };
                if !loss.is_finite() || !norm.is_finite() {
                    return Err(diverged(norm));
                }
                first_norm.get_or_insert(norm);
                Ok((loss, g))
            };
            let loss = sam.step(&mut theta, &mut objective)?;
            let grad_norm = first_norm.unwrap_or(0.0);

            observer.on_batch(&BatchEvent {
                epoch,
                batch: bi,
                batch_size: idx.len(),
                loss_lambda: &lambda,
                network_lambda: film.then_some(&lambda),
                loss,
                grad_norm,
            });
            loss_sum += loss;
            norm_sum += grad_norm;
            norm_max = norm_max.max(grad_norm);
            for (k, &v) in lambda.0.iter().enumerate() {
                lam_sum[k] += v;
                lam_min[k] = lam_min[k].min(v);
                lam_max[k] = lam_max[k].max(v);
            }
        }

        let nb = batches.len() as f64;
        let log = EpochLog {
            epoch,
            lr,
            mean_loss: loss_sum / nb,
            batches: batches.len(),
            grad_norm_mean: norm_sum / nb,
            grad_norm_max: norm_max,
            lambda_mean: lam_sum.iter().map(|s| s / nb).collect(),
            lambda_min: lam_min,
            lambda_max: lam_max,
        };
        observer.on_epoch(&log)?;
        history.push(log);
    }

    net.params_mut().copy_from_slice(&theta);
    Ok(TrainedModel {
        net,
        config: cfg.clone(),
        train_beta: ds.beta(),
        history,
        standardizer: ds.standardizer().cloned(),
        schema: ds.schema().cloned(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub recall_grid: Vec<f64>,
    /// Weight of recall in the F-beta score.
    pub beta_f: f64,
    /// Score threshold for the confusion-based metrics; positives are
    /// predicted when `p_+ > threshold`.
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            recall_grid: DEFAULT_RECALL_GRID.to_vec(),
            beta_f: 2.0,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallPrecision {
    pub recall: f64,
    pub precision: f64,
}

/// Scalar metrics of one evaluation; averaging across seeds works field by
/// field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub ap: f64,
    pub brier: f64,
    pub f1: f64,
    pub f_beta: f64,
    pub balanced_acc: f64,
    pub best_balanced_acc: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub g_mean: f64,
    pub precision_at_recall: Vec<RecallPrecision>,
}

/// Names accepted by [`MetricSummary::get`], plus `p_at_r:<recall>`.
pub const METRIC_NAMES: [&str; 12] = [
    "auc",
    "ap",
    "brier",
    "f1",
    "f_beta",
    "balanced_acc",
    "best_balanced_acc",
    "accuracy",
    "precision",
    "tpr",
    "fpr",
    "g_mean",
];

impl MetricSummary {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "auc" => self.auc,
            "ap" => self.ap,
            "brier" => self.brier,
            "f1" => self.f1,
            "f_beta" => self.f_beta,
            "balanced_acc" => self.balanced_acc,
            "best_balanced_acc" => self.best_balanced_acc,
            "accuracy" => self.accuracy,
            "precision" => self.precision,
            "tpr" => self.tpr,
            "fpr" => self.fpr,
            "g_mean" => self.g_mean,
            other => {
                let r: f64 = other.strip_prefix("p_at_r:")?.parse().ok()?;
                return self
                    .precision_at_recall
                    .iter()
                    .find(|rp| rp.recall == r)
                    .map(|rp| rp.precision);
            }
        })
    }

    /// Field-wise arithmetic mean. Values are summed in sorted order so the
    /// result does not depend on the order of `items`.
    pub fn mean(items: &[MetricSummary]) -> Result<MetricSummary> {
        let first = items
            .first()
            .ok_or_else(|| Error::Input("cannot average zero reports".into()))?;
        let grid: Vec<f64> = first.precision_at_recall.iter().map(|r| r.recall).collect();
        for it in items {
            if it
                .precision_at_recall
                .iter()
                .map(|r| r.recall)
                .ne(grid.iter().copied())
            {
                return Err(Error::Input("reports use different recall grids".into()));
            }
        }
        let avg = |f: &dyn Fn(&MetricSummary) -> f64| sorted_mean(items.iter().map(f));
        Ok(MetricSummary {
            auc: avg(&|m| m.auc),
            ap: avg(&|m| m.ap),
            brier: avg(&|m| m.brier),
            f1: avg(&|m| m.f1),
            f_beta: avg(&|m| m.f_beta),
            balanced_acc: avg(&|m| m.balanced_acc),
            best_balanced_acc: avg(&|m| m.best_balanced_acc),
            accuracy: avg(&|m| m.accuracy),
            precision: avg(&|m| m.precision),
            tpr: avg(&|m| m.tpr),
            fpr: avg(&|m| m.fpr),
            g_mean: avg(&|m| m.g_mean),
            precision_at_recall: grid
                .iter()
                .enumerate()
                .map(|(k, &recall)| RecallPrecision {
                    recall,
                    precision: avg(&|m| m.precision_at_recall[k].precision),
                })
                .collect(),
        })
    }
}

fn sorted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lambda: LambdaVec,
    pub n_plus: u64,
    pub n_minus: u64,
    pub metrics: MetricSummary,
    pub roc: Curve,
    pub pr: Curve,
}

pub fn evaluate(model: &TrainedModel, ds: &Dataset, grid: &[LambdaVec]) -> Result<Vec<EvalReport>> {
    evaluate_with(model, ds, grid, &EvalOptions::default())
}

pub fn evaluate_with(
    model: &TrainedModel,
    ds: &Dataset,
    grid: &[LambdaVec],
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    if model.config.method == Method::Baseline && grid.len() != 1 {
        return Err(Error::Input(format!(
            "baseline models take a single evaluation lambda, got {}",
            grid.len()
        )));
    }
    grid.iter()
        .map(|lambda| {
            let scores = model.scores(ds.features(), lambda)?;
            let set = ScoredSet::new(scores, ds.labels().to_vec())?;
            report_for(lambda.clone(), &set, opts)
        })
        .collect()
}

/// All metrics for one set of scores.
pub fn report_for(lambda: LambdaVec, set: &ScoredSet, opts: &EvalOptions) -> Result<EvalReport> {
    let (roc, auc) = roc_auc(set)?;
    let (pr, ap) = pr_ap(set)?;
    let conf = confusion_at(set, opts.threshold)?;
    let sm = scalar_metrics(&conf, opts.beta_f)?;
    let precision_at_recall = opts
        .recall_grid
        .iter()
        .map(|&recall| {
            Ok(RecallPrecision {
                recall,
                precision: precision_at_recall(set, recall)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        lambda,
        n_plus: set.n_plus(),
        n_minus: set.n_minus(),
        metrics: MetricSummary {
            auc,
            ap,
            brier: brier(set)?,
            f1: sm.f1,
            f_beta: sm.f_beta,
            balanced_acc: sm.balanced_acc,
            best_balanced_acc: best_balanced_accuracy(set)?,
            accuracy: sm.overall_acc,
            precision: sm.precision,
            tpr: sm.tpr,
            fpr: sm.fpr,
            g_mean: sm.g_mean,
            precision_at_recall,
        },
        roc,
        pr,
    })
}

/// Seed-averaged metrics for one evaluation λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedReport {
    pub lambda: LambdaVec,
    pub n_seeds: usize,
    pub mean: MetricSummary,
    pub per_seed: Vec<MetricSummary>,
    pub roc: Vec<Curve>,
    pub pr: Vec<Curve>,
}

/// `per_seed[s][k]` is seed `s`'s report for the `k`-th evaluation λ; every
/// seed must use the same grid.
pub fn seed_average(per_seed: &[Vec<EvalReport>]) -> Result<Vec<AveragedReport>> {
    let first = per_seed
        .first()
        .ok_or_else(|| Error::Input("seed_average needs at least one seed".into()))?;
    for reports in per_seed {
        if reports.len() != first.len()
            || reports.iter().zip(first).any(|(a, b)| a.lambda != b.lambda)
        {
            return Err(Error::Input(
                "seeds were evaluated on different lambda grids".into(),
            ));
        }
    }
    (0..first.len())
        .map(|k| {
            let cells: Vec<&EvalReport> = per_seed.iter().map(|r| &r[k]).collect();
            let metrics: Vec<MetricSummary> = cells.iter().map(|c| c.metrics.clone()).collect();
            Ok(AveragedReport {
                lambda: first[k].lambda.clone(),
                n_seeds: cells.len(),
                mean: MetricSummary::mean(&metrics)?,
                per_seed: metrics,
                roc: cells.iter().map(|c| c.roc.clone()).collect(),
                pr: cells.iter().map(|c| c.pr.clone()).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::losses::Class;
    use crate::sampler::LinearPdf;

    fn small_data() -> (Dataset, Dataset) {
        generate_synthetic(&SyntheticSpec {
            d: 3,
            separation: 2.5,
            std_minus: 1.0,
            std_plus: 1.0,
            n_majority: 200,
            beta_target: 10.0,
            n_test_per_class: 60,
            balanced_test: true,
            seed: 11,
        })
        .unwrap()
    }

    fn small_cfg(method: Method, lambda: LambdaDistribution) -> TrainConfig {
        let mut c = TrainConfig::new(method, LossFamily::Vs, lambda);
        c.epochs = 6;
        c.batch_size = 32;
        c.network = NetworkConfig {
            hidden: vec![8],
            channels: 4,
            film_hidden: 6,
        };
        c.seed = 5;
        c
    }

    fn point(g: f64, t: f64) -> LambdaDistribution {
        LambdaDistribution::point(&LambdaVec(vec![g, t]))
    }

    fn lct_dist() -> LambdaDistribution {
        LambdaDistribution::new(vec![
            LinearPdf::new(0.0, 0.3, 0.0).unwrap(),
            LinearPdf::new(0.0, 3.0, 0.33).unwrap(),
        ])
    }

    #[test]
    fn point_mass_lct_matches_baseline_bitwise() {
        let (train_ds, _) = small_data();
        let a = train(&small_cfg(Method::Baseline, point(0.2, 1.0)), &train_ds).unwrap();
        let b = train(&small_cfg(Method::Lct, point(0.2, 1.0)), &train_ds).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn training_is_reproducible() {
        let (train_ds, _) = small_data();
        let cfg = small_cfg(Method::Lct, lct_dist());
        assert_eq!(
            train(&cfg, &train_ds).unwrap(),
            train(&cfg, &train_ds).unwrap()
        );
    }

    #[test]
    fn no_film_keeps_generator_at_init() {
        let (train_ds, test_ds) = small_data();
        let cfg = small_cfg(Method::LctNoFilm, lct_dist());
        let m = train(&cfg, &train_ds).unwrap();
        let init = init_model(&cfg, &train_ds).unwrap();
        let r = m.net.film_range();
        assert_eq!(&m.net.params()[r.clone()], &init.params()[r]);
        assert_ne!(m.net.params(), init.params());
        let grid = [LambdaVec(vec![0.0, 0.0]), LambdaVec(vec![0.3, 3.0])];
        let rep = evaluate(&m, &test_ds, &grid).unwrap();
        assert_eq!(rep[0].metrics, rep[1].metrics);
    }

    struct Recorder(Vec<(Vec<f64>, Option<Vec<f64>>)>);
    impl TrainObserver for Recorder {
        fn on_batch(&mut self, e: &BatchEvent<'_>) {
            self.0.push((
                e.loss_lambda.0.clone(),
                e.network_lambda.map(|l| l.0.clone()),
            ));
        }
    }

    #[test]
    fn one_lambda_per_batch_shared_by_loss_and_net() {
        let (train_ds, _) = small_data();
        let cfg = small_cfg(Method::Lct, lct_dist());
        let mut rec = Recorder(Vec::new());
        let m = train_with(&cfg, &train_ds, &mut rec).unwrap();
        let per_epoch = train_ds.len().div_ceil(cfg.batch_size);
        assert_eq!(rec.0.len(), per_epoch * cfg.epochs);
        assert_eq!(m.history.len(), cfg.epochs);
        for (loss_l, net_l) in &rec.0 {
            assert_eq!(Some(loss_l), net_l.as_ref());
            assert!((0.0..=0.3).contains(&loss_l[0]) && (0.0..=3.0).contains(&loss_l[1]));
        }
        let distinct: std::collections::BTreeSet<u64> =
            rec.0.iter().map(|r| r.0[0].to_bits()).collect();
        assert_eq!(distinct.len(), rec.0.len());
    }

    #[test]
    fn baseline_rejects_distribution_and_multi_grid() {
        assert!(matches!(
            small_cfg(Method::Baseline, lct_dist()).validate(),
            Err(Error::Config(_))
        ));
        let (train_ds, test_ds) = small_data();
        let mut cfg = small_cfg(Method::Baseline, point(0.1, 1.0));
        cfg.epochs = 1;
        let m = train(&cfg, &train_ds).unwrap();
        let grid = [LambdaVec(vec![0.1, 1.0]), LambdaVec(vec![0.2, 1.0])];
        assert!(matches!(
            evaluate(&m, &test_ds, &grid),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            evaluate(&m, &test_ds, &[LambdaVec(vec![0.1])]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_support_rejected() {
        let bad = LambdaDistribution::new(vec![
            LinearPdf::new(-0.5, 0.5, 1.0).unwrap(),
            LinearPdf::point(1.0),
        ]);
        let mut cfg = small_cfg(Method::Lct, bad);
        cfg.loss = LossFamily::Focal;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn nan_aborts_with_diagnostics() {
        let (train_ds, _) = small_data();
        let mut cfg = small_cfg(Method::Baseline, point(0.0, 0.0));
        cfg.optimizer = OptimizerConfig::Sgd {
            lr: 1e300,
            momentum: 0.0,
        };
        cfg.clip_norm = None;
        match train(&cfg, &train_ds) {
            Err(Error::NonFiniteLoss { lambda, .. }) => assert_eq!(lambda, vec![0.0, 0.0]),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn lr_schedule_drops_once() {
        let mut cfg = small_cfg(Method::Baseline, point(0.0, 0.0));
        cfg.epochs = 10;
        assert_eq!(cfg.lr_at(7), 0.05);
        assert!((cfg.lr_at(8) - 0.005).abs() < 1e-18);
        assert!((cfg.lr_at(9) - 0.005).abs() < 1e-18);
        cfg.epochs = 1;
        assert_eq!(cfg.lr_at(0), 0.05);
        cfg.epochs = 200;
        assert_eq!((cfg.lr_at(159), cfg.lr_at(160) < 0.05), (0.05, true));
    }

    #[test]
    fn evaluate_repeated_lambda_and_auc_composition() {
        let (train_ds, test_ds) = small_data();
        let m = train(&small_cfg(Method::Lct, lct_dist()), &train_ds).unwrap();
        let l = LambdaVec(vec![0.1, 1.0]);
        let rep = evaluate(&m, &test_ds, &[l.clone(), l.clone()]).unwrap();
        assert_eq!(rep[0], rep[1]);
        let set = ScoredSet::new(
            m.scores(test_ds.features(), &l).unwrap(),
            test_ds.labels().to_vec(),
        )
        .unwrap();
        assert_eq!(rep[0].metrics.auc, roc_auc(&set).unwrap().1);
        assert_eq!(rep[0].metrics.precision_at_recall.len(), 8);
        assert_eq!(
            rep[0].metrics.get("p_at_r:0.99"),
            Some(rep[0].metrics.precision_at_recall[7].precision)
        );
    }

    fn summary(auc: f64) -> MetricSummary {
        MetricSummary {
            auc,
            ap: auc / 2.0,
            brier: 0.1,
            f1: 0.5,
            f_beta: 0.5,
            balanced_acc: 0.5,
            best_balanced_acc: 0.5,
            accuracy: 0.5,
            precision: 0.5,
            tpr: 0.5,
            fpr: 0.5,
            g_mean: 0.5,
            precision_at_recall: vec![RecallPrecision {
                recall: 0.5,
                precision: auc,
            }],
        }
    }

    fn report(auc: f64) -> EvalReport {
        EvalReport {
            lambda: LambdaVec(vec![0.0, 1.0]),
            n_plus: 1,
            n_minus: 1,
            metrics: summary(auc),
            roc: Curve::default(),
            pr: Curve::default(),
        }
    }

    #[test]
    fn seed_average_means_and_symmetry() {
        let one = seed_average(&[vec![report(0.9)]]).unwrap();
        assert_eq!(one[0].mean, summary(0.9));
        let a =
            seed_average(&[vec![report(0.90)], vec![report(0.91)], vec![report(0.92)]]).unwrap();
        assert!((a[0].mean.auc - 0.91).abs() < 1e-12);
        let b =
            seed_average(&[vec![report(0.92)], vec![report(0.90)], vec![report(0.91)]]).unwrap();
        assert_eq!(a[0].mean, b[0].mean);
        let mut other = report(0.9);
        other.lambda = LambdaVec(vec![0.1, 1.0]);
        assert!(matches!(
            seed_average(&[vec![report(0.9)], vec![other]]),
            Err(Error::Input(_))
        ));
        assert!(seed_average(&[]).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let mut cfg = small_cfg(Method::Lct, lct_dist());
        cfg.sam_rho = Some(0.05);
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("L(0,0.3,0)"));
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), cfg);
        let minimal: TrainConfig =
            serde_json::from_str(r#"{"method":"baseline","loss":"vs","lambda":[0.1, 2]}"#).unwrap();
        assert_eq!(minimal.epochs, 200);
        assert_eq!(minimal.batch_size, 128);
        assert_eq!(minimal.clip_norm, Some(0.5));
        assert!(minimal.lambda.is_degenerate());
        let _ = Class::Pos;
    }
}
