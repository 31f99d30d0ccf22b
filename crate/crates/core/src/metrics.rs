//! Threshold-sweep metrics for a scored binary test set.
//!
//! A sample is predicted `+` at threshold `t` iff its score is strictly
//! greater than `t`. Curves step over the distinct score values only, so tied
//! scores always change class together; this is what makes the trapezoidal
//! ROC area coincide with the Mann-Whitney statistic (ties counted ½).
//!
//! Curve point `j` (after admitting the `j` highest distinct scores) carries
//! the threshold that reproduces it through [`confusion_at`]: the next lower
//! distinct score, or `min_score - 1` for the final all-positive point. The
//! ROC curve additionally starts at `(0, 0)` with threshold `max_score`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Class;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<Class>,
    n_plus: u64,
    n_minus: u64,
}

impl ScoredSet {
    /// `scores` are positive-class probabilities in `[0, 1]`.
    pub fn new(scores: Vec<f64>, labels: Vec<Class>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Input(format!("score {bad} outside [0, 1]")));
        }
        let n_plus = labels.iter().filter(|l| l.is_pos()).count() as u64;
        let n_minus = labels.len() as u64 - n_plus;
        Ok(Self {
            scores,
            labels,
            n_plus,
            n_minus,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_plus(&self) -> u64 {
        self.n_plus
    }

    pub fn n_minus(&self) -> u64 {
        self.n_minus
    }

    fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::Input("empty scored set".into()))
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn n_plus(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn n_minus(&self) -> u64 {
        self.fp + self.tn
    }
}

/// Counts at threshold `t` (predict `+` iff score > t). Any non-NaN
/// threshold is accepted so that curve thresholds below the lowest score
/// round-trip.
pub fn confusion_at(s: &ScoredSet, threshold: f64) -> Result<Confusion> {
    s.require_non_empty()?;
    if threshold.is_nan() {
        return Err(Error::Input("threshold is NaN".into()));
    }
    let mut c = Confusion::default();
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        match (score > threshold, label) {
            (true, Class::Pos) => c.tp += 1,
            (true, Class::Neg) => c.fp += 1,
            (false, Class::Neg) => c.tn += 1,
            (false, Class::Pos) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub overall_acc: f64,
    pub balanced_acc: f64,
    pub f1: f64,
    pub f_beta: f64,
    pub g_mean: f64,
}

fn f_score(precision: f64, recall: f64, beta_f: f64) -> f64 {
    let b2 = beta_f * beta_f;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

/// Confusion-derived metrics. `beta_f` is the recall-vs-precision importance
/// ratio of the F-beta score (unrelated to the imbalance ratio).
pub fn scalar_metrics(c: &Confusion, beta_f: f64) -> Result<ScalarMetrics> {
    let (n_plus, n_minus) = (c.n_plus(), c.n_minus());
    if n_plus == 0 || n_minus == 0 {
        return Err(Error::MetricUndefined(format!(
            "scalar metrics need both classes, got n_+ = {n_plus}, n_- = {n_minus}"
        )));
    }
    let tpr = c.tp as f64 / n_plus as f64;
    let tnr = c.tn as f64 / n_minus as f64;
    let predicted_pos = c.tp + c.fp;
    let precision = if predicted_pos == 0 {
        0.0
    } else {
        c.tp as f64 / predicted_pos as f64
    };
    Ok(ScalarMetrics {
        tpr,
        fpr: c.fp as f64 / n_minus as f64,
        precision,
        overall_acc: (c.tp + c.tn) as f64 / (n_plus + n_minus) as f64,
        balanced_acc: 0.5 * (tpr + tnr),
        f1: f_score(precision, tpr, 1.0),
        f_beta: f_score(precision, tpr, beta_f),
        g_mean: (tpr * tnr).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "threshold,x,y")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.x, p.y)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }
}

/// Cumulative counts after admitting each distinct score, highest first.
struct Step {
    threshold: f64,
    tp: u64,
    fp: u64,
}

fn sweep(s: &ScoredSet) -> Vec<Step> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let score = s.scores[order[i]];
        while i < order.len() && s.scores[order[i]] == score {
            if s.labels[order[i]].is_pos() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < order.len() {
            s.scores[order[i]]
        } else {
            score - 1.0
        };
        steps.push(Step { threshold, tp, fp });
    }
    steps
}

fn max_score(s: &ScoredSet) -> f64 {
    s.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// ROC curve (x = FPR, y = TPR) and its trapezoidal area.
pub fn roc_auc(s: &ScoredSet) -> Result<(Curve, f64)> {
    s.require_non_empty()?;
    if s.n_plus == 0 || s.n_minus == 0 {
        return Err(Error::MetricUndefined(format!(
            "ROC needs both classes, got n_+ = {}, n_- = {}",
            s.n_plus, s.n_minus
        )));
    }
    let (np, nm) = (s.n_plus as f64, s.n_minus as f64);
    let mut points = vec![CurvePoint {
        threshold: max_score(s),
        x: 0.0,
        y: 0.0,
    }];
    // Twice the area in units of one (positive, negative) pair, kept integral
    // so the result is exactly the Mann-Whitney fraction.
    let mut twice_area: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    for step in sweep(s) {
        twice_area += (step.fp - prev_fp) as u128 * (step.tp + prev_tp) as u128;
        prev_tp = step.tp;
        prev_fp = step.fp;
        points.push(CurvePoint {
            threshold: step.threshold,
            x: step.fp as f64 / nm,
            y: step.tp as f64 / np,
        });
    }
    let auc = twice_area as f64 / (2.0 * s.n_plus as f64 * s.n_minus as f64);
    Ok((Curve { points }, auc))
}

/// Precision-recall curve (x = recall, y = precision) and average precision
/// `Σ (R_n - R_{n-1}) P_n` without interpolation.
pub fn pr_ap(s: &ScoredSet) -> Result<(Curve, f64)> {
    s.require_non_empty()?;
    if s.n_plus == 0 {
        return Err(Error::MetricUndefined(
            "precision-recall needs a positive sample".into(),
        ));
    }
    let np = s.n_plus as f64;
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_tp = 0u64;
    for step in sweep(s) {
        let precision = step.tp as f64 / (step.tp + step.fp) as f64;
        ap += (step.tp - prev_tp) as f64 / np * precision;
        prev_tp = step.tp;
        points.push(CurvePoint {
            threshold: step.threshold,
            x: step.tp as f64 / np,
            y: precision,
        });
    }
    Ok((Curve { points }, ap))
}

/// Best precision over all thresholds whose recall is at least `min_recall`.
pub fn precision_at_recall(s: &ScoredSet, min_recall: f64) -> Result<f64> {
    if !(min_recall > 0.0 && min_recall <= 1.0) {
        return Err(Error::Input(format!(
            "min_recall must lie in (0, 1], got {min_recall}"
        )));
    }
    let (curve, _) = pr_ap(s)?;
    Ok(curve
        .points
        .iter()
        .filter(|p| p.x >= min_recall)
        .map(|p| p.y)
        .fold(0.0, f64::max))
}

/// Mean squared error between labels (0/1) and positive-class scores.
pub fn brier(s: &ScoredSet) -> Result<f64> {
    s.require_non_empty()?;
    let sum: f64 = s
        .scores
        .iter()
        .zip(&s.labels)
        .map(|(p, y)| (y.indicator() - p).powi(2))
        .sum();
    Ok(sum / s.len() as f64)
}

/// Highest balanced accuracy over every curve threshold.
pub fn best_balanced_accuracy(s: &ScoredSet) -> Result<f64> {
    let (curve, _) = roc_auc(s)?;
    Ok(curve
        .points
        .iter()
        .map(|p| 0.5 * (p.y + 1.0 - p.x))
        .fold(0.0, f64::max))
}
