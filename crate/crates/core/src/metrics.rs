//! Classification metrics for 7-class softmax outputs.
//!
//! Precision and recall are binary quantities, so a multi-class number
//! needs a reduction. Two are provided and both can be reported side by side:
//!
//! * [`AggregationMode::ThresholdMicro`]: every (sample, class) pair is a
//!   binary decision, positive iff the class score is at least `τ = 0.5`;
//!   the counts are pooled over all pairs.
//! * [`AggregationMode::ArgmaxMacro`]: one-vs-rest counts per class from
//!   the argmax prediction, averaged over the seven classes.
//!
//! Accuracy always comes from the argmax confusion matrix and AUC is the
//! unweighted mean of the seven one-vs-rest rank AUCs.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::label::{ClassLabel, NUM_CLASSES};
use crate::{Error, Result};

/// Decision threshold of the pooled reduction.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One evaluated sample: its softmax scores and true label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub scores: [f64; NUM_CLASSES],
    pub label: ClassLabel,
}

impl ScoredSample {
    /// Checks that the scores form a probability vector (sum within 1e-6).
    pub fn new(scores: [f64; NUM_CLASSES], label: ClassLabel) -> Result<Self> {
        let sum: f64 = scores.iter().sum();
        if scores.iter().any(|s| !(*s >= 0.0 && *s <= 1.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("scores do not form a probability vector (sum {sum})")));
        }
        Ok(ScoredSample { scores, label })
    }

    /// Highest-scoring class; ties go to the lowest code.
    pub fn predicted(&self) -> ClassLabel {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate().skip(1) {
            if s > self.scores[best] {
                best = i;
            }
        }
        ClassLabel::ALL[best]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// A ratio that may have had a zero denominator, in which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio {
                value: 0.0,
                undefined: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                undefined: false,
            }
        }
    }
}

/// TP / (TP + FP)
pub fn precision(c: &BinaryCounts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fp)
}

/// TP / (TP + FN)
pub fn recall(c: &BinaryCounts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fn_)
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn zeros() -> Self {
        ConfusionMatrix {
            counts: [[0; NUM_CLASSES]; NUM_CLASSES],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Per-class support (row sums).
    pub fn support(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn predicted_totals(&self) -> [u64; NUM_CLASSES] {
        let mut out = [0; NUM_CLASSES];
        for row in &self.counts {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn is_diagonal(&self) -> bool {
        (0..NUM_CLASSES).all(|i| (0..NUM_CLASSES).all(|j| i == j || self.counts[i][j] == 0))
    }

    /// One-vs-rest counts for `class` from argmax decisions.
    pub fn one_vs_rest(&self, class: ClassLabel) -> BinaryCounts {
        let c = class.index();
        let tp = self.counts[c][c];
        let fn_ = self.support()[c] - tp;
        let fp = self.predicted_totals()[c] - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

pub fn confusion_matrix(samples: &[ScoredSample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::Empty("confusion matrix of zero samples"));
    }
    let mut cm = ConfusionMatrix::zeros();
    for s in samples {
        cm.counts[s.label.index()][s.predicted().index()] += 1;
    }
    Ok(cm)
}

/// Fraction of samples on the diagonal.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::Empty("accuracy of an empty confusion matrix")),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

/// Pooled counts over every (sample, class) pair; a pair is a positive
/// decision iff its score is at least `threshold`.
pub fn threshold_counts(samples: &[ScoredSample], threshold: f64) -> Result<BinaryCounts> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Contract(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = BinaryCounts::default();
    for s in samples {
        for (i, &score) in s.scores.iter().enumerate() {
            c.record(score >= threshold, i == s.label.index());
        }
    }
    Ok(c)
}

/// One-vs-rest counts per class from argmax decisions.
pub fn argmax_counts(samples: &[ScoredSample]) -> [BinaryCounts; NUM_CLASSES] {
    let mut out = [BinaryCounts::default(); NUM_CLASSES];
    for s in samples {
        let p = s.predicted();
        for (c, counts) in ClassLabel::ALL.iter().zip(out.iter_mut()) {
            counts.record(p == *c, s.label == *c);
        }
    }
    out
}

/// Rank-sum AUC: `(S_p − n_p(n_p+1)/2) / (n_p·n_n)` where `S_p` sums the
/// ascending 1-based ranks of the positives over the pooled scores, with
/// tied scores sharing their average rank.
pub fn auc_rank(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Empty("AUC needs at least one positive and one negative"));
    }
    if positives.iter().chain(negatives).any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let mut pooled: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN rejected above"));

    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start;
        let mut pos_in_group = 0u64;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            pos_in_group += pooled[end].1 as u64;
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        rank_sum += mean_rank * pos_in_group as f64;
        start = end;
    }
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassAuc {
    pub value: f64,
    /// `None` for classes without positives or without negatives.
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub excluded: Vec<ClassLabel>,
}

/// Unweighted mean of the one-vs-rest rank AUCs. Classes lacking positives
/// or negatives are left out of the mean and listed in `excluded`.
pub fn multiclass_auc(samples: &[ScoredSample]) -> Result<MulticlassAuc> {
    let mut per_class = [None; NUM_CLASSES];
    let mut excluded = Vec::new();
    for class in ClassLabel::ALL {
        let c = class.index();
        let (pos, neg): (Vec<&ScoredSample>, Vec<&ScoredSample>) = samples.iter().partition(|s| s.label == class);
        if pos.is_empty() || neg.is_empty() {
            excluded.push(class);
            continue;
        }
        let p: Vec<f64> = pos.iter().map(|s| s.scores[c]).collect();
        let n: Vec<f64> = neg.iter().map(|s| s.scores[c]).collect();
        per_class[c] = Some(auc_rank(&p, &n)?);
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Empty("no class has both positives and negatives"));
    }
    Ok(MulticlassAuc {
        value: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    ThresholdMicro,
    ArgmaxMacro,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::ThresholdMicro => "threshold_micro",
            AggregationMode::ArgmaxMacro => "argmax_macro",
        }
    }
}

/// Which reductions a run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsMode {
    ThresholdMicro,
    ArgmaxMacro,
    #[default]
    Both,
}

impl MetricsMode {
    pub fn modes(self) -> &'static [AggregationMode] {
        match self {
            MetricsMode::ThresholdMicro => &[AggregationMode::ThresholdMicro],
            MetricsMode::ArgmaxMacro => &[AggregationMode::ArgmaxMacro],
            MetricsMode::Both => &[AggregationMode::ThresholdMicro, AggregationMode::ArgmaxMacro],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "threshold_micro" => Ok(MetricsMode::ThresholdMicro),
            "argmax_macro" => Ok(MetricsMode::ArgmaxMacro),
            "both" => Ok(MetricsMode::Both),
            other => Err(Error::Config(format!("unknown metrics mode `{other}`"))),
        }
    }
}

/// One results row: Loss, ACC, Precision, AUC, Recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub auc: f64,
    pub recall: f64,
    pub aggregation_mode: AggregationMode,
    /// Some denominator of the precision reduction was zero.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    /// Classes left out of the AUC mean.
    pub auc_excluded: Vec<ClassLabel>,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 5] = ["Loss", "ACC", "Precision", "AUC", "Recall"];

    /// Values in [`Self::COLUMNS`] order.
    pub fn values(&self) -> [f64; 5] {
        [self.loss, self.accuracy, self.precision, self.auc, self.recall]
    }
}

pub fn full_report(samples: &[ScoredSample], loss: f64, mode: AggregationMode) -> Result<MetricsReport> {
    if !(loss.is_finite() && loss >= 0.0) {
        return Err(Error::Contract(format!("loss must be finite and non-negative, got {loss}")));
    }
    let cm = confusion_matrix(samples)?;
    let acc = accuracy(&cm)?;
    let auc = multiclass_auc(samples)?;
    let (precision, recall) = match mode {
        AggregationMode::ThresholdMicro => {
            let c = threshold_counts(samples, DEFAULT_THRESHOLD)?;
            (precision(&c), recall(&c))
        }
        AggregationMode::ArgmaxMacro => {
            let per_class = argmax_counts(samples);
            let mean = |f: fn(&BinaryCounts) -> Ratio| {
                let rs: Vec<Ratio> = per_class.iter().map(f).collect();
                Ratio {
                    value: rs.iter().map(|r| r.value).sum::<f64>() / NUM_CLASSES as f64,
                    undefined: rs.iter().any(|r| r.undefined),
                }
            };
            (mean(precision), mean(recall))
        }
    };
    Ok(MetricsReport {
        loss,
        accuracy: acc,
        precision: precision.value,
        auc: auc.value,
        recall: recall.value,
        aggregation_mode: mode,
        precision_undefined: precision.undefined,
        recall_undefined: recall.undefined,
        auc_excluded: auc.excluded,
    })
}

/// One report per reduction selected by `mode`.
pub fn full_reports(samples: &[ScoredSample], loss: f64, mode: MetricsMode) -> Result<Vec<MetricsReport>> {
    mode.modes().iter().map(|&m| full_report(samples, loss, m)).collect()
}
