use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{predict_dataset, Checkpoint};
use crate::ontology::TermDictionary;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn record(&mut self, pred: bool, target: bool) {
        match (pred, target) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Micro counts plus one set of counts per label column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub micro: ConfusionCounts,
    pub per_label: Vec<ConfusionCounts>,
}

impl Confusion {
    pub fn zeros(labels: usize) -> Self {
        Confusion {
            micro: ConfusionCounts::default(),
            per_label: vec![ConfusionCounts::default(); labels],
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.micro += other.micro;
        for (a, b) in self.per_label.iter_mut().zip(&other.per_label) {
            *a += *b;
        }
    }
}

/// Counts row-major `B×labels` binary decisions.
pub fn confusion(pred: &[u8], target: &[u8], labels: usize) -> Result<Confusion> {
    if pred.len() != target.len() || labels == 0 || pred.len() % labels != 0 {
        return Err(Error::Shape(format!(
            "confusion: {} predictions, {} targets, {labels} labels",
            pred.len(),
            target.len()
        )));
    }
    if pred.iter().chain(target).any(|&v| v > 1) {
        return Err(Error::Shape("confusion: entries must be 0 or 1".into()));
    }
    let mut c = Confusion::zeros(labels);
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        c.per_label[i % labels].record(p == 1, t == 1);
        c.micro.record(p == 1, t == 1);
    }
    Ok(c)
}

/// Harmonic mean of precision and recall; 0 when any denominator vanishes.
pub fn f1(c: &ConfusionCounts) -> f64 {
    if c.tp == 0 {
        // P or R is 0 or undefined, so P+R = 0 or a denominator is zero
        return 0.0;
    }
    let p = c.tp as f64 / (c.tp + c.fp) as f64;
    let r = c.tp as f64 / (c.tp + c.fn_) as f64;
    2.0 * p * r / (p + r)
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as i128, c.fp as i128, c.tn as i128, c.fn_ as i128);
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.contains(&0) {
        return 0.0;
    }
    let num = (tp * tn - fp * fn_) as f64;
    // the four-way product can exceed i128 for huge counts, so take square roots pairwise
    let den = ((factors[0] * factors[1]) as f64).sqrt() * ((factors[2] * factors[3]) as f64).sqrt();
    (num / den).clamp(-1.0, 1.0)
}

/// Strictly-greater thresholding, so a threshold of 1.0 never fires.
pub fn binarize<T: Copy + Into<f64>>(probs: &[T], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p.into() > threshold)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub index: usize,
    pub term_id: String,
    pub name: String,
    pub counts: ConfusionCounts,
    pub f1: f64,
    pub mcc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub samples: usize,
    pub micro: ConfusionCounts,
    pub micro_f1: f64,
    pub micro_mcc: f64,
    pub per_label: Vec<LabelScore>,
}

impl EvalReport {
    pub fn from_confusion(c: &Confusion, dict: &TermDictionary, threshold: f64, samples: usize) -> Result<Self> {
        if c.per_label.len() != dict.size() {
            return Err(Error::Shape(format!(
                "{} label columns for a dictionary of {}",
                c.per_label.len(),
                dict.size()
            )));
        }
        let per_label = c
            .per_label
            .iter()
            .zip(dict.entries())
            .enumerate()
            .map(|(index, (counts, e))| LabelScore {
                index,
                term_id: e.term_id.to_string(),
                name: e.name.clone(),
                counts: *counts,
                f1: f1(counts),
                mcc: mcc(counts),
            })
            .collect();
        Ok(EvalReport {
            threshold,
            samples,
            micro: c.micro,
            micro_f1: f1(&c.micro),
            micro_mcc: mcc(&c.micro),
            per_label,
        })
    }

    pub fn to_text(&self) -> String {
        let m = &self.micro;
        let mut s = String::new();
        writeln!(s, "threshold\t{:.4}", self.threshold).unwrap();
        writeln!(s, "samples\t{}", self.samples).unwrap();
        writeln!(s, "micro_counts\ttp={} fp={} tn={} fn={}", m.tp, m.fp, m.tn, m.fn_).unwrap();
        writeln!(s, "micro_f1\t{:.6}", self.micro_f1).unwrap();
        writeln!(s, "micro_mcc\t{:.6}", self.micro_mcc).unwrap();
        writeln!(s).unwrap();
        s.push_str(&self.to_tsv());
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("index\tterm\tname\ttp\tfp\ttn\tfn\tf1\tmcc\n");
        for l in &self.per_label {
            let c = &l.counts;
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                l.index, l.term_id, l.name, c.tp, c.fp, c.tn, c.fn_, l.f1, l.mcc
            )
            .unwrap();
        }
        s
    }
}

/// Scores row-major `rows × labels` probabilities against `ds`.
pub fn report_from_probs<T: Copy + Into<f64>>(probs: &[T], ds: &Dataset, threshold: f64) -> Result<EvalReport> {
    let targets: Vec<u8> = (0..ds.len()).flat_map(|r| ds.labels(r).iter().copied()).collect();
    let c = confusion(&binarize(probs, threshold), &targets, ds.num_labels())?;
    EvalReport::from_confusion(&c, ds.dictionary(), threshold, ds.len())
}

/// Eval-mode forward over every row in order, then one report per threshold.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset, thresholds: &[f64], batch_size: usize) -> Result<Vec<EvalReport>> {
    if ds.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    ckpt.check_dictionary(ds.dictionary())?;
    if ckpt.dictionary != *ds.dictionary() {
        return Err(Error::Incompatible(
            "the dataset's term dictionary differs from the checkpoint's".into(),
        ));
    }
    if ckpt.config().alphabet_hash() != ds.alphabet().hash() {
        return Err(Error::Incompatible(format!(
            "alphabet mismatch: checkpoint {}, dataset {}",
            ckpt.config().alphabet_hash(),
            ds.alphabet().hash()
        )));
    }
    let probs = predict_dataset(&ckpt.model, ds, batch_size)?;
    thresholds.iter().map(|&t| report_from_probs(&probs, ds, t)).collect()
}
