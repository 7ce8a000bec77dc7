//! Raw sequences to top-level GO terms: encode, eval-mode forward, threshold,
//! then look each set output index up in the checkpoint's dictionary.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Batch;
use crate::encoding::{encode_sequence, EncodedSequence};
use crate::error::Result;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::Checkpoint;
use crate::ontology::{GoId, TermDictionary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedTerm {
    pub term_id: GoId,
    pub name: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub protein_id: String,
    /// Descending probability; ties keep dictionary order.
    pub terms: Vec<PredictedTerm>,
    pub threshold: f64,
}

/// Result for one input sequence. A bad sequence does not affect the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok(Prediction),
    Error { protein_id: String, message: String },
}

impl Outcome {
    pub fn protein_id(&self) -> &str {
        match self {
            Outcome::Ok(p) => &p.protein_id,
            Outcome::Error { protein_id, .. } => protein_id,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictOptions {
    pub threshold: f64,
    /// Report the single most probable term when nothing clears the threshold.
    pub min_one: bool,
    pub batch_size: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            threshold: DEFAULT_THRESHOLD,
            min_one: false,
            batch_size: 100,
        }
    }
}

/// Dictionary entries whose probability is strictly above `threshold`.
pub fn lookup(probs: &[f64], dict: &TermDictionary, threshold: f64, min_one: bool) -> Vec<PredictedTerm> {
    let mut hits: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > threshold).collect();
    if hits.is_empty() && min_one {
        let best = (0..probs.len()).reduce(|a, b| if probs[b] > probs[a] { b } else { a });
        hits.extend(best);
    }
    hits.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    hits.into_iter()
        .map(|i| {
            let e = dict.get(i).expect("one probability per dictionary entry");
            PredictedTerm {
                term_id: e.term_id,
                name: e.name.clone(),
                probability: probs[i],
            }
        })
        .collect()
}

/// Predicts every `(protein_id, sequence)` pair, in input order.
pub fn predict(ckpt: &Checkpoint, sequences: &[(String, String)], opts: &PredictOptions) -> Result<Vec<Outcome>> {
    let cfg = ckpt.config();
    let k = cfg.output_dim;
    let encoded: Vec<std::result::Result<EncodedSequence, String>> = sequences
        .iter()
        .map(|(_, s)| {
            if s.is_empty() {
                return Err("empty sequence".to_string());
            }
            encode_sequence(s, &cfg.alphabet, cfg.max_len).map_err(|e| e.to_string())
        })
        .collect();
    let valid: Vec<usize> = (0..encoded.len()).filter(|&i| encoded[i].is_ok()).collect();
    let chunks: Vec<Vec<f32>> = valid
        .par_chunks(opts.batch_size.max(1))
        .map(|rows| {
            let seqs: Vec<&EncodedSequence> = rows
                .iter()
                .map(|&i| encoded[i].as_ref().expect("filtered to valid"))
                .collect();
            ckpt.model.predict_batch(&Batch::from_encoded(&seqs)?)
        })
        .collect::<Result<_>>()?;
    let probs: Vec<f32> = chunks.concat();

    let mut next = 0;
    let outcomes = sequences
        .iter()
        .zip(encoded)
        .map(|((id, _), enc)| match enc {
            Ok(_) => {
                let row: Vec<f64> = probs[next * k..(next + 1) * k].iter().map(|&p| p as f64).collect();
                next += 1;
                Outcome::Ok(Prediction {
                    protein_id: id.clone(),
                    terms: lookup(&row, &ckpt.dictionary, opts.threshold, opts.min_one),
                    threshold: opts.threshold,
                })
            }
            Err(message) => Outcome::Error {
                protein_id: id.clone(),
                message,
            },
        })
        .collect();
    Ok(outcomes)
}

/// One `protein_id<TAB>GO:accession<TAB>name<TAB>probability` line per term,
/// then a `#` summary line per protein.
pub fn to_tsv(outcomes: &[Outcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        match o {
            Outcome::Ok(p) => {
                for t in &p.terms {
                    writeln!(s, "{}\t{}\t{}\t{:.6}", p.protein_id, t.term_id, t.name, t.probability).unwrap();
                }
                writeln!(s, "# {}\t{} terms\tthreshold {}", p.protein_id, p.terms.len(), p.threshold).unwrap();
            }
            Outcome::Error { protein_id, message } => {
                writeln!(s, "# {protein_id}\terror\t{message}").unwrap();
            }
        }
    }
    s
}
