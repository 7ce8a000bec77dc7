use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::encoding::{decode_labels, Alphabet, EncodedSequence};
use crate::error::{Error, Result};
use crate::ontology::{Namespace, TermDictionary};

pub const DATASET_KIND: &str = "dataset";

/// Records dropped along the ingestion pipeline.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropCounters {
    pub malformed_rows: usize,
    pub not_qualified: usize,
    pub non_experimental: usize,
    pub unresolved_terms: usize,
    pub obsolete_terms: usize,
    pub other_namespace: usize,
    pub empty_mapping: usize,
    pub fasta_duplicates: usize,
    pub fasta_illegal: usize,
    pub missing_sequence: usize,
}

/// Encoded sequences, masks and label vectors for one namespace. Rows are in
/// protein-id order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    namespace: Namespace,
    dictionary: TermDictionary,
    alphabet: Alphabet,
    max_len: usize,
    protein_ids: Vec<String>,
    sequences: Vec<EncodedSequence>,
    labels: Vec<Vec<u8>>,
    pub drops: DropCounters,
}

/// A contiguous block of rows laid out for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub max_len: usize,
    /// B×L residue indices, pad positions included.
    pub tokens: Vec<usize>,
    pub mask: Vec<u8>,
    /// B×K binary targets; empty when the batch has no labels.
    pub targets: Vec<u8>,
}

impl Batch {
    pub fn from_encoded(seqs: &[&EncodedSequence]) -> Result<Self> {
        let max_len = seqs.first().map_or(0, |s| s.max_len());
        let mut tokens = Vec::with_capacity(seqs.len() * max_len);
        let mut mask = Vec::with_capacity(seqs.len() * max_len);
        for s in seqs {
            if s.max_len() != max_len {
                return Err(Error::Shape(format!(
                    "batch mixes max_len {max_len} and {}",
                    s.max_len()
                )));
            }
            tokens.extend(s.indices.iter().map(|&i| i as usize));
            mask.extend_from_slice(&s.mask);
        }
        Ok(Batch {
            size: seqs.len(),
            max_len,
            tokens,
            mask,
            targets: Vec::new(),
        })
    }
}

impl Dataset {
    pub fn new(
        namespace: Namespace,
        dictionary: TermDictionary,
        alphabet: Alphabet,
        max_len: usize,
        rows: Vec<(String, EncodedSequence, Vec<u8>)>,
        drops: DropCounters,
    ) -> Result<Self> {
        if dictionary.namespace() != namespace {
            return Err(Error::Dataset(format!(
                "dictionary is for {}, dataset for {}",
                dictionary.namespace().short(),
                namespace.short()
            )));
        }
        if max_len == 0 {
            return Err(Error::Dataset("max_len must be at least 1".into()));
        }
        let mut protein_ids = Vec::with_capacity(rows.len());
        let mut sequences = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (id, seq, label) in rows {
            if seq.max_len() != max_len || seq.mask.len() != max_len {
                return Err(Error::Dataset(format!("{id}: sequence not encoded at max_len {max_len}")));
            }
            if seq.indices.iter().any(|&i| i as usize >= alphabet.table_rows()) {
                return Err(Error::Dataset(format!("{id}: residue index outside the alphabet")));
            }
            if label.len() != dictionary.size() || label.iter().any(|&v| v > 1) {
                return Err(Error::Dataset(format!(
                    "{id}: label vector must be binary of length {}",
                    dictionary.size()
                )));
            }
            if !label.contains(&1) {
                return Err(Error::Dataset(format!("{id}: empty label vector")));
            }
            if protein_ids.last().is_some_and(|prev: &String| prev >= &id) {
                return Err(Error::Dataset(format!("{id}: rows must be strictly ordered by protein id")));
            }
            protein_ids.push(id);
            sequences.push(seq);
            labels.push(label);
        }
        Ok(Dataset {
            namespace,
            dictionary,
            alphabet,
            max_len,
            protein_ids,
            sequences,
            labels,
            drops,
        })
    }

    pub fn len(&self) -> usize {
        self.protein_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protein_ids.is_empty()
    }

    pub fn namespace(&self) -> Namespace {
        self.namespace
    }

    pub fn dictionary(&self) -> &TermDictionary {
        &self.dictionary
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn num_labels(&self) -> usize {
        self.dictionary.size()
    }

    pub fn protein_ids(&self) -> &[String] {
        &self.protein_ids
    }

    pub fn sequence(&self, row: usize) -> &EncodedSequence {
        &self.sequences[row]
    }

    pub fn labels(&self, row: usize) -> &[u8] {
        &self.labels[row]
    }

    pub fn batch(&self, rows: &[usize]) -> Result<Batch> {
        let seqs: Vec<_> = rows.iter().map(|&r| &self.sequences[r]).collect();
        let mut batch = Batch::from_encoded(&seqs)?;
        batch.max_len = self.max_len;
        batch.targets = rows.iter().flat_map(|&r| self.labels[r].iter().copied()).collect();
        Ok(batch)
    }

    /// Rows in the given order. Protein order is no longer guaranteed sorted.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            namespace: self.namespace,
            dictionary: self.dictionary.clone(),
            alphabet: self.alphabet.clone(),
            max_len: self.max_len,
            protein_ids: rows.iter().map(|&r| self.protein_ids[r].clone()).collect(),
            sequences: rows.iter().map(|&r| self.sequences[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
            drops: self.drops.clone(),
        }
    }

    pub fn manifest(&self) -> Manifest {
        let mut histogram = BTreeMap::new();
        let mut label_counts = vec![0usize; self.num_labels()];
        for label in &self.labels {
            let set = decode_labels(label);
            *histogram.entry(set.len().to_string()).or_insert(0) += 1;
            for i in set {
                label_counts[i] += 1;
            }
        }
        Manifest {
            namespace: self.namespace.short().to_string(),
            rows: self.len(),
            dictionary_size: self.num_labels(),
            max_len: self.max_len,
            alphabet_hash: self.alphabet.hash(),
            label_cardinality: histogram,
            label_counts: self
                .dictionary
                .entries()
                .iter()
                .zip(label_counts)
                .map(|(e, n)| (e.term_id.to_string(), n))
                .collect(),
            drops: self.drops.clone(),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let n = self.len();
        let meta = serde_json::to_value(DatasetMeta {
            namespace: self.namespace,
            dictionary: self.dictionary.clone(),
            alphabet: self.alphabet.clone(),
            max_len: self.max_len,
            protein_ids: self.protein_ids.clone(),
            drops: self.drops.clone(),
        })
        .map_err(|e| Error::Dataset(e.to_string()))?;
        let mut c = Container::new(DATASET_KIND, meta);
        let tokens: Vec<u8> = self.sequences.iter().flat_map(|s| s.indices.iter().copied()).collect();
        let mask: Vec<u8> = self.sequences.iter().flat_map(|s| s.mask.iter().copied()).collect();
        let lengths: Vec<u32> = self.sequences.iter().map(|s| s.true_length as u32).collect();
        let labels: Vec<u8> = self.labels.iter().flatten().copied().collect();
        c.push_u8("tokens", &[n, self.max_len], &tokens)?;
        c.push_u8("mask", &[n, self.max_len], &mask)?;
        c.push_u32("true_length", &[n], &lengths)?;
        c.push_u8("labels", &[n, self.num_labels()], &labels)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::Incompatible(format!("dataset header: {e}")))?;
        let n = meta.protein_ids.len();
        let (l, k) = (meta.max_len, meta.dictionary.size());
        let (ts, tokens) = c.u8_block("tokens")?;
        let (ms, mask) = c.u8_block("mask")?;
        let (ls, lengths) = c.u32_block("true_length")?;
        let (ys, labels) = c.u8_block("labels")?;
        if ts != [n, l] || ms != [n, l] || ls != [n] || ys != [n, k] {
            return Err(Error::Incompatible("dataset block shapes disagree with header".into()));
        }
        let rows = (0..n)
            .map(|r| {
                let seq = EncodedSequence {
                    indices: tokens[r * l..(r + 1) * l].to_vec(),
                    mask: mask[r * l..(r + 1) * l].to_vec(),
                    true_length: lengths[r] as usize,
                };
                (meta.protein_ids[r].clone(), seq, labels[r * k..(r + 1) * k].to_vec())
            })
            .collect();
        Dataset::new(meta.namespace, meta.dictionary, meta.alphabet, l, rows, meta.drops)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, DATASET_KIND)?)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    namespace: Namespace,
    dictionary: TermDictionary,
    alphabet: Alphabet,
    max_len: usize,
    protein_ids: Vec<String>,
    drops: DropCounters,
}

/// Human-readable summary written next to a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub namespace: String,
    pub rows: usize,
    pub dictionary_size: usize,
    pub max_len: usize,
    pub alphabet_hash: String,
    /// Number of rows per label-set size.
    pub label_cardinality: BTreeMap<String, usize>,
    /// Positive rows per dictionary term.
    pub label_counts: BTreeMap<String, usize>,
    pub drops: DropCounters,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}
