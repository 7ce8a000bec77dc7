//! QuickGO annotation tables, FASTA sequences and the join that turns them
//! into a [`Dataset`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DropCounters};
use crate::encoding::{encode_labels, encode_sequence, Alphabet};
use crate::error::{Error, Result};
use crate::ontology::{GoId, OntologyGraph, TermDictionary};

/// Experimental and curator-statement evidence codes.
pub const DEFAULT_EVIDENCE: [&str; 8] = ["EXP", "IDA", "IPI", "IMP", "IGI", "IEP", "TAS", "IC"];

pub fn default_whitelist() -> BTreeSet<String> {
    DEFAULT_EVIDENCE.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub protein_id: String,
    pub go_term: GoId,
    pub evidence_code: String,
    pub qualifier: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnNames {
    pub protein: String,
    pub go_term: String,
    pub evidence: String,
    /// Optional; when the column is absent no rows are treated as negated.
    pub qualifier: String,
}

impl Default for ColumnNames {
    fn default() -> Self {
        ColumnNames {
            protein: "GENE PRODUCT ID".into(),
            go_term: "GO TERM".into(),
            evidence: "GO EVIDENCE CODE".into(),
            qualifier: "QUALIFIER".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedAnnotations {
    pub records: Vec<AnnotationRecord>,
    pub malformed: usize,
    pub negated: usize,
}

/// Reads a tab-separated annotation export with a header row.
pub fn parse_annotation_table<R: Read>(reader: R, columns: &ColumnNames) -> Result<ParsedAnnotations> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .quoting(false)
        .comment(Some(b'!'))
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion(format!("annotation header: {e}")))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| find(name).ok_or_else(|| Error::Ingestion(format!("missing required column {name:?}")));
    let protein_col = require(&columns.protein)?;
    let term_col = require(&columns.go_term)?;
    let evidence_col = require(&columns.evidence)?;
    let qualifier_col = find(&columns.qualifier);

    let mut out = ParsedAnnotations::default();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(Error::Ingestion(e.to_string())),
            Err(_) => {
                out.malformed += 1;
                continue;
            }
        };
        if row.len() != headers.len() {
            out.malformed += 1;
            continue;
        }
        let protein = row[protein_col].trim();
        let evidence = row[evidence_col].trim();
        let term = row[term_col].trim().parse::<GoId>();
        let evidence_ok = !evidence.is_empty() && evidence.bytes().all(|b| b.is_ascii_uppercase());
        let (Ok(go_term), false, true) = (term, protein.is_empty(), evidence_ok) else {
            log::debug!("malformed annotation row at line {:?}", row.position().map(|p| p.line()));
            out.malformed += 1;
            continue;
        };
        let qualifier = qualifier_col
            .map(|c| row[c].trim().to_string())
            .filter(|q| !q.is_empty());
        if qualifier.as_deref().is_some_and(|q| q.contains("NOT")) {
            out.negated += 1;
            continue;
        }
        out.records.push(AnnotationRecord {
            protein_id: protein.to_string(),
            go_term,
            evidence_code: evidence.to_string(),
            qualifier,
        });
    }
    Ok(out)
}

pub fn filter_experimental(records: &[AnnotationRecord], whitelist: &BTreeSet<String>) -> Vec<AnnotationRecord> {
    records
        .iter()
        .filter(|r| whitelist.contains(&r.evidence_code))
        .cloned()
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Aggregation {
    pub proteins: BTreeMap<String, BTreeSet<usize>>,
    pub unresolved: usize,
    pub obsolete: usize,
    pub other_namespace: usize,
    /// Proteins whose records all mapped to nothing (e.g. the root only).
    pub empty_mapping: usize,
}

/// Unions the top-level indices of every record per protein.
pub fn aggregate_by_protein(
    records: &[AnnotationRecord],
    graph: &OntologyGraph,
    dict: &TermDictionary,
) -> Aggregation {
    let mut agg = Aggregation::default();
    let mut seen = BTreeMap::<&str, BTreeSet<usize>>::new();
    for r in records {
        let Some(term) = graph.term(r.go_term) else {
            agg.unresolved += 1;
            continue;
        };
        if term.is_obsolete {
            agg.obsolete += 1;
            continue;
        }
        if term.namespace != Some(dict.namespace()) {
            agg.other_namespace += 1;
            continue;
        }
        let indices = graph
            .map_to_top_level(term.id, dict)
            .expect("live term in the dictionary's namespace");
        seen.entry(&r.protein_id).or_default().extend(indices);
    }
    for (protein, set) in seen {
        if set.is_empty() {
            agg.empty_mapping += 1;
        } else {
            agg.proteins.insert(protein.to_string(), set);
        }
    }
    agg
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FastaRecords {
    pub sequences: BTreeMap<String, String>,
    pub duplicates: usize,
    pub illegal: usize,
}

fn accession(header: &str) -> &str {
    let header = header.trim();
    if header.contains('|') {
        header.split('|').nth(1).unwrap_or("").trim()
    } else {
        header.split_whitespace().next().unwrap_or("")
    }
}

/// Reads FASTA records in file order: sequence lines joined, whitespace
/// removed, uppercased. No alphabet check and no de-duplication.
pub fn read_fasta_records<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Ingestion(format!("FASTA line {}: {e}", n + 1)))?;
        if let Some(header) = line.strip_prefix('>') {
            out.push((accession(header).to_string(), String::new()));
        } else if let Some((_, seq)) = out.last_mut() {
            seq.extend(line.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_ascii_uppercase()));
        } else if !line.trim().is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                message: "sequence data before the first FASTA header".into(),
            });
        }
    }
    Ok(out)
}

/// Reads FASTA. Records with symbols outside `alphabet` are dropped; a repeated
/// accession replaces the earlier record.
pub fn parse_fasta<R: BufRead>(reader: R, alphabet: &Alphabet) -> Result<FastaRecords> {
    let mut out = FastaRecords::default();
    for (id, seq) in read_fasta_records(reader)? {
        if id.is_empty() || seq.is_empty() || !alphabet.contains_all(&seq) {
            out.illegal += 1;
            continue;
        }
        if out.sequences.insert(id, seq).is_some() {
            out.duplicates += 1;
        }
    }
    if out.duplicates > 0 {
        log::warn!("{} duplicate FASTA accessions, kept the last occurrence", out.duplicates);
    }
    Ok(out)
}

/// Inner join of aggregated labels and sequences, ordered by protein id.
pub fn build_dataset(
    aggregated: &BTreeMap<String, BTreeSet<usize>>,
    sequences: &BTreeMap<String, String>,
    dict: &TermDictionary,
    alphabet: &Alphabet,
    max_len: usize,
) -> Result<Dataset> {
    if max_len == 0 {
        return Err(Error::Dataset("max_len must be at least 1".into()));
    }
    let mut drops = DropCounters::default();
    let mut rows = Vec::new();
    for (id, indices) in aggregated {
        let Some(seq) = sequences.get(id) else {
            drops.missing_sequence += 1;
            continue;
        };
        let enc = encode_sequence(seq, alphabet, max_len)?;
        rows.push((id.clone(), enc, encode_labels(indices, dict.size())?));
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!(
            "no protein has both annotations and a sequence ({} annotated, {} sequences)",
            aggregated.len(),
            sequences.len()
        )));
    }
    Dataset::new(dict.namespace(), dict.clone(), alphabet.clone(), max_len, rows, drops)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IngestOptions {
    pub columns: ColumnNames,
    pub whitelist: BTreeSet<String>,
    pub alphabet: Alphabet,
    pub max_len: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            columns: ColumnNames::default(),
            whitelist: default_whitelist(),
            alphabet: Alphabet::default(),
            max_len: crate::encoding::DEFAULT_MAX_LEN,
        }
    }
}

/// Parse, filter, aggregate and join, carrying every drop counter into the
/// dataset.
pub fn ingest<A: Read, F: BufRead>(
    graph: &OntologyGraph,
    dict: &TermDictionary,
    annotations: A,
    fasta: F,
    opts: &IngestOptions,
) -> Result<Dataset> {
    let parsed = parse_annotation_table(annotations, &opts.columns)?;
    let kept = filter_experimental(&parsed.records, &opts.whitelist);
    let agg = aggregate_by_protein(&kept, graph, dict);
    let seqs = parse_fasta(fasta, &opts.alphabet)?;
    let mut ds = build_dataset(&agg.proteins, &seqs.sequences, dict, &opts.alphabet, opts.max_len)?;
    ds.drops = DropCounters {
        malformed_rows: parsed.malformed,
        not_qualified: parsed.negated,
        non_experimental: parsed.records.len() - kept.len(),
        unresolved_terms: agg.unresolved,
        obsolete_terms: agg.obsolete,
        other_namespace: agg.other_namespace,
        empty_mapping: agg.empty_mapping,
        fasta_duplicates: seqs.duplicates,
        fasta_illegal: seqs.illegal,
        missing_sequence: ds.drops.missing_sequence,
    };
    Ok(ds)
}
