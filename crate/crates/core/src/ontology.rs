//! Gene Ontology parsing and the top-level label space.
//!
//! Only `is_a` edges define the hierarchy. `relationship:` lines are kept on
//! the term for inspection but never enter the ancestor closure. Obsolete
//! terms are stored (so they can be counted and recognised in annotation
//! files) but carry no edges.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A GO accession, stored as its 7-digit number.
///
/// Ordering of the numeric value matches lexicographic ordering of the
/// zero-padded `GO:NNNNNNN` form.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoId(u32);

impl GoId {
    pub const MAX: u32 = 9_999_999;

    pub fn new(number: u32) -> Option<Self> {
        (number <= Self::MAX).then_some(GoId(number))
    }

    pub fn number(self) -> u32 {
        self.0
    }
}

impl FromStr for GoId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("GO:")
            .ok_or_else(|| format!("malformed GO accession {s:?}"))?;
        if digits.len() != 7 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("malformed GO accession {s:?}"));
        }
        Ok(GoId(digits.parse().expect("seven ascii digits")))
    }
}

impl fmt::Display for GoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GO:{:07}", self.0)
    }
}

impl fmt::Debug for GoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for GoId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GoId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    BiologicalProcess,
    CellularComponent,
    MolecularFunction,
}

impl Namespace {
    pub const ALL: [Namespace; 3] = [
        Namespace::BiologicalProcess,
        Namespace::CellularComponent,
        Namespace::MolecularFunction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::BiologicalProcess => "biological_process",
            Namespace::CellularComponent => "cellular_component",
            Namespace::MolecularFunction => "molecular_function",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Namespace::BiologicalProcess => "BP",
            Namespace::CellularComponent => "CC",
            Namespace::MolecularFunction => "MF",
        }
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Namespace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "biological_process" | "bp" | "p" => Ok(Namespace::BiologicalProcess),
            "cellular_component" | "cc" | "c" => Ok(Namespace::CellularComponent),
            "molecular_function" | "mf" | "f" => Ok(Namespace::MolecularFunction),
            other => Err(format!("unknown GO namespace {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoTerm {
    pub id: GoId,
    pub name: String,
    /// Always `Some` for non-obsolete terms once the graph is validated.
    pub namespace: Option<Namespace>,
    pub is_obsolete: bool,
    pub is_a_parents: Vec<GoId>,
    pub alt_ids: Vec<GoId>,
    /// Raw `relationship:` values (e.g. `part_of GO:0005634`); not traversed.
    pub relationships: Vec<String>,
}

impl GoTerm {
    fn new(id: GoId) -> Self {
        GoTerm {
            id,
            name: String::new(),
            namespace: None,
            is_obsolete: false,
            is_a_parents: Vec::new(),
            alt_ids: Vec::new(),
            relationships: Vec::new(),
        }
    }
}

/// Validated, immutable GO hierarchy with a precomputed ancestor closure.
#[derive(Debug, Clone)]
pub struct OntologyGraph {
    terms: Vec<GoTerm>,
    index: HashMap<GoId, usize>,
    aliases: HashMap<GoId, GoId>,
    parents: Vec<Vec<u32>>,
    closure: Vec<Vec<u32>>,
    roots: BTreeMap<Namespace, GoId>,
}

pub fn parse_obo(bytes: &[u8]) -> Result<OntologyGraph> {
    OntologyGraph::parse(bytes)
}

impl OntologyGraph {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            line: bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1,
            message: "invalid UTF-8".into(),
        })?;
        let terms = parse_stanzas(text)?;
        Self::from_terms(terms)
    }

    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self> {
        let mut buf = Vec::new();
        reader
            .read_to_end(&mut buf)
            .map_err(|e| Error::io("<obo input>", e))?;
        Self::parse(&buf)
    }

    /// Validates a term list and builds the closure.
    pub fn from_terms(mut terms: Vec<GoTerm>) -> Result<Self> {
        terms.sort_by_key(|t| t.id);
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate term {}", t.id)));
            }
        }

        let mut aliases = HashMap::new();
        for t in &terms {
            for &alt in &t.alt_ids {
                if index.contains_key(&alt) {
                    // a live term id wins over a stale alias
                    continue;
                }
                aliases.insert(alt, t.id);
            }
        }

        for t in &terms {
            if !t.is_obsolete && t.namespace.is_none() {
                return Err(Error::Validation(format!("term {} has no namespace", t.id)));
            }
        }

        let mut parents = vec![Vec::new(); terms.len()];
        for (i, t) in terms.iter().enumerate() {
            if t.is_obsolete {
                continue;
            }
            for &p in &t.is_a_parents {
                let canonical = aliases.get(&p).copied().unwrap_or(p);
                let &pi = index.get(&canonical).ok_or_else(|| {
                    Error::Validation(format!("{} is_a unknown term {}", t.id, p))
                })?;
                let parent = &terms[pi];
                if parent.is_obsolete {
                    return Err(Error::Validation(format!(
                        "{} is_a obsolete term {}",
                        t.id, parent.id
                    )));
                }
                if parent.namespace != t.namespace {
                    return Err(Error::Validation(format!(
                        "{} is_a {} crosses namespaces",
                        t.id, parent.id
                    )));
                }
                parents[i].push(pi as u32);
            }
            parents[i].sort_unstable();
            parents[i].dedup();
        }

        let closure = closure_by_postorder(&terms, &parents)?;

        let mut roots = BTreeMap::new();
        for (i, t) in terms.iter().enumerate() {
            if t.is_obsolete || !parents[i].is_empty() {
                continue;
            }
            let ns = t.namespace.expect("checked above");
            if let Some(prev) = roots.insert(ns, t.id) {
                return Err(Error::Validation(format!(
                    "namespace {ns} has more than one root ({prev} and {})",
                    t.id
                )));
            }
        }

        Ok(OntologyGraph {
            terms,
            index,
            aliases,
            parents,
            closure,
            roots,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[GoTerm] {
        &self.terms
    }

    pub fn obsolete_count(&self) -> usize {
        self.terms.iter().filter(|t| t.is_obsolete).count()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// Non-obsolete term counts per namespace.
    pub fn namespace_counts(&self) -> BTreeMap<Namespace, usize> {
        let mut counts = BTreeMap::new();
        for t in self.terms.iter().filter(|t| !t.is_obsolete) {
            *counts.entry(t.namespace.expect("validated")).or_insert(0) += 1;
        }
        counts
    }

    pub fn roots(&self) -> &BTreeMap<Namespace, GoId> {
        &self.roots
    }

    pub fn root(&self, ns: Namespace) -> Option<GoId> {
        self.roots.get(&ns).copied()
    }

    /// Maps an accession or a registered `alt_id` to the canonical accession.
    pub fn resolve(&self, id: GoId) -> Option<GoId> {
        if self.index.contains_key(&id) {
            Some(id)
        } else {
            self.aliases.get(&id).copied()
        }
    }

    pub fn term(&self, id: GoId) -> Option<&GoTerm> {
        let id = self.resolve(id)?;
        self.index.get(&id).map(|&i| &self.terms[i])
    }

    fn live_index(&self, id: GoId) -> Result<usize> {
        let canonical = self
            .resolve(id)
            .ok_or_else(|| Error::Lookup(format!("unknown term {id}")))?;
        let i = self.index[&canonical];
        if self.terms[i].is_obsolete {
            return Err(Error::Lookup(format!("term {canonical} is obsolete")));
        }
        Ok(i)
    }

    /// Direct `is_a` parents of a live term.
    pub fn parents(&self, id: GoId) -> Result<Vec<GoId>> {
        let i = self.live_index(id)?;
        Ok(self.parents[i]
            .iter()
            .map(|&p| self.terms[p as usize].id)
            .collect())
    }

    /// Transitive `is_a` closure, excluding the term itself.
    pub fn ancestors(&self, id: GoId) -> Result<BTreeSet<GoId>> {
        let i = self.live_index(id)?;
        Ok(self.closure[i]
            .iter()
            .map(|&a| self.terms[a as usize].id)
            .collect())
    }

    /// Non-obsolete direct children of the namespace root, sorted by accession.
    pub fn top_level_terms(&self, ns: Namespace) -> Result<TermDictionary> {
        let root = self
            .root(ns)
            .ok_or_else(|| Error::Validation(format!("namespace {ns} has no root")))?;
        let root_idx = self.index[&root] as u32;
        let entries = self
            .terms
            .iter()
            .enumerate()
            .filter(|(i, t)| !t.is_obsolete && self.parents[*i].contains(&root_idx))
            .map(|(_, t)| DictEntry {
                term_id: t.id,
                name: t.name.clone(),
            })
            .collect();
        TermDictionary::new(ns, entries)
    }

    /// Indices of the dictionary terms that are `id` or one of its ancestors.
    pub fn map_to_top_level(&self, id: GoId, dict: &TermDictionary) -> Result<BTreeSet<usize>> {
        let i = self.live_index(id)?;
        let term = &self.terms[i];
        let ns = term.namespace.expect("validated");
        if ns != dict.namespace() {
            return Err(Error::DomainMismatch {
                term: term.id.to_string(),
                found: ns.to_string(),
                expected: dict.namespace().to_string(),
            });
        }
        let mut out = BTreeSet::new();
        if let Some(k) = dict.index_of(term.id) {
            out.insert(k);
        }
        for &a in &self.closure[i] {
            if let Some(k) = dict.index_of(self.terms[a as usize].id) {
                out.insert(k);
            }
        }
        Ok(out)
    }
}

fn closure_by_postorder(terms: &[GoTerm], parents: &[Vec<u32>]) -> Result<Vec<Vec<u32>>> {
    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;

    let n = terms.len();
    let mut colour = vec![WHITE; n];
    let mut closure: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut stack: Vec<(usize, usize)> = Vec::new();

    for start in 0..n {
        if colour[start] != WHITE {
            continue;
        }
        colour[start] = GREY;
        stack.push((start, 0));
        while let Some(top) = stack.last_mut() {
            let node = top.0;
            if let Some(&p) = parents[node].get(top.1) {
                top.1 += 1;
                let p = p as usize;
                match colour[p] {
                    WHITE => {
                        colour[p] = GREY;
                        stack.push((p, 0));
                    }
                    GREY => {
                        return Err(Error::Validation(format!(
                            "is_a cycle detected involving {}",
                            terms[p].id
                        )))
                    }
                    _ => {}
                }
            } else {
                let mut acc: Vec<u32> = Vec::new();
                for &p in &parents[node] {
                    acc.push(p);
                    acc.extend_from_slice(&closure[p as usize]);
                }
                acc.sort_unstable();
                acc.dedup();
                closure[node] = acc;
                colour[node] = BLACK;
                stack.pop();
            }
        }
    }
    Ok(closure)
}

fn strip_comment(value: &str) -> &str {
    let value = match value.find(" !") {
        Some(pos) => &value[..pos],
        None => value.split('!').next().unwrap_or(value),
    };
    let value = match value.find('{') {
        Some(pos) => &value[..pos],
        None => value,
    };
    value.trim()
}

fn parse_id(value: &str, line: usize) -> Result<GoId> {
    strip_comment(value)
        .parse()
        .map_err(|message| Error::Parse { line, message })
}

fn parse_stanzas(text: &str) -> Result<Vec<GoTerm>> {
    let mut terms = Vec::new();
    let mut in_term = false;
    let mut current: Option<GoTerm> = None;
    let mut stanza_line = 0;

    let finish = |current: &mut Option<GoTerm>, terms: &mut Vec<GoTerm>| {
        if let Some(t) = current.take() {
            terms.push(t);
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('!') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            if in_term && current.is_none() {
                return Err(Error::Parse {
                    line: stanza_line,
                    message: "[Term] stanza without id".into(),
                });
            }
            finish(&mut current, &mut terms);
            in_term = line == "[Term]";
            stanza_line = lineno;
            continue;
        }
        if !in_term {
            continue;
        }
        let Some((tag, value)) = line.split_once(':') else {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected `tag: value`, found {line:?}"),
            });
        };
        let value = value.trim();
        match tag.trim() {
            "id" => {
                if current.is_some() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "second id tag in one stanza".into(),
                    });
                }
                current = Some(GoTerm::new(parse_id(value, lineno)?));
            }
            other => {
                let Some(term) = current.as_mut() else {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("tag {other:?} before id"),
                    });
                };
                match other {
                    "name" => term.name = value.to_string(),
                    "namespace" => {
                        term.namespace = Some(
                            strip_comment(value)
                                .parse()
                                .map_err(|message| Error::Parse {
                                    line: lineno,
                                    message,
                                })?,
                        )
                    }
                    "is_a" => term.is_a_parents.push(parse_id(value, lineno)?),
                    "alt_id" => term.alt_ids.push(parse_id(value, lineno)?),
                    "is_obsolete" => term.is_obsolete = strip_comment(value) == "true",
                    "relationship" => term.relationships.push(strip_comment(value).to_string()),
                    _ => {}
                }
            }
        }
    }
    if in_term && current.is_none() {
        return Err(Error::Parse {
            line: stanza_line,
            message: "[Term] stanza without id".into(),
        });
    }
    finish(&mut current, &mut terms);
    Ok(terms)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictEntry {
    pub term_id: GoId,
    pub name: String,
}

/// Ordered bijection between top-level accessions and output indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDictionary", into = "RawDictionary")]
pub struct TermDictionary {
    namespace: Namespace,
    entries: Vec<DictEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawDictionary {
    namespace: Namespace,
    entries: Vec<DictEntry>,
}

impl TryFrom<RawDictionary> for TermDictionary {
    type Error = Error;

    fn try_from(raw: RawDictionary) -> Result<Self> {
        let dict = TermDictionary::new(raw.namespace, raw.entries.clone())?;
        if dict.entries != raw.entries {
            return Err(Error::Validation("dictionary entries are not sorted".into()));
        }
        Ok(dict)
    }
}

impl From<TermDictionary> for RawDictionary {
    fn from(d: TermDictionary) -> Self {
        RawDictionary {
            namespace: d.namespace,
            entries: d.entries,
        }
    }
}

impl TermDictionary {
    /// Sorts `entries` by accession; duplicates are rejected.
    pub fn new(namespace: Namespace, mut entries: Vec<DictEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.term_id);
        if let Some(w) = entries.windows(2).find(|w| w[0].term_id == w[1].term_id) {
            return Err(Error::Validation(format!(
                "duplicate dictionary term {}",
                w[0].term_id
            )));
        }
        Ok(TermDictionary { namespace, entries })
    }

    pub fn namespace(&self) -> Namespace {
        self.namespace
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&DictEntry> {
        self.entries.get(index)
    }

    pub fn index_of(&self, id: GoId) -> Option<usize> {
        self.entries.binary_search_by_key(&id, |e| e.term_id).ok()
    }

    /// `index<TAB>GO:accession<TAB>name`, one line per entry.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\t{}\n", e.term_id, e.name));
        }
        out
    }
}
