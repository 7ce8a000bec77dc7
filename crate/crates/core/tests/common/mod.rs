//! Generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;

use protgo::encoding::encode_sequence;
use protgo::ontology::{DictEntry, GoTerm};
use protgo::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Term numbers are `ns_offset + i`, parents always have a smaller `i`, so
/// every namespace is a DAG rooted at its `i = 0` term.
pub struct RandomOntology {
    pub terms: Vec<GoTerm>,
    /// Direct is_a parents per term id, live terms only.
    pub parents: std::collections::BTreeMap<GoId, Vec<GoId>>,
}

pub fn random_ontology(seed: u64, per_namespace: usize) -> RandomOntology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    let mut parents = std::collections::BTreeMap::new();
    for (n, ns) in Namespace::ALL.into_iter().enumerate() {
        let base = 1000 * (n as u32 + 1);
        let mut live: Vec<GoId> = Vec::new();
        for i in 0..per_namespace as u32 {
            let id = GoId::new(base + i).unwrap();
            // obsolete terms never serve as parents
            let obsolete = i > 0 && rng.random_bool(0.1);
            let mut ps = Vec::new();
            if i > 0 && !obsolete {
                let k = rng.random_range(1..=3.min(live.len()));
                for _ in 0..k {
                    ps.push(live[rng.random_range(0..live.len())]);
                }
                ps.sort();
                ps.dedup();
            }
            let alt_ids = if rng.random_bool(0.1) {
                vec![GoId::new(base + 500 + i).unwrap()]
            } else {
                Vec::new()
            };
            terms.push(GoTerm {
                id,
                name: format!("term {}", id.number()),
                namespace: (!obsolete).then_some(ns),
                is_obsolete: obsolete,
                is_a_parents: ps.clone(),
                alt_ids,
                relationships: Vec::new(),
            });
            if !obsolete {
                live.push(id);
                parents.insert(id, ps);
            }
        }
    }
    RandomOntology { terms, parents }
}

impl RandomOntology {
    pub fn graph(&self) -> OntologyGraph {
        OntologyGraph::from_terms(self.terms.clone()).unwrap()
    }

    pub fn to_obo(&self) -> String {
        let mut s = String::from("format-version: 1.2\n\n");
        for t in &self.terms {
            writeln!(s, "[Term]\nid: {}\nname: {}", t.id, t.name).unwrap();
            if let Some(ns) = t.namespace {
                writeln!(s, "namespace: {}", ns.as_str()).unwrap();
            }
            for a in &t.alt_ids {
                writeln!(s, "alt_id: {a}").unwrap();
            }
            for p in &t.is_a_parents {
                writeln!(s, "is_a: {p} ! parent").unwrap();
            }
            if t.is_obsolete {
                writeln!(s, "is_obsolete: true").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Naive recursive DFS over direct parents.
    pub fn dfs_ancestors(&self, id: GoId) -> BTreeSet<GoId> {
        fn walk(o: &RandomOntology, id: GoId, out: &mut BTreeSet<GoId>) {
            for &p in &o.parents[&id] {
                out.insert(p);
                walk(o, p, out);
            }
        }
        let mut out = BTreeSet::new();
        walk(self, id, &mut out);
        out
    }

    pub fn live(&self) -> impl Iterator<Item = &GoTerm> {
        self.terms.iter().filter(|t| !t.is_obsolete)
    }
}

pub fn dictionary(ns: Namespace, size: usize) -> TermDictionary {
    let entries = (1..=size as u32)
        .map(|i| DictEntry {
            term_id: GoId::new(i).unwrap(),
            name: format!("label {i}"),
        })
        .collect();
    TermDictionary::new(ns, entries).unwrap()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, len: usize) -> String {
    let alphabet = Alphabet::default();
    (0..len)
        .map(|_| alphabet.symbol(rng.random_range(0..alphabet.len() as u8)).unwrap())
        .collect()
}

/// `rows` proteins with random sequences and non-empty random label sets.
pub fn random_dataset(seed: u64, rows: usize, labels: usize, max_len: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = Alphabet::default();
    let data = (0..rows)
        .map(|i| {
            let len = rng.random_range(1..=max_len + 5);
            let seq = random_sequence(&mut rng, len);
            let mut y = vec![0u8; labels];
            while !y.contains(&1) {
                y.iter_mut().for_each(|v| *v = rng.random_bool(0.4) as u8);
            }
            (format!("Q{i:04}"), encode_sequence(&seq, &alphabet, max_len).unwrap(), y)
        })
        .collect();
    Dataset::new(
        Namespace::BiologicalProcess,
        dictionary(Namespace::BiologicalProcess, labels),
        alphabet,
        max_len,
        data,
        DropCounters::default(),
    )
    .unwrap()
}

pub fn tiny_config(output_dim: usize, max_len: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        conv_filters: 3,
        gru_hidden: 4,
        dense_hidden: 6,
        output_dim,
        dropout_rate: 0.0,
        max_len,
        ..ModelConfig::default()
    }
}

/// A random model with randomised, initialised batch-norm statistics so eval
/// mode works without training.
pub fn frozen_model<T: protgo::autodiff::Real>(cfg: &ModelConfig, seed: u64) -> Model<T> {
    let mut model = build_model::<T>(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let c = model.bn_stats.mean.len();
    model.bn_stats.mean = (0..c).map(|_| T::from_f64(rng.random_range(-0.5..0.5))).collect();
    model.bn_stats.var = (0..c).map(|_| T::from_f64(rng.random_range(0.5..1.5))).collect();
    model.bn_stats.initialized = true;
    model
}
