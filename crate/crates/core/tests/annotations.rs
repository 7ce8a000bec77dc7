mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{random_ontology, random_sequence, RandomOntology};
use proptest::prelude::*;
use protgo::annotations::*;
use protgo::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HEADER: &str = "GENE PRODUCT DB\tGENE PRODUCT ID\tQUALIFIER\tGO TERM\tGO EVIDENCE CODE\tTAXON ID\n";

fn rec(protein: &str, term: u32, code: &str, qualifier: Option<&str>) -> AnnotationRecord {
    AnnotationRecord {
        protein_id: protein.into(),
        go_term: GoId::new(term).unwrap(),
        evidence_code: code.into(),
        qualifier: qualifier.map(str::to_string),
    }
}

#[test]
fn ten_row_table_parses_to_hand_listed_records() {
    let body = "\
UniProtKB\tA1\tenables\tGO:0000010\tIDA\t9606
UniProtKB\tA1\tinvolved_in\tGO:0000011\tIEA\t9606
UniProtKB\tA2\tNOT|enables\tGO:0000010\tIDA\t9606
! a comment line
UniProtKB\tA2\t\tGO:0000012\tEXP\t9606
UniProtKB\tA3\tpart_of\tGO:12\tIDA\t9606
UniProtKB\t\tenables\tGO:0000013\tIDA\t9606
UniProtKB\tA4\tenables\tGO:0000014\tida\t9606
UniProtKB\tA5\tenables\tGO:0000015\tTAS
UniProtKB\tA6\tcolocalizes_with\tGO:0000016\tIPI\t9606
UniProtKB\tA7\tenables\tGO:0000017\tIC\t9606
";
    let parsed = parse_annotation_table(format!("{HEADER}{body}").as_bytes(), &ColumnNames::default()).unwrap();
    assert_eq!(
        parsed.records,
        vec![
            rec("A1", 10, "IDA", Some("enables")),
            rec("A1", 11, "IEA", Some("involved_in")),
            rec("A2", 12, "EXP", None),
            rec("A6", 16, "IPI", Some("colocalizes_with")),
            rec("A7", 17, "IC", Some("enables")),
        ]
    );
    assert_eq!(parsed.negated, 1);
    // bad accession, empty protein, lowercase code, short row
    assert_eq!(parsed.malformed, 4);
}

#[test]
fn custom_column_names() {
    let text = "prot\tterm\tcode\nP1\tGO:0000003\tIMP\n";
    let cols = ColumnNames {
        protein: "prot".into(),
        go_term: "term".into(),
        evidence: "code".into(),
        qualifier: "absent".into(),
    };
    let parsed = parse_annotation_table(text.as_bytes(), &cols).unwrap();
    assert_eq!(parsed.records, vec![rec("P1", 3, "IMP", None)]);
}

const CODES: [&str; 12] = ["EXP", "IDA", "IPI", "IMP", "IGI", "IEP", "TAS", "IC", "IEA", "ISS", "ND", "NAS"];

fn random_records(rng: &mut ChaCha8Rng, n: usize, terms: &[u32], proteins: usize) -> Vec<AnnotationRecord> {
    (0..n)
        .map(|_| {
            rec(
                &format!("P{}", rng.random_range(0..proteins)),
                terms[rng.random_range(0..terms.len())],
                CODES[rng.random_range(0..CODES.len())],
                None,
            )
        })
        .collect()
}

proptest! {
    #[test]
    fn filter_matches_predicate_and_is_idempotent(seed in any::<u64>(), take in 0usize..13) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = random_records(&mut rng, 100, &[1, 2, 3], 10);
        let whitelist: BTreeSet<String> = CODES[..take].iter().map(|s| s.to_string()).collect();
        let once = filter_experimental(&records, &whitelist);
        let want: Vec<AnnotationRecord> = records.iter().filter(|r| CODES[..take].contains(&r.evidence_code.as_str())).cloned().collect();
        prop_assert_eq!(&once, &want);
        prop_assert_eq!(filter_experimental(&once, &whitelist), once);
    }
}

#[test]
fn default_whitelist_drops_iea() {
    let records = vec![rec("P", 1, "IDA", None), rec("P", 2, "IEA", None), rec("P", 3, "IMP", None)];
    let kept = filter_experimental(&records, &default_whitelist());
    assert_eq!(kept, vec![records[0].clone(), records[2].clone()]);
    assert!(filter_experimental(&records, &BTreeSet::new()).is_empty());
}

/// Independent aggregation: look each id up among terms and alt ids, then
/// union DFS closures intersected with the dictionary.
fn aggregation_oracle(o: &RandomOntology, records: &[AnnotationRecord], dict: &TermDictionary) -> Aggregation {
    let mut agg = Aggregation::default();
    let mut per: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for r in records {
        let Some(t) = o.terms.iter().find(|t| t.id == r.go_term || t.alt_ids.contains(&r.go_term)) else {
            agg.unresolved += 1;
            continue;
        };
        if t.is_obsolete {
            agg.obsolete += 1;
            continue;
        }
        if t.namespace != Some(dict.namespace()) {
            agg.other_namespace += 1;
            continue;
        }
        let mut closure = o.dfs_ancestors(t.id);
        closure.insert(t.id);
        let set = per.entry(r.protein_id.clone()).or_default();
        set.extend(closure.into_iter().filter_map(|a| dict.index_of(a)));
    }
    for (p, set) in per {
        if set.is_empty() {
            agg.empty_mapping += 1;
        } else {
            agg.proteins.insert(p, set);
        }
    }
    agg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_matches_dfs_union(seed in any::<u64>()) {
        let o = random_ontology(seed, 20);
        let g = o.graph();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // live, obsolete, alt and unknown ids across all namespaces
        let mut ids: Vec<u32> = o.terms.iter().map(|t| t.id.number()).collect();
        ids.extend(o.terms.iter().flat_map(|t| t.alt_ids.iter().map(|a| a.number())));
        ids.push(9_999_999);
        let records = random_records(&mut rng, 50, &ids, 12);
        for ns in Namespace::ALL {
            let dict = g.top_level_terms(ns).unwrap();
            let got = aggregate_by_protein(&records, &g, &dict);
            prop_assert_eq!(&got, &aggregation_oracle(&o, &records, &dict));
            let distinct: BTreeSet<&str> = records.iter().map(|r| r.protein_id.as_str()).collect();
            prop_assert!(got.proteins.len() <= distinct.len());
        }
    }

    #[test]
    fn join_matches_scripted_oracle(seed in any::<u64>(), max_len in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = 6;
        let dict = common::dictionary(Namespace::MolecularFunction, size);
        let alphabet = Alphabet::default();
        let mut aggregated = BTreeMap::new();
        let mut sequences = BTreeMap::new();
        for i in 0..30 {
            let id = format!("X{:03}", rng.random_range(0..1000) * 30 + i);
            if rng.random_bool(0.8) {
                let k = rng.random_range(1..=size);
                let set: BTreeSet<usize> = (0..k).map(|_| rng.random_range(0..size)).collect();
                aggregated.insert(id.clone(), set);
            }
            if rng.random_bool(0.8) {
                let len = rng.random_range(1..60);
                sequences.insert(id, random_sequence(&mut rng, len));
            }
        }
        let joined: Vec<&String> = aggregated.keys().filter(|k| sequences.contains_key(*k)).collect();
        let result = build_dataset(&aggregated, &sequences, &dict, &alphabet, max_len);
        if joined.is_empty() {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let ds = result.unwrap();
        prop_assert_eq!(ds.protein_ids().iter().collect::<Vec<_>>(), joined.clone());
        prop_assert_eq!(ds.drops.missing_sequence, aggregated.len() - joined.len());
        for (row, id) in joined.iter().enumerate() {
            let labels = ds.labels(row);
            prop_assert_eq!(labels.len(), size);
            prop_assert!(labels.contains(&1));
            for (j, &v) in labels.iter().enumerate() {
                prop_assert_eq!(v == 1, aggregated[*id].contains(&j));
            }
            let enc = ds.sequence(row);
            prop_assert_eq!(enc.mask.len(), max_len);
            let seq = &sequences[*id];
            prop_assert_eq!(enc.decode(&alphabet), seq.chars().take(max_len).collect::<String>());
        }
    }
}

#[test]
fn ingest_counts_every_drop() {
    let obo = "\
[Term]\nid: GO:0000001\nname: root\nnamespace: biological_process\n\n\
[Term]\nid: GO:0000002\nname: top\nnamespace: biological_process\nis_a: GO:0000001\n\n\
[Term]\nid: GO:0000003\nname: leaf\nnamespace: biological_process\nis_a: GO:0000002\n\n\
[Term]\nid: GO:0000009\nname: mf root\nnamespace: molecular_function\n\n\
[Term]\nid: GO:0000008\nname: gone\nis_obsolete: true\n";
    let g = OntologyGraph::parse(obo.as_bytes()).unwrap();
    let dict = g.top_level_terms(Namespace::BiologicalProcess).unwrap();
    let table = format!(
        "{HEADER}\
UniProtKB\tA\t\tGO:0000003\tIDA\t1
UniProtKB\tB\t\tGO:0000001\tIDA\t1
UniProtKB\tC\t\tGO:0000008\tIDA\t1
UniProtKB\tC\t\tGO:0000009\tIDA\t1
UniProtKB\tD\t\tGO:0000077\tIDA\t1
UniProtKB\tE\tNOT\tGO:0000002\tIDA\t1
UniProtKB\tF\t\tGO:0000002\tIEA\t1
UniProtKB\tG\t\tGO:0000002\tIMP\t1
"
    );
    let fasta = ">sp|A|X\nMKV\n>sp|Z|X\nMK*\n";
    let ds = ingest(&g, &dict, table.as_bytes(), fasta.as_bytes(), &IngestOptions::default()).unwrap();
    assert_eq!(ds.protein_ids(), ["A"]);
    let d = ds.drops;
    assert_eq!(
        (d.not_qualified, d.non_experimental, d.empty_mapping, d.obsolete_terms, d.other_namespace),
        (1, 1, 1, 1, 1)
    );
    assert_eq!((d.unresolved_terms, d.fasta_illegal, d.missing_sequence), (1, 1, 1));
}
