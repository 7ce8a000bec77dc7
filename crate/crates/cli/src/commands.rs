use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use protgo::annotations::{ingest, read_fasta_records, IngestOptions};
use protgo::inference::{self, PredictOptions};
use protgo::metrics::evaluate as score;
use protgo::model::build_model;
use protgo::{Checkpoint, Dataset, Error, Namespace, OntologyGraph, Result};

use crate::config::RunConfig;
use crate::{BuildArgs, EvaluateArgs, InspectArgs, PredictArgs, TrainArgs};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `<path><suffix>`, keeping the full original file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn inspect_ontology(args: &InspectArgs) -> Result<()> {
    let graph = OntologyGraph::from_reader(BufReader::new(open(&args.obo)?))?;
    let mut s = String::new();
    writeln!(s, "terms\t{}", graph.len()).unwrap();
    writeln!(s, "obsolete\t{}", graph.obsolete_count()).unwrap();
    writeln!(s, "is_a_edges\t{}", graph.edge_count()).unwrap();
    let counts = graph.namespace_counts();
    let namespaces: Vec<Namespace> = match args.namespace {
        Some(ns) => vec![ns],
        None => Namespace::ALL.to_vec(),
    };
    for &ns in &namespaces {
        let dict = graph.top_level_terms(ns)?;
        let root = graph.root(ns).expect("validated graph has every root");
        writeln!(s).unwrap();
        writeln!(
            s,
            "# {} root {} live_terms {} top_level {}",
            ns.as_str(),
            root,
            counts.get(&ns).copied().unwrap_or(0),
            dict.size()
        )
        .unwrap();
        s.push_str(&dict.to_tsv());
    }
    emit(args.out.as_deref(), &s)
}

pub fn build_dataset(args: &BuildArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(n) = args.max_len {
        cfg.model.max_len = n;
    }
    if let Some(codes) = &args.evidence {
        cfg.ingest.evidence = codes.iter().map(|c| c.trim().to_string()).collect();
    }
    let cols = &mut cfg.ingest.columns;
    for (flag, field) in [
        (&args.protein_column, &mut cols.protein),
        (&args.term_column, &mut cols.go_term),
        (&args.evidence_column, &mut cols.evidence),
        (&args.qualifier_column, &mut cols.qualifier),
    ] {
        if let Some(name) = flag {
            *field = name.clone();
        }
    }

    let graph = OntologyGraph::from_reader(BufReader::new(open(&args.obo)?))?;
    let dict = graph.top_level_terms(args.namespace)?;
    let opts = IngestOptions {
        columns: cfg.ingest.columns.clone(),
        whitelist: cfg.ingest.evidence.iter().cloned().collect(),
        alphabet: cfg.model.alphabet.clone(),
        max_len: cfg.model.max_len,
    };
    let ds = ingest(
        &graph,
        &dict,
        BufReader::new(open(&args.annotations)?),
        BufReader::new(open(&args.fasta)?),
        &opts,
    )?;
    ds.save(&args.out)?;
    let manifest = args.manifest.clone().unwrap_or_else(|| sibling(&args.out, ".manifest.toml"));
    write(&manifest, ds.manifest().to_toml())?;
    log::info!(
        "wrote {} rows for {} to {}",
        ds.len(),
        args.namespace.short(),
        args.out.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs, mut cfg: RunConfig) -> Result<()> {
    let ds = Dataset::load(&args.dataset)?;
    let m = &mut cfg.model;
    for (flag, field) in [
        (args.embed_dim, &mut m.embed_dim),
        (args.conv_filters, &mut m.conv_filters),
        (args.gru_hidden, &mut m.gru_hidden),
        (args.dense_hidden, &mut m.dense_hidden),
    ] {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(d) = args.dropout {
        m.dropout_rate = d;
    }
    // the dataset fixes the head width, padded length and alphabet
    m.output_dim = ds.num_labels();
    m.max_len = ds.max_len();
    m.alphabet = ds.alphabet().clone();

    let t = &mut cfg.train;
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.validation_fraction {
        t.validation_fraction = v;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
        cfg.epochs_explicit = true;
    }
    let tcfg = cfg.train_for(ds.namespace());
    cfg.train = tcfg.clone();
    cfg.epochs_explicit = true;

    let model = build_model::<f32>(&cfg.model, cfg.seed)?;
    log::info!(
        "training {} model: {} parameters, {} rows, {} epochs",
        ds.namespace().short(),
        model.num_parameters(),
        ds.len(),
        tcfg.epochs
    );
    let outcome = protgo::train(model, &ds, &tcfg)?;
    log::info!("best validation loss at epoch {}", outcome.best_epoch);
    let mut ckpt = Checkpoint::new(outcome.model, ds.dictionary().clone())?;
    ckpt.train_config = Some(tcfg);
    ckpt.log = outcome.log;
    ckpt.save(&args.out)?;
    write(&sibling(&args.out, ".log.tsv"), protgo::model::EpochLog::to_tsv(&ckpt.log))?;
    write(&sibling(&args.out, ".config.toml"), cfg.to_toml())?;
    Ok(())
}

/// `report.txt` at 0.3 becomes `report.t0.30.txt`.
fn threshold_path(out: &Path, t: f64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.t{t:.2}.{}", ext.to_string_lossy()),
        None => format!("{stem}.t{t:.2}"),
    };
    out.with_file_name(name)
}

pub fn evaluate(args: &EvaluateArgs, cfg: &RunConfig) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = Dataset::load(&args.dataset)?;
    let thresholds = args.threshold.clone().unwrap_or_else(|| cfg.evaluate.thresholds.clone());
    if thresholds.is_empty() {
        return Err(Error::Config("no thresholds given".into()));
    }
    let reports = score(&ckpt, &ds, &thresholds, cfg.evaluate.batch_size)?;
    let several = reports.len() > 1;
    for r in &reports {
        log::info!("threshold {:.2}: micro F1 {:.4}, micro MCC {:.4}", r.threshold, r.micro_f1, r.micro_mcc);
        match &args.out {
            Some(out) => {
                let path = if several { threshold_path(out, r.threshold) } else { out.clone() };
                write(&path, r.to_text())?;
                if args.tsv {
                    write(&sibling(&path, ".tsv"), r.to_tsv())?;
                }
            }
            None => print!("{}", r.to_text()),
        }
    }
    Ok(())
}

pub fn predict(args: &PredictArgs, cfg: &RunConfig) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let records = read_fasta_records(BufReader::new(open(&args.fasta)?))?;
    let opts = PredictOptions {
        threshold: args.threshold.unwrap_or(cfg.predict.threshold),
        min_one: args.min_one || cfg.predict.min_one,
        batch_size: cfg.predict.batch_size,
    };
    let outcomes = inference::predict(&ckpt, &records, &opts)?;
    let failed = outcomes
        .iter()
        .filter(|o| matches!(o, inference::Outcome::Error { .. }))
        .count();
    if failed > 0 {
        log::warn!("{failed} of {} sequences could not be encoded", outcomes.len());
    }
    let text = if args.json {
        let mut s = serde_json::to_string_pretty(&outcomes).map_err(|e| Error::Config(e.to_string()))?;
        s.push('\n');
        s
    } else {
        inference::to_tsv(&outcomes)
    };
    emit(args.out.as_deref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_file_names() {
        assert_eq!(threshold_path(Path::new("out/report.txt"), 0.3), Path::new("out/report.t0.30.txt"));
        assert_eq!(threshold_path(Path::new("report"), 0.5), Path::new("report.t0.50"));
        assert_eq!(sibling(Path::new("a/model.ckpt"), ".log.tsv"), Path::new("a/model.ckpt.log.tsv"));
    }
}
