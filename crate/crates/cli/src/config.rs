use std::path::Path;

use protgo::annotations::{default_whitelist, ColumnNames};
use protgo::metrics::DEFAULT_THRESHOLD;
use protgo::{Error, ModelConfig, Namespace, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub columns: ColumnNames,
    pub evidence: Vec<String>,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            columns: ColumnNames::default(),
            evidence: default_whitelist().into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub thresholds: Vec<f64>,
    pub batch_size: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            thresholds: vec![DEFAULT_THRESHOLD],
            batch_size: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub threshold: f64,
    pub min_one: bool,
    pub batch_size: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            threshold: DEFAULT_THRESHOLD,
            min_one: false,
            batch_size: 100,
        }
    }
}

/// Every knob of a run. Loaded from TOML, then overridden by flags; the
/// resolved form is written next to a trained checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ingest: IngestSection,
    pub evaluate: EvaluateSection,
    pub predict: PredictSection,
    /// Set when `train.epochs` was given explicitly rather than defaulted.
    #[serde(skip)]
    pub epochs_explicit: bool,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let epochs_explicit = raw
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("epochs"));
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.epochs_explicit = epochs_explicit;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Training settings for `ns`, with the per-namespace epoch budget unless
    /// epochs were set explicitly.
    pub fn train_for(&self, ns: Namespace) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if !self.epochs_explicit {
            t.epochs = TrainConfig::for_namespace(ns).epochs;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train_for(Namespace::CellularComponent).epochs, 128);
    }

    #[test]
    fn explicit_epochs_win() {
        let c = RunConfig::from_toml_str("seed = 3\n[train]\nepochs = 7\n").unwrap();
        assert!(c.epochs_explicit);
        let t = c.train_for(Namespace::MolecularFunction);
        assert_eq!((t.epochs, t.seed), (7, 3));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.model.conv_filters = 8;
        c.train.learning_rate = 1e-3;
        c.threads = Some(2);
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back.model, c.model);
        assert_eq!(back.train, c.train);
        assert_eq!(back.threads, Some(2));
        assert!(back.epochs_explicit);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[model]\nhidden = 3\n").is_err());
    }
}
