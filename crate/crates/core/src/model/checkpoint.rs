use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochLog, Model, ModelConfig, TrainConfig};
use crate::autodiff::{ParamStore, RunningStats};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::ontology::TermDictionary;

pub const CHECKPOINT_KIND: &str = "checkpoint";

/// A trained model with everything needed to use it on raw sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub dictionary: TermDictionary,
    pub train_config: Option<TrainConfig>,
    pub log: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    alphabet_hash: String,
    dictionary: TermDictionary,
    parameters: Vec<String>,
    bn_momentum: f64,
    bn_initialized: bool,
    train_config: Option<TrainConfig>,
    log: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, dictionary: TermDictionary) -> Result<Self> {
        let ckpt = Checkpoint {
            model,
            dictionary,
            train_config: None,
            log: Vec::new(),
        };
        ckpt.check_dictionary(&ckpt.dictionary)?;
        Ok(ckpt)
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    /// Refuses a dictionary whose size differs from the model's output width.
    pub fn check_dictionary(&self, dict: &TermDictionary) -> Result<()> {
        if dict.size() != self.config().output_dim {
            return Err(Error::Incompatible(format!(
                "dimension mismatch: checkpoint predicts {} terms, dictionary has {} ({})",
                self.config().output_dim,
                dict.size(),
                dict.namespace().short()
            )));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        let cfg = self.config();
        let params = self.model.params();
        let meta = Meta {
            config: cfg.clone(),
            alphabet_hash: cfg.alphabet_hash(),
            dictionary: self.dictionary.clone(),
            parameters: params.iter().map(|(_, p)| p.name.clone()).collect(),
            bn_momentum: self.model.bn_stats.momentum,
            bn_initialized: self.model.bn_stats.initialized,
            train_config: self.train_config.clone(),
            log: self.log.clone(),
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = Container::new(CHECKPOINT_KIND, meta);
        for (_, p) in params.iter() {
            c.push_tensor(&format!("param/{}", p.name), &p.value)?;
        }
        let stats = &self.model.bn_stats;
        let n = stats.mean.len();
        c.push_tensor("bn/running_mean", &crate::autodiff::Tensor::new(vec![n], stats.mean.clone())?)?;
        c.push_tensor("bn/running_var", &crate::autodiff::Tensor::new(vec![n], stats.var.clone())?)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Incompatible(format!("checkpoint header: {e}")))?;
        let actual = meta.config.alphabet_hash();
        if meta.alphabet_hash != actual {
            return Err(Error::Incompatible(format!(
                "alphabet hash mismatch: header says {}, alphabet hashes to {actual}",
                meta.alphabet_hash
            )));
        }
        let mut store = ParamStore::new();
        for name in &meta.parameters {
            store.add(name.clone(), c.tensor::<f32>(&format!("param/{name}"))?)?;
        }
        let mean = c.tensor::<f32>("bn/running_mean")?.into_data();
        let var = c.tensor::<f32>("bn/running_var")?.into_data();
        let stats = RunningStats {
            mean,
            var,
            momentum: meta.bn_momentum,
            initialized: meta.bn_initialized,
        };
        let model = Model::from_parts(meta.config, store, stats)?;
        let ckpt = Checkpoint {
            model,
            dictionary: meta.dictionary,
            train_config: meta.train_config,
            log: meta.log,
        };
        ckpt.check_dictionary(&ckpt.dictionary)?;
        Ok(ckpt)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_container()?.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes, CHECKPOINT_KIND)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, CHECKPOINT_KIND)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::ontology::{DictEntry, GoId, Namespace};

    fn dict(n: u32) -> TermDictionary {
        let entries = (1..=n)
            .map(|i| DictEntry {
                term_id: GoId::new(i).unwrap(),
                name: format!("term {i}"),
            })
            .collect();
        TermDictionary::new(Namespace::CellularComponent, entries).unwrap()
    }

    fn small(output_dim: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: 3,
            kernel_sizes: vec![3],
            conv_filters: 2,
            gru_hidden: 2,
            dense_hidden: 3,
            output_dim,
            max_len: 6,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let mut model = build_model::<f32>(&small(3), 5).unwrap();
        model.bn_stats.mean[0] = 0.123;
        model.bn_stats.initialized = true;
        let mut ckpt = Checkpoint::new(model, dict(3)).unwrap();
        ckpt.log.push(EpochLog {
            epoch: 1,
            train_loss: 0.1 + 0.2,
            val_loss: 1.0 / 3.0,
            val_f1: 0.5,
            val_mcc: -0.25,
            learning_rate: 1e-5,
        });
        ckpt.train_config = Some(TrainConfig::default());
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn dimension_guard() {
        let model = build_model::<f32>(&small(22), 5).unwrap();
        assert!(matches!(Checkpoint::new(model.clone(), dict(33)), Err(Error::Incompatible(_))));
        let ckpt = Checkpoint::new(model, dict(22)).unwrap();
        assert!(ckpt.check_dictionary(&dict(33)).is_err());
    }

    #[test]
    fn tampered_alphabet_hash_is_refused() {
        let ckpt = Checkpoint::new(build_model::<f32>(&small(3), 5).unwrap(), dict(3)).unwrap();
        let mut c = ckpt.to_container().unwrap();
        c.meta["alphabet_hash"] = serde_json::json!("0000000000000000");
        match Checkpoint::from_container(&c) {
            Err(Error::Incompatible(msg)) => assert!(msg.contains("alphabet"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_parameter_is_refused() {
        let ckpt = Checkpoint::new(build_model::<f32>(&small(3), 5).unwrap(), dict(3)).unwrap();
        let mut c = ckpt.to_container().unwrap();
        let params = c.meta["parameters"].as_array_mut().unwrap();
        params.retain(|p| p != "dense.bias");
        assert!(Checkpoint::from_container(&c).is_err());
    }
}
