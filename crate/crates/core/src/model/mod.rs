//! The conv + BiGRU network, its training loop and checkpoints.
//!
//! Wiring, for a `B × L` batch of residue indices:
//!
//! ```text
//! embedding (rows × E), pad positions zeroed
//!   → conv K=3 | conv K=7 | conv K=11         each E → F channels, same length
//!   → concat (3F) → batch norm                 "local" features
//!   → BiGRU (3F → 2H)                          "global" features
//!   → concat (3F + 2H) → masked mean over L
//!   → dense D + ReLU → dropout → dense O + sigmoid
//! ```

mod checkpoint;
mod init;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_KIND};
pub use train::{
    predict_dataset, split_indices, train, train_with_split, EpochLog, LrSchedule, TrainConfig, TrainOutcome,
};

use crate::autodiff::{
    Activation, BatchMoments, GruWeights, Graph, ParamId, ParamStore, Real, RunningStats, Tensor, Var,
};
use crate::dataset::Batch;
use crate::encoding::{Alphabet, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::ontology::Namespace;

/// Width of the prediction head for each namespace's top-level dictionary
/// in the July 2017 GO release.
pub fn reference_output_dim(ns: Namespace) -> usize {
    match ns {
        Namespace::BiologicalProcess => 33,
        Namespace::CellularComponent => 22,
        Namespace::MolecularFunction => 16,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub kernel_sizes: Vec<usize>,
    pub conv_filters: usize,
    /// Hidden units per direction.
    pub gru_hidden: usize,
    pub dense_hidden: usize,
    pub output_dim: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
    pub alphabet: Alphabet,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 50,
            kernel_sizes: vec![3, 7, 11],
            conv_filters: 64,
            gru_hidden: 300,
            dense_hidden: 256,
            output_dim: 33,
            dropout_rate: 0.5,
            max_len: DEFAULT_MAX_LEN,
            alphabet: Alphabet::default(),
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn for_namespace(ns: Namespace) -> Self {
        ModelConfig {
            output_dim: reference_output_dim(ns),
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.kernel_sizes.is_empty() {
            return bad("at least one kernel size is required".into());
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return bad(format!("kernel sizes must be odd, got {k}"));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("conv_filters", self.conv_filters),
            ("gru_hidden", self.gru_hidden),
            ("dense_hidden", self.dense_hidden),
            ("output_dim", self.output_dim),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_momentum == 0.0 {
            return bad(format!("bn_momentum must be in (0, 1], got {}", self.bn_momentum));
        }
        Ok(())
    }

    pub fn alphabet_hash(&self) -> String {
        self.alphabet.hash()
    }

    fn conv_channels(&self) -> usize {
        self.kernel_sizes.len() * self.conv_filters
    }

    /// Every parameter of the network with its shape, in creation order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (e, f, h) = (self.embed_dim, self.conv_filters, self.gru_hidden);
        let c = self.conv_channels();
        let mut out = vec![("embedding".to_string(), vec![self.alphabet.table_rows(), e])];
        for &k in &self.kernel_sizes {
            out.push((format!("conv{k}.weight"), vec![k, e, f]));
            out.push((format!("conv{k}.bias"), vec![f]));
        }
        out.push(("bn.gamma".into(), vec![c]));
        out.push(("bn.beta".into(), vec![c]));
        for dir in ["fwd", "bwd"] {
            out.push((format!("gru.{dir}.input"), vec![c, 3 * h]));
            out.push((format!("gru.{dir}.recurrent"), vec![h, 3 * h]));
            out.push((format!("gru.{dir}.bias"), vec![3 * h]));
        }
        out.push(("dense.weight".into(), vec![c + 2 * h, self.dense_hidden]));
        out.push(("dense.bias".into(), vec![self.dense_hidden]));
        out.push(("output.weight".into(), vec![self.dense_hidden, self.output_dim]));
        out.push(("output.bias".into(), vec![self.output_dim]));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
struct Handles {
    embedding: ParamId,
    convs: Vec<(ParamId, ParamId)>,
    gamma: ParamId,
    beta: ParamId,
    gru: [[ParamId; 3]; 2],
    dense: (ParamId, ParamId),
    output: (ParamId, ParamId),
}

impl Handles {
    fn resolve<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let expected = cfg.parameter_shapes();
        if store.len() != expected.len() {
            return Err(Error::Incompatible(format!(
                "{} parameters, the configuration needs {}",
                store.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Incompatible(format!("missing parameter {name}")))?;
            let got = store.get(id).value.shape();
            if got != shape.as_slice() {
                return Err(Error::Incompatible(format!("parameter {name} has shape {got:?}, expected {shape:?}")));
            }
        }
        let id = |name: &str| store.id(name).expect("checked above");
        let gru = |dir: &str| {
            [
                id(&format!("gru.{dir}.input")),
                id(&format!("gru.{dir}.recurrent")),
                id(&format!("gru.{dir}.bias")),
            ]
        };
        Ok(Handles {
            embedding: id("embedding"),
            convs: cfg
                .kernel_sizes
                .iter()
                .map(|k| (id(&format!("conv{k}.weight")), id(&format!("conv{k}.bias"))))
                .collect(),
            gamma: id("bn.gamma"),
            beta: id("bn.beta"),
            gru: [gru("fwd"), gru("bwd")],
            dense: (id("dense.weight"), id("dense.bias")),
            output: (id("output.weight"), id("output.bias")),
        })
    }
}

/// Parameters, batch-norm running statistics and configuration for one
/// namespace.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    pub bn_stats: RunningStats<T>,
    handles: Handles,
}

/// Allocates and initialises a model. The same seed gives the same parameters.
pub fn build_model<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in cfg.parameter_shapes() {
        let value = init::initial_value(&name, &shape, cfg.gru_hidden, &mut rng);
        store.add(name, Tensor::from_f64(shape, &value)?)?;
    }
    Model::from_parts(cfg.clone(), store, RunningStats::new(cfg.conv_channels(), cfg.bn_momentum))
}

impl<T: Real> Model<T> {
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>, bn_stats: RunningStats<T>) -> Result<Self> {
        config.validate()?;
        let handles = Handles::resolve(&config, &params)?;
        if bn_stats.mean.len() != config.conv_channels() || bn_stats.var.len() != config.conv_channels() {
            return Err(Error::Incompatible("batch-norm statistics do not match the configuration".into()));
        }
        Ok(Model {
            config,
            params,
            bn_stats,
            handles,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            bn_stats: self.bn_stats.cast(),
            handles: self.handles.clone(),
        }
    }

    pub fn graph(&self) -> Graph<'_, T> {
        Graph::new(&self.params)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = batch.size * batch.max_len;
        if batch.size == 0 || batch.max_len == 0 || batch.tokens.len() != n || batch.mask.len() != n {
            return Err(Error::Shape(format!(
                "malformed batch: {} rows of length {}, {} tokens, {} mask entries",
                batch.size,
                batch.max_len,
                batch.tokens.len(),
                batch.mask.len()
            )));
        }
        let rows = self.config.alphabet.table_rows();
        if let Some(t) = batch.tokens.iter().find(|&&t| t >= rows) {
            return Err(Error::Shape(format!("residue index {t} outside a {rows}-row embedding table")));
        }
        Ok(())
    }

    /// Builds the forward pass into `g`, which must borrow this model's
    /// parameters. Returns `B × output_dim` probabilities and, in training
    /// mode, the batch-norm moments to fold into [`Model::bn_stats`].
    ///
    /// Any padded length is accepted; outputs do not depend on how much
    /// padding follows a sequence.
    pub fn forward<'p, R: Rng + ?Sized>(
        &'p self,
        g: &mut Graph<'p, T>,
        batch: &Batch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        if !std::ptr::eq(g.params(), &self.params) {
            return Err(Error::Config("graph does not borrow this model's parameters".into()));
        }
        self.check_batch(batch)?;
        let (b, l) = (batch.size, batch.max_len);
        let train = mode == Mode::Train;
        let h = &self.handles;

        let table = g.param(h.embedding);
        let emb = g.embedding(table, &batch.tokens, b, l)?;
        let emb = g.mask_positions(emb, &batch.mask)?;
        let mut branches = Vec::with_capacity(h.convs.len());
        for &(w, bias) in &h.convs {
            let (w, bias) = (g.param(w), g.param(bias));
            branches.push(g.conv1d_same(emb, w, bias)?);
        }
        let local = g.concat_channels(&branches)?;
        let (gamma, beta) = (g.param(h.gamma), g.param(h.beta));
        let (local, moments) = g.batch_norm(local, gamma, beta, &self.bn_stats, train, Some(&batch.mask))?;

        let weights = |g: &mut Graph<'p, T>, ids: [ParamId; 3]| GruWeights {
            input: g.param(ids[0]),
            recurrent: g.param(ids[1]),
            bias: g.param(ids[2]),
        };
        let fwd = weights(g, h.gru[0]);
        let bwd = weights(g, h.gru[1]);
        let global = g.bigru(local, &batch.mask, fwd, bwd)?;

        let features = g.concat_channels(&[local, global])?;
        let pooled = g.masked_mean_pool(features, &batch.mask)?;
        let (w, bias) = (g.param(h.dense.0), g.param(h.dense.1));
        let hidden = g.dense(pooled, w, bias, Activation::Relu)?;
        let hidden = g.dropout(hidden, self.config.dropout_rate, train, rng)?;
        let (w, bias) = (g.param(h.output.0), g.param(h.output.1));
        let probs = g.dense(hidden, w, bias, Activation::Sigmoid)?;
        Ok((probs, moments))
    }

    /// Eval-mode probabilities, row-major `B × output_dim`.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<T>> {
        let mut g = self.graph();
        // eval mode never draws from the RNG
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (probs, _) = self.forward(&mut g, batch, Mode::Eval, &mut rng)?;
        Ok(g.value(probs).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::encode_sequence;

    fn small() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            kernel_sizes: vec![3, 5],
            conv_filters: 3,
            gru_hidden: 2,
            dense_hidden: 5,
            output_dim: 3,
            max_len: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small();
        c.kernel_sizes = vec![3, 4];
        assert!(build_model::<f32>(&c, 0).is_err());
        let mut c = small();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.gru_hidden = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeded_builds_are_identical() {
        let a = build_model::<f32>(&small(), 9).unwrap();
        let b = build_model::<f32>(&small(), 9).unwrap();
        let c = build_model::<f32>(&small(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn eval_before_any_training_step_is_refused() {
        let m = build_model::<f32>(&small(), 0).unwrap();
        let seq = encode_sequence("ACDEF", &Alphabet::default(), 8).unwrap();
        let batch = Batch::from_encoded(&[&seq]).unwrap();
        assert!(m.predict_batch(&batch).is_err());
    }

    #[test]
    fn foreign_graph_and_bad_tokens() {
        let m = build_model::<f32>(&small(), 0).unwrap();
        let other = build_model::<f32>(&small(), 1).unwrap();
        let seq = encode_sequence("ACDEF", &Alphabet::default(), 8).unwrap();
        let mut batch = Batch::from_encoded(&[&seq]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = other.graph();
        assert!(m.forward(&mut g, &batch, Mode::Train, &mut rng).is_err());
        batch.tokens[0] = 27;
        let mut g = m.graph();
        assert!(m.forward(&mut g, &batch, Mode::Train, &mut rng).is_err());
    }
}
