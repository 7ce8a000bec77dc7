//! Top-level Gene Ontology term prediction from protein sequence.
//!
//! The pipeline runs ontology parsing ([`ontology`]), annotation and FASTA
//! ingestion ([`annotations`]), residue encoding ([`encoding`]), a small
//! reverse-mode autodiff engine ([`autodiff`]), the conv + BiGRU network with
//! training and checkpoints ([`model`]), scoring ([`metrics`]) and
//! prediction ([`inference`]).

pub mod annotations;
pub mod autodiff;
pub mod container;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod ontology;

pub use dataset::{Batch, Dataset, DropCounters, Manifest};
pub use encoding::{Alphabet, EncodedSequence};
pub use error::{Error, Result};
pub use inference::{predict, Outcome, PredictOptions, Prediction};
pub use metrics::{evaluate, ConfusionCounts, EvalReport};
pub use model::{build_model, train, Checkpoint, Model, ModelConfig, TrainConfig};
pub use ontology::{GoId, Namespace, OntologyGraph, TermDictionary};
