//! Watermarking for paired image/text embedding services.
//!
//! A provider keeps a secret near-orthogonal transform `W` trained so that a
//! set of shuffled trigger pairs becomes aligned under it. Serving `W e / |W e|`
//! instead of `e` leaves benign similarity structure intact, while a model
//! copied or distilled from the service inherits the trigger alignment. The
//! crate covers corpus simulation, trigger construction, transform training,
//! the verification statistics, and attack simulation.

pub mod adam;
pub mod attack;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod io;
pub mod ks;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod transform;
pub mod trigger;
pub mod verify;

pub use attack::{AttackKind, AttackScenario, SurrogateModel};
pub use corpus::{ClassCatalog, ClassId, CorpusSpec, Encoder, PairSpec};
pub use embedding::{EmbeddingSpace, EmbeddingVector, Side};
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use rng::SeededRng;
pub use transform::{TrainConfig, TransformMatrix};
pub use trigger::{FrequencyBand, TriggerSet};
pub use verify::{Thresholds, UserRegistry, Verdict, VerificationReport};
