//! Time-frequency transformer declipper with an optional learnable waveform
//! front-end, plus its optimiser, training loop, corpus synthesis and
//! checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod corpus;
mod error;
pub mod model;
pub mod network;
pub mod optim;
pub mod spectral;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, TgramConfig, TrainConfig};
pub use corpus::{Corpus, CorpusSpec, Split};
pub use error::{ModelError, Result};
pub use model::{DeclipModel, PreparedBatch};
pub use optim::{AdamW, AdamWConfig};
pub use train::{best_epoch, sample_clip_pair, train, ClipPair, EpochRecord, TrainOutcome};
