//! Synthetic scenes, detector corruption, training proposals and a free
//! embedding trainer.

mod config;
mod fit;
mod noise;
mod proposals;
mod scenario;

pub use config::SynthConfig;
pub use fit::{fit_embeddings, identity_cosines, FitConfig, FitResult, FramePairBatch, FramePairing, TrainingSet};
pub use noise::{corrupt, ClutterEmbedding, NoiseModel, Source, SyntheticDetections};
pub use proposals::{generate_proposals, ProposalSpec};
pub use scenario::{generate_scenario, Scenario, ScenarioObject, ScenarioSpec};
