//! Contrastive instruction tuning with in-context examples.
//!
//! Each step draws pairs from one task, optionally prepends examples to each
//! query (none, the task's fixed three, or a random number of other pairs
//! from the same batch), encodes queries and passages with the same model and
//! minimises InfoNCE over hard and in-batch negatives at temperature `tau`.

pub mod batch;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use batch::{
    assemble_negatives, sample_donors, sample_icl_examples, ExampleMode, LossConfig, NegativeSets,
    TrainBatch, TrainingPair, DEFAULT_HARD_NEGATIVES, DEFAULT_N_MAX, FIXED_EXAMPLE_COUNT,
};
pub use loss::{distill_loss, info_nce, score, CandidateSets, DEFAULT_TAU};
pub use optim::{Adam, AdamConfig};
pub use rng::{RngState, SeededRng};
pub use trainer::{
    batch_loss, prepare_batch, Dataset, DatasetRecord, PreparedBatch, StepReport, TrainConfig, Trainer,
};
