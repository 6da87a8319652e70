//! Route new tasks to the LLM most likely to do well on them, using only
//! benchmark evaluation dumps: kNN correctness predictors over embedded
//! benchmark inputs, task-level routing scores, and an out-of-distribution
//! confidence estimate from a kernel smoother over dataset distance.

pub mod error;
pub mod harness;
pub mod jsonfmt;
pub mod neighbors;
pub mod ood;
pub mod par;
pub mod predictor;
pub mod replay;
pub mod router;
pub mod scores;
pub mod stats;
pub mod store;
pub mod svg;
pub mod synth;

pub use error::{Result, RouterError};
pub use par::Execution;
pub use predictor::{predict, predict_all, predictor_accuracy, CorrectnessPrediction, PredictorConfig};
pub use router::{RouteRequest, RouteResponse, Router, RouterConfig};
pub use scores::{ScoreKind, ScoreVector, SelectionOutcome};
pub use store::{BenchmarkStore, HeldOut, IngestConfig, ModelRecord, SampleRef};
