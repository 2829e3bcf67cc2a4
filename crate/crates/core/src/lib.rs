//! Gaussian and heavy-tailed PLDA back-ends for speaker verification, with
//! covariance-based domain adaptation, a seeded synthetic domain-shift
//! harness and threshold-swept detection metrics.

pub mod adapt;
pub mod bench;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gplda;
pub mod htplda;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod synth;

pub use adapt::{AdaptPlan, Method, Role};
pub use dataset::{EmbeddingSet, Preprocessor};
pub use error::{Error, ErrorKind, Result};
pub use eval::{Metrics, TrialSet};
pub use gplda::GPldaModel;
pub use htplda::HtPldaModel;
pub use linalg::SymMatrix;
