//! Retrieval metrics and evaluation harnesses for person search.
//!
//! A query crop is compared with every detection in its gallery frames;
//! [`RankedResult`] holds the ranking and per-position correctness, from which
//! [`average_precision`], [`mean_ap`] and [`cmc_top_k`] are computed.
//! [`SweepReport`] repeats a whole evaluation along one axis.

pub mod embedders;
pub mod error;
pub mod metrics;
pub mod search;
pub mod sweep;

pub use embedders::PaletteEmbedder;
pub use error::EvalError;
pub use metrics::{average_precision, cmc_top_k, mean_ap, Hit, RankedResult};
pub use search::{evaluate, search, Embedder, EvalReport, EvalSummary, GalleryIndex, QueryOutcome, SearchConfig};
pub use sweep::{gallery_sweep, repetition_seed, SweepAxis, SweepReport, SweepRow, CSV_HEADER};

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
