//! Dual-level visual token pruning for vision-language-action inference,
//! driven by recorded attention traces.
//!
//! Each frame contributes a semantic score per visual patch (prefill
//! attention) and, once decoded, an action score per patch (decode
//! attention). Because action scores for the current frame only exist after
//! decoding, they are forecast from the previous frames by temporal
//! smoothing. The selector takes the union of the Top-k patches under both
//! scores and trims it to the budget with a greedy max-min diversity filter
//! over patch embeddings.
//!
//! ```
//! use vlaprune::prelude::*;
//!
//! let s_vl = ScoreVector::new(vec![0.9, 0.8, 0.1, 0.1, 0.0, 0.0]).unwrap();
//! let s_act = ScoreVector::new(vec![0.0, 0.0, 0.1, 0.1, 0.8, 0.9]).unwrap();
//! let emb = Embeddings::from_rows(&[
//!     vec![1.0, 0.0], vec![0.9, 0.3], vec![0.0, 1.0],
//!     vec![-0.2, 1.0], vec![-1.0, 0.0], vec![0.8, 0.5],
//! ]).unwrap();
//! let picked = select_dual(&s_vl, &s_act, &emb, &PruneConfig::new(2)).unwrap();
//! assert_eq!(picked.retained, vec![0, 4]);
//! ```

pub mod diversity;
pub mod error;
pub mod estimator;
pub mod flops;
pub mod manifest;
pub mod metrics;
pub mod oracle;
pub mod replay;
pub mod scoring;
pub mod selector;
pub mod trace;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::diversity::{cosine_distance, min_redundancy_filter, Embeddings};
    pub use crate::estimator::{EstimatorConfig, EstimatorMode, EstimatorState};
    pub use crate::scoring::{decode_scores, prefill_scores, AttentionMatrix, ScoreVector, TokenLayout};
    pub use crate::selector::{
        select_dual, select_frame, select_variant, top_k_indices, Budget, PruneConfig, SelectionResult, Variant,
        WarmupPolicy,
    };
}
