//! Set-supervised temporal action segmentation.
//!
//! A two-layer frame scoring network grounds a segment-level HMM with
//! Poisson durations. Training only sees the unordered set of actions present
//! in each video: pseudo ground truth comes from the set-constrained Viterbi
//! decoder in [`scv`], and features of videos sharing actions are
//! regularized with an n-pair loss ([`nnet`]). Test-time segmentation and
//! alignment sample legal action sequences and align them to the frames
//! ([`infer`]).

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod hmm;
pub mod infer;
pub mod labels;
pub mod nnet;
pub mod predictions;
pub mod scv;
pub mod segmentation;
pub mod train;

pub use error::{Error, Result};
pub use hmm::{HmmParams, HmmVariant};
pub use labels::{ActionSet, ClassId, Vocabulary};
pub use nnet::{FeatureMode, ForwardCache, NetworkParams};
pub use segmentation::{Segment, Segmentation};
