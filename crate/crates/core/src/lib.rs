//! Unsupervised video summarization with a frame selector and an
//! attention-equipped reconstructor trained in separate stages.
//!
//! The crate covers the full pipeline: dataset containers and synthetic
//! planted-event data, kernel temporal segmentation, the networks and their
//! losses, staged and iterative training, unsupervised checkpoint
//! selection, knapsack shot selection, and keyshot F-score evaluation.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod segmentation;
pub mod selection;
pub mod summarizer;
pub mod training;

pub use error::{Error, Result};
