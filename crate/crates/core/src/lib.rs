//! Multi-frame video-to-shop retrieval.
//!
//! The crate covers everything downstream of a detection backbone: detections
//! with their convolutional features come in, and out come tracklets, aggregated
//! multi-frame descriptors, gallery rankings and top-K reports. The pieces are:
//!
//! - [`types`] and [`io`]: detections, tracklets, gallery items, rankings and
//!   the `.seq.jsonl` / `.gal.jsonl` / `.ckpt` file formats.
//! - [`numerics`]: a small reverse-mode tape, parameter store, SGD and a
//!   finite-difference gradient checker.
//! - [`heads`]: the single-frame head (embedding `f`, matcher `m`) and the
//!   multi-frame head (embedding, non-local block, attention, aggregation,
//!   matcher).
//! - [`tracking`]: pivot/propagation tracklet building, at inference and for
//!   pseudo-labelling.
//! - [`training`]: source pretraining and target-domain pseudo-label training.
//! - [`eval`]: restricted random sampling, ranking methods and baselines,
//!   top-K accuracy with bootstrap.
//! - [`attention`]: per-frame attention traces and percentile curves.
//! - [`synthetic`]: a seeded feature-level data generator with planted ground
//!   truth and a prototype-distance oracle.
//! - [`dedup`]: perceptual hashing, RANSAC similarity registration and
//!   pixel-difference verification for near-duplicate shop images.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod attention;
pub mod dedup;
pub mod error;
pub mod eval;
pub mod heads;
pub mod io;
pub mod numerics;
pub mod synthetic;
pub mod tracking;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use heads::{Descriptor, HeadDims, Heads, MultiFrameHead, SingleFrameHead};
pub use types::{iou, BBox, ClothingClass, Detection, GalleryItem, Ranking, SequenceRecord, Tracklet};
