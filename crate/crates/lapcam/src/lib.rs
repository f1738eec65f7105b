//! Strategy mining and closed-loop camera control for laparoscopic signal
//! streams.
//!
//! The crate covers the full offline-to-online loop at desk scale:
//!
//! 1. [`stream`] / [`series`]: multi-channel signal ingestion and the
//!    temporal filters shared by all detectors.
//! 2. [`events`]: detection of interaction, depth-change, and view-quality
//!    events; descriptor construction and normalization.
//! 3. [`camera`]: robust per-frame camera-motion estimation (RANSAC
//!    translation + axial increments) aggregated per event interval.
//! 4. [`graph`]: the attributed event graph (temporal adjacency, node
//!    attributes, masked-cosine similarity).
//! 5. [`mining`]: graph-boosted clustering: boosted/refined graphs,
//!    non-negative self-expressiveness, attention autoencoder embeddings,
//!    weighted symmetric NMF, prototype extraction, direction labels.
//! 6. [`supervision`]: frame-level label propagation, class balancing, and
//!    a prototype-based direction predictor.
//! 7. [`sim`]: kinematic IBVS-RCM simulator executing discrete direction
//!    commands under trocar and safety constraints.
//! 8. [`metrics`]: evaluation metrics for detection, clustering, and
//!    control quality.
//! 9. [`scenario`] / [`pipeline`]: the synthetic scenario generator with
//!    planted ground truth and the stage-by-stage pipeline orchestration.
//!
//! Each major capability has a runnable example under `examples/`; the thin
//! `lapcam` binary exposes the same stages as subcommands.

pub mod error;
pub mod series;
pub mod stream;
pub mod events;
pub mod camera;
pub mod graph;
pub mod mining;
pub mod supervision;

pub use error::{Error, Result};
