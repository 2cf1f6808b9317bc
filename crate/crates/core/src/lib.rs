//! In-silico ultrasound localization microscopy (ULM) workbench.
//!
//! The crate covers the full super-resolution imaging loop on synthetic data:
//!
//! 1. [`vasculature`] grows a seed-deterministic microvascular graph, assigns
//!    Poiseuille flow, propagates microbubbles through it, and rasterizes
//!    ground-truth track masks on the super-resolved grid.
//! 2. [`acoustics`] simulates plane-wave channel data from the microbubble
//!    scatterers with a 128-element linear array, demodulates to IQ, and
//!    beamforms with coherent compounding on a quarter-wavelength grid.
//! 3. [`preprocess`] turns beamformed cine-loops into normalized PSF
//!    correlation blocks and persists paired (input, target) datasets,
//!    including the SVD clutter filter.
//! 4. [`expert`] is the conventional baseline: local-maxima detection,
//!    subpixel Gaussian localization, and fine-grid accumulation.
//! 5. [`neural`] is a self-contained tensor/gradient engine implementing the
//!    spatiotemporal encoder-decoder tracking network, dice loss, Adam, and
//!    the two-phase training procedure.
//! 6. [`inference`] applies a trained model over large fields via a spatial
//!    sliding window, accumulates angiograms, and rigidly registers blocks.
//! 7. [`evaluate`] scores reconstructions: precision/recall/dice and
//!    network-filling curves against ground truth.
//!
//! The `ulm` binary exposes the workflow as subcommands driven by a TOML
//! configuration; see [`cli`].

pub mod acoustics;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod expert;
pub mod inference;
pub mod neural;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod vasculature;

pub use error::{Error, Result};
