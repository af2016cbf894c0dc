//! Spatial gene co-expression modules from spatial transcriptomics data.
//!
//! The pipeline has two steps. First, each gene's noisy per-spot expression
//! is modeled as a smooth field over the tissue: the spot locations are
//! Delaunay-triangulated ([`mesh`]), a squared-Laplacian roughness penalty
//! is assembled on the piecewise-linear finite-element basis ([`fem`]), and
//! penalized iteratively reweighted least squares fits every gene with one
//! GCV-selected smoothing parameter shared across the gene set ([`solver`]).
//! Second, the fitted coefficient rows are clustered by iterative
//! hierarchical clustering under the Spearman distance, with merge/prune
//! refinement so that small modules survive next to large ones ([`ihc`]).
//!
//! [`metrics`] scores partitions (adjusted Rand index, Davies-Bouldin, mean
//! silhouette), [`synth`] generates benchmark datasets with planted modules,
//! [`io`] reads and writes the on-disk formats and renders cluster figures,
//! and [`cli`] assembles everything into the `stihc` command-line workflows.
//!
//! The [`guide`] module carries the book; its chapters double as doc-tests.
//!
//! Results are deterministic: reruns and different `--threads` settings
//! produce byte-identical outputs.

// Indexed loops over symmetric matrices and paired buffers read better than
// iterator chains in the numeric kernels here.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::explicit_counter_loop)]

pub mod cli;
pub mod error;
pub mod fem;
pub mod guide;
pub mod ihc;
pub mod io;
mod linalg;
pub mod mesh;
pub mod metrics;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
