//! Unsupervised alignment of metric-measure spaces.
//!
//! Two solver families live here:
//!
//! * the classical entropic Gromov-Wasserstein solver ([`egw`]), which
//!   alternates linearization of the quadratic distance-disagreement
//!   objective with entropic OT projections, and
//! * an amortized solver ([`trainer`]) that learns a pair of embedding
//!   networks whose induced *linear* OT problem yields a GW-optimal
//!   coupling; once trained, aligning new samples costs a single Sinkhorn
//!   solve on the embeddings.
//!
//! Supporting machinery: log-domain Sinkhorn ([`sinkhorn`]), a
//! differentiable unrolled Sinkhorn layer ([`diffot`]), soft ranking for the
//! rank-matching objective ([`softrank`]), graph Laplacian smoothness
//! regularization of the learned cost ([`spectral`]), epsilon annealing
//! ([`annealing`]), and alignment metrics ([`eval`]).

pub mod annealing;
pub mod diffot;
pub mod egw;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod net;
pub mod sinkhorn;
pub mod softrank;
pub mod spectral;
pub mod synth;
pub mod trainer;

pub use error::{GwError, Result};
