//! Orientation-coherence nonlinear diffusion (GVOF) for PET volumes, with the
//! Gaussian, bilateral and Perona-Malik baselines, a synthetic sphere phantom
//! with Poisson acquisitions, and the quantitation metrics used to compare
//! them.
//!
//! ```no_run
//! use gvof_core::{filters, study};
//!
//! let cfg = study::StudyConfig::default();
//! let rows = study::experiment_report(&cfg, None).unwrap();
//! print!("{}", gvof_core::io::report_csv(&rows));
//! # let _ = filters::GvofParams::default();
//! ```

pub mod error;
pub mod filters;
pub mod gradient;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod study;
pub mod volume;

pub use error::{Error, Result};
pub use filters::{apply_filter, FilterConfig};
pub use volume::{Geometry, Mask, Volume};
