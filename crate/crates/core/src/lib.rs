//! Equivalence tests for pre-treatment trends in difference-in-differences.
//!
//! The workflow is: load a balanced panel, fit the placebo coefficients of
//! the pre-treatment periods by two-way fixed effects, then test whether
//! those coefficients are negligible with one of four equivalence tests
//! (intersection-union, bootstrap, mean, self-normalized RMS).
//!
//! ```no_run
//! use eqtrends::{panel, covariance, equivalence};
//!
//! let file = std::fs::File::open("panel.csv")?;
//! let ds = panel::load_panel(file, &panel::PanelSchema::default())?;
//! let fit = panel::fit_pretrend(&ds.pretreatment()?)?;
//! let cov = covariance::cluster_robust_cov(&fit)?;
//! let res = equivalence::mean_test(&fit, &cov, 0.1, 0.05)?;
//! println!("reject: {}, tau* = {:?}", res.reject, res.minimal_threshold);
//! # Ok::<(), eqtrends::Error>(())
//! ```

pub mod covariance;
pub mod dist;
pub mod equivalence;
mod error;
pub mod exec;
pub mod panel;
pub mod simulate;
pub mod staggered;

pub use error::{Error, Result};
pub use exec::Execution;
