//! Quantile VAR spillover analysis for stablecoin peg-deviation panels.
//!
//! The pipeline runs from a price CSV to spillover indices:
//!
//! 1. [`timeseries`] loads prices, converts them to peg deviations in basis
//!    points and builds complete-case difference panels.
//! 2. [`quantreg`] solves the linear quantile regressions that [`qvar`]
//!    stacks into a quantile VAR at a chosen level `tau`.
//! 3. [`fevd`] turns a fitted model into a generalized forecast-error
//!    variance decomposition, and [`spillover`] reads directional, total,
//!    tail-relative, network and category indices off it.
//! 4. [`rolling`] repeats the above over moving windows; [`contagion`]
//!    provides event-study tools; [`dgp`] simulates panels with known
//!    parameters for validation.
//!
//! ```
//! use nalgebra::DMatrix;
//! use spill_core::{dgp, fevd, qvar, spillover, timeseries, QuantileLevel, QvarSpec};
//!
//! let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
//! let spec = dgp::DgpSpec::new(vec![DMatrix::zeros(2, 2)], sigma, 500, 7);
//! let panel = dgp::simulate(&spec).unwrap();
//! let balanced = timeseries::balanced(&panel, &["S1", "S2"], 50).unwrap();
//! let model = qvar::fit_qvar(&balanced, QvarSpec::new(1, QuantileLevel::MEDIAN).unwrap()).unwrap();
//! let decomposition = fevd::generalized_fevd(&model, 10).unwrap();
//! let idx = spillover::indices(&decomposition);
//! assert!(idx.total > 0.1 && idx.total < 0.3);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contagion;
pub mod dgp;
pub mod error;
pub mod fevd;
pub mod quantreg;
pub mod qvar;
pub mod rolling;
pub mod spillover;
pub mod timeseries;

pub use nalgebra;

pub use contagion::{EventWindowSpec, FrResult, SyntheticControlResult};
pub use dgp::{DgpSpec, Innovations};
pub use error::{Error, Result};
pub use fevd::{FevdMatrix, QvmaCoefficients};
pub use quantreg::{QuantileFitResult, QuantileLevel};
pub use qvar::{QvarModel, QvarSpec};
pub use rolling::{RollingResult, WindowPlan};
pub use spillover::{SpilloverIndices, CategoryFlow, NetworkEdge};
pub use timeseries::{AssetMeta, BalancedPanel, Category, DeviationPanel, PricePanel};
