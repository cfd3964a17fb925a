//! Equilibrium bidding and Monte Carlo comparison of separate versus bundled
//! procurement with cost complementarities, plus the estimation pipeline for
//! school broadband contract panels: difference-in-differences, sensitivity
//! to parallel-trend violations, expenditure savings and welfare bounds.

pub mod auction_sim;
pub mod distributions;
pub mod econometrics;
pub mod equilibrium;
pub mod panel_data;
pub mod policy_bounds;
pub mod error;
pub mod quadrature;

pub use error::{Error, Result, RowIssue};
