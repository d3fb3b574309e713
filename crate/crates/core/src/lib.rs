//! Stochastic wafer-fab simulation and dispatching.
//!
//! The [`sim`] module is a discrete-event model of a reentrant fab; a
//! [`dispatch::Dispatcher`] orders the legal lots at every decision point.
//! [`net`] holds a small attention network that scores lots, trained first
//! with a self-supervised tool-family task ([`ssl`]) and then with natural
//! evolution strategies ([`nes`]) against the cost in [`objective`].

pub mod dispatch;
pub mod error;
pub mod features;
pub mod generate;
pub mod nes;
pub mod net;
pub mod objective;
pub mod scenario;
pub mod sim;
pub mod ssl;

/// Simulation time unit.
pub type Minutes = i64;

pub const MINUTES_PER_DAY: Minutes = 1440;

pub use dispatch::{Dispatcher, HeuristicDispatcher, PolicyDispatcher, TieBreakRule};
pub use error::{Error, Result};
pub use features::Normalizer;
pub use net::PolicyParams;
pub use objective::{total_cost, CostBreakdown, ObjectiveConfig};
pub use scenario::Scenario;
pub use sim::{FabState, SimOptions};
