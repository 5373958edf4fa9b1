//! Simulation of distributed sink-direction tree formation in self-organising
//! sensor networks.
//!
//! Nodes scattered over a square area learn a route towards a common sink by
//! listening to cost-estimate advertisements from their cheapest neighbours.
//! The crate provides the layout generator and cost model ([`topology`]), an
//! exact shortest-path oracle ([`oracle`]), the per-node state machine
//! ([`protocol`]), a seeded discrete-time event loop ([`engine`]), figure-style
//! reductions ([`metrics`]) and the experiment driver behind the `sinkdir`
//! binary ([`cli`], [`config`]).

pub mod cli;
pub mod config;
pub mod engine;
mod error;
pub mod metrics;
pub mod oracle;
pub mod protocol;
pub mod topology;

pub use error::{Error, Result};

use std::fmt;

/// Index of a node in a layout. Node ids are dense simulation indices only.
pub type NodeId = usize;

/// An extended non-negative real: either a finite cost or "not reached yet".
///
/// `Finite(_)` always orders below `Unreached`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub enum RouteCost {
    Finite(f64),
    #[default]
    Unreached,
}

impl RouteCost {
    pub fn finite(self) -> Option<f64> {
        match self {
            RouteCost::Finite(c) => Some(c),
            RouteCost::Unreached => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, RouteCost::Finite(_))
    }
}

impl From<Option<f64>> for RouteCost {
    fn from(value: Option<f64>) -> Self {
        value.map_or(RouteCost::Unreached, RouteCost::Finite)
    }
}

/// Writes the finite value at full precision, or nothing for `Unreached`.
impl fmt::Display for RouteCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteCost::Finite(c) => write!(f, "{c}"),
            RouteCost::Unreached => Ok(()),
        }
    }
}
