//! Per-node state machine of the sink direction protocol.
//!
//! Every variant updates its estimate and pointer on strict improvement only;
//! variants differ in when an improved estimate is put on the air.

use std::fmt;
use std::str::FromStr;

use crate::topology::ListenGraph;
use crate::{Error, NodeId, Result, RouteCost};

/// Discrete simulation time, in steps (nominally seconds).
pub type Step = u64;

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub estimate: RouteCost,
    pub pointer: Option<NodeId>,
    pub last_advertised: RouteCost,
    pub pending_tx: Option<Step>,
    pub messages_sent: u32,
    /// Neighbour whose advertisement was held back because a cheaper route
    /// through another neighbour is expected (neighbour-list variant).
    pub suppressed_by: Option<NodeId>,
}

impl Default for NodeState {
    fn default() -> Self {
        Self {
            estimate: RouteCost::Unreached,
            pointer: None,
            last_advertised: RouteCost::Unreached,
            pending_tx: None,
            messages_sent: 0,
            suppressed_by: None,
        }
    }
}

impl NodeState {
    /// State of the sink before it bootstraps the network.
    pub fn sink() -> Self {
        Self {
            estimate: RouteCost::Finite(0.0),
            ..Self::default()
        }
    }
}

/// The single wire message: a node's current route cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Advertisement {
    pub sender: NodeId,
    pub value: f64,
    pub sent_at: Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    /// Advertise every improvement.
    Baseline,
    /// Advertise only improvements that pass the `f` gate.
    #[default]
    Gated,
    /// Gated, plus hold back while a cheaper route via a neighbour is expected.
    NeighbourList,
    /// Advertise once, when `v * t` exceeds the estimate.
    TimeSync,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum GateMode {
    /// Fire iff `candidate * f < last_advertised`.
    #[default]
    SignificantImprovement,
    /// Fire iff `candidate < f * estimate` (estimate before the update).
    LiteralEq3,
}

macro_rules! keyword_enum {
    ($ty:ty { $($variant:path => $kw:literal),+ $(,)? }) => {
        impl $ty {
            pub const KEYWORDS: &'static [&'static str] = &[$($kw),+];

            pub fn keyword(self) -> &'static str {
                match self { $($variant => $kw),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.keyword())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($kw => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} '{other}' (expected one of {:?})",
                        stringify!($ty),
                        Self::KEYWORDS
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Variant {
    Variant::Baseline => "baseline",
    Variant::Gated => "gated",
    Variant::NeighbourList => "neighbour_list",
    Variant::TimeSync => "time_sync",
});

keyword_enum!(GateMode {
    GateMode::SignificantImprovement => "significant_improvement",
    GateMode::LiteralEq3 => "literal_eq3",
});

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub variant: Variant,
    pub f: f64,
    pub gate_mode: GateMode,
    pub delay_min: Step,
    pub delay_max: Step,
    /// Cost units per step for `TimeSync`; `None` picks the conservative
    /// default `min positive link cost / (delay_max + 1)` per graph.
    pub v: Option<f64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gated,
            f: 1.1,
            gate_mode: GateMode::SignificantImprovement,
            delay_min: 1,
            delay_max: 100,
            v: None,
        }
    }
}

impl ProtocolConfig {
    pub fn baseline() -> Self {
        Self {
            variant: Variant::Baseline,
            f: 1.0,
            ..Self::default()
        }
    }

    pub fn gated(f: f64) -> Self {
        Self {
            f,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f.is_finite() && self.f >= 1.0) {
            return Err(Error::Config(format!("f must be >= 1 (got {})", self.f)));
        }
        if self.delay_min < 1 || self.delay_min > self.delay_max {
            return Err(Error::Config(format!(
                "need 1 <= delay_min <= delay_max (got {}..{})",
                self.delay_min, self.delay_max
            )));
        }
        if let Some(v) = self.v {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("v must be > 0 (got {v})")));
            }
        }
        Ok(())
    }

    /// Velocity used on `graph`: the configured one, or the conservative
    /// default that guarantees a single message per node.
    pub fn velocity(&self, graph: &ListenGraph) -> f64 {
        self.v.unwrap_or_else(|| {
            graph.min_positive_cost().unwrap_or(1.0) / (self.delay_max + 1) as f64
        })
    }
}

/// Applies an advertisement received over a link of cost `link`. The estimate
/// and pointer move only on strict improvement. The candidate route cost is
/// returned either way.
pub fn accept_update(state: &NodeState, adv: &Advertisement, link: f64) -> (NodeState, f64) {
    let candidate = link + adv.value;
    if RouteCost::Finite(candidate) < state.estimate {
        let next = NodeState {
            estimate: RouteCost::Finite(candidate),
            pointer: Some(adv.sender),
            ..state.clone()
        };
        (next, candidate)
    } else {
        (state.clone(), candidate)
    }
}

/// Whether `candidate` is worth advertising. `state` is the node state before
/// the update that produced the candidate.
pub fn advertise_gate(candidate: f64, state: &NodeState, cfg: &ProtocolConfig) -> bool {
    let (mode, f) = match cfg.variant {
        Variant::Baseline => (GateMode::SignificantImprovement, 1.0),
        _ => (cfg.gate_mode, cfg.f),
    };
    match mode {
        GateMode::SignificantImprovement => {
            RouteCost::Finite(candidate * f) < state.last_advertised
        }
        GateMode::LiteralEq3 => match state.estimate {
            RouteCost::Finite(e) => candidate < f * e,
            RouteCost::Unreached => true,
        },
    }
}

/// Two-hop knowledge gathered in the neighbour-list setup phase: for each
/// node, the listen lists (with costs) of the neighbours it listens to.
#[derive(Clone, Debug)]
pub struct TwoHopTable<'g> {
    graph: &'g ListenGraph,
    setup_messages: u64,
}

impl<'g> TwoHopTable<'g> {
    /// Every node broadcasts its listen list once.
    pub fn gather(graph: &'g ListenGraph) -> Self {
        Self {
            graph,
            setup_messages: graph.len() as u64,
        }
    }

    pub fn setup_messages(&self) -> u64 {
        self.setup_messages
    }

    /// `C(z, n)` as known to a listener of `z`.
    pub fn cost_via(&self, z: NodeId, n: NodeId) -> Option<f64> {
        self.graph.listen_cost(z, n)
    }
}

/// True when `x` should hold back the estimate it just took from `sender`
/// because some other neighbour `z` hears `sender` and offers a strictly
/// cheaper relay: `C(x,z) + C(z,sender) < C(x,sender)`.
pub fn neighbour_list_suppress(
    x: NodeId,
    sender: NodeId,
    link_to_sender: f64,
    two_hop: &TwoHopTable<'_>,
    graph: &ListenGraph,
) -> bool {
    graph.listens(x).iter().any(|z| {
        z.node != sender
            && two_hop
                .cost_via(z.node, sender)
                .is_some_and(|zs| z.cost + zs < link_to_sender)
    })
}

/// Time-synchronised release: fire once `v * t` strictly exceeds the estimate.
pub fn time_sync_release(state: &NodeState, t: Step, v: f64) -> bool {
    match state.estimate {
        RouteCost::Finite(e) => state.messages_sent == 0 && v * t as f64 > e,
        RouteCost::Unreached => false,
    }
}

/// First step at which [`time_sync_release`] would hold for `estimate`.
pub fn release_step(estimate: f64, v: f64) -> Step {
    let holds = |t: Step| v * t as f64 > estimate;
    let mut t = (estimate / v).floor().max(0.0) as Step;
    while t > 0 && holds(t - 1) {
        t -= 1;
    }
    while !holds(t) {
        t += 1;
    }
    t
}
