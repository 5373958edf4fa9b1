//! Discrete-time event loop driving the protocol over a listening graph.
//!
//! Time 0 is the sink's bootstrap broadcast. Each later step fires every
//! transmission due at that step in ascending node order; a broadcast reaches
//! all of the sender's listeners within the same step, in ascending receiver
//! order. Delays are drawn from a ChaCha8 stream in processing order, so a
//! run is a pure function of (graph, config, seed).

use std::collections::BTreeSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::{
    accept_update, advertise_gate, neighbour_list_suppress, release_step, time_sync_release,
    Advertisement, NodeState, ProtocolConfig, Step, TwoHopTable, Variant,
};
use crate::topology::ListenGraph;
use crate::{Error, NodeId, Result, RouteCost};

pub const DEFAULT_HORIZON: Step = 10_000_000;

/// Stream id separating engine draws from layout draws under the same seed.
const ENGINE_STREAM: u64 = 1;

pub struct World<'g> {
    graph: &'g ListenGraph,
    cfg: ProtocolConfig,
    states: Vec<NodeState>,
    clock: Step,
    pending: BTreeSet<(Step, NodeId)>,
    rng: ChaCha8Rng,
    tx_log: Vec<Advertisement>,
    per_step_tx: Vec<u32>,
    gate_firings: Vec<u32>,
    first_contact: Vec<RouteCost>,
    two_hop: Option<TwoHopTable<'g>>,
    velocity: f64,
    // time_sync: nodes holding a finite estimate that have not been released
    awaiting: BTreeSet<(Step, NodeId)>,
    release_at: Vec<Option<Step>>,
}

impl<'g> World<'g> {
    /// Sets up all nodes and performs the sink's bootstrap broadcast at time 0.
    pub fn new(graph: &'g ListenGraph, cfg: &ProtocolConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if graph.is_empty() {
            return Err(Error::Config("cannot simulate an empty network".into()));
        }
        let n = graph.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ENGINE_STREAM);
        let mut states = vec![NodeState::default(); n];
        states[graph.sink()] = NodeState::sink();
        let mut first_contact = vec![RouteCost::Unreached; n];
        first_contact[graph.sink()] = RouteCost::Finite(0.0);
        let mut world = Self {
            graph,
            cfg: cfg.clone(),
            states,
            clock: 0,
            pending: BTreeSet::new(),
            rng,
            tx_log: Vec::new(),
            per_step_tx: vec![0],
            gate_firings: vec![0; n],
            first_contact,
            two_hop: (cfg.variant == Variant::NeighbourList).then(|| TwoHopTable::gather(graph)),
            velocity: cfg.velocity(graph),
            awaiting: BTreeSet::new(),
            release_at: vec![None; n],
        };
        world.gate_firings[graph.sink()] = 1;
        world.broadcast(graph.sink());
        Ok(world)
    }

    pub fn clock(&self) -> Step {
        self.clock
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn tx_log(&self) -> &[Advertisement] {
        &self.tx_log
    }

    pub fn per_step_tx(&self) -> &[u32] {
        &self.per_step_tx
    }

    pub fn pending(&self) -> impl Iterator<Item = (Step, NodeId)> + '_ {
        self.pending.iter().copied()
    }

    /// Velocity in effect for the time-synchronised variant.
    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    /// Quiescence: nothing scheduled, and under `TimeSync` nobody with a
    /// finite estimate still waiting for release.
    pub fn converged(&self) -> bool {
        self.pending.is_empty() && self.awaiting.is_empty()
    }

    /// Advances the clock by one step and processes everything due at it.
    pub fn step(&mut self) {
        self.clock += 1;
        self.per_step_tx.push(0);
        while let Some(&(t, node)) = self.pending.first() {
            if t != self.clock {
                debug_assert!(t > self.clock);
                break;
            }
            self.pending.pop_first();
            self.broadcast(node);
        }
        while let Some(&(t, node)) = self.awaiting.first() {
            if t > self.clock {
                break;
            }
            self.awaiting.pop_first();
            self.release_at[node] = None;
            debug_assert!(time_sync_release(
                &self.states[node],
                self.clock,
                self.velocity
            ));
            self.schedule(node);
        }
    }

    /// Feeds one advertisement to `x` over a link of cost `link` and applies
    /// the variant's transmission rule.
    pub fn deliver(&mut self, x: NodeId, adv: &Advertisement, link: f64) {
        let (next, candidate) = accept_update(&self.states[x], adv, link);
        let improved = next.estimate < self.states[x].estimate;
        let before = std::mem::replace(&mut self.states[x], next);
        if improved && !before.estimate.is_finite() {
            self.first_contact[x] = RouteCost::Finite(candidate);
        }
        match self.cfg.variant {
            Variant::TimeSync => {
                if improved
                    && self.states[x].messages_sent == 0
                    && self.states[x].pending_tx.is_none()
                {
                    if let Some(old) = self.release_at[x].take() {
                        self.awaiting.remove(&(old, x));
                    }
                    let t = release_step(candidate, self.velocity);
                    self.release_at[x] = Some(t);
                    self.awaiting.insert((t, x));
                }
            }
            Variant::Baseline | Variant::Gated => {
                if advertise_gate(candidate, &before, &self.cfg) {
                    self.schedule(x);
                }
            }
            Variant::NeighbourList => {
                if advertise_gate(candidate, &before, &self.cfg) {
                    let two_hop = self.two_hop.as_ref().expect("two-hop table gathered");
                    if neighbour_list_suppress(x, adv.sender, link, two_hop, self.graph) {
                        self.states[x].suppressed_by = Some(adv.sender);
                    } else {
                        self.states[x].suppressed_by = None;
                        self.schedule(x);
                    }
                }
            }
        }
    }

    fn schedule(&mut self, x: NodeId) {
        if self.states[x].pending_tx.is_some() {
            return;
        }
        let delay = self.rng.gen_range(self.cfg.delay_min..=self.cfg.delay_max);
        let at = self.clock + delay;
        self.states[x].pending_tx = Some(at);
        self.pending.insert((at, x));
        self.gate_firings[x] += 1;
    }

    fn broadcast(&mut self, sender: NodeId) {
        let state = &mut self.states[sender];
        let value = state
            .estimate
            .finite()
            .expect("only nodes with a route transmit");
        state.pending_tx = None;
        state.messages_sent += 1;
        state.last_advertised = RouteCost::Finite(value);
        let adv = Advertisement {
            sender,
            value,
            sent_at: self.clock,
        };
        self.tx_log.push(adv);
        *self.per_step_tx.last_mut().expect("current step slot") += 1;
        let graph = self.graph;
        for link in graph.listeners(sender) {
            self.deliver(link.node, &adv, link.cost);
        }
    }

    pub fn into_result(self) -> RunResult {
        let total_messages = self.tx_log.len() as u64;
        RunResult {
            converged_at: self.per_step_tx.len() as Step,
            total_messages,
            setup_messages: self.two_hop.as_ref().map_or(0, TwoHopTable::setup_messages),
            final_states: self.states,
            per_step_tx: self.per_step_tx,
            tx_log: self.tx_log,
            gate_firings: self.gate_firings,
            first_contact: self.first_contact,
            velocity: (self.cfg.variant == Variant::TimeSync).then_some(self.velocity),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub final_states: Vec<NodeState>,
    /// Transmissions per step, indexed by time (index 0 is the bootstrap).
    pub per_step_tx: Vec<u32>,
    /// First time at which the network is quiescent.
    pub converged_at: Step,
    pub total_messages: u64,
    /// Neighbour-list gathering traffic, not part of `total_messages`.
    pub setup_messages: u64,
    pub tx_log: Vec<Advertisement>,
    /// Transmissions scheduled per node (one per gate firing on a free slot).
    pub gate_firings: Vec<u32>,
    /// Estimate each node adopted on first contact.
    pub first_contact: Vec<RouteCost>,
    pub velocity: Option<f64>,
}

impl RunResult {
    pub fn estimates(&self) -> Vec<RouteCost> {
        self.final_states.iter().map(|s| s.estimate).collect()
    }

    pub fn reached(&self) -> usize {
        self.final_states
            .iter()
            .filter(|s| s.estimate.is_finite())
            .count()
    }
}

pub fn run(graph: &ListenGraph, cfg: &ProtocolConfig, seed: u64) -> Result<RunResult> {
    run_with_horizon(graph, cfg, seed, DEFAULT_HORIZON)
}

/// Runs to quiescence, aborting with [`Error::Livelock`] past `horizon` steps.
pub fn run_with_horizon(
    graph: &ListenGraph,
    cfg: &ProtocolConfig,
    seed: u64,
    horizon: Step,
) -> Result<RunResult> {
    let mut world = World::new(graph, cfg, seed)?;
    while !world.converged() {
        if world.clock() >= horizon {
            return Err(Error::Livelock {
                horizon,
                messages: world.tx_log().len() as u64,
            });
        }
        world.step();
    }
    Ok(world.into_result())
}

/// `time,sender,value`
pub fn write_event_log<W: Write>(log: &[Advertisement], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "sender", "value"])?;
    for adv in log {
        w.write_record([
            adv.sent_at.to_string(),
            adv.sender.to_string(),
            adv.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `time,tx_count`
pub fn write_series<W: Write>(per_step_tx: &[u32], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "tx_count"])?;
    for (t, c) in per_step_tx.iter().enumerate() {
        w.write_record([t.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `id,estimate,pointer,messages_sent` with empty fields for unreached/none.
pub fn write_final_states<W: Write>(states: &[NodeState], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "estimate", "pointer", "messages_sent"])?;
    for (i, s) in states.iter().enumerate() {
        w.write_record([
            i.to_string(),
            s.estimate.to_string(),
            s.pointer.map(|p| p.to_string()).unwrap_or_default(),
            s.messages_sent.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::GateMode;
    use crate::topology::{build_listen_graph, CostModelParams, Link, Point};
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn line(xs: &[f64], range: f64) -> ListenGraph {
        let pts: Vec<Point> = xs.iter().map(|&x| Point::new(x, 0.0)).collect();
        build_listen_graph(&pts, range, 8, &CostModelParams::default(), 0).unwrap()
    }

    #[test]
    fn sink_only_network() {
        let g = line(&[0.0], 100.0);
        let r = run(&g, &ProtocolConfig::baseline(), 1).unwrap();
        assert_eq!(r.converged_at, 1);
        assert_eq!(r.total_messages, 1);
        assert_eq!(r.per_step_tx, vec![1]);
        assert_eq!(r.tx_log[0].value, 0.0);
    }

    #[test]
    fn line_converges_to_optimum() {
        let g = line(&[0.0, 100.0, 200.0], 250.0);
        let r = run(&g, &ProtocolConfig::baseline(), 7).unwrap();
        let est: Vec<f64> = r.estimates().iter().map(|c| c.finite().unwrap()).collect();
        assert_eq!(est[0], 0.0);
        assert!((est[1] - E).abs() < 1e-12);
        assert!((est[2] - 2.0 * E).abs() < 1e-12);
        assert_eq!(r.final_states[2].pointer, Some(1));
        let sum: u64 = r.per_step_tx.iter().map(|&c| c as u64).sum();
        assert_eq!(sum, r.total_messages);
    }

    #[test]
    fn idle_step_appends_zero() {
        let g = line(&[0.0, 100.0], 150.0);
        let mut w = World::new(&g, &ProtocolConfig::baseline(), 3).unwrap();
        let due = w.pending().next().unwrap().0;
        assert!(due >= 1);
        if due > 1 {
            w.step();
            assert_eq!(w.per_step_tx(), &[1, 0]);
            assert_eq!(w.clock(), 1);
        }
    }

    #[test]
    fn same_step_senders_fire_in_id_order() {
        // delay fixed at 1: nodes 1 and 2 both hear the sink and fire at t = 1
        let g = line(&[0.0, 100.0, -100.0], 150.0);
        let cfg = ProtocolConfig {
            delay_min: 1,
            delay_max: 1,
            ..ProtocolConfig::baseline()
        };
        let r = run(&g, &cfg, 0).unwrap();
        let at1: Vec<NodeId> = r
            .tx_log
            .iter()
            .filter(|a| a.sent_at == 1)
            .map(|a| a.sender)
            .collect();
        assert_eq!(at1, vec![1, 2]);
        assert_eq!(r.per_step_tx[1], 2);
    }

    #[test]
    fn converged_tracks_pending() {
        let g = line(&[0.0, 100.0], 150.0);
        let w = World::new(&g, &ProtocolConfig::baseline(), 3).unwrap();
        assert!(!w.converged());
    }

    #[test]
    fn time_sync_waits_for_release() {
        let l = |node, cost| Link { node, cost };
        let g = ListenGraph::from_listen_lists(vec![vec![l(1, 5.0)], vec![l(0, 5.0)]], 0).unwrap();
        let cfg = ProtocolConfig {
            variant: Variant::TimeSync,
            v: Some(0.01),
            ..ProtocolConfig::default()
        };
        let mut w = World::new(&g, &cfg, 1).unwrap();
        // node 1 holds estimate 5 with nothing pending until 0.01 t > 5
        assert!(w.pending().next().is_none());
        assert!(!w.converged());
        while w.clock() < 500 {
            w.step();
        }
        assert!(w.pending().next().is_none() && !w.converged());
        w.step();
        assert!(w.pending().next().is_some());
        let r = run(&g, &cfg, 1).unwrap();
        assert_eq!(r.total_messages, 2);
        assert!(r.tx_log[1].sent_at > 501);
    }

    #[test]
    fn literal_gate_can_livelock() {
        // two near-equal nodes with a tiny link keep re-advertising to each other
        let l = |node, cost| Link { node, cost };
        let g = ListenGraph::from_listen_lists(
            vec![
                vec![],
                vec![l(0, 10.0), l(2, 0.1)],
                vec![l(0, 10.05), l(1, 0.1)],
            ],
            0,
        )
        .unwrap();
        let cfg = ProtocolConfig {
            gate_mode: GateMode::LiteralEq3,
            ..ProtocolConfig::gated(1.1)
        };
        let err = run_with_horizon(&g, &cfg, 2, 5_000).unwrap_err();
        assert!(matches!(err, Error::Livelock { horizon: 5_000, .. }));
    }

    #[test]
    fn csv_writers() {
        let g = line(&[0.0, 500.0], 100.0);
        let r = run(&g, &ProtocolConfig::baseline(), 1).unwrap();
        let mut buf = Vec::new();
        write_final_states(&r.final_states, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "id,estimate,pointer,messages_sent\n0,0,,1\n1,,,0\n"
        );
        let mut buf = Vec::new();
        write_event_log(&r.tx_log, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time,sender,value\n0,0,0\n"
        );
        let mut buf = Vec::new();
        write_series(&r.per_step_tx, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,tx_count\n0,1\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn improving_delivery_schedules_once(
            seed in any::<u64>(),
            value in 0.0f64..100.0,
            link in 0.001f64..50.0,
            steps in 0u64..5,
            delay_max in 1u64..200,
        ) {
            let g = line(&[0.0, 100.0, 5000.0], 150.0);
            let cfg = ProtocolConfig { delay_max, ..ProtocolConfig::gated(1.0) };
            let mut w = World::new(&g, &cfg, seed).unwrap();
            for _ in 0..steps {
                w.step();
            }
            let before: Vec<_> = w.pending().collect();
            let adv = Advertisement { sender: 1, value, sent_at: w.clock() };
            w.deliver(2, &adv, link);
            let added: Vec<_> = w.pending().filter(|e| !before.contains(e)).collect();
            prop_assert_eq!(added.len(), 1);
            let (t, node) = added[0];
            prop_assert_eq!(node, 2);
            prop_assert!(t > w.clock() && t <= w.clock() + delay_max);
        }
    }
}
