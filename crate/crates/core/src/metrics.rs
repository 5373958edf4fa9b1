//! Reductions of run results: time series smoothing, histograms, per-node
//! path statistics and (f, k) sweep tables.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::engine::{run_with_horizon, RunResult};
use crate::oracle::{shortest_path_tree, OptimalTree};
use crate::protocol::{GateMode, ProtocolConfig, Step};
use crate::topology::{build_listen_graph, reachable_set, CostModelParams, ListenGraph, Point};
use crate::{Error, NodeId, Result};

/// Fixed-edge histogram. Bin `i` counts values in `[edges[i], edges[i + 1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2
            || edges
                .windows(2)
                .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::Config(
                "histogram edges must be strictly ascending (>= 2)".into(),
            ));
        }
        Ok(Self {
            counts: vec![0; edges.len() - 1],
            edges,
            underflow: 0,
            overflow: 0,
        })
    }

    /// Unit-width bins `[0,1), [1,2), ..., [max, max+1)`.
    pub fn integer_bins(max: u64) -> Self {
        Self::new((0..=max + 1).map(|i| i as f64).collect()).expect("ascending")
    }

    /// `bins` equal-width bins covering `[0, max]` inclusive.
    pub fn uniform_to(max: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let top = if max > 0.0 { max * (1.0 + 1e-9) } else { 1.0 };
        let width = top / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| i as f64 * width).collect();
        edges.push(top);
        Self::new(edges).expect("ascending")
    }

    pub fn add(&mut self, value: f64) {
        if value < self.edges[0] {
            self.underflow += 1;
        } else if value >= *self.edges.last().expect("edges") || value.is_nan() {
            self.overflow += 1;
        } else {
            // last edge <= value is the bin
            let i = self.edges.partition_point(|&e| e <= value) - 1;
            self.counts[i] += 1;
        }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    /// Lower edge of the fullest bin (first one on ties).
    pub fn mode(&self) -> Option<f64> {
        let best = self.counts.iter().copied().max().filter(|&c| c > 0)?;
        let i = self.counts.iter().position(|&c| c == best)?;
        Some(self.edges[i])
    }
}

/// Trailing moving average; the first `window - 1` entries average over the
/// samples available so far.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving average window must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        let len = (i + 1).min(window);
        // resum now and then so rounding in the running sum cannot accumulate
        if i % 4096 == 4095 {
            sum = series[i + 1 - len..=i].iter().sum();
        }
        let value = sum / len as f64;
        out.push(value);
    }
    Ok(out)
}

/// Per-node `messages_sent` over every node (sink and unreached included).
/// Without `edges`, unit bins from 0 up to the largest count.
pub fn message_histogram(result: &RunResult, edges: Option<Vec<f64>>) -> Result<Histogram> {
    let mut hist = match edges {
        Some(e) => Histogram::new(e)?,
        None => Histogram::integer_bins(
            result
                .final_states
                .iter()
                .map(|s| s.messages_sent as u64)
                .max()
                .unwrap_or(0),
        ),
    };
    for s in &result.final_states {
        hist.add(s.messages_sent as f64);
    }
    Ok(hist)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathEntry {
    /// Final route-cost estimate.
    pub cost: f64,
    /// Sum of link costs actually traversed along the pointer chain.
    pub route_cost: f64,
    /// Pointer-chain length to the sink (0 for the sink).
    pub hops: usize,
}

impl PathEntry {
    /// Relay nodes strictly between this node and the sink.
    pub fn intermediate(&self) -> usize {
        self.hops.saturating_sub(1)
    }
}

#[derive(Clone, Debug)]
pub struct PathStats {
    /// `None` for nodes that never obtained a route.
    pub per_node: Vec<Option<PathEntry>>,
    /// Final estimates; unreached nodes are counted in `overflow`.
    pub cost_hist: Histogram,
    /// Pointer-chain lengths; unreached nodes are counted in `overflow`.
    pub hops_hist: Histogram,
}

impl PathStats {
    pub fn unreached(&self) -> usize {
        self.per_node.iter().filter(|e| e.is_none()).count()
    }

    fn mean_of(&self, f: impl Fn(&PathEntry) -> f64) -> f64 {
        let (sum, n) = self
            .per_node
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), e| (s + f(e), n + 1));
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }

    pub fn mean_cost(&self) -> f64 {
        self.mean_of(|e| e.cost)
    }

    pub fn mean_hops(&self) -> f64 {
        self.mean_of(|e| e.hops as f64)
    }
}

/// Follows every node's pointers to the sink. A pointer cycle, a pointer to a
/// node the owner does not listen to, or an estimate not matching the
/// pointer's last advertisement is an invariant breach.
pub fn path_stats(
    result: &RunResult,
    graph: &ListenGraph,
    cost_edges: Option<Vec<f64>>,
    hop_edges: Option<Vec<f64>>,
) -> Result<PathStats> {
    let n = graph.len();
    let states = &result.final_states;
    let mut per_node: Vec<Option<PathEntry>> = vec![None; n];
    let mut visiting = vec![false; n];
    let sink = graph.sink();
    per_node[sink] = Some(PathEntry {
        cost: 0.0,
        route_cost: 0.0,
        hops: 0,
    });
    let mut chain = Vec::new();
    for start in 0..n {
        if per_node[start].is_some() || !states[start].estimate.is_finite() {
            continue;
        }
        chain.clear();
        let mut x = start;
        while per_node[x].is_none() {
            if visiting[x] {
                return Err(Error::Invariant(format!("pointer cycle through node {x}")));
            }
            visiting[x] = true;
            chain.push(x);
            x = states[x]
                .pointer
                .ok_or_else(|| Error::Invariant(format!("node {x} has a route but no pointer")))?;
        }
        for &y in chain.iter().rev() {
            let p = states[y].pointer.expect("checked above");
            let link = graph
                .listen_cost(y, p)
                .ok_or_else(|| Error::Invariant(format!("node {y} points at non-neighbour {p}")))?;
            let estimate = states[y].estimate.finite().expect("pointer implies route");
            let witness = states[p].last_advertised.finite().map(|v| link + v);
            if witness != Some(estimate) {
                return Err(Error::Invariant(format!(
                    "estimate {estimate} of node {y} not witnessed by pointer {p}"
                )));
            }
            let parent = per_node[p].expect("resolved in chain order");
            per_node[y] = Some(PathEntry {
                cost: estimate,
                route_cost: link + parent.route_cost,
                hops: parent.hops + 1,
            });
            visiting[y] = false;
        }
    }
    let max_cost = per_node
        .iter()
        .flatten()
        .map(|e| e.cost)
        .fold(0.0, f64::max);
    let max_hops = per_node.iter().flatten().map(|e| e.hops).max().unwrap_or(0);
    let mut cost_hist = match cost_edges {
        Some(e) => Histogram::new(e)?,
        None => Histogram::uniform_to(max_cost, 50),
    };
    let mut hops_hist = match hop_edges {
        Some(e) => Histogram::new(e)?,
        None => Histogram::integer_bins(max_hops as u64),
    };
    for entry in &per_node {
        match entry {
            Some(e) => {
                cost_hist.add(e.cost);
                hops_hist.add(e.hops as f64);
            }
            None => {
                cost_hist.overflow += 1;
                hops_hist.overflow += 1;
            }
        }
    }
    Ok(PathStats {
        per_node,
        cost_hist,
        hops_hist,
    })
}

/// Headline numbers of one run. Means are over reached nodes; the sink counts
/// as a sender with its single bootstrap message.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunStats {
    pub reached: usize,
    pub unreached: usize,
    pub total_messages: u64,
    pub mean_messages: f64,
    pub mean_cost: f64,
    pub mean_hops: f64,
    /// Mean of estimate / optimal cost over reached non-sink nodes.
    pub mean_cost_ratio: f64,
    pub min_cost_ratio: f64,
    pub converged_at: Step,
}

pub fn run_stats(result: &RunResult, paths: &PathStats, optimal: &OptimalTree) -> RunStats {
    let reached: Vec<NodeId> = (0..paths.per_node.len())
        .filter(|&i| paths.per_node[i].is_some())
        .collect();
    let mean_messages = reached
        .iter()
        .map(|&i| result.final_states[i].messages_sent as f64)
        .sum::<f64>()
        / reached.len() as f64;
    let ratios: Vec<f64> = reached
        .iter()
        .filter_map(|&i| {
            let opt = optimal.cost[i].finite()?;
            (opt > 0.0).then(|| paths.per_node[i].expect("reached").cost / opt)
        })
        .collect();
    let (mean_cost_ratio, min_cost_ratio) = if ratios.is_empty() {
        (1.0, 1.0)
    } else {
        (
            ratios.iter().sum::<f64>() / ratios.len() as f64,
            ratios.iter().copied().fold(f64::INFINITY, f64::min),
        )
    };
    RunStats {
        reached: reached.len(),
        unreached: paths.unreached(),
        total_messages: result.total_messages,
        mean_messages,
        mean_cost: paths.mean_cost(),
        mean_hops: paths.mean_hops(),
        mean_cost_ratio,
        min_cost_ratio,
        converged_at: result.converged_at,
    }
}

/// A node layout and its sink, shared by every cell of a sweep.
#[derive(Clone, Debug)]
pub struct Layout {
    pub positions: Vec<Point>,
    pub sink: NodeId,
}

/// Everything about a sweep cell other than `f` and `k`.
#[derive(Clone, Debug)]
pub struct SweepTemplate {
    pub range: f64,
    pub cost: CostModelParams,
    pub protocol: ProtocolConfig,
    pub horizon: Step,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub f: f64,
    pub gate_mode: GateMode,
    /// Seeds that reached quiescence; the means below are over these.
    pub completed: usize,
    pub livelocked: usize,
    pub mean_messages: f64,
    pub mean_cost: f64,
    pub mean_hops: f64,
    pub mean_cost_ratio: f64,
    pub unreached: f64,
    pub converged_at: f64,
    /// Some seed's graph leaves more than 1% of nodes without a route.
    pub disconnected: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, k: usize, f: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k == k && r.f == f)
    }
}

enum CellOutcome {
    Done(RunStats),
    Livelock,
}

/// Runs every (k, f) cell for every seed and averages over seeds. Seed `i`
/// uses `layouts[i % layouts.len()]`. Rows come out ordered by (k, f) as
/// given; results do not depend on `workers`.
pub fn sweep(
    layouts: &[Layout],
    f_values: &[f64],
    k_values: &[usize],
    template: &SweepTemplate,
    seeds: &[u64],
) -> Result<SweepTable> {
    if layouts.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one layout and one seed".into(),
        ));
    }
    for &f in f_values {
        ProtocolConfig {
            f,
            ..template.protocol.clone()
        }
        .validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(template.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let used_layouts = seeds.len().min(layouts.len());
    let graph_keys: Vec<(usize, usize)> = (0..used_layouts)
        .flat_map(|l| k_values.iter().map(move |&k| (l, k)))
        .collect();
    let graphs: HashMap<(usize, usize), (ListenGraph, OptimalTree, bool)> = pool.install(|| {
        graph_keys
            .par_iter()
            .map(|&(l, k)| {
                let layout = &layouts[l];
                let g = build_listen_graph(
                    &layout.positions,
                    template.range,
                    k,
                    &template.cost,
                    layout.sink,
                )?;
                let tree = shortest_path_tree(&g);
                let unreachable = reachable_set(&g).iter().filter(|r| !**r).count();
                let disconnected = unreachable as f64 > 0.01 * g.len() as f64;
                Ok(((l, k), (g, tree, disconnected)))
            })
            .collect::<Result<_>>()
    })?;

    let cells: Vec<(usize, f64, usize)> = k_values
        .iter()
        .flat_map(|&k| {
            f_values
                .iter()
                .flat_map(move |&f| (0..seeds.len()).map(move |s| (k, f, s)))
        })
        .collect();
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(k, f, s)| {
                let (g, tree, _) = &graphs[&(s % layouts.len(), k)];
                let cfg = ProtocolConfig {
                    f,
                    ..template.protocol.clone()
                };
                match run_with_horizon(g, &cfg, seeds[s], template.horizon) {
                    Ok(result) => {
                        let paths = path_stats(&result, g, None, None)?;
                        Ok(CellOutcome::Done(run_stats(&result, &paths, tree)))
                    }
                    Err(Error::Livelock { .. }) => Ok(CellOutcome::Livelock),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()
    })?;

    let mut rows = Vec::new();
    for (chunk, cell) in outcomes.chunks(seeds.len()).zip(cells.chunks(seeds.len())) {
        let (k, f, _) = cell[0];
        let done: Vec<&RunStats> = chunk
            .iter()
            .filter_map(|o| match o {
                CellOutcome::Done(s) => Some(s),
                CellOutcome::Livelock => None,
            })
            .collect();
        let mean = |g: &dyn Fn(&RunStats) -> f64| {
            if done.is_empty() {
                f64::NAN
            } else {
                done.iter().map(|s| g(s)).sum::<f64>() / done.len() as f64
            }
        };
        rows.push(SweepRow {
            k,
            f,
            gate_mode: template.protocol.gate_mode,
            completed: done.len(),
            livelocked: chunk.len() - done.len(),
            mean_messages: mean(&|s| s.mean_messages),
            mean_cost: mean(&|s| s.mean_cost),
            mean_hops: mean(&|s| s.mean_hops),
            mean_cost_ratio: mean(&|s| s.mean_cost_ratio),
            unreached: mean(&|s| s.unreached as f64),
            converged_at: mean(&|s| s.converged_at as f64),
            disconnected: (0..seeds.len()).any(|s| graphs[&(s % layouts.len(), k)].2),
        });
    }
    Ok(SweepTable { rows })
}

fn field(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn comments<W: Write>(out: &mut W, lines: &[&str]) -> Result<()> {
    for line in lines {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

/// `fig2_timeseries.csv`: `time,tx_count,moving_avg`.
pub fn write_timeseries<W: Write>(per_step_tx: &[u32], window: usize, mut out: W) -> Result<()> {
    let series: Vec<f64> = per_step_tx.iter().map(|&c| c as f64).collect();
    let smooth = moving_average(&series, window)?;
    comments(
        &mut out,
        &[
            "transmissions per step, summed over all nodes",
            &format!("moving_avg: trailing mean over {window} steps"),
        ],
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "tx_count", "moving_avg"])?;
    for (t, (c, m)) in per_step_tx.iter().zip(&smooth).enumerate() {
        w.write_record([t.to_string(), c.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Side-by-side histograms sharing the same edges: `bin_lo,bin_hi,<name>...`.
/// Underflow and overflow go in trailing comment lines.
pub fn write_histograms<W: Write>(
    series: &[(&str, &Histogram)],
    notes: &[&str],
    mut out: W,
) -> Result<()> {
    let edges = series
        .first()
        .map(|(_, h)| h.edges().to_vec())
        .ok_or_else(|| Error::Config("no histogram to write".into()))?;
    if series.iter().any(|(_, h)| h.edges() != edges.as_slice()) {
        return Err(Error::Config(
            "histograms written together must share edges".into(),
        ));
    }
    comments(&mut out, notes)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
        header.extend(series.iter().map(|(name, _)| name.to_string()));
        w.write_record(&header)?;
        for i in 0..edges.len() - 1 {
            let mut rec = vec![edges[i].to_string(), edges[i + 1].to_string()];
            rec.extend(series.iter().map(|(_, h)| h.counts()[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    for (name, h) in series {
        writeln!(
            out,
            "# {name}: underflow={} overflow={}",
            h.underflow, h.overflow
        )?;
    }
    Ok(())
}

/// `fig5_hops_hist.csv`: both hop interpretations per node count.
pub fn write_hops<W: Write>(series: &[(&str, &PathStats)], mut out: W) -> Result<()> {
    let max = series
        .iter()
        .flat_map(|(_, p)| p.per_node.iter().flatten().map(|e| e.hops))
        .max()
        .unwrap_or(0);
    comments(
        &mut out,
        &[
            "<name>_chain: nodes whose pointer chain to the sink has this many hops",
            "<name>_intermediate: nodes with this many relays strictly between node and sink",
            "unreached nodes are excluded",
        ],
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["hops".to_string()];
    for (name, _) in series {
        header.push(format!("{name}_chain"));
        header.push(format!("{name}_intermediate"));
    }
    w.write_record(&header)?;
    let counts: Vec<(Vec<u64>, Vec<u64>)> = series
        .iter()
        .map(|(_, p)| {
            let mut chain = vec![0u64; max + 1];
            let mut inter = vec![0u64; max + 1];
            for e in p.per_node.iter().flatten() {
                chain[e.hops] += 1;
                inter[e.intermediate()] += 1;
            }
            (chain, inter)
        })
        .collect();
    for h in 0..=max {
        let mut rec = vec![h.to_string()];
        for (chain, inter) in &counts {
            rec.push(chain[h].to_string());
            rec.push(inter[h].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-node path table: `id,estimate,route_cost,hops,intermediate`.
pub fn write_paths<W: Write>(paths: &PathStats, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "estimate", "route_cost", "hops", "intermediate"])?;
    for (i, e) in paths.per_node.iter().enumerate() {
        match e {
            Some(e) => w.write_record([
                i.to_string(),
                e.cost.to_string(),
                e.route_cost.to_string(),
                e.hops.to_string(),
                e.intermediate().to_string(),
            ])?,
            None => w.write_record([
                i.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// `fig6_sweep.csv`.
pub fn write_sweep<W: Write>(table: &SweepTable, mut out: W) -> Result<()> {
    comments(
        &mut out,
        &[
            "means over reached nodes, then over completed seeds; the sink counts as one sender",
            "mean_cost_ratio: final estimate / optimal cost on the same listening graph",
            "disconnected: some seed's graph leaves > 1% of nodes without a route to the sink",
            "livelocked: seeds aborted at the safety horizon (excluded from the means)",
        ],
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "f",
        "gate_mode",
        "mean_messages",
        "mean_cost",
        "mean_hops",
        "mean_cost_ratio",
        "unreached",
        "converged_at",
        "completed",
        "livelocked",
        "disconnected",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.k.to_string(),
            r.f.to_string(),
            r.gate_mode.to_string(),
            field(r.mean_messages),
            field(r.mean_cost),
            field(r.mean_hops),
            field(r.mean_cost_ratio),
            field(r.unreached),
            field(r.converged_at),
            r.completed.to_string(),
            r.livelocked.to_string(),
            r.disconnected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
