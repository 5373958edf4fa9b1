//! Experiment driver behind the `sinkdir` binary.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 livelock
//! abort, 4 invariant breach.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::engine::{
    run_with_horizon, write_event_log, write_final_states, write_series, RunResult,
};
use crate::metrics::{
    message_histogram, path_stats, run_stats, sweep, write_histograms, write_hops, write_paths,
    write_sweep, write_timeseries, Histogram, Layout, PathStats, RunStats, SweepTable,
    SweepTemplate,
};
use crate::oracle::{relaxation_check, shortest_path_tree, write_tree, OptimalTree};
use crate::protocol::{GateMode, ProtocolConfig, Step, Variant};
use crate::topology::{
    build_listen_graph, coincident_pairs, degree_stats, nearest_node, place_nodes, reachable_set,
    read_layout, write_layout, DegreeStats, ListenGraph, Point,
};
use crate::{Error, Result, RouteCost};

pub const DEFAULT_F_GRID: &[f64] = &[1.0, 1.01, 1.02, 1.05, 1.1, 1.2, 1.3, 1.4, 1.5];
pub const DEFAULT_K_GRID: &[usize] = &[8, 12, 16, 32];

/// Horizon for literal-gate arbitration runs. Quiescent runs at paper scale
/// finish within ~10^4 steps, so anything still active here is livelocked.
pub const ARBITRATION_HORIZON: Step = 100_000;

/// Band for mean messages per node of the rapid method (f = 1.1, k = 8).
pub const RAPID_BAND: (f64, f64) = (2.0, 4.5);

/// Lower bound on estimate / optimum accepted as rounding noise.
pub const RATIO_FLOOR: f64 = 1.0 - 1e-12;

#[derive(Debug, Parser)]
#[command(
    name = "sinkdir",
    version,
    about = "Sink-direction tree formation simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One protocol run with full per-run outputs (default).
    Single,
    /// Grid over f and k on a shared layout per seed.
    Sweep(SweepArgs),
    /// All figure datasets plus a report against the reference numbers.
    Paperfigs,
    /// Check layout, connectivity and baseline-vs-oracle agreement.
    Validate,
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub f_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Run the grid under both gate modes and report which one lands the
    /// rapid method in the expected traffic band.
    #[arg(long)]
    pub compare_gate_modes: bool,
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub side: Option<f64>,
    #[arg(long, global = true)]
    pub range: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub f: Option<f64>,
    #[arg(long, global = true)]
    pub gate_mode: Option<String>,
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub b: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub delay_min: Option<u64>,
    #[arg(long, global = true)]
    pub delay_max: Option<u64>,
    #[arg(long, global = true)]
    pub sink_x: Option<f64>,
    #[arg(long, global = true)]
    pub sink_y: Option<f64>,
    #[arg(long, global = true)]
    pub v: Option<f64>,
    #[arg(long, global = true)]
    pub horizon: Option<u64>,
    #[arg(long, global = true)]
    pub layout: Option<PathBuf>,
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Output root (defaults to $SINKDIR_OUT, then `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

pub const OUT_ENV: &str = "SINKDIR_OUT";

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(root) = std::env::var_os(OUT_ENV) {
            cfg.out = PathBuf::from(root);
        }
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        macro_rules! take {
            ($($field:ident),+) => {$(
                if let Some(v) = &self.$field { cfg.$field = v.clone(); }
            )+};
        }
        take!(
            n, side, range, k, f, a, b, gamma, seed, delay_min, delay_max, sink_x, sink_y, horizon,
            window, out, workers
        );
        if let Some(v) = self.v {
            cfg.v = Some(v);
        }
        if let Some(p) = &self.layout {
            cfg.layout = Some(p.clone());
        }
        if let Some(m) = &self.gate_mode {
            cfg.gate_mode = m.replace('-', "_").parse()?;
        }
        if let Some(v) = &self.variant {
            cfg.variant = v.replace('-', "_").parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A layout with its listening graph and optimal tree.
pub struct Instance {
    pub positions: Vec<Point>,
    pub graph: ListenGraph,
    pub optimal: OptimalTree,
}

pub fn load_layout(cfg: &RunConfig, seed: u64) -> Result<Layout> {
    let positions = match &cfg.layout {
        Some(path) => read_layout(File::open(path)?)?,
        None => place_nodes(cfg.n, cfg.side, seed),
    };
    let sink = nearest_node(&positions, cfg.sink_point())
        .ok_or_else(|| Error::Config("layout has no nodes".into()))?;
    let pairs = coincident_pairs(&positions);
    if !pairs.is_empty() {
        eprintln!(
            "warning: {} coincident node pair(s), zero-cost links present",
            pairs.len()
        );
    }
    Ok(Layout { positions, sink })
}

pub fn prepare(cfg: &RunConfig, layout: Layout, k: usize) -> Result<Instance> {
    let graph = build_listen_graph(
        &layout.positions,
        cfg.range,
        k,
        &cfg.cost_params(),
        layout.sink,
    )?;
    let optimal = shortest_path_tree(&graph);
    Ok(Instance {
        positions: layout.positions,
        graph,
        optimal,
    })
}

pub struct Simulation {
    pub result: RunResult,
    pub paths: PathStats,
    pub stats: RunStats,
    pub protocol_time: Duration,
}

/// Runs the protocol and checks the run-level invariants.
pub fn simulate(
    instance: &Instance,
    protocol: &ProtocolConfig,
    seed: u64,
    horizon: Step,
) -> Result<Simulation> {
    let started = Instant::now();
    let result = run_with_horizon(&instance.graph, protocol, seed, horizon)?;
    let protocol_time = started.elapsed();
    let paths = path_stats(&result, &instance.graph, None, None)?;
    let stats = run_stats(&result, &paths, &instance.optimal);
    check_run(&result, &stats)?;
    Ok(Simulation {
        result,
        paths,
        stats,
        protocol_time,
    })
}

fn check_run(result: &RunResult, stats: &RunStats) -> Result<()> {
    if stats.min_cost_ratio < RATIO_FLOOR {
        return Err(Error::Invariant(format!(
            "final estimate below optimum (ratio {})",
            stats.min_cost_ratio
        )));
    }
    let sent: u64 = result
        .final_states
        .iter()
        .map(|s| s.messages_sent as u64)
        .sum();
    let stepped: u64 = result.per_step_tx.iter().map(|&c| c as u64).sum();
    if sent != result.total_messages || stepped != result.total_messages {
        return Err(Error::Invariant(format!(
            "message accounting: log {} / nodes {sent} / steps {stepped}",
            result.total_messages
        )));
    }
    if let Some(x) = (0..result.final_states.len())
        .find(|&x| result.final_states[x].messages_sent != result.gate_firings[x])
    {
        return Err(Error::Invariant(format!(
            "node {x}: messages sent != gate firings"
        )));
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (5 - x.abs().log10().floor() as i64).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn summary_line(stats: &RunStats) -> String {
    format!(
        "total_messages={} mean_messages_per_node={} mean_cost={} mean_hops={} converged_at={} reached={} unreached={}",
        stats.total_messages,
        sig6(stats.mean_messages),
        sig6(stats.mean_cost),
        sig6(stats.mean_hops),
        stats.converged_at,
        stats.reached,
        stats.unreached
    )
}

fn write_run_outputs(
    dir: &Path,
    cfg: &RunConfig,
    instance: &Instance,
    sim: &Simulation,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.dump())?;
    write_layout(&instance.positions, create(dir, "layout.csv")?)?;
    write_tree(&instance.optimal, create(dir, "oracle.csv")?)?;
    write_final_states(&sim.result.final_states, create(dir, "final_states.csv")?)?;
    write_event_log(&sim.result.tx_log, create(dir, "events.csv")?)?;
    write_series(&sim.result.per_step_tx, create(dir, "series.csv")?)?;
    write_paths(&sim.paths, create(dir, "paths.csv")?)?;
    write_timeseries(
        &sim.result.per_step_tx,
        cfg.window,
        create(dir, "fig2_timeseries.csv")?,
    )?;
    let hist = message_histogram(&sim.result, None)?;
    write_histograms(
        &[("nodes", &hist)],
        &["messages sent per node, every node including the sink and unreached nodes"],
        create(dir, "fig3_messages_hist.csv")?,
    )?;
    write_histograms(
        &[("nodes", &sim.paths.cost_hist)],
        &["final route-cost estimate per node; unreached nodes counted as overflow"],
        create(dir, "fig4_cost_hist.csv")?,
    )?;
    write_hops(&[("nodes", &sim.paths)], create(dir, "fig5_hops_hist.csv")?)?;
    let mut summary = summary_line(&sim.stats);
    summary.push('\n');
    if sim.result.setup_messages > 0 {
        let _ = writeln!(summary, "setup_messages={}", sim.result.setup_messages);
    }
    fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}

pub struct SingleOutcome {
    pub dir: PathBuf,
    pub stats: RunStats,
    pub protocol_time: Duration,
    pub total_time: Duration,
}

pub fn execute_single(cfg: &RunConfig) -> Result<SingleOutcome> {
    let started = Instant::now();
    let instance = prepare(cfg, load_layout(cfg, cfg.seed)?, cfg.k)?;
    let sim = simulate(&instance, &cfg.protocol(), cfg.seed, cfg.horizon)?;
    let dir = cfg.run_dir();
    write_run_outputs(&dir, cfg, &instance, &sim)?;
    Ok(SingleOutcome {
        dir,
        stats: sim.stats,
        protocol_time: sim.protocol_time,
        total_time: started.elapsed(),
    })
}

pub struct SweepOutcome {
    pub dir: PathBuf,
    pub tables: Vec<SweepTable>,
    pub arbitration: Option<String>,
}

fn sweep_template(cfg: &RunConfig, mode: GateMode) -> SweepTemplate {
    let horizon = match mode {
        GateMode::LiteralEq3 => cfg.horizon.min(ARBITRATION_HORIZON),
        GateMode::SignificantImprovement => cfg.horizon,
    };
    SweepTemplate {
        range: cfg.range,
        cost: cfg.cost_params(),
        protocol: ProtocolConfig {
            gate_mode: mode,
            ..cfg.protocol()
        },
        horizon,
        workers: cfg.workers,
    }
}

/// States, per gate mode, whether the rapid-method cell lands in the band.
pub fn gate_mode_arbitration(tables: &[SweepTable]) -> String {
    let mut s = String::from("# gate-mode arbitration: rapid method (f = 1.1, k = 8)\n");
    let _ = writeln!(
        s,
        "# expected band for mean messages per node: [{}, {}]",
        RAPID_BAND.0, RAPID_BAND.1
    );
    let mut matching = Vec::new();
    for table in tables {
        let Some(row) = table.row(8, 1.1) else {
            continue;
        };
        let verdict = if row.livelocked > 0 {
            format!(
                "livelock in {} of {} seeds",
                row.livelocked,
                row.livelocked + row.completed
            )
        } else if (RAPID_BAND.0..=RAPID_BAND.1).contains(&row.mean_messages) {
            matching.push(row.gate_mode);
            format!("mean {} inside band", sig6(row.mean_messages))
        } else {
            format!("mean {} outside band", sig6(row.mean_messages))
        };
        let _ = writeln!(s, "{}: {verdict}", row.gate_mode);
    }
    let _ = match matching.as_slice() {
        [] => writeln!(s, "result: no gate mode reproduces the band"),
        [one] => writeln!(s, "result: {one} reproduces the band"),
        many => writeln!(s, "result: {} modes reproduce the band", many.len()),
    };
    s
}

pub fn execute_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<SweepOutcome> {
    let f_list = args
        .f_list
        .clone()
        .unwrap_or_else(|| DEFAULT_F_GRID.to_vec());
    let k_list = args
        .k_list
        .clone()
        .unwrap_or_else(|| DEFAULT_K_GRID.to_vec());
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    if f_list.is_empty() || k_list.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if k_list.contains(&0) {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let layouts = seeds
        .iter()
        .map(|&s| load_layout(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let modes = if args.compare_gate_modes {
        vec![GateMode::SignificantImprovement, GateMode::LiteralEq3]
    } else {
        vec![cfg.gate_mode]
    };
    let dir = cfg.out.join(format!("sweep-{}", cfg.hash()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.dump())?;
    let mut tables = Vec::new();
    for &mode in &modes {
        let table = sweep(
            &layouts,
            &f_list,
            &k_list,
            &sweep_template(cfg, mode),
            &seeds,
        )?;
        let name = if args.compare_gate_modes {
            format!("fig6_sweep_{mode}.csv")
        } else {
            "fig6_sweep.csv".to_string()
        };
        write_sweep(&table, create(&dir, &name)?)?;
        tables.push(table);
    }
    let arbitration = args
        .compare_gate_modes
        .then(|| gate_mode_arbitration(&tables));
    if let Some(text) = &arbitration {
        fs::write(dir.join("gate_mode_arbitration.txt"), text)?;
    }
    Ok(SweepOutcome {
        dir,
        tables,
        arbitration,
    })
}

pub struct PaperFigsOutcome {
    pub dir: PathBuf,
    pub report: String,
}

struct NamedRun {
    name: &'static str,
    label: &'static str,
    k: Option<usize>,
    protocol: ProtocolConfig,
}

pub fn execute_paperfigs(cfg: &RunConfig) -> Result<PaperFigsOutcome> {
    let dir = cfg.out.join(format!("paperfigs-{}", cfg.hash()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.dump())?;
    let mut report = String::from("# Reproduction report\n\n");
    let _ = writeln!(
        report,
        "n = {}, side = {} m, range = {} m, seed = {}, delays {}..{} steps\n",
        cfg.n, cfg.side, cfg.range, cfg.seed, cfg.delay_min, cfg.delay_max
    );

    let degree_seeds: Vec<u64> = (cfg.seed..cfg.seed + 5).collect();
    let degrees = degree_seeds
        .iter()
        .map(|&s| degree_stats(&load_layout(cfg, s)?.positions, cfg.side, cfg.range))
        .collect::<Result<Vec<DegreeStats>>>()?;
    let mean_interior = degrees.iter().map(|d| d.mean_interior).sum::<f64>() / degrees.len() as f64;
    let mean_all = degrees.iter().map(|d| d.mean_all).sum::<f64>() / degrees.len() as f64;
    let _ = writeln!(report, "## Degree\n");
    let _ = writeln!(
        report,
        "mean in-range degree over {} layouts: interior {} (reference ~70), all nodes {}\n",
        degrees.len(),
        sig6(mean_interior),
        sig6(mean_all)
    );

    let layout = load_layout(cfg, cfg.seed)?;
    let runs = [
        NamedRun {
            name: "rapid",
            label: "f = 1.1, k = 8",
            k: Some(8),
            protocol: ProtocolConfig {
                f: 1.1,
                ..cfg.protocol()
            },
        },
        NamedRun {
            name: "comprehensive",
            label: "f = 1, k = 32",
            k: Some(32),
            protocol: ProtocolConfig {
                f: 1.0,
                ..cfg.protocol()
            },
        },
        NamedRun {
            name: "unrestricted",
            label: "f = 1, every in-range neighbour",
            k: None,
            protocol: ProtocolConfig {
                f: 1.0,
                ..cfg.protocol()
            },
        },
        NamedRun {
            name: "neighbour_list",
            label: "neighbour-list suppression, f = 1, k = 8",
            k: Some(8),
            protocol: ProtocolConfig {
                variant: Variant::NeighbourList,
                f: 1.0,
                ..cfg.protocol()
            },
        },
    ];
    let _ = writeln!(report, "## Runs\n");
    let _ = writeln!(report, "| run | setting | mean msgs/node | msg mode | mean cost | mean hops | cost ratio | converged_at | protocol time |");
    let _ = writeln!(report, "|---|---|---|---|---|---|---|---|---|");
    let mut sims = Vec::new();
    for run in &runs {
        let k = run.k.unwrap_or(layout.positions.len().max(1));
        let instance = prepare(cfg, layout.clone(), k)?;
        let sim = simulate(&instance, &run.protocol, cfg.seed, cfg.horizon)?;
        let run_cfg = RunConfig {
            k,
            f: run.protocol.f,
            variant: run.protocol.variant,
            ..cfg.clone()
        };
        write_run_outputs(&dir.join(run.name), &run_cfg, &instance, &sim)?;
        let mode = message_histogram(&sim.result, None)?.mode().unwrap_or(0.0);
        let _ = writeln!(
            report,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {:.3} s |",
            run.name,
            run.label,
            sig6(sim.stats.mean_messages),
            mode,
            sig6(sim.stats.mean_cost),
            sig6(sim.stats.mean_hops),
            sig6(sim.stats.mean_cost_ratio),
            sim.stats.converged_at,
            sim.protocol_time.as_secs_f64()
        );
        sims.push(sim);
    }
    let (rapid, comprehensive) = (&sims[0], &sims[1]);

    let max_msgs = [rapid, comprehensive]
        .iter()
        .flat_map(|s| s.result.final_states.iter().map(|n| n.messages_sent as u64))
        .max()
        .unwrap_or(0);
    let msg_edges = Histogram::integer_bins(max_msgs).edges().to_vec();
    let h_rapid = message_histogram(&rapid.result, Some(msg_edges.clone()))?;
    let h_comp = message_histogram(&comprehensive.result, Some(msg_edges))?;
    write_histograms(
        &[("rapid", &h_rapid), ("comprehensive", &h_comp)],
        &["messages sent per node; rapid: f = 1.1, k = 8; comprehensive: f = 1, k = 32"],
        create(&dir, "fig3_messages_hist.csv")?,
    )?;
    let max_cost = [rapid, comprehensive]
        .iter()
        .flat_map(|s| s.paths.per_node.iter().flatten().map(|e| e.cost))
        .fold(0.0, f64::max);
    let cost_edges = Histogram::uniform_to(max_cost, 50).edges().to_vec();
    let c_rapid = path_stats(
        &rapid.result,
        &prepare(cfg, layout.clone(), 8)?.graph,
        Some(cost_edges.clone()),
        None,
    )?;
    let c_comp = path_stats(
        &comprehensive.result,
        &prepare(cfg, layout.clone(), 32)?.graph,
        Some(cost_edges),
        None,
    )?;
    write_histograms(
        &[
            ("rapid", &c_rapid.cost_hist),
            ("comprehensive", &c_comp.cost_hist),
        ],
        &["final route-cost estimate per node; unreached nodes counted as overflow"],
        create(&dir, "fig4_cost_hist.csv")?,
    )?;
    write_hops(
        &[
            ("rapid", &rapid.paths),
            ("comprehensive", &comprehensive.paths),
        ],
        create(&dir, "fig5_hops_hist.csv")?,
    )?;
    write_timeseries(
        &rapid.result.per_step_tx,
        cfg.window,
        create(&dir, "fig2_timeseries.csv")?,
    )?;

    let sweep_seeds: Vec<u64> = (cfg.seed..cfg.seed + 3).collect();
    let layouts = sweep_seeds
        .iter()
        .map(|&s| load_layout(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let sig_table = sweep(
        &layouts,
        DEFAULT_F_GRID,
        DEFAULT_K_GRID,
        &sweep_template(cfg, GateMode::SignificantImprovement),
        &sweep_seeds,
    )?;
    write_sweep(&sig_table, create(&dir, "fig6_sweep.csv")?)?;
    let lit_table = sweep(
        &layouts,
        &[1.0, 1.1],
        &[8],
        &sweep_template(cfg, GateMode::LiteralEq3),
        &sweep_seeds,
    )?;
    write_sweep(&lit_table, create(&dir, "fig6_sweep_literal_eq3.csv")?)?;
    let arbitration = gate_mode_arbitration(&[sig_table.clone(), lit_table]);
    fs::write(dir.join("gate_mode_arbitration.txt"), &arbitration)?;

    let cell = |k, f| sig_table.row(k, f).map_or(f64::NAN, |r| r.mean_messages);
    let _ = writeln!(report, "\n## Comparison with reference values\n");
    let _ = writeln!(report, "| quantity | reference | measured |");
    let _ = writeln!(report, "|---|---|---|");
    let _ = writeln!(
        report,
        "| interior mean degree, range 300 m | ~70 | {} |",
        sig6(mean_interior)
    );
    let _ = writeln!(
        report,
        "| rapid method msgs/node (f=1.1, k=8), seed {} | three to four | {} (mode {}) |",
        cfg.seed,
        sig6(rapid.stats.mean_messages),
        h_rapid.mode().unwrap_or(0.0)
    );
    let _ = writeln!(
        report,
        "| msgs/node, f=1.1, k=8, {} seeds | three to four | {} |",
        sweep_seeds.len(),
        sig6(cell(8, 1.1))
    );
    let _ = writeln!(
        report,
        "| msgs/node, f=1.0, k=32 | ~30 | {} |",
        sig6(cell(32, 1.0))
    );
    let _ = writeln!(
        report,
        "| msgs/node, f=1.2, k=8 | ~2 | {} |",
        sig6(cell(8, 1.2))
    );
    let _ = writeln!(
        report,
        "| mean cost ratio rapid vs comprehensive | rapid not cost optimal | {} vs {} |",
        sig6(rapid.stats.mean_cost_ratio),
        sig6(comprehensive.stats.mean_cost_ratio)
    );
    let _ = writeln!(
        report,
        "| mean hops rapid vs comprehensive | rapid fewer | {} vs {} |",
        sig6(rapid.stats.mean_hops),
        sig6(comprehensive.stats.mean_hops)
    );
    let _ = writeln!(
        report,
        "| rapid protocol phase | < 4 s | {:.3} s |",
        rapid.protocol_time.as_secs_f64()
    );
    let _ = writeln!(report, "\n## Gate mode\n\n```\n{arbitration}```");
    fs::write(dir.join("report.md"), &report)?;
    Ok(PaperFigsOutcome { dir, report })
}

pub struct ValidateOutcome {
    pub degree: DegreeStats,
    pub reachable: usize,
    pub nodes: usize,
    pub coincident: usize,
}

pub fn execute_validate(cfg: &RunConfig) -> Result<ValidateOutcome> {
    let layout = load_layout(cfg, cfg.seed)?;
    let coincident = coincident_pairs(&layout.positions).len();
    let degree = degree_stats(&layout.positions, cfg.side, cfg.range)?;
    let instance = prepare(cfg, layout, cfg.k)?;
    if !relaxation_check(&instance.graph, &instance.optimal) {
        return Err(Error::Invariant(
            "oracle tree fails the relaxation check".into(),
        ));
    }
    let reach = reachable_set(&instance.graph);
    for (x, &r) in reach.iter().enumerate() {
        if r != instance.optimal.cost[x].is_finite() {
            return Err(Error::Invariant(format!(
                "reachability disagrees at node {x}"
            )));
        }
    }
    let baseline = ProtocolConfig {
        variant: Variant::Baseline,
        ..cfg.protocol()
    };
    let sim = simulate(&instance, &baseline, cfg.seed, cfg.horizon)?;
    for (x, s) in sim.result.final_states.iter().enumerate() {
        let agree = match (s.estimate, instance.optimal.cost[x]) {
            (RouteCost::Finite(a), RouteCost::Finite(b)) => (a - b).abs() <= 1e-12 * b.max(1.0),
            (RouteCost::Unreached, RouteCost::Unreached) => true,
            _ => false,
        };
        if !agree {
            return Err(Error::Invariant(format!(
                "baseline estimate of node {x} differs from optimum"
            )));
        }
    }
    Ok(ValidateOutcome {
        degree,
        reachable: reach.iter().filter(|r| **r).count(),
        nodes: instance.graph.len(),
        coincident,
    })
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    if cli.overrides.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    match &cli.command {
        None | Some(Command::Single) => {
            let out = execute_single(&cfg)?;
            println!("{}", summary_line(&out.stats));
            eprintln!(
                "outputs in {} (protocol {:.3} s, total {:.3} s)",
                out.dir.display(),
                out.protocol_time.as_secs_f64(),
                out.total_time.as_secs_f64()
            );
        }
        Some(Command::Sweep(args)) => {
            let out = execute_sweep(&cfg, args)?;
            for table in &out.tables {
                for r in &table.rows {
                    println!(
                        "gate_mode={} k={} f={} mean_messages={} mean_cost={} mean_hops={} livelocked={}",
                        r.gate_mode,
                        r.k,
                        r.f,
                        sig6(r.mean_messages),
                        sig6(r.mean_cost),
                        sig6(r.mean_hops),
                        r.livelocked
                    );
                }
            }
            if let Some(text) = &out.arbitration {
                print!("{text}");
            }
            eprintln!("outputs in {}", out.dir.display());
        }
        Some(Command::Paperfigs) => {
            let out = execute_paperfigs(&cfg)?;
            print!("{}", out.report);
            eprintln!("outputs in {}", out.dir.display());
        }
        Some(Command::Validate) => {
            let v = execute_validate(&cfg)?;
            println!(
                "nodes={} reachable={} coincident_pairs={} mean_degree_all={} mean_degree_interior={} interior_nodes={} baseline=optimal",
                v.nodes,
                v.reachable,
                v.coincident,
                sig6(v.degree.mean_all),
                sig6(v.degree.mean_interior),
                v.degree.interior_nodes
            );
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formats() {
        assert_eq!(sig6(std::f64::consts::E), "2.71828");
        assert_eq!(sig6(104.36751), "104.368");
        assert_eq!(sig6(123456789.0), "123456789");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn flags_override_file_and_defaults() {
        let cli = Cli::try_parse_from([
            "sinkdir",
            "single",
            "--k",
            "32",
            "--gate-mode",
            "literal-eq3",
        ])
        .unwrap();
        let cfg = cli.overrides.resolve().unwrap();
        assert_eq!(cfg.k, 32);
        assert_eq!(cfg.gate_mode, GateMode::LiteralEq3);
        assert_eq!(cfg.n, 4000);
        let cli = Cli::try_parse_from(["sinkdir", "--k", "0"]).unwrap();
        assert!(matches!(cli.overrides.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn arbitration_text() {
        let row = |mode, mean, livelocked| crate::metrics::SweepRow {
            k: 8,
            f: 1.1,
            gate_mode: mode,
            completed: 3 - livelocked,
            livelocked,
            mean_messages: mean,
            mean_cost: 1.0,
            mean_hops: 1.0,
            mean_cost_ratio: 1.0,
            unreached: 0.0,
            converged_at: 1.0,
            disconnected: false,
        };
        let text = gate_mode_arbitration(&[
            SweepTable {
                rows: vec![row(GateMode::SignificantImprovement, 2.2, 0)],
            },
            SweepTable {
                rows: vec![row(GateMode::LiteralEq3, f64::NAN, 3)],
            },
        ]);
        assert!(text.contains("significant_improvement: mean 2.20000 inside band"));
        assert!(text.contains("literal_eq3: livelock in 3 of 3 seeds"));
        assert!(text.contains("result: significant_improvement reproduces the band"));
    }
}
