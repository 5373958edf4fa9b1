//! Node layouts, the transmission cost model and the k-nearest listening graph.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, NodeId, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Parameters of the link cost `(r/a)^gamma * exp(r/b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModelParams {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
}

impl Default for CostModelParams {
    fn default() -> Self {
        Self {
            a: 100.0,
            b: 100.0,
            gamma: 1.5,
        }
    }
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.a) || !ok(self.b) || !ok(self.gamma) {
            return Err(Error::Config(format!(
                "cost model needs a, b, gamma > 0 (got a={}, b={}, gamma={})",
                self.a, self.b, self.gamma
            )));
        }
        Ok(())
    }

    /// Cost of a single hop of length `r` metres.
    pub fn cost_at(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        (r / self.a).powf(self.gamma) * (r / self.b).exp()
    }
}

/// Uniformly scatters `n` nodes over `[0, side]^2`. Coordinates are drawn x
/// then y per node from a ChaCha8 stream seeded with `seed`.
pub fn place_nodes(n: usize, side: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = rng.gen_range(0.0..=side);
            let y = rng.gen_range(0.0..=side);
            Point::new(x, y)
        })
        .collect()
}

pub fn link_cost(p: &Point, q: &Point, params: &CostModelParams) -> f64 {
    params.cost_at(p.distance(q))
}

/// Index of the node closest to `target`; ties go to the smaller id.
pub fn nearest_node(positions: &[Point], target: Point) -> Option<NodeId> {
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| (p.distance(&target), i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
}

/// One entry of a listen list: a neighbour and the cost of the link to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub node: NodeId,
    pub cost: f64,
}

/// Directed "who hears whom" graph after range and k-nearest restriction.
///
/// `listens[x]` holds the neighbours `x` accepts advertisements from, sorted
/// by ascending cost (then id). `listeners[n]` is the reverse view: every `x`
/// whose listen list contains `n`, sorted by id, with the same link cost.
#[derive(Clone, Debug)]
pub struct ListenGraph {
    listens: Vec<Vec<Link>>,
    listeners: Vec<Vec<Link>>,
    sink: NodeId,
    k: usize,
}

impl ListenGraph {
    /// Assembles a graph from explicit listen lists. Lists are re-sorted by
    /// (cost, id); self-loops, duplicates and out-of-range ids are rejected.
    pub fn from_listen_lists(mut listens: Vec<Vec<Link>>, sink: NodeId) -> Result<Self> {
        let n = listens.len();
        if sink >= n {
            return Err(Error::Config(format!(
                "sink {sink} out of range for {n} nodes"
            )));
        }
        let mut k = 0;
        for (x, list) in listens.iter_mut().enumerate() {
            list.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.node.cmp(&b.node)));
            let mut seen = std::collections::HashSet::new();
            for link in list.iter() {
                if link.node == x || link.node >= n || !seen.insert(link.node) {
                    return Err(Error::Config(format!(
                        "bad listen entry {} for node {x}",
                        link.node
                    )));
                }
                if !(link.cost >= 0.0 && link.cost.is_finite()) {
                    return Err(Error::Config(format!(
                        "bad link cost {} at node {x}",
                        link.cost
                    )));
                }
            }
            k = k.max(list.len());
        }
        let mut listeners = vec![Vec::new(); n];
        for (x, list) in listens.iter().enumerate() {
            for link in list {
                listeners[link.node].push(Link {
                    node: x,
                    cost: link.cost,
                });
            }
        }
        Ok(Self {
            listens,
            listeners,
            sink,
            k: k.max(1),
        })
    }

    pub fn len(&self) -> usize {
        self.listens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.listens.is_empty()
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    /// Upper bound on listen list length the graph was built with.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn listens(&self, x: NodeId) -> &[Link] {
        &self.listens[x]
    }

    pub fn listeners(&self, n: NodeId) -> &[Link] {
        &self.listeners[n]
    }

    /// Cost of the link `x <- n` if `x` listens to `n`.
    pub fn listen_cost(&self, x: NodeId, n: NodeId) -> Option<f64> {
        self.listens[x].iter().find(|l| l.node == n).map(|l| l.cost)
    }

    /// Cheapest positive link cost in the graph.
    pub fn min_positive_cost(&self) -> Option<f64> {
        self.listens
            .iter()
            .flatten()
            .map(|l| l.cost)
            .filter(|&c| c > 0.0)
            .min_by(f64::total_cmp)
    }

    pub fn max_in_degree(&self) -> usize {
        self.listeners.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Uniform bucket grid with cell size equal to the query radius.
struct CellGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    min: Point,
    buckets: Vec<Vec<NodeId>>,
}

impl CellGrid {
    fn new(positions: &[Point], radius: f64) -> Self {
        let (mut min, mut max) = (Point::new(0.0, 0.0), Point::new(0.0, 0.0));
        if let Some(first) = positions.first() {
            min = *first;
            max = *first;
        }
        for p in positions {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        // cap the grid so degenerate radii cannot explode memory
        let span = (max.x - min.x).max(max.y - min.y);
        let cell = radius.max(span / 1024.0).max(f64::MIN_POSITIVE);
        let cols = ((max.x - min.x) / cell) as usize + 1;
        let rows = ((max.y - min.y) / cell) as usize + 1;
        let mut grid = Self {
            cell,
            cols,
            rows,
            min,
            buckets: vec![Vec::new(); cols * rows],
        };
        for (i, p) in positions.iter().enumerate() {
            let (c, r) = grid.cell_of(p);
            grid.buckets[r * cols + c].push(i);
        }
        grid
    }

    fn cell_of(&self, p: &Point) -> (usize, usize) {
        let c = (((p.x - self.min.x) / self.cell) as usize).min(self.cols - 1);
        let r = (((p.y - self.min.y) / self.cell) as usize).min(self.rows - 1);
        (c, r)
    }

    /// Every node other than `i` within `radius` of `positions[i]`, unordered.
    fn within(&self, positions: &[Point], i: NodeId, radius: f64, out: &mut Vec<(NodeId, f64)>) {
        out.clear();
        let p = &positions[i];
        let (c, r) = self.cell_of(p);
        let reach = (radius / self.cell).ceil() as usize;
        for row in r.saturating_sub(reach)..=(r + reach).min(self.rows - 1) {
            for col in c.saturating_sub(reach)..=(c + reach).min(self.cols - 1) {
                for &j in &self.buckets[row * self.cols + col] {
                    if j == i {
                        continue;
                    }
                    let d = p.distance(&positions[j]);
                    if d <= radius {
                        out.push((j, d));
                    }
                }
            }
        }
    }
}

fn check_range(range: f64) -> Result<()> {
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::Config(format!("range must be > 0 (got {range})")));
    }
    Ok(())
}

/// Builds the listening graph: every node keeps its `k` cheapest neighbours
/// within `range` (all of them when fewer are in range). Equal costs are
/// broken by the smaller node id.
pub fn build_listen_graph(
    positions: &[Point],
    range: f64,
    k: usize,
    params: &CostModelParams,
    sink: NodeId,
) -> Result<ListenGraph> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    check_range(range)?;
    params.validate()?;
    if sink >= positions.len() {
        return Err(Error::Config(format!(
            "sink {sink} out of range for {} nodes",
            positions.len()
        )));
    }
    let grid = CellGrid::new(positions, range);
    let mut scratch = Vec::new();
    let mut listens = Vec::with_capacity(positions.len());
    for i in 0..positions.len() {
        grid.within(positions, i, range, &mut scratch);
        let mut list: Vec<Link> = scratch
            .iter()
            .map(|&(j, d)| Link {
                node: j,
                cost: params.cost_at(d),
            })
            .collect();
        list.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.node.cmp(&b.node)));
        list.truncate(k);
        listens.push(list);
    }
    let mut graph = ListenGraph::from_listen_lists(listens, sink)?;
    graph.k = k;
    Ok(graph)
}

/// Nodes with a legal relay path to the sink (always includes the sink).
pub fn reachable_set(graph: &ListenGraph) -> Vec<bool> {
    let mut seen = vec![false; graph.len()];
    if graph.is_empty() {
        return seen;
    }
    let mut stack = vec![graph.sink()];
    seen[graph.sink()] = true;
    while let Some(n) = stack.pop() {
        for l in graph.listeners(n) {
            if !seen[l.node] {
                seen[l.node] = true;
                stack.push(l.node);
            }
        }
    }
    seen
}

/// In-range degree statistics, over all nodes and over interior nodes only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegreeStats {
    pub mean_all: f64,
    pub mean_interior: f64,
    pub interior_nodes: usize,
}

/// Mean number of in-range neighbours (no k restriction). Interior nodes are
/// those further than `range` from every border of `[0, side]^2`.
pub fn degree_stats(positions: &[Point], side: f64, range: f64) -> Result<DegreeStats> {
    check_range(range)?;
    let grid = CellGrid::new(positions, range);
    let mut scratch = Vec::new();
    let (mut total, mut interior_total, mut interior) = (0usize, 0usize, 0usize);
    for (i, p) in positions.iter().enumerate() {
        grid.within(positions, i, range, &mut scratch);
        total += scratch.len();
        if p.x > range && p.y > range && side - p.x > range && side - p.y > range {
            interior += 1;
            interior_total += scratch.len();
        }
    }
    let mean = |sum: usize, count: usize| {
        if count == 0 {
            0.0
        } else {
            sum as f64 / count as f64
        }
    };
    Ok(DegreeStats {
        mean_all: mean(total, positions.len()),
        mean_interior: mean(interior_total, interior),
        interior_nodes: interior,
    })
}

/// Pairs of distinct nodes sharing a position (zero-cost links).
pub fn coincident_pairs(positions: &[Point]) -> Vec<(NodeId, NodeId)> {
    let mut order: Vec<NodeId> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (positions[a], positions[b]);
        p.x.total_cmp(&q.x)
            .then(p.y.total_cmp(&q.y))
            .then(a.cmp(&b))
    });
    order
        .windows(2)
        .filter(|w| positions[w[0]] == positions[w[1]])
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
        .collect()
}

/// Writes a layout as `id,x,y` CSV.
pub fn write_layout<W: Write>(positions: &[Point], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "x", "y"])?;
    for (i, p) in positions.iter().enumerate() {
        w.write_record([i.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `id,x,y` layout. Ids must be exactly `0..n` in order.
pub fn read_layout<R: Read>(input: R) -> Result<Vec<Point>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "x", "y"] {
        return Err(Error::Parse(format!(
            "layout header must be id,x,y (got {headers:?})"
        )));
    }
    let mut points = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::Parse(format!("layout row {row}: missing field {i}")))
        };
        let id: usize = field(0)?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("layout row {row}: id: {e}")))?;
        if id != row {
            return Err(Error::Parse(format!(
                "layout row {row}: expected id {row}, got {id}"
            )));
        }
        let coord = |i: usize| -> Result<f64> {
            field(i)?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("layout row {row}: {e}")))
        };
        points.push(Point::new(coord(1)?, coord(2)?));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Vec<Point> {
        xs.iter().map(|&x| Point::new(x, 0.0)).collect()
    }

    fn ids(list: &[Link]) -> Vec<NodeId> {
        list.iter().map(|l| l.node).collect()
    }

    #[test]
    fn place_nodes_bounds_and_empty() {
        assert!(place_nodes(0, 4000.0, 3).is_empty());
        let one = place_nodes(1, 4000.0, 3);
        assert_eq!(one.len(), 1);
        assert!((0.0..=4000.0).contains(&one[0].x) && (0.0..=4000.0).contains(&one[0].y));
        let many = place_nodes(500, 10.0, 9);
        assert!(many
            .iter()
            .all(|p| (0.0..=10.0).contains(&p.x) && (0.0..=10.0).contains(&p.y)));
    }

    #[test]
    fn place_nodes_is_deterministic() {
        assert_eq!(place_nodes(100, 4000.0, 42), place_nodes(100, 4000.0, 42));
        assert_ne!(place_nodes(100, 4000.0, 42), place_nodes(100, 4000.0, 43));
    }

    #[test]
    fn link_cost_values() {
        let p = CostModelParams::default();
        let o = Point::new(0.0, 0.0);
        assert_eq!(link_cost(&o, &o, &p), 0.0);
        let c100 = link_cost(&o, &Point::new(100.0, 0.0), &p);
        assert!((c100 - std::f64::consts::E).abs() < 1e-12);
        // 3^1.5 * e^3, evaluated independently
        let c300 = link_cost(&o, &Point::new(0.0, 300.0), &p);
        assert!((c300 - 104.367_511_344_785_11).abs() < 1e-9, "{c300}");
    }

    #[test]
    fn collinear_listen_lists() {
        let pts = line(&[0.0, 100.0, 200.0]);
        let g = build_listen_graph(&pts, 150.0, 2, &CostModelParams::default(), 0).unwrap();
        assert_eq!(ids(g.listens(0)), vec![1]);
        assert_eq!(ids(g.listens(1)), vec![0, 2]);
        assert_eq!(ids(g.listens(2)), vec![1]);
        assert_eq!(ids(g.listeners(1)), vec![0, 2]);
    }

    #[test]
    fn equal_cost_tie_prefers_smaller_id() {
        // nodes 1 and 2 are both 50 m from node 0
        let pts = vec![
            Point::new(0.0, 0.0),
            Point::new(50.0, 0.0),
            Point::new(-50.0, 0.0),
        ];
        let g = build_listen_graph(&pts, 100.0, 1, &CostModelParams::default(), 0).unwrap();
        assert_eq!(ids(g.listens(0)), vec![1]);
        let pts = vec![
            Point::new(0.0, 0.0),
            Point::new(-50.0, 0.0),
            Point::new(50.0, 0.0),
        ];
        let g = build_listen_graph(&pts, 100.0, 1, &CostModelParams::default(), 0).unwrap();
        assert_eq!(ids(g.listens(0)), vec![1]);
    }

    #[test]
    fn large_k_keeps_every_in_range_neighbour() {
        let pts = place_nodes(150, 500.0, 1);
        let p = CostModelParams::default();
        let g = build_listen_graph(&pts, 120.0, 10_000, &p, 0).unwrap();
        for (i, a) in pts.iter().enumerate() {
            let expect = pts
                .iter()
                .enumerate()
                .filter(|&(j, b)| j != i && a.distance(b) <= 120.0)
                .count();
            assert_eq!(g.listens(i).len(), expect);
        }
    }

    #[test]
    fn k_zero_and_bad_sink_rejected() {
        let pts = line(&[0.0, 1.0]);
        let p = CostModelParams::default();
        assert!(matches!(
            build_listen_graph(&pts, 10.0, 0, &p, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_listen_graph(&pts, 10.0, 1, &p, 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_listen_graph(&pts, 0.0, 1, &p, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reachable_cases() {
        let p = CostModelParams::default();
        let g = build_listen_graph(&line(&[0.0]), 150.0, 2, &p, 0).unwrap();
        assert_eq!(reachable_set(&g), vec![true]);
        let g = build_listen_graph(&line(&[0.0, 100.0, 200.0]), 150.0, 2, &p, 0).unwrap();
        assert_eq!(reachable_set(&g), vec![true, true, true]);
        let g = build_listen_graph(&line(&[0.0, 100.0, 900.0]), 150.0, 2, &p, 0).unwrap();
        assert_eq!(reachable_set(&g), vec![true, true, false]);
    }

    #[test]
    fn coincident_nodes_are_flagged() {
        let pts = vec![
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
            Point::new(1.0, 1.0),
        ];
        assert_eq!(coincident_pairs(&pts), vec![(0, 2)]);
        let g = build_listen_graph(&pts, 5.0, 4, &CostModelParams::default(), 0).unwrap();
        assert_eq!(g.listens(2)[0], Link { node: 0, cost: 0.0 });
    }

    #[test]
    fn layout_csv_round_trip() {
        let pts = place_nodes(20, 4000.0, 5);
        let mut buf = Vec::new();
        write_layout(&pts, &mut buf).unwrap();
        assert!(buf.starts_with(b"id,x,y\n"));
        assert_eq!(read_layout(buf.as_slice()).unwrap(), pts);
        assert!(read_layout("id,x,y\n1,0,0\n".as_bytes()).is_err());
        assert!(read_layout("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn degree_stats_small() {
        let pts = line(&[500.0, 550.0, 600.0]);
        let pts: Vec<Point> = pts.into_iter().map(|p| Point::new(p.x, 500.0)).collect();
        let s = degree_stats(&pts, 1000.0, 60.0).unwrap();
        assert!((s.mean_all - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.interior_nodes, 3);
    }
}
