//! Exact shortest-path tree on a listening graph, used as ground truth.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use crate::topology::ListenGraph;
use crate::{NodeId, Result, RouteCost};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalTree {
    pub cost: Vec<RouteCost>,
    pub parent: Vec<Option<NodeId>>,
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: NodeId,
}

impl Eq for Frontier {}

// min-heap on (cost, node)
impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from the sink over reversed listen edges. A node `x` may relay to
/// `n` only when `n` is in `x`'s listen list; that hop costs `C(x, n)`.
/// Equal-cost parents resolve to the smaller id.
pub fn shortest_path_tree(graph: &ListenGraph) -> OptimalTree {
    let n = graph.len();
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    if n > 0 {
        cost[graph.sink()] = 0.0;
        heap.push(Frontier {
            cost: 0.0,
            node: graph.sink(),
        });
    }
    while let Some(Frontier { cost: c, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for link in graph.listeners(node) {
            let x = link.node;
            if done[x] {
                continue;
            }
            let candidate = link.cost + c;
            let better = candidate < cost[x]
                || (candidate == cost[x] && parent[x].is_some_and(|p| node < p));
            if better {
                cost[x] = candidate;
                parent[x] = Some(node);
                heap.push(Frontier {
                    cost: candidate,
                    node: x,
                });
            }
        }
    }
    OptimalTree {
        cost: cost
            .into_iter()
            .map(|c| {
                if c.is_finite() {
                    RouteCost::Finite(c)
                } else {
                    RouteCost::Unreached
                }
            })
            .collect(),
        parent,
    }
}

/// Checks a claimed tree edge by edge: no listen edge relaxes any cost, every
/// finite non-sink cost equals its parent edge plus the parent's cost, and the
/// sink sits at zero with no parent.
pub fn relaxation_check(graph: &ListenGraph, tree: &OptimalTree) -> bool {
    let n = graph.len();
    if tree.cost.len() != n || tree.parent.len() != n {
        return false;
    }
    if n == 0 {
        return true;
    }
    let sink = graph.sink();
    if tree.cost[sink] != RouteCost::Finite(0.0) || tree.parent[sink].is_some() {
        return false;
    }
    for x in 0..n {
        for link in graph.listens(x) {
            if let RouteCost::Finite(cn) = tree.cost[link.node] {
                if tree.cost[x] > RouteCost::Finite(link.cost + cn) {
                    return false;
                }
            }
        }
        if x == sink {
            continue;
        }
        match (tree.cost[x], tree.parent[x]) {
            (RouteCost::Unreached, None) => {}
            (RouteCost::Finite(c), Some(p)) => {
                let witnessed = graph.listen_cost(x, p).zip(tree.cost[p].finite());
                match witnessed {
                    Some((link, cp)) if link + cp == c => {}
                    _ => return false,
                }
            }
            _ => return false,
        }
    }
    true
}

/// Writes `id,cost,parent` with empty fields for unreachable / no parent.
pub fn write_tree<W: Write>(tree: &OptimalTree, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "cost", "parent"])?;
    for (i, (c, p)) in tree.cost.iter().zip(&tree.parent).enumerate() {
        w.write_record([
            i.to_string(),
            c.to_string(),
            p.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
