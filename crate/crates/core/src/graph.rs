//! Undirected communication graphs.
//!
//! Nodes are dense indices `0..V`. Edges are stored canonically as
//! `(min, max)` in ascending order and every neighbor list is sorted, so all
//! per-neighbor loops in the engine visit nodes in the same order on every run.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node {0} out of range")]
    NodeOutOfRange(usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("cannot build a connected simple graph with {nodes} nodes and {edges} edges")]
    InfeasibleEdgeCount { nodes: usize, edges: usize },
    #[error("topology needs at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
    #[error("edge list line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("reading edge list: {0}")]
    Io(String),
}

/// Connected simple undirected graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from an edge list. Duplicate pairs and reversed
    /// duplicates collapse to one edge; self-loops are rejected.
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut canonical = BTreeSet::new();
        for &(i, j) in edges {
            for v in [i, j] {
                if v >= num_nodes {
                    return Err(GraphError::NodeOutOfRange(v));
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            canonical.insert((i.min(j), i.max(j)));
        }
        let edges: Vec<_> = canonical.into_iter().collect();
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let topo = Topology {
            num_nodes,
            edges,
            adjacency,
        };
        if !topo.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(topo)
    }

    /// Connected graph with exactly `num_edges` edges: a random spanning tree
    /// followed by extra edges sampled uniformly from the remaining pairs.
    pub fn random_connected(
        num_nodes: usize,
        num_edges: usize,
        seed: u64,
    ) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::NoNodes);
        }
        let max_edges = num_nodes * (num_nodes - 1) / 2;
        if num_edges + 1 < num_nodes || num_edges > max_edges {
            return Err(GraphError::InfeasibleEdgeCount {
                nodes: num_nodes,
                edges: num_edges,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..num_nodes).collect();
        order.shuffle(&mut rng);
        let mut chosen = BTreeSet::new();
        for pos in 1..num_nodes {
            let parent = order[rng.random_range(0..pos)];
            let child = order[pos];
            chosen.insert((parent.min(child), parent.max(child)));
        }
        let mut remaining: Vec<(usize, usize)> = (0..num_nodes)
            .flat_map(|i| (i + 1..num_nodes).map(move |j| (i, j)))
            .filter(|e| !chosen.contains(e))
            .collect();
        let extra = num_edges - chosen.len();
        let (picked, _) = remaining.partial_shuffle(&mut rng, extra);
        chosen.extend(picked.iter().copied());
        let edges: Vec<_> = chosen.into_iter().collect();
        Self::new(num_nodes, &edges)
    }

    pub fn ring(num_nodes: usize) -> Result<Self, GraphError> {
        if num_nodes < 3 {
            return Err(GraphError::TooFewNodes {
                min: 3,
                got: num_nodes,
            });
        }
        let edges: Vec<_> = (0..num_nodes).map(|i| (i, (i + 1) % num_nodes)).collect();
        Self::new(num_nodes, &edges)
    }

    pub fn complete(num_nodes: usize) -> Result<Self, GraphError> {
        if num_nodes < 2 {
            return Err(GraphError::TooFewNodes {
                min: 2,
                got: num_nodes,
            });
        }
        let edges: Vec<_> = (0..num_nodes)
            .flat_map(|i| (i + 1..num_nodes).map(move |j| (i, j)))
            .collect();
        Self::new(num_nodes, &edges)
    }

    /// Single isolated node; the decentralized iteration degenerates to a
    /// centralized proximal method.
    pub fn single() -> Self {
        Topology {
            num_nodes: 1,
            edges: Vec::new(),
            adjacency: vec![Vec::new()],
        }
    }

    /// Parses `i j` pairs, one per line. Blank lines and `#` comments are
    /// skipped. When `num_nodes` is `None` it is one past the largest index.
    pub fn from_edge_list(text: &str, num_nodes: Option<usize>) -> Result<Self, GraphError> {
        let edges = parse_edge_list(text)?;
        let inferred = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(1);
        Self::new(num_nodes.unwrap_or(inferred), &edges)
    }

    pub fn load_edge_list(path: &Path, num_nodes: Option<usize>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::from_edge_list(&text, num_nodes)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Position of `j` in the sorted neighbor list of `i`.
    pub fn neighbor_slot(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency[i].binary_search(&j).ok()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_nodes];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.num_nodes
    }

    /// Serializes back to the edge-list text format.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# {} nodes, {} edges\n", self.num_nodes, self.edges.len());
        for &(i, j) in &self.edges {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }
}

fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>, GraphError> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |reason: &str| GraphError::Parse {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let mut parts = line.split_whitespace();
        let i = parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| parse_err("expected two node indices"))?;
        let j = parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| parse_err("expected two node indices"))?;
        if parts.next().is_some() {
            return Err(parse_err("trailing tokens"));
        }
        edges.push((i, j));
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_well_formed(t: &Topology) {
        let degree_sum: usize = (0..t.num_nodes()).map(|i| t.degree(i)).sum();
        assert_eq!(degree_sum, 2 * t.num_edges());
        for i in 0..t.num_nodes() {
            let n = t.neighbors(i);
            assert!(n.windows(2).all(|w| w[0] < w[1]));
            for &j in n {
                assert_ne!(i, j);
                assert!(t.neighbors(j).contains(&i));
            }
        }
        assert!(t.is_connected());
    }

    #[test]
    fn ring_of_four_from_edges() {
        let t = Topology::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert!((0..4).all(|i| t.degree(i) == 2));
        assert_eq!(t.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
        assert_well_formed(&t);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(Topology::new(2, &[(0, 0)]), Err(GraphError::SelfLoop(0)));
        assert_eq!(Topology::new(3, &[(0, 1)]), Err(GraphError::Disconnected));
        assert_eq!(Topology::new(3, &[(0, 3)]), Err(GraphError::NodeOutOfRange(3)));
        assert_eq!(Topology::new(0, &[]), Err(GraphError::NoNodes));
    }

    #[test]
    fn duplicates_are_merged() {
        let t = Topology::new(2, &[(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(t.num_edges(), 1);
    }

    #[test]
    fn random_connected_sizes() {
        let t = Topology::random_connected(50, 250, 11).unwrap();
        assert_eq!((t.num_nodes(), t.num_edges()), (50, 250));
        assert_well_formed(&t);
        let tree = Topology::random_connected(5, 4, 3).unwrap();
        assert_eq!(tree.num_edges(), 4);
        assert_well_formed(&tree);
        assert_eq!(
            Topology::random_connected(4, 10, 0),
            Err(GraphError::InfeasibleEdgeCount { nodes: 4, edges: 10 })
        );
        assert!(Topology::random_connected(4, 2, 0).is_err());
    }

    #[test]
    fn standard_topologies() {
        assert_eq!(Topology::ring(50).unwrap().num_edges(), 50);
        assert_eq!(Topology::complete(4).unwrap().num_edges(), 6);
        assert_eq!(
            Topology::ring(2),
            Err(GraphError::TooFewNodes { min: 3, got: 2 })
        );
        assert!(Topology::complete(1).is_err());
        let single = Topology::single();
        assert!(single.is_connected());
        assert_eq!(single.degree(0), 0);
    }

    #[test]
    fn edge_list_text_format() {
        let text = "# ring\n0 1\n1 2 # trailing comment\n\n2 0\n";
        let t = Topology::from_edge_list(text, None).unwrap();
        assert_eq!(t.num_nodes(), 3);
        assert_eq!(t.num_edges(), 3);
        let again = Topology::from_edge_list(&t.to_edge_list(), None).unwrap();
        assert_eq!(again, t);
        assert!(matches!(
            Topology::from_edge_list("0 x\n", None),
            Err(GraphError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Topology::from_edge_list("0 1 2\n", None),
            Err(GraphError::Parse { .. })
        ));
    }

    #[test]
    fn neighbor_slot_lookup() {
        let t = Topology::complete(4).unwrap();
        assert_eq!(t.neighbor_slot(2, 3), Some(2));
        assert_eq!(t.neighbor_slot(2, 2), None);
    }

    proptest! {
        #[test]
        fn random_connected_is_reproducible_and_valid(
            v in 2usize..25, extra in 0usize..40, seed in any::<u64>()
        ) {
            let max = v * (v - 1) / 2;
            let e = (v - 1 + extra).min(max);
            let a = Topology::random_connected(v, e, seed).unwrap();
            let b = Topology::random_connected(v, e, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.num_edges(), e);
            assert_well_formed(&a);
        }
    }
}
