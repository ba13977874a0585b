use crate::graph::Edge;
use crate::sim::Direction;

/// Disjoint union of several corridor graphs, with global node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub graphs: usize,
    pub nodes: usize,
    pub node_graph: Vec<usize>,
    /// `(src, dst)` for every edge, in feature-row order.
    pub edges: Vec<(usize, usize)>,
    pub edge_graph: Vec<usize>,
    pub edge_direction: Vec<Direction>,
    /// Positions in `edges` of segment (non-entry) edges.
    pub segments: Vec<usize>,
}

impl GraphBatch {
    /// `parts` holds the node count and edge list of each graph.
    pub fn new(parts: &[(usize, &[Edge])]) -> Self {
        let mut b = GraphBatch {
            graphs: parts.len(),
            nodes: 0,
            node_graph: Vec::new(),
            edges: Vec::new(),
            edge_graph: Vec::new(),
            edge_direction: Vec::new(),
            segments: Vec::new(),
        };
        for (g, (k, edges)) in parts.iter().enumerate() {
            let base = b.nodes;
            for e in edges.iter() {
                if !e.entry {
                    b.segments.push(b.edges.len());
                }
                b.edges.push((base + e.src, base + e.dst));
                b.edge_graph.push(g);
                b.edge_direction.push(e.direction);
            }
            b.node_graph.extend(std::iter::repeat_n(g, *k));
            b.nodes += k;
        }
        b
    }

    pub fn segment_edges(&self) -> Vec<(usize, usize)> {
        self.segments.iter().map(|&i| self.edges[i]).collect()
    }

    /// Edge positions travelling in `direction`.
    pub fn edges_in(&self, direction: Direction) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&i| self.edge_direction[i] == direction)
            .collect()
    }
}
