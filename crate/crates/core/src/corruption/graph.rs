//! Dependency graphs over clean attributes, corrupted counterparts, noise
//! variables and the selection node, and stacked multi-mechanism processes
//! applied in topological order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::dcp::{finish, CorruptedDataset, Dcp, Step};
use super::template::ErrorType;
use super::CorruptionError;
use crate::dataset::{Dataset, Schema};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "node", content = "name", rename_all = "snake_case")]
pub enum Node {
    Clean(String),
    Noise(String),
    Selection,
    Corrupted(String),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Clean(a) => f.write_str(a),
            Node::Corrupted(a) => write!(f, "{a}*"),
            Node::Noise(a) => write!(f, "N_{a}"),
            Node::Selection => f.write_str("S"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    edges: BTreeSet<(Node, Node)>,
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_edge(&mut self, from: Node, to: Node) {
        self.edges.insert((from, to));
    }

    pub fn edges(&self) -> impl Iterator<Item = &(Node, Node)> {
        self.edges.iter()
    }

    pub fn parents(&self, node: &Node) -> Vec<&Node> {
        self.edges
            .iter()
            .filter(|(_, to)| to == node)
            .map(|(from, _)| from)
            .collect()
    }

    pub fn nodes(&self) -> BTreeSet<&Node> {
        self.edges.iter().flat_map(|(a, b)| [a, b]).collect()
    }

    /// Kahn's algorithm; ties go to the smallest node in `Ord` order.
    pub fn topological_order(&self) -> Result<Vec<Node>, CorruptionError> {
        let mut indegree: BTreeMap<&Node, usize> = self.nodes().into_iter().map(|n| (n, 0)).collect();
        for (_, to) in &self.edges {
            *indegree.get_mut(to).expect("node") += 1;
        }
        let mut ready: BTreeSet<&Node> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.clone());
            for (from, to) in &self.edges {
                if from == n {
                    let d = indegree.get_mut(to).expect("node");
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(to);
                    }
                }
            }
        }
        if order.len() != indegree.len() {
            return Err(CorruptionError::Cycle);
        }
        Ok(order)
    }
}

fn output_node(error: &ErrorType, schema: &Schema) -> Node {
    match error {
        ErrorType::SelectionBias => Node::Selection,
        other => Node::Corrupted(other.output_node(schema)),
    }
}

/// Several single-target processes applied in the dependency order of
/// their corrupted outputs. Each pattern reads clean attribute values
/// unless an edge from that attribute's corrupted node is declared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionProcess {
    pub mechanisms: Vec<Dcp>,
    /// `(corrupted attribute, mechanism index)`: the mechanism's pattern
    /// reads the corrupted value of the attribute.
    #[serde(default)]
    pub corrupted_inputs: Vec<(String, usize)>,
}

impl CorruptionProcess {
    pub fn new(mechanisms: Vec<Dcp>) -> Self {
        Self {
            mechanisms,
            corrupted_inputs: Vec::new(),
        }
    }

    pub fn reading_corrupted(mut self, attribute: &str, mechanism: usize) -> Self {
        self.corrupted_inputs.push((attribute.to_string(), mechanism));
        self
    }

    /// Graph with clean parents, noise variables and corrupted-to-corrupted
    /// edges of every mechanism.
    pub fn graph(&self, schema: &Schema) -> DependencyGraph {
        let mut g = DependencyGraph::new();
        for (i, m) in self.mechanisms.iter().enumerate() {
            let out = output_node(m.error_type(), schema);
            let noise_name = match &out {
                Node::Corrupted(a) => a.clone(),
                _ => "S".to_string(),
            };
            g.add_edge(Node::Noise(noise_name), out.clone());
            for a in m.pattern.attributes() {
                let reads_corrupted = self
                    .corrupted_inputs
                    .iter()
                    .any(|(attr, j)| attr == a && *j == i);
                let parent = if reads_corrupted {
                    if a == "S" {
                        Node::Selection
                    } else {
                        Node::Corrupted(a.to_string())
                    }
                } else {
                    Node::Clean(a.to_string())
                };
                g.add_edge(parent, out.clone());
            }
        }
        g
    }

    /// Mechanism indices in topological order of their output nodes;
    /// mechanisms sharing an output keep declaration order.
    pub fn order(&self, schema: &Schema) -> Result<Vec<usize>, CorruptionError> {
        let topo = self.graph(schema).topological_order()?;
        let rank: BTreeMap<Node, usize> = topo.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        let mut idx: Vec<usize> = (0..self.mechanisms.len()).collect();
        idx.sort_by_key(|&i| (rank[&output_node(self.mechanisms[i].error_type(), schema)], i));
        Ok(idx)
    }

    /// Applies every mechanism with shared per-(row, attribute) noise.
    /// Rows excluded by a selection step are not corrupted further.
    pub fn apply(&self, dataset: &Dataset, seed: u64) -> Result<CorruptedDataset, CorruptionError> {
        let schema = dataset.schema();
        let order = self.order(schema)?;
        let mut working = dataset.clone();
        let mut alive = vec![true; dataset.n_rows()];
        let mut cells = Vec::new();
        for i in order {
            let mut step = Step::prepare(&self.mechanisms[i], dataset)?;
            let corrupted_cols: Vec<usize> = self
                .corrupted_inputs
                .iter()
                .filter(|(_, j)| *j == i)
                .filter_map(|(a, _)| schema.index_of(a))
                .collect();
            step.read_corrupted(&corrupted_cols);
            step.run(dataset, &mut working, &mut alive, seed, &mut cells);
        }
        Ok(finish(working, &alive, cells))
    }
}
