use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ident::is_valid_ident;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PortKind {
    #[default]
    Normal,
    /// Output port producing `name_0 .. name_{n-1}`; fans its consumers out.
    Generator,
    /// Input port gathering every upstream sweep item into one invocation.
    Collector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub index: u32,
    #[serde(default)]
    pub kind: PortKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality_hint: Option<u32>,
}

impl PortSpec {
    pub fn new(name: impl Into<String>, index: u32) -> Self {
        PortSpec {
            name: name.into(),
            index,
            kind: PortKind::Normal,
            cardinality_hint: None,
        }
    }

    pub fn with_kind(mut self, kind: PortKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_hint(mut self, hint: u32) -> Self {
        self.cardinality_hint = Some(hint);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default)]
    pub input_ports: Vec<PortSpec>,
    #[serde(default)]
    pub output_ports: Vec<PortSpec>,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>) -> Self {
        NodeSpec {
            name: name.into(),
            input_ports: Vec::new(),
            output_ports: Vec::new(),
        }
    }

    /// Appends an input port with the next free index.
    pub fn input(mut self, name: impl Into<String>, kind: PortKind) -> Self {
        let index = self.input_ports.len() as u32;
        self.input_ports.push(PortSpec::new(name, index).with_kind(kind));
        self
    }

    /// Appends an output port with the next free index.
    pub fn output(mut self, name: impl Into<String>, kind: PortKind) -> Self {
        let index = self.output_ports.len() as u32;
        self.output_ports.push(PortSpec::new(name, index).with_kind(kind));
        self
    }

    pub fn input_port(&self, name: &str) -> Option<&PortSpec> {
        self.input_ports.iter().find(|p| p.name == name)
    }

    pub fn output_port(&self, name: &str) -> Option<&PortSpec> {
        self.output_ports.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub node: String,
    pub port: String,
}

impl Endpoint {
    pub fn new(node: impl Into<String>, port: impl Into<String>) -> Self {
        Endpoint {
            node: node.into(),
            port: port.into(),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: Endpoint,
    pub to: Endpoint,
}

impl Edge {
    pub fn new(from: Endpoint, to: Endpoint) -> Self {
        Edge { from, to }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

/// The bare DAG of executables and dataflows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub name: String,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

impl Graph {
    pub fn new(name: impl Into<String>) -> Self {
        Graph {
            name: name.into(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn with_node(mut self, node: NodeSpec) -> Self {
        self.nodes.push(node);
        self
    }

    /// Adds an edge `from_node.from_port -> to_node.to_port`.
    pub fn connect(mut self, from_node: &str, from_port: &str, to_node: &str, to_port: &str) -> Self {
        self.edges.push(Edge::new(
            Endpoint::new(from_node, from_port),
            Endpoint::new(to_node, to_port),
        ));
        self
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// The edge feeding the given input port, if any.
    pub fn incoming(&self, node: &str, port: &str) -> Option<&Edge> {
        self.edges
            .iter()
            .find(|e| e.to.node == node && e.to.port == port)
    }

    pub fn outgoing<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.from.node == node)
    }

    /// Names of the nodes feeding `node`, deduplicated and sorted.
    pub fn predecessors(&self, node: &str) -> BTreeSet<&str> {
        self.edges
            .iter()
            .filter(|e| e.to.node == node)
            .map(|e| e.from.node.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub topo_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum GraphError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("duplicate name {name:?} in {scope}")]
    DuplicateName { scope: String, name: String },
    #[error("edge {edge} references a missing node or port")]
    DanglingEdge { edge: String },
    #[error("input port {port} has {count} incoming edges")]
    MultipleInputEdges { port: String, count: usize },
    #[error("cycle detected: {}", cycle.join(" -> "))]
    CycleDetected { cycle: Vec<String> },
    #[error("invalid identifier {name:?}")]
    InvalidIdentifier { name: String },
    #[error("ports of {node} are not indexed contiguously from 0")]
    NonContiguousPorts { node: String },
    #[error("port {port} has kind {kind:?}, which is not allowed on that side")]
    MisplacedPortKind { port: String, kind: PortKind },
}

/// Checks every structural rule of a graph and returns a deterministic
/// topological order (ties broken by node name). All violations are
/// collected rather than stopping at the first one.
pub fn validate_graph(g: &Graph) -> Result<ValidationReport, Vec<GraphError>> {
    let mut errors = Vec::new();
    if g.nodes.is_empty() {
        return Err(vec![GraphError::EmptyGraph]);
    }

    let check_ident = |name: &str, errors: &mut Vec<GraphError>| {
        if !is_valid_ident(name) {
            errors.push(GraphError::InvalidIdentifier {
                name: name.to_string(),
            });
        }
    };
    check_ident(&g.name, &mut errors);

    let mut node_names = HashSet::new();
    for node in &g.nodes {
        check_ident(&node.name, &mut errors);
        if !node_names.insert(node.name.as_str()) {
            errors.push(GraphError::DuplicateName {
                scope: format!("graph {}", g.name),
                name: node.name.clone(),
            });
        }
        let mut port_names = HashSet::new();
        for (side, ports) in [("input", &node.input_ports), ("output", &node.output_ports)] {
            let mut indices: Vec<u32> = ports.iter().map(|p| p.index).collect();
            indices.sort_unstable();
            if indices.iter().enumerate().any(|(i, &ix)| ix != i as u32) {
                errors.push(GraphError::NonContiguousPorts {
                    node: node.name.clone(),
                });
            }
            for port in ports {
                check_ident(&port.name, &mut errors);
                if !port_names.insert(port.name.as_str()) {
                    errors.push(GraphError::DuplicateName {
                        scope: format!("node {}", node.name),
                        name: port.name.clone(),
                    });
                }
                let misplaced = match (side, port.kind) {
                    ("input", PortKind::Generator) | ("output", PortKind::Collector) => true,
                    _ => false,
                };
                if misplaced {
                    errors.push(GraphError::MisplacedPortKind {
                        port: format!("{}.{}", node.name, port.name),
                        kind: port.kind,
                    });
                }
            }
        }
    }

    let mut incoming_counts: BTreeMap<&Endpoint, usize> = BTreeMap::new();
    let mut adjacency: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for node in &g.nodes {
        adjacency.entry(node.name.as_str()).or_default();
    }
    for edge in &g.edges {
        let from_ok = g
            .node(&edge.from.node)
            .is_some_and(|n| n.output_port(&edge.from.port).is_some());
        let to_ok = g
            .node(&edge.to.node)
            .is_some_and(|n| n.input_port(&edge.to.port).is_some());
        if !from_ok || !to_ok {
            errors.push(GraphError::DanglingEdge {
                edge: edge.to_string(),
            });
            continue;
        }
        *incoming_counts.entry(&edge.to).or_default() += 1;
        adjacency
            .entry(edge.from.node.as_str())
            .or_default()
            .insert(edge.to.node.as_str());
    }
    for (port, count) in incoming_counts {
        if count > 1 {
            errors.push(GraphError::MultipleInputEdges {
                port: port.to_string(),
                count,
            });
        }
    }

    if let Some(cycle) = find_cycle(&adjacency) {
        errors.push(GraphError::CycleDetected { cycle });
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(ValidationReport {
        topo_order: topo_order(&adjacency),
    })
}

fn topo_order(adjacency: &BTreeMap<&str, BTreeSet<&str>>) -> Vec<String> {
    let mut indegree: BTreeMap<&str, usize> = adjacency.keys().map(|&k| (k, 0)).collect();
    for targets in adjacency.values() {
        for &t in targets {
            *indegree.get_mut(t).expect("edge target is a node") += 1;
        }
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .collect();
    let mut order = Vec::with_capacity(adjacency.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.to_string());
        for &t in &adjacency[next] {
            let d = indegree.get_mut(t).expect("edge target is a node");
            *d -= 1;
            if *d == 0 {
                ready.insert(t);
            }
        }
    }
    order
}

/// Depth-first search in name order; returns the first cycle found as a
/// closed path, e.g. `[A, B, C, A]`.
fn find_cycle(adjacency: &BTreeMap<&str, BTreeSet<&str>>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut marks: BTreeMap<&str, Mark> = adjacency.keys().map(|&k| (k, Mark::White)).collect();

    for &root in adjacency.keys() {
        if marks[root] != Mark::White {
            continue;
        }
        // explicit stack of (node, iterator position) to avoid recursion depth limits
        let mut path: Vec<&str> = vec![root];
        let mut cursors: Vec<std::collections::btree_set::Iter<'_, &str>> = vec![adjacency[root].iter()];
        marks.insert(root, Mark::Grey);
        while let Some(cursor) = cursors.last_mut() {
            match cursor.next() {
                Some(&next) => match marks[next] {
                    Mark::White => {
                        marks.insert(next, Mark::Grey);
                        path.push(next);
                        cursors.push(adjacency[next].iter());
                    }
                    Mark::Grey => {
                        let start = path.iter().position(|&n| n == next).expect("grey node on path");
                        let mut cycle: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                        cycle.push(next.to_string());
                        return Some(cycle);
                    }
                    Mark::Black => {}
                },
                None => {
                    let done = path.pop().expect("path tracks cursors");
                    marks.insert(done, Mark::Black);
                    cursors.pop();
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(names: &[&str]) -> Graph {
        let mut g = Graph::new("g");
        for n in names {
            g = g.with_node(NodeSpec::new(*n).input("i", PortKind::Normal).output("o", PortKind::Normal));
        }
        for w in names.windows(2) {
            g = g.connect(w[0], "o", w[1], "i");
        }
        g
    }

    #[test]
    fn empty_graph() {
        assert_eq!(validate_graph(&Graph::new("g")), Err(vec![GraphError::EmptyGraph]));
    }

    #[test]
    fn single_node() {
        let g = Graph::new("g").with_node(NodeSpec::new("md"));
        assert_eq!(validate_graph(&g).unwrap().topo_order, vec!["md"]);
    }

    #[test]
    fn three_cycle_is_reported_closed() {
        let g = chain(&["A", "B", "C"]).connect("C", "o", "A", "i");
        let errs = validate_graph(&g).unwrap_err();
        assert_eq!(
            errs,
            vec![GraphError::CycleDetected {
                cycle: vec!["A".into(), "B".into(), "C".into(), "A".into()]
            }]
        );
    }

    #[test]
    fn dotted_node_name_rejected() {
        let g = Graph::new("g").with_node(NodeSpec::new("pizza.py"));
        assert_eq!(
            validate_graph(&g).unwrap_err(),
            vec![GraphError::InvalidIdentifier { name: "pizza.py".into() }]
        );
    }

    #[test]
    fn collects_all_violations() {
        let g = Graph::new("bad-name")
            .with_node(NodeSpec::new("a").output("o", PortKind::Normal))
            .with_node(NodeSpec::new("a"))
            .with_node(NodeSpec::new("b").input("i", PortKind::Normal))
            .connect("a", "o", "b", "i")
            .connect("a", "o", "b", "i")
            .connect("a", "missing", "b", "i");
        let errs = validate_graph(&g).unwrap_err();
        assert!(errs.contains(&GraphError::InvalidIdentifier { name: "bad-name".into() }));
        assert!(errs.iter().any(|e| matches!(e, GraphError::DuplicateName { name, .. } if name == "a")));
        assert!(errs.iter().any(|e| matches!(e, GraphError::DanglingEdge { .. })));
        assert!(errs.iter().any(|e| matches!(e, GraphError::MultipleInputEdges { count: 2, .. })));
    }

    #[test]
    fn ties_broken_lexicographically() {
        let g = Graph::new("g")
            .with_node(NodeSpec::new("z").output("o", PortKind::Normal))
            .with_node(NodeSpec::new("m").input("i", PortKind::Normal))
            .with_node(NodeSpec::new("b"))
            .connect("z", "o", "m", "i");
        assert_eq!(validate_graph(&g).unwrap().topo_order, vec!["b", "z", "m"]);
    }

    #[test]
    fn port_kind_sides_enforced() {
        let g = Graph::new("g").with_node(
            NodeSpec::new("n")
                .input("i", PortKind::Generator)
                .output("o", PortKind::Collector),
        );
        let errs = validate_graph(&g).unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn non_contiguous_port_indices() {
        let mut node = NodeSpec::new("n");
        node.input_ports.push(PortSpec::new("a", 0));
        node.input_ports.push(PortSpec::new("b", 2));
        let g = Graph::new("g").with_node(node);
        assert_eq!(
            validate_graph(&g).unwrap_err(),
            vec![GraphError::NonContiguousPorts { node: "n".into() }]
        );
    }
}
