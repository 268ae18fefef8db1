use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::graph::{validate_graph, Graph, GraphError, NodeSpec, PortKind};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExecutableRef {
    /// A tool shipped with the gateway toolkit, resolved by the backend launcher.
    Tool { name: String },
    /// A file uploaded with the workflow (see `WorkflowDefinition::files`).
    File { name: String },
    /// A shell script carried inline in the configuration.
    Inline { script: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputBinding {
    /// Fed by the graph edge ending at this port.
    Edge,
    /// An uploaded file from `WorkflowDefinition::files`.
    File { name: String },
    /// A literal value written to the port file verbatim.
    Literal { value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSelector {
    Id(String),
    /// Matches backends carrying every listed tag. An empty set matches all.
    Tags(BTreeSet<String>),
}

impl Default for BackendSelector {
    fn default() -> Self {
        BackendSelector::Tags(BTreeSet::new())
    }
}

impl BackendSelector {
    pub fn tags<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BackendSelector::Tags(tags.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceRequest {
    pub cpus: u32,
    /// Wall-clock limit in seconds.
    pub wall_limit: u64,
    /// Nominal payload runtime used by the simulated backends, in milliseconds.
    #[serde(default = "default_runtime_ms")]
    pub est_runtime_ms: u64,
}

fn default_runtime_ms() -> u64 {
    1_000
}

impl Default for ResourceRequest {
    fn default() -> Self {
        ResourceRequest {
            cpus: 1,
            wall_limit: 3_600,
            est_runtime_ms: default_runtime_ms(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Cross,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobConfig {
    pub node: String,
    pub executable_ref: ExecutableRef,
    #[serde(default)]
    pub arguments: Vec<String>,
    #[serde(default)]
    pub input_bindings: BTreeMap<String, InputBinding>,
    #[serde(default)]
    pub backend_binding: BackendSelector,
    #[serde(default)]
    pub resource_request: ResourceRequest,
    #[serde(default)]
    pub sweep_mode: SweepMode,
}

impl JobConfig {
    pub fn new(node: impl Into<String>, executable_ref: ExecutableRef) -> Self {
        JobConfig {
            node: node.into(),
            executable_ref,
            arguments: Vec::new(),
            input_bindings: BTreeMap::new(),
            backend_binding: BackendSelector::default(),
            resource_request: ResourceRequest::default(),
            sweep_mode: SweepMode::Cross,
        }
    }

    pub fn tool(node: impl Into<String>, tool: impl Into<String>) -> Self {
        JobConfig::new(node, ExecutableRef::Tool { name: tool.into() })
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.arguments = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn bind(mut self, port: impl Into<String>, binding: InputBinding) -> Self {
        self.input_bindings.insert(port.into(), binding);
        self
    }

    pub fn on(mut self, selector: BackendSelector) -> Self {
        self.backend_binding = selector;
        self
    }

    pub fn mode(mut self, mode: SweepMode) -> Self {
        self.sweep_mode = mode;
        self
    }

    pub fn runtime_ms(mut self, ms: u64) -> Self {
        self.resource_request.est_runtime_ms = ms;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Metadata {
    #[serde(default)]
    pub owner: String,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub created_at: u64,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_version")]
    pub version: u32,
}

fn default_version() -> u32 {
    1
}

/// A fully configured, submittable workflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowDefinition {
    pub graph: Graph,
    pub configs: BTreeMap<String, JobConfig>,
    #[serde(default)]
    pub metadata: Metadata,
    #[serde(default, with = "b64_files", skip_serializing_if = "BTreeMap::is_empty")]
    pub files: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ConfigError {
    #[error("graph is invalid: {errors:?}")]
    InvalidGraph { errors: Vec<GraphError> },
    #[error("configuration for unknown node {node}")]
    UnknownNode { node: String },
    #[error("node {node} is not fully configured; missing {missing:?}")]
    UnconfiguredNode { node: String, missing: Vec<String> },
    #[error("dot sweep on {node} mixes cardinality hints {hints:?}")]
    SweepModeConflict { node: String, hints: Vec<u32> },
    #[error("port {node}.{port} is bound more than once")]
    ConflictingBinding { node: String, port: String },
    #[error("binding for unknown port {node}.{port}")]
    UnknownPort { node: String, port: String },
    #[error("node {node} references missing file {name:?}")]
    MissingFile { node: String, name: String },
}

/// Builds a workflow definition from a graph and per-node configurations,
/// rejecting it unless every node is fully configured.
pub fn configure_workflow(
    graph: Graph,
    configs: BTreeMap<String, JobConfig>,
    files: BTreeMap<String, Vec<u8>>,
) -> Result<WorkflowDefinition, Vec<ConfigError>> {
    let def = WorkflowDefinition {
        graph,
        configs,
        metadata: Metadata::default(),
        files,
    };
    def.check()?;
    Ok(def)
}

impl WorkflowDefinition {
    pub fn with_metadata(mut self, metadata: Metadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn name(&self) -> &str {
        &self.graph.name
    }

    /// Derived completeness flag; never stored.
    pub fn is_complete(&self) -> bool {
        self.check().is_ok()
    }

    pub fn check(&self) -> Result<(), Vec<ConfigError>> {
        if let Err(errors) = validate_graph(&self.graph) {
            return Err(vec![ConfigError::InvalidGraph { errors }]);
        }
        let mut errors = Vec::new();
        for name in self.configs.keys() {
            if self.graph.node(name).is_none() {
                errors.push(ConfigError::UnknownNode { node: name.clone() });
            }
        }
        for node in &self.graph.nodes {
            match self.configs.get(&node.name) {
                None => errors.push(ConfigError::UnconfiguredNode {
                    node: node.name.clone(),
                    missing: unconfigured_paths(&self.graph, node, None),
                }),
                Some(cfg) => self.check_node(node, cfg, &mut errors),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    fn check_node(&self, node: &NodeSpec, cfg: &JobConfig, errors: &mut Vec<ConfigError>) {
        if cfg.node != node.name {
            errors.push(ConfigError::UnknownNode { node: cfg.node.clone() });
        }
        for port in cfg.input_bindings.keys() {
            if node.input_port(port).is_none() {
                errors.push(ConfigError::UnknownPort {
                    node: node.name.clone(),
                    port: port.clone(),
                });
            }
        }
        for port in &node.input_ports {
            let edge = self.graph.incoming(&node.name, &port.name);
            match (edge, cfg.input_bindings.get(&port.name)) {
                (Some(_), Some(InputBinding::File { .. } | InputBinding::Literal { .. })) => {
                    errors.push(ConfigError::ConflictingBinding {
                        node: node.name.clone(),
                        port: port.name.clone(),
                    })
                }
                (None, Some(InputBinding::File { name })) if !self.files.contains_key(name) => {
                    errors.push(ConfigError::MissingFile {
                        node: node.name.clone(),
                        name: name.clone(),
                    })
                }
                _ => {}
            }
        }
        let missing = unconfigured_paths(&self.graph, node, Some(cfg));
        if !missing.is_empty() {
            errors.push(ConfigError::UnconfiguredNode {
                node: node.name.clone(),
                missing,
            });
        }
        if let ExecutableRef::File { name } = &cfg.executable_ref {
            if !self.files.contains_key(name) {
                errors.push(ConfigError::MissingFile {
                    node: node.name.clone(),
                    name: name.clone(),
                });
            }
        }
        if cfg.sweep_mode == SweepMode::Dot {
            let hints: BTreeSet<u32> = node
                .input_ports
                .iter()
                .filter(|p| p.kind != PortKind::Collector)
                .filter_map(|p| self.graph.incoming(&node.name, &p.name))
                .filter_map(|e| {
                    let producer = self.graph.node(&e.from.node)?.output_port(&e.from.port)?;
                    (producer.kind == PortKind::Generator)
                        .then_some(producer.cardinality_hint)
                        .flatten()
                })
                .collect();
            if hints.len() > 1 {
                errors.push(ConfigError::SweepModeConflict {
                    node: node.name.clone(),
                    hints: hints.into_iter().collect(),
                });
            }
        }
    }
}

fn unconfigured_paths(graph: &Graph, node: &NodeSpec, cfg: Option<&JobConfig>) -> Vec<String> {
    let mut missing = Vec::new();
    if cfg.is_none() {
        missing.push(format!("{}.executable", node.name));
    }
    for port in &node.input_ports {
        let bound = graph.incoming(&node.name, &port.name).is_some()
            || cfg.is_some_and(|c| {
                matches!(
                    c.input_bindings.get(&port.name),
                    Some(InputBinding::File { .. } | InputBinding::Literal { .. })
                )
            });
        if !bound {
            missing.push(format!("{}.inputs.{}", node.name, port.name));
        }
    }
    missing
}

mod b64_files {
    use std::collections::BTreeMap;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(files: &BTreeMap<String, Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        let encoded: BTreeMap<&str, String> =
            files.iter().map(|(k, v)| (k.as_str(), STANDARD.encode(v))).collect();
        encoded.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<u8>>, D::Error> {
        let encoded = BTreeMap::<String, String>::deserialize(d)?;
        encoded
            .into_iter()
            .map(|(k, v)| {
                STANDARD
                    .decode(v)
                    .map(|bytes| (k, bytes))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::{Graph, NodeSpec, PortKind, PortSpec};

    fn two_nodes() -> Graph {
        Graph::new("pair")
            .with_node(NodeSpec::new("a").output("o", PortKind::Normal))
            .with_node(NodeSpec::new("b").input("i", PortKind::Normal))
            .connect("a", "o", "b", "i")
    }

    #[test]
    fn complete_two_node_graph() {
        let configs = BTreeMap::from([
            ("a".to_string(), JobConfig::tool("a", "gen")),
            ("b".to_string(), JobConfig::tool("b", "use")),
        ]);
        let def = configure_workflow(two_nodes(), configs, BTreeMap::new()).unwrap();
        assert!(def.is_complete());
    }

    #[test]
    fn missing_config_is_reported() {
        let configs = BTreeMap::from([("a".to_string(), JobConfig::tool("a", "gen"))]);
        let errs = configure_workflow(two_nodes(), configs, BTreeMap::new()).unwrap_err();
        assert_eq!(
            errs,
            vec![ConfigError::UnconfiguredNode {
                node: "b".into(),
                missing: vec!["b.executable".into()]
            }]
        );
    }

    #[test]
    fn unbound_source_port_is_reported() {
        let g = Graph::new("g").with_node(NodeSpec::new("a").input("x", PortKind::Normal));
        let configs = BTreeMap::from([("a".to_string(), JobConfig::tool("a", "t"))]);
        let errs = configure_workflow(g, configs, BTreeMap::new()).unwrap_err();
        assert_eq!(
            errs,
            vec![ConfigError::UnconfiguredNode {
                node: "a".into(),
                missing: vec!["a.inputs.x".into()]
            }]
        );
    }

    #[test]
    fn dot_mode_with_mismatched_hints() {
        let mut g1 = NodeSpec::new("g1");
        g1.output_ports.push(PortSpec::new("o", 0).with_kind(PortKind::Generator).with_hint(3));
        let mut g2 = NodeSpec::new("g2");
        g2.output_ports.push(PortSpec::new("o", 0).with_kind(PortKind::Generator).with_hint(4));
        let g = Graph::new("g")
            .with_node(g1)
            .with_node(g2)
            .with_node(NodeSpec::new("c").input("x", PortKind::Normal).input("y", PortKind::Normal))
            .connect("g1", "o", "c", "x")
            .connect("g2", "o", "c", "y");
        let configs = BTreeMap::from([
            ("g1".to_string(), JobConfig::tool("g1", "t")),
            ("g2".to_string(), JobConfig::tool("g2", "t")),
            ("c".to_string(), JobConfig::tool("c", "t").mode(SweepMode::Dot)),
        ]);
        let errs = configure_workflow(g.clone(), configs.clone(), BTreeMap::new()).unwrap_err();
        assert_eq!(
            errs,
            vec![ConfigError::SweepModeConflict {
                node: "c".into(),
                hints: vec![3, 4]
            }]
        );
        let mut cross = configs;
        cross.get_mut("c").unwrap().sweep_mode = SweepMode::Cross;
        assert!(configure_workflow(g, cross, BTreeMap::new()).is_ok());
    }

    #[test]
    fn edge_port_cannot_also_take_a_literal() {
        let configs = BTreeMap::from([
            ("a".to_string(), JobConfig::tool("a", "gen")),
            (
                "b".to_string(),
                JobConfig::tool("b", "use").bind("i", InputBinding::Literal { value: "1".into() }),
            ),
        ]);
        let errs = configure_workflow(two_nodes(), configs, BTreeMap::new()).unwrap_err();
        assert!(matches!(errs[0], ConfigError::ConflictingBinding { .. }));
    }

    #[test]
    fn missing_uploaded_file() {
        let g = Graph::new("g").with_node(NodeSpec::new("a").input("x", PortKind::Normal));
        let cfg = JobConfig::new("a", ExecutableRef::File { name: "run_sh".into() })
            .bind("x", InputBinding::File { name: "data".into() });
        let configs = BTreeMap::from([("a".to_string(), cfg)]);
        let errs = configure_workflow(g.clone(), configs.clone(), BTreeMap::new()).unwrap_err();
        assert_eq!(errs.len(), 2);
        let files = BTreeMap::from([
            ("run_sh".to_string(), b"echo".to_vec()),
            ("data".to_string(), b"1".to_vec()),
        ]);
        assert!(configure_workflow(g, configs, files).is_ok());
    }

    #[test]
    fn files_serialize_as_base64() {
        let g = Graph::new("g").with_node(NodeSpec::new("a"));
        let configs = BTreeMap::from([("a".to_string(), JobConfig::tool("a", "t"))]);
        let files = BTreeMap::from([("blob".to_string(), vec![0u8, 159, 255])]);
        let def = configure_workflow(g, configs, files).unwrap();
        let json = serde_json::to_string(&def).unwrap();
        assert!(json.contains("AJ//"));
        let back: WorkflowDefinition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, def);
    }
}
