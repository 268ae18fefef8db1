//! The bundled demonstration: a strain-rate sweep of tensile MD runs whose
//! trajectories go through conversion and four analyses.
//!
//! ```text
//! rates ─(generator)─> md ─trajectory─> convert ─xyz─┬─> rdf
//!                       │                            ├─> debye
//!                       │                            └─> coord
//!                       └─stress─> stress
//! ```

use std::collections::{BTreeMap, BTreeSet};

use sciflow_core::bridge::{BackendDescriptor, GridParams, WaitDistribution};
use sciflow_core::model::{
    configure_workflow, BackendSelector, Graph, InputBinding, JobConfig, NodeSpec, PortKind, Template,
    WorkflowDefinition,
};

pub const DEFAULT_RATES: [&str; 3] = ["0.01", "0.02", "0.05"];

/// Nodes whose outputs are analysis results, with their output port.
pub const ANALYSES: [(&str, &str); 4] = [("rdf", "rdf"), ("debye", "debye"), ("stress", "curve"), ("coord", "coordination")];

pub const MD_CONFIG: &str = "\
cells = [4, 4, 4]
steps = 1200
sample_every = 100
temperature = 0.01
thermostat = true
target_temperature = 0.01
seed = 5
";

fn normal(name: &str, inputs: &[&str], outputs: &[&str]) -> NodeSpec {
    let n = inputs.iter().fold(NodeSpec::new(name), |n, p| n.input(*p, PortKind::Normal));
    outputs.iter().fold(n, |n, p| n.output(*p, PortKind::Normal))
}

fn on(tag: &str) -> BackendSelector {
    BackendSelector::tags([tag])
}

pub fn demo_workflow(rates: &[&str]) -> WorkflowDefinition {
    let graph = Graph::new("tensile_sweep")
        .with_node(NodeSpec::new("rates").output("rate", PortKind::Generator))
        .with_node(normal("md", &["config", "rate"], &["trajectory", "stress"]))
        .with_node(normal("convert", &["trajectory"], &["xyz"]))
        .with_node(normal("rdf", &["xyz"], &["rdf"]))
        .with_node(normal("debye", &["xyz"], &["debye"]))
        .with_node(normal("stress", &["stress"], &["curve"]))
        .with_node(normal("coord", &["xyz"], &["coordination"]))
        .connect("rates", "rate", "md", "rate")
        .connect("md", "trajectory", "convert", "trajectory")
        .connect("md", "stress", "stress", "stress")
        .connect("convert", "xyz", "rdf", "xyz")
        .connect("convert", "xyz", "debye", "xyz")
        .connect("convert", "xyz", "coord", "xyz");
    let configs = [
        JobConfig::tool("rates", "paramgen")
            .args(["--port".to_string(), "rate".into(), "--values".into(), rates.join(",")])
            .on(on("light"))
            .runtime_ms(100),
        JobConfig::tool("md", "ljmd")
            .args(["config", "--strain-rate-file", "rate", "--trajectory", "trajectory", "--stress", "stress"])
            .bind("config", InputBinding::File { name: "md.toml".into() })
            .on(on("md"))
            .runtime_ms(500),
        JobConfig::tool("convert", "convert")
            .args(["trajectory", "--to", "xyz", "--output", "xyz"])
            .on(on("light"))
            .runtime_ms(100),
        JobConfig::tool("rdf", "rdf")
            .args(["xyz", "--bins", "100", "--output", "rdf"])
            .on(on("analysis"))
            .runtime_ms(200),
        JobConfig::tool("debye", "debye")
            .args(["xyz", "--q-min", "0.5", "--q-max", "12", "--points", "120", "--output", "debye"])
            .on(on("analysis"))
            .runtime_ms(200),
        JobConfig::tool("stress", "stress")
            .args(["stress", "--min-peak", "1.0", "--output", "curve"])
            .on(on("analysis"))
            .runtime_ms(200),
        JobConfig::tool("coord", "coord")
            .args(["xyz", "--output", "coordination"])
            .on(on("analysis"))
            .runtime_ms(200),
    ]
    .into_iter()
    .map(|c| (c.node.clone(), c))
    .collect();
    let files = BTreeMap::from([("md.toml".to_string(), MD_CONFIG.as_bytes().to_vec())]);
    configure_workflow(graph, configs, files).expect("demo workflow is complete")
}

/// The demo with the strain-rate list left open.
pub fn demo_template() -> Template {
    let free = BTreeSet::from(["rates.arguments[3]".to_string()]);
    Template::new(demo_workflow(&DEFAULT_RATES), free)
        .and_then(|t| t.require(["rates.arguments[3]".to_string()]))
        .expect("demo template partition is valid")
}

/// Local, cluster and desktop-grid backends carrying the tags the demo
/// selects. `variant` changes seeds, capacities and adds a lying grid
/// worker, which must not change any result.
pub fn demo_backends(variant: u64) -> Vec<BackendDescriptor> {
    let local = BackendDescriptor::local("local", 2).with_tags(["light"]);
    let mut cluster = BackendDescriptor::cluster("cluster", 2 - (variant % 2) as u32, 11 + variant).with_tags(["md"]);
    cluster.queue_wait_ms = Some(WaitDistribution::Uniform { lo: 0, hi: 300 });
    let mut grid = BackendDescriptor::grid("grid", 4 + variant as u32 % 2, 7 + variant).with_tags(["analysis"]);
    grid.grid = Some(GridParams {
        corrupt_workers: if variant % 2 == 1 { BTreeSet::from([0]) } else { BTreeSet::new() },
        ..GridParams::default()
    });
    vec![local, cluster, grid]
}
