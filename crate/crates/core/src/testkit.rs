//! Deterministic in-process payloads and small workflows for exercising the
//! engine without external executables.
//!
//! Tools understood by [`toy_launcher`]:
//!
//! * `emit <port>...` writes one file per named port whose content is a
//!   digest of every input file plus the port name.
//! * `gen <port> <count>` writes `<port>_0 ..` and `<port>.manifest.json`.
//! * `flaky <port>...` behaves like `emit` except on the first attempt,
//!   where it exits with code 3.
//! * `fail` always exits with code 3.
//! * `skip` exits 0 without writing anything.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::bridge::{InProcessLauncher, LaunchSpec, Program};
use crate::hash::sha256_hex;
use crate::model::{configure_workflow, Graph, JobConfig, NodeSpec, PortKind, WorkflowDefinition};
use crate::sweep::{item_name, manifest_file_name, ManifestFile};

fn input_digest(sandbox: &Path) -> String {
    let mut names: Vec<String> = fs::read_dir(sandbox)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
                .filter_map(|e| e.file_name().to_str().map(str::to_string))
                .filter(|n| n != "stdout.txt" && n != "stderr.txt")
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    let mut acc = Vec::new();
    for n in names {
        acc.extend_from_slice(n.as_bytes());
        acc.push(0);
        acc.extend(fs::read(sandbox.join(&n)).unwrap_or_default());
        acc.push(0);
    }
    sha256_hex(&acc)
}

fn emit(spec: &LaunchSpec, out: &mut Vec<u8>) -> i32 {
    let digest = input_digest(&spec.sandbox);
    for port in &spec.args {
        let content = sha256_hex(format!("{digest}:{port}").as_bytes());
        if fs::write(spec.sandbox.join(port), content).is_err() {
            return 1;
        }
    }
    out.extend_from_slice(format!("emitted {}\n", spec.args.join(" ")).as_bytes());
    0
}

fn first_attempt(spec: &LaunchSpec) -> bool {
    spec.sandbox.file_name().is_some_and(|n| n == "a1")
}

/// Runs one toy tool against a sandbox.
pub fn run_toy(spec: &LaunchSpec, out: &mut Vec<u8>, err: &mut Vec<u8>) -> i32 {
    let Program::Tool(tool) = &spec.program else {
        err.extend_from_slice(b"toy launcher only runs tools\n");
        return 127;
    };
    match tool.as_str() {
        "emit" => emit(spec, out),
        "flaky" if first_attempt(spec) => {
            err.extend_from_slice(b"first attempt always fails\n");
            3
        }
        "flaky" => emit(spec, out),
        "gen" => {
            let (Some(port), Some(count)) = (spec.args.first(), spec.args.get(1).and_then(|c| c.parse::<u32>().ok()))
            else {
                err.extend_from_slice(b"usage: gen <port> <count>\n");
                return 2;
            };
            let digest = input_digest(&spec.sandbox);
            let items: Vec<String> = (0..count).map(|i| item_name(port, i)).collect();
            for (i, item) in items.iter().enumerate() {
                if fs::write(spec.sandbox.join(item), format!("{digest}:{i}")).is_err() {
                    return 1;
                }
            }
            let manifest = serde_json::to_vec(&ManifestFile { count, items }).expect("manifest serializes");
            if fs::write(spec.sandbox.join(manifest_file_name(port)), manifest).is_err() {
                return 1;
            }
            out.extend_from_slice(format!("generated {count}\n").as_bytes());
            0
        }
        "fail" => {
            err.extend_from_slice(b"failing on purpose\n");
            3
        }
        "skip" => 0,
        other => {
            err.extend_from_slice(format!("unknown tool {other}\n").as_bytes());
            127
        }
    }
}

pub fn toy_launcher() -> Arc<InProcessLauncher> {
    Arc::new(InProcessLauncher::new(run_toy))
}

/// Single-output `emit` node with the given inputs.
pub fn emit_node(name: &str, inputs: &[&str], outputs: &[&str]) -> NodeSpec {
    let n = inputs.iter().fold(NodeSpec::new(name), |n, p| n.input(*p, PortKind::Normal));
    outputs.iter().fold(n, |n, p| n.output(*p, PortKind::Normal))
}

/// Six nodes: `a` fans out to two branches, each with a `flaky` job, which
/// join again in `f`.
///
/// ```text
/// a ─> b(flaky) ─> d ─┐
/// └──> c ─> e(flaky) ─┴> f
/// ```
pub fn six_node_workflow() -> WorkflowDefinition {
    let graph = Graph::new("six")
        .with_node(emit_node("a", &[], &["out"]))
        .with_node(emit_node("b", &["inp"], &["out"]))
        .with_node(emit_node("c", &["inp"], &["out"]))
        .with_node(emit_node("d", &["inp"], &["out"]))
        .with_node(emit_node("e", &["inp"], &["out"]))
        .with_node(emit_node("f", &["left", "right"], &["out"]))
        .connect("a", "out", "b", "inp")
        .connect("a", "out", "c", "inp")
        .connect("b", "out", "d", "inp")
        .connect("c", "out", "e", "inp")
        .connect("d", "out", "f", "left")
        .connect("e", "out", "f", "right");
    let configs: BTreeMap<String, JobConfig> = [
        ("a", "emit"),
        ("b", "flaky"),
        ("c", "emit"),
        ("d", "emit"),
        ("e", "flaky"),
        ("f", "emit"),
    ]
    .into_iter()
    .map(|(n, tool)| (n.to_string(), JobConfig::tool(n, tool).args(["out"]).runtime_ms(50)))
    .collect();
    configure_workflow(graph, configs, BTreeMap::new()).expect("six-node workflow is complete")
}
