//! Turns graph nodes into job instances once enough is known about their
//! upstream fan-out.

use std::collections::BTreeMap;

use crate::instance::{job_id, InputPlan, JobState, PlannedJob, WorkflowInstance};
use crate::model::{Graph, InputBinding, PortKind, WorkflowDefinition};
use crate::sweep::{item_name, manifest_file_name, plan_sweep, GeneratorManifest, ManifestFile, SweepAxis, SweepFeed};

pub(crate) enum PlanOutcome {
    /// Upstream fan-out is not known yet.
    NotYet,
    Planned { axes: Vec<SweepAxis>, jobs: Vec<PlannedJob> },
    Failed(String),
}

/// One upstream artifact: producing job and artifact name.
type Source = (String, String);

fn is_generator(graph: &Graph, node: &str, port: &str) -> bool {
    graph
        .node(node)
        .and_then(|n| n.output_port(port))
        .is_some_and(|p| p.kind == PortKind::Generator)
}

pub(crate) fn plan_node(inst: &WorkflowInstance, node: &str) -> PlanOutcome {
    let def = &inst.definition;
    let graph = &def.graph;
    let Some(spec) = graph.node(node) else {
        return PlanOutcome::Failed(format!("unknown node {node}"));
    };
    let cfg = &def.configs[node];

    let mut fixed: Vec<InputPlan> = Vec::new();
    let mut fixed_deps: Vec<String> = Vec::new();
    let mut feeds: Vec<SweepFeed> = Vec::new();
    let mut axis_items: BTreeMap<String, Vec<Source>> = BTreeMap::new();

    for port in &spec.input_ports {
        let Some(edge) = graph.incoming(node, &port.name) else {
            match cfg.input_bindings.get(&port.name) {
                Some(InputBinding::File { name }) => fixed.push(InputPlan::DefinitionFile {
                    file: port.name.clone(),
                    name: name.clone(),
                }),
                Some(InputBinding::Literal { value }) => fixed.push(InputPlan::Literal {
                    file: port.name.clone(),
                    value: value.clone(),
                }),
                _ => return PlanOutcome::Failed(format!("input {node}.{} is unbound", port.name)),
            }
            continue;
        };
        let producer = &edge.from.node;
        let Some(producer_plan) = inst.plans.get(producer) else {
            return PlanOutcome::NotYet;
        };
        let producer_jobs: Vec<&str> = producer_plan.jobs.iter().map(String::as_str).collect();
        let generator = is_generator(graph, producer, &edge.from.port);
        let mut sources: Vec<Source> = Vec::new();
        if generator {
            for id in &producer_jobs {
                let job = &inst.jobs[*id];
                if job.state != JobState::Finished {
                    return PlanOutcome::NotYet;
                }
                let Some(m) = job.manifest(&edge.from.port) else {
                    return PlanOutcome::Failed(format!("{id} finished without a manifest for {}", edge.from.port));
                };
                sources.extend(m.item_names.iter().map(|n| (id.to_string(), n.clone())));
            }
        } else {
            sources.extend(producer_jobs.iter().map(|id| (id.to_string(), edge.from.port.clone())));
        }

        if port.kind == PortKind::Collector {
            let mut items = Vec::with_capacity(sources.len());
            for (k, (job, name)) in sources.iter().enumerate() {
                let file = item_name(&port.name, k as u32);
                fixed.push(InputPlan::Output {
                    file: file.clone(),
                    job: job.clone(),
                    name: name.clone(),
                });
                items.push(file);
            }
            let listing = ManifestFile {
                count: items.len() as u32,
                items,
            };
            fixed.push(InputPlan::Literal {
                file: manifest_file_name(&port.name),
                value: serde_json::to_string(&listing).expect("manifest serializes"),
            });
            fixed_deps.extend(producer_jobs.iter().map(|s| s.to_string()));
        } else if generator || sources.len() > 1 {
            feeds.push(SweepFeed {
                port: port.name.clone(),
                manifest: Some(GeneratorManifest::new(producer.clone(), edge.from.port.clone(), sources.len() as u32)),
            });
            axis_items.insert(port.name.clone(), sources);
        } else {
            let (job, name) = sources.into_iter().next().expect("producers always have a job");
            fixed.push(InputPlan::Output {
                file: port.name.clone(),
                job: job.clone(),
                name,
            });
            fixed_deps.push(job);
        }
    }

    let plan = match plan_sweep(spec, &feeds, cfg.sweep_mode) {
        Ok(p) => p,
        Err(e) => return PlanOutcome::Failed(e.to_string()),
    };
    fixed_deps.sort();
    fixed_deps.dedup();
    let jobs = plan
        .instance_coords
        .iter()
        .map(|coord| {
            let mut inputs = fixed.clone();
            let mut deps = fixed_deps.clone();
            for (k, axis) in plan.axes.iter().enumerate() {
                let (job, name) = &axis_items[&axis.port][coord[k] as usize];
                // sweep instances see their item under the plain port name
                inputs.push(InputPlan::Output {
                    file: axis.port.clone(),
                    job: job.clone(),
                    name: name.clone(),
                });
                deps.push(job.clone());
            }
            deps.sort();
            deps.dedup();
            inputs.sort_by(|a, b| a.file().cmp(b.file()));
            PlannedJob {
                id: job_id(&inst.id, node, coord),
                coord: coord.clone(),
                deps,
                inputs,
            }
        })
        .collect();
    PlanOutcome::Planned { axes: plan.axes, jobs }
}

/// Deepest nesting of generator fan-outs along any path.
pub(crate) fn sweep_depth(def: &WorkflowDefinition) -> BTreeMap<String, u32> {
    let graph = &def.graph;
    let order = crate::model::validate_graph(graph)
        .map(|r| r.topo_order)
        .unwrap_or_default();
    let mut depth: BTreeMap<String, u32> = BTreeMap::new();
    for node in order {
        let spec = graph.node(&node).expect("topo order lists graph nodes");
        let d = spec
            .input_ports
            .iter()
            .filter_map(|p| graph.incoming(&node, &p.name).map(|e| (p, e)))
            .map(|(p, e)| {
                let up = depth.get(&e.from.node).copied().unwrap_or(0);
                let fans_out = p.kind != PortKind::Collector && is_generator(graph, &e.from.node, &e.from.port);
                if fans_out {
                    up + 1
                } else if p.kind == PortKind::Collector {
                    up.saturating_sub(1)
                } else {
                    up
                }
            })
            .max()
            .unwrap_or(0);
        depth.insert(node, d);
    }
    depth
}
