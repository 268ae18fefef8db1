//! Templates: workflows whose configuration is split into frozen paths and
//! free paths that end users may fill in.
//!
//! A config path names one leaf of a node configuration:
//!
//! | path                       | field                                |
//! |----------------------------|--------------------------------------|
//! | `n.executable`             | executable reference                 |
//! | `n.arguments[i]`           | i-th argument                        |
//! | `n.inputs.p`               | binding of input port `p`            |
//! | `n.backend`                | backend selector                     |
//! | `n.resources.cpus`         | requested cpus                       |
//! | `n.resources.wall_limit`   | wall limit in seconds                |
//! | `n.resources.est_runtime_ms` | nominal runtime                    |
//! | `n.sweep_mode`             | cross or dot                         |

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{ConfigError, JobConfig, WorkflowDefinition};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub base: WorkflowDefinition,
    pub frozen_fields: BTreeSet<String>,
    pub free_fields: BTreeSet<String>,
    /// Free fields that must be filled on instantiation.
    #[serde(default)]
    pub required_fields: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("field {0} is frozen")]
    FrozenFieldWrite(String),
    #[error("unknown config path {0}")]
    UnknownField(String),
    #[error("required fields not filled: {0:?}")]
    MissingRequiredFill(Vec<String>),
    #[error("value for {path} is not valid: {reason}")]
    InvalidFillValue { path: String, reason: String },
    #[error("frozen and free field sets overlap or do not cover the configuration: {0}")]
    InvalidPartition(String),
    #[error("instantiated workflow is incomplete: {0:?}")]
    Incomplete(Vec<ConfigError>),
}

/// Every config path present in a definition, sorted.
pub fn config_paths(def: &WorkflowDefinition) -> BTreeSet<String> {
    let mut paths = BTreeSet::new();
    for (node, cfg) in &def.configs {
        paths.insert(format!("{node}.executable"));
        for i in 0..cfg.arguments.len() {
            paths.insert(format!("{node}.arguments[{i}]"));
        }
        for port in cfg.input_bindings.keys() {
            paths.insert(format!("{node}.inputs.{port}"));
        }
        paths.insert(format!("{node}.backend"));
        paths.insert(format!("{node}.resources.cpus"));
        paths.insert(format!("{node}.resources.wall_limit"));
        paths.insert(format!("{node}.resources.est_runtime_ms"));
        paths.insert(format!("{node}.sweep_mode"));
    }
    paths
}

impl Template {
    /// Creates a template exposing `free` and freezing everything else.
    pub fn new(base: WorkflowDefinition, free: BTreeSet<String>) -> Result<Self, TemplateError> {
        let all = config_paths(&base);
        if let Some(unknown) = free.iter().find(|f| !all.contains(*f)) {
            return Err(TemplateError::UnknownField(unknown.clone()));
        }
        let frozen = all.difference(&free).cloned().collect();
        let t = Template {
            base,
            frozen_fields: frozen,
            free_fields: free,
            required_fields: BTreeSet::new(),
        };
        t.check_partition()?;
        Ok(t)
    }

    pub fn require(mut self, fields: impl IntoIterator<Item = String>) -> Result<Self, TemplateError> {
        for f in fields {
            if !self.free_fields.contains(&f) {
                return Err(TemplateError::UnknownField(f));
            }
            self.required_fields.insert(f);
        }
        Ok(self)
    }

    pub fn check_partition(&self) -> Result<(), TemplateError> {
        if let Some(both) = self.frozen_fields.intersection(&self.free_fields).next() {
            return Err(TemplateError::InvalidPartition(format!("{both} is both frozen and free")));
        }
        let all = config_paths(&self.base);
        let union: BTreeSet<String> = self.frozen_fields.union(&self.free_fields).cloned().collect();
        if union != all {
            let missing: Vec<_> = all.difference(&union).cloned().collect();
            return Err(TemplateError::InvalidPartition(format!("uncovered paths {missing:?}")));
        }
        Ok(())
    }
}

/// Applies `fills` to the free fields of `t`. Frozen fields stay identical to
/// the base definition.
pub fn instantiate_template(
    t: &Template,
    fills: &BTreeMap<String, Value>,
) -> Result<WorkflowDefinition, TemplateError> {
    for path in fills.keys() {
        if t.frozen_fields.contains(path) {
            return Err(TemplateError::FrozenFieldWrite(path.clone()));
        }
        if !t.free_fields.contains(path) {
            return Err(TemplateError::UnknownField(path.clone()));
        }
    }
    let missing: Vec<String> = t
        .required_fields
        .iter()
        .filter(|f| !fills.contains_key(*f))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(TemplateError::MissingRequiredFill(missing));
    }

    let mut def = t.base.clone();
    for (path, value) in fills {
        let (node, pointer) = parse_path(path).ok_or_else(|| TemplateError::UnknownField(path.clone()))?;
        let cfg = def
            .configs
            .get_mut(node)
            .ok_or_else(|| TemplateError::UnknownField(path.clone()))?;
        let value = normalize_fill(&pointer, value.clone());
        let mut json = serde_json::to_value(&*cfg).expect("job config serializes");
        let slot = json
            .pointer_mut(&pointer)
            .ok_or_else(|| TemplateError::UnknownField(path.clone()))?;
        *slot = value;
        *cfg = serde_json::from_value::<JobConfig>(json).map_err(|e| TemplateError::InvalidFillValue {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    def.check().map_err(TemplateError::Incomplete)?;
    Ok(def)
}

/// Maps `node.field...` to the node name and a JSON pointer into the
/// serialized `JobConfig`.
fn parse_path(path: &str) -> Option<(&str, String)> {
    let (node, rest) = path.split_once('.')?;
    let pointer = if rest == "executable" {
        "/executable_ref".to_string()
    } else if rest == "backend" {
        "/backend_binding".to_string()
    } else if rest == "sweep_mode" {
        "/sweep_mode".to_string()
    } else if let Some(field) = rest.strip_prefix("resources.") {
        match field {
            "cpus" | "wall_limit" | "est_runtime_ms" => format!("/resource_request/{field}"),
            _ => return None,
        }
    } else if let Some(port) = rest.strip_prefix("inputs.") {
        format!("/input_bindings/{port}")
    } else if let Some(index) = rest.strip_prefix("arguments[").and_then(|r| r.strip_suffix(']')) {
        let i: usize = index.parse().ok()?;
        format!("/arguments/{i}")
    } else {
        return None;
    };
    Some((node, pointer))
}

/// Plain strings filling an input binding are shorthand for a literal.
fn normalize_fill(pointer: &str, value: Value) -> Value {
    match value {
        Value::String(s) if pointer.starts_with("/input_bindings/") => {
            serde_json::json!({"type": "literal", "value": s})
        }
        other => other,
    }
}
