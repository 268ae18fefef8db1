//! Portable ZIP archives for every level of the workflow hierarchy.
//!
//! Layout:
//!
//! ```text
//! manifest.json   {"format": "sciflow-archive", "version": 1, "kind": ..., "name": ...}
//! graph.json
//! configs.json    (workflow, template, application)
//! metadata.json   (workflow, template, application)
//! template.json   (template: frozen/free/required field sets)
//! files/<name>    uploaded inputs and executables
//! applications/<name>.zip   (project: one nested archive per application)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read, Write};

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use super::config::{JobConfig, Metadata, WorkflowDefinition};
use super::graph::Graph;
use super::template::Template;

pub const ARCHIVE_FORMAT: &str = "sciflow-archive";
pub const ARCHIVE_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Graph,
    Workflow,
    Template,
    Application,
    Project,
}

impl ItemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemKind::Graph => "graph",
            ItemKind::Workflow => "workflow",
            ItemKind::Template => "template",
            ItemKind::Application => "application",
            ItemKind::Project => "project",
        }
    }
}

/// A named bundle of applications. Purely organizational.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub name: String,
    pub applications: BTreeMap<String, WorkflowDefinition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchiveItem {
    Graph(Graph),
    Workflow(WorkflowDefinition),
    Template(Template),
    Application(WorkflowDefinition),
    Project(Project),
}

impl ArchiveItem {
    pub fn kind(&self) -> ItemKind {
        match self {
            ArchiveItem::Graph(_) => ItemKind::Graph,
            ArchiveItem::Workflow(_) => ItemKind::Workflow,
            ArchiveItem::Template(_) => ItemKind::Template,
            ArchiveItem::Application(_) => ItemKind::Application,
            ArchiveItem::Project(_) => ItemKind::Project,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ArchiveItem::Graph(g) => &g.name,
            ArchiveItem::Workflow(d) | ArchiveItem::Application(d) => d.name(),
            ArchiveItem::Template(t) => t.base.name(),
            ArchiveItem::Project(p) => &p.name,
        }
    }

    /// The runnable definition, if this item can be submitted directly.
    pub fn definition(&self) -> Option<&WorkflowDefinition> {
        match self {
            ArchiveItem::Workflow(d) | ArchiveItem::Application(d) => Some(d),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(String),
    #[error("archive has no manifest.json")]
    ManifestMissing,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: serde_json::Value,
    kind: ItemKind,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TemplateFields {
    frozen_fields: BTreeSet<String>,
    free_fields: BTreeSet<String>,
    #[serde(default)]
    required_fields: BTreeSet<String>,
}

pub fn export_archive(item: &ArchiveItem) -> Vec<u8> {
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let manifest = Manifest {
        format: ARCHIVE_FORMAT.to_string(),
        version: ARCHIVE_VERSION.into(),
        kind: item.kind(),
        name: item.name().to_string(),
    };
    put_json(&mut zip, "manifest.json", &manifest);
    match item {
        ArchiveItem::Graph(g) => put_json(&mut zip, "graph.json", g),
        ArchiveItem::Workflow(d) | ArchiveItem::Application(d) => put_definition(&mut zip, d),
        ArchiveItem::Template(t) => {
            put_definition(&mut zip, &t.base);
            put_json(
                &mut zip,
                "template.json",
                &TemplateFields {
                    frozen_fields: t.frozen_fields.clone(),
                    free_fields: t.free_fields.clone(),
                    required_fields: t.required_fields.clone(),
                },
            );
        }
        ArchiveItem::Project(p) => {
            for (name, app) in &p.applications {
                let nested = export_archive(&ArchiveItem::Application(app.clone()));
                put_bytes(&mut zip, &format!("applications/{name}.zip"), &nested);
            }
        }
    }
    zip.finish().expect("in-memory zip finishes").into_inner()
}

pub fn import_archive(bytes: &[u8]) -> Result<ArchiveItem, ArchiveError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes)).map_err(|e| ArchiveError::CorruptArchive(e.to_string()))?;
    let manifest_bytes = match read_entry(&mut zip, "manifest.json")? {
        Some(b) => b,
        None => return Err(ArchiveError::ManifestMissing),
    };
    let manifest: Manifest = parse_json("manifest.json", &manifest_bytes)?;
    if manifest.format != ARCHIVE_FORMAT {
        return Err(ArchiveError::CorruptArchive(format!("unknown format {:?}", manifest.format)));
    }
    let version_ok = match &manifest.version {
        serde_json::Value::Number(n) => n.as_u64() == Some(ARCHIVE_VERSION),
        serde_json::Value::String(s) => s.parse::<u64>().ok() == Some(ARCHIVE_VERSION),
        _ => false,
    };
    if !version_ok {
        let v = match &manifest.version {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        return Err(ArchiveError::UnsupportedVersion(v));
    }

    let item = match manifest.kind {
        ItemKind::Graph => ArchiveItem::Graph(required_json(&mut zip, "graph.json")?),
        ItemKind::Workflow => ArchiveItem::Workflow(read_definition(&mut zip)?),
        ItemKind::Application => ArchiveItem::Application(read_definition(&mut zip)?),
        ItemKind::Template => {
            let base = read_definition(&mut zip)?;
            let fields: TemplateFields = required_json(&mut zip, "template.json")?;
            let t = Template {
                base,
                frozen_fields: fields.frozen_fields,
                free_fields: fields.free_fields,
                required_fields: fields.required_fields,
            };
            t.check_partition()
                .map_err(|e| ArchiveError::CorruptArchive(e.to_string()))?;
            ArchiveItem::Template(t)
        }
        ItemKind::Project => {
            let mut applications = BTreeMap::new();
            let names: Vec<String> = zip.file_names().map(str::to_string).collect();
            for entry in names {
                let Some(app) = entry.strip_prefix("applications/").and_then(|n| n.strip_suffix(".zip")) else {
                    continue;
                };
                let nested = read_entry(&mut zip, &entry)?.expect("listed entry exists");
                match import_archive(&nested)? {
                    ArchiveItem::Application(def) => {
                        applications.insert(app.to_string(), def);
                    }
                    other => {
                        return Err(ArchiveError::CorruptArchive(format!(
                            "project entry {entry} is a {}",
                            other.kind().as_str()
                        )))
                    }
                }
            }
            ArchiveItem::Project(Project {
                name: manifest.name.clone(),
                applications,
            })
        }
    };
    if item.name() != manifest.name {
        return Err(ArchiveError::CorruptArchive(format!(
            "manifest name {:?} does not match payload {:?}",
            manifest.name,
            item.name()
        )));
    }
    Ok(item)
}

fn options() -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
}

fn put_bytes(zip: &mut ZipWriter<Cursor<Vec<u8>>>, name: &str, bytes: &[u8]) {
    zip.start_file(name, options()).expect("in-memory zip entry");
    zip.write_all(bytes).expect("in-memory write");
}

fn put_json<T: Serialize>(zip: &mut ZipWriter<Cursor<Vec<u8>>>, name: &str, value: &T) {
    let bytes = serde_json::to_vec_pretty(value).expect("archive payload serializes");
    put_bytes(zip, name, &bytes);
}

fn put_definition(zip: &mut ZipWriter<Cursor<Vec<u8>>>, def: &WorkflowDefinition) {
    put_json(zip, "graph.json", &def.graph);
    put_json(zip, "configs.json", &def.configs);
    put_json(zip, "metadata.json", &def.metadata);
    for (name, bytes) in &def.files {
        put_bytes(zip, &format!("files/{name}"), bytes);
    }
}

fn read_entry(zip: &mut ZipArchive<Cursor<&[u8]>>, name: &str) -> Result<Option<Vec<u8>>, ArchiveError> {
    let mut file = match zip.by_name(name) {
        Ok(f) => f,
        Err(zip::result::ZipError::FileNotFound) => return Ok(None),
        Err(e) => return Err(ArchiveError::CorruptArchive(e.to_string())),
    };
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| ArchiveError::CorruptArchive(format!("{name}: {e}")))?;
    Ok(Some(buf))
}

fn parse_json<T: for<'de> Deserialize<'de>>(name: &str, bytes: &[u8]) -> Result<T, ArchiveError> {
    serde_json::from_slice(bytes).map_err(|e| ArchiveError::CorruptArchive(format!("{name}: {e}")))
}

fn required_json<T: for<'de> Deserialize<'de>>(
    zip: &mut ZipArchive<Cursor<&[u8]>>,
    name: &str,
) -> Result<T, ArchiveError> {
    let bytes = read_entry(zip, name)?.ok_or_else(|| ArchiveError::CorruptArchive(format!("{name} missing")))?;
    parse_json(name, &bytes)
}

fn read_definition(zip: &mut ZipArchive<Cursor<&[u8]>>) -> Result<WorkflowDefinition, ArchiveError> {
    let graph: Graph = required_json(zip, "graph.json")?;
    let configs: BTreeMap<String, JobConfig> = required_json(zip, "configs.json")?;
    let metadata: Metadata = match read_entry(zip, "metadata.json")? {
        Some(b) => parse_json("metadata.json", &b)?,
        None => Metadata::default(),
    };
    let mut files = BTreeMap::new();
    let names: Vec<String> = zip.file_names().map(str::to_string).collect();
    for entry in names {
        if let Some(name) = entry.strip_prefix("files/") {
            if name.is_empty() {
                continue;
            }
            let bytes = read_entry(zip, &entry)?.expect("listed entry exists");
            files.insert(name.to_string(), bytes);
        }
    }
    Ok(WorkflowDefinition {
        graph,
        configs,
        metadata,
        files,
    })
}
