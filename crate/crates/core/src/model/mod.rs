//! The workflow concept hierarchy: graph, abstract workflow, template,
//! application and project, plus the archive format used to move them around.

pub mod archive;
pub mod config;
pub mod graph;
pub mod template;

pub use archive::{export_archive, import_archive, ArchiveError, ArchiveItem, ItemKind, Project};
pub use config::{
    configure_workflow, BackendSelector, ConfigError, ExecutableRef, InputBinding, JobConfig, Metadata,
    ResourceRequest, SweepMode, WorkflowDefinition,
};
pub use graph::{validate_graph, Edge, Endpoint, Graph, GraphError, NodeSpec, PortKind, PortSpec, ValidationReport};
pub use template::{config_paths, instantiate_template, Template, TemplateError};
