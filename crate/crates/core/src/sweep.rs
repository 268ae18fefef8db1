//! Parameter-sweep fan-out: turns generator outputs into grids of job
//! instances and describes how collector ports gather them back.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{NodeSpec, PortKind, PortSpec, SweepMode};

/// One sweep coordinate: an index per axis, in axis order.
pub type Coord = Vec<u32>;

pub const DEFAULT_MAX_SWEEP_DEPTH: u32 = 3;

/// File name of the `i`-th item produced on a generator port.
pub fn item_name(base: &str, i: u32) -> String {
    format!("{base}_{i}")
}

pub fn manifest_file_name(port: &str) -> String {
    format!("{port}.manifest.json")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SweepError {
    #[error("dot sweep over axes with different counts {0:?}")]
    DotCardinalityMismatch(Vec<u32>),
    #[error("no generator manifest for port {0}")]
    MissingManifest(String),
    #[error("generator for port {0} produced zero items")]
    ZeroCount(String),
    #[error("coordinate {0:?} is outside the plan")]
    CoordOutOfRange(Coord),
    #[error("port {0} is not a collector port")]
    NotACollectorPort(String),
    #[error("port {0} is not an input of the node")]
    UnknownPort(String),
    #[error("invalid generator manifest: {0}")]
    InvalidManifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub node: String,
    pub port: String,
    pub count: u32,
    pub item_names: Vec<String>,
}

/// On-disk form written beside the generated files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub count: u32,
    pub items: Vec<String>,
}

impl GeneratorManifest {
    pub fn new(node: impl Into<String>, port: impl Into<String>, count: u32) -> Self {
        let port = port.into();
        let item_names = (0..count).map(|i| item_name(&port, i)).collect();
        GeneratorManifest {
            node: node.into(),
            port,
            count,
            item_names,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.item_names.len() != self.count as usize {
            return Err(SweepError::InvalidManifest(format!(
                "{} names for count {}",
                self.item_names.len(),
                self.count
            )));
        }
        for (i, name) in self.item_names.iter().enumerate() {
            if *name != item_name(&self.port, i as u32) {
                return Err(SweepError::InvalidManifest(format!(
                    "item {i} is {name:?}, expected {:?}",
                    item_name(&self.port, i as u32)
                )));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> ManifestFile {
        ManifestFile {
            count: self.count,
            items: self.item_names.clone(),
        }
    }

    pub fn from_file(node: &str, port: &str, bytes: &[u8]) -> Result<Self, SweepError> {
        let file: ManifestFile =
            serde_json::from_slice(bytes).map_err(|e| SweepError::InvalidManifest(e.to_string()))?;
        let m = GeneratorManifest {
            node: node.to_string(),
            port: port.to_string(),
            count: file.count,
            item_names: file.items,
        };
        m.validate()?;
        Ok(m)
    }
}

/// A consumer input port fed by a sweep, with the manifest describing its
/// items once they are known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepFeed {
    pub port: String,
    pub manifest: Option<GeneratorManifest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub port: String,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub node: String,
    pub mode: SweepMode,
    pub axes: Vec<SweepAxis>,
    pub instance_coords: Vec<Coord>,
}

impl SweepPlan {
    pub fn len(&self) -> usize {
        self.instance_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_coords.is_empty()
    }

    pub fn contains(&self, coord: &[u32]) -> bool {
        match self.mode {
            SweepMode::Cross => {
                coord.len() == self.axes.len() && coord.iter().zip(&self.axes).all(|(&c, a)| c < a.count)
            }
            SweepMode::Dot => {
                coord.len() == self.axes.len()
                    && coord.windows(2).all(|w| w[0] == w[1])
                    && coord.first().map_or(true, |&c| c < self.axes[0].count)
            }
        }
    }
}

/// Enumerates the instance grid for `node`. Axes are ordered by input port
/// index and coordinates are produced in row-major order (last axis fastest).
pub fn plan_sweep(node: &NodeSpec, feeds: &[SweepFeed], mode: SweepMode) -> Result<SweepPlan, SweepError> {
    let mut indexed: Vec<(u32, SweepAxis)> = Vec::with_capacity(feeds.len());
    for feed in feeds {
        let port = node
            .input_port(&feed.port)
            .ok_or_else(|| SweepError::UnknownPort(feed.port.clone()))?;
        let manifest = feed
            .manifest
            .as_ref()
            .ok_or_else(|| SweepError::MissingManifest(feed.port.clone()))?;
        if manifest.count == 0 {
            return Err(SweepError::ZeroCount(feed.port.clone()));
        }
        indexed.push((
            port.index,
            SweepAxis {
                port: feed.port.clone(),
                count: manifest.count,
            },
        ));
    }
    indexed.sort_by_key(|(i, _)| *i);
    let axes: Vec<SweepAxis> = indexed.into_iter().map(|(_, a)| a).collect();

    let instance_coords = match mode {
        SweepMode::Cross => cross_product(&axes),
        SweepMode::Dot => {
            let counts: Vec<u32> = axes.iter().map(|a| a.count).collect();
            if counts.windows(2).any(|w| w[0] != w[1]) {
                return Err(SweepError::DotCardinalityMismatch(counts));
            }
            match counts.first() {
                None => vec![Vec::new()],
                Some(&n) => (0..n).map(|i| vec![i; axes.len()]).collect(),
            }
        }
    };
    Ok(SweepPlan {
        node: node.name.clone(),
        mode,
        axes,
        instance_coords,
    })
}

fn cross_product(axes: &[SweepAxis]) -> Vec<Coord> {
    let total: usize = axes.iter().map(|a| a.count as usize).product();
    let mut coords = Vec::with_capacity(total);
    let mut current = vec![0u32; axes.len()];
    for _ in 0..total {
        coords.push(current.clone());
        // odometer increment, last axis fastest
        for k in (0..axes.len()).rev() {
            current[k] += 1;
            if current[k] < axes[k].count {
                break;
            }
            current[k] = 0;
        }
    }
    coords
}

/// Concrete file names for one instance. `bindings` maps each input port to
/// its base file name; swept ports get the `_{i}` item suffix.
pub fn resolve_instance_inputs(
    plan: &SweepPlan,
    coord: &[u32],
    bindings: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, String>, SweepError> {
    if !plan.contains(coord) {
        return Err(SweepError::CoordOutOfRange(coord.to_vec()));
    }
    let mut resolved = bindings.clone();
    for (k, axis) in plan.axes.iter().enumerate() {
        let base = bindings.get(&axis.port).map_or(axis.port.as_str(), String::as_str);
        resolved.insert(axis.port.clone(), item_name(base, coord[k]));
    }
    Ok(resolved)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionSpec {
    pub expected: usize,
    pub ordering: Vec<Coord>,
}

/// How a collector port gathers the outputs of an upstream sweep.
pub fn plan_collection(consumer_port: &PortSpec, upstream: &SweepPlan) -> Result<CollectionSpec, SweepError> {
    if consumer_port.kind != PortKind::Collector {
        return Err(SweepError::NotACollectorPort(consumer_port.name.clone()));
    }
    Ok(CollectionSpec {
        expected: upstream.instance_coords.len(),
        ordering: upstream.instance_coords.clone(),
    })
}
