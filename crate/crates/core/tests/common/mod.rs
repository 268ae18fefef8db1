#![allow(dead_code)]

use std::sync::Arc;

use sciflow_core::bridge::{BackendDescriptor, Bridge, Launcher, WaitDistribution};
use sciflow_core::clock::ManualClock;
use sciflow_core::engine::{Engine, EngineConfig};
use sciflow_core::repository::Repository;
use sciflow_core::testkit::toy_launcher;
use tempfile::TempDir;

pub struct Harness {
    pub dir: TempDir,
    pub engine: Engine,
}

impl Harness {
    pub fn store(&self) -> std::path::PathBuf {
        self.dir.path().join("store")
    }
}

pub fn bridge_with(launcher: Arc<dyn Launcher>, backends: Vec<BackendDescriptor>) -> Arc<Bridge> {
    let bridge = Arc::new(Bridge::new(launcher));
    for b in backends {
        bridge.register_backend(b).unwrap();
    }
    bridge
}

pub fn cluster(id: &str, slots: u32, seed: u64, wait_hi: u64) -> BackendDescriptor {
    let mut d = BackendDescriptor::cluster(id, slots, seed);
    if wait_hi > 0 {
        d.queue_wait_ms = Some(WaitDistribution::Uniform { lo: 0, hi: wait_hi });
    }
    d
}

pub fn engine_on(dir: &TempDir, bridge: Arc<Bridge>, step_ms: u64) -> Engine {
    let repo = Arc::new(Repository::open(dir.path().join("store")).unwrap());
    let mut config = EngineConfig::new(dir.path().join("work"));
    config.step_ms = step_ms;
    Engine::new(bridge, repo, Arc::new(ManualClock::new(0)), config)
}

/// Toy payloads on one roomy cluster simulator.
pub fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let bridge = bridge_with(toy_launcher(), vec![cluster("c1", 8, 1, 0)]);
    let engine = engine_on(&dir, bridge, 100);
    Harness { dir, engine }
}
