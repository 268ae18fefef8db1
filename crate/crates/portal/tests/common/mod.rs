#![allow(dead_code)]

pub mod conformance;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;

use sciflow_core::access::Role;
use sciflow_core::bridge::{BackendDescriptor, Launcher};
use sciflow_core::clock::{Clock, ManualClock};
use sciflow_core::model::{ArchiveItem, Template};
use sciflow_core::testkit::{six_node_workflow, toy_launcher};
use sciflow_portal::api::router;
use sciflow_portal::config::{AdminSeed, PortalConfig};
use sciflow_portal::Portal;

pub const TTL_S: u64 = 600;

pub fn config(dir: &Path) -> PortalConfig {
    PortalConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        store_dir: dir.join("store"),
        fsync: false,
        token_ttl_s: TTL_S,
        tick_interval_ms: 10,
        step_ms: 100,
        password_iterations: 1_000,
        admin: Some(AdminSeed {
            username: "root".into(),
            password: "rootpw".into(),
        }),
        backends: vec![BackendDescriptor::cluster("c1", 4, 1)],
        ..PortalConfig::default()
    }
}

pub fn open(config: PortalConfig, clock: Arc<dyn Clock>, launcher: Arc<dyn Launcher>) -> Arc<Portal> {
    let portal = Portal::open_with(config, clock, launcher).unwrap();
    for (name, role) in [("pat", Role::PowerUser), ("eve", Role::EndUser), ("erin", Role::EndUser)] {
        portal.accounts.create_user(name, &format!("{name}pw"), role, true).unwrap();
    }
    portal
}

/// A portal on a manual clock with toy payloads and four accounts:
/// `root` (admin), `pat` (power user), `eve` and `erin` (end users).
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub clock: Arc<ManualClock>,
    pub portal: Arc<Portal>,
    pub app: Router,
    pub tokens: BTreeMap<&'static str, String>,
}

pub const USERS: [&str; 4] = ["root", "pat", "eve", "erin"];

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(1_000));
        let portal = open(config(dir.path()), clock.clone(), toy_launcher());
        let app = router(portal.clone());
        let mut fx = Fixture {
            dir,
            clock,
            portal,
            app,
            tokens: BTreeMap::new(),
        };
        fx.login_all();
        fx
    }

    pub fn login_all(&mut self) {
        for u in USERS {
            let t = self.portal.accounts.authenticate(u, &format!("{u}pw")).unwrap();
            self.tokens.insert(u, t.token);
        }
    }

    pub fn token(&self, user: &str) -> Option<&str> {
        self.tokens.get(user).map(String::as_str)
    }

    pub async fn send(&self, method: &str, uri: &str, token: Option<&str>, body: Vec<u8>, json: bool) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        if json {
            req = req.header("content-type", "application/json");
        }
        let resp = self.app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, bytes.to_vec())
    }

    pub async fn json(&self, method: &str, uri: &str, user: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let token = user.and_then(|u| self.token(u)).map(str::to_string);
        let bytes = body.map(|b| b.to_string().into_bytes()).unwrap_or_default();
        let (status, out) = self.send(method, uri, token.as_deref(), bytes, true).await;
        (status, serde_json::from_slice(&out).unwrap_or(Value::Null))
    }

    /// Stores an item as `user` directly through the repository.
    pub fn put(&self, user: &str, item: &ArchiveItem, publish: bool) -> String {
        let role = self.portal.accounts.list_users().into_iter().find(|u| u.username == user).unwrap().role;
        let p = sciflow_core::access::Principal::new(user, role);
        let repo = self.portal.engine.repository();
        let meta = repo
            .put_item(&p, None, sciflow_core::model::export_archive(item), self.clock.now_ms())
            .unwrap();
        if publish {
            repo.publish(&p, &meta.id).unwrap();
        }
        meta.id
    }

    pub fn submit(&self, owner: &str) -> String {
        self.portal.engine.submit_workflow(six_node_workflow(), owner).unwrap()
    }
}

pub fn six_template() -> Template {
    let free = BTreeSet::from(["f.resources.est_runtime_ms".to_string()]);
    Template::new(six_node_workflow(), free).unwrap()
}

/// Asserts the error envelope shape and returns its code.
pub fn error_code(body: &Value) -> String {
    let e = &body["error"];
    assert!(e.is_object(), "no error envelope in {body}");
    assert!(e["message"].is_string(), "no message in {body}");
    assert!(e.get("details").is_some(), "no details in {body}");
    e["code"].as_str().unwrap().to_string()
}
