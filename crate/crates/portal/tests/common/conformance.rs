//! API conformance checks shared by the API tests and the acceptance run.
//! Each check panics on the first violation and returns how many requests
//! or states it verified.

use std::collections::BTreeMap;

use axum::http::StatusCode;
use proptest::prelude::*;
use serde_json::{json, Value};

use super::{error_code, six_template, Fixture};
use sciflow_core::bridge::BackendDescriptor;
use sciflow_core::instance::{EventKind, InstanceStatus, JobState, WorkflowInstance};
use sciflow_core::model::{export_archive, ArchiveItem, Graph, NodeSpec, PortKind};
use sciflow_core::testkit::six_node_workflow;
use sciflow_portal::api::InstanceView;


pub struct Ids {
    pub wpub: String,
    pub wpriv: String,
    pub tpl: String,
    pub ieve: String,
    pub ierin: String,
}

impl Ids {
    fn fill(&self, path: &str) -> String {
        path.replace("{wpub}", &self.wpub)
            .replace("{wpriv}", &self.wpriv)
            .replace("{tpl}", &self.tpl)
            .replace("{ieve}", &self.ieve)
            .replace("{ierin}", &self.ierin)
    }
}

/// pat owns a published and a private workflow, root a published template.
/// eve's instance has run to quiescence (its two flaky jobs failed); erin's
/// has not been ticked.
pub fn seeded() -> (Fixture, Ids) {
    let fx = Fixture::new();
    let wf = ArchiveItem::Workflow(six_node_workflow());
    let wpub = fx.put("pat", &wf, true);
    let wpriv = fx.put("pat", &wf, false);
    let tpl = fx.put("root", &ArchiveItem::Template(six_template()), true);
    let ieve = fx.submit("eve");
    fx.portal.engine.run_to_completion(&ieve, 200).unwrap();
    assert_eq!(fx.portal.engine.refresh_status(&ieve).unwrap(), InstanceStatus::Error);
    let ierin = fx.submit("erin");
    let ids = Ids {
        wpub,
        wpriv,
        tpl,
        ieve,
        ierin,
    };
    (fx, ids)
}

pub fn graph_item() -> Value {
    let g = Graph::new("g1").with_node(NodeSpec::new("n").output("o", PortKind::Normal));
    serde_json::to_value(ArchiveItem::Graph(g)).unwrap()
}

pub enum Body {
    Empty,
    Json(Value),
    Raw(Vec<u8>),
}

/// Every route for every kind of caller, with the exact status expected.
pub async fn request_matrix() -> usize {
    let (fx, ids) = seeded();
    let zip = export_archive(&ArchiveItem::Workflow(six_node_workflow()));
    let wf_json = serde_json::to_value(ArchiveItem::Workflow(six_node_workflow())).unwrap();
    let fill_ok = json!({"fills": {"f.resources.est_runtime_ms": 70}});
    let local2 = serde_json::to_value(BackendDescriptor::local("l2", 1)).unwrap();
    let dup = serde_json::to_value(BackendDescriptor::cluster("c1", 1, 0)).unwrap();
    let zero = serde_json::to_value(BackendDescriptor::cluster("c9", 0, 0)).unwrap();
    let ja = "{ieve}.a";
    let jb = "{ieve}.b";
    let garbage = || Body::Raw(b"{not json".to_vec());
    use Body::{Empty, Json, Raw};
    // Rows run in order; the ones that change state come after every row
    // that depends on the old state.
    let rows: Vec<(Option<&str>, &str, String, Body, u16)> = vec![
        (None, "POST", "/auth/login".into(), Json(json!({"username": "root", "password": "rootpw"})), 200),
        (None, "POST", "/auth/login".into(), Json(json!({"username": "root", "password": "nope"})), 401),
        (None, "POST", "/auth/login".into(), Json(json!({"username": "ghost", "password": "x"})), 401),
        (None, "POST", "/auth/login".into(), garbage(), 400),
        (None, "GET", "/auth/me".into(), Empty, 401),
        (Some("eve"), "GET", "/auth/me".into(), Empty, 200),
        // workflows
        (None, "GET", "/workflows".into(), Empty, 401),
        (Some("eve"), "GET", "/workflows".into(), Empty, 200),
        (Some("eve"), "GET", "/workflows?kind=template".into(), Empty, 200),
        (Some("eve"), "POST", "/workflows".into(), Json(json!({"item": graph_item()})), 403),
        (Some("eve"), "POST", "/workflows".into(), garbage(), 403),
        (Some("pat"), "POST", "/workflows".into(), garbage(), 400),
        (Some("pat"), "POST", "/workflows".into(), Json(json!({"item": graph_item()})), 201),
        (Some("pat"), "POST", "/workflows".into(), Json(json!({"item": wf_json.clone()})), 201),
        (Some("pat"), "POST", "/workflows".into(), Json(json!({"item": wf_json.clone(), "id": "{wpub}"})), 409),
        (Some("eve"), "POST", "/workflows/import".into(), Raw(zip.clone()), 403),
        (Some("pat"), "POST", "/workflows/import".into(), Raw(b"not a zip".to_vec()), 400),
        (Some("pat"), "POST", "/workflows/import".into(), Raw(zip.clone()), 201),
        (Some("pat"), "POST", "/workflows/import?id={wpriv}".into(), Raw(zip.clone()), 201),
        (Some("eve"), "GET", "/workflows/{wpub}".into(), Empty, 200),
        (Some("eve"), "GET", "/workflows/{wpriv}".into(), Empty, 403),
        (Some("erin"), "GET", "/workflows/nope".into(), Empty, 404),
        (Some("eve"), "POST", "/workflows/{wpub}/export".into(), Empty, 200),
        (Some("eve"), "POST", "/workflows/{wpriv}/export".into(), Empty, 403),
        (Some("root"), "POST", "/workflows/{wpriv}/export".into(), Empty, 200),
        (Some("pat"), "POST", "/workflows/nope/export".into(), Empty, 404),
        (Some("eve"), "POST", "/workflows/{wpriv}/publish".into(), Empty, 403),
        (Some("eve"), "POST", "/workflows/nope/publish".into(), Empty, 403),
        (Some("pat"), "POST", "/workflows/nope/publish".into(), Empty, 404),
        (Some("pat"), "POST", "/workflows/{tpl}/publish".into(), Empty, 403),
        // templates
        (None, "POST", "/templates/{tpl}/instantiate".into(), Json(fill_ok.clone()), 401),
        (Some("eve"), "POST", "/templates/{tpl}/instantiate".into(), Json(json!({"fills": {"f.resources.est_runtime_ms": 70}, "submit": false})), 200),
        (Some("eve"), "POST", "/templates/{tpl}/instantiate".into(), Json(json!({"fills": {"a.arguments[0]": "x"}})), 400),
        (Some("eve"), "POST", "/templates/{tpl}/instantiate".into(), garbage(), 400),
        (Some("eve"), "POST", "/templates/nope/instantiate".into(), Json(fill_ok.clone()), 404),
        (Some("eve"), "POST", "/templates/{wpub}/instantiate".into(), Json(fill_ok.clone()), 400),
        (Some("eve"), "POST", "/templates/{tpl}/instantiate".into(), Json(fill_ok.clone()), 201),
        // instances
        (None, "GET", "/instances".into(), Empty, 401),
        (Some("eve"), "GET", "/instances".into(), Empty, 200),
        (None, "POST", "/instances".into(), Json(json!({"workflow_id": "{wpub}"})), 401),
        (Some("eve"), "POST", "/instances".into(), Json(json!({"workflow_id": "{wpub}"})), 201),
        (Some("eve"), "POST", "/instances".into(), Json(json!({"workflow_id": "{wpub}", "version": 1})), 201),
        (Some("eve"), "POST", "/instances".into(), Json(json!({"workflow_id": "{wpub}", "version": 9})), 404),
        (Some("eve"), "POST", "/instances".into(), Json(json!({"workflow_id": "{wpriv}"})), 403),
        (Some("eve"), "POST", "/instances".into(), Json(json!({"workflow_id": "nope"})), 404),
        (Some("eve"), "POST", "/instances".into(), garbage(), 400),
        (Some("eve"), "POST", "/instances".into(), Json(json!({"workflow_id": "{tpl}"})), 400),
        (Some("eve"), "GET", "/instances/{ieve}".into(), Empty, 200),
        (Some("eve"), "GET", "/instances/{ierin}".into(), Empty, 403),
        (Some("pat"), "GET", "/instances/{ierin}".into(), Empty, 403),
        (Some("root"), "GET", "/instances/{ierin}".into(), Empty, 200),
        (Some("eve"), "GET", "/instances/nope".into(), Empty, 404),
        (None, "GET", "/instances/nope".into(), Empty, 401),
        // jobs
        (Some("eve"), "GET", format!("/jobs/{ja}"), Empty, 200),
        (Some("erin"), "GET", format!("/jobs/{ja}"), Empty, 403),
        (Some("root"), "GET", format!("/jobs/{ja}"), Empty, 200),
        (Some("eve"), "GET", "/jobs/{ieve}.zz".into(), Empty, 404),
        (Some("eve"), "GET", "/jobs/garbage".into(), Empty, 404),
        (Some("eve"), "GET", format!("/jobs/{ja}/stdout"), Empty, 200),
        (Some("eve"), "GET", format!("/jobs/{ja}/stderr"), Empty, 200),
        (Some("erin"), "GET", format!("/jobs/{ja}/stdout"), Empty, 403),
        (Some("eve"), "GET", format!("/jobs/{ja}/outputs/out"), Empty, 200),
        (Some("eve"), "GET", format!("/jobs/{ja}/outputs/nope"), Empty, 404),
        (Some("erin"), "GET", "/jobs/{ierin}.a/stdout".into(), Empty, 404),
        (Some("erin"), "POST", format!("/jobs/{jb}/resubmit"), Empty, 403),
        (Some("pat"), "POST", format!("/jobs/{jb}/resubmit"), Empty, 403),
        (Some("eve"), "POST", format!("/jobs/{ja}/resubmit"), Empty, 409),
        (Some("eve"), "POST", "/jobs/{ieve}.zz/resubmit".into(), Empty, 404),
        (None, "POST", format!("/jobs/{jb}/resubmit"), Empty, 401),
        (Some("eve"), "POST", format!("/jobs/{jb}/resubmit"), Empty, 200),
        // abort
        (Some("eve"), "POST", "/instances/{ierin}/abort".into(), Empty, 403),
        (Some("pat"), "POST", "/instances/{ierin}/abort".into(), Empty, 403),
        (Some("eve"), "POST", "/instances/nope/abort".into(), Empty, 404),
        (Some("root"), "POST", "/instances/{ierin}/abort".into(), Empty, 200),
        (Some("erin"), "POST", "/instances/{ierin}/abort".into(), Empty, 409),
        // backends
        (None, "GET", "/backends".into(), Empty, 401),
        (Some("eve"), "GET", "/backends".into(), Empty, 200),
        (Some("pat"), "POST", "/backends".into(), Json(local2.clone()), 403),
        (Some("eve"), "POST", "/backends".into(), garbage(), 403),
        (Some("root"), "POST", "/backends".into(), garbage(), 400),
        (Some("root"), "POST", "/backends".into(), Json(dup), 409),
        (Some("root"), "POST", "/backends".into(), Json(zero), 400),
        (Some("root"), "POST", "/backends".into(), Json(local2), 201),
        // users
        (None, "GET", "/users".into(), Empty, 401),
        (Some("pat"), "GET", "/users".into(), Empty, 403),
        (Some("eve"), "GET", "/users".into(), Empty, 403),
        (Some("root"), "GET", "/users".into(), Empty, 200),
        (Some("eve"), "POST", "/users".into(), Json(json!({"username": "x1", "password": "p", "role": "end_user"})), 403),
        (Some("root"), "POST", "/users".into(), garbage(), 400),
        (Some("root"), "POST", "/users".into(), Json(json!({"username": "bad name", "password": "p", "role": "end_user"})), 400),
        (Some("root"), "POST", "/users".into(), Json(json!({"username": "x1", "password": "", "role": "end_user"})), 400),
        (Some("root"), "POST", "/users".into(), Json(json!({"username": "x1", "password": "p", "role": "end_user"})), 201),
        (Some("root"), "POST", "/users".into(), Json(json!({"username": "x1", "password": "q", "role": "admin"})), 409),
        (Some("pat"), "PATCH", "/users/x1".into(), Json(json!({"role": "admin"})), 403),
        (Some("root"), "PATCH", "/users/nobody".into(), Json(json!({"active": false})), 404),
        (Some("root"), "PATCH", "/users/x1".into(), Json(json!({"role": "power_user"})), 200),
        // unknown routes and methods
        (Some("eve"), "GET", "/nope".into(), Empty, 404),
        (Some("eve"), "DELETE", "/workflows".into(), Empty, 405),
    ];
    let n = rows.len();
    let mut failures = Vec::new();
    for (user, method, path, body, expected) in rows {
        let path = ids.fill(&path);
        let uri = format!("/api/v1{path}");
        let (bytes, is_json) = match body {
            Empty => (Vec::new(), false),
            Json(v) => (ids.fill(&v.to_string()).into_bytes(), true),
            Raw(b) => (b, false),
        };
        let token = user.and_then(|u| fx.token(u));
        let (status, out) = fx.send(method, &uri, token, bytes, is_json).await;
        if status.as_u16() != expected {
            failures.push(format!(
                "{user:?} {method} {path}: {} (expected {expected}) {}",
                status.as_u16(),
                String::from_utf8_lossy(&out)
            ));
            continue;
        }
        if !status.is_success() {
            let v: Value = serde_json::from_slice(&out).unwrap_or(Value::Null);
            error_code(&v);
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
    n
}

/// One request per route with path parameters filled by `id`.
pub fn endpoints(id: &str) -> Vec<(&'static str, String)> {
    vec![
        ("POST", "/auth/logout".into()),
        ("GET", "/auth/me".into()),
        ("GET", "/workflows".into()),
        ("POST", "/workflows".into()),
        ("POST", "/workflows/import".into()),
        ("GET", format!("/workflows/{id}")),
        ("POST", format!("/workflows/{id}/export")),
        ("POST", format!("/workflows/{id}/publish")),
        ("POST", format!("/templates/{id}/instantiate")),
        ("GET", "/instances".into()),
        ("POST", "/instances".into()),
        ("GET", format!("/instances/{id}")),
        ("POST", format!("/instances/{id}/abort")),
        ("GET", format!("/jobs/{id}.a")),
        ("GET", format!("/jobs/{id}.a/stdout")),
        ("GET", format!("/jobs/{id}.a/stderr")),
        ("GET", format!("/jobs/{id}.a/outputs/out")),
        ("POST", format!("/jobs/{id}.b/resubmit")),
        ("GET", "/backends".into()),
        ("POST", "/backends".into()),
        ("GET", "/users".into()),
        ("POST", "/users".into()),
        ("PATCH", "/users/eve".into()),
    ]
}

/// Independent fold of job states from the raw transition events.
fn fold_states(events: &[sciflow_core::instance::Event]) -> BTreeMap<String, JobState> {
    let mut out = BTreeMap::new();
    for e in events {
        match &e.kind {
            EventKind::NodePlanned { jobs, .. } => {
                for j in jobs {
                    out.insert(j.id.clone(), JobState::Init);
                }
            }
            EventKind::Transition { job, to, .. } => {
                out.insert(job.clone(), *to);
            }
            _ => {}
        }
    }
    out
}

/// Polls an instance over HTTP while it runs (with resubmits) and compares
/// each answer with a fold of the log up to the sequence it reports.
pub async fn status_matches_log_fold() -> usize {
    let fx = Fixture::new();
    let id = fx.submit("eve");
    let uri = format!("/api/v1/instances/{id}");
    let mut seen = Vec::new();
    for round in 0..200 {
        let (s, v) = fx.json("GET", &uri, Some("eve"), None).await;
        assert_eq!(s, StatusCode::OK);
        let view: InstanceView = serde_json::from_value(v).unwrap();
        let log = fx.portal.engine.events(&id, 0).unwrap();
        let prefix: Vec<_> = log.iter().filter(|e| e.seq <= view.seq).cloned().collect();
        assert_eq!(prefix.len() as u64, view.seq);
        let folded = WorkflowInstance::replay(&prefix).unwrap();
        assert_eq!(view.status, folded.compute_status(), "round {round}");
        assert_eq!(view.status, fx.portal.engine.refresh_status(&id).unwrap());
        let states: BTreeMap<String, JobState> = view.jobs.iter().map(|j| (j.id.clone(), j.state)).collect();
        assert_eq!(states, fold_states(&prefix));
        seen.push(view.status);
        if view.status.is_terminal() {
            let errored: Vec<String> = view.jobs.iter().filter(|j| j.state == JobState::Error).map(|j| j.id.clone()).collect();
            if errored.is_empty() {
                break;
            }
            for j in errored {
                let (s, _) = fx.json("POST", &format!("/api/v1/jobs/{j}/resubmit"), Some("eve"), None).await;
                assert_eq!(s, StatusCode::OK);
            }
            continue;
        }
        fx.portal.engine.tick(&id).unwrap();
    }
    assert_eq!(seen.last(), Some(&InstanceStatus::Finished));
    assert!(seen.contains(&InstanceStatus::Running));
    assert!(seen.contains(&InstanceStatus::Error));
    seen.len()
}

/// What a request may be answered with when the caller must be turned away
/// before anything is looked up.
pub fn expected_denial(user: Option<&str>, method: &str, path: &str, target_owner: Option<&str>) -> Option<u16> {
    let Some(user) = user else { return Some(401) };
    if user == "forged" {
        return Some(401);
    }
    let end = matches!(user, "eve" | "erin");
    let power = user == "pat";
    let admin_only = path.starts_with("/users") || (path == "/backends" && method == "POST");
    if admin_only && user != "root" {
        return Some(403);
    }
    let authoring = method == "POST" && (path == "/workflows" || path == "/workflows/import" || path.ends_with("/publish"));
    if authoring && end {
        return Some(403);
    }
    let scoped = path.starts_with("/instances/") || path.starts_with("/jobs/");
    if scoped && (end || power) {
        if let Some(owner) = target_owner {
            if owner != user {
                return Some(403);
            }
        }
    }
    Option::None
}

pub fn snapshot(fx: &Fixture) -> (Vec<(String, u64, bool)>, usize, usize, usize) {
    let engine = &fx.portal.engine;
    let instances = engine
        .instance_ids()
        .into_iter()
        .map(|id| engine.with_instance(&id, |i| (i.id.clone(), i.seq, i.abort_requested)).unwrap())
        .collect();
    let root = sciflow_core::access::Principal::new("root", sciflow_core::access::Role::Admin);
    let items = engine.repository().list_items(&root, &Default::default()).unwrap().len();
    (
        instances,
        items,
        fx.portal.accounts.list_users().len(),
        engine.bridge().list().len(),
    )
}

/// Random caller, route, target and body. Whenever the caller must be
/// turned away, the answer is exactly that denial and nothing changed.
pub fn denial_fuzz(cases: u32) -> usize {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (fx, ids) = seeded();
    let iroot = fx.submit("root");
    let targets: Vec<(String, Option<String>)> = vec![
        (ids.ieve.clone(), Some("eve".into())),
        (ids.ierin.clone(), Some("erin".into())),
        (iroot, Some("root".into())),
        ("nope".into(), None),
        ("x%2Fy".into(), None),
    ];
    let users = [None, Some("forged"), Some("eve"), Some("erin"), Some("pat"), Some("root")];
    let bodies: Vec<Vec<u8>> = vec![
        Vec::new(),
        b"{garbage".to_vec(),
        json!({"workflow_id": ids.wpub}).to_string().into_bytes(),
        json!({"item": graph_item()}).to_string().into_bytes(),
        json!({"username": "zz", "password": "p", "role": "admin"}).to_string().into_bytes(),
        serde_json::to_vec(&BackendDescriptor::local("zz", 1)).unwrap(),
    ];
    let n_endpoints = endpoints("x").len();
    let strategy = (0..users.len(), 0..n_endpoints, 0..targets.len(), 0..bodies.len());
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(cases)
    });
    let checked = std::cell::Cell::new(0);
    runner
        .run(&strategy, |(u, e, t, b)| {
            let (target, owner) = &targets[t];
            let (method, path) = endpoints(target)[e].clone();
            // logout with a real token only revokes that token
            if path == "/auth/logout" && users[u].is_some_and(|u| u != "forged") {
                return Ok(());
            }
            let template_path = endpoints("{id}")[e].1.clone();
            let Some(expected) = expected_denial(users[u], method, &template_path, owner.as_deref()) else {
                return Ok(());
            };
            let token = match users[u] {
                Some("forged") => Some("0123456789abcdef".to_string()),
                Some(name) => fx.token(name).map(str::to_string),
                None => None,
            };
            let before = snapshot(&fx);
            let (status, body) = rt.block_on(fx.send(method, &format!("/api/v1{path}"), token.as_deref(), bodies[b].clone(), true));
            prop_assert_eq!(status.as_u16(), expected, "{:?} {} {}", users[u], method, path);
            let v: Value = serde_json::from_slice(&body).unwrap();
            prop_assert!(v["error"]["code"].is_string());
            prop_assert_eq!(snapshot(&fx), before);
            checked.set(checked.get() + 1);
            Ok(())
        })
        .unwrap();
    assert!(checked.get() > cases as usize / 4, "only {} denial cases exercised", checked.get());
    checked.get()
}

pub async fn unauthenticated_requests_change_nothing() -> usize {
    let (fx, ids) = seeded();
    let before = snapshot(&fx);
    for (method, path) in endpoints(&ids.ierin) {
        for body in [json!({"workflow_id": ids.wpub}), json!({"username": "q", "password": "q", "role": "admin"})] {
            let (s, _) = fx.json(method, &format!("/api/v1{path}"), None, Some(body)).await;
            assert_eq!(s, StatusCode::UNAUTHORIZED, "{method} {path}");
        }
    }
    assert_eq!(snapshot(&fx), before);
    2 * endpoints("x").len()
}

