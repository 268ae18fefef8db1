mod common;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;

use common::*;
use proptest::prelude::*;
use sciflow_core::access::{Principal, Role};
use sciflow_core::hash::sha256_hex;
use sciflow_core::instance::{EventKind, InstanceStatus, JobState, WorkflowInstance};
use sciflow_core::model::{export_archive, import_archive, ArchiveItem, Graph, ItemKind};
use sciflow_core::repository::{ItemFilter, RepoError, Repository, Visibility, SNAPSHOT_EVERY};
use sciflow_core::model::SweepMode;
use sciflow_core::testkit::{emit_node, six_node_workflow};

fn graph_archive(name: &str, nodes: usize) -> Vec<u8> {
    let g = (0..nodes).fold(Graph::new(name), |g, i| {
        g.with_node(emit_node(&format!("n{i}"), &[], &["out"]))
    });
    export_archive(&ArchiveItem::Graph(g))
}

fn workflow_archive() -> Vec<u8> {
    export_archive(&ArchiveItem::Workflow(six_node_workflow()))
}

fn user(name: &str, role: Role) -> Principal {
    Principal::new(name, role)
}

#[test]
fn item_round_trip_and_versions() {
    let dir = tempfile::tempdir().unwrap();
    let repo = Repository::open(dir.path()).unwrap();
    let alice = user("alice", Role::PowerUser);
    let meta = repo.put_item(&alice, None, workflow_archive(), 10).unwrap();
    assert_eq!((meta.kind, meta.version, meta.visibility), (ItemKind::Workflow, 1, Visibility::Private));
    let item = repo.get_item(&alice, &meta.id).unwrap();
    assert_eq!(item.decode().unwrap(), ArchiveItem::Workflow(six_node_workflow()));

    let v2 = repo.put_item(&alice, Some(&meta.id), workflow_archive(), 20).unwrap();
    assert_eq!(v2.version, 2);
    assert_eq!(v2.created_at, 10);
    assert!(repo.get_item_version(&alice, &meta.id, 1).is_ok());
    assert!(matches!(
        repo.get_item_version(&alice, &meta.id, 3),
        Err(RepoError::NotFound(_))
    ));

    assert!(matches!(
        repo.put_item(&alice, Some(&meta.id), graph_archive("g", 1), 30),
        Err(RepoError::KindMismatch { .. })
    ));
    assert!(matches!(repo.get_item(&alice, "nope"), Err(RepoError::NotFound(_))));
    assert!(matches!(repo.get_item(&alice, "../etc"), Err(RepoError::NotFound(_))));
}

#[test]
fn invalid_archive_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let repo = Repository::open(dir.path()).unwrap();
    let err = repo
        .put_item(&user("alice", Role::PowerUser), None, b"not a zip".to_vec(), 0)
        .unwrap_err();
    assert!(matches!(err, RepoError::InvalidArchive(_)));
}

#[test]
fn publish_rules() {
    let dir = tempfile::tempdir().unwrap();
    let repo = Repository::open(dir.path()).unwrap();
    let power = user("pat", Role::PowerUser);
    let end = user("eve", Role::EndUser);
    let admin = user("root", Role::Admin);

    let mine = repo.put_item(&end, None, graph_archive("g", 1), 0).unwrap();
    assert!(matches!(repo.publish(&end, &mine.id), Err(RepoError::Forbidden(_))));
    assert!(matches!(repo.get_item(&power, &mine.id), Err(RepoError::Forbidden(_))));
    assert!(matches!(
        repo.put_item(&power, Some(&mine.id), graph_archive("g", 2), 1),
        Err(RepoError::Forbidden(_))
    ));
    assert_eq!(repo.publish(&admin, &mine.id).unwrap(), Visibility::Published);
    assert!(repo.get_item(&power, &mine.id).is_ok());

    let theirs = repo.put_item(&power, None, graph_archive("h", 1), 0).unwrap();
    assert!(matches!(repo.publish(&user("other", Role::PowerUser), &theirs.id), Err(RepoError::Forbidden(_))));
    assert_eq!(repo.publish(&power, &theirs.id).unwrap(), Visibility::Published);
    assert_eq!(repo.publish(&power, &theirs.id).unwrap(), Visibility::Published);
    let before = repo.get_item(&power, &theirs.id).unwrap();
    assert_eq!(
        repo.put_item(&power, Some(&theirs.id), graph_archive("h", 3), 5),
        Err(RepoError::PublishedImmutable(theirs.id.clone()))
    );
    assert_eq!(
        repo.put_item(&admin, Some(&theirs.id), graph_archive("h", 3), 5),
        Err(RepoError::PublishedImmutable(theirs.id.clone()))
    );
    assert_eq!(repo.get_item(&power, &theirs.id).unwrap(), before);
}

#[test]
fn listing_is_sorted_and_filtered() {
    let dir = tempfile::tempdir().unwrap();
    let repo = Repository::open(dir.path()).unwrap();
    let alice = user("alice", Role::PowerUser);
    let bob = user("bob", Role::EndUser);
    for name in ["zeta", "alpha", "mid", "alpha"] {
        repo.put_item(&alice, None, graph_archive(name, 1), 0).unwrap();
    }
    repo.put_item(&alice, None, workflow_archive(), 0).unwrap();
    let hidden = repo.put_item(&bob, None, graph_archive("bobs", 1), 0).unwrap();

    let all = repo.list_items(&alice, &ItemFilter::default()).unwrap();
    assert_eq!(all.len(), 5);
    assert!(all.iter().all(|m| m.id != hidden.id));
    let keys: Vec<_> = all.iter().map(|m| (m.kind, m.name.clone(), m.id.clone())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(all[0].name, "alpha");
    assert_eq!(all.last().unwrap().kind, ItemKind::Workflow);

    let graphs = repo
        .list_items(
            &alice,
            &ItemFilter {
                kind: Some(ItemKind::Graph),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(graphs.len(), 4);
    let admin = repo.list_items(&user("root", Role::Admin), &ItemFilter::default()).unwrap();
    assert_eq!(admin.len(), 6);
}

#[test]
fn blob_refcounting() {
    let dir = tempfile::tempdir().unwrap();
    let repo = Repository::open(dir.path()).unwrap();
    let h = repo.put_blob(b"payload").unwrap();
    assert_eq!(h, sha256_hex(b"payload"));
    assert_eq!(repo.put_blob(b"payload").unwrap(), h);
    assert_eq!(repo.blob_refcount(&h).unwrap(), 2);
    assert_eq!(repo.get_blob(&h).unwrap(), b"payload");
    assert_eq!(repo.release_blob(&h).unwrap(), 1);
    assert_eq!(repo.get_blob(&h).unwrap(), b"payload");
    assert_eq!(repo.release_blob(&h).unwrap(), 0);
    assert!(matches!(repo.get_blob(&h), Err(RepoError::NotFound(_))));
}

#[test]
fn blob_corruption_detected() {
    let dir = tempfile::tempdir().unwrap();
    let repo = Repository::open(dir.path()).unwrap();
    let h = repo.put_blob(b"original").unwrap();
    fs::write(repo.blob_path(&h).unwrap(), b"tampered").unwrap();
    assert_eq!(repo.get_blob(&h), Err(RepoError::Integrity(h)));
}

/// Runs a workflow long enough to cross several snapshot boundaries.
fn long_run(h: &Harness) -> String {
    let g = Graph::new("wide")
        .with_node(
            sciflow_core::model::NodeSpec::new("g").output("items", sciflow_core::model::PortKind::Generator),
        )
        .with_node(emit_node("c", &["x"], &["out"]))
        .connect("g", "items", "c", "x");
    let configs: BTreeMap<_, _> = [
        sciflow_core::model::JobConfig::tool("g", "gen").args(["items", "40"]),
        sciflow_core::model::JobConfig::tool("c", "emit")
            .args(["out"])
            .mode(SweepMode::Cross),
    ]
    .into_iter()
    .map(|c| (c.node.clone(), c))
    .collect();
    let def = sciflow_core::model::configure_workflow(g, configs, BTreeMap::new()).unwrap();
    let id = h.engine.submit_workflow(def, "alice").unwrap();
    h.engine.run_to_completion(&id, 100).unwrap();
    id
}

#[test]
fn snapshot_equivalent_to_full_replay() {
    let h = harness();
    let id = long_run(&h);
    let repo = h.engine.repository();
    let events = repo.read_events(&id, 0).unwrap();
    assert!(events.len() as u64 > 3 * SNAPSHOT_EVERY);
    let live = h.engine.get_instance(&id).unwrap();
    assert_eq!(live.status, InstanceStatus::Finished);
    assert_eq!(repo.load_instance(&id).unwrap(), live);
    assert_eq!(repo.replay_instance(&id).unwrap(), live);

    // a fresh handle on the same store sees the same thing
    let reopened = Repository::open(h.store()).unwrap();
    assert_eq!(reopened.load_instance(&id).unwrap(), live);
    // a garbled snapshot is ignored
    fs::write(h.store().join("instances").join(&id).join("snapshot.json"), b"{garbage").unwrap();
    assert_eq!(reopened.load_instance(&id).unwrap(), live);
}

/// Independent fold: job states and attempt counts straight from the
/// transition events.
fn fold_states(events: &[sciflow_core::instance::Event]) -> BTreeMap<String, (JobState, u32)> {
    let mut out = BTreeMap::new();
    for e in events {
        match &e.kind {
            EventKind::NodePlanned { jobs, .. } => {
                for j in jobs {
                    out.insert(j.id.clone(), (JobState::Init, 1));
                }
            }
            EventKind::Transition { job, to, attempt, .. } => {
                out.insert(job.clone(), (*to, *attempt));
            }
            _ => {}
        }
    }
    out
}

#[test]
fn fold_oracle_agrees_with_instance() {
    let h = harness();
    let id = h.engine.submit_workflow(six_node_workflow(), "alice").unwrap();
    loop {
        h.engine.run_to_completion(&id, 100).unwrap();
        let inst = h.engine.get_instance(&id).unwrap();
        let errored: Vec<String> = inst
            .jobs
            .values()
            .filter(|j| j.state == JobState::Error)
            .map(|j| j.id.clone())
            .collect();
        if errored.is_empty() {
            break;
        }
        for j in errored {
            h.engine.resubmit_failed(&j).unwrap();
        }
    }
    let events = h.engine.events(&id, 0).unwrap();
    let oracle = fold_states(&events);
    let inst = h.engine.get_instance(&id).unwrap();
    let actual: BTreeMap<_, _> = inst.jobs.values().map(|j| (j.id.clone(), (j.state, j.attempt))).collect();
    assert_eq!(actual, oracle);
    assert_eq!(inst.status, InstanceStatus::Finished);
    assert_eq!(inst.jobs[&format!("{id}.b")].attempt, 2);
    assert_eq!(inst.jobs[&format!("{id}.a")].attempt, 1);
}

#[test]
fn append_requires_next_sequence() {
    let h = harness();
    let id = h.engine.submit_workflow(six_node_workflow(), "alice").unwrap();
    let repo = h.engine.repository();
    let mut events = repo.read_events(&id, 0).unwrap();
    let last = events.pop().unwrap();
    let mut dup = last.clone();
    assert_eq!(
        repo.append_event(&id, &dup),
        Err(RepoError::SequenceGap {
            expected: last.seq + 1,
            got: last.seq
        })
    );
    dup.seq += 5;
    assert!(matches!(repo.append_event(&id, &dup), Err(RepoError::SequenceGap { .. })));
    assert!(matches!(repo.read_events("missing", 0), Err(RepoError::NotFound(_))));
    assert!(matches!(repo.load_instance("missing"), Err(RepoError::NotFound(_))));
}

#[test]
fn torn_tail_is_ignored_and_truncated() {
    let h = harness();
    let id = h.engine.submit_workflow(six_node_workflow(), "alice").unwrap();
    h.engine.tick(&id).unwrap();
    let before = h.engine.get_instance(&id).unwrap();
    let path = h.engine.repository().log_path(&id).unwrap();
    drop(h.engine);

    let mut f = OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"seq":999,"t_ms":0,"type":"abort_req"#).unwrap();
    drop(f);

    let repo = Repository::open(h.dir.path().join("store")).unwrap();
    let loaded = repo.load_instance(&id).unwrap();
    assert_eq!(loaded, before);
    // the next append lands on a clean line
    let next = sciflow_core::instance::Event {
        seq: before.seq + 1,
        t_ms: 1,
        kind: EventKind::AbortRequested,
    };
    repo.append_event(&id, &next).unwrap();
    let after = repo.read_events(&id, 0).unwrap();
    assert_eq!(after.last().unwrap(), &next);
    let text = fs::read_to_string(&path).unwrap();
    assert!(!text.contains("999"));
}

#[test]
fn corrupt_committed_line_is_reported() {
    let h = harness();
    let id = h.engine.submit_workflow(six_node_workflow(), "alice").unwrap();
    h.engine.tick(&id).unwrap();
    let path = h.engine.repository().log_path(&id).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{\"seq\": \"two\"}";
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let repo = Repository::open(h.dir.path().join("store")).unwrap();
    match repo.replay_instance(&id) {
        Err(RepoError::CorruptLog { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a corrupt log, got {other:?}"),
    }
}

#[test]
fn list_instances_after_reopen() {
    let h = harness();
    let a = h.engine.submit_workflow(six_node_workflow(), "alice").unwrap();
    let b = h.engine.submit_workflow(six_node_workflow(), "bob").unwrap();
    let repo = Repository::open(h.store()).unwrap();
    let mut expected = vec![a, b];
    expected.sort();
    assert_eq!(repo.list_instances().unwrap(), expected);
    let inst: WorkflowInstance = repo.load_instance(&expected[0]).unwrap();
    assert_eq!(inst.status, InstanceStatus::Submitted);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn archive_round_trip(nodes in 1usize..6, name in "[a-z]{1,8}") {
        let bytes = graph_archive(&name, nodes);
        let item = import_archive(&bytes).unwrap();
        prop_assert_eq!(export_archive(&item), bytes.clone());
        let dir = tempfile::tempdir().unwrap();
        let repo = Repository::open(dir.path()).unwrap();
        let alice = user("alice", Role::EndUser);
        let meta = repo.put_item(&alice, None, bytes.clone(), 0).unwrap();
        prop_assert_eq!(repo.get_item(&alice, &meta.id).unwrap().archive, bytes);
    }

    #[test]
    fn refcount_tracks_puts_minus_releases(puts in 1u64..6, releases in 0u64..6) {
        let dir = tempfile::tempdir().unwrap();
        let repo = Repository::open(dir.path()).unwrap();
        let mut h = String::new();
        for _ in 0..puts {
            h = repo.put_blob(b"x").unwrap();
        }
        let releases = releases.min(puts);
        for _ in 0..releases {
            repo.release_blob(&h).unwrap();
        }
        let left = puts - releases;
        if left == 0 {
            prop_assert!(repo.get_blob(&h).is_err());
        } else {
            prop_assert_eq!(repo.blob_refcount(&h).unwrap(), left);
        }
    }
}
