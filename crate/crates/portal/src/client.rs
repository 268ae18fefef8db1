//! The `sciflow` command-line client.
//!
//! Exit codes: 0 success, 1 the server answered with an error (or could not
//! be reached), 2 usage error. API errors are echoed to stderr as the
//! server's single-line JSON envelope.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "sciflow", about = "Command-line client for a sciflow portal")]
struct Cli {
    #[arg(long, env = "SCIFLOW_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Bearer token; defaults to the one saved by `login`.
    #[arg(long, env = "SCIFLOW_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Where `login` saves the token. Defaults to ~/.sciflow/token.
    #[arg(long, env = "SCIFLOW_TOKEN_FILE")]
    token_file: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Signs in and saves the token.
    Login {
        #[arg(long)]
        user: String,
        #[arg(long, env = "SCIFLOW_PASSWORD", hide_env_values = true)]
        password: String,
    },
    #[command(subcommand)]
    Wf(WfCmd),
    #[command(subcommand)]
    Instance(InstanceCmd),
    #[command(subcommand)]
    Job(JobCmd),
    #[command(subcommand)]
    Backend(BackendCmd),
}

#[derive(Subcommand, Debug)]
enum WfCmd {
    List {
        #[arg(long)]
        kind: Option<String>,
    },
    /// Uploads an archive (`.zip`) or an item in JSON form (`.json`).
    Upload {
        file: PathBuf,
        /// Store as a new version of this item.
        #[arg(long)]
        id: Option<String>,
    },
    /// Writes the item's archive to a file.
    Download {
        id: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    Publish {
        id: String,
    },
}

#[derive(Subcommand, Debug)]
enum InstanceCmd {
    List,
    Submit {
        workflow_id: String,
        #[arg(long)]
        version: Option<u32>,
    },
    Status {
        id: String,
        /// Long-poll up to this many milliseconds for a change first.
        #[arg(long)]
        wait: Option<u64>,
        /// Keep long-polling until the instance is terminal.
        #[arg(long)]
        follow: bool,
        /// Print the full status document instead of the status word.
        #[arg(long)]
        json: bool,
    },
    Abort {
        id: String,
    },
}

#[derive(Subcommand, Debug)]
enum JobCmd {
    Logs {
        job: String,
        #[arg(long)]
        stderr: bool,
    },
    Resubmit {
        job: String,
    },
}

#[derive(Subcommand, Debug)]
enum BackendCmd {
    List,
}

struct Reply {
    status: u16,
    body: Vec<u8>,
}

impl Reply {
    fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }

    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }
}

enum Failure {
    Usage(String),
    Api(Vec<u8>),
    Transport(String),
    Local(String),
}

fn envelope(code: &str, message: &str) -> String {
    json!({"error": {"code": code, "message": message, "details": null}}).to_string()
}

struct Client {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

const BODY_LIMIT: u64 = 1 << 30;

impl Client {
    fn new(server: &str, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Client {
            base: format!("{}/api/v1", server.trim_end_matches('/')),
            token,
            agent,
        }
    }

    fn call(&self, method: &str, path: &str, body: Option<(&str, Vec<u8>)>) -> Result<Reply, Failure> {
        let url = format!("{}{path}", self.base);
        let auth = self.token.as_ref().map(|t| format!("Bearer {t}"));
        let result = match method {
            "GET" => {
                let mut req = self.agent.get(&url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.call()
            }
            _ => {
                let mut req = self.agent.post(&url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                match body {
                    Some((content_type, bytes)) => req.header("Content-Type", content_type).send(&bytes[..]),
                    None => req.send_empty(),
                }
            }
        };
        let mut resp = result.map_err(|e| Failure::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_vec()
            .map_err(|e| Failure::Transport(e.to_string()))?;
        let reply = Reply { status, body };
        if reply.ok() {
            Ok(reply)
        } else {
            Err(Failure::Api(reply.body))
        }
    }

    fn get(&self, path: &str) -> Result<Reply, Failure> {
        self.call("GET", path, None)
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Reply, Failure> {
        self.call("POST", path, Some(("application/json", body.to_string().into_bytes())))
    }
}

fn default_token_file() -> PathBuf {
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".sciflow").join("token")
}

fn encode_segment(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_' | b'.' | b'-' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

/// Runs the client with `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    2
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "{}", envelope("usage", &msg));
            2
        }
        Err(Failure::Api(body)) => {
            let line = match serde_json::from_slice::<Value>(&body) {
                Ok(v) => v.to_string(),
                Err(_) => envelope("http", String::from_utf8_lossy(&body).trim()),
            };
            let _ = writeln!(err, "{line}");
            1
        }
        Err(Failure::Transport(msg)) => {
            let _ = writeln!(err, "{}", envelope("unreachable", &msg));
            1
        }
        Err(Failure::Local(msg)) => {
            let _ = writeln!(err, "{}", envelope("local", &msg));
            1
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Local(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::Local(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let token_file = cli.token_file.clone().unwrap_or_else(default_token_file);
    if let Cmd::Login { user, password } = &cli.cmd {
        let client = Client::new(&cli.server, None);
        let reply = client.post_json("/auth/login", &json!({"username": user, "password": password}))?;
        let token = reply.json()["token"].as_str().unwrap_or_default().to_string();
        write_file(&token_file, token.as_bytes())?;
        let _ = writeln!(out, "{token}");
        return Ok(());
    }
    let token = match cli.token {
        Some(t) => t,
        None => std::fs::read_to_string(&token_file)
            .map(|t| t.trim().to_string())
            .map_err(|_| Failure::Usage("no token: run `sciflow login`, set SCIFLOW_TOKEN or pass --token".into()))?,
    };
    let client = Client::new(&cli.server, Some(token));
    let mut say = |line: String| {
        let _ = writeln!(out, "{line}");
    };
    match cli.cmd {
        Cmd::Login { .. } => unreachable!("handled above"),
        Cmd::Wf(WfCmd::List { kind }) => {
            let path = match kind {
                Some(k) => format!("/workflows?kind={}", encode_segment(&k)),
                None => "/workflows".into(),
            };
            for item in client.get(&path)?.json().as_array().into_iter().flatten() {
                say(format!(
                    "{}\t{}\t{}\t{}\t{}\tv{}",
                    item["id"].as_str().unwrap_or(""),
                    item["kind"].as_str().unwrap_or(""),
                    item["name"].as_str().unwrap_or(""),
                    item["owner"].as_str().unwrap_or(""),
                    item["visibility"].as_str().unwrap_or(""),
                    item["version"]
                ));
            }
        }
        Cmd::Wf(WfCmd::Upload { file, id }) => {
            let bytes = std::fs::read(&file).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
            let reply = if file.extension().is_some_and(|e| e == "json") {
                let item: Value = serde_json::from_slice(&bytes)
                    .map_err(|e| Failure::Usage(format!("{} is not JSON: {e}", file.display())))?;
                client.post_json("/workflows", &json!({"item": item, "id": id}))?
            } else {
                let path = match &id {
                    Some(id) => format!("/workflows/import?id={}", encode_segment(id)),
                    None => "/workflows/import".into(),
                };
                client.call("POST", &path, Some(("application/zip", bytes)))?
            };
            let meta = reply.json();
            say(format!("{}\tv{}", meta["id"].as_str().unwrap_or(""), meta["version"]));
        }
        Cmd::Wf(WfCmd::Download { id, output }) => {
            let reply = client.call("POST", &format!("/workflows/{}/export", encode_segment(&id)), None)?;
            let path = output.unwrap_or_else(|| PathBuf::from(format!("{id}.zip")));
            write_file(&path, &reply.body)?;
            say(path.display().to_string());
        }
        Cmd::Wf(WfCmd::Publish { id }) => {
            let reply = client.call("POST", &format!("/workflows/{}/publish", encode_segment(&id)), None)?;
            say(reply.json()["visibility"].as_str().unwrap_or("").to_string());
        }
        Cmd::Instance(InstanceCmd::List) => {
            for i in client.get("/instances")?.json().as_array().into_iter().flatten() {
                say(format!(
                    "{}\t{}\t{}\t{}",
                    i["id"].as_str().unwrap_or(""),
                    i["workflow"].as_str().unwrap_or(""),
                    i["owner"].as_str().unwrap_or(""),
                    i["status"].as_str().unwrap_or("")
                ));
            }
        }
        Cmd::Instance(InstanceCmd::Submit { workflow_id, version }) => {
            let reply = client.post_json("/instances", &json!({"workflow_id": workflow_id, "version": version}))?;
            say(reply.json()["id"].as_str().unwrap_or("").to_string());
        }
        Cmd::Instance(InstanceCmd::Status { id, wait, follow, json }) => {
            let base = format!("/instances/{}", encode_segment(&id));
            let mut doc = match wait {
                Some(ms) => client.get(&format!("{base}?wait={ms}"))?.json(),
                None => client.get(&base)?.json(),
            };
            while follow && !matches!(doc["status"].as_str(), Some("finished" | "error" | "aborted")) {
                let seq = doc["seq"].as_u64().unwrap_or(0);
                doc = client.get(&format!("{base}?wait=10000&since={seq}"))?.json();
            }
            if json {
                say(doc.to_string());
            } else {
                say(doc["status"].as_str().unwrap_or("").to_string());
            }
        }
        Cmd::Instance(InstanceCmd::Abort { id }) => {
            let reply = client.call("POST", &format!("/instances/{}/abort", encode_segment(&id)), None)?;
            say(reply.json()["status"].as_str().unwrap_or("").to_string());
        }
        Cmd::Job(JobCmd::Logs { job, stderr }) => {
            let stream = if stderr { "stderr" } else { "stdout" };
            let reply = client.get(&format!("/jobs/{}/{stream}", encode_segment(&job)))?;
            let _ = out.write_all(&reply.body);
        }
        Cmd::Job(JobCmd::Resubmit { job }) => {
            let reply = client.call("POST", &format!("/jobs/{}/resubmit", encode_segment(&job)), None)?;
            say(format!("attempt {}", reply.json()["attempt"]));
        }
        Cmd::Backend(BackendCmd::List) => {
            for b in client.get("/backends")?.json().as_array().into_iter().flatten() {
                say(format!(
                    "{}\t{}\t{}\tload={}",
                    b["id"].as_str().unwrap_or(""),
                    b["kind"].as_str().unwrap_or(""),
                    b["health"].as_str().unwrap_or(""),
                    b["load"]
                ));
            }
        }
    }
    Ok(())
}
