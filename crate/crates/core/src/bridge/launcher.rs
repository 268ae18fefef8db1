//! How payloads are started inside a job sandbox.
//!
//! Every backend hands the actual execution to a [`Launcher`]. The local
//! backend polls the returned [`RunningJob`] without blocking; simulated
//! backends run it to completion when their clock says the job is done.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

pub const STDOUT_FILE: &str = "stdout.txt";
pub const STDERR_FILE: &str = "stderr.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Program {
    /// A toolkit tool, resolved by the launcher.
    Tool(String),
    /// An executable file, usually inside the sandbox.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchSpec {
    pub sandbox: PathBuf,
    pub program: Program,
    pub args: Vec<String>,
}

pub trait RunningJob: Send {
    /// Exit code if the payload has finished.
    fn try_wait(&mut self) -> io::Result<Option<i32>>;
    fn wait(&mut self) -> io::Result<i32>;
    fn kill(&mut self) -> io::Result<()>;
}

pub trait Launcher: Send + Sync {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn RunningJob>>;
}

/// Spawns real subprocesses with `stdout.txt`/`stderr.txt` redirected into
/// the sandbox.
#[derive(Debug, Clone, Default)]
pub struct ProcessLauncher {
    /// Multi-call toolkit binary invoked as `<toolkit> <tool> args...`.
    pub toolkit: Option<PathBuf>,
}

impl ProcessLauncher {
    pub fn new(toolkit: Option<PathBuf>) -> Self {
        ProcessLauncher { toolkit }
    }
}

impl Launcher for ProcessLauncher {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn RunningJob>> {
        let mut cmd = match &spec.program {
            Program::Tool(name) => {
                let toolkit = self.toolkit.as_ref().ok_or_else(|| {
                    io::Error::new(io::ErrorKind::NotFound, format!("no toolkit configured for tool {name}"))
                })?;
                let mut c = Command::new(toolkit);
                c.arg(name);
                c
            }
            Program::Path(path) => {
                let path = if path.is_relative() {
                    spec.sandbox.join(path)
                } else {
                    path.clone()
                };
                Command::new(path)
            }
        };
        cmd.args(&spec.args)
            .current_dir(&spec.sandbox)
            .stdin(Stdio::null())
            .stdout(File::create(spec.sandbox.join(STDOUT_FILE))?)
            .stderr(File::create(spec.sandbox.join(STDERR_FILE))?);
        let child = cmd.spawn()?;
        Ok(Box::new(ChildJob { child }))
    }
}

struct ChildJob {
    child: Child,
}

fn exit_code(status: std::process::ExitStatus) -> i32 {
    // killed by a signal: report 128 + signal like a shell would
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return 128 + sig;
        }
    }
    status.code().unwrap_or(-1)
}

impl RunningJob for ChildJob {
    fn try_wait(&mut self) -> io::Result<Option<i32>> {
        Ok(self.child.try_wait()?.map(exit_code))
    }

    fn wait(&mut self) -> io::Result<i32> {
        Ok(exit_code(self.child.wait()?))
    }

    fn kill(&mut self) -> io::Result<()> {
        match self.child.kill() {
            Ok(()) => {
                let _ = self.child.wait();
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::InvalidInput => Ok(()),
            Err(e) => Err(e),
        }
    }
}

/// Signature of an in-process payload: gets the spec plus stdout/stderr
/// buffers and returns an exit code.
pub type PayloadFn = dyn Fn(&LaunchSpec, &mut Vec<u8>, &mut Vec<u8>) -> i32 + Send + Sync;

/// Runs payloads as Rust closures inside the current process. Execution
/// happens synchronously during `launch`.
#[derive(Clone)]
pub struct InProcessLauncher {
    payload: Arc<PayloadFn>,
}

impl InProcessLauncher {
    pub fn new<F>(payload: F) -> Self
    where
        F: Fn(&LaunchSpec, &mut Vec<u8>, &mut Vec<u8>) -> i32 + Send + Sync + 'static,
    {
        InProcessLauncher {
            payload: Arc::new(payload),
        }
    }
}

impl std::fmt::Debug for InProcessLauncher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("InProcessLauncher")
    }
}

impl Launcher for InProcessLauncher {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn RunningJob>> {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = (self.payload)(spec, &mut out, &mut err);
        write_streams(&spec.sandbox, &out, &err)?;
        Ok(Box::new(Finished(code)))
    }
}

pub fn write_streams(sandbox: &Path, stdout: &[u8], stderr: &[u8]) -> io::Result<()> {
    fs::write(sandbox.join(STDOUT_FILE), stdout)?;
    fs::write(sandbox.join(STDERR_FILE), stderr)
}

struct Finished(i32);

impl RunningJob for Finished {
    fn try_wait(&mut self) -> io::Result<Option<i32>> {
        Ok(Some(self.0))
    }

    fn wait(&mut self) -> io::Result<i32> {
        Ok(self.0)
    }

    fn kill(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_process_writes_streams() {
        let dir = tempfile::tempdir().unwrap();
        let launcher = InProcessLauncher::new(|spec, out, err| {
            out.extend_from_slice(spec.args.join(" ").as_bytes());
            err.extend_from_slice(b"warn");
            3
        });
        let spec = LaunchSpec {
            sandbox: dir.path().to_path_buf(),
            program: Program::Tool("echo".into()),
            args: vec!["a".into(), "b".into()],
        };
        let mut job = launcher.launch(&spec).unwrap();
        assert_eq!(job.wait().unwrap(), 3);
        assert_eq!(fs::read(dir.path().join(STDOUT_FILE)).unwrap(), b"a b");
        assert_eq!(fs::read(dir.path().join(STDERR_FILE)).unwrap(), b"warn");
    }

    #[cfg(unix)]
    #[test]
    fn process_launcher_runs_shell_script() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("run_sh");
        fs::write(&script, "#!/bin/sh\necho hello $1\necho oops >&2\nexit 4\n").unwrap();
        fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
        let spec = LaunchSpec {
            sandbox: dir.path().to_path_buf(),
            program: Program::Path("run_sh".into()),
            args: vec!["world".into()],
        };
        let mut job = ProcessLauncher::default().launch(&spec).unwrap();
        assert_eq!(job.wait().unwrap(), 4);
        assert_eq!(fs::read_to_string(dir.path().join(STDOUT_FILE)).unwrap(), "hello world\n");
        assert_eq!(fs::read_to_string(dir.path().join(STDERR_FILE)).unwrap(), "oops\n");
    }

    #[test]
    fn missing_toolkit_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = LaunchSpec {
            sandbox: dir.path().to_path_buf(),
            program: Program::Tool("rdf".into()),
            args: vec![],
        };
        assert!(ProcessLauncher::default().launch(&spec).is_err());
    }
}
