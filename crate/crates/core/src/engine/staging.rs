//! Moving bytes between the artifact store and job sandboxes.

use std::fs;
use std::io;
use std::path::Path;

use crate::bridge::launcher::{STDERR_FILE, STDOUT_FILE};
use crate::instance::{ArtifactRef, JobInstance, StagedInput};
use crate::model::{NodeSpec, PortKind};
use crate::repository::{RepoError, Repository};
use crate::sweep::{manifest_file_name, GeneratorManifest};

use super::EngineError;

/// Recreates the sandbox directory and writes every staged input into it.
pub(crate) fn materialize(repo: &Repository, sandbox: &Path, inputs: &[StagedInput]) -> Result<(), EngineError> {
    if sandbox.exists() {
        fs::remove_dir_all(sandbox)?;
    }
    fs::create_dir_all(sandbox)?;
    for input in inputs {
        let bytes = repo.get_blob(&input.hash)?;
        let path = sandbox.join(&input.file);
        fs::write(&path, bytes)?;
        if input.executable {
            set_executable(&path)?;
        }
    }
    Ok(())
}

#[cfg(unix)]
fn set_executable(path: &Path) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o755))
}

#[cfg(not(unix))]
fn set_executable(_path: &Path) -> io::Result<()> {
    Ok(())
}

fn store(repo: &Repository, job: &JobInstance, instance: &str, name: &str, bytes: &[u8]) -> Result<ArtifactRef, RepoError> {
    let hash = repo.put_blob(bytes)?;
    Ok(ArtifactRef {
        instance: instance.to_string(),
        job: job.id.clone(),
        name: name.to_string(),
        hash,
        size: bytes.len() as u64,
    })
}

/// stdout and stderr of the attempt; missing files count as empty.
pub(crate) fn capture_streams(
    repo: &Repository,
    instance: &str,
    job: &JobInstance,
    sandbox: &Path,
) -> Result<(ArtifactRef, ArtifactRef), EngineError> {
    let read = |f: &str| fs::read(sandbox.join(f)).unwrap_or_default();
    let out = store(repo, job, instance, "stdout", &read(STDOUT_FILE))?;
    let err = store(repo, job, instance, "stderr", &read(STDERR_FILE))?;
    Ok((out, err))
}

pub(crate) enum Collected {
    Ok {
        outputs: Vec<ArtifactRef>,
        manifests: Vec<GeneratorManifest>,
    },
    Missing(String),
}

/// Collects every declared output port from the sandbox.
pub(crate) fn collect_outputs(
    repo: &Repository,
    instance: &str,
    job: &JobInstance,
    spec: &NodeSpec,
    sandbox: &Path,
) -> Result<Collected, EngineError> {
    let mut outputs = Vec::new();
    let mut manifests = Vec::new();
    for port in &spec.output_ports {
        match port.kind {
            PortKind::Generator => {
                let mname = manifest_file_name(&port.name);
                let Ok(bytes) = fs::read(sandbox.join(&mname)) else {
                    return Ok(Collected::Missing(mname));
                };
                let manifest = match GeneratorManifest::from_file(&spec.name, &port.name, &bytes) {
                    Ok(m) => m,
                    Err(e) => return Ok(Collected::Missing(format!("{mname}: {e}"))),
                };
                for item in &manifest.item_names {
                    let Ok(data) = fs::read(sandbox.join(item)) else {
                        return Ok(Collected::Missing(item.clone()));
                    };
                    outputs.push(store(repo, job, instance, item, &data)?);
                }
                outputs.push(store(repo, job, instance, &mname, &bytes)?);
                manifests.push(manifest);
            }
            _ => {
                let Ok(data) = fs::read(sandbox.join(&port.name)) else {
                    return Ok(Collected::Missing(port.name.clone()));
                };
                outputs.push(store(repo, job, instance, &port.name, &data)?);
            }
        }
    }
    Ok(Collected::Ok { outputs, manifests })
}
