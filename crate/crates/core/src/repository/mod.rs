//! Embedded, single-node store.
//!
//! On-disk layout under the store root:
//!
//! ```text
//! items/<id>/meta.json            item metadata
//! items/<id>/<version>.zip        archive bytes of each version
//! instances/<id>/log.jsonl        one event per line
//! instances/<id>/snapshot.json    periodic fold of the log
//! blobs/<2-char prefix>/<hash>    artifact bytes, with a `.refs` counter beside
//! ```

mod blobs;
mod instances;
mod items;

use std::io;
use std::path::{Path, PathBuf};

pub use items::{ItemFilter, ItemMeta, RepoItem, Visibility};

use crate::model::ArchiveError;

/// A snapshot is written every this many events.
pub const SNAPSHOT_EVERY: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RepoError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("item {0} is published and cannot be changed")]
    PublishedImmutable(String),
    #[error("item {id} is a {existing}, not a {given}")]
    KindMismatch {
        id: String,
        existing: String,
        given: String,
    },
    #[error("sequence gap: expected {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("blob {0} failed its integrity check")]
    Integrity(String),
    #[error("corrupt log for instance {instance} at line {line}: {reason}")]
    CorruptLog {
        instance: String,
        line: usize,
        reason: String,
    },
    #[error("invalid archive: {0}")]
    InvalidArchive(String),
    #[error("storage error: {0}")]
    Io(String),
}

impl From<ArchiveError> for RepoError {
    fn from(e: ArchiveError) -> Self {
        RepoError::InvalidArchive(e.to_string())
    }
}

impl From<io::Error> for RepoError {
    fn from(e: io::Error) -> Self {
        RepoError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RepoOptions {
    /// fsync every appended event and written blob.
    pub sync: bool,
}

pub struct Repository {
    root: PathBuf,
    options: RepoOptions,
    items: items::ItemStore,
    blobs: blobs::BlobStore,
    instances: instances::InstanceStore,
}

impl std::fmt::Debug for Repository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Repository").field("root", &self.root).finish()
    }
}

impl Repository {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, RepoError> {
        Repository::open_with(root, RepoOptions::default())
    }

    pub fn open_with(root: impl AsRef<Path>, options: RepoOptions) -> Result<Self, RepoError> {
        let root = root.as_ref().to_path_buf();
        for sub in ["items", "instances", "blobs"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Repository {
            items: items::ItemStore::new(root.join("items")),
            blobs: blobs::BlobStore::new(root.join("blobs"), options.sync),
            instances: instances::InstanceStore::new(root.join("instances"), options.sync),
            root,
            options,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn options(&self) -> RepoOptions {
        self.options
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename, so
/// readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8], sync: bool) -> io::Result<()> {
    use std::io::Write;
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        if sync {
            f.sync_all()?;
        }
    }
    std::fs::rename(&tmp, path)
}
