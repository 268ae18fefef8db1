use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{write_atomic, RepoError, Repository};
use crate::hash::sha256_hex;

pub(super) struct BlobStore {
    dir: PathBuf,
    sync: bool,
    lock: Mutex<()>,
}

impl BlobStore {
    pub(super) fn new(dir: PathBuf, sync: bool) -> Self {
        BlobStore {
            dir,
            sync,
            lock: Mutex::new(()),
        }
    }

    fn path(&self, hash: &str) -> Result<PathBuf, RepoError> {
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(RepoError::NotFound(format!("blob {hash}")));
        }
        Ok(self.dir.join(&hash[..2]).join(hash))
    }

    fn refs_path(path: &Path) -> PathBuf {
        path.with_extension("refs")
    }

    fn read_refs(path: &Path) -> Result<u64, RepoError> {
        match fs::read_to_string(Self::refs_path(path)) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| RepoError::Io(format!("bad refcount file for {}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(e.into()),
        }
    }
}

impl Repository {
    /// Stores `bytes` (deduplicated by content) and takes one reference.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<String, RepoError> {
        let store = &self.blobs;
        let hash = sha256_hex(bytes);
        let path = store.path(&hash)?;
        let _guard = store.lock.lock().unwrap();
        fs::create_dir_all(path.parent().expect("blob path has a parent"))?;
        let refs = BlobStore::read_refs(&path)?;
        let intact = refs > 0 && fs::read(&path).is_ok_and(|b| sha256_hex(&b) == hash);
        if !intact {
            write_atomic(&path, bytes, store.sync)?;
        }
        write_atomic(&BlobStore::refs_path(&path), (refs + 1).to_string().as_bytes(), store.sync)?;
        Ok(hash)
    }

    /// Reads a blob, re-verifying its content address.
    pub fn get_blob(&self, hash: &str) -> Result<Vec<u8>, RepoError> {
        let path = self.blobs.path(hash)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(RepoError::NotFound(format!("blob {hash}")))
            }
            Err(e) => return Err(e.into()),
        };
        if sha256_hex(&bytes) != hash {
            return Err(RepoError::Integrity(hash.to_string()));
        }
        Ok(bytes)
    }

    pub fn blob_refcount(&self, hash: &str) -> Result<u64, RepoError> {
        let path = self.blobs.path(hash)?;
        let _guard = self.blobs.lock.lock().unwrap();
        BlobStore::read_refs(&path)
    }

    /// Drops one reference; the blob is deleted when none remain. Returns the
    /// remaining count.
    pub fn release_blob(&self, hash: &str) -> Result<u64, RepoError> {
        let path = self.blobs.path(hash)?;
        let _guard = self.blobs.lock.lock().unwrap();
        let refs = BlobStore::read_refs(&path)?;
        if refs == 0 {
            return Err(RepoError::NotFound(format!("blob {hash}")));
        }
        if refs == 1 {
            fs::remove_file(&path)?;
            fs::remove_file(BlobStore::refs_path(&path))?;
        } else {
            write_atomic(&BlobStore::refs_path(&path), (refs - 1).to_string().as_bytes(), self.blobs.sync)?;
        }
        Ok(refs - 1)
    }

    /// On-disk location of a blob, for tests that inject corruption.
    pub fn blob_path(&self, hash: &str) -> Result<PathBuf, RepoError> {
        self.blobs.path(hash)
    }
}

impl Repository {
    /// Takes one more reference on an existing blob.
    pub fn retain_blob(&self, hash: &str) -> Result<u64, RepoError> {
        let path = self.blobs.path(hash)?;
        let _guard = self.blobs.lock.lock().unwrap();
        let refs = BlobStore::read_refs(&path)?;
        if refs == 0 || !path.exists() {
            return Err(RepoError::NotFound(format!("blob {hash}")));
        }
        write_atomic(&BlobStore::refs_path(&path), (refs + 1).to_string().as_bytes(), self.blobs.sync)?;
        Ok(refs + 1)
    }
}
