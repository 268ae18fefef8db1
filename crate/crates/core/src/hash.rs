use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over every regular file below `dir` (relative path and content,
/// in sorted path order), prefixed by `salt`.
pub fn hash_tree(dir: &Path, salt: &[u8]) -> io::Result<String> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    h.update((salt.len() as u64).to_le_bytes());
    h.update(salt);
    for rel in files {
        let bytes = fs::read(dir.join(&rel))?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let ty = entry.file_type()?;
        if ty.is_dir() {
            collect(root, &path, out)?;
        } else if ty.is_file() {
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn tree_hash_depends_on_names_and_content() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::write(a.path().join("x"), b"1").unwrap();
        fs::write(b.path().join("x"), b"1").unwrap();
        assert_eq!(hash_tree(a.path(), b"").unwrap(), hash_tree(b.path(), b"").unwrap());
        assert_ne!(hash_tree(a.path(), b"").unwrap(), hash_tree(a.path(), b"s").unwrap());
        fs::write(b.path().join("y"), b"").unwrap();
        assert_ne!(hash_tree(a.path(), b"").unwrap(), hash_tree(b.path(), b"").unwrap());
    }
}
