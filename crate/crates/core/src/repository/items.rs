use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{write_atomic, RepoError, Repository};
use crate::access::{Principal, Role};
use crate::model::{import_archive, ArchiveItem, ItemKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    #[default]
    Private,
    Published,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub id: String,
    pub kind: ItemKind,
    pub name: String,
    pub owner: String,
    pub visibility: Visibility,
    pub version: u32,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoItem {
    pub meta: ItemMeta,
    pub archive: Vec<u8>,
}

impl RepoItem {
    pub fn decode(&self) -> Result<ArchiveItem, RepoError> {
        Ok(import_archive(&self.archive)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFilter {
    #[serde(default)]
    pub kind: Option<ItemKind>,
    #[serde(default)]
    pub owner: Option<String>,
    #[serde(default)]
    pub visibility: Option<Visibility>,
}

impl ItemFilter {
    fn matches(&self, meta: &ItemMeta) -> bool {
        self.kind.is_none_or(|k| k == meta.kind)
            && self.owner.as_ref().is_none_or(|o| *o == meta.owner)
            && self.visibility.is_none_or(|v| v == meta.visibility)
    }
}

pub(super) struct ItemStore {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl ItemStore {
    pub(super) fn new(dir: PathBuf) -> Self {
        ItemStore {
            dir,
            lock: Mutex::new(()),
        }
    }

    fn item_dir(&self, id: &str) -> Result<PathBuf, RepoError> {
        if !crate::ident::is_valid_ident(id) {
            return Err(RepoError::NotFound(format!("item {id}")));
        }
        Ok(self.dir.join(id))
    }

    fn read_meta(&self, id: &str) -> Result<ItemMeta, RepoError> {
        let path = self.item_dir(id)?.join("meta.json");
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(RepoError::NotFound(format!("item {id}")))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes).map_err(|e| RepoError::Io(format!("item {id} metadata: {e}")))
    }

    fn write_meta(&self, meta: &ItemMeta) -> Result<(), RepoError> {
        let path = self.item_dir(&meta.id)?.join("meta.json");
        let json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
        Ok(write_atomic(&path, &json, false)?)
    }
}

fn can_read(caller: &Principal, meta: &ItemMeta) -> bool {
    meta.visibility == Visibility::Published || caller.owns_or_admin(&meta.owner)
}

impl Repository {
    /// Stores a new item (`id` = None) or a new version of an existing one.
    pub fn put_item(
        &self,
        caller: &Principal,
        id: Option<&str>,
        archive: Vec<u8>,
        now_ms: u64,
    ) -> Result<ItemMeta, RepoError> {
        let decoded = import_archive(&archive)?;
        let store = &self.items;
        let _guard = store.lock.lock().unwrap();
        let meta = match id {
            None => {
                let id = uuid::Uuid::new_v4().simple().to_string();
                fs::create_dir_all(store.item_dir(&id)?)?;
                ItemMeta {
                    id,
                    kind: decoded.kind(),
                    name: decoded.name().to_string(),
                    owner: caller.user.clone(),
                    visibility: Visibility::Private,
                    version: 1,
                    created_at: now_ms,
                    updated_at: now_ms,
                }
            }
            Some(id) => {
                let mut meta = store.read_meta(id)?;
                if !caller.owns_or_admin(&meta.owner) {
                    return Err(RepoError::Forbidden(format!("item {id} belongs to {}", meta.owner)));
                }
                if meta.visibility == Visibility::Published {
                    return Err(RepoError::PublishedImmutable(id.to_string()));
                }
                if meta.kind != decoded.kind() {
                    return Err(RepoError::KindMismatch {
                        id: id.to_string(),
                        existing: meta.kind.as_str().into(),
                        given: decoded.kind().as_str().into(),
                    });
                }
                meta.version += 1;
                meta.name = decoded.name().to_string();
                meta.updated_at = now_ms;
                meta
            }
        };
        let dir = store.item_dir(&meta.id)?;
        write_atomic(&dir.join(format!("{}.zip", meta.version)), &archive, false)?;
        store.write_meta(&meta)?;
        Ok(meta)
    }

    pub fn item_meta(&self, caller: &Principal, id: &str) -> Result<ItemMeta, RepoError> {
        let meta = self.items.read_meta(id)?;
        if !can_read(caller, &meta) {
            return Err(RepoError::Forbidden(format!("item {id} is private")));
        }
        Ok(meta)
    }

    /// Latest version of an item.
    pub fn get_item(&self, caller: &Principal, id: &str) -> Result<RepoItem, RepoError> {
        let meta = self.item_meta(caller, id)?;
        self.read_version(meta)
    }

    pub fn get_item_version(&self, caller: &Principal, id: &str, version: u32) -> Result<RepoItem, RepoError> {
        let mut meta = self.item_meta(caller, id)?;
        if version == 0 || version > meta.version {
            return Err(RepoError::NotFound(format!("item {id} version {version}")));
        }
        meta.version = version;
        self.read_version(meta)
    }

    fn read_version(&self, meta: ItemMeta) -> Result<RepoItem, RepoError> {
        let path = self.items.item_dir(&meta.id)?.join(format!("{}.zip", meta.version));
        let archive = fs::read(path)?;
        Ok(RepoItem { meta, archive })
    }

    /// Items visible to `caller`, ordered by (kind, name, id).
    pub fn list_items(&self, caller: &Principal, filter: &ItemFilter) -> Result<Vec<ItemMeta>, RepoError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.items.dir)? {
            let entry = entry?;
            let Some(id) = entry.file_name().to_str().map(str::to_string) else { continue };
            let meta = match self.items.read_meta(&id) {
                Ok(m) => m,
                Err(RepoError::NotFound(_)) => continue,
                Err(e) => return Err(e),
            };
            if can_read(caller, &meta) && filter.matches(&meta) {
                out.push(meta);
            }
        }
        out.sort_by(|a, b| (a.kind, &a.name, &a.id).cmp(&(b.kind, &b.name, &b.id)));
        Ok(out)
    }

    /// Makes an item visible to everyone and freezes it. Publishing twice is
    /// a no-op.
    pub fn publish(&self, caller: &Principal, id: &str) -> Result<Visibility, RepoError> {
        let _guard = self.items.lock.lock().unwrap();
        let mut meta = self.items.read_meta(id)?;
        let allowed = caller.is_admin() || (caller.user == meta.owner && caller.role == Role::PowerUser);
        if !allowed {
            return Err(RepoError::Forbidden(format!("{} may not publish item {id}", caller.user)));
        }
        if meta.visibility != Visibility::Published {
            meta.visibility = Visibility::Published;
            self.items.write_meta(&meta)?;
        }
        Ok(meta.visibility)
    }
}
