//! Ciphertext object store on local disk. Each object is a `<id>.bin` file
//! with a `<id>.json` metadata sidecar, both written via rename so readers
//! never observe partial files.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rand::rngs::OsRng;
use rand::RngCore;

use crate::api::ObjectMeta;
use crate::sealed::ContentKind;

#[derive(Debug)]
pub struct ObjectStore {
    dir: PathBuf,
    index: RwLock<HashMap<String, ObjectMeta>>,
}

pub fn new_id() -> String {
    let mut raw = [0u8; 16];
    OsRng.fill_bytes(&mut raw);
    hex::encode(raw)
}

fn valid_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", new_id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

impl ObjectStore {
    /// Opens (or creates) a store, indexing any objects already present.
    pub fn open(root: &Path) -> io::Result<Self> {
        let dir = root.join("objects");
        std::fs::create_dir_all(&dir)?;
        let mut index = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let meta: ObjectMeta = serde_json::from_slice(&std::fs::read(&path)?)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                if dir.join(format!("{}.bin", meta.object_id)).exists() {
                    index.insert(meta.object_id.clone(), meta);
                }
            }
        }
        Ok(Self {
            dir,
            index: RwLock::new(index),
        })
    }

    pub fn put(&self, meta: ObjectMeta, bytes: &[u8]) -> io::Result<()> {
        assert!(
            valid_id(&meta.object_id),
            "store ids are generated internally"
        );
        write_atomic(&self.dir.join(format!("{}.bin", meta.object_id)), bytes)?;
        write_atomic(
            &self.dir.join(format!("{}.json", meta.object_id)),
            &serde_json::to_vec(&meta).map_err(io::Error::other)?,
        )?;
        self.index
            .write()
            .expect("store index lock")
            .insert(meta.object_id.clone(), meta);
        Ok(())
    }

    pub fn meta(&self, id: &str) -> Option<ObjectMeta> {
        if !valid_id(id) {
            return None;
        }
        self.index
            .read()
            .expect("store index lock")
            .get(id)
            .cloned()
    }

    pub fn read(&self, id: &str) -> io::Result<Vec<u8>> {
        if !valid_id(id) {
            return Err(io::ErrorKind::NotFound.into());
        }
        std::fs::read(self.dir.join(format!("{id}.bin")))
    }

    pub fn list(&self, kind: ContentKind) -> Vec<ObjectMeta> {
        let mut v: Vec<ObjectMeta> = self
            .index
            .read()
            .expect("store index lock")
            .values()
            .filter(|m| m.kind == kind)
            .cloned()
            .collect();
        v.sort_by(|a, b| (a.created_at, &a.object_id).cmp(&(b.created_at, &b.object_id)));
        v
    }
}
