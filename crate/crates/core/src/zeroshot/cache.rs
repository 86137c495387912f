//! Response cache keyed by prompt hash.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{PromptBundle, ZeroShotError};

/// SHA-256 (hex) over the model name, both prompt texts, and the decoding
/// parameters. Any change to what would be sent changes the hash.
pub fn prompt_hash(bundle: &PromptBundle) -> String {
    let params = serde_json::to_string(&bundle.params).expect("decoding params serialize");
    let mut h = Sha256::new();
    for part in [&bundle.model_name, &bundle.system_text, &bundle.user_text, &params] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Raw replies stored by prompt hash.
#[derive(Debug)]
pub enum ResponseCache {
    Memory(Mutex<HashMap<String, String>>),
    /// One `<hash>.txt` file per reply; writes go through a temporary file
    /// and a rename so readers never see partial entries.
    Dir(PathBuf),
}

impl ResponseCache {
    pub fn memory() -> Self {
        ResponseCache::Memory(Mutex::new(HashMap::new()))
    }

    pub fn dir(path: impl Into<PathBuf>) -> Result<Self, ZeroShotError> {
        let path = path.into();
        std::fs::create_dir_all(&path).map_err(|source| ZeroShotError::Io { path: path.clone(), source })?;
        Ok(ResponseCache::Dir(path))
    }

    fn entry(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, ZeroShotError> {
        match self {
            ResponseCache::Memory(map) => Ok(map.lock().unwrap_or_else(|p| p.into_inner()).get(key).cloned()),
            ResponseCache::Dir(dir) => {
                let path = Self::entry(dir, key);
                match std::fs::read_to_string(&path) {
                    Ok(text) => Ok(Some(text)),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                    Err(source) => Err(ZeroShotError::Io { path, source }),
                }
            }
        }
    }

    pub fn put(&self, key: &str, raw: &str) -> Result<(), ZeroShotError> {
        match self {
            ResponseCache::Memory(map) => {
                map.lock().unwrap_or_else(|p| p.into_inner()).insert(key.to_string(), raw.to_string());
                Ok(())
            }
            ResponseCache::Dir(dir) => {
                let path = Self::entry(dir, key);
                let io = |source| ZeroShotError::Io { path: path.clone(), source };
                let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
                tmp.write_all(raw.as_bytes()).map_err(io)?;
                tmp.persist(&path).map_err(|e| io(e.error))?;
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zeroshot::DecodingParams;

    fn bundle(user: &str, temperature: f64) -> PromptBundle {
        PromptBundle {
            system_text: "sys".into(),
            user_text: user.into(),
            params: DecodingParams { temperature, ..Default::default() },
            model_name: "m".into(),
        }
    }

    #[test]
    fn hash_depends_on_every_part() {
        let base = prompt_hash(&bundle("a", 0.7));
        assert_eq!(base.len(), 64);
        assert_eq!(base, prompt_hash(&bundle("a", 0.7)));
        assert_ne!(base, prompt_hash(&bundle("b", 0.7)));
        assert_ne!(base, prompt_hash(&bundle("a", 0.0)));
        let mut other_model = bundle("a", 0.7);
        other_model.model_name = "n".into();
        assert_ne!(base, prompt_hash(&other_model));
    }

    #[test]
    fn dir_cache_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = ResponseCache::dir(tmp.path().join("c")).unwrap();
        assert_eq!(cache.get("k").unwrap(), None);
        cache.put("k", "pharma,\n\"rushed\"").unwrap();
        assert_eq!(cache.get("k").unwrap().as_deref(), Some("pharma,\n\"rushed\""));
        let mem = ResponseCache::memory();
        mem.put("k", "x").unwrap();
        assert_eq!(mem.get("k").unwrap().as_deref(), Some("x"));
    }
}
