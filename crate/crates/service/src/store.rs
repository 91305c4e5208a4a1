//! On-disk sessions: one directory per session id holding `session.json`, `history.json` and,
//! for photo sessions, `photo.png`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use latentbrush::bundle::ModelBundle;
use latentbrush::image::ImageRGB;

use crate::config::Settings;
use crate::error::{ApiError, Result};
use crate::session::{HistoryEntry, Session, SessionRecord};

const RECORD: &str = "session.json";
const HISTORY: &str = "history.json";
const PHOTO: &str = "photo.png";

#[derive(Clone, Debug)]
pub struct SessionStore {
    root: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(ApiError::NotFound(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    /// Write the session atomically per file (temp file, then rename).
    pub fn save(&self, s: &Session) -> Result<()> {
        let dir = self.dir(s.id())?;
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(RECORD), &serde_json::to_vec_pretty(&s.record)?)?;
        write_atomic(&dir.join(HISTORY), &serde_json::to_vec_pretty(&s.history)?)?;
        if let Some(photo) = &s.photo {
            let path = dir.join(PHOTO);
            if !path.is_file() {
                write_atomic(&path, &photo.encode_png()?)?;
            }
        }
        Ok(())
    }

    /// Raw record and history of `id`.
    pub fn read(&self, id: &str) -> Result<(SessionRecord, Vec<HistoryEntry>, Option<ImageRGB>)> {
        let dir = self.dir(id)?;
        if !dir.join(RECORD).is_file() {
            return Err(ApiError::NotFound(id.to_string()));
        }
        let record: SessionRecord = serde_json::from_slice(&fs::read(dir.join(RECORD))?)?;
        let history: Vec<HistoryEntry> = serde_json::from_slice(&fs::read(dir.join(HISTORY))?)?;
        let photo = match fs::read(dir.join(PHOTO)) {
            Ok(bytes) => Some(ImageRGB::decode(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        Ok((record, history, photo))
    }

    /// Load and replay `id` against `model`.
    pub fn load(&self, id: &str, model: Arc<ModelBundle>, settings: &Settings) -> Result<Session> {
        let (record, history, photo) = self.read(id)?;
        Session::replay(record, history, photo, model, settings)
    }

    /// Ids of every stored session, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for e in fs::read_dir(&self.root)? {
            let e = e?;
            if e.path().join(RECORD).is_file() {
                if let Some(name) = e.file_name().to_str() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
