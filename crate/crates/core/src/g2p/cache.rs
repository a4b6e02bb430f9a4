//! Append-only phonemization cache.
//!
//! One file per (language, backend fingerprint) under the cache directory:
//!
//! ```text
//! <cache_dir>/g2p-<language>-<fingerprint16>.tsv
//! ```
//!
//! The first line is a header naming the backend version. Every following
//! line is a record `language<TAB>sha256(input)<TAB>output`. A torn last
//! line (no trailing newline) is ignored on load.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::G2pError;

const HEADER_PREFIX: &str = "# phonmt g2p cache v1\tbackend=";

pub fn input_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug)]
pub struct PhonemeCache {
    path: PathBuf,
    language: String,
    index: RwLock<HashMap<String, String>>,
    writer: Mutex<File>,
}

impl PhonemeCache {
    pub fn open(dir: &Path, language: &str, fingerprint: &str, version: &str) -> Result<Self, G2pError> {
        fs::create_dir_all(dir).map_err(|e| super::io_error(dir, e))?;
        let short: String = fingerprint.chars().take(16).collect();
        let path = dir.join(format!("g2p-{language}-{short}.tsv"));
        let mut index = HashMap::new();
        let exists = path.exists();
        if exists {
            let bytes = fs::read(&path).map_err(|e| super::io_error(&path, e))?;
            let text = String::from_utf8_lossy(&bytes);
            let complete = match text.rfind('\n') {
                Some(end) => &text[..=end],
                None => "",
            };
            for line in complete.lines().skip(1) {
                let mut cols = line.splitn(3, '\t');
                if let (Some(lang), Some(hash), Some(out)) = (cols.next(), cols.next(), cols.next()) {
                    if lang == language && hash.len() == 64 {
                        index.insert(hash.to_string(), out.to_string());
                    }
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| super::io_error(&path, e))?;
        let needs_header = !exists || file.metadata().map(|m| m.len() == 0).unwrap_or(true);
        if needs_header {
            writeln!(file, "{HEADER_PREFIX}{}", version.replace(['\n', '\t'], " "))
                .map_err(|e| super::io_error(&path, e))?;
        } else {
            // a torn record from an earlier crash must not swallow the next append
            let bytes = fs::read(&path).map_err(|e| super::io_error(&path, e))?;
            if bytes.last() != Some(&b'\n') {
                file.write_all(b"\n").map_err(|e| super::io_error(&path, e))?;
            }
        }
        Ok(Self {
            path,
            language: language.to_string(),
            index: RwLock::new(index),
            writer: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, input: &str) -> Option<String> {
        self.index.read().expect("cache lock").get(&input_hash(input)).cloned()
    }

    pub fn insert(&self, input: &str, output: &str) -> Result<(), G2pError> {
        let hash = input_hash(input);
        let mut file = self.writer.lock().expect("cache writer lock");
        if self.index.read().expect("cache lock").contains_key(&hash) {
            return Ok(());
        }
        writeln!(file, "{}\t{hash}\t{output}", self.language).map_err(|e| super::io_error(&self.path, e))?;
        self.index.write().expect("cache lock").insert(hash, output.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
