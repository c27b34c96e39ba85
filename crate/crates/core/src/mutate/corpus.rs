use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::codec::parse_frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Parses under `parse_frame`.
    Parsed,
    /// Kept as opaque bytes.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub label: String,
    pub bytes: Vec<u8>,
    pub origin: Origin,
}

impl CorpusEntry {
    pub fn new(label: impl Into<String>, bytes: Vec<u8>) -> Self {
        let origin = if parse_frame(&bytes).is_ok() {
            Origin::Parsed
        } else {
            Origin::Raw
        };
        CorpusEntry {
            label: label.into(),
            bytes,
            origin,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading corpus {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("corpus {0} contains no non-empty frames")]
    Empty(String),
}

/// Seed frames, one raw frame per file, ordered by file name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedCorpus {
    pub entries: Vec<CorpusEntry>,
}

impl SeedCorpus {
    pub fn from_frames<I, S>(frames: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<u8>)>,
        S: Into<String>,
    {
        SeedCorpus {
            entries: frames
                .into_iter()
                .map(|(label, bytes)| CorpusEntry::new(label, bytes))
                .collect(),
        }
    }

    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.path())
            .collect();
        files.sort();
        let mut entries = Vec::new();
        for path in files {
            let bytes = fs::read(&path).map_err(io_err)?;
            if bytes.is_empty() {
                continue;
            }
            let label = path.file_name().unwrap().to_string_lossy().into_owned();
            entries.push(CorpusEntry::new(label, bytes));
        }
        if entries.is_empty() {
            return Err(CorpusError::Empty(dir.display().to_string()));
        }
        Ok(SeedCorpus { entries })
    }

    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for entry in &self.entries {
            fs::write(dir.join(&entry.label), &entry.bytes)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
