//! Append-only block log: one canonical-JSON block per line.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Block;
use crate::canon::canonical_bytes;

#[derive(Debug, Error)]
pub enum BlockLogError {
    #[error("block log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("block log line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("cannot encode block: {0}")]
    Encode(#[from] crate::canon::CanonicalizationError),
}

pub struct BlockLog {
    path: PathBuf,
    file: File,
}

impl BlockLog {
    /// Opens (creating if needed) the log and returns it with every block
    /// already recorded, in file order. A torn final line is ignored.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Block>), BlockLogError> {
        let path = path.as_ref().to_path_buf();
        let mut blocks = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
            let last = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Block>(&line) {
                    Ok(b) => blocks.push(b),
                    Err(_) if i + 1 == last => break,
                    Err(source) => return Err(BlockLogError::Parse { line: i + 1, source }),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((Self { path, file }, blocks))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, block: &Block) -> Result<(), BlockLogError> {
        let mut line = canonical_bytes(block)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}
