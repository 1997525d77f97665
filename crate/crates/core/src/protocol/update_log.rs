//! The append-only update log: every client update the server ever received,
//! one JSON record per line, in arrival order. The stability study and any
//! later analysis read it back.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::ClientUpdate;
use crate::error::{Error, Result};

/// Single-writer appender; the protocol loop owns one per run.
pub struct Appender {
    writer: BufWriter<File>,
}

impl Appender {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Appender { writer: BufWriter::new(file) })
    }

    pub fn append(&mut self, update: &ClientUpdate) -> Result<()> {
        let line = serde_json::to_string(update)
            .map_err(|e| Error::Format(format!("update serialization: {e}")))?;
        writeln!(self.writer, "{line}")?;
        Ok(())
    }

    pub fn append_all(&mut self, updates: &[ClientUpdate]) -> Result<()> {
        for u in updates {
            self.append(u)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Parses one log line. Untrusted-input boundary: structural and semantic
/// problems are format errors.
pub fn parse_line(line: &str) -> Result<ClientUpdate> {
    let update: ClientUpdate =
        serde_json::from_str(line).map_err(|e| Error::Format(format!("update record: {e}")))?;
    update
        .validate()
        .map_err(|e| Error::Format(format!("update record: {e}")))?;
    Ok(update)
}

/// Reads a whole log. Errors carry the 1-based line number.
pub fn read(path: &Path) -> Result<Vec<ClientUpdate>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue; // tolerate a trailing newline
        }
        let update = parse_line(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        out.push(update);
    }
    Ok(out)
}
