//! Output files. Each starts with a header line naming the archive, the
//! command and the config digest; JSON files carry the same under "ccseg".

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ccseg_core::fetch::write_atomic;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const UNKNOWN_ARCHIVE: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Header {
    pub archive: String,
    pub command: String,
    pub config: String,
}

impl Header {
    pub fn new(archive: impl Into<String>, command: impl Into<String>, config: impl Into<String>) -> Self {
        Self { archive: archive.into(), command: command.into(), config: config.into() }
    }

    pub fn line(&self) -> String {
        format!("# ccseg archive={} command={} config={}", self.archive, self.command, self.config)
    }

    /// Reads a header from the first line of `text`, if it has one.
    pub fn parse(text: &str) -> Option<Header> {
        let rest = text.lines().next()?.strip_prefix("# ccseg ")?;
        let mut h = Header::new("", "", "");
        for field in rest.split_whitespace() {
            match field.split_once('=')? {
                ("archive", v) => h.archive = v.into(),
                ("command", v) => h.command = v.into(),
                ("config", v) => h.config = v.into(),
                _ => {}
            }
        }
        (!h.archive.is_empty()).then_some(h)
    }

    pub fn tsv(&self, body: &str) -> String {
        let mut s = self.line();
        s.push('\n');
        s.push_str(body);
        s
    }

    /// `value` (an object) with the header as its first member.
    pub fn json<T: Serialize>(&self, value: &T) -> CliResult<String> {
        let mut map = Map::new();
        map.insert("ccseg".into(), serde_json::to_value(self)?);
        match serde_json::to_value(value)? {
            Value::Object(m) => map.extend(m),
            other => {
                map.insert("value".into(), other);
            }
        }
        Ok(serde_json::to_string_pretty(&Value::Object(map))? + "\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WrittenFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Writes artifacts under one directory and remembers what it wrote.
pub struct ArtifactDir {
    root: PathBuf,
    header: Header,
    written: Vec<WrittenFile>,
}

impl ArtifactDir {
    pub fn create(root: &Path, header: Header) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::usage(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), header, written: Vec::new() })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.written.push(WrittenFile {
            name: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn tsv(&mut self, rel: &str, body: &str) -> CliResult<()> {
        let text = self.header.tsv(body);
        self.put(rel, text.as_bytes())
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let text = self.header.json(value)?;
        self.put(rel, text.as_bytes())
    }

    /// Files written so far, sorted by name.
    pub fn written(&self) -> Vec<WrittenFile> {
        let mut v = self.written.clone();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }
}

/// Sends `text` to `path`, or to `stdout` when there is no path.
pub fn emit(path: Option<&Path>, stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    match path {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = Header::new("CC-MAIN-2019-35", "tabulate", "0123abcd");
        assert_eq!(h.line(), "# ccseg archive=CC-MAIN-2019-35 command=tabulate config=0123abcd");
        assert_eq!(Header::parse(&h.tsv("a\tb\n")), Some(h));
        assert_eq!(Header::parse("label\tv\n"), None);
    }

    #[test]
    fn json_header_first() {
        let h = Header::new("CC-MAIN-2019-35", "pipeline", "ff");
        let text = h.json(&serde_json::json!({"z": 1, "a": 2})).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["ccseg", "z", "a"]);
    }
}
