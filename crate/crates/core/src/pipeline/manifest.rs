//! Tab-separated stage manifests.
//!
//! ```text
//! # stage<TAB>population
//! # input<TAB>config<TAB><sha256>
//! file<TAB>seed<TAB>accuracy<TAB>sha256
//! net_0000.dwfc<TAB>0<TAB>0.933333<TAB>...
//! ```
//!
//! Paths are relative to the run directory and nothing time-dependent is
//! recorded, so rerunning a stage reproduces its manifest byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub stage: String,
    /// `(name, sha256)` of every upstream input.
    pub inputs: Vec<(String, String)>,
    /// Free-form `key = value` facts about the stage output.
    pub facts: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Manifest {
    pub fn new(stage: &str, columns: &[&str]) -> Self {
        Self {
            stage: stage.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn input(&mut self, name: impl Into<String>, sha: impl Into<String>) {
        self.inputs.push((name.into(), sha.into()));
    }

    pub fn fact(&mut self, key: &str, value: impl ToString) {
        self.facts.insert(key.into(), value.to_string());
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut out = format!("# stage\t{}\n", self.stage);
        for (name, sha) in &self.inputs {
            let _ = writeln!(out, "# input\t{name}\t{sha}");
        }
        for (k, v) in &self.facts {
            let _ = writeln!(out, "# fact\t{k}\t{v}");
        }
        out.push_str(&self.columns.join("\t"));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, why: &str| Error::Parse {
            path: PathBuf::from(path),
            offset: line as u64,
            reason: format!("manifest line {}: {why}", line + 1),
        };
        let mut m = Manifest::default();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let cells: Vec<&str> = line.split('\t').collect();
            match cells.as_slice() {
                ["# stage", s] => m.stage = s.to_string(),
                ["# input", name, sha] => m.inputs.push((name.to_string(), sha.to_string())),
                ["# fact", k, v] => {
                    m.facts.insert(k.to_string(), v.to_string());
                }
                _ if line.starts_with('#') => return Err(bad(i, "unknown directive")),
                _ if !header_seen => {
                    m.columns = cells.iter().map(|c| c.to_string()).collect();
                    header_seen = true;
                }
                _ => {
                    if cells.len() != m.columns.len() {
                        return Err(bad(i, "wrong number of cells"));
                    }
                    m.rows.push(cells.iter().map(|c| c.to_string()).collect());
                }
            }
        }
        Ok(m)
    }

    /// Values of one column.
    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("manifest of stage `{}` has no column `{name}`", self.stage)))?;
        Ok(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn render_and_read_back() {
        let mut m = Manifest::new("population", &["file", "seed"]);
        m.input("config", "abc");
        m.fact("count", 2);
        m.row(vec!["a.dwfc".into(), "0".into()]);
        m.row(vec!["b.dwfc".into(), "1".into()]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.tsv");
        m.write(&p).unwrap();
        let back = Manifest::read(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.column("seed").unwrap(), vec!["0", "1"]);
        assert!(back.column("nope").is_err());
    }
}
