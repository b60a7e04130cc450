//! CSV tables and the run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        // `+ 0.0` folds −0 into 0 so equal tables print identically.
        format!("{:.16e}", x + 0.0)
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self::from_header(header.iter().map(|s| s.to_string()).collect())
    }

    pub fn from_header(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|x| fmt_num(*x)).collect());
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|c| quote(c)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

fn quote(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub model: String,
    pub config_sha256: String,
    pub code_version: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub exit_code: i32,
    pub partial: bool,
    pub outputs: Vec<OutputFile>,
}

/// Writes each `(name, contents)` pair under `dir` and returns their hashes.
pub fn write_files(dir: &Path, files: &[(String, String)]) -> io::Result<Vec<OutputFile>> {
    fs::create_dir_all(dir)?;
    files
        .iter()
        .map(|(name, body)| {
            fs::write(dir.join(name), body)?;
            Ok(OutputFile {
                file: name.clone(),
                sha256: sha256_hex(body.as_bytes()),
            })
        })
        .collect()
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> io::Result<PathBuf> {
    let path = dir.join("manifest.json");
    let mut body = serde_json::to_string_pretty(m).map_err(io::Error::other)?;
    body.push('\n');
    fs::write(&path, body)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn cells_with_commas_are_quoted() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "z".into()]);
        assert_eq!(t.to_csv(), "a,b\n\"x,y\",z\n");
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
