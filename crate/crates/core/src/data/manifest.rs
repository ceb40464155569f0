//! Line-delimited manifest format: one JSON record per line with fields
//! `{id, before, after, captions, change_type, split}`. Image paths are
//! relative to the manifest file.

use super::{ChangeType, Split};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub before: String,
    pub after: String,
    pub captions: Vec<String>,
    pub change_type: ChangeType,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    /// Directory that image paths are relative to.
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split_records(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for record in &manifest.records {
        serde_json::to_writer(&mut out, record).expect("record serialization");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load and validate a manifest. Every invariant failure names the offender.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Data(format!("duplicate record id '{}'", record.id)));
        }
        if record.captions.is_empty() {
            return Err(Error::Data(format!("record '{}' has no captions", record.id)));
        }
        for caption in &record.captions {
            if crate::text::tokenize(caption).is_empty() {
                return Err(Error::Data(format!(
                    "record '{}' has an empty caption after tokenization",
                    record.id
                )));
            }
        }
        for rel in [&record.before, &record.after] {
            let img = root.join(rel);
            if !img.is_file() {
                return Err(Error::Data(format!(
                    "record '{}': missing image file {}",
                    record.id,
                    img.display()
                )));
            }
        }
        records.push(record);
    }
    Ok(Manifest { root, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_minichange, GenSpec};

    fn write_lines(dir: &Path, lines: &[&str]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn touch_image(dir: &Path, name: &str) {
        let buf = crate::data::RgbBuf::new(8);
        buf.save_png(&dir.join(name)).unwrap();
    }

    fn record_line(id: &str, img: &str) -> String {
        format!(
            r#"{{"id":"{id}","before":"{img}","after":"{img}","captions":["no change"],"change_type":"distractor","split":"train"}}"#
        )
    }

    #[test]
    fn loads_valid_records() {
        let dir = tempfile::tempdir().unwrap();
        touch_image(dir.path(), "x.png");
        let lines: Vec<String> = (0..3).map(|i| record_line(&format!("r{i}"), "x.png")).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let path = write_lines(dir.path(), &refs);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.records.len(), 3);
    }

    #[test]
    fn duplicate_id_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        touch_image(dir.path(), "x.png");
        let l = record_line("dup", "x.png");
        let path = write_lines(dir.path(), &[&l, &l]);
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("dup"), "{err}");
    }

    #[test]
    fn parse_error_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        touch_image(dir.path(), "x.png");
        let good = record_line("a", "x.png");
        let path = write_lines(dir.path(), &[&good, "{not json"]);
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_image_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let l = record_line("a", "absent.png");
        let path = write_lines(dir.path(), &[&l]);
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("absent.png"), "{err}");
    }

    #[test]
    fn generated_manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GenSpec {
            seed: 3,
            n_train: 8,
            n_val: 4,
            n_test: 4,
            image_size: 32,
        };
        let written = generate_minichange(&spec, dir.path()).unwrap();
        let loaded = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(written.records, loaded.records);
    }
}
