//! Canonical journey file.
//!
//! Line-delimited JSON. The first line is a header
//! `{"format_version":1,"kind":"journeys","count":N}`; each following line is
//! one [`Journey`] record:
//!
//! ```text
//! {"id":"u7#0","user_id":"u7","touchpoints":[{"covariates":[3,1,5],"channel":2,
//!   "click":false,"cost":0.0104,"timestamp":81234}],"converted":true}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::types::Journey;
use crate::error::{Error, Result};

pub const JOURNEY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JourneyHeader {
    format_version: u32,
    kind: String,
    count: usize,
}

pub fn write_journeys(path: &Path, journeys: &[Journey]) -> Result<()> {
    let header = JourneyHeader {
        format_version: JOURNEY_FORMAT_VERSION,
        kind: "journeys".into(),
        count: journeys.len(),
    };
    write_jsonl(path, &header, journeys)
}

pub fn read_journeys(path: &Path) -> Result<Vec<Journey>> {
    let (header, records): (JourneyHeader, Vec<Journey>) = read_jsonl(path)?;
    let ctx = || path.display().to_string();
    if header.format_version != JOURNEY_FORMAT_VERSION || header.kind != "journeys" {
        return Err(Error::format(
            ctx(),
            format!("unsupported header: kind `{}` version {}", header.kind, header.format_version),
        ));
    }
    if header.count != records.len() {
        return Err(Error::format(
            ctx(),
            format!("header announces {} journeys, found {}", header.count, records.len()),
        ));
    }
    Ok(records)
}

/// Writes a header line followed by one JSON line per record.
pub fn write_jsonl<H: Serialize, T: Serialize>(path: &Path, header: &H, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, header).map_err(|e| Error::format(path.display().to_string(), e))?;
    w.write_all(b"\n").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::format(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl<H: DeserializeOwned, T: DeserializeOwned>(path: &Path) -> Result<(H, Vec<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let ctx = |line: usize| format!("{}:{line}", path.display());
    let first = lines
        .next()
        .ok_or_else(|| Error::format(ctx(1), "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let header = serde_json::from_str(&first).map_err(|e| Error::format(ctx(1), e))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::format(ctx(i + 2), e))?);
    }
    Ok((header, records))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))
}

/// Journey ids of each partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Resolves the manifest's ids against `journeys`, preserving manifest order.
    pub fn resolve(&self, journeys: &[Journey]) -> Result<(Vec<Journey>, Vec<Journey>, Vec<Journey>)> {
        let by_id: std::collections::HashMap<&str, &Journey> =
            journeys.iter().map(|j| (j.id.as_str(), j)).collect();
        let pick = |ids: &[String]| {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|j| (*j).clone())
                        .ok_or_else(|| Error::UnknownJourney(id.clone()))
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok((pick(&self.train)?, pick(&self.validation)?, pick(&self.test)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticConfig};

    #[test]
    fn journey_file_round_trips() {
        let (js, _) = generate_synthetic(&SyntheticConfig {
            num_users: 50,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journeys.jsonl");
        write_journeys(&path, &js).unwrap();
        assert_eq!(read_journeys(&path).unwrap(), js);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("{\"format_version\":1,\"kind\":\"journeys\",\"count\":50}\n"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        std::fs::write(&path, "{\"format_version\":1,\"kind\":\"journeys\",\"count\":2}\n").unwrap();
        assert!(read_journeys(&path).is_err());
        std::fs::write(&path, "{\"format_version\":9,\"kind\":\"journeys\",\"count\":0}\n").unwrap();
        assert!(read_journeys(&path).is_err());
    }
}
