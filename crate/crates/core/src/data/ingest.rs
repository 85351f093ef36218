use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::Impression;
use crate::error::{Error, Result};

/// Names the log columns that feed each [`Impression`] field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub delimiter: char,
    pub timestamp: String,
    pub user_id: String,
    pub channel_id: String,
    pub click: String,
    pub cost: String,
    pub conversion_id: String,
    /// Values of the conversion column meaning "no conversion".
    pub no_conversion: Vec<String>,
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    /// Column names of the public Criteo attribution log.
    fn default() -> Self {
        ColumnMap {
            delimiter: '\t',
            timestamp: "timestamp".into(),
            user_id: "uid".into(),
            channel_id: "campaign".into(),
            click: "click".into(),
            cost: "cost".into(),
            conversion_id: "conversion_id".into(),
            no_conversion: vec!["".into(), "-1".into()],
            covariates: (1..=9).map(|i| format!("cat{i}")).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestReport {
    /// Sorted by `(user_id, timestamp)`, file order within ties.
    pub impressions: Vec<Impression>,
    pub malformed: usize,
}

struct Columns {
    timestamp: usize,
    user_id: usize,
    channel_id: usize,
    click: usize,
    cost: usize,
    conversion_id: usize,
    covariates: Vec<usize>,
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns, map: &ColumnMap) -> Option<Impression> {
    let get = |i: usize| rec.get(i).map(str::trim);
    let timestamp = get(cols.timestamp)?.parse::<i64>().ok()?;
    let click = match get(cols.click)? {
        "0" => false,
        "1" => true,
        _ => return None,
    };
    let cost = get(cols.cost)?.parse::<f64>().ok().filter(|c| c.is_finite() && *c >= 0.0)?;
    let conv = get(cols.conversion_id)?;
    let conversion_id = if map.no_conversion.iter().any(|v| v == conv) {
        None
    } else {
        Some(conv.to_string())
    };
    let covariates = cols
        .covariates
        .iter()
        .map(|&i| get(i).map(str::to_string))
        .collect::<Option<Vec<_>>>()?;
    Some(Impression {
        timestamp,
        user_id: get(cols.user_id)?.to_string(),
        channel_id: get(cols.channel_id)?.to_string(),
        click,
        cost,
        conversion_id,
        covariates,
    })
}

/// Reads a delimited impression log with a header row.
///
/// Rows that fail to parse are skipped and counted in
/// [`IngestReport::malformed`].
pub fn ingest_log(path: &Path, map: &ColumnMap) -> Result<IngestReport> {
    if !map.delimiter.is_ascii() {
        return Err(Error::invalid(format!("delimiter {:?} is not ASCII", map.delimiter)));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(map.delimiter as u8)
        .flexible(true)
        .from_reader(file);
    let header: HashMap<String, usize> = reader
        .headers()
        .map_err(|e| Error::format(path.display().to_string(), e))?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let col = |name: &str| {
        header
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("{}: missing column `{name}`", path.display())))
    };
    let cols = Columns {
        timestamp: col(&map.timestamp)?,
        user_id: col(&map.user_id)?,
        channel_id: col(&map.channel_id)?,
        click: col(&map.click)?,
        cost: col(&map.cost)?,
        conversion_id: col(&map.conversion_id)?,
        covariates: map.covariates.iter().map(|c| col(c)).collect::<Result<_>>()?,
    };

    let mut impressions = Vec::new();
    let mut malformed = 0;
    for rec in reader.records() {
        match rec.ok().and_then(|r| parse_row(&r, &cols, map)) {
            Some(imp) => impressions.push(imp),
            None => malformed += 1,
        }
    }
    if malformed > 0 {
        log::warn!("{}: skipped {malformed} malformed rows", path.display());
    }
    impressions.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
    Ok(IngestReport {
        impressions,
        malformed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small_map() -> ColumnMap {
        ColumnMap {
            delimiter: ',',
            covariates: vec!["cat1".into(), "cat2".into()],
            ..ColumnMap::default()
        }
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "timestamp,uid,campaign,click,cost,conversion_id,cat1,cat2\n";

    #[test]
    fn well_formed_rows() {
        let f = write(&format!(
            "{HEADER}10,u1,c1,0,0.5,-1,a,b\n20,u1,c2,1,0.25,77,a,c\n5,u2,c1,0,1.0,,x,y\n"
        ));
        let r = ingest_log(f.path(), &small_map()).unwrap();
        assert_eq!(r.impressions.len(), 3);
        assert_eq!(r.malformed, 0);
        assert_eq!(r.impressions[1].conversion_id.as_deref(), Some("77"));
        assert!(r.impressions[1].click);
        assert_eq!(r.impressions[2].conversion_id, None);
    }

    #[test]
    fn non_numeric_cost_is_skipped() {
        let f = write(&format!("{HEADER}10,u1,c1,0,abc,-1,a,b\n20,u1,c1,0,1.0,-1,a,b\n"));
        let r = ingest_log(f.path(), &small_map()).unwrap();
        assert_eq!(r.impressions.len(), 1);
        assert_eq!(r.malformed, 1);
    }

    #[test]
    fn interleaved_users_are_grouped_and_time_sorted() {
        let f = write(&format!(
            "{HEADER}30,u2,c1,0,1,-1,a,b\n20,u1,c1,0,1,-1,a,b\n10,u2,c1,0,1,-1,a,b\n5,u1,c1,0,1,-1,a,b\n"
        ));
        let r = ingest_log(f.path(), &small_map()).unwrap();
        let order: Vec<_> = r
            .impressions
            .iter()
            .map(|i| (i.user_id.as_str(), i.timestamp))
            .collect();
        assert_eq!(order, vec![("u1", 5), ("u1", 20), ("u2", 10), ("u2", 30)]);
    }

    #[test]
    fn missing_column_and_missing_file_are_rejected() {
        let f = write("timestamp,uid\n1,u\n");
        let err = ingest_log(f.path(), &small_map()).unwrap_err();
        assert!(err.to_string().contains("missing column"));
        assert!(matches!(
            ingest_log(Path::new("/nonexistent/log.tsv"), &small_map()),
            Err(Error::Io { .. })
        ));
    }
}
