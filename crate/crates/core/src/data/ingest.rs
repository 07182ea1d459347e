use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat};
use serde::{Deserialize, Serialize};

use super::{Channel, NormalizedSeries, RawSeries};
use crate::error::{Error, Result};

/// Column mapping of an input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "default_timestamp_column")]
    pub timestamp: String,
    pub value: String,
    #[serde(default)]
    pub exogenous: Vec<String>,
}

fn default_timestamp_column() -> String {
    "timestamp".into()
}

impl CsvSchema {
    pub fn new(value: &str) -> Self {
        Self {
            timestamp: default_timestamp_column(),
            value: value.into(),
            exogenous: Vec::new(),
        }
    }
}

const NAIVE_FORMATS: [&str; 6] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
];

/// Parses epoch seconds or an ISO-8601 timestamp. Timestamps without an
/// offset are read as UTC.
pub fn parse_timestamp(cell: &str) -> Option<i64> {
    let cell = cell.trim();
    if let Ok(secs) = cell.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(cell) {
        return Some(dt.timestamp());
    }
    NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(cell, f).ok())
        .map(|dt| dt.and_utc().timestamp())
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

fn parse_value(record: &csv::StringRecord, col: usize, row: usize, name: &str) -> Result<f64> {
    let cell = record.get(col).unwrap_or("").trim();
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        row,
        message: format!("column `{name}`: `{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column `{name}`: non-finite value"),
        });
    }
    Ok(v)
}

/// Reads a CSV with a header row. Rows are sorted by time; duplicate
/// timestamps and non-uniform steps are rejected.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RawSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let ts_col = column_index(&headers, &schema.timestamp)?;
    let value_col = column_index(&headers, &schema.value)?;
    let exo_cols = schema
        .exogenous
        .iter()
        .map(|name| column_index(&headers, name))
        .collect::<Result<Vec<_>>>()?;

    // (timestamp, value, exogenous values)
    let mut rows: Vec<(i64, f64, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Data rows are 1-based after the header.
        let row = i + 1;
        let record = record?;
        let cell = record.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(cell).ok_or_else(|| Error::Parse {
            row,
            message: format!("`{cell}` is not a timestamp"),
        })?;
        let value = parse_value(&record, value_col, row, &schema.value)?;
        let exo = exo_cols
            .iter()
            .zip(&schema.exogenous)
            .map(|(&c, name)| parse_value(&record, c, row, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push((ts, value, exo));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        let ts = DateTime::from_timestamp(w[0].0, 0)
            .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
            .unwrap_or_else(|| w[0].0.to_string());
        return Err(Error::Format(format!("duplicate timestamp {ts}")));
    }

    let timestamps = rows.iter().map(|r| r.0).collect();
    let values = rows.iter().map(|r| r.1).collect();
    let exogenous = schema
        .exogenous
        .iter()
        .enumerate()
        .map(|(k, name)| Channel {
            name: name.clone(),
            values: rows.iter().map(|r| r.2[k]).collect(),
        })
        .collect();
    RawSeries::new(timestamps, values, exogenous)
}

/// Writes normalized channels with the input layout
/// (`timestamp,<value>,<exogenous...>`).
pub fn write_normalized_csv<W: Write>(
    writer: W,
    series: &NormalizedSeries,
    schema: &CsvSchema,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.timestamp.clone(), schema.value.clone()];
    header.extend(series.exogenous.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for i in 0..series.len() {
        let ts = DateTime::from_timestamp(series.timestamps[i], 0)
            .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
            .unwrap_or_else(|| series.timestamps[i].to_string());
        let mut row = vec![ts, series.values[i].to_string()];
        row.extend(series.exogenous.iter().map(|c| c.values[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("normalized csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn half_hourly(rows: usize, with_demand: bool) -> String {
        let mut s = String::from(if with_demand {
            "timestamp,price,demand\n"
        } else {
            "timestamp,price\n"
        });
        for i in 0..rows {
            let ts = 1_600_000_200 + i as i64 * 1800;
            let dt = DateTime::from_timestamp(ts, 0).unwrap().naive_utc();
            if with_demand {
                s.push_str(&format!("{},{},{}\n", dt.format("%Y-%m-%d %H:%M:%S"), 40 + i, 5000 + i));
            } else {
                s.push_str(&format!("{},{}\n", dt.format("%Y-%m-%dT%H:%M:%S"), 40 + i));
            }
        }
        s
    }

    #[test]
    fn loads_price_only() {
        let f = write(&half_hourly(48, false));
        let s = load_csv(f.path(), &CsvSchema::new("price")).unwrap();
        assert_eq!(s.len(), 48);
        assert!(s.exogenous().is_empty());
        assert_eq!(s.step(), Some(1800));
    }

    #[test]
    fn loads_with_demand() {
        let f = write(&half_hourly(96, true));
        let schema = CsvSchema {
            exogenous: vec!["demand".into()],
            ..CsvSchema::new("price")
        };
        let s = load_csv(f.path(), &schema).unwrap();
        assert_eq!(s.exogenous().len(), 1);
        assert_eq!(s.exogenous()[0].values.len(), 96);
    }

    #[test]
    fn sorts_unordered_rows() {
        let f = write("timestamp,price\n7200,3\n0,1\n3600,2\n");
        let s = load_csv(f.path(), &CsvSchema::new("price")).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn duplicate_timestamp_is_named() {
        let f = write("timestamp,price\n2021-01-01T00:00:00,1\n2021-01-01T00:00:00,2\n2021-01-01T01:00:00,3\n");
        match load_csv(f.path(), &CsvSchema::new("price")) {
            Err(Error::Format(msg)) => assert!(msg.contains("2021-01-01T00:00:00"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_and_parse_errors() {
        let f = write("timestamp,price\n0,1\n");
        assert!(matches!(load_csv(f.path(), &CsvSchema::new("rrp")), Err(Error::Schema(_))));
        let f = write("timestamp,price\n0,1\n3600,abc\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::new("price")),
            Err(Error::Parse { row: 2, .. })
        ));
        let f = write("timestamp,price\n0,1\n3600,2\n9000,3\n");
        assert!(matches!(load_csv(f.path(), &CsvSchema::new("price")), Err(Error::Format(_))));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &CsvSchema::new("price")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_timestamp("3600"), Some(3600));
        assert_eq!(parse_timestamp("1970-01-01T01:00:00Z"), Some(3600));
        assert_eq!(parse_timestamp("1970-01-01 01:00"), Some(3600));
        assert_eq!(parse_timestamp("1970/01/01 01:00:00"), Some(3600));
        assert_eq!(parse_timestamp("yesterday"), None);
    }
}
