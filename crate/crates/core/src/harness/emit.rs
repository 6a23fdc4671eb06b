use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// One emitted row. Field order is the column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub capacity_log2: u32,
    pub load_factor: f64,
    pub update_ratio: f64,
    pub threads: usize,
    /// Trial index, or -1 for the average of a cell.
    pub trial: i64,
    pub seed: u64,
    pub total_ops: u64,
    pub ops_per_us: f64,
    pub retries_per_op: f64,
    pub mean_probe: f64,
}

pub const COLUMNS: [&str; 10] = [
    "capacity_log2",
    "load_factor",
    "update_ratio",
    "threads",
    "trial",
    "seed",
    "total_ops",
    "ops_per_us",
    "retries_per_op",
    "mean_probe",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    JsonLines,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json-lines" => Ok(Format::JsonLines),
            other => Err(HarnessError::InvalidWorkload(format!("unknown format {other:?}"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::JsonLines => "json-lines",
        })
    }
}

/// Writes `records` in `format`; CSV gets a header row even when empty.
pub fn emit(records: &[Record], format: Format, out: impl Write) -> Result<(), HarnessError> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(COLUMNS)?;
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::JsonLines => write_json_lines(records, out)?,
    }
    Ok(())
}

/// One JSON object per line.
pub fn write_json_lines<T: Serialize>(items: &[T], mut out: impl Write) -> Result<(), HarnessError> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_json_lines(input: impl BufRead) -> Result<Vec<Record>, HarnessError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn parse_csv(input: impl Read) -> Result<Vec<Record>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Record> {
        vec![
            Record {
                capacity_log2: 18,
                load_factor: 0.6,
                update_ratio: 0.1,
                threads: 4,
                trial: 0,
                seed: 7,
                total_ops: 123_456,
                ops_per_us: 0.061728,
                retries_per_op: 1.0 / 3.0,
                mean_probe: 1.75,
            },
            Record {
                trial: -1,
                ops_per_us: 1e-9,
                ..sample_one()
            },
        ]
    }

    fn sample_one() -> Record {
        Record {
            capacity_log2: 10,
            load_factor: 0.2,
            update_ratio: 0.2,
            threads: 1,
            trial: 2,
            seed: u64::MAX,
            total_ops: 0,
            ops_per_us: 0.0,
            retries_per_op: 0.0,
            mean_probe: 0.0,
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_record() {
        let mut buf = Vec::new();
        emit(&sample()[..1], Format::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], COLUMNS.join(","));
    }

    #[test]
    fn both_formats_round_trip_to_identical_records() {
        let records = sample();
        let mut csv_buf = Vec::new();
        emit(&records, Format::Csv, &mut csv_buf).unwrap();
        let mut json_buf = Vec::new();
        emit(&records, Format::JsonLines, &mut json_buf).unwrap();
        let from_csv = parse_csv(csv_buf.as_slice()).unwrap();
        let from_json = parse_json_lines(json_buf.as_slice()).unwrap();
        assert_eq!(from_json, records);
        assert_eq!(from_csv, records);
    }

    #[test]
    fn json_keys_follow_column_order() {
        let mut buf = Vec::new();
        emit(&sample()[..1], Format::JsonLines, &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let positions: Vec<usize> = COLUMNS.iter().map(|c| line.find(&format!("\"{c}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn format_names_parse() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("json-lines".parse::<Format>().unwrap(), Format::JsonLines);
        assert!("xml".parse::<Format>().is_err());
    }

    #[test]
    fn unwritable_sink_is_an_io_error() {
        struct Broken;
        impl Write for Broken {
            fn write(&mut self, _: &[u8]) -> std::io::Result<usize> {
                Err(std::io::Error::other("closed"))
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        assert!(emit(&sample(), Format::JsonLines, Broken).is_err());
        assert!(emit(&sample(), Format::Csv, Broken).is_err());
    }
}
