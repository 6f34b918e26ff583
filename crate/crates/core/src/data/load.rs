use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{pkd_transform, AffinityRecord, DataError, Result};

/// Column names for the five record fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub drug_id: String,
    pub smiles: String,
    pub target_id: String,
    pub sequence: String,
    pub affinity: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            drug_id: "drug_id".into(),
            smiles: "smiles".into(),
            target_id: "target_id".into(),
            sequence: "sequence".into(),
            affinity: "affinity".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    #[default]
    FailFast,
    SkipAndReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AffinityTransform {
    #[default]
    AsIs,
    /// The column holds Kd in nanomolar; convert to pKd.
    KdNanomolarToPkd,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub schema: ColumnSchema,
    pub on_error: ErrorPolicy,
    pub affinity: AffinityTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based data row (the header is not counted).
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub records: Vec<AffinityRecord>,
    pub skipped: Vec<RowError>,
    pub delimiter: u8,
}

/// Tab if the header line contains one, otherwise comma.
pub fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

pub fn load_dataset(path: impl AsRef<Path>, options: &LoadOptions) -> Result<LoadOutcome> {
    let text = fs::read_to_string(path)?;
    read_records(text.as_bytes(), options)
}

pub fn read_records<R: Read>(mut reader: R, options: &LoadOptions) -> Result<LoadOutcome> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let delimiter = detect_delimiter(&text);
    let mut csv =
        csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).flexible(true).from_reader(text.as_bytes());
    let headers = csv.headers()?.clone();
    let schema = &options.schema;
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let cols = [
        column(&schema.drug_id)?,
        column(&schema.smiles)?,
        column(&schema.target_id)?,
        column(&schema.sequence)?,
        column(&schema.affinity)?,
    ];

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 1;
        let parsed =
            row.map_err(|e| e.to_string()).and_then(|row| parse_row(&row, &cols, &schema.affinity, options.affinity));
        match parsed {
            Ok(rec) => records.push(rec),
            Err(message) => match options.on_error {
                ErrorPolicy::FailFast => return Err(DataError::Row { row: row_no, message }),
                ErrorPolicy::SkipAndReport => skipped.push(RowError { row: row_no, message }),
            },
        }
    }
    Ok(LoadOutcome { records, skipped, delimiter })
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &[usize; 5],
    affinity_name: &str,
    transform: AffinityTransform,
) -> std::result::Result<AffinityRecord, String> {
    let field = |i: usize| row.get(cols[i]).map(str::trim).ok_or_else(|| format!("missing field {}", i + 1));
    let raw = field(4)?;
    let value: f64 = raw.parse().map_err(|_| format!("{affinity_name} value {raw:?} is not numeric"))?;
    let affinity = match transform {
        AffinityTransform::AsIs => value,
        AffinityTransform::KdNanomolarToPkd => pkd_transform(value).map_err(|e| e.to_string())?,
    };
    AffinityRecord::new(field(0)?, field(1)?, field(2)?, field(3)?, affinity).map_err(|e| e.to_string())
}

/// Writes records with the default column names followed by `extra` columns,
/// each holding one value per record.
pub fn write_records<W: Write>(
    writer: W,
    delimiter: u8,
    records: &[AffinityRecord],
    extra: &[(&str, Vec<String>)],
) -> Result<()> {
    for (name, values) in extra {
        if values.len() != records.len() {
            return Err(DataError::Parameter(format!(
                "column {name} has {} values for {} records",
                values.len(),
                records.len()
            )));
        }
    }
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    let mut header = vec!["drug_id", "smiles", "target_id", "sequence", "affinity"];
    header.extend(extra.iter().map(|(n, _)| *n));
    w.write_record(&header)?;
    for (i, r) in records.iter().enumerate() {
        let affinity = r.affinity.to_string();
        let mut row = vec![r.drug_id.as_str(), &r.smiles, &r.target_id, &r.sequence, &affinity];
        row.extend(extra.iter().map(|(_, v)| v[i].as_str()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
