//! Output format generators: CSV (RFC 4180) and a flat element-per-row XML,
//! optionally gzip-wrapped.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{OutputFormat, Row};

/// Column order: every field name in first-seen order across all rows.
pub fn columns(rows: &[Row]) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    for row in rows {
        for k in row.keys() {
            if !cols.iter().any(|c| c == k) {
                cols.push(k.clone());
            }
        }
    }
    cols
}

/// Scalar text for a cell; null (and a missing field) is empty.
pub fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

pub fn to_csv(rows: &[Row]) -> Result<Vec<u8>> {
    let cols = columns(rows);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::new(crate::error::ErrorCode::Internal, e.to_string());
    if !cols.is_empty() {
        w.write_record(&cols).map_err(csv_err)?;
    }
    for row in rows {
        let cells: Vec<String> = cols
            .iter()
            .map(|c| row.get(c).map(scalar_text).unwrap_or_default())
            .collect();
        w.write_record(&cells).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::new(crate::error::ErrorCode::Internal, e.to_string()))
}

fn escape_xml(s: &str, out: &mut String) {
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
}

/// `<rows><row><field>value</field>...</row>...</rows>`. Null fields are
/// omitted.
pub fn to_xml(rows: &[Row]) -> Vec<u8> {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<rows>\n");
    for row in rows {
        out.push_str("  <row>");
        for (k, v) in row {
            if v.is_null() {
                continue;
            }
            out.push('<');
            out.push_str(k);
            out.push('>');
            escape_xml(&scalar_text(v), &mut out);
            out.push_str("</");
            out.push_str(k);
            out.push('>');
        }
        out.push_str("</row>\n");
    }
    out.push_str("</rows>\n");
    out.into_bytes()
}

pub fn gzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes)?;
    Ok(enc.finish()?)
}

pub fn gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out)?;
    Ok(out)
}

pub fn format_output(rows: &[Row], format: OutputFormat, zip: bool) -> Result<Vec<u8>> {
    let plain = match format {
        OutputFormat::Csv => to_csv(rows)?,
        OutputFormat::Xml => to_xml(rows),
    };
    if zip {
        gzip(&plain)
    } else {
        Ok(plain)
    }
}
