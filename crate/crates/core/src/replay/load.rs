use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps CSV column names to the roles the replay pipeline needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaySchema {
    pub customer_id: String,
    pub vendor_id: String,
    /// Numeric feature columns used as-is (before scaling).
    pub features: Vec<String>,
    pub customer_registered: String,
    pub vendor_registered: String,
    pub customer_latitude: String,
    pub customer_longitude: String,
    pub vendor_latitude: String,
    pub vendor_longitude: String,
    /// Per-row date that register ages are measured against.
    pub order_date: Option<String>,
    /// Fallback reference date (`YYYY-MM-DD`) when there is no order date
    /// column. If both are absent the latest date in the data is used.
    pub reference_date: Option<String>,
    /// Column flagging training rows (`train`/`test`, `1`/`0`, `true`/`false`).
    pub split_column: Option<String>,
    /// Leading share of rows used for training when there is no split column.
    pub train_fraction: f64,
    /// chrono formats tried in order; a datetime format keeps only the date.
    pub date_formats: Vec<String>,
    /// Vendors to keep, in arm order. `None` keeps every vendor.
    pub vendors: Option<Vec<String>>,
}

impl Default for ReplaySchema {
    fn default() -> Self {
        let s = |v: &str| v.to_string();
        Self {
            customer_id: s("customer_id"),
            vendor_id: s("vendor_id"),
            features: [
                "item_count",
                "grand_total",
                "payment_mode",
                "driver_rating",
                "delivery_distance",
                "gender",
                "delivery_charge",
                "serving_distance",
                "preparation_time",
                "vendor_rating",
            ]
            .map(s)
            .to_vec(),
            customer_registered: s("customer_created_at"),
            vendor_registered: s("vendor_created_at"),
            customer_latitude: s("customer_latitude"),
            customer_longitude: s("customer_longitude"),
            vendor_latitude: s("vendor_latitude"),
            vendor_longitude: s("vendor_longitude"),
            order_date: Some(s("order_date")),
            reference_date: None,
            split_column: None,
            train_fraction: 0.1,
            date_formats: vec![s("%Y-%m-%d"), s("%Y-%m-%d %H:%M:%S")],
            vendors: None,
        }
    }
}

impl ReplaySchema {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidInput(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if self.features.is_empty() {
            return Err(Error::InvalidInput("schema lists no feature columns".into()));
        }
        if self.date_formats.is_empty() {
            return Err(Error::InvalidInput("schema lists no date formats".into()));
        }
        if let Some(v) = &self.vendors {
            if v.is_empty() {
                return Err(Error::InvalidInput("configured vendor set is empty".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn parse_date(&self, field: &str) -> Option<NaiveDate> {
        self.date_formats.iter().find_map(|fmt| {
            NaiveDate::parse_from_str(field, fmt)
                .ok()
                .or_else(|| NaiveDateTime::parse_from_str(field, fmt).ok().map(|dt| dt.date()))
        })
    }
}

/// One parsed CSV row. `None` marks an empty field.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub customer_id: String,
    pub vendor_id: String,
    pub features: Vec<Option<f64>>,
    pub customer_registered: Option<NaiveDate>,
    pub vendor_registered: Option<NaiveDate>,
    pub order_date: Option<NaiveDate>,
    pub customer_coords: Option<[f64; 2]>,
    pub vendor_coords: Option<[f64; 2]>,
    /// `Some(true)` for a training row when a split column is configured.
    pub training: Option<bool>,
}

/// Rows that survived parsing, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub rows: Vec<RawRow>,
    pub dropped_rows: usize,
    /// Up to ten example reasons for dropped rows.
    pub drop_reasons: Vec<String>,
}

impl RawTable {
    /// Distinct vendor ids with their row counts, most frequent first, then by id.
    pub fn vendor_counts(&self) -> Vec<(String, usize)> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for row in &self.rows {
            *counts.entry(&row.vendor_id).or_default() += 1;
        }
        let mut out: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

struct Columns {
    customer: usize,
    vendor: usize,
    features: Vec<usize>,
    customer_registered: usize,
    vendor_registered: usize,
    coords: [usize; 4],
    order_date: Option<usize>,
    split: Option<usize>,
}

fn locate(headers: &csv::StringRecord, schema: &ReplaySchema) -> Result<Columns> {
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let find =
        |name: &str| index.get(name).copied().ok_or_else(|| Error::Load(format!("missing required column `{name}`")));
    Ok(Columns {
        customer: find(&schema.customer_id)?,
        vendor: find(&schema.vendor_id)?,
        features: schema.features.iter().map(|f| find(f)).collect::<Result<_>>()?,
        customer_registered: find(&schema.customer_registered)?,
        vendor_registered: find(&schema.vendor_registered)?,
        coords: [
            find(&schema.customer_latitude)?,
            find(&schema.customer_longitude)?,
            find(&schema.vendor_latitude)?,
            find(&schema.vendor_longitude)?,
        ],
        order_date: schema.order_date.as_deref().map(find).transpose()?,
        split: schema.split_column.as_deref().map(find).transpose()?,
    })
}

fn parse_number(field: &str, column: &str) -> std::result::Result<Option<f64>, String> {
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("column `{column}`: cannot parse `{field}` as a number")),
    }
}

fn parse_flag(field: &str, column: &str) -> std::result::Result<bool, String> {
    match field.to_ascii_lowercase().as_str() {
        "train" | "training" | "1" | "true" | "yes" => Ok(true),
        "test" | "testing" | "0" | "false" | "no" => Ok(false),
        _ => Err(format!("column `{column}`: cannot parse `{field}` as a split flag")),
    }
}

fn parse_row(record: &csv::StringRecord, cols: &Columns, schema: &ReplaySchema) -> std::result::Result<RawRow, String> {
    let get = |i: usize| record.get(i).unwrap_or("").trim();
    let customer_id = get(cols.customer).to_string();
    let vendor_id = get(cols.vendor).to_string();
    if vendor_id.is_empty() {
        return Err("missing vendor id".into());
    }
    if customer_id.is_empty() {
        return Err("missing customer id".into());
    }
    let features = cols
        .features
        .iter()
        .zip(&schema.features)
        .map(|(&i, name)| parse_number(get(i), name))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let date = |i: usize, name: &str| -> std::result::Result<Option<NaiveDate>, String> {
        let field = get(i);
        if field.is_empty() {
            return Ok(None);
        }
        schema.parse_date(field).map(Some).ok_or_else(|| format!("column `{name}`: cannot parse `{field}` as a date"))
    };
    let names =
        [&schema.customer_latitude, &schema.customer_longitude, &schema.vendor_latitude, &schema.vendor_longitude];
    let mut coords = [None; 4];
    for k in 0..4 {
        coords[k] = parse_number(get(cols.coords[k]), names[k])?;
    }
    let pair = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(x, y)| [x, y]);
    Ok(RawRow {
        customer_id,
        vendor_id,
        features,
        customer_registered: date(cols.customer_registered, &schema.customer_registered)?,
        vendor_registered: date(cols.vendor_registered, &schema.vendor_registered)?,
        order_date: match cols.order_date {
            Some(i) => date(i, schema.order_date.as_deref().unwrap_or_default())?,
            None => None,
        },
        customer_coords: pair(coords[0], coords[1]),
        vendor_coords: pair(coords[2], coords[3]),
        training: match cols.split {
            Some(i) => Some(parse_flag(get(i), schema.split_column.as_deref().unwrap_or_default())?),
            None => None,
        },
    })
}

/// Reads and parses a CSV with a header row. Rows with an unparseable
/// required field or a missing id are dropped and counted.
pub fn read_table(path: &Path, schema: &ReplaySchema) -> Result<RawTable> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::Load(format!("cannot open {}: {e}", path.display())))?;
    read_table_from(file, schema)
}

pub fn read_table_from<R: std::io::Read>(reader: R, schema: &ReplaySchema) -> Result<RawTable> {
    schema.validate()?;
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let cols = locate(&headers, schema)?;
    let mut table = RawTable { rows: Vec::new(), dropped_rows: 0, drop_reasons: Vec::new() };
    for (line, record) in csv.records().enumerate() {
        let outcome = match record {
            Ok(record) => parse_row(&record, &cols, schema),
            Err(e) => Err(e.to_string()),
        };
        match outcome {
            Ok(row) => table.rows.push(row),
            Err(reason) => {
                table.dropped_rows += 1;
                log::debug!("dropping line {}: {reason}", line + 2);
                if table.drop_reasons.len() < 10 {
                    // +2: header row and 1-based numbering.
                    table.drop_reasons.push(format!("line {}: {reason}", line + 2));
                }
            }
        }
    }
    if table.dropped_rows > 0 {
        log::warn!("dropped {} malformed rows", table.dropped_rows);
    }
    Ok(table)
}
