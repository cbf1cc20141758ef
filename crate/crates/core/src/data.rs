//! Series ingestion, sample splits and versioned result files.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Daily log prices and implied variances on a trading-day calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSeries {
    pub dates: Vec<NaiveDate>,
    pub x: Vec<f64>,
    pub iv: Vec<f64>,
}

impl ObservedSeries {
    /// Validating constructor.
    pub fn new(dates: Vec<NaiveDate>, x: Vec<f64>, iv: Vec<f64>) -> Result<Self> {
        if dates.len() != x.len() || x.len() != iv.len() {
            return Err(Error::Malformed(format!(
                "column lengths differ: {} dates, {} prices, {} variances",
                dates.len(),
                x.len(),
                iv.len()
            )));
        }
        for i in 0..x.len() {
            if i > 0 && dates[i] <= dates[i - 1] {
                return Err(Error::Malformed(format!(
                    "dates not strictly increasing at row {i} ({} after {})",
                    dates[i],
                    dates[i - 1]
                )));
            }
            if !x[i].is_finite() {
                return Err(Error::Malformed(format!("non-finite log price at row {i}")));
            }
            if !(iv[i] > 0.0) || !iv[i].is_finite() {
                return Err(Error::Malformed(format!("implied variance must be positive at row {i}")));
            }
        }
        Ok(ObservedSeries { dates, x, iv })
    }

    /// Series on consecutive weekdays starting at `start`.
    pub fn with_weekday_calendar(start: NaiveDate, x: Vec<f64>, iv: Vec<f64>) -> Result<Self> {
        let dates = weekday_calendar(start, x.len());
        ObservedSeries::new(dates, x, iv)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Rows `range` as a new series.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ObservedSeries {
        ObservedSeries {
            dates: self.dates[range.clone()].to_vec(),
            x: self.x[range.clone()].to_vec(),
            iv: self.iv[range].to_vec(),
        }
    }
}

/// `n` weekdays starting at the first weekday on or after `start`.
pub fn weekday_calendar(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    use chrono::{Datelike, Weekday};
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VxoUnit {
    /// Volatility points, e.g. `20.5`.
    Percent,
    /// Decimal volatility, e.g. `0.205`.
    Decimal,
}

impl VxoUnit {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "percent" => Ok(VxoUnit::Percent),
            "decimal" => Ok(VxoUnit::Decimal),
            other => Err(Error::Config(format!("vxo_unit must be `percent` or `decimal`, got `{other}`"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VxoUnit::Percent => "percent",
            VxoUnit::Decimal => "decimal",
        }
    }

    /// Implied variance from a quoted volatility.
    pub fn to_variance(self, vxo: f64) -> f64 {
        let vol = match self {
            VxoUnit::Percent => vxo / 100.0,
            VxoUnit::Decimal => vxo,
        };
        vol * vol
    }

    pub fn from_variance(self, iv: f64) -> f64 {
        let vol = iv.sqrt();
        match self {
            VxoUnit::Percent => 100.0 * vol,
            VxoUnit::Decimal => vol,
        }
    }
}

/// How the input columns are to be read. Both fields are mandatory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub vxo_unit: VxoUnit,
    pub price_is_log: bool,
}

#[derive(Debug, Deserialize)]
struct Row {
    date: String,
    price: String,
    vxo: String,
}

/// Reads a `date,price,vxo` file. Errors carry the 1-based file line.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<ObservedSeries> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, &path.display().to_string(), schema)
}

pub fn parse_csv(text: &str, origin: &str, schema: &CsvSchema) -> Result<ObservedSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let err = |line: usize, message: String| Error::Parse { path: origin.to_string(), line, message };
    {
        let headers = reader.headers()?;
        let names: Vec<&str> = headers.iter().collect();
        if names != ["date", "price", "vxo"] {
            return Err(err(1, format!("expected header `date,price,vxo`, found `{}`", names.join(","))));
        }
    }
    let (mut dates, mut x, mut iv) = (Vec::new(), Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: Row = rec.deserialize(None).map_err(|e| err(line, e.to_string()))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| err(line, format!("bad date `{}`: {e}", row.date)))?;
        let price: f64 = row.price.parse().map_err(|_| err(line, format!("bad price `{}`", row.price)))?;
        let vxo: f64 = row.vxo.parse().map_err(|_| err(line, format!("bad vxo `{}`", row.vxo)))?;
        if let Some(prev) = dates.last() {
            if date == *prev {
                return Err(err(line, format!("duplicate date {date}")));
            }
            if date < *prev {
                return Err(err(line, format!("date {date} precedes {prev}")));
            }
        }
        if !(vxo > 0.0) || !vxo.is_finite() {
            return Err(err(line, format!("vxo must be positive, got {vxo}")));
        }
        let logp = if schema.price_is_log {
            price
        } else {
            if !(price > 0.0) {
                return Err(err(line, format!("price must be positive, got {price}")));
            }
            price.ln()
        };
        if !logp.is_finite() {
            return Err(err(line, "non-finite price".into()));
        }
        dates.push(date);
        x.push(logp);
        iv.push(schema.vxo_unit.to_variance(vxo));
    }
    ObservedSeries::new(dates, x, iv)
}

/// Writes the series in the input schema. Prices are written in the form the
/// schema declares.
pub fn write_csv(series: &ObservedSeries, schema: &CsvSchema) -> String {
    let mut out = String::from("date,price,vxo\n");
    for i in 0..series.len() {
        let price = if schema.price_is_log { series.x[i] } else { series.x[i].exp() };
        let vxo = schema.vxo_unit.from_variance(series.iv[i]);
        out.push_str(&format!("{},{},{}\n", series.dates[i].format("%Y-%m-%d"), price, vxo));
    }
    out
}

/// In-sample and out-of-sample row ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub in_sample: std::ops::Range<usize>,
    pub out_sample: std::ops::Range<usize>,
}

pub fn default_split_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(1999, 12, 31).expect("valid date")
}

/// Partitions at the first date strictly after `split_date`.
pub fn split(series: &ObservedSeries, split_date: NaiveDate) -> Result<SampleSplit> {
    let (first, last) = match (series.dates.first(), series.dates.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::InsufficientData { needed: 1, got: 0 }),
    };
    if split_date < first || split_date > last {
        return Err(Error::Config(format!("split date {split_date} outside the sample {first}..{last}")));
    }
    let k = series.dates.partition_point(|d| *d <= split_date);
    Ok(SampleSplit { in_sample: 0..k, out_sample: k..series.len() })
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    payload: T,
}

/// Pretty JSON with a schema-version envelope.
pub fn to_json<T: Serialize>(kind: &str, value: &T) -> Result<String> {
    let env = Envelope { schema_version: SCHEMA_VERSION, kind: kind.to_string(), payload: value };
    let mut s = serde_json::to_string_pretty(&env)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Malformed("missing schema_version".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion { found: version as u32, expected: SCHEMA_VERSION });
    }
    let found = raw.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::Malformed(format!("expected a `{kind}` file, found `{found}`")));
    }
    let env: Envelope<T> = serde_json::from_value(raw)?;
    Ok(env.payload)
}

pub fn save_results<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    fs::write(path, to_json(kind, value)?)?;
    Ok(())
}

pub fn load_results<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    from_json(kind, &fs::read_to_string(path)?)
}
