use std::collections::HashMap;
use std::io::{Read, Write};

use super::{ContractPanel, ContractRecord, Provenance};
use crate::error::{Error, Result, RowIssue};

/// Record fields addressable through a [`ColumnMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    SchoolId,
    Year,
    Participant,
    Price,
    Bandwidth,
    Isp,
    Region,
    Category,
    Transport,
    NIsps,
    SchoolType,
    SubsidyRate,
}

impl Field {
    pub const ALL: [Field; 12] = [
        Field::SchoolId,
        Field::Year,
        Field::Participant,
        Field::Price,
        Field::Bandwidth,
        Field::Isp,
        Field::Region,
        Field::Category,
        Field::Transport,
        Field::NIsps,
        Field::SchoolType,
        Field::SubsidyRate,
    ];

    /// Canonical column name.
    pub fn column(self) -> &'static str {
        match self {
            Field::SchoolId => "school_id",
            Field::Year => "year",
            Field::Participant => "participant",
            Field::Price => "price_per_mbps",
            Field::Bandwidth => "bandwidth_mbps",
            Field::Isp => "isp",
            Field::Region => "region",
            Field::Category => "category",
            Field::Transport => "transport",
            Field::NIsps => "n_isps",
            Field::SchoolType => "school_type",
            Field::SubsidyRate => "subsidy_rate",
        }
    }

    fn required(self) -> bool {
        self != Field::SubsidyRate
    }
}

/// Maps record fields to header names in the source file.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    names: HashMap<Field, String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { names: Field::ALL.iter().map(|&f| (f, f.column().to_string())).collect() }
    }
}

impl ColumnMap {
    pub fn rename(mut self, field: Field, header: impl Into<String>) -> Self {
        self.names.insert(field, header.into());
        self
    }

    pub fn header(&self, field: Field) -> &str {
        &self.names[&field]
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Drop records priced above this percentile (0, 100] of the loaded prices.
    pub price_percentile: Option<f64>,
}

/// Percentile with linear interpolation between order statistics.
pub(crate) fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = pct / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" | "t" => Ok(true),
        "false" | "0" | "no" | "n" | "f" => Ok(false),
        other => Err(format!("invalid participant flag '{other}'")),
    }
}

/// Reads a contract CSV. Rows with bad values or invariant breaches are
/// collected and reported together as a validation error.
pub fn load_contracts<R: Read>(source: R, columns: &ColumnMap, options: &LoadOptions) -> Result<ContractPanel> {
    if let Some(p) = options.price_percentile {
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::domain(format!("price percentile {p} outside (0, 100]")));
        }
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut index = HashMap::new();
    let mut missing = Vec::new();
    for field in Field::ALL {
        let name = columns.header(field);
        match headers.iter().position(|h| h == name) {
            Some(i) => {
                index.insert(field, i);
            }
            None if field.required() => missing.push(name.to_string()),
            None => {}
        }
    }
    if !missing.is_empty() {
        return Err(Error::Parse { line: 1, message: format!("missing required columns: {}", missing.join(", ")) });
    }

    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut issues = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let get = |f: Field| index.get(&f).and_then(|&i| row.get(i)).unwrap_or("");
        let mut row_issues = Vec::new();
        macro_rules! parse {
            ($field:expr, $parse:expr) => {
                match $parse(get($field)) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        row_issues.push(format!("{}: {}", columns.header($field), e));
                        None
                    }
                }
            };
        }
        let year = parse!(Field::Year, |s: &str| s.parse::<u16>().map_err(|e| e.to_string()));
        let participant = parse!(Field::Participant, parse_bool);
        let price = parse!(Field::Price, |s: &str| s.parse::<f64>().map_err(|e| e.to_string()));
        let bandwidth = parse!(Field::Bandwidth, |s: &str| s.parse::<f64>().map_err(|e| e.to_string()));
        let region = parse!(Field::Region, str::parse);
        let category = parse!(Field::Category, str::parse);
        let transport = parse!(Field::Transport, str::parse);
        let n_isps = parse!(Field::NIsps, |s: &str| s.parse::<u32>().map_err(|e| e.to_string()));
        let subsidy_rate = parse!(Field::SubsidyRate, |s: &str| -> std::result::Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| e.to_string())
            }
        });
        if !row_issues.is_empty() {
            issues.extend(row_issues.into_iter().map(|message| RowIssue { line, message }));
            continue;
        }
        let record = ContractRecord {
            school_id: get(Field::SchoolId).to_string(),
            year: year.unwrap(),
            participant: participant.unwrap(),
            price: price.unwrap(),
            bandwidth: bandwidth.unwrap(),
            isp: get(Field::Isp).to_string(),
            region: region.unwrap(),
            category: category.unwrap(),
            transport: transport.unwrap(),
            n_isps: n_isps.unwrap(),
            school_type: get(Field::SchoolType).to_string(),
            subsidy_rate: subsidy_rate.unwrap(),
        };
        let problems = record.problems();
        if problems.is_empty() {
            records.push(record);
            lines.push(line);
        } else {
            issues.extend(problems.into_iter().map(|message| RowIssue { line, message }));
        }
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }

    if let (Some(pct), false) = (options.price_percentile, records.is_empty()) {
        let prices: Vec<f64> = records.iter().map(|r| r.price).collect();
        let threshold = percentile(&prices, pct);
        (records, lines) = records.into_iter().zip(lines).filter(|(r, _)| r.price <= threshold).unzip();
    }

    ContractPanel::new(records, Provenance::Loaded).map_err(|e| match e {
        // Re-map positional line numbers to the source file's lines.
        Error::Validation(issues) => Error::Validation(
            issues.into_iter().map(|i| RowIssue { line: lines[i.line - 2], message: i.message }).collect(),
        ),
        other => other,
    })
}

/// Writes the canonical CSV layout; `load_contracts` with the default map
/// reads it back unchanged.
pub fn write_contracts<W: Write>(panel: &ContractPanel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(Field::ALL.iter().map(|f| f.column()))?;
    for r in panel.records() {
        w.write_record([
            r.school_id.clone(),
            r.year.to_string(),
            r.participant.to_string(),
            r.price.to_string(),
            r.bandwidth.to_string(),
            r.isp.clone(),
            r.region.to_string(),
            r.category.to_string(),
            r.transport.to_string(),
            r.n_isps.to_string(),
            r.school_type.clone(),
            r.subsidy_rate.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
