//! School-year broadband contract records.
//!
//! A panel holds at most one record per school and year. Participation in
//! the purchasing consortium is a school-level attribute, so both records of
//! a participant carry `participant = true`.

mod io;
mod screen;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowIssue};

pub use io::{load_contracts, write_contracts, ColumnMap, Field, LoadOptions};
pub use screen::{
    override_subsidy_rates, welfare_sample, welfare_sample_with_report, ScreenReport, SubsidyTargets,
};
pub use synth::{synthesize_panel, Calibration, CellMoments, InjectedEffects, SynthesisOptions};

pub const PRE_YEAR: u16 = 2014;
pub const POST_YEAR: u16 = 2015;
pub const SUBSIDY_MIN: f64 = 0.2;
pub const SUBSIDY_MAX: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    Central,
    Northeast,
    Northwest,
    South,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Central, Region::Northeast, Region::Northwest, Region::South];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Central => "Central",
            Region::Northeast => "Northeast",
            Region::Northwest => "Northwest",
            Region::South => "South",
        }
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "central" | "cent." | "cent" => Ok(Region::Central),
            "northeast" | "n.e." | "ne" => Ok(Region::Northeast),
            "northwest" | "n.w." | "nw" => Ok(Region::Northwest),
            "south" | "southern" => Ok(Region::South),
            other => Err(format!("unknown region '{other}'")),
        }
    }
}

/// Consortium product: basic connection (A) or dedicated hub transport (D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    A,
    D,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::A => "A",
            Category::D => "D",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "A" | "a" => Ok(Category::A),
            "D" | "d" => Ok(Category::D),
            other => Err(format!("unknown category '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Fiber,
    Coaxial,
    Other,
}

impl Transport {
    pub const ALL: [Transport; 3] = [Transport::Fiber, Transport::Coaxial, Transport::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Fiber => "fiber",
            Transport::Coaxial => "coaxial",
            Transport::Other => "other",
        }
    }
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fiber" => Ok(Transport::Fiber),
            "coaxial" | "coax" | "cable" => Ok(Transport::Coaxial),
            "other" | "dsl" => Ok(Transport::Other),
            other => Err(format!("unknown transport '{other}'")),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One school's contract in one year. Prices are dollars per Mbps per month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractRecord {
    pub school_id: String,
    pub year: u16,
    pub participant: bool,
    pub price: f64,
    pub bandwidth: f64,
    pub isp: String,
    pub region: Region,
    pub category: Category,
    pub transport: Transport,
    pub n_isps: u32,
    pub school_type: String,
    /// E-rate reimbursement share; may be absent in loaded data.
    pub subsidy_rate: Option<f64>,
}

impl ContractRecord {
    /// Checks the record-level invariants, returning one message per breach.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.school_id.trim().is_empty() {
            out.push("empty school_id".to_string());
        }
        if self.year != PRE_YEAR && self.year != POST_YEAR {
            out.push(format!("year {} not in {{{PRE_YEAR}, {POST_YEAR}}}", self.year));
        }
        if !(self.price.is_finite() && self.price > 0.0) {
            out.push(format!("price {} must be positive", self.price));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            out.push(format!("bandwidth {} must be positive", self.bandwidth));
        }
        if let Some(rho) = self.subsidy_rate {
            if !(SUBSIDY_MIN..=SUBSIDY_MAX).contains(&rho) {
                out.push(format!("subsidy_rate {rho} outside [{SUBSIDY_MIN}, {SUBSIDY_MAX}]"));
            }
        }
        out
    }

    pub fn is_post(&self) -> bool {
        self.year == POST_YEAR
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Loaded,
    Synthetic { seed: u64, calibration_id: String },
    Derived { from: Box<Provenance>, step: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractPanel {
    records: Vec<ContractRecord>,
    provenance: Provenance,
}

/// A school's pre- and post-period records.
#[derive(Debug, Clone, Copy)]
pub struct SchoolPair<'a> {
    pub pre: &'a ContractRecord,
    pub post: &'a ContractRecord,
}

impl ContractPanel {
    /// Validates every invariant; issue line numbers follow the CSV layout
    /// (header on line 1, record `k` on line `k + 2`).
    pub fn new(records: Vec<ContractRecord>, provenance: Provenance) -> Result<Self> {
        let mut issues = Vec::new();
        let mut seen: HashMap<(&str, u16), usize> = HashMap::new();
        let mut status: HashMap<&str, (bool, usize)> = HashMap::new();
        for (k, r) in records.iter().enumerate() {
            let line = k + 2;
            for message in r.problems() {
                issues.push(RowIssue { line, message });
            }
            if let Some(first) = seen.insert((r.school_id.as_str(), r.year), line) {
                issues.push(RowIssue {
                    line,
                    message: format!(
                        "duplicate record for school '{}' in {} (first on line {first})",
                        r.school_id, r.year
                    ),
                });
            }
            match status.get(r.school_id.as_str()) {
                Some(&(p, first)) if p != r.participant => issues.push(RowIssue {
                    line,
                    message: format!(
                        "school '{}' participant flag disagrees with line {first}",
                        r.school_id
                    ),
                }),
                Some(_) => {}
                None => {
                    status.insert(r.school_id.as_str(), (r.participant, line));
                }
            }
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(Self { records, provenance })
    }

    pub fn records(&self) -> &[ContractRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ContractRecord> {
        self.records
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keeps records matching `keep`; invariants are preserved by construction.
    pub fn filter<F>(&self, step: &str, keep: F) -> ContractPanel
    where
        F: Fn(&ContractRecord) -> bool,
    {
        ContractPanel {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: Provenance::Derived { from: Box::new(self.provenance.clone()), step: step.to_string() },
        }
    }

    pub fn participants(&self) -> ContractPanel {
        self.filter("participants", |r| r.participant)
    }

    pub fn nonparticipants(&self) -> ContractPanel {
        self.filter("nonparticipants", |r| !r.participant)
    }

    pub fn year(&self, year: u16) -> ContractPanel {
        self.filter(&format!("year={year}"), |r| r.year == year)
    }

    pub fn category(&self, category: Category) -> ContractPanel {
        self.filter(&format!("category={category}"), |r| r.category == category)
    }

    pub fn has_both_years(&self) -> bool {
        let pre = self.records.iter().any(|r| r.year == PRE_YEAR);
        let post = self.records.iter().any(|r| r.year == POST_YEAR);
        pre && post
    }

    /// Records grouped by school, ordered by school id.
    pub fn by_school(&self) -> BTreeMap<&str, Vec<&ContractRecord>> {
        let mut map: BTreeMap<&str, Vec<&ContractRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.school_id.as_str()).or_default().push(r);
        }
        map
    }

    /// Schools observed in both years, ordered by school id.
    pub fn school_pairs(&self) -> Vec<SchoolPair<'_>> {
        self.by_school()
            .into_values()
            .filter_map(|rs| {
                let pre = rs.iter().find(|r| r.year == PRE_YEAR)?;
                let post = rs.iter().find(|r| r.year == POST_YEAR)?;
                Some(SchoolPair { pre, post })
            })
            .collect()
    }

    pub fn write_json<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}
