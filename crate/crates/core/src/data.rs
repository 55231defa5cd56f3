//! Subject records, datasets and the long-format CSV they travel in.
//!
//! A dataset row is one observation: `subject_id,site,endpoint,time,baseline,value`.
//! Rows at time 0 carry the subject's baseline for that endpoint; every other
//! row carries a change-from-baseline value at a strictly positive time.
//! Leading `# key=value` lines before the header hold free-form metadata.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["subject_id", "site", "endpoint", "time", "baseline", "value"];

/// One of the two modelled endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    X,
    Y,
}

impl Endpoint {
    pub const BOTH: [Endpoint; 2] = [Endpoint::X, Endpoint::Y];

    pub fn index(self) -> usize {
        match self {
            Endpoint::X => 0,
            Endpoint::Y => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Endpoint::X => "x",
            Endpoint::Y => "y",
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single timed change-from-baseline value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(time: f64, value: f64) -> Self {
        Self { time, value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// 1-based site index.
    pub site: usize,
    pub baseline_x: f64,
    pub baseline_y: f64,
    pub series_x: Vec<Observation>,
    pub series_y: Vec<Observation>,
    /// Informational only; never read by the model.
    pub arm: Option<String>,
}

impl SubjectRecord {
    pub fn baseline(&self, e: Endpoint) -> f64 {
        match e {
            Endpoint::X => self.baseline_x,
            Endpoint::Y => self.baseline_y,
        }
    }

    pub fn series(&self, e: Endpoint) -> &[Observation] {
        match e {
            Endpoint::X => &self.series_x,
            Endpoint::Y => &self.series_y,
        }
    }

    pub fn n_observations(&self) -> usize {
        self.series_x.len() + self.series_y.len()
    }

    /// Time points observed on both endpoints, ascending.
    pub fn shared_times(&self) -> Vec<f64> {
        self.series_x.iter().filter(|o| self.series_y.iter().any(|p| p.time == o.time)).map(|o| o.time).collect()
    }

    /// The (x, y) pair observed at `time`, if both endpoints were recorded.
    pub fn pair_at(&self, time: f64) -> Option<(f64, f64)> {
        let x = self.series_x.iter().find(|o| o.time == time)?;
        let y = self.series_y.iter().find(|o| o.time == time)?;
        Some((x.value, y.value))
    }

    pub fn last_time(&self) -> Option<f64> {
        let lx = self.series_x.last().map(|o| o.time);
        let ly = self.series_y.last().map(|o| o.time);
        match (lx, ly) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    /// Number of sites; site indices run over `1..=n_sites`.
    pub n_sites: usize,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(SubjectRecord::n_observations).sum()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    /// Sorts subjects by id; series are kept in time order.
    pub fn canonicalize(&mut self) {
        self.subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        for s in &mut self.subjects {
            s.series_x.sort_by(|a, b| a.time.total_cmp(&b.time));
            s.series_y.sort_by(|a, b| a.time.total_cmp(&b.time));
        }
    }

    /// Stable SHA-256 over the canonical CSV encoding.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_dataset_csv(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

/// A broken dataset invariant. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject_id: String,
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.subject_id, self.field, self.rule)
    }
}

pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |id: &str, field: &str, rule: &str| {
        out.push(Violation { subject_id: id.to_string(), field: field.to_string(), rule: rule.to_string() })
    };
    if d.n_sites == 0 {
        push("*", "n_sites", "at least one site required");
    }
    for s in &d.subjects {
        let id = s.subject_id.as_str();
        if !seen.insert(id) {
            push(id, "subject_id", "duplicate subject id");
        }
        if s.site < 1 || s.site > d.n_sites {
            push(id, "site", "site out of range");
        }
        if !s.baseline_x.is_finite() {
            push(id, "baseline_x", "non-finite value");
        }
        if !s.baseline_y.is_finite() {
            push(id, "baseline_y", "non-finite value");
        }
        for e in Endpoint::BOTH {
            let field = format!("series_{e}");
            let series = s.series(e);
            if series.iter().any(|o| !o.time.is_finite() || !o.value.is_finite()) {
                push(id, &field, "non-finite value");
            }
            if series.iter().any(|o| o.time <= 0.0) {
                push(id, &field, "time must be positive");
            }
            if series.windows(2).any(|w| w[1].time <= w[0].time) {
                push(id, &field, "non-increasing times");
            }
        }
    }
    out
}

#[derive(Default)]
struct PartialSubject {
    site: Option<usize>,
    baseline: [Option<f64>; 2],
    series: [Vec<Observation>; 2],
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 =
        field.trim().parse().map_err(|_| Error::data(format!("line {line}: cannot parse {what} {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::data(format!("line {line}: non-finite {what}")));
    }
    Ok(v)
}

/// Parses a long-format dataset CSV.
pub fn ingest_dataset<R: Read>(source: R) -> Result<Dataset> {
    let mut text = String::new();
    let mut source = source;
    source.read_to_string(&mut text)?;

    let mut metadata = BTreeMap::new();
    let mut body_start = 0;
    let mut skipped_lines = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        match trimmed.strip_prefix('#') {
            Some(meta) => {
                if let Some((k, v)) = meta.split_once('=') {
                    metadata.insert(k.trim().to_string(), v.trim().to_string());
                }
                body_start += line.len();
                skipped_lines += 1;
            }
            None => break,
        }
    }

    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text[body_start..].as_bytes());
    let header = reader.headers().map_err(|e| Error::data(format!("unreadable header: {e}")))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::data(format!("line {}: expected header {:?}", skipped_lines + 1, CSV_HEADER.join(","))));
    }

    let mut partial: HashMap<String, PartialSubject> = HashMap::new();
    let mut seen_times: HashSet<(String, usize, u64)> = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0) + skipped_lines;
            Error::data(format!("line {line}: malformed row: {e}"))
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0) + skipped_lines;
        if row.len() != 6 {
            return Err(Error::data(format!("line {line}: expected 6 fields, found {}", row.len())));
        }
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(Error::data(format!("line {line}: empty subject_id")));
        }
        let site: usize =
            row[1].parse().map_err(|_| Error::data(format!("line {line}: cannot parse site {:?}", &row[1])))?;
        let endpoint = match &row[2] {
            "x" => Endpoint::X,
            "y" => Endpoint::Y,
            other => return Err(Error::data(format!("line {line}: unknown endpoint {other:?}"))),
        };
        let time = parse_f64(&row[3], "time", line)?;
        if time < 0.0 {
            return Err(Error::data(format!("line {line}: negative time")));
        }
        if !seen_times.insert((id.clone(), endpoint.index(), time.to_bits())) {
            return Err(Error::data(format!(
                "line {line}: duplicate observation for subject {id}, endpoint {endpoint}, time {time}"
            )));
        }

        let entry = partial.entry(id.clone()).or_default();
        match entry.site {
            None => entry.site = Some(site),
            Some(s) if s != site => {
                return Err(Error::data(format!("line {line}: subject {id} changes site")));
            }
            _ => {}
        }
        if time == 0.0 {
            if row[4].is_empty() {
                return Err(Error::data(format!("line {line}: baseline row without baseline value")));
            }
            entry.baseline[endpoint.index()] = Some(parse_f64(&row[4], "baseline", line)?);
        } else {
            let value = parse_f64(&row[5], "value", line)?;
            entry.series[endpoint.index()].push(Observation::new(time, value));
        }
    }

    if partial.is_empty() {
        return Err(Error::data("empty dataset"));
    }

    let mut subjects = Vec::with_capacity(partial.len());
    for (id, p) in partial {
        let [bx, by] = p.baseline;
        let (Some(baseline_x), Some(baseline_y)) = (bx, by) else {
            let which = if bx.is_none() { "x" } else { "y" };
            return Err(Error::data(format!("missing baseline for subject {id}, endpoint {which}")));
        };
        let [mut series_x, mut series_y] = p.series;
        series_x.sort_by(|a, b| a.time.total_cmp(&b.time));
        series_y.sort_by(|a, b| a.time.total_cmp(&b.time));
        subjects.push(SubjectRecord {
            subject_id: id,
            site: p.site.unwrap_or(0),
            baseline_x,
            baseline_y,
            series_x,
            series_y,
            arm: None,
        });
    }
    let n_sites = subjects.iter().map(|s| s.site).max().unwrap_or(0);
    let mut d = Dataset { subjects, n_sites, metadata };
    d.canonicalize();
    if let Some(v) = validate_dataset(&d).into_iter().next() {
        return Err(Error::data(format!("invalid dataset: {v}")));
    }
    Ok(d)
}

pub fn read_dataset_file(path: &std::path::Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    ingest_dataset(std::io::BufReader::new(f))
}

/// Writes `d` in the long CSV format read by [`ingest_dataset`].
pub fn write_dataset_csv<W: Write>(d: &Dataset, mut out: W) -> Result<()> {
    for (k, v) in &d.metadata {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for s in &d.subjects {
        for e in Endpoint::BOTH {
            writeln!(out, "{},{},{},0,{},", s.subject_id, s.site, e, s.baseline(e))?;
            for o in s.series(e) {
                writeln!(out, "{},{},{},{},,{}", s.subject_id, s.site, e, o.time, o.value)?;
            }
        }
    }
    Ok(())
}
