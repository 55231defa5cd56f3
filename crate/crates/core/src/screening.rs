//! Per-subject anomaly screening, cohort metrics and the least-squares
//! posterior partition.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::predictive::{cell_field, CellField, GridSpec, PredictionRequest};
use crate::region::{branch_region, default_c_quick, hdr_region, Algorithm, CredibleRegion, Membership};
use crate::sampler::DrawStore;

/// Which visit to predict for a subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// The most recent visit, given everything observed before it.
    Latest,
    /// The next scheduled visit after the last observation; not yet observed.
    Next { schedule: Vec<f64> },
    /// Visit `k + 1` given the first `k` visits (`0` conditions on baseline only).
    AfterFirst(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Inside,
    Outside,
    OffGrid,
    NotYetObserved,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Inside => "inside",
            Verdict::Outside => "outside",
            Verdict::OffGrid => "off_grid",
            Verdict::NotYetObserved => "not_yet_observed",
        }
    }

    /// Whether the observation should be flagged for review.
    pub fn is_anomaly(self) -> bool {
        matches!(self, Verdict::Outside | Verdict::OffGrid)
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "inside" => Ok(Verdict::Inside),
            "outside" => Ok(Verdict::Outside),
            "off_grid" => Ok(Verdict::OffGrid),
            "not_yet_observed" => Ok(Verdict::NotYetObserved),
            _ => Err(Error::data(format!("unknown verdict '{s}'"))),
        }
    }
}

impl From<Membership> for Verdict {
    fn from(m: Membership) -> Self {
        match m {
            Membership::Inside => Verdict::Inside,
            Membership::Outside => Verdict::Outside,
            Membership::OffGrid => Verdict::OffGrid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningResult {
    pub subject_id: String,
    pub site: usize,
    pub future_time: f64,
    pub region: CredibleRegion,
    pub observed: Option<(f64, f64)>,
    pub verdict: Verdict,
    /// Mass of the cell holding the observation; 0 when off the grid or unobserved.
    pub cell_mass: f64,
}

impl ScreeningResult {
    pub fn algorithm(&self) -> Algorithm {
        self.region.algorithm
    }
}

/// Grid, coverage target, algorithms and horizon for a screening run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenSpec {
    pub grid: GridSpec,
    pub target: f64,
    pub algorithms: Vec<Algorithm>,
    /// Hand-over mass for the branching search; defaults to 0.9 × target.
    pub c_quick: Option<f64>,
    pub horizon: Horizon,
}

impl ScreenSpec {
    pub fn new(grid: GridSpec, target: f64, algorithms: Vec<Algorithm>, horizon: Horizon) -> Self {
        Self { grid, target, algorithms, c_quick: None, horizon }
    }

    fn region(&self, field: &CellField, algorithm: Algorithm) -> Result<CredibleRegion> {
        match algorithm {
            Algorithm::Hdr => hdr_region(field, self.target),
            Algorithm::Branch => {
                branch_region(field, self.target, self.c_quick.unwrap_or_else(|| default_c_quick(self.target)))
            }
        }
    }
}

/// Prediction request, future time and observed pair for the chosen horizon.
/// `None` when the subject lacks the visits the horizon needs.
pub fn horizon_request(
    subject: &SubjectRecord,
    horizon: &Horizon,
) -> Result<Option<(PredictionRequest, Option<(f64, f64)>)>> {
    let visits = subject.shared_times();
    let (future, observed) = match horizon {
        Horizon::Latest => match visits.last() {
            Some(&t) => (t, subject.pair_at(t)),
            None => return Ok(None),
        },
        Horizon::AfterFirst(k) => match visits.get(*k) {
            Some(&t) => (t, subject.pair_at(t)),
            None => return Ok(None),
        },
        Horizon::Next { schedule } => {
            let last = subject.last_time().unwrap_or(0.0);
            match schedule.iter().copied().find(|&t| t > last) {
                Some(t) => (t, None),
                None => return Ok(None),
            }
        }
    };
    let mut req = PredictionRequest::from_record(subject, vec![future])?;
    if let Horizon::AfterFirst(k) = horizon {
        // Only the first k visits count as history, even if other partial data exist.
        let cutoff = if *k == 0 { 0.0 } else { visits[k - 1] };
        req.history_x.retain(|o| o.time <= cutoff);
        req.history_y.retain(|o| o.time <= cutoff);
    }
    Ok(Some((req, observed)))
}

/// Verdict of `observed` against `region`, with the mass of its cell.
pub fn judge(region: &CredibleRegion, field: &CellField, observed: Option<(f64, f64)>) -> (Verdict, f64) {
    match observed {
        None => (Verdict::NotYetObserved, 0.0),
        Some((x, y)) => {
            let mass = field.grid.locate(x, y).map_or(0.0, |(ix, iy)| field.get(ix, iy));
            (region.contains(x, y).into(), mass)
        }
    }
}

/// Screens one subject with every algorithm of `spec`, sharing one cell field.
/// `None` when the subject lacks the visits the horizon needs.
pub fn screen_subject(
    subject: &SubjectRecord,
    store: &DrawStore,
    spec: &ScreenSpec,
) -> Result<Option<Vec<ScreeningResult>>> {
    let Some((req, observed)) = horizon_request(subject, &spec.horizon)? else {
        return Ok(None);
    };
    let field = cell_field(&req, &spec.grid, store)?;
    let results = spec
        .algorithms
        .iter()
        .map(|&alg| {
            let region = spec.region(&field, alg)?;
            let (verdict, cell_mass) = judge(&region, &field, observed);
            Ok(ScreeningResult {
                subject_id: subject.subject_id.clone(),
                site: subject.site,
                future_time: req.future_times[0],
                region,
                observed,
                verdict,
                cell_mass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(results))
}

/// Cell field of the subject's prediction for the horizon, if eligible.
pub fn subject_field(subject: &SubjectRecord, store: &DrawStore, spec: &ScreenSpec) -> Result<Option<CellField>> {
    match horizon_request(subject, &spec.horizon)? {
        Some((req, _)) => Ok(Some(cell_field(&req, &spec.grid, store)?)),
        None => Ok(None),
    }
}

/// Screens every eligible subject; results are in dataset order, algorithm-minor.
pub fn screen_cohort(test: &Dataset, store: &DrawStore, spec: &ScreenSpec) -> Result<Vec<ScreeningResult>> {
    let per_subject: Vec<Option<Vec<ScreeningResult>>> =
        test.subjects.par_iter().map(|s| screen_subject(s, store, spec)).collect::<Result<_>>()?;
    let results: Vec<ScreeningResult> = per_subject.into_iter().flatten().flatten().collect();
    if results.is_empty() {
        return Err(Error::data("no subject has the visits this horizon needs"));
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmMetrics {
    pub algorithm: Algorithm,
    pub n_subjects: usize,
    pub n_observed: usize,
    /// Fraction of observed values inside the region; off-grid counts as outside.
    pub coverage_proportion: f64,
    /// Mean of `p_sum - target`.
    pub bias: f64,
    /// Root mean square of `p_sum - target`.
    pub rmse: f64,
    /// `coverage_proportion - target`, kept as a separate diagnostic.
    pub coverage_minus_target: f64,
    pub n_off_grid: usize,
    pub n_outside: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub target: f64,
    pub n_subjects: usize,
    pub algorithms: Vec<AlgorithmMetrics>,
}

impl MetricsSummary {
    pub fn get(&self, a: Algorithm) -> Option<&AlgorithmMetrics> {
        self.algorithms.iter().find(|m| m.algorithm == a)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Mean and standard deviation of each metric across replicate summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateAggregate {
    pub algorithm: Algorithm,
    pub replicates: usize,
    pub coverage_mean: f64,
    pub coverage_sd: f64,
    pub bias_mean: f64,
    pub bias_sd: f64,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

/// Per-algorithm mean and SD over replicates, in the algorithm order of the first summary.
pub fn aggregate_replicates(summaries: &[MetricsSummary]) -> Result<Vec<ReplicateAggregate>> {
    let first = summaries.first().ok_or_else(|| Error::data("no replicate summaries"))?;
    first
        .algorithms
        .iter()
        .map(|m0| {
            let per: Vec<&AlgorithmMetrics> = summaries
                .iter()
                .map(|s| s.get(m0.algorithm).ok_or_else(|| Error::data(format!("a replicate lacks {}", m0.algorithm))))
                .collect::<Result<_>>()?;
            let (coverage_mean, coverage_sd) = mean_sd(&per.iter().map(|m| m.coverage_proportion).collect::<Vec<_>>());
            let (bias_mean, bias_sd) = mean_sd(&per.iter().map(|m| m.bias).collect::<Vec<_>>());
            let (rmse_mean, rmse_sd) = mean_sd(&per.iter().map(|m| m.rmse).collect::<Vec<_>>());
            Ok(ReplicateAggregate {
                algorithm: m0.algorithm,
                replicates: per.len(),
                coverage_mean,
                coverage_sd,
                bias_mean,
                bias_sd,
                rmse_mean,
                rmse_sd,
            })
        })
        .collect()
}

/// One row of the per-subject report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub subject_id: String,
    pub site: usize,
    pub future_time: f64,
    pub algorithm: Algorithm,
    pub target: f64,
    pub p_sum: f64,
    pub observed: Option<(f64, f64)>,
    pub verdict: Verdict,
    pub cell_mass: f64,
}

impl From<&ScreeningResult> for ReportRow {
    fn from(r: &ScreeningResult) -> Self {
        Self {
            subject_id: r.subject_id.clone(),
            site: r.site,
            future_time: r.future_time,
            algorithm: r.region.algorithm,
            target: r.region.target,
            p_sum: r.region.p_sum,
            observed: r.observed,
            verdict: r.verdict,
            cell_mass: r.cell_mass,
        }
    }
}

/// Aggregates report rows per algorithm, in order of first appearance.
pub fn summarize(rows: &[ReportRow]) -> Result<MetricsSummary> {
    let first = rows.first().ok_or_else(|| Error::data("no screening results to summarize"))?;
    let target = first.target;
    if rows.iter().any(|r| r.target != target) {
        return Err(Error::data("screening results mix different targets"));
    }
    let mut order: Vec<Algorithm> = Vec::new();
    for r in rows {
        if !order.contains(&r.algorithm) {
            order.push(r.algorithm);
        }
    }
    let mut subjects: Vec<&str> = rows.iter().map(|r| r.subject_id.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    let algorithms = order
        .into_iter()
        .map(|alg| {
            let these: Vec<&ReportRow> = rows.iter().filter(|r| r.algorithm == alg).collect();
            let n = these.len() as f64;
            let dev: Vec<f64> = these.iter().map(|r| r.p_sum - target).collect();
            let observed: Vec<&&ReportRow> = these.iter().filter(|r| r.verdict != Verdict::NotYetObserved).collect();
            let inside = observed.iter().filter(|r| r.verdict == Verdict::Inside).count();
            let coverage = if observed.is_empty() { f64::NAN } else { inside as f64 / observed.len() as f64 };
            AlgorithmMetrics {
                algorithm: alg,
                n_subjects: these.len(),
                n_observed: observed.len(),
                coverage_proportion: coverage,
                bias: dev.iter().sum::<f64>() / n,
                rmse: (dev.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
                coverage_minus_target: coverage - target,
                n_off_grid: observed.iter().filter(|r| r.verdict == Verdict::OffGrid).count(),
                n_outside: observed.iter().filter(|r| r.verdict == Verdict::Outside).count(),
            }
        })
        .collect();
    Ok(MetricsSummary { target, n_subjects: subjects.len(), algorithms })
}

pub fn evaluate_cohort(
    test: &Dataset,
    store: &DrawStore,
    spec: &ScreenSpec,
) -> Result<(Vec<ScreeningResult>, MetricsSummary)> {
    let results = screen_cohort(test, store, spec)?;
    let rows: Vec<ReportRow> = results.iter().map(ReportRow::from).collect();
    let summary = summarize(&rows)?;
    Ok((results, summary))
}

pub const REPORT_HEADER: [&str; 10] = [
    "subject_id",
    "site",
    "future_time",
    "algorithm",
    "target",
    "p_sum",
    "observed_x",
    "observed_y",
    "verdict",
    "cell_mass",
];

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(REPORT_HEADER).map_err(wrap)?;
    for r in rows {
        let (ox, oy) = r.observed.map_or((String::new(), String::new()), |(x, y)| (x.to_string(), y.to_string()));
        w.write_record([
            r.subject_id.clone(),
            r.site.to_string(),
            r.future_time.to_string(),
            r.algorithm.to_string(),
            r.target.to_string(),
            r.p_sum.to_string(),
            ox,
            oy,
            r.verdict.as_str().to_string(),
            r.cell_mass.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::data(format!("report header: {e}")))?.clone();
    if headers.iter().ne(REPORT_HEADER) {
        return Err(Error::data("report header does not match the expected columns"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(format!("report line {line}: {e}")))?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let num = |k: usize| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| Error::data(format!("report line {line}: bad {}", REPORT_HEADER[k])))
        };
        let observed = if field(6).is_empty() && field(7).is_empty() { None } else { Some((num(6)?, num(7)?)) };
        rows.push(ReportRow {
            subject_id: field(0).to_string(),
            site: field(1).parse().map_err(|_| Error::data(format!("report line {line}: bad site")))?,
            future_time: num(2)?,
            algorithm: field(3).parse().map_err(|e| Error::data(format!("report line {line}: {e}")))?,
            target: num(4)?,
            p_sum: num(5)?,
            observed,
            verdict: Verdict::parse(field(8)).map_err(|e| Error::data(format!("report line {line}: {e}")))?,
            cell_mass: num(9)?,
        });
    }
    Ok(rows)
}

/// The retained partition closest, in squared co-clustering distance, to the
/// posterior co-clustering probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfiguration {
    pub draw_index: usize,
    /// 1-based class label per training subject.
    pub labels: Vec<usize>,
    pub loss: f64,
}

impl BestConfiguration {
    /// `(class, count)` for occupied classes, largest first, ties by class.
    pub fn class_sizes(&self) -> Vec<(usize, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for &z in &self.labels {
            *counts.entry(z).or_insert(0usize) += 1;
        }
        let mut v: Vec<(usize, usize)> = counts.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// Sizes written like `6(157), 12(146)`.
    pub fn format_sizes(&self) -> String {
        self.class_sizes().iter().map(|(c, n)| format!("{c}({n})")).collect::<Vec<_>>().join(", ")
    }
}

pub fn dahl_best_configuration(store: &DrawStore) -> Result<BestConfiguration> {
    let first = store.draws.first().ok_or_else(|| Error::data("draw store holds no draws"))?;
    let n = first.z.len();
    if store.draws.iter().any(|d| d.z.len() != n) {
        return Err(Error::data("draws disagree on the number of subjects"));
    }
    // Upper triangle of the co-clustering counts, row by row.
    let mut counts = vec![0u32; n * n.saturating_sub(1) / 2];
    for d in &store.draws {
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                counts[k] += u32::from(d.z[i] == d.z[j]);
                k += 1;
            }
        }
    }
    let q = store.n_draws() as f64;
    let pihat: Vec<f64> = counts.iter().map(|&c| c as f64 / q).collect();
    let losses: Vec<f64> = store
        .draws
        .par_iter()
        .map(|d| {
            let mut loss = 0.0;
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    let same = if d.z[i] == d.z[j] { 1.0 } else { 0.0 };
                    let diff = same - pihat[k];
                    loss += diff * diff;
                    k += 1;
                }
            }
            loss
        })
        .collect();
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    Ok(BestConfiguration { draw_index: best, labels: store.draws[best].z.clone(), loss: losses[best] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::predictive::{cell_field_from_components, Component};
    use crate::test_support::store_from;

    fn record(id: &str, visits: &[(f64, f64, f64)]) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.into(),
            site: 1,
            baseline_x: 20.0,
            baseline_y: 3.0,
            series_x: visits.iter().map(|&(t, x, _)| Observation::new(t, x)).collect(),
            series_y: visits.iter().map(|&(t, _, y)| Observation::new(t, y)).collect(),
            arm: None,
        }
    }

    fn single_gaussian(grid: &GridSpec, mean: [f64; 2], sd: [f64; 2]) -> CellField {
        cell_field_from_components(&[Component { weight: 1.0, mean, sd }], grid)
    }

    fn both_regions(field: &CellField) -> [CredibleRegion; 2] {
        [hdr_region(field, 0.8).unwrap(), branch_region(field, 0.8, 0.72).unwrap()]
    }

    #[test]
    fn week2_change_inside_for_moderate_baseline() {
        // Change from baseline on a 72-point score against a 5-point ordinal score.
        let grid = GridSpec::uniform((-40.0, 20.0, 2.0), (-4.0, 4.0, 1.0)).unwrap();
        let field = single_gaussian(&grid, [-8.0, -0.4], [5.0, 0.8]);
        for r in both_regions(&field) {
            assert_eq!(judge(&r, &field, Some((-10.0, 0.0))).0, Verdict::Inside, "{}", r.algorithm);
        }
    }

    #[test]
    fn week12_change_outside_when_improvement_stalls() {
        let grid = GridSpec::uniform((-40.0, 20.0, 2.0), (-4.0, 4.0, 1.0)).unwrap();
        let field = single_gaussian(&grid, [-4.0, -2.0], [2.5, 0.5]);
        for r in both_regions(&field) {
            assert_eq!(r.contains(-14.0, -1.0), Membership::Outside, "{}", r.algorithm);
            assert!(judge(&r, &field, Some((-14.0, -1.0))).0.is_anomaly());
        }
    }

    #[test]
    fn week12_outlier_on_second_score_is_flagged() {
        let grid = GridSpec::uniform((-72.0, 20.0, 4.0), (-100.0, 20.0, 4.0)).unwrap();
        let field = single_gaussian(&grid, [-38.0, -62.0], [5.0, 6.0]);
        for r in both_regions(&field) {
            assert_eq!(r.contains(-39.6, -42.9), Membership::Outside, "{}", r.algorithm);
        }
    }

    #[test]
    fn unobserved_next_visit_still_gets_region() {
        let store = store_from(3, 2, 1);
        let rec = record("s1", &[]);
        let grid = GridSpec::parse("-16:16:2,-24:16:2").unwrap();
        let spec =
            ScreenSpec::new(grid, 0.8, vec![Algorithm::Hdr], Horizon::Next { schedule: vec![2.0, 4.0, 8.0, 12.0] });
        let r = screen_subject(&rec, &store, &spec).unwrap().unwrap().pop().unwrap();
        assert_eq!(r.verdict, Verdict::NotYetObserved);
        assert_eq!(r.future_time, 2.0);
        assert!(r.region.p_sum > 0.8);
        assert_eq!(r.cell_mass, 0.0);
    }

    #[test]
    fn horizons_pick_the_right_visit() {
        let rec = record("s1", &[(2.0, -1.0, -2.0), (4.0, -3.0, -4.0), (6.0, -5.0, -6.0)]);
        let (req, obs) = horizon_request(&rec, &Horizon::AfterFirst(2)).unwrap().unwrap();
        assert_eq!(req.future_times, vec![6.0]);
        assert_eq!(req.history_x.len(), 2);
        assert_eq!(obs, Some((-5.0, -6.0)));
        let (req, obs) = horizon_request(&rec, &Horizon::AfterFirst(0)).unwrap().unwrap();
        assert!(!req.has_history());
        assert_eq!(obs, Some((-1.0, -2.0)));
        let (req, _) = horizon_request(&rec, &Horizon::Latest).unwrap().unwrap();
        assert_eq!((req.future_times[0], req.history_y.len()), (6.0, 2));
        assert!(horizon_request(&rec, &Horizon::AfterFirst(3)).unwrap().is_none());
        let next = Horizon::Next { schedule: vec![2.0, 4.0, 6.0, 8.0] };
        let (req, obs) = horizon_request(&rec, &next).unwrap().unwrap();
        assert_eq!((req.future_times[0], req.history_x.len(), obs), (8.0, 3, None));
    }

    #[test]
    fn exact_target_gives_zero_bias() {
        let rows: Vec<ReportRow> = (0..4)
            .map(|i| ReportRow {
                subject_id: format!("s{i}"),
                site: 1,
                future_time: 6.0,
                algorithm: Algorithm::Hdr,
                target: 0.8,
                p_sum: 0.8,
                observed: Some((0.0, 0.0)),
                verdict: if i == 0 { Verdict::OffGrid } else { Verdict::Inside },
                cell_mass: 0.1,
            })
            .collect();
        let m = summarize(&rows).unwrap();
        let a = m.get(Algorithm::Hdr).unwrap();
        assert_eq!((a.bias, a.rmse), (0.0, 0.0));
        assert_eq!(a.coverage_proportion, 0.75);
        assert_eq!(a.n_off_grid, 1);
    }

    #[test]
    fn metrics_recompute_from_report() {
        let store = store_from(4, 3, 2);
        let subjects = (0..6)
            .map(|i| {
                let d = i as f64 * 0.5;
                record(&format!("s{i}"), &[(2.0, -1.0 - d, -1.0), (4.0, -2.0, -2.0 + d), (6.0, -3.0 + d, -5.0)])
            })
            .collect();
        let test = Dataset { subjects, n_sites: 1, metadata: Default::default() };
        let grid = GridSpec::parse("-16:16:2,-24:16:2").unwrap();
        let spec = ScreenSpec::new(grid, 0.8, vec![Algorithm::Branch, Algorithm::Hdr], Horizon::AfterFirst(2));
        let (results, summary) = evaluate_cohort(&test, &store, &spec).unwrap();
        assert_eq!(results.len(), 12);
        let rows: Vec<ReportRow> = results.iter().map(ReportRow::from).collect();
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        let back = read_report(&buf[..]).unwrap();
        assert_eq!(back, rows);
        assert_eq!(summarize(&back).unwrap(), summary);
        let inside = results.iter().filter(|r| r.algorithm() == Algorithm::Hdr && r.verdict == Verdict::Inside).count();
        assert_eq!(summary.get(Algorithm::Hdr).unwrap().coverage_proportion, inside as f64 / 6.0);
    }

    fn labels_store(zs: &[Vec<usize>]) -> DrawStore {
        let mut store = store_from(zs.len(), 3, 3);
        for (d, z) in store.draws.iter_mut().zip(zs) {
            d.z = z.clone();
        }
        store
    }

    #[test]
    fn dahl_examples() {
        let same = labels_store(&[vec![1, 1, 2], vec![1, 1, 2], vec![1, 1, 2]]);
        let b = dahl_best_configuration(&same).unwrap();
        assert_eq!((b.labels.clone(), b.loss), (vec![1, 1, 2], 0.0));
        let two = labels_store(&[vec![1, 1, 2], vec![1, 2, 2]]);
        let b = dahl_best_configuration(&two).unwrap();
        assert_eq!((b.draw_index, b.loss), (0, 0.5));
    }

    #[test]
    fn dahl_ignores_label_names() {
        let a = labels_store(&[vec![1, 1, 2, 3], vec![2, 2, 1, 1], vec![1, 2, 2, 3], vec![3, 3, 1, 2]]);
        let b = labels_store(&[vec![3, 3, 1, 2], vec![1, 1, 3, 3], vec![2, 1, 1, 3], vec![2, 2, 3, 1]]);
        let ra = dahl_best_configuration(&a).unwrap();
        let rb = dahl_best_configuration(&b).unwrap();
        assert_eq!((ra.draw_index, ra.loss), (rb.draw_index, rb.loss));
    }

    #[test]
    fn class_sizes_format() {
        let b = BestConfiguration { draw_index: 0, labels: vec![6, 12, 6, 3, 12, 6], loss: 0.0 };
        assert_eq!(b.format_sizes(), "6(3), 12(2), 3(1)");
    }
}
