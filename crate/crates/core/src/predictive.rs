//! Posterior predictive densities and gridded predictive mass for future visits.
//!
//! Predictions integrate over the site effect: a subject's covariance uses the
//! class site-effect variance whether or not its site was seen in training.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{Endpoint, Observation, SubjectRecord};
use crate::error::{Error, Result};
use crate::likelihood::{
    class_mean, cs_conditional, cs_logdensity_unchecked, cs_params, log_sum_exp, norm_interval, CsParams,
};
use crate::sampler::{DrawStore, ParameterDraw};

/// Baseline, observed history and the future visit times to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub baseline_x: f64,
    pub baseline_y: f64,
    pub history_x: Vec<Observation>,
    pub history_y: Vec<Observation>,
    pub future_times: Vec<f64>,
    /// Carried for bookkeeping; predictions marginalize the site effect.
    pub site: Option<usize>,
}

impl PredictionRequest {
    /// A new subject known only through baseline values.
    pub fn new_subject(baseline_x: f64, baseline_y: f64, future_times: Vec<f64>) -> Self {
        Self { baseline_x, baseline_y, history_x: vec![], history_y: vec![], future_times, site: None }
    }

    /// Uses the observations of `rec` strictly before the first future time as history.
    pub fn from_record(rec: &SubjectRecord, future_times: Vec<f64>) -> Result<Self> {
        let first = *future_times.first().ok_or_else(|| Error::arg("future_times is empty"))?;
        let before = |e: Endpoint| rec.series(e).iter().copied().filter(|o| o.time < first).collect();
        let req = Self {
            baseline_x: rec.baseline_x,
            baseline_y: rec.baseline_y,
            history_x: before(Endpoint::X),
            history_y: before(Endpoint::Y),
            future_times,
            site: Some(rec.site),
        };
        req.validate()?;
        Ok(req)
    }

    pub fn baseline(&self, e: Endpoint) -> f64 {
        match e {
            Endpoint::X => self.baseline_x,
            Endpoint::Y => self.baseline_y,
        }
    }

    pub fn history(&self, e: Endpoint) -> &[Observation] {
        match e {
            Endpoint::X => &self.history_x,
            Endpoint::Y => &self.history_y,
        }
    }

    pub fn has_history(&self) -> bool {
        !self.history_x.is_empty() || !self.history_y.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.future_times.is_empty() {
            return Err(Error::arg("future_times is empty"));
        }
        if !self.baseline_x.is_finite() || !self.baseline_y.is_finite() {
            return Err(Error::arg("baseline values must be finite"));
        }
        if self.future_times.iter().any(|t| !t.is_finite()) || self.future_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg("future_times must be finite and strictly increasing"));
        }
        for e in Endpoint::BOTH {
            let h = self.history(e);
            if h.iter().any(|o| !o.time.is_finite() || !o.value.is_finite()) {
                return Err(Error::arg(format!("non-finite history on endpoint {e}")));
            }
            if h.windows(2).any(|w| w[0].time >= w[1].time) {
                return Err(Error::arg(format!("history times on endpoint {e} must increase")));
            }
            if let Some(last) = h.last() {
                if last.time >= self.future_times[0] {
                    return Err(Error::arg(format!("future times must follow the history on endpoint {e}")));
                }
            }
        }
        Ok(())
    }
}

/// Cell boundaries on each axis; cells are half-open `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
}

fn check_edges(name: &str, edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::arg(format!("{name} needs at least two edges")));
    }
    if edges.iter().any(|v| !v.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg(format!("{name} must be finite and strictly increasing")));
    }
    Ok(())
}

/// Edges `lo, lo + width, …, hi`; `hi - lo` must be a whole number of widths.
pub fn uniform_edges(lo: f64, hi: f64, width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0) || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::arg(format!("invalid axis {lo}:{hi}:{width}")));
    }
    let cells = (hi - lo) / width;
    let n = cells.round();
    if (cells - n).abs() > 1e-9 * cells.max(1.0) {
        return Err(Error::arg(format!("axis {lo}:{hi} is not a multiple of width {width}")));
    }
    let n = n as usize;
    Ok((0..=n).map(|k| if k == n { hi } else { lo + k as f64 * width }).collect())
}

impl GridSpec {
    pub fn new(x_edges: Vec<f64>, y_edges: Vec<f64>) -> Result<Self> {
        check_edges("x_edges", &x_edges)?;
        check_edges("y_edges", &y_edges)?;
        Ok(Self { x_edges, y_edges })
    }

    pub fn uniform(x: (f64, f64, f64), y: (f64, f64, f64)) -> Result<Self> {
        Self::new(uniform_edges(x.0, x.1, x.2)?, uniform_edges(y.0, y.1, y.2)?)
    }

    /// Parses `xlo:xhi:width,ylo:yhi:width`.
    pub fn parse(spec: &str) -> Result<Self> {
        let axes: Vec<&str> = spec.split(',').collect();
        if axes.len() != 2 {
            return Err(Error::arg(format!("grid '{spec}' must have two comma-separated axes")));
        }
        let axis = |s: &str| -> Result<(f64, f64, f64)> {
            let parts: Vec<f64> = s
                .split(':')
                .map(|p| p.trim().parse::<f64>().map_err(|_| Error::arg(format!("bad grid axis '{s}'"))))
                .collect::<Result<_>>()?;
            match parts[..] {
                [lo, hi, w] => Ok((lo, hi, w)),
                _ => Err(Error::arg(format!("grid axis '{s}' must be lo:hi:width"))),
            }
        };
        Self::uniform(axis(axes[0])?, axis(axes[1])?)
    }

    pub fn n_x(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn n_y(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn n_cells(&self) -> usize {
        self.n_x() * self.n_y()
    }

    /// `(x_lo, x_hi, y_lo, y_hi)` of cell `(ix, iy)`.
    pub fn cell(&self, ix: usize, iy: usize) -> (f64, f64, f64, f64) {
        (self.x_edges[ix], self.x_edges[ix + 1], self.y_edges[iy], self.y_edges[iy + 1])
    }

    /// The cell containing `(x, y)` under `(lo, hi]` semantics.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        fn axis(edges: &[f64], v: f64) -> Option<usize> {
            if !(v > edges[0] && v <= edges[edges.len() - 1]) {
                return None;
            }
            // First edge >= v closes the cell.
            Some(edges.partition_point(|&e| e < v) - 1)
        }
        Some((axis(&self.x_edges, x)?, axis(&self.y_edges, y)?))
    }
}

/// Predictive probability of each grid cell plus the mass falling outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub grid: GridSpec,
    /// Row-major by x cell: `mass[ix * n_y + iy]`.
    pub mass: Vec<f64>,
    pub outside_mass: f64,
}

pub const CELL_FIELD_HEADER: [&str; 5] = ["x_lo", "x_hi", "y_lo", "y_hi", "mass"];

impl CellField {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.mass[ix * self.grid.n_y() + iy]
    }

    pub fn grid_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn check(&self) -> Result<()> {
        if self.mass.len() != self.grid.n_cells() {
            return Err(Error::data("cell field size does not match its grid"));
        }
        if self.mass.iter().any(|m| !(*m >= 0.0)) || !(self.outside_mass >= 0.0) {
            return Err(Error::data("cell field has negative or NaN mass"));
        }
        let total = self.grid_mass() + self.outside_mass;
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::data(format!("cell field total mass {total} is not 1")));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(CELL_FIELD_HEADER).map_err(wrap)?;
        for ix in 0..self.grid.n_x() {
            for iy in 0..self.grid.n_y() {
                let (a, b, c, d) = self.grid.cell(ix, iy);
                w.write_record([a, b, c, d, self.get(ix, iy)].map(|v| v.to_string())).map_err(wrap)?;
            }
        }
        w.write_record(["outside", "", "", "", &self.outside_mass.to_string()]).map_err(wrap)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a field written by [`CellField::write_csv`]; cells must form a full rectangular grid.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let mut cells: Vec<[f64; 5]> = Vec::new();
        let mut outside = None;
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::data(format!("cell field line {line}: {e}")))?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(format!("cell field line {line}: bad number in column {}", k + 1)))
            };
            if rec.get(0) == Some("outside") {
                outside = Some(num(4)?);
            } else {
                cells.push([num(0)?, num(1)?, num(2)?, num(3)?, num(4)?]);
            }
        }
        let outside_mass = outside.ok_or_else(|| Error::data("cell field lacks the outside row"))?;
        let mut xs: Vec<f64> = cells.iter().flat_map(|c| [c[0], c[1]]).collect();
        let mut ys: Vec<f64> = cells.iter().flat_map(|c| [c[2], c[3]]).collect();
        for v in [&mut xs, &mut ys] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let grid = GridSpec::new(xs, ys).map_err(|e| Error::data(format!("cell field grid: {e}")))?;
        if cells.len() != grid.n_cells() {
            return Err(Error::data("cell field does not cover a full rectangular grid"));
        }
        let mut mass = vec![f64::NAN; grid.n_cells()];
        for c in &cells {
            let ix = grid.x_edges.partition_point(|&e| e < c[0]);
            let iy = grid.y_edges.partition_point(|&e| e < c[2]);
            if ix + 1 >= grid.x_edges.len()
                || grid.x_edges[ix + 1] != c[1]
                || iy + 1 >= grid.y_edges.len()
                || grid.y_edges[iy + 1] != c[3]
            {
                return Err(Error::data("cell field cell does not match the grid"));
            }
            mass[ix * grid.n_y() + iy] = c[4];
        }
        let field = CellField { grid, mass, outside_mass };
        field.check()?;
        Ok(field)
    }
}

/// One (draw, class) term of the predictive mixture for a single future visit:
/// independent normals per endpoint with the given weight (summing to 1 overall).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: [f64; 2],
    pub sd: [f64; 2],
}

fn require_draws(store: &DrawStore) -> Result<()> {
    if store.draws.is_empty() {
        return Err(Error::data("draw store holds no draws"));
    }
    Ok(())
}

fn endpoint_cs(draw: &ParameterDraw, c: usize, e: Endpoint, n: usize) -> Result<CsParams> {
    let cp = draw.common(e);
    cs_params(draw.classes[c].endpoint(e).tau_s, cp.tau_w, cp.tau_e, n.max(1))
}

fn endpoint_mean(draw: &ParameterDraw, c: usize, e: Endpoint, baseline: f64, times: &[f64]) -> Vec<f64> {
    let p = draw.classes[c].endpoint(e);
    class_mean(times, baseline, p.beta0, p.beta1, p.beta2, draw.common(e).beta0_base)
}

/// Log density of the history block of endpoint `e` under class `c` of `draw`.
fn history_logdensity(draw: &ParameterDraw, c: usize, e: Endpoint, req: &PredictionRequest) -> Result<f64> {
    let h = req.history(e);
    if h.is_empty() {
        return Ok(0.0);
    }
    let times: Vec<f64> = h.iter().map(|o| o.time).collect();
    let obs: Vec<f64> = h.iter().map(|o| o.value).collect();
    let mean = endpoint_mean(draw, c, e, req.baseline(e), &times);
    Ok(cs_logdensity_unchecked(&obs, &mean, &endpoint_cs(draw, c, e, h.len())?))
}

/// Log density of (history, candidate) stacked, for endpoint `e`.
fn joint_logdensity(
    draw: &ParameterDraw,
    c: usize,
    e: Endpoint,
    req: &PredictionRequest,
    candidate: &[f64],
) -> Result<f64> {
    let h = req.history(e);
    let times: Vec<f64> = h.iter().map(|o| o.time).chain(req.future_times.iter().copied()).collect();
    let obs: Vec<f64> = h.iter().map(|o| o.value).chain(candidate.iter().copied()).collect();
    let mean = endpoint_mean(draw, c, e, req.baseline(e), &times);
    Ok(cs_logdensity_unchecked(&obs, &mean, &endpoint_cs(draw, c, e, times.len())?))
}

fn check_candidates(req: &PredictionRequest, cx: &[f64], cy: &[f64]) -> Result<()> {
    req.validate()?;
    let k = req.future_times.len();
    if cx.len() != k || cy.len() != k {
        return Err(Error::arg(format!("candidates must have {k} values per endpoint")));
    }
    Ok(())
}

/// Log predictive density of future values for a subject with no history.
pub fn case1_log_joint(
    req: &PredictionRequest,
    candidate_x: &[f64],
    candidate_y: &[f64],
    store: &DrawStore,
) -> Result<f64> {
    require_draws(store)?;
    check_candidates(req, candidate_x, candidate_y)?;
    if req.has_history() {
        return Err(Error::arg("case 1 prediction takes no history"));
    }
    let mut terms = Vec::with_capacity(store.n_draws() * store.n_classes());
    for draw in &store.draws {
        for c in 0..draw.n_classes() {
            let lx = joint_logdensity(draw, c, Endpoint::X, req, candidate_x)?;
            let ly = joint_logdensity(draw, c, Endpoint::Y, req, candidate_y)?;
            terms.push(draw.pi[c].ln() + lx + ly);
        }
    }
    Ok(log_sum_exp(&terms) - (store.n_draws() as f64).ln())
}

/// Log predictive density of future values given the observed history.
pub fn case2_log_conditional(
    req: &PredictionRequest,
    candidate_x: &[f64],
    candidate_y: &[f64],
    store: &DrawStore,
) -> Result<f64> {
    require_draws(store)?;
    check_candidates(req, candidate_x, candidate_y)?;
    if !req.has_history() {
        return Err(Error::arg("case 2 prediction needs a history; use case 1"));
    }
    let mut per_draw = Vec::with_capacity(store.n_draws());
    let mut num = Vec::new();
    let mut den = Vec::new();
    for draw in &store.draws {
        num.clear();
        den.clear();
        for c in 0..draw.n_classes() {
            let lp = draw.pi[c].ln();
            num.push(
                lp + joint_logdensity(draw, c, Endpoint::X, req, candidate_x)?
                    + joint_logdensity(draw, c, Endpoint::Y, req, candidate_y)?,
            );
            den.push(
                lp + history_logdensity(draw, c, Endpoint::X, req)? + history_logdensity(draw, c, Endpoint::Y, req)?,
            );
        }
        per_draw.push(log_sum_exp(&num) - log_sum_exp(&den));
    }
    Ok(log_sum_exp(&per_draw) - (store.n_draws() as f64).ln())
}

/// Dispatches to case 1 or case 2 depending on whether the request has history.
pub fn log_predictive(
    req: &PredictionRequest,
    candidate_x: &[f64],
    candidate_y: &[f64],
    store: &DrawStore,
) -> Result<f64> {
    if req.has_history() {
        case2_log_conditional(req, candidate_x, candidate_y, store)
    } else {
        case1_log_joint(req, candidate_x, candidate_y, store)
    }
}

/// Mixture components of the one-step predictive law, draw-major and class-minor.
/// Class weights within a draw are the posterior responsibilities given the history.
pub fn predictive_components(req: &PredictionRequest, store: &DrawStore) -> Result<Vec<Component>> {
    require_draws(store)?;
    req.validate()?;
    if req.future_times.len() != 1 {
        return Err(Error::arg("gridded prediction supports a single future time"));
    }
    let t = req.future_times[0];
    let inv_q = 1.0 / store.n_draws() as f64;
    let mut out = Vec::with_capacity(store.n_draws() * store.n_classes());
    let mut logw = Vec::new();
    for draw in &store.draws {
        let start = out.len();
        logw.clear();
        for c in 0..draw.n_classes() {
            let mut lw = draw.pi[c].ln();
            let mut mean = [0.0; 2];
            let mut sd = [0.0; 2];
            for e in Endpoint::BOTH {
                let h = req.history(e);
                let cs = endpoint_cs(draw, c, e, h.len() + 1)?;
                let b = req.baseline(e);
                let hist_times: Vec<f64> = h.iter().map(|o| o.time).collect();
                let hist_mean = endpoint_mean(draw, c, e, b, &hist_times);
                let resid: f64 = h.iter().zip(&hist_mean).map(|(o, m)| o.value - m).sum();
                let (shift, var) = cs_conditional(resid, h.len(), &cs);
                mean[e.index()] = endpoint_mean(draw, c, e, b, &[t])[0] + shift;
                sd[e.index()] = var.sqrt();
                if !h.is_empty() {
                    let obs: Vec<f64> = h.iter().map(|o| o.value).collect();
                    lw += cs_logdensity_unchecked(&obs, &hist_mean, &cs.with_dim(h.len()));
                }
            }
            logw.push(lw);
            out.push(Component { weight: 0.0, mean, sd });
        }
        let lse = log_sum_exp(&logw);
        if !lse.is_finite() {
            return Err(Error::Numeric("history has zero density under every class".into()));
        }
        for (comp, lw) in out[start..].iter_mut().zip(&logw) {
            comp.weight = (lw - lse).exp() * inv_q;
        }
    }
    Ok(out)
}

/// Probability mass of each grid cell for a single future visit.
pub fn cell_field(req: &PredictionRequest, grid: &GridSpec, store: &DrawStore) -> Result<CellField> {
    let comps = predictive_components(req, store)?;
    Ok(cell_field_from_components(&comps, grid))
}

pub fn cell_field_from_components(comps: &[Component], grid: &GridSpec) -> CellField {
    let (nx, ny) = (grid.n_x(), grid.n_y());
    let mut mass = vec![0.0; nx * ny];
    let mut px = vec![0.0; nx];
    let mut py = vec![0.0; ny];
    for comp in comps {
        axis_masses(&grid.x_edges, comp.mean[0], comp.sd[0], &mut px);
        axis_masses(&grid.y_edges, comp.mean[1], comp.sd[1], &mut py);
        for (ix, &a) in px.iter().enumerate() {
            let wa = comp.weight * a;
            if wa == 0.0 {
                continue;
            }
            let row = &mut mass[ix * ny..(ix + 1) * ny];
            for (m, &b) in row.iter_mut().zip(&py) {
                *m += wa * b;
            }
        }
    }
    let outside_mass = (1.0 - mass.iter().sum::<f64>()).max(0.0);
    CellField { grid: grid.clone(), mass, outside_mass }
}

fn axis_masses(edges: &[f64], mean: f64, sd: f64, out: &mut [f64]) {
    for (k, m) in out.iter_mut().enumerate() {
        *m = norm_interval((edges[k] - mean) / sd, (edges[k + 1] - mean) / sd);
    }
}

/// Predictive probability that the next visit lands in `(x_lo, x_hi] × (y_lo, y_hi]`.
pub fn region_probability(req: &PredictionRequest, rect: (f64, f64, f64, f64), store: &DrawStore) -> Result<f64> {
    let (x_lo, x_hi, y_lo, y_hi) = rect;
    if !(x_lo < x_hi) || !(y_lo < y_hi) {
        return Err(Error::arg("degenerate rectangle"));
    }
    let comps = predictive_components(req, store)?;
    let total: f64 = comps
        .iter()
        .map(|c| {
            c.weight
                * norm_interval((x_lo - c.mean[0]) / c.sd[0], (x_hi - c.mean[0]) / c.sd[0])
                * norm_interval((y_lo - c.mean[1]) / c.sd[1], (y_hi - c.mean[1]) / c.sd[1])
        })
        .sum();
    Ok(total.clamp(0.0, 1.0))
}
