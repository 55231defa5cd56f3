//! Credible regions on a gridded predictive field.
//!
//! Two constructions: highest-density cells taken in descending mass order,
//! and a branching search that grows a region outward from the densest cell,
//! swapping low-mass ring cells for a single heavier cell further out, then
//! trimming the boundary. Cells use 4-connectivity; ties break row-major.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictive::{CellField, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Branch,
    Hdr,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Branch => "branch",
            Algorithm::Hdr => "hdr",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "branch" => Ok(Algorithm::Branch),
            "hdr" => Ok(Algorithm::Hdr),
            _ => Err(Error::arg(format!("unknown algorithm '{s}' (expected branch or hdr)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Inside,
    Outside,
    OffGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CredibleRegion {
    /// Selected `(row, col)` = `(x cell, y cell)` pairs in row-major order.
    pub cells: Vec<(usize, usize)>,
    pub p_sum: f64,
    pub target: f64,
    pub algorithm: Algorithm,
    pub grid: GridSpec,
}

impl CredibleRegion {
    fn from_mask(mask: &[bool], field: &CellField, target: f64, algorithm: Algorithm) -> Self {
        let ny = field.grid.n_y();
        let cells: Vec<(usize, usize)> =
            mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| (k / ny, k % ny)).collect();
        Self { p_sum: masked_sum(mask, &field.mass), cells, target, algorithm, grid: field.grid.clone() }
    }

    pub fn contains_cell(&self, ix: usize, iy: usize) -> bool {
        self.cells.binary_search(&(ix, iy)).is_ok()
    }

    /// Membership of the point under `(lo, hi]` cell semantics.
    pub fn contains(&self, x: f64, y: f64) -> Membership {
        match self.grid.locate(x, y) {
            None => Membership::OffGrid,
            Some((ix, iy)) if self.contains_cell(ix, iy) => Membership::Inside,
            Some(_) => Membership::Outside,
        }
    }

    /// Writes every grid cell with its mass and a 0/1 selection flag.
    pub fn write_csv<W: Write>(&self, field: &CellField, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["row", "col", "x_lo", "x_hi", "y_lo", "y_hi", "mass", "selected"]).map_err(wrap)?;
        for ix in 0..self.grid.n_x() {
            for iy in 0..self.grid.n_y() {
                let (a, b, c, d) = self.grid.cell(ix, iy);
                let sel = u8::from(self.contains_cell(ix, iy));
                w.write_record([
                    ix.to_string(),
                    iy.to_string(),
                    a.to_string(),
                    b.to_string(),
                    c.to_string(),
                    d.to_string(),
                    field.get(ix, iy).to_string(),
                    sel.to_string(),
                ])
                .map_err(wrap)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn masked_sum(mask: &[bool], mass: &[f64]) -> f64 {
    mask.iter().zip(mass).filter(|(m, _)| **m).map(|(_, p)| p).sum()
}

fn check_inputs(field: &CellField, target: f64) -> Result<()> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::arg(format!("target must lie in (0, 1), got {target}")));
    }
    if field.mass.len() != field.grid.n_cells() {
        return Err(Error::arg("cell field size does not match its grid"));
    }
    if field.mass.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::arg("cell masses must be finite and non-negative"));
    }
    let grid_mass = field.grid_mass();
    if grid_mass <= target {
        return Err(Error::GridTooSmall { grid_mass, target });
    }
    Ok(())
}

/// Descending mass, then row-major index.
fn by_mass_desc(mass: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| mass[*b].total_cmp(&mass[*a]).then(a.cmp(b))
}

/// Ascending mass, then row-major index.
fn by_mass_asc(mass: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| mass[*a].total_cmp(&mass[*b]).then(a.cmp(b))
}

/// Cells added in descending mass until the total first exceeds `target`.
pub fn hdr_region(field: &CellField, target: f64) -> Result<CredibleRegion> {
    check_inputs(field, target)?;
    let mass = &field.mass;
    let mut order: Vec<usize> = (0..mass.len()).collect();
    order.sort_by(by_mass_desc(mass));
    let mut mask = vec![false; mass.len()];
    let mut p_sum = 0.0;
    for k in order {
        mask[k] = true;
        p_sum += mass[k];
        if p_sum > target {
            break;
        }
    }
    Ok(CredibleRegion::from_mask(&mask, field, target, Algorithm::Hdr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Quick,
    Slow,
    Tune,
}

/// Working state of the branching search: the selected set, cells set aside
/// from the ring (kept as candidates for later), and the current phase.
#[derive(Debug, Clone)]
pub struct BranchState {
    pub selected: Vec<bool>,
    pub removed: Vec<bool>,
    pub phase: Phase,
    nx: usize,
    ny: usize,
}

impl BranchState {
    fn new(nx: usize, ny: usize) -> Self {
        Self { selected: vec![false; nx * ny], removed: vec![false; nx * ny], phase: Phase::Quick, nx, ny }
    }

    fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> {
        let (nx, ny) = (self.nx, self.ny);
        let (ix, iy) = (k / ny, k % ny);
        let up = (ix + 1 < nx).then(|| k + ny);
        let down = (ix > 0).then(|| k - ny);
        let right = (iy + 1 < ny).then(|| k + 1);
        let left = (iy > 0).then(|| k - 1);
        [down, left, right, up].into_iter().flatten()
    }

    fn is_edge(&self, k: usize) -> bool {
        let (ix, iy) = (k / self.ny, k % self.ny);
        ix == 0 || iy == 0 || ix + 1 == self.nx || iy + 1 == self.ny
    }

    /// Cells outside `inner` touching it, excluding `exclude`; sorted by index.
    fn ring(&self, inner: &[bool], exclude: &[bool]) -> Vec<usize> {
        let mut seen = vec![false; inner.len()];
        let mut out = Vec::new();
        for k in (0..inner.len()).filter(|&k| inner[k]) {
            for j in self.neighbors(k) {
                if !inner[j] && !exclude[j] && !seen[j] {
                    seen[j] = true;
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Selected cells with a 4-neighbour outside the selection or off the grid.
    fn boundary(&self) -> Vec<usize> {
        (0..self.selected.len())
            .filter(|&k| self.selected[k] && (self.is_edge(k) || self.neighbors(k).any(|j| !self.selected[j])))
            .collect()
    }
}

/// Largest `r ≥ 1` with `best > Σ` of the `r` smallest entries of `ascending`.
fn swap_count(best: f64, ascending: &[usize], mass: &[f64]) -> Option<usize> {
    let mut cum = 0.0;
    let mut r = None;
    for (k, &i) in ascending.iter().enumerate() {
        cum += mass[i];
        if best > cum {
            r = Some(k + 1);
        } else {
            break;
        }
    }
    r
}

/// Branching-out credible region; `c_quick` is the mass at which the
/// two-ring search hands over to the one-ring search.
pub fn branch_region(field: &CellField, target: f64, c_quick: f64) -> Result<CredibleRegion> {
    check_inputs(field, target)?;
    if !(c_quick > 0.0 && c_quick < target) {
        return Err(Error::arg(format!("c_quick must lie in (0, target), got {c_quick}")));
    }
    let state = branch_search(field, target, c_quick)?;
    Ok(CredibleRegion::from_mask(&state.selected, field, target, Algorithm::Branch))
}

pub fn default_c_quick(target: f64) -> f64 {
    0.9 * target
}

pub fn region(field: &CellField, target: f64, algorithm: Algorithm) -> Result<CredibleRegion> {
    match algorithm {
        Algorithm::Hdr => hdr_region(field, target),
        Algorithm::Branch => branch_region(field, target, default_c_quick(target)),
    }
}

const STEP_CAP_PER_CELL: usize = 10;

fn branch_search(field: &CellField, target: f64, c_quick: f64) -> Result<BranchState> {
    let mass = &field.mass;
    let n = mass.len();
    let mut st = BranchState::new(field.grid.n_x(), field.grid.n_y());
    // Every swap strictly raises p_sum, so the search cannot cycle, but on
    // rough multimodal fields it may take a few times more steps than cells.
    let cap = STEP_CAP_PER_CELL * n;
    let start = (0..n).min_by(by_mass_desc(mass)).expect("grid has cells");
    st.selected[start] = true;
    let mut p_sum = mass[start];

    let mut steps = 0;
    while p_sum <= c_quick {
        steps += 1;
        if steps > cap {
            return Err(Error::NonConvergence(steps));
        }
        let none = vec![false; n];
        let mut d1 = st.ring(&st.selected, &none);
        let mut m1 = st.selected.clone();
        d1.iter().for_each(|&k| m1[k] = true);
        let d2 = st.ring(&m1, &m1);
        d1.sort_by(by_mass_asc(mass));
        let best = d2.iter().copied().chain((0..n).filter(|&k| st.removed[k] && !m1[k])).min_by(by_mass_desc(mass));
        match (best, d1.is_empty()) {
            (None, true) => break,
            (Some(b), true) => take_candidate(&mut st, b),
            (best, false) => match best.and_then(|b| swap_count(mass[b], &d1, mass).map(|r| (b, r))) {
                Some((b, r)) => {
                    d1[..r].iter().for_each(|&k| st.removed[k] = true);
                    d1[r..].iter().for_each(|&k| st.selected[k] = true);
                    take_candidate(&mut st, b);
                }
                None => d1.iter().for_each(|&k| st.selected[k] = true),
            },
        }
        p_sum = masked_sum(&st.selected, mass);
    }

    st.phase = Phase::Slow;
    let mut steps = 0;
    while p_sum <= target {
        steps += 1;
        if steps > cap {
            return Err(Error::NonConvergence(steps));
        }
        let mut d1 = st.boundary();
        let d2 = st.ring(&st.selected, &st.removed);
        d1.sort_by(by_mass_asc(mass));
        let Some(best) = d2.iter().copied().chain((0..n).filter(|&k| st.removed[k])).min_by(by_mass_desc(mass)) else {
            break;
        };
        // Never empty the selection: at most all but one boundary cell may be swapped out.
        let swappable = &d1[..d1.len().min(masked_count(&st.selected) - 1)];
        if let Some(r) = swap_count(mass[best], swappable, mass) {
            for &k in &d1[..r] {
                st.selected[k] = false;
                st.removed[k] = true;
            }
        }
        take_candidate(&mut st, best);
        p_sum = masked_sum(&st.selected, mass);
    }

    st.phase = Phase::Tune;
    loop {
        let mut d1 = st.boundary();
        d1.sort_by(by_mass_asc(mass));
        let slack = p_sum - target;
        let mut cum = 0.0;
        let mut r = 0;
        for &k in &d1 {
            if cum + mass[k] <= slack {
                cum += mass[k];
                r += 1;
            } else {
                break;
            }
        }
        if r == 0 {
            break;
        }
        d1[..r].iter().for_each(|&k| st.selected[k] = false);
        p_sum = masked_sum(&st.selected, mass);
    }
    Ok(st)
}

fn masked_count(mask: &[bool]) -> usize {
    mask.iter().filter(|m| **m).count()
}

fn take_candidate(st: &mut BranchState, k: usize) {
    st.removed[k] = false;
    st.selected[k] = true;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(nx: usize, ny: usize, mass: Vec<f64>) -> CellField {
        let grid = GridSpec::uniform((0.0, nx as f64, 1.0), (0.0, ny as f64, 1.0)).unwrap();
        let total: f64 = mass.iter().sum();
        CellField { grid, mass, outside_mass: (1.0 - total).max(0.0) }
    }

    fn gaussian_field(nx: usize, ny: usize, cx: f64, cy: f64, sx: f64, sy: f64) -> CellField {
        let mut mass = Vec::with_capacity(nx * ny);
        for ix in 0..nx {
            for iy in 0..ny {
                let dx = (ix as f64 + 0.5 - cx) / sx;
                let dy = (iy as f64 + 0.5 - cy) / sy;
                mass.push((-0.5 * (dx * dx + dy * dy)).exp());
            }
        }
        let s: f64 = mass.iter().sum();
        mass.iter_mut().for_each(|m| *m *= 0.999 / s);
        field(nx, ny, mass)
    }

    fn random_field(seed: u64, nx: usize, ny: usize) -> CellField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut mass: Vec<f64> = (0..nx * ny).map(|_| rng.random::<f64>().powi(3)).collect();
        let s: f64 = mass.iter().sum();
        let keep = rng.random_range(0.95..1.0);
        mass.iter_mut().for_each(|m| *m *= keep / s);
        field(nx, ny, mass)
    }

    #[test]
    fn single_cell_field() {
        let mut mass = vec![0.0; 9];
        mass[4] = 1.0;
        let f = field(3, 3, mass);
        for r in
            [hdr_region(&f, 0.8).unwrap(), branch_region(&f, 0.8, 0.3).unwrap(), branch_region(&f, 0.8, 0.79).unwrap()]
        {
            assert_eq!(r.cells, vec![(1, 1)]);
            assert_eq!(r.p_sum, 1.0);
        }
    }

    #[test]
    fn hdr_takes_top_cells() {
        let f = field(3, 1, vec![0.2, 0.5, 0.3]);
        let r = hdr_region(&f, 0.7).unwrap();
        assert_eq!(r.cells, vec![(1, 0), (2, 0)]);
        assert!((r.p_sum - 0.8).abs() < 1e-15);
    }

    #[test]
    fn grid_too_small() {
        let f = field(2, 1, vec![0.3, 0.3]);
        assert!(matches!(hdr_region(&f, 0.8), Err(Error::GridTooSmall { .. })));
        assert!(matches!(branch_region(&f, 0.8, 0.5), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn hdr_is_minimal_subset() {
        for seed in 0..40 {
            let f = random_field(seed, 4, 3);
            let target = 0.8;
            let r = hdr_region(&f, target).unwrap();
            // Exhaustive search over all 4096 subsets.
            let mut best: Option<(u32, f64)> = None;
            for s in 0u32..(1 << 12) {
                let m: f64 = (0..12).filter(|k| s >> k & 1 == 1).map(|k| f.mass[k]).sum();
                if m > target {
                    let c = s.count_ones();
                    if best.map_or(true, |(bc, bm)| c < bc || (c == bc && m > bm)) {
                        best = Some((c, m));
                    }
                }
            }
            let (c, m) = best.unwrap();
            assert_eq!(r.cells.len() as u32, c, "seed {seed}");
            assert!((r.p_sum - m).abs() < 1e-12);
        }
    }

    #[test]
    fn one_ring_search_matches_hdr_on_gaussian_fields() {
        // With c_quick below the top cell the search only adds the best outside
        // neighbour, which is the next HDR cell whenever level sets are connected.
        for (cx, cy, sx, sy) in [(5.0, 5.0, 1.5, 1.5), (4.3, 6.1, 1.2, 2.0), (3.5, 3.5, 2.5, 1.0)] {
            let f = gaussian_field(10, 10, cx, cy, sx, sy);
            for t in [0.5, 0.8, 0.9] {
                let h = hdr_region(&f, t).unwrap();
                let b = branch_region(&f, t, 1e-6).unwrap();
                assert_eq!(h.cells, b.cells, "({cx},{cy}) target {t}");
            }
        }
    }

    #[test]
    fn default_branching_stays_near_hdr_on_gaussian_fields() {
        let f = gaussian_field(10, 10, 4.3, 6.1, 1.2, 2.0);
        let h = hdr_region(&f, 0.8).unwrap();
        let b = branch_region(&f, 0.8, 0.72).unwrap();
        assert!(b.p_sum >= 0.8);
        assert!(b.cells.len().abs_diff(h.cells.len()) <= 2);
    }

    #[test]
    fn shared_edge_goes_to_lower_cell() {
        let f = gaussian_field(4, 4, 2.0, 2.0, 1.0, 1.0);
        let r = hdr_region(&f, 0.5).unwrap();
        // x = 2 closes cell 1 on both axes.
        assert_eq!(f.grid.locate(2.0, 2.0), Some((1, 1)));
        assert_eq!(r.contains(2.0, 2.0), Membership::Inside);
        assert_eq!(r.contains(-1.0, 2.0), Membership::OffGrid);
        assert_eq!(r.contains(0.0, 2.0), Membership::OffGrid);
    }

    #[test]
    fn region_csv_lists_every_cell() {
        let f = gaussian_field(3, 2, 1.5, 1.0, 1.0, 1.0);
        let r = hdr_region(&f, 0.5).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "row,col,x_lo,x_hi,y_lo,y_hi,mass,selected");
        assert_eq!(lines.len(), 7);
        let selected = lines[1..].iter().filter(|l| l.ends_with(",1")).count();
        assert_eq!(selected, r.cells.len());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Branch, Algorithm::Hdr] {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert!("other".parse::<Algorithm>().is_err());
    }

    proptest! {
        #[test]
        fn hdr_invariants(seed in 0u64..100_000, target in 0.05f64..0.9) {
            let f = random_field(seed, 6, 5);
            let r = hdr_region(&f, target).unwrap();
            prop_assert!(r.p_sum > target);
            let min_in = r.cells.iter().map(|&(i, j)| f.get(i, j)).fold(f64::INFINITY, f64::min);
            prop_assert!(r.p_sum - min_in <= target);
            for ix in 0..6 {
                for iy in 0..5 {
                    if !r.contains_cell(ix, iy) {
                        prop_assert!(f.get(ix, iy) <= min_in);
                    }
                }
            }
        }

        #[test]
        fn branch_invariants(seed in 0u64..100_000, target in 0.3f64..0.9, frac in 0.1f64..0.99) {
            let f = random_field(seed, 8, 7);
            let r = branch_region(&f, target, frac * target).unwrap();
            let sum: f64 = r.cells.iter().map(|&(i, j)| f.get(i, j)).sum();
            prop_assert!((sum - r.p_sum).abs() < 1e-10);
            prop_assert!(r.p_sum >= target);
            let st = BranchState::new(8, 7);
            let mut sel = vec![false; 56];
            r.cells.iter().for_each(|&(i, j)| sel[i * 7 + j] = true);
            let st = BranchState { selected: sel, ..st };
            for k in st.boundary() {
                prop_assert!(r.p_sum - f.mass[k] < target);
            }
            let h = hdr_region(&f, target).unwrap();
            let max_cell = f.mass.iter().copied().fold(0.0, f64::max);
            prop_assert!(h.p_sum <= r.p_sum + max_cell);
        }

        #[test]
        fn scaling_keeps_cells(seed in 0u64..100_000, target in 0.1f64..0.8, shift in 0i32..4) {
            // Powers of two scale every partial sum exactly.
            let lambda = 2f64.powi(-shift);
            let f = random_field(seed, 5, 5);
            let mut g = f.clone();
            g.mass.iter_mut().for_each(|m| *m *= lambda);
            let t2 = lambda * target;
            prop_assert_eq!(hdr_region(&f, target).unwrap().cells, hdr_region(&g, t2).unwrap().cells);
            prop_assert_eq!(
                branch_region(&f, target, 0.9 * target).unwrap().cells,
                branch_region(&g, t2, 0.9 * t2).unwrap().cells
            );
        }

        #[test]
        fn top_cell_is_always_inside(seed in 0u64..100_000, target in 0.1f64..0.9) {
            let f = random_field(seed, 6, 6);
            let top = (0..36).min_by(by_mass_desc(&f.mass)).unwrap();
            let (cx, cy) = (top / 6, top % 6);
            let (a, b, c, d) = f.grid.cell(cx, cy);
            let (x, y) = (0.5 * (a + b), 0.5 * (c + d));
            prop_assert_eq!(hdr_region(&f, target).unwrap().contains(x, y), Membership::Inside);
        }
    }
}
