#![allow(clippy::missing_safety_doc)]
//! C interface to the screening engine.
//!
//! Objects are opaque handles released with the matching `*_free`. Every
//! fallible call returns a `CtsStatus`; on failure `cts_last_error` holds a
//! message for the calling thread until its next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use ctscreen::data::{read_dataset_file, Observation};
use ctscreen::model::ModelConfig;
use ctscreen::predictive::{cell_field, log_predictive, CellField, GridSpec, PredictionRequest};
use ctscreen::region::{branch_region, default_c_quick, hdr_region, CredibleRegion, Membership};
use ctscreen::sampler::{fit, DrawStore, McmcConfig};
use ctscreen::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numeric = 4,
    GridTooSmall = 5,
    NonConvergence = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtsAlgorithm {
    Hdr = 0,
    Branch = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtsMembership {
    Inside = 0,
    Outside = 1,
    OffGrid = 2,
}

/// A subject to predict for. History arrays may be null when their length is 0.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CtsRequest {
    pub baseline_x: f64,
    pub baseline_y: f64,
    pub x_times: *const f64,
    pub x_values: *const f64,
    pub n_x: usize,
    pub y_times: *const f64,
    pub y_values: *const f64,
    pub n_y: usize,
}

pub struct CtsDrawStore(DrawStore);
pub struct CtsCellField(CellField);
pub struct CtsRegion(CredibleRegion);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CtsStatus {
    match e {
        Error::Data(_) | Error::Json(_) => CtsStatus::Data,
        Error::InvalidArgument(_) => CtsStatus::InvalidArgument,
        Error::Numeric(_) => CtsStatus::Numeric,
        Error::GridTooSmall { .. } => CtsStatus::GridTooSmall,
        Error::NonConvergence(_) => CtsStatus::NonConvergence,
        Error::Io(_) => CtsStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Engine(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CtsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CtsStatus::NullPointer
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CtsStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Engine(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn as_slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn series(t: *const f64, v: *const f64, n: usize) -> Result<Vec<Observation>, Fail> {
    let t = as_slice(t, n, "history times")?;
    let v = as_slice(v, n, "history values")?;
    Ok(t.iter().zip(v).map(|(&t, &v)| Observation::new(t, v)).collect())
}

unsafe fn request(r: &CtsRequest, future_times: Vec<f64>) -> Result<PredictionRequest, Fail> {
    let mut req = PredictionRequest::new_subject(r.baseline_x, r.baseline_y, future_times);
    req.history_x = series(r.x_times, r.x_values, r.n_x)?;
    req.history_y = series(r.y_times, r.y_values, r.n_y)?;
    req.validate()?;
    Ok(req)
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Message for the last failing call on this thread; empty if none. Owned by the library.
#[no_mangle]
pub extern "C" fn cts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a draw store written by `ctscreen fit`.
#[no_mangle]
pub unsafe extern "C" fn cts_draw_store_open(path: *const c_char, out: *mut *mut CtsDrawStore) -> CtsStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        let store = DrawStore::read_file(Path::new(path))?;
        put(out, CtsDrawStore(store))
    })
}

/// Fits the model to a dataset CSV. Zero for `classes`, `burn_in` or `keep` selects the default.
#[no_mangle]
pub unsafe extern "C" fn cts_fit_file(
    data_path: *const c_char,
    classes: usize,
    burn_in: usize,
    keep: usize,
    seed: u64,
    out: *mut *mut CtsDrawStore,
) -> CtsStatus {
    guard(|| {
        let d = read_dataset_file(Path::new(as_str(data_path, "data_path")?))?;
        let mut mc = ModelConfig::default();
        if classes > 0 {
            mc.classes = classes;
        }
        let mut run = McmcConfig { seed, ..McmcConfig::default() };
        if burn_in > 0 {
            run.burn_in = burn_in;
        }
        if keep > 0 {
            run.keep = keep;
        }
        put(out, CtsDrawStore(fit(&d, &mc, &run)?))
    })
}

/// Writes the store as NDJSON.
#[no_mangle]
pub unsafe extern "C" fn cts_draw_store_save(store: *const CtsDrawStore, path: *const c_char) -> CtsStatus {
    guard(|| {
        let store = as_ref(store, "store")?;
        let path = as_str(path, "path")?;
        let f = std::fs::File::create(path).map_err(Error::from)?;
        let mut w = std::io::BufWriter::new(f);
        store.0.write_ndjson(&mut w)?;
        std::io::Write::flush(&mut w).map_err(Error::from)?;
        Ok(())
    })
}

/// Number of retained draws, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cts_draw_store_n_draws(store: *const CtsDrawStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.n_draws())
}

#[no_mangle]
pub unsafe extern "C" fn cts_draw_store_free(store: *mut CtsDrawStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Log joint predictive density of `k` future points (times strictly increasing).
#[no_mangle]
pub unsafe extern "C" fn cts_log_predictive(
    store: *const CtsDrawStore,
    req: *const CtsRequest,
    times: *const f64,
    xs: *const f64,
    ys: *const f64,
    k: usize,
    out: *mut f64,
) -> CtsStatus {
    guard(|| {
        let store = as_ref(store, "store")?;
        let r = as_ref(req, "req")?;
        let times = as_slice(times, k, "times")?;
        let xs = as_slice(xs, k, "xs")?;
        let ys = as_slice(ys, k, "ys")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let req = request(r, times.to_vec())?;
        *out = log_predictive(&req, xs, ys, &store.0)?;
        Ok(())
    })
}

/// Predictive cell masses at `future_time` over `grid` (`lo:hi:width,lo:hi:width`).
#[no_mangle]
pub unsafe extern "C" fn cts_cell_field_new(
    store: *const CtsDrawStore,
    req: *const CtsRequest,
    future_time: f64,
    grid: *const c_char,
    out: *mut *mut CtsCellField,
) -> CtsStatus {
    guard(|| {
        let store = as_ref(store, "store")?;
        let r = as_ref(req, "req")?;
        let grid = GridSpec::parse(as_str(grid, "grid")?)?;
        let req = request(r, vec![future_time])?;
        put(out, CtsCellField(cell_field(&req, &grid, &store.0)?))
    })
}

/// Grid size in cells along x and y.
#[no_mangle]
pub unsafe extern "C" fn cts_cell_field_dims(
    field: *const CtsCellField,
    n_x: *mut usize,
    n_y: *mut usize,
) -> CtsStatus {
    guard(|| {
        let f = as_ref(field, "field")?;
        if n_x.is_null() || n_y.is_null() {
            return Err(Fail::Null("n_x/n_y"));
        }
        *n_x = f.0.grid.n_x();
        *n_y = f.0.grid.n_y();
        Ok(())
    })
}

/// Copies the masses, x-major (`mass[ix * n_y + iy]`), into `buf` of length `len = n_x * n_y`.
#[no_mangle]
pub unsafe extern "C" fn cts_cell_field_mass(
    field: *const CtsCellField,
    buf: *mut f64,
    len: usize,
    outside_mass: *mut f64,
) -> CtsStatus {
    guard(|| {
        let f = as_ref(field, "field")?;
        if len != f.0.mass.len() {
            return Err(
                Error::InvalidArgument(format!("buffer holds {len} cells, field has {}", f.0.mass.len())).into()
            );
        }
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        slice::from_raw_parts_mut(buf, len).copy_from_slice(&f.0.mass);
        if !outside_mass.is_null() {
            *outside_mass = f.0.outside_mass;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cts_cell_field_free(field: *mut CtsCellField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Credible region at level `target`. For the branching search, `c_quick <= 0` picks 0.9 × target.
#[no_mangle]
pub unsafe extern "C" fn cts_region_new(
    field: *const CtsCellField,
    target: f64,
    algorithm: CtsAlgorithm,
    c_quick: f64,
    out: *mut *mut CtsRegion,
) -> CtsStatus {
    guard(|| {
        let f = as_ref(field, "field")?;
        let region = match algorithm {
            CtsAlgorithm::Hdr => hdr_region(&f.0, target)?,
            CtsAlgorithm::Branch => {
                let c = if c_quick > 0.0 { c_quick } else { default_c_quick(target) };
                branch_region(&f.0, target, c)?
            }
        };
        put(out, CtsRegion(region))
    })
}

/// Accumulated mass of the selected cells.
#[no_mangle]
pub unsafe extern "C" fn cts_region_p_sum(region: *const CtsRegion) -> f64 {
    region.as_ref().map_or(f64::NAN, |r| r.0.p_sum)
}

#[no_mangle]
pub unsafe extern "C" fn cts_region_n_cells(region: *const CtsRegion) -> usize {
    region.as_ref().map_or(0, |r| r.0.cells.len())
}

/// Copies up to `len` selected cells as (x index, y index) pairs; writes the count copied to `n_out`.
#[no_mangle]
pub unsafe extern "C" fn cts_region_cells(
    region: *const CtsRegion,
    ix: *mut usize,
    iy: *mut usize,
    len: usize,
    n_out: *mut usize,
) -> CtsStatus {
    guard(|| {
        let r = as_ref(region, "region")?;
        let n = len.min(r.0.cells.len());
        if n > 0 && (ix.is_null() || iy.is_null()) {
            return Err(Fail::Null("ix/iy"));
        }
        for (k, &(a, b)) in r.0.cells.iter().take(n).enumerate() {
            *ix.add(k) = a;
            *iy.add(k) = b;
        }
        if !n_out.is_null() {
            *n_out = n;
        }
        Ok(())
    })
}

/// Whether `(x, y)` falls in a selected cell, an unselected cell, or off the grid.
#[no_mangle]
pub unsafe extern "C" fn cts_region_contains(
    region: *const CtsRegion,
    x: f64,
    y: f64,
    out: *mut CtsMembership,
) -> CtsStatus {
    guard(|| {
        let r = as_ref(region, "region")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = match r.0.contains(x, y) {
            Membership::Inside => CtsMembership::Inside,
            Membership::Outside => CtsMembership::Outside,
            Membership::OffGrid => CtsMembership::OffGrid,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cts_region_free(region: *mut CtsRegion) {
    if !region.is_null() {
        drop(Box::from_raw(region));
    }
}
