//! C interface to the two-firm closed forms, the continuum solvers and the
//! efficiency functional.
//!
//! Every function returns an [`SmStatus`]; results come back through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`sm_last_error_message`]. Objects are opaque and owned by the caller
//! once created; release them with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use searchmatch::continuum::{self, SolveOptions};
use searchmatch::efficiency;
use searchmatch::market::{FrictionParams, Grid, PreferenceDistribution, PreferenceKind, ShareProfile, SurplusFunction};
use searchmatch::two_firm;
use searchmatch::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    InvalidInput = 1,
    NonConvergence = 2,
    Degenerate = 3,
    RootNotFound = 4,
    NullPointer = 5,
    Io = 6,
    Panic = 7,
}

/// A discretized preference density.
pub struct SmPreference(PreferenceDistribution);

/// An equilibrium share profile with its solver diagnostics.
pub struct SmProfile {
    profile: ShareProfile,
    iterations: usize,
    residual: f64,
}

/// Fixed-point solver settings. Obtain defaults from
/// [`sm_solve_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmSolveOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
    /// Anderson mixing depth; 0 for the plain damped iteration.
    pub acceleration: usize,
    /// Nonzero to rescale each iterate to unit mass.
    pub renormalize: i32,
}

impl From<SmSolveOptions> for SolveOptions {
    fn from(o: SmSolveOptions) -> Self {
        SolveOptions {
            max_iterations: o.max_iterations,
            tolerance: o.tolerance,
            damping: o.damping,
            acceleration: o.acceleration,
            renormalize: o.renormalize != 0,
            ..SolveOptions::default()
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SmStatus {
    match e {
        Error::InvalidInput(_) | Error::Malformed { .. } => SmStatus::InvalidInput,
        Error::NonConvergence { .. } => SmStatus::NonConvergence,
        Error::Degenerate(_) => SmStatus::Degenerate,
        Error::RootNotFound(_) => SmStatus::RootNotFound,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => SmStatus::Io,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), SmStatus>) -> SmStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            SmStatus::Panic
        }
    }
}

fn lib<T>(r: searchmatch::Result<T>) -> Result<T, SmStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> SmStatus {
    set_error(format!("{what} is null"));
    SmStatus::NullPointer
}

/// # Safety
/// `p` must be null or valid for writes.
unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<(), SmStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// # Safety
/// `p` must be null or point to a live object of type `T`.
unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, SmStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Copies the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Share of firm A with size-independent meeting rates.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_share_constant_rate(p_a: f64, r_f: f64, out: *mut f64) -> SmStatus {
    guard(|| write(out, lib(two_firm::share_constant_rate(p_a, r_f))?, "out"))
}

/// Share of firm A with meeting rates proportional to size.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_share_proportional(p_a: f64, r_f: f64, out: *mut f64) -> SmStatus {
    guard(|| write(out, lib(two_firm::share_proportional(p_a, r_f))?, "out"))
}

/// Share of firm A with affine meeting rates: the equilibrium reached from
/// the frictionless allocation. `n_equilibria`, if not null, receives the
/// number of equilibria found.
///
/// # Safety
/// `out` must be valid for writes; `n_equilibria` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_share_affine(p_a: f64, r_f: f64, alpha: f64, out: *mut f64, n_equilibria: *mut usize) -> SmStatus {
    guard(|| {
        let sol = lib(two_firm::share_affine(p_a, r_f, alpha))?;
        write(out, sol.selected().share, "out")?;
        if !n_equilibria.is_null() {
            n_equilibria.write(sol.equilibria.len());
        }
        Ok(())
    })
}

/// Friction level above which firm A never exceeds its frictionless share.
/// `defined` receives 0 when no finite threshold exists (`alpha <= 1/2`).
///
/// # Safety
/// `out` and `defined` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_homogenizing_threshold(alpha: f64, out: *mut f64, defined: *mut i32) -> SmStatus {
    guard(|| {
        let t = lib(two_firm::homogenizing_threshold(alpha))?;
        write(defined, t.is_some() as i32, "defined")?;
        write(out, t.unwrap_or(f64::NAN), "out")
    })
}

/// Smallest friction level at which firm A takes the whole market under
/// proportional rates. `defined` receives 0 when `p_a <= 1/2`.
///
/// # Safety
/// `out` and `defined` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_winner_takes_all_threshold(p_a: f64, out: *mut f64, defined: *mut i32) -> SmStatus {
    guard(|| {
        let t = lib(two_firm::winner_takes_all_threshold(p_a))?;
        write(defined, t.is_some() as i32, "defined")?;
        write(out, t.unwrap_or(f64::NAN), "out")
    })
}

unsafe fn new_preference(kind: PreferenceKind, n: usize, out: *mut *mut SmPreference) -> SmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = lib(Grid::new(n))?;
        let pref = lib(PreferenceDistribution::new(&kind, &grid))?;
        out.write(Box::into_raw(Box::new(SmPreference(pref))));
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_preference_uniform(n: usize, out: *mut *mut SmPreference) -> SmStatus {
    new_preference(PreferenceKind::Uniform, n, out)
}

/// Constant density `height` on the arc `[lo, hi]`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_preference_block(n: usize, lo: f64, hi: f64, height: f64, out: *mut *mut SmPreference) -> SmStatus {
    new_preference(PreferenceKind::Block { lo, hi, height }, n, out)
}

/// Wrapped Gaussian density.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_preference_gaussian(n: usize, center: f64, sd: f64, out: *mut *mut SmPreference) -> SmStatus {
    new_preference(PreferenceKind::WrappedGaussian { center, sd }, n, out)
}

/// Density given by `n` cell values on the midpoint grid; rescaled to unit
/// mass.
///
/// # Safety
/// `values` must be valid for `n` reads; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_preference_from_values(values: *const f64, n: usize, out: *mut *mut SmPreference) -> SmStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = lib(Grid::new(n))?;
        let v = std::slice::from_raw_parts(values, n).to_vec();
        let pref = lib(PreferenceDistribution::from_values(grid, v))?;
        out.write(Box::into_raw(Box::new(SmPreference(pref))));
        Ok(())
    })
}

/// # Safety
/// `pref` must be null or come from an `sm_preference_*` constructor and
/// not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sm_preference_free(pref: *mut SmPreference) {
    if !pref.is_null() {
        drop(Box::from_raw(pref));
    }
}

/// Number of grid cells, 0 for a null handle.
///
/// # Safety
/// `pref` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_preference_len(pref: *const SmPreference) -> usize {
    pref.as_ref().map_or(0, |p| p.0.grid().len())
}

/// Location where both half circles carry half the preference mass.
///
/// # Safety
/// `pref` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_median_point(pref: *const SmPreference, out: *mut f64) -> SmStatus {
    guard(|| {
        let p = borrow(pref, "pref")?;
        write(out, lib(continuum::median_point(&p.0))?.y_star, "out")
    })
}

#[no_mangle]
pub extern "C" fn sm_solve_options_default() -> SmSolveOptions {
    let d = SolveOptions::default();
    SmSolveOptions {
        max_iterations: d.max_iterations,
        tolerance: d.tolerance,
        damping: d.damping,
        acceleration: d.acceleration,
        renormalize: d.renormalize as i32,
    }
}

fn boxed_profile(profile: ShareProfile, iterations: usize, residual: f64) -> *mut SmProfile {
    Box::into_raw(Box::new(SmProfile {
        profile,
        iterations,
        residual,
    }))
}

/// Closed-form equilibrium shares with size-independent meeting rates.
///
/// # Safety
/// `pref` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_solve_constant_rate(pref: *const SmPreference, r_f: f64, out: *mut *mut SmProfile) -> SmStatus {
    guard(|| {
        let p = borrow(pref, "pref")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = lib(continuum::solve_constant_rate(&p.0, r_f))?;
        out.write(boxed_profile(s, 0, 0.0));
        Ok(())
    })
}

/// Equilibrium shares for meeting-rate slope `alpha` by fixed-point
/// iteration. `opts` may be null for the defaults.
///
/// # Safety
/// `pref` must be a live handle; `opts` null or valid; `out` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn sm_solve_fixed_point(
    pref: *const SmPreference,
    r_f: f64,
    alpha: f64,
    opts: *const SmSolveOptions,
    out: *mut *mut SmProfile,
) -> SmStatus {
    guard(|| {
        let p = borrow(pref, "pref")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts: SolveOptions = opts.as_ref().map_or_else(SolveOptions::default, |o| (*o).into());
        let fr = lib(FrictionParams::from_rf(r_f, alpha))?;
        let sol = lib(continuum::solve_fixed_point(&p.0, &fr, &opts))?;
        out.write(boxed_profile(sol.profile, sol.report.iterations, sol.report.residual));
        Ok(())
    })
}

/// Number of cells, 0 for a null handle.
///
/// # Safety
/// `profile` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_profile_len(profile: *const SmProfile) -> usize {
    profile.as_ref().map_or(0, |p| p.profile.shares().len())
}

/// Copies the shares into `buf`, which must hold `len >= sm_profile_len`
/// values.
///
/// # Safety
/// `profile` must be a live handle; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sm_profile_copy(profile: *const SmProfile, buf: *mut f64, len: usize) -> SmStatus {
    guard(|| {
        let p = borrow(profile, "profile")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let s = p.profile.shares();
        if len < s.len() {
            set_error(format!("buffer holds {len} values, profile has {}", s.len()));
            return Err(SmStatus::InvalidInput);
        }
        std::ptr::copy_nonoverlapping(s.as_ptr(), buf, s.len());
        Ok(())
    })
}

/// Iterations used and final residual `sup |F(s) - s|`; both 0 for closed
/// forms.
///
/// # Safety
/// `profile` must be a live handle; the out pointers null or valid.
#[no_mangle]
pub unsafe extern "C" fn sm_profile_diagnostics(
    profile: *const SmProfile,
    iterations: *mut usize,
    residual: *mut f64,
) -> SmStatus {
    guard(|| {
        let p = borrow(profile, "profile")?;
        if !iterations.is_null() {
            iterations.write(p.iterations);
        }
        if !residual.is_null() {
            residual.write(p.residual);
        }
        Ok(())
    })
}

/// # Safety
/// `profile` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_profile_free(profile: *mut SmProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Matching efficiency at slope `alpha` with surplus `1 - d(x, y)`, up to
/// the common positive factor.
///
/// # Safety
/// `pref` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_efficiency(pref: *const SmPreference, r_f: f64, alpha: f64, out: *mut f64) -> SmStatus {
    guard(|| {
        let p = borrow(pref, "pref")?;
        let v = lib(efficiency::efficiency(
            alpha,
            &p.0,
            r_f,
            &SurplusFunction::default(),
            &SolveOptions::accelerated(),
        ))?;
        write(out, v, "out")
    })
}

/// Utility of one agent using `alpha` while everyone else uses
/// `alpha_tilde`, on the same scale as [`sm_efficiency`].
///
/// # Safety
/// `pref` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_agent_utility(
    pref: *const SmPreference,
    r_f: f64,
    alpha: f64,
    alpha_tilde: f64,
    out: *mut f64,
) -> SmStatus {
    guard(|| {
        let p = borrow(pref, "pref")?;
        let v = lib(efficiency::agent_utility(
            alpha,
            alpha_tilde,
            &p.0,
            r_f,
            &SurplusFunction::default(),
            &SolveOptions::accelerated(),
        ))?;
        write(out, v, "out")
    })
}
