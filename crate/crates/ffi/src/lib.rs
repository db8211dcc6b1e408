//! C interface to the `drm` simulator.
//!
//! Objects are opaque heap handles created by `drm_*_new` style calls and
//! released with the matching `drm_*_free`. Every fallible call returns a
//! [`DrmStatus`]; on failure `drm_last_error` describes the problem for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use drm::classical::{classify_basin, period_map_jacobian_det, AttractorKind, BasinOptions, PhasePoint};
use drm::effective::{separatrix_area, EffectiveParams};
use drm::error::Error;
use drm::model::{derive_geometry, parse_config, ModelParams};
use drm::quantum::{evolve, DensityMatrix, EvolveOptions, MomentumBasis};
use drm::superop::{floquet_operator, spectrum, FloquetOperator, FloquetOptions, SpectrumKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Precondition = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Attractor labels returned by `drm_classify_basin`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrmAttractor {
    UpperCycle = 0,
    LowerCycle = 1,
    FixedPoint0 = 2,
    FixedPointPi = 3,
    Unresolved = 4,
}

impl From<AttractorKind> for DrmAttractor {
    fn from(k: AttractorKind) -> Self {
        match k {
            AttractorKind::UpperCycle => DrmAttractor::UpperCycle,
            AttractorKind::LowerCycle => DrmAttractor::LowerCycle,
            AttractorKind::FixedPoint0 => DrmAttractor::FixedPoint0,
            AttractorKind::FixedPointPi => DrmAttractor::FixedPointPi,
            AttractorKind::Unresolved => DrmAttractor::Unresolved,
        }
    }
}

/// Resonance geometry; `theta0` is meaningful only when `has_cycle` is nonzero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DrmGeometry {
    pub i_plus: f64,
    pub i_minus: f64,
    pub delta_i_plus: f64,
    pub delta_i_minus: f64,
    pub has_cycle: i32,
    pub theta0: f64,
    pub gamma_critical: f64,
}

/// Model parameters.
pub struct DrmModel(ModelParams);

/// Density matrix on a momentum basis.
pub struct DrmDensity(DensityMatrix);

/// One-period super-operator.
pub struct DrmFloquet(FloquetOperator);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DrmStatus {
    match e {
        Error::Validation { .. } | Error::SizeMismatch { .. } | Error::BadBins | Error::EmptyEnsemble => {
            DrmStatus::InvalidArgument
        }
        Error::ConfigParse { .. } | Error::Io { .. } => DrmStatus::Config,
        Error::NotConverged { .. } | Error::Eigen { .. } | Error::Quadrature { .. } => DrmStatus::Numerical,
        _ => DrmStatus::Precondition,
    }
}

enum Fail {
    Null,
    Core(Error),
    Small(usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DrmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DrmStatus::Ok,
        Ok(Err(Fail::Null)) => {
            set_error("null pointer argument".into());
            DrmStatus::NullPointer
        }
        Ok(Err(Fail::Small(need))) => {
            set_error(format!("buffer too small: need {need} entries"));
            DrmStatus::BufferTooSmall
        }
        Ok(Err(Fail::Core(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DrmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null)
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null);
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn basis(n_min: i64, n_max: i64) -> Result<MomentumBasis, Fail> {
    Ok(MomentumBasis::range(n_min, n_max)?)
}

/// Message for the last failed call on this thread; valid until the next failure.
#[no_mangle]
pub extern "C" fn drm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn drm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Validated model parameters.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn drm_model_new(
    g: f64,
    v_plus: f64,
    v_minus: f64,
    omega: f64,
    gamma: f64,
    hbar: f64,
    out: *mut *mut DrmModel,
) -> DrmStatus {
    guard(|| put(out, DrmModel(ModelParams::new(g, v_plus, v_minus, omega, gamma, hbar)?)))
}

/// Reads the `[model]` section of a TOML document.
///
/// # Safety
/// `toml` must be nul-terminated UTF-8 and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn drm_model_from_toml(toml: *const c_char, out: *mut *mut DrmModel) -> DrmStatus {
    guard(|| {
        if toml.is_null() {
            return Err(Fail::Null);
        }
        let text = CStr::from_ptr(toml).to_str().map_err(|_| {
            Fail::Core(Error::ConfigParse {
                key: "<document>".into(),
                message: "not valid UTF-8".into(),
            })
        })?;
        put(out, DrmModel(parse_config(text)?.model))
    })
}

/// Releases a model handle.
///
/// # Safety
/// `model` must come from `drm_model_new`/`drm_model_from_toml` or be null.
#[no_mangle]
pub unsafe extern "C" fn drm_model_free(model: *mut DrmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Resonance positions, widths and the upper-cycle phase.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn drm_model_geometry(model: *const DrmModel, out: *mut DrmGeometry) -> DrmStatus {
    guard(|| {
        let m = deref(model)?;
        if out.is_null() {
            return Err(Fail::Null);
        }
        let g = derive_geometry(&m.0);
        *out = DrmGeometry {
            i_plus: g.i_plus,
            i_minus: g.i_minus,
            delta_i_plus: g.delta_i_plus,
            delta_i_minus: g.delta_i_minus,
            has_cycle: g.theta0.is_some() as i32,
            theta0: g.theta0.unwrap_or(f64::NAN),
            gamma_critical: g.gamma_critical,
        };
        Ok(())
    })
}

/// Finite-difference Jacobian determinant of the one-period map.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn drm_map_jacobian_det(
    model: *const DrmModel,
    theta: f64,
    action: f64,
    steps_per_period: usize,
    out: *mut f64,
) -> DrmStatus {
    guard(|| {
        let m = deref(model)?;
        if out.is_null() {
            return Err(Fail::Null);
        }
        if steps_per_period == 0 {
            return Err(Fail::Core(Error::Validation {
                key: "steps_per_period",
                reason: "must be positive".into(),
            }));
        }
        *out = period_map_jacobian_det(PhasePoint::new(theta, action), &m.0, steps_per_period, 1e-5);
        Ok(())
    })
}

/// Attractor reached from `(theta, action)` with the default basin options.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn drm_classify_basin(
    model: *const DrmModel,
    theta: f64,
    action: f64,
    out: *mut DrmAttractor,
) -> DrmStatus {
    guard(|| {
        let m = deref(model)?;
        if out.is_null() {
            return Err(Fail::Null);
        }
        let label = classify_basin(PhasePoint::new(theta, action), &m.0, &BasinOptions::for_params(&m.0))?;
        *out = label.kind.into();
        Ok(())
    })
}

/// Area of the separatrix of the effective pendulum; zero when `*exists` is 0.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn drm_separatrix_area(
    model: *const DrmModel,
    area: *mut f64,
    exists: *mut i32,
) -> DrmStatus {
    guard(|| {
        let m = deref(model)?;
        if area.is_null() || exists.is_null() {
            return Err(Fail::Null);
        }
        let r = separatrix_area(&EffectiveParams::from_model(&m.0))?;
        *area = r.area;
        *exists = r.exists as i32;
        Ok(())
    })
}

/// Pure state `|n><n|` on levels `n_min..=n_max`.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn drm_density_pure(n_min: i64, n_max: i64, n: i64, out: *mut *mut DrmDensity) -> DrmStatus {
    guard(|| put(out, DrmDensity(DensityMatrix::pure_level(basis(n_min, n_max)?, n)?)))
}

/// Releases a density-matrix handle.
///
/// # Safety
/// `rho` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn drm_density_free(rho: *mut DrmDensity) {
    if !rho.is_null() {
        drop(Box::from_raw(rho));
    }
}

/// Number of levels (matrix side length); 0 for a null handle.
///
/// # Safety
/// `rho` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn drm_density_levels(rho: *const DrmDensity) -> usize {
    rho.as_ref().map_or(0, |r| r.0.dim())
}

/// Copies the diagonal, ordered from `n_min` up, into `buf[0..len]`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn drm_density_populations(rho: *const DrmDensity, buf: *mut f64, len: usize) -> DrmStatus {
    guard(|| {
        let r = deref(rho)?;
        if buf.is_null() {
            return Err(Fail::Null);
        }
        let p = r.0.populations();
        if len < p.len() {
            return Err(Fail::Small(p.len()));
        }
        std::slice::from_raw_parts_mut(buf, p.len()).copy_from_slice(&p);
        Ok(())
    })
}

/// Trace of `rho` as `(re, im)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn drm_density_trace(rho: *const DrmDensity, re: *mut f64, im: *mut f64) -> DrmStatus {
    guard(|| {
        let r = deref(rho)?;
        if re.is_null() || im.is_null() {
            return Err(Fail::Null);
        }
        let t = r.0.trace();
        *re = t.re;
        *im = t.im;
        Ok(())
    })
}

/// Master-equation evolution of `rho` by `periods` driving periods.
///
/// # Safety
/// Pointers must be valid; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn drm_evolve(
    model: *const DrmModel,
    rho: *const DrmDensity,
    periods: u32,
    steps_per_period: usize,
    out: *mut *mut DrmDensity,
) -> DrmStatus {
    guard(|| {
        let m = deref(model)?;
        let r = deref(rho)?;
        if steps_per_period == 0 {
            return Err(Fail::Core(Error::Validation {
                key: "steps_per_period",
                reason: "must be positive".into(),
            }));
        }
        let state = if periods == 0 {
            r.0.clone()
        } else {
            let opts = EvolveOptions { steps_per_period, ..EvolveOptions::default() };
            let t = periods as f64 * m.0.period();
            evolve(&r.0, 0.0, &[t], &m.0, &opts)?.states.remove(0)
        };
        put(out, DrmDensity(state))
    })
}

/// Builds the one-period super-operator on levels `n_min..=n_max`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn drm_floquet_new(
    model: *const DrmModel,
    n_min: i64,
    n_max: i64,
    steps_per_period: usize,
    out: *mut *mut DrmFloquet,
) -> DrmStatus {
    guard(|| {
        let m = deref(model)?;
        if out.is_null() {
            return Err(Fail::Null);
        }
        let opts = FloquetOptions { steps_per_period, ..FloquetOptions::default() };
        put(out, DrmFloquet(floquet_operator(&basis(n_min, n_max)?, &m.0, &opts)?))
    })
}

/// Releases a super-operator handle.
///
/// # Safety
/// `u` must come from `drm_floquet_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn drm_floquet_free(u: *mut DrmFloquet) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// Number of eigenvalues, `levels^2`; 0 for a null handle.
///
/// # Safety
/// `u` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn drm_floquet_dim(u: *const DrmFloquet) -> usize {
    u.as_ref().map_or(0, |u| u.0.op.dim())
}

/// Eigenvalues sorted by decreasing modulus into `re[0..len]`, `im[0..len]`.
///
/// # Safety
/// `re` and `im` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn drm_floquet_eigenvalues(
    u: *const DrmFloquet,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> DrmStatus {
    guard(|| {
        let u = deref(u)?;
        if re.is_null() || im.is_null() {
            return Err(Fail::Null);
        }
        let need = u.0.op.dim();
        if len < need {
            return Err(Fail::Small(need));
        }
        let ev = spectrum(&u.0.op, SpectrumKind::Floquet)?;
        let (re, im) = (std::slice::from_raw_parts_mut(re, need), std::slice::from_raw_parts_mut(im, need));
        for (k, z) in ev.iter().enumerate() {
            re[k] = z.re;
            im[k] = z.im;
        }
        Ok(())
    })
}

/// Applies one period: `out = U rho`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn drm_floquet_apply(
    u: *const DrmFloquet,
    rho: *const DrmDensity,
    out: *mut *mut DrmDensity,
) -> DrmStatus {
    guard(|| {
        let u = deref(u)?;
        let r = deref(rho)?;
        if *r.0.basis() != u.0.op.basis {
            return Err(Fail::Core(Error::SizeMismatch {
                expected: u.0.op.basis.dim(),
                actual: r.0.dim(),
            }));
        }
        put(out, DrmDensity(u.0.op.apply_to(&r.0)))
    })
}
