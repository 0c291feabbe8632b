//! C ABI for `tro-core`.
//!
//! Handles are opaque and owned by the caller; release them with the matching
//! `*_free` function. Every entry point returns a [`TroStatus`]. On failure a
//! message is available from [`tro_last_error`] until the next call on the
//! same thread. Strings returned through out-pointers are freed with
//! [`tro_string_free`]. Matrices cross the boundary as separate real and
//! imaginary arrays in row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use tro_core::cli::{self, Command, InstanceFile, LoadedInstance, Overrides, Settings};
use tro_core::expectation::{assemble_expectation, verify_expectation, BlockExpectation, VerifyOptions};
use tro_core::gen::DegenerateKind;
use tro_core::tro::{linking_algebra, Tro};
use tro_core::{ComplexMatrix, Error, C64};

/// Status codes returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TroStatus {
    Ok = 0,
    /// A required pointer argument was null.
    Null = 1,
    InvalidInput = 2,
    NotInSpan = 3,
    Degenerate = 4,
    Precondition = 5,
    Internal = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// An instance file after parsing and validation.
pub struct TroInstance {
    file: InstanceFile,
    loaded: LoadedInstance,
}

/// A conditional expectation on the linking algebra of an instance.
pub struct TroExpectation {
    e: BlockExpectation,
    x: Tro,
    t: Tro,
    size: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(err: &Error) -> TroStatus {
    match err {
        Error::InvalidInput(_) => TroStatus::InvalidInput,
        Error::NotInSpan { .. } => TroStatus::NotInSpan,
        Error::Degenerate(_) => TroStatus::Degenerate,
        Error::Precondition(_) => TroStatus::Precondition,
        Error::Internal(_) => TroStatus::Internal,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TroStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TroStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            TroStatus::Null
        }
        Ok(Err(Fail::Core(e))) => {
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
            TroStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidInput(format!("{what} is not UTF-8"))))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

unsafe fn read_matrix(rows: usize, cols: usize, re: *const f64, im: *const f64) -> Result<ComplexMatrix, Fail> {
    if re.is_null() {
        return Err(Fail::Null("re"));
    }
    let n = rows * cols;
    let re = std::slice::from_raw_parts(re, n);
    let im = if im.is_null() { None } else { Some(std::slice::from_raw_parts(im, n)) };
    let m = DMatrix::from_fn(rows, cols, |i, j| {
        let k = i * cols + j;
        C64::new(re[k], im.map_or(0.0, |v| v[k]))
    });
    Ok(ComplexMatrix::new(m)?)
}

unsafe fn write_matrix(m: &ComplexMatrix, re: *mut f64, im: *mut f64) -> Result<(), Fail> {
    if re.is_null() || im.is_null() {
        return Err(Fail::Null("output arrays"));
    }
    let (rows, cols) = m.shape();
    let re = std::slice::from_raw_parts_mut(re, rows * cols);
    let im = std::slice::from_raw_parts_mut(im, rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let z = m.get(i, j);
            re[i * cols + j] = z.re;
            im[i * cols + j] = z.im;
        }
    }
    Ok(())
}

fn instance_from_file(file: InstanceFile) -> Result<Box<TroInstance>, Error> {
    let loaded = file.load(Overrides::default())?;
    Ok(Box::new(TroInstance { file, loaded }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tro_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tro_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses an instance file from NUL-terminated JSON text.
///
/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tro_instance_from_json(json: *const c_char, out: *mut *mut TroInstance) -> TroStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let file = InstanceFile::parse(text)?;
        *out = Box::into_raw(instance_from_file(file)?);
        Ok(())
    })
}

/// Generates an instance. `family` is one of `corner`, `group`, `random`,
/// `degenerate`; `kind` names the degenerate kind and may be null otherwise.
/// Zero ranks select full-rank corner projections.
///
/// # Safety
/// String arguments must be valid C strings or null where allowed; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tro_instance_generate(
    family: *const c_char,
    m: usize,
    n: usize,
    rank_e: usize,
    rank_f: usize,
    order: usize,
    kind: *const c_char,
    seed: u64,
    out: *mut *mut TroInstance,
) -> TroStatus {
    guard(|| {
        let family = str_arg(family, "family")?;
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let kind = if kind.is_null() {
            None
        } else {
            Some(str_arg(kind, "kind")?.parse::<DegenerateKind>()?)
        };
        let some = |r: usize| (r > 0).then_some(r);
        let spec = cli::GenSpec {
            family: family.to_string(),
            m,
            n,
            rank_e: some(rank_e),
            rank_f: some(rank_f),
            order,
            kind,
            seed,
        };
        let file = cli::generate(&spec)?;
        *out = Box::into_raw(instance_from_file(file)?);
        Ok(())
    })
}

/// Writes the instance file JSON (17 significant digits) to `*out`.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tro_instance_to_json(inst: *const TroInstance, out: *mut *mut c_char) -> TroStatus {
    guard(|| {
        let inst = ref_arg(inst, "inst")?;
        let out = out_arg(out, "out")?;
        *out = into_c_string(inst.file.to_json());
        Ok(())
    })
}

/// Ambient shape `dim_k × dim_h` and the dimensions of T and X (0 if absent).
///
/// # Safety
/// `inst` must be a live handle; each out-pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn tro_instance_dims(
    inst: *const TroInstance,
    dim_k: *mut usize,
    dim_h: *mut usize,
    dim_t: *mut usize,
    dim_x: *mut usize,
) -> TroStatus {
    guard(|| {
        let inst = ref_arg(inst, "inst")?;
        let t = &inst.loaded.t_space;
        *out_arg(dim_k, "dim_k")? = t.ambient_rows();
        *out_arg(dim_h, "dim_h")? = t.ambient_cols();
        *out_arg(dim_t, "dim_t")? = t.dim();
        *out_arg(dim_x, "dim_x")? = inst.loaded.x_space.as_ref().map_or(0, |x| x.dim());
        Ok(())
    })
}

/// Runs a CLI command (`check-tro`, `extend`, ...) on the instance.
///
/// `*report` receives the JSON report and `*pass` is 1 when every mandatory
/// check passed. Mathematical failures are reported with `TRO_STATUS_OK`
/// and `*pass == 0`. Pass 0 for `amp_level` or `restarts` to use the defaults.
///
/// # Safety
/// Pointers must be valid; `inst` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tro_run(
    inst: *const TroInstance,
    command: *const c_char,
    amp_level: usize,
    restarts: usize,
    report: *mut *mut c_char,
    pass: *mut c_int,
) -> TroStatus {
    guard(|| {
        let inst = ref_arg(inst, "inst")?;
        let cmd: Command = str_arg(command, "command")?.parse()?;
        let report = out_arg(report, "report")?;
        let pass = out_arg(pass, "pass")?;
        let d = Settings::default();
        let settings = Settings {
            amp_level: if amp_level == 0 { d.amp_level } else { amp_level },
            restarts: if restarts == 0 { d.restarts } else { restarts },
            ..d
        };
        let outcome = match cli::run_command(cmd, &inst.loaded, settings) {
            Ok(o) => o,
            Err(e) => cli::outcome_from_error(cmd, &e).ok_or(Fail::Core(e))?,
        };
        let digest = cli::input_digest(inst.file.to_json().as_bytes());
        let json = serde_json::to_string(&cli::report_json(&outcome, &digest)).map_err(|e| Error::Internal(e.to_string()))?;
        *report = into_c_string(json);
        *pass = c_int::from(outcome.pass());
        Ok(())
    })
}

/// Builds `E = [[PP†, P], [P†, P†P]]` for the instance's P.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tro_extend(inst: *const TroInstance, out: *mut *mut TroExpectation) -> TroStatus {
    guard(|| {
        let inst = ref_arg(inst, "inst")?;
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let t = inst.loaded.t_tro()?;
        let x = Tro::new(inst.loaded.require_x()?.clone())?;
        let e = assemble_expectation(inst.loaded.require_p()?, &x, &t)?;
        let size = linking_algebra(&t)?.layout.size();
        *out = Box::into_raw(Box::new(TroExpectation { e, x, t, size }));
        Ok(())
    })
}

/// Side length `dim_k + dim_h` of the matrices E acts on.
///
/// # Safety
/// `e` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tro_expectation_size(e: *const TroExpectation, size: *mut usize) -> TroStatus {
    guard(|| {
        *out_arg(size, "size")? = ref_arg(e, "e")?.size;
        Ok(())
    })
}

/// Applies E to a `size × size` matrix; `im` may be null for real input.
/// The input is first projected onto the linking algebra.
///
/// # Safety
/// Input arrays must hold `size * size` values, output arrays likewise.
#[no_mangle]
pub unsafe extern "C" fn tro_expectation_apply(
    e: *const TroExpectation,
    re: *const f64,
    im: *const f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> TroStatus {
    guard(|| {
        let e = ref_arg(e, "e")?;
        let a = read_matrix(e.size, e.size, re, im)?;
        write_matrix(&e.e.apply(&a), out_re, out_im)
    })
}

/// Checks the conditional-expectation axioms; `*pass` is 1 on success and
/// `*worst_residual` receives the largest residual.
///
/// # Safety
/// `e` must be a live handle; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tro_expectation_verify(
    e: *const TroExpectation,
    amp_level: usize,
    seed: u64,
    pass: *mut c_int,
    worst_residual: *mut f64,
) -> TroStatus {
    guard(|| {
        let e = ref_arg(e, "e")?;
        let pass = out_arg(pass, "pass")?;
        let worst = out_arg(worst_residual, "worst_residual")?;
        let opts = VerifyOptions {
            amplification_level: amp_level.max(1),
            seed,
            ..VerifyOptions::default()
        };
        let rep = verify_expectation(&e.e, &e.x, &e.t, opts)?;
        *pass = c_int::from(rep.pass);
        *worst = rep.worst_residual();
        Ok(())
    })
}

/// Operator norm (largest singular value) of a `rows × cols` matrix.
///
/// # Safety
/// `re` (and `im` unless null) must hold `rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn tro_operator_norm(
    rows: usize,
    cols: usize,
    re: *const f64,
    im: *const f64,
    out: *mut f64,
) -> TroStatus {
    guard(|| {
        let m = read_matrix(rows, cols, re, im)?;
        *out_arg(out, "out")? = m.operator_norm();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn tro_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `inst` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn tro_instance_free(inst: *mut TroInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// # Safety
/// `e` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn tro_expectation_free(e: *mut TroExpectation) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}
