//! C ABI over `dtstab`.
//!
//! Objects cross the boundary as opaque handles (`DtsExpr`, `DtsSystem`)
//! that the caller releases with the matching `*_free` function. Every
//! fallible call returns a [`DtsStatus`]; on failure the message is kept in a
//! thread-local slot readable through [`dts_last_error`]. Strings returned by
//! the library belong to the caller and go back through [`dts_string_free`].
//! Panics never unwind into C: they are caught and reported as
//! [`DtsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dtstab::dsl::{parse_expression, Dims, Env, Expr};
use dtstab::registry::{load_example, Example};
use dtstab::system::{parse_system_file, simulate, DisturbancePolicy, InputPolicy, SystemDef};
use dtstab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtsStatus {
    Ok = 0,
    /// A checked property does not hold; the report is still returned.
    CheckFailed = 1,
    NullPointer = 2,
    InvalidUtf8 = 3,
    Parse = 4,
    Dimension = 5,
    Domain = 6,
    Invalid = 7,
    UnknownExample = 8,
    Unbounded = 9,
    Io = 10,
    Panic = 11,
}

/// A parsed expression together with the dimensions it was parsed under.
pub struct DtsExpr {
    expr: Expr,
    n: usize,
    m: usize,
    k: usize,
}

pub struct DtsSystem {
    sys: SystemDef,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> DtsStatus {
    match err {
        Error::Syntax { .. }
        | Error::UnknownIdentifier { .. }
        | Error::IndexOutOfRange { .. }
        | Error::Json(_) => DtsStatus::Parse,
        Error::Dimension { .. } => DtsStatus::Dimension,
        Error::Domain { .. } | Error::Step { .. } | Error::Equilibrium { .. } => DtsStatus::Domain,
        Error::UnknownExample(_) => DtsStatus::UnknownExample,
        Error::Unbounded(_) | Error::FitFailure(_) | Error::NoAdmissibleInput { .. } => {
            DtsStatus::Unbounded
        }
        Error::Io(_) => DtsStatus::Io,
        _ => DtsStatus::Invalid,
    }
}

struct Failure(DtsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<DtsStatus, Failure>) -> DtsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            status
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DtsStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(DtsStatus::NullPointer, "unexpected null pointer".into())
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(DtsStatus::InvalidUtf8, e.to_string()))
}

/// `len` doubles at `p`; a null `p` is allowed only when `len` is zero.
unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null()),
        (false, _) => Ok(std::slice::from_raw_parts(p, len)),
    }
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(DtsStatus::Invalid, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null after a success.
/// The caller owns the copy and frees it with [`dts_string_free`].
#[no_mangle]
pub extern "C" fn dts_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn dts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses `text` over `t`, `x1..xn`, `d1..dm` and `u1..uk`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dts_expr_parse(
    text: *const c_char,
    n: usize,
    m: usize,
    k: usize,
    out: *mut *mut DtsExpr,
) -> DtsStatus {
    guard(|| {
        let expr = parse_expression(c_str(text)?, &Dims::new(n, m, k))?;
        write_out(out, Box::into_raw(Box::new(DtsExpr { expr, n, m, k })))?;
        Ok(DtsStatus::Ok)
    })
}

/// Evaluates at `(t, x, d, u)`; the arrays hold exactly the parse-time
/// dimensions.
///
/// # Safety
/// `expr` must come from [`dts_expr_parse`]; the arrays must hold `n`, `m`
/// and `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dts_expr_eval(
    expr: *const DtsExpr,
    t: f64,
    x: *const f64,
    d: *const f64,
    u: *const f64,
    out: *mut f64,
) -> DtsStatus {
    guard(|| {
        let e = expr.as_ref().ok_or_else(null)?;
        let env = Env::new(t, slice(x, e.n)?, slice(d, e.m)?, slice(u, e.k)?);
        write_out(out, e.expr.eval(&env)?)?;
        Ok(DtsStatus::Ok)
    })
}

/// Canonical text of the expression, owned by the caller.
///
/// # Safety
/// `expr` must come from [`dts_expr_parse`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dts_expr_to_string(
    expr: *const DtsExpr,
    out: *mut *mut c_char,
) -> DtsStatus {
    guard(|| {
        let e = expr.as_ref().ok_or_else(null)?;
        write_out(out, owned_string(e.expr.to_string())?)?;
        Ok(DtsStatus::Ok)
    })
}

/// # Safety
/// `expr` must be null or a handle from [`dts_expr_parse`], freed at most once.
#[no_mangle]
pub unsafe extern "C" fn dts_expr_free(expr: *mut DtsExpr) {
    if !expr.is_null() {
        drop(Box::from_raw(expr));
    }
}

/// Builds a system from the JSON system-file layout.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dts_system_from_json(
    json: *const c_char,
    out: *mut *mut DtsSystem,
) -> DtsStatus {
    guard(|| {
        let parsed = parse_system_file(c_str(json)?)?;
        write_out(
            out,
            Box::into_raw(Box::new(DtsSystem { sys: parsed.system })),
        )?;
        Ok(DtsStatus::Ok)
    })
}

/// A registry system by name. `r` selects the disturbance bound of
/// `example_4_7` and must be NaN for the other examples (NaN there means the
/// default). With `closed_loop` nonzero, `example_4_7` returns the plant
/// closed with its state feedback.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dts_system_example(
    name: *const c_char,
    r: f64,
    closed_loop: i32,
    out: *mut *mut DtsSystem,
) -> DtsStatus {
    guard(|| {
        let r = if r.is_nan() { None } else { Some(r) };
        let sys = match load_example(c_str(name)?, r)? {
            Example::E47(e) if closed_loop != 0 => e.closed_loop,
            _ if closed_loop != 0 => {
                return Err(Failure(
                    DtsStatus::Invalid,
                    "only example_4_7 has a closed loop".into(),
                ))
            }
            other => other.system().clone(),
        };
        write_out(out, Box::into_raw(Box::new(DtsSystem { sys })))?;
        Ok(DtsStatus::Ok)
    })
}

/// Writes the state, disturbance and input dimensions.
///
/// # Safety
/// `sys` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dts_system_dims(
    sys: *const DtsSystem,
    n: *mut usize,
    m: *mut usize,
    k: *mut usize,
) -> DtsStatus {
    guard(|| {
        let s = &sys.as_ref().ok_or_else(null)?.sys;
        write_out(n, s.n)?;
        write_out(m, s.m)?;
        write_out(k, s.k)?;
        Ok(DtsStatus::Ok)
    })
}

/// One step `x_next = f(t, x, d, u)`. `d` must lie in the disturbance box.
///
/// # Safety
/// `sys` must be a live handle; `x` and `x_next` hold `n` doubles, `d` holds
/// `m` and `u` holds `k`.
#[no_mangle]
pub unsafe extern "C" fn dts_system_step(
    sys: *const DtsSystem,
    t: u64,
    x: *const f64,
    d: *const f64,
    u: *const f64,
    x_next: *mut f64,
) -> DtsStatus {
    guard(|| {
        let s = &sys.as_ref().ok_or_else(null)?.sys;
        let next = s.step(t, slice(x, s.n)?, slice(d, s.m)?, slice(u, s.k)?)?;
        if x_next.is_null() && s.n > 0 {
            return Err(null());
        }
        ptr::copy_nonoverlapping(next.as_ptr(), x_next, s.n);
        Ok(DtsStatus::Ok)
    })
}

/// Simulates `horizon` steps with zero input and returns the trajectory as
/// CSV. A non-null `d` holds a constant disturbance of `m` values; a null
/// `d` draws uniform disturbances from `seed`.
///
/// # Safety
/// `sys` must be a live handle, `x0` holds `n` doubles, `d` is null or holds
/// `m` doubles, and `out_csv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dts_simulate_csv(
    sys: *const DtsSystem,
    t0: u64,
    x0: *const f64,
    d: *const f64,
    seed: u64,
    horizon: usize,
    out_csv: *mut *mut c_char,
) -> DtsStatus {
    guard(|| {
        let s = &sys.as_ref().ok_or_else(null)?.sys;
        let dpol = if d.is_null() {
            DisturbancePolicy::RandomUniform { seed }
        } else {
            DisturbancePolicy::Constant(slice(d, s.m)?.to_vec())
        };
        let tr = simulate(s, t0, slice(x0, s.n)?, &dpol, &InputPolicy::Zero, horizon)?;
        write_out(out_csv, owned_string(tr.to_csv())?)?;
        Ok(DtsStatus::Ok)
    })
}

/// # Safety
/// `sys` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn dts_system_free(sys: *mut DtsSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Runs a command-line invocation (without the program name) and returns its
/// JSON report. `DTS_CHECK_FAILED` means the command ran and its check did
/// not pass; the report is still written.
///
/// # Safety
/// `argv` must point to `argc` NUL-terminated strings; `out_json` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dts_run(
    argv: *const *const c_char,
    argc: usize,
    out_json: *mut *mut c_char,
) -> DtsStatus {
    guard(|| {
        let mut args = vec!["dtstab".to_string()];
        if argc > 0 {
            if argv.is_null() {
                return Err(null());
            }
            for i in 0..argc {
                args.push(c_str(*argv.add(i))?.to_string());
            }
        }
        let (passed, report) = dtstab::cli::run_captured(args)?;
        write_out(out_json, owned_string(report)?)?;
        Ok(if passed {
            DtsStatus::Ok
        } else {
            DtsStatus::CheckFailed
        })
    })
}

/// Certifies one of the registry examples, e.g. `("example_2_3",
/// "relaxed-decrease")`, and returns the JSON certificate report.
///
/// # Safety
/// `name` and `check` must be NUL-terminated strings; `out_json` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dts_example_certify_json(
    name: *const c_char,
    check: *const c_char,
    out_json: *mut *mut c_char,
) -> DtsStatus {
    let (name, check) = match (c_str(name), c_str(check)) {
        (Ok(n), Ok(c)) => (n.to_string(), c.to_string()),
        (Err(Failure(status, msg)), _) | (_, Err(Failure(status, msg))) => {
            set_error(msg);
            return status;
        }
    };
    let args = ["certify", "--example", &name, "--check", &check]
        .map(|s| CString::new(s).unwrap_or_default());
    let ptrs: Vec<*const c_char> = args.iter().map(|s| s.as_ptr()).collect();
    dts_run(ptrs.as_ptr(), ptrs.len(), out_json)
}
