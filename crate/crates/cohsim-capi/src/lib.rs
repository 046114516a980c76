//! C ABI for the cohsim coherence/NoC simulator.
//!
//! Conventions, mirrored in `include/cohsim.h`:
//!
//! * Configurations are opaque handles created by [`cohsim_config_new`] or
//!   [`cohsim_config_load`] and released with [`cohsim_config_free`].
//! * Fallible calls return `0` on success; `1` flags bad input (unknown
//!   key, unreadable file, invalid configuration), `2` a simulation abort
//!   (deadlock, drain timeout), `3` a checker-found property violation,
//!   and `-1` API misuse such as a null pointer. [`cohsim_last_error`]
//!   returns a thread-local message for the most recent failure.
//! * Strings handed out through `char **` out-parameters are owned by the
//!   caller and must be released with [`cohsim_string_free`]; pointers
//!   returned by [`cohsim_last_error`] and [`cohsim_version`] must not be
//!   freed.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_double, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use cohsim::checker::{self, CheckOptions};
use cohsim::config::SystemConfig;
use cohsim::metrics::compare;
use cohsim::protocol::Mutation;
use cohsim::sim;
use cohsim::types::Mode;
use cohsim::workload::{self, GenParams, Pattern, TraceOp};

/// Success.
pub const COHSIM_OK: c_int = 0;
/// Bad input: unknown key, malformed value, unreadable file, invalid config.
pub const COHSIM_ERR_INPUT: c_int = 1;
/// Simulation aborted (deadlock or drain timeout) or exploration bound hit.
pub const COHSIM_ERR_SIM: c_int = 2;
/// Model checker found a property violation.
pub const COHSIM_ERR_VIOLATION: c_int = 3;
/// API misuse: null pointer, non-UTF-8 string, or internal panic.
pub const COHSIM_ERR_API: c_int = -1;

/// Opaque simulator configuration handle.
pub struct CohsimConfig {
    inner: SystemConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(code: c_int, msg: &str) -> c_int {
    set_error(msg);
    code
}

/// Runs `body` with panics converted to [`COHSIM_ERR_API`] so unwinding
/// never crosses the FFI boundary.
fn guarded(body: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => fail(COHSIM_ERR_API, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, c_int> {
    if ptr.is_null() {
        return Err(fail(COHSIM_ERR_API, &format!("{what} is null")));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => Err(fail(COHSIM_ERR_API, &format!("{what} is not UTF-8"))),
    }
}

fn hand_out(s: String, out: *mut *mut c_char) {
    let c = CString::new(s.replace('\0', " ")).unwrap_or_default();
    unsafe { *out = c.into_raw() };
}

fn load_trace(path: &str) -> Result<Vec<TraceOp>, c_int> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(COHSIM_ERR_INPUT, &format!("{path}: {e}")))?;
    workload::parse_trace(&text).map_err(|e| fail(COHSIM_ERR_INPUT, &format!("{path}: {e}")))
}

/// Returns the library version as a static string (do not free).
#[no_mangle]
pub extern "C" fn cohsim_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Returns the thread-local message for the most recent failure, or null
/// if the last call on this thread succeeded. Valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn cohsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Releases a string handed out through a `char **` out-parameter.
/// Null is accepted and ignored.
///
/// # Safety
/// `s` must be null or a pointer previously handed out by this library
/// and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cohsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a configuration with the built-in defaults
/// (16 cores, 4x4 mesh, baseline arbitration). Never fails.
#[no_mangle]
pub extern "C" fn cohsim_config_new() -> *mut CohsimConfig {
    clear_error();
    Box::into_raw(Box::new(CohsimConfig {
        inner: SystemConfig::default(),
    }))
}

/// Loads a TOML configuration file; missing keys take their defaults.
/// Returns null on failure (see [`cohsim_last_error`]).
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cohsim_config_load(path: *const c_char) -> *mut CohsimConfig {
    clear_error();
    let Ok(path) = str_arg(path, "path") else {
        return std::ptr::null_mut();
    };
    match SystemConfig::load(Path::new(path)) {
        Ok(inner) => Box::into_raw(Box::new(CohsimConfig { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Releases a configuration handle. Null is accepted and ignored.
///
/// # Safety
/// `cfg` must be null or a handle from [`cohsim_config_new`] or
/// [`cohsim_config_load`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cohsim_config_free(cfg: *mut CohsimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

fn parse_into<T: FromStr>(slot: &mut T, key: &str, value: &str) -> c_int
where
    T::Err: std::fmt::Display,
{
    match value.parse::<T>() {
        Ok(v) => {
            *slot = v;
            COHSIM_OK
        }
        Err(e) => fail(COHSIM_ERR_INPUT, &format!("{key}: {e}")),
    }
}

fn config_set_field(cfg: &mut SystemConfig, key: &str, value: &str) -> c_int {
    match key {
        "cores" => parse_into(&mut cfg.cores, key, value),
        "mesh_x" => parse_into(&mut cfg.mesh_x, key, value),
        "mesh_y" => parse_into(&mut cfg.mesh_y, key, value),
        "block_size" => parse_into(&mut cfg.block_size, key, value),
        "l1_size" => parse_into(&mut cfg.l1_size, key, value),
        "l1_assoc" => parse_into(&mut cfg.l1_assoc, key, value),
        "l1_latency" => parse_into(&mut cfg.l1_latency, key, value),
        "l1_mshrs" => parse_into(&mut cfg.l1_mshrs, key, value),
        "l2_size" => parse_into(&mut cfg.l2_size, key, value),
        "l2_assoc" => parse_into(&mut cfg.l2_assoc, key, value),
        "l2_latency" => parse_into(&mut cfg.l2_latency, key, value),
        "vcs" => parse_into(&mut cfg.vcs, key, value),
        "vc_depth" => parse_into(&mut cfg.vc_depth, key, value),
        "flit_bits" => parse_into(&mut cfg.flit_bits, key, value),
        "router_pipeline" => parse_into(&mut cfg.router_pipeline, key, value),
        "link_latency" => parse_into(&mut cfg.link_latency, key, value),
        "mem_controllers" => parse_into(&mut cfg.mem_controllers, key, value),
        "mem_latency" => parse_into(&mut cfg.mem_latency, key, value),
        "starvation_threshold" => parse_into(&mut cfg.starvation_threshold, key, value),
        "inner_buffer_entries" => parse_into(&mut cfg.inner_buffer_entries, key, value),
        "drain_limit" => parse_into(&mut cfg.drain_limit, key, value),
        "mode" => parse_into(&mut cfg.mode, key, value),
        "seed" => parse_into(&mut cfg.seed, key, value),
        "e_link" => parse_into(&mut cfg.e_link, key, value),
        "e_buf_write" => parse_into(&mut cfg.e_buf_write, key, value),
        "e_buf_read" => parse_into(&mut cfg.e_buf_read, key, value),
        "e_arb" => parse_into(&mut cfg.e_arb, key, value),
        "e_xbar" => parse_into(&mut cfg.e_xbar, key, value),
        other => fail(COHSIM_ERR_INPUT, &format!("unknown config key {other:?}")),
    }
}

/// Sets one configuration field by name; keys match the TOML file and
/// command-line flags (`cores`, `mesh_x`, `mode`, `seed`, ...). Values are
/// parsed from strings. The combination is validated when the config is
/// used, not here, so fields may be set in any order.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` must be valid
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cohsim_config_set(
    cfg: *mut CohsimConfig,
    key: *const c_char,
    value: *const c_char,
) -> c_int {
    clear_error();
    if cfg.is_null() {
        return fail(COHSIM_ERR_API, "cfg is null");
    }
    let (key, value) = match (str_arg(key, "key"), str_arg(value, "value")) {
        (Ok(k), Ok(v)) => (k, v),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    guarded(|| config_set_field(&mut (*cfg).inner, key, value))
}

/// Checks that the configuration is internally consistent (core count
/// matches the mesh, power-of-two sizes, enough virtual channels, ...).
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cohsim_config_validate(cfg: *const CohsimConfig) -> c_int {
    clear_error();
    if cfg.is_null() {
        return fail(COHSIM_ERR_API, "cfg is null");
    }
    guarded(|| match (*cfg).inner.validate() {
        Ok(()) => COHSIM_OK,
        Err(e) => fail(COHSIM_ERR_INPUT, &e.to_string()),
    })
}

unsafe fn run_one(
    cfg: *const CohsimConfig,
    trace_path: *const c_char,
    out_json: *mut *mut c_char,
    ppb_versus_baseline: bool,
) -> c_int {
    clear_error();
    if cfg.is_null() || out_json.is_null() {
        return fail(COHSIM_ERR_API, "cfg or out_json is null");
    }
    *out_json = std::ptr::null_mut();
    let Ok(path) = str_arg(trace_path, "trace_path") else {
        return COHSIM_ERR_API;
    };
    let cfg = &(*cfg).inner;
    guarded(|| {
        if let Err(e) = cfg.validate() {
            return fail(COHSIM_ERR_INPUT, &e.to_string());
        }
        let trace = match load_trace(path) {
            Ok(t) => t,
            Err(code) => return code,
        };
        if ppb_versus_baseline {
            let mut c = cfg.clone();
            c.mode = Mode::Baseline;
            let base = match sim::run(&c, &trace) {
                Ok(r) => r,
                Err(e) => return fail(COHSIM_ERR_SIM, &e.to_string()),
            };
            c.mode = Mode::Ppb;
            let other = match sim::run(&c, &trace) {
                Ok(r) => r,
                Err(e) => return fail(COHSIM_ERR_SIM, &e.to_string()),
            };
            match compare(&base, &other) {
                Ok(cmp) => {
                    hand_out(cmp.to_json(), out_json);
                    COHSIM_OK
                }
                Err(e) => fail(COHSIM_ERR_SIM, &e.to_string()),
            }
        } else {
            match sim::run(cfg, &trace) {
                Ok(report) => {
                    hand_out(report.to_json(), out_json);
                    COHSIM_OK
                }
                Err(e) => fail(COHSIM_ERR_SIM, &e.to_string()),
            }
        }
    })
}

/// Simulates a trace file under `cfg` and stores the metrics report as a
/// JSON string in `*out_json` (caller frees with [`cohsim_string_free`]).
///
/// # Safety
/// `cfg` must be a live handle; `trace_path` a valid NUL-terminated
/// string; `out_json` a valid pointer to a `char *`.
#[no_mangle]
pub unsafe extern "C" fn cohsim_run(
    cfg: *const CohsimConfig,
    trace_path: *const c_char,
    out_json: *mut *mut c_char,
) -> c_int {
    run_one(cfg, trace_path, out_json, false)
}

/// Simulates a trace file twice — baseline arbitration, then
/// phase-priority — and stores the side-by-side delta report as JSON in
/// `*out_json`. The `mode` field of `cfg` is ignored.
///
/// # Safety
/// Same contract as [`cohsim_run`].
#[no_mangle]
pub unsafe extern "C" fn cohsim_compare(
    cfg: *const CohsimConfig,
    trace_path: *const c_char,
    out_json: *mut *mut c_char,
) -> c_int {
    run_one(cfg, trace_path, out_json, true)
}

/// Exhaustively model-checks the protocol on a small configuration:
/// `cores` cores (1..=4), `blocks` blocks (1..=3), `ops` operations per
/// core (1..=4), exploring every interleaving up to `max_states` distinct
/// states (0 means the default bound). `drop_inv` nonzero injects a known
/// protocol fault — an invalidation silently dropped during a read fill —
/// on a fixed 4-core racing program (the size arguments are then ignored),
/// which a sound checker must report as a violation.
///
/// Returns 0 when every reachable state satisfies the coherence, value,
/// and ordering properties; 3 when a violation was found; 2 when the state
/// bound was hit first. A JSON summary (states, transitions, violation
/// trace if any) is stored in `*out_json` in every outcome.
///
/// # Safety
/// `mode` must be a valid NUL-terminated string; `out_json` a valid
/// pointer to a `char *`.
#[no_mangle]
pub unsafe extern "C" fn cohsim_check(
    cores: usize,
    blocks: u64,
    ops: usize,
    mode: *const c_char,
    max_states: u64,
    drop_inv: c_int,
    out_json: *mut *mut c_char,
) -> c_int {
    clear_error();
    if out_json.is_null() {
        return fail(COHSIM_ERR_API, "out_json is null");
    }
    *out_json = std::ptr::null_mut();
    let Ok(mode) = str_arg(mode, "mode") else {
        return COHSIM_ERR_API;
    };
    let mode = match Mode::from_str(mode) {
        Ok(m) => m,
        Err(e) => return fail(COHSIM_ERR_INPUT, &e),
    };
    guarded(|| {
        if !(1..=4).contains(&cores) || !(1..=3).contains(&blocks) || !(1..=4).contains(&ops) {
            return fail(
                COHSIM_ERR_INPUT,
                "bounds: cores 1..=4, blocks 1..=3, ops 1..=4",
            );
        }
        let mut opts = if drop_inv != 0 {
            CheckOptions {
                mutation: Mutation::DropInvDuringFill,
                ..checker::race_options()
            }
        } else {
            CheckOptions {
                cores,
                blocks,
                ops,
                ..CheckOptions::default()
            }
        };
        opts.mode = mode;
        if max_states > 0 {
            opts.max_states = max_states;
        }
        let report = checker::check(&opts);
        let violation = report.violation.as_ref();
        let json = serde_json::json!({
            "passed": report.passed,
            "states": report.states,
            "transitions": report.transitions,
            "bound_hit": report.bound_hit,
            "race_fills": report.race_fills,
            "violation": violation.map(|v| v.desc.clone()),
            "trace": violation.map(|v| v.trace.clone()),
        });
        hand_out(json.to_string(), out_json);
        if let Some(v) = violation {
            return fail(COHSIM_ERR_VIOLATION, &v.desc);
        }
        if report.bound_hit {
            return fail(COHSIM_ERR_SIM, "state bound hit before exhaustion");
        }
        COHSIM_OK
    })
}

/// Generates a deterministic synthetic trace and writes it to `out_path`.
/// `pattern` is one of `uniform`, `hotspot`, `producer_consumer`,
/// `private`; the numeric knobs mirror the `gen-trace` command
/// (`hot_frac`/`write_frac` are fractions in [0,1], `gap` the mean idle
/// ticks between one core's references). The same arguments always
/// produce the same bytes.
///
/// # Safety
/// `pattern` and `out_path` must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cohsim_gen_trace(
    pattern: *const c_char,
    refs: usize,
    cores: usize,
    block_size: u64,
    blocks: u64,
    hot_blocks: u64,
    hot_frac: c_double,
    write_frac: c_double,
    gap: u64,
    seed: u64,
    out_path: *const c_char,
) -> c_int {
    clear_error();
    let (pattern, out_path) = match (str_arg(pattern, "pattern"), str_arg(out_path, "out_path")) {
        (Ok(p), Ok(o)) => (p, o),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    let pattern = match Pattern::from_str(pattern) {
        Ok(p) => p,
        Err(e) => return fail(COHSIM_ERR_INPUT, &e),
    };
    guarded(|| {
        let params = GenParams {
            pattern,
            refs,
            cores,
            block_size,
            blocks,
            hot_blocks,
            hot_frac,
            write_frac,
            gap,
            seed,
        };
        let ops = match workload::generate(&params) {
            Ok(ops) => ops,
            Err(e) => return fail(COHSIM_ERR_INPUT, &e.to_string()),
        };
        match std::fs::write(out_path, workload::format_trace(&ops)) {
            Ok(()) => COHSIM_OK,
            Err(e) => fail(COHSIM_ERR_INPUT, &format!("{out_path}: {e}")),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::ffi::CString;
    use std::ptr;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    unsafe fn take(out: *mut c_char) -> String {
        assert!(!out.is_null());
        let s = CStr::from_ptr(out).to_str().unwrap().to_owned();
        cohsim_string_free(out);
        s
    }

    fn last_error() -> String {
        let p = cohsim_last_error();
        assert!(!p.is_null(), "expected an error message");
        unsafe { CStr::from_ptr(p).to_str().unwrap().to_owned() }
    }

    #[test]
    fn run_round_trip_through_the_c_surface() {
        let dir = tempfile::tempdir().unwrap();
        let trace = dir.path().join("t.trace");
        let trace_c = c(trace.to_str().unwrap());
        unsafe {
            let rc = cohsim_gen_trace(
                c("hotspot").as_ptr(),
                400,
                16,
                64,
                512,
                16,
                0.5,
                0.3,
                2,
                9,
                trace_c.as_ptr(),
            );
            assert_eq!(rc, COHSIM_OK);

            let cfg = cohsim_config_new();
            assert_eq!(cohsim_config_set(cfg, c("mode").as_ptr(), c("ppb").as_ptr()), 0);
            assert_eq!(cohsim_config_validate(cfg), COHSIM_OK);

            let mut out: *mut c_char = ptr::null_mut();
            let rc = cohsim_run(cfg, trace_c.as_ptr(), &mut out);
            assert_eq!(rc, COHSIM_OK);
            let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
            assert_eq!(report["mode"], "ppb");
            assert_eq!(report["ops_issued"], 400);

            let mut out: *mut c_char = ptr::null_mut();
            let rc = cohsim_compare(cfg, trace_c.as_ptr(), &mut out);
            assert_eq!(rc, COHSIM_OK);
            let delta: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
            assert!(delta["rows"].as_array().is_some_and(|r| !r.is_empty()));

            cohsim_config_free(cfg);
        }
    }

    #[test]
    fn errors_carry_codes_and_messages() {
        unsafe {
            let cfg = cohsim_config_new();
            assert_eq!(
                cohsim_config_set(cfg, c("no_such_knob").as_ptr(), c("1").as_ptr()),
                COHSIM_ERR_INPUT
            );
            assert!(last_error().contains("no_such_knob"));
            assert_eq!(
                cohsim_config_set(cfg, c("cores").as_ptr(), c("many").as_ptr()),
                COHSIM_ERR_INPUT
            );

            // Event: inconsistent combination caught by validate, not set.
            assert_eq!(cohsim_config_set(cfg, c("cores").as_ptr(), c("5").as_ptr()), 0);
            assert_eq!(cohsim_config_validate(cfg), COHSIM_ERR_INPUT);

            let mut out: *mut c_char = ptr::null_mut();
            assert_eq!(
                cohsim_run(cfg, c("/no/such/file").as_ptr(), &mut out),
                COHSIM_ERR_INPUT
            );
            assert!(out.is_null());

            assert_eq!(
                cohsim_run(ptr::null(), c("x").as_ptr(), &mut out),
                COHSIM_ERR_API
            );
            cohsim_config_free(cfg);

            let missing = cohsim_config_load(c("/no/such/config.toml").as_ptr());
            assert!(missing.is_null());
            assert!(!cohsim_last_error().is_null());
        }
    }

    #[test]
    fn check_reports_pass_violation_and_bound() {
        unsafe {
            let mut out: *mut c_char = ptr::null_mut();
            let rc = cohsim_check(2, 1, 2, c("baseline").as_ptr(), 0, 0, &mut out);
            assert_eq!(rc, COHSIM_OK);
            let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
            assert_eq!(v["passed"], true);
            assert!(v["states"].as_u64().unwrap() > 100);

            let rc = cohsim_check(2, 1, 2, c("baseline").as_ptr(), 0, 1, &mut out);
            assert_eq!(rc, COHSIM_ERR_VIOLATION);
            let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
            assert_eq!(v["passed"], false);
            assert!(!v["violation"].as_str().unwrap().is_empty());
            assert!(v["trace"].as_array().is_some_and(|t| !t.is_empty()));

            let rc = cohsim_check(2, 1, 2, c("baseline").as_ptr(), 50, 0, &mut out);
            assert_eq!(rc, COHSIM_ERR_SIM);
            let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
            assert_eq!(v["bound_hit"], true);

            let rc = cohsim_check(9, 1, 1, c("baseline").as_ptr(), 0, 0, &mut out);
            assert_eq!(rc, COHSIM_ERR_INPUT);
        }
    }

    /// Every exported function must appear in the hand-maintained header,
    /// and vice versa.
    #[test]
    fn header_matches_exported_symbols() {
        let src = include_str!("lib.rs");
        let header = include_str!("../include/cohsim.h");

        fn names(text: &str, anchor: &str) -> BTreeSet<String> {
            let mut out = BTreeSet::new();
            for line in text.lines() {
                let Some(pos) = line.find(anchor) else { continue };
                let rest = &line[pos + anchor.len()..];
                let name: String = rest
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                    .collect();
                if !name.is_empty() && rest[name.len()..].trim_start().starts_with('(') {
                    out.insert(format!("cohsim_{name}"));
                }
            }
            out
        }

        let exported = names(src, "extern \"C\" fn cohsim_");
        let declared = names(header, "cohsim_");
        assert!(!exported.is_empty());
        assert_eq!(
            exported, declared,
            "include/cohsim.h out of sync with exported symbols"
        );
    }
}
