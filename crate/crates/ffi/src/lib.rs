//! C ABI over `wisv-core`.
//!
//! Handles are opaque pointers created by `*_new`/`*_load` and released with
//! the matching `*_free`. Every fallible call returns a [`WisvStatus`]; on
//! failure the message is retrievable with [`wisv_last_error`] on the same
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use wisv_core::config::{ExperimentConfig, Scenario};
use wisv_core::engine::{Mode, Verifier};
use wisv_core::head::HeadParams;
use wisv_core::metrics::MetricsSummary;
use wisv_core::pipeline::Simulator;
use wisv_core::{channel, oracle, rng, Error};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WisvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    DimensionMismatch = 5,
    Infeasible = 6,
    NonFinite = 7,
    Dataset = 8,
    Format = 9,
    Io = 10,
    Panic = 11,
}

/// Uplink protocol selector for [`wisv_comm_latency`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WisvProtocol {
    FullHidden = 0,
    SelectiveHidden = 1,
    TokensOnly = 2,
    Probabilities = 3,
}

/// Aggregate metrics of one simulated grid point.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WisvMetrics {
    pub aal: f64,
    pub rounds: f64,
    pub latency_s: f64,
    pub throughput: f64,
    pub accuracy_proxy: f64,
    /// Mean per episode.
    pub uplink_bits: f64,
    /// Mean per episode.
    pub downlink_bits: f64,
}

/// Simulator built from an experiment config.
pub struct WisvSimulator {
    sim: Simulator,
}

/// Trained decision head.
pub struct WisvHead {
    params: HeadParams,
    use_csi: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> WisvStatus {
    match err.kind() {
        "config" => WisvStatus::Config,
        "invalid_argument" => WisvStatus::InvalidArgument,
        "dimension_mismatch" => WisvStatus::DimensionMismatch,
        "infeasible" => WisvStatus::Infeasible,
        "non_finite" => WisvStatus::NonFinite,
        "dataset" => WisvStatus::Dataset,
        "io" => WisvStatus::Io,
        _ => WisvStatus::Format,
    }
}

struct Fail(WisvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WisvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WisvStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            WisvStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(WisvStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(WisvStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wisv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL,
/// or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn wisv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a simulator from TOML config text (empty text means defaults).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wisv_simulator_new(config_toml: *const c_char, out: *mut *mut WisvSimulator) -> WisvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        *out = Box::into_raw(Box::new(WisvSimulator { sim: Simulator::new(&cfg)? }));
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle from [`wisv_simulator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wisv_simulator_free(sim: *mut WisvSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Calibrated per-position match probability of the simulator's oracle.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wisv_simulator_p_match(sim: *const WisvSimulator, out: *mut f64) -> WisvStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        *out_arg(out, "out")? = sim.sim.oracle.config().p_match;
        Ok(())
    })
}

/// Loads head params written by the `train` stage; a JSON sidecar next to the
/// file, if present, supplies whether the head uses CSI features.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wisv_head_load(path: *const c_char, out: *mut *mut WisvHead) -> WisvStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = Path::new(str_arg(path, "path")?);
        let (params, use_csi) = match wisv_core::pipeline::load_head(path) {
            Ok((params, meta)) => (params, meta.use_csi),
            Err(_) => (HeadParams::read(path)?, true),
        };
        *out = Box::into_raw(Box::new(WisvHead { params, use_csi }));
        Ok(())
    })
}

/// # Safety
/// `head` must be null or a handle from [`wisv_head_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wisv_head_free(head: *mut WisvHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Input width of the head.
///
/// # Safety
/// `head` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wisv_head_input_dim(head: *const WisvHead, out: *mut usize) -> WisvStatus {
    guard(|| {
        let head = head.as_ref().ok_or_else(|| null("head"))?;
        *out_arg(out, "out")? = head.params.d_in;
        Ok(())
    })
}

/// Rejection probability for one feature vector of length `len`.
///
/// # Safety
/// `head` must be a live handle, `z` must point to `len` doubles and
/// `out_prob` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wisv_head_forward(head: *const WisvHead, z: *const f64, len: usize, out_prob: *mut f64) -> WisvStatus {
    guard(|| {
        let head = head.as_ref().ok_or_else(|| null("head"))?;
        if z.is_null() {
            return Err(null("z"));
        }
        let z = std::slice::from_raw_parts(z, len);
        *out_arg(out_prob, "out_prob")? = head.params.forward(z)?.prob;
        Ok(())
    })
}

fn to_metrics(s: &MetricsSummary) -> WisvMetrics {
    let n = s.episodes as f64;
    WisvMetrics {
        aal: s.aal,
        rounds: s.rounds_mean,
        latency_s: s.latency_mean_s,
        throughput: s.throughput,
        accuracy_proxy: s.accuracy_proxy,
        uplink_bits: s.uplink_bits as f64 / n,
        downlink_bits: s.downlink_bits as f64 / n,
    }
}

/// Simulates `episodes` episodes of `mode` (e.g. `"sd_greedy"`, `"wisv_fh"`)
/// on a fixed symmetric link. `head` may be null for modes without a head.
///
/// # Safety
/// `sim` must be a live handle, `head` null or live, `mode` NUL-terminated
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wisv_run_point(
    sim: *const WisvSimulator,
    head: *const WisvHead,
    mode: *const c_char,
    k: usize,
    tau: f64,
    rate_bps: f64,
    rtt_s: f64,
    episodes: usize,
    out: *mut WisvMetrics,
) -> WisvStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out_arg(out, "out")?;
        let mode: Mode = str_arg(mode, "mode")?.parse()?;
        if episodes == 0 {
            return Err(Fail(WisvStatus::InvalidArgument, "episodes must be at least 1".into()));
        }
        let verifier = head.as_ref().map(|h| Verifier {
            params: &h.params,
            use_csi: h.use_csi,
        });
        let scenario = Scenario::new("ffi", rate_bps, rtt_s);
        let results = sim
            .sim
            .run_point(verifier, mode, k, tau, &scenario, episodes, rng::stream::EVAL)?;
        *out = to_metrics(&MetricsSummary::from_results(&results)?);
        Ok(())
    })
}

/// Communication latency (seconds) of one round with the simulator's wire
/// config. `m` is the number of requested hiddens and only matters for SH.
///
/// # Safety
/// `sim` must be a live handle; `out_s` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wisv_comm_latency(
    sim: *const WisvSimulator,
    protocol: WisvProtocol,
    k: u64,
    m: u64,
    rate_bps: f64,
    rtt_s: f64,
    out_s: *mut f64,
) -> WisvStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out_arg(out_s, "out_s")?;
        let csi = channel::CsiState::symmetric(rate_bps, rtt_s)?;
        let w = &sim.sim.wire;
        let b = match protocol {
            WisvProtocol::FullHidden => wisv_core::wire::comm_latency_fh(w, k, &csi)?,
            WisvProtocol::SelectiveHidden => wisv_core::wire::comm_latency_sh(w, k, m, &csi)?,
            WisvProtocol::TokensOnly => wisv_core::wire::comm_latency_tokens(w, k, &csi)?,
            WisvProtocol::Probabilities => wisv_core::wire::comm_latency_reject(w, k, &csi)?,
        };
        *out = b.total_s;
        Ok(())
    })
}

/// Per-position match probability giving greedy AAL `target_aal` at window `k`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wisv_calibrate_p_match(target_aal: f64, k: u64, out: *mut f64) -> WisvStatus {
    guard(|| {
        *out_arg(out, "out")? = oracle::calibrate_p_match(target_aal, k)?;
        Ok(())
    })
}
