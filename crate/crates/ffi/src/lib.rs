//! C ABI for per-frame pruning inside an inference loop.
//!
//! One session holds the smoothing history and pruning config of one
//! episode. Sessions are addressed by opaque integer handles, so a closed or
//! unknown handle yields [`VLP_ERR_CLOSED`] instead of undefined behaviour.
//! Only flat buffers with explicit lengths cross the boundary.
//!
//! Per frame the caller invokes `vlp_session_select` with the prefill scores
//! and layer-K visual embeddings, then, once the action is decoded,
//! `vlp_session_observe` with that frame's action scores (already averaged
//! over the latter half of the decoder layers).
//!
//! Every function returns a status code; on failure the message is
//! available from `vlp_last_error` on the same thread.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, LazyLock, Mutex};

use vlaprune::diversity::Embeddings;
use vlaprune::estimator::{EstimatorConfig, EstimatorMode, EstimatorState};
use vlaprune::scoring::ScoreVector;
use vlaprune::selector::{select_frame, Budget, PruneConfig, Variant, WarmupPolicy};

pub const VLP_OK: i32 = 0;
pub const VLP_ERR_NULL: i32 = -1;
pub const VLP_ERR_SHAPE: i32 = -2;
pub const VLP_ERR_CLOSED: i32 = -3;
pub const VLP_ERR_CONFIG: i32 = -4;
pub const VLP_ERR_BUFFER_TOO_SMALL: i32 = -5;
pub const VLP_ERR_INTERNAL: i32 = -255;

pub const VLP_VARIANT_DUAL: u32 = 0;
pub const VLP_VARIANT_PREFILL_ONLY: u32 = 1;
pub const VLP_VARIANT_ACTION_ONLY: u32 = 2;
pub const VLP_VARIANT_SCORE_FUSION: u32 = 3;
pub const VLP_VARIANT_DIVERSITY_ONLY: u32 = 4;

pub const VLP_WARMUP_RETAIN_ALL: u32 = 0;
pub const VLP_WARMUP_PREFILL_ONLY: u32 = 1;

pub const VLP_ESTIMATOR_WINDOW: u32 = 0;
pub const VLP_ESTIMATOR_EMA: u32 = 1;

/// Opaque session handle. Zero is never a valid handle.
pub type VlpHandle = u64;

/// Session parameters. Start from `vlp_config_default` and override fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VlpConfig {
    /// Visual tokens per frame.
    pub m_visual: usize,
    /// Width of each embedding row.
    pub embed_dim: usize,
    /// Retained token count; when zero, `ratio` is used instead.
    pub budget: usize,
    /// Retained fraction of `m_visual`, in (0, 1].
    pub ratio: f64,
    pub variant: u32,
    pub fusion_weight: f64,
    pub warmup: u32,
    pub estimator: u32,
    pub alpha: f64,
    pub window: usize,
    pub gamma: f64,
    pub prune_layer: usize,
}

impl Default for VlpConfig {
    fn default() -> Self {
        let est = EstimatorConfig::default();
        VlpConfig {
            m_visual: 256,
            embed_dim: 0,
            budget: 0,
            ratio: 0.5,
            variant: VLP_VARIANT_DUAL,
            fusion_weight: 0.5,
            warmup: VLP_WARMUP_RETAIN_ALL,
            estimator: VLP_ESTIMATOR_WINDOW,
            alpha: est.alpha,
            window: est.window,
            gamma: est.gamma,
            prune_layer: PruneConfig::DEFAULT_PRUNE_LAYER,
        }
    }
}

struct Failure(i32, String);

type FfiResult<T> = Result<T, Failure>;

fn config_err(e: impl ToString) -> Failure {
    Failure(VLP_ERR_CONFIG, e.to_string())
}

impl VlpConfig {
    fn to_core(self) -> FfiResult<(PruneConfig, EstimatorConfig)> {
        if self.embed_dim == 0 {
            return Err(config_err("embed_dim must be at least 1"));
        }
        let budget = if self.budget > 0 { Budget::Count(self.budget) } else { Budget::Ratio(self.ratio) };
        let budget = budget.resolve(self.m_visual).map_err(config_err)?;
        let variant = match self.variant {
            VLP_VARIANT_DUAL => Variant::Dual,
            VLP_VARIANT_PREFILL_ONLY => Variant::PrefillOnly,
            VLP_VARIANT_ACTION_ONLY => Variant::ActionOnly,
            VLP_VARIANT_SCORE_FUSION => Variant::ScoreFusion,
            VLP_VARIANT_DIVERSITY_ONLY => Variant::DiversityOnly,
            other => return Err(config_err(format!("unknown variant code {other}"))),
        };
        let warmup = match self.warmup {
            VLP_WARMUP_RETAIN_ALL => WarmupPolicy::RetainAll,
            VLP_WARMUP_PREFILL_ONLY => WarmupPolicy::PrefillOnly,
            other => return Err(config_err(format!("unknown warmup code {other}"))),
        };
        let mode = match self.estimator {
            VLP_ESTIMATOR_WINDOW => EstimatorMode::Window,
            VLP_ESTIMATOR_EMA => EstimatorMode::Ema,
            other => return Err(config_err(format!("unknown estimator code {other}"))),
        };
        let prune =
            PruneConfig { budget, prune_layer: self.prune_layer, variant, fusion_weight: self.fusion_weight, warmup };
        prune.validate(self.m_visual).map_err(config_err)?;
        let est = EstimatorConfig { mode, alpha: self.alpha, window: self.window, gamma: self.gamma };
        est.validate().map_err(config_err)?;
        Ok((prune, est))
    }
}

struct Session {
    m: usize,
    dim: usize,
    prune: PruneConfig,
    state: EstimatorState,
}

static SESSIONS: LazyLock<Mutex<HashMap<VlpHandle, Arc<Mutex<Session>>>>> = LazyLock::new(Default::default);
static NEXT_HANDLE: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            VLP_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            VLP_ERR_INTERNAL
        }
    }
}

fn lookup(handle: VlpHandle) -> FfiResult<Arc<Mutex<Session>>> {
    let sessions = SESSIONS.lock().map_err(|_| Failure(VLP_ERR_INTERNAL, "session registry poisoned".into()))?;
    sessions
        .get(&handle)
        .cloned()
        .ok_or_else(|| Failure(VLP_ERR_CLOSED, format!("handle {handle} is closed or unknown")))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if ptr.is_null() {
        return Err(Failure(VLP_ERR_NULL, format!("{what} pointer is null")));
    }
    // SAFETY: caller guarantees `ptr` addresses `len` initialized elements.
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

/// Fills `out` with the default configuration.
///
/// # Safety
/// `out` must be null or point to writable memory for one `VlpConfig`.
#[no_mangle]
pub unsafe extern "C" fn vlp_config_default(out: *mut VlpConfig) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(Failure(VLP_ERR_NULL, "config pointer is null".into()));
        }
        // SAFETY: checked non-null above; caller guarantees it is writable.
        unsafe { out.write(VlpConfig::default()) };
        Ok(())
    })
}

/// Opens a session for one episode.
///
/// # Safety
/// `config` must point to a valid `VlpConfig`; `out_handle` to writable memory.
#[no_mangle]
pub unsafe extern "C" fn vlp_session_create(config: *const VlpConfig, out_handle: *mut VlpHandle) -> i32 {
    guard(|| {
        if config.is_null() || out_handle.is_null() {
            return Err(Failure(VLP_ERR_NULL, "config or handle pointer is null".into()));
        }
        // SAFETY: checked non-null; caller guarantees validity.
        let cfg = unsafe { *config };
        let (prune, est) = cfg.to_core()?;
        let session = Session {
            m: cfg.m_visual,
            dim: cfg.embed_dim,
            prune,
            state: EstimatorState::new(est).map_err(config_err)?,
        };
        let handle = NEXT_HANDLE.fetch_add(1, Ordering::Relaxed);
        SESSIONS
            .lock()
            .map_err(|_| Failure(VLP_ERR_INTERNAL, "session registry poisoned".into()))?
            .insert(handle, Arc::new(Mutex::new(session)));
        // SAFETY: checked non-null above.
        unsafe { out_handle.write(handle) };
        Ok(())
    })
}

/// Records the action scores decoded for the frame just selected.
///
/// # Safety
/// `scores` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn vlp_session_observe(handle: VlpHandle, scores: *const f64, len: usize) -> i32 {
    guard(|| {
        let session = lookup(handle)?;
        let mut s = session.lock().map_err(|_| Failure(VLP_ERR_INTERNAL, "session poisoned".into()))?;
        // SAFETY: forwarded caller contract.
        let values = unsafe { slice(scores, len, "scores") }?;
        if len != s.m {
            return Err(Failure(VLP_ERR_SHAPE, format!("expected {} scores, got {len}", s.m)));
        }
        let v = ScoreVector::new(values.to_vec()).map_err(|e| Failure(VLP_ERR_SHAPE, e.to_string()))?;
        s.state.observe(v).map_err(|e| Failure(VLP_ERR_SHAPE, e.to_string()))
    })
}

/// Selects the visual tokens to keep for the current frame.
///
/// Writes ascending zero-based indices to `out_indices` and their count to
/// `out_len`. If `out_cap` is too small, `out_len` receives the required
/// size and [`VLP_ERR_BUFFER_TOO_SMALL`] is returned.
///
/// # Safety
/// `prefill` must hold `m` doubles, `embeddings` `embeddings_len` floats
/// (row-major, `m * embed_dim`), `out_indices` room for `out_cap` entries.
#[no_mangle]
pub unsafe extern "C" fn vlp_session_select(
    handle: VlpHandle,
    prefill: *const f64,
    m: usize,
    embeddings: *const f32,
    embeddings_len: usize,
    out_indices: *mut usize,
    out_cap: usize,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let session = lookup(handle)?;
        let s = session.lock().map_err(|_| Failure(VLP_ERR_INTERNAL, "session poisoned".into()))?;
        if out_len.is_null() {
            return Err(Failure(VLP_ERR_NULL, "out_len pointer is null".into()));
        }
        if m != s.m {
            return Err(Failure(VLP_ERR_SHAPE, format!("expected {} prefill scores, got {m}", s.m)));
        }
        if embeddings_len != s.m * s.dim {
            return Err(Failure(
                VLP_ERR_SHAPE,
                format!("expected {}x{} embedding values, got {embeddings_len}", s.m, s.dim),
            ));
        }
        // SAFETY: forwarded caller contract.
        let prefill = unsafe { slice(prefill, m, "prefill") }?;
        // SAFETY: forwarded caller contract.
        let emb = unsafe { slice(embeddings, embeddings_len, "embeddings") }?;
        let shape = |e: vlaprune::Error| Failure(VLP_ERR_SHAPE, e.to_string());
        let prefill = ScoreVector::new(prefill.to_vec()).map_err(shape)?;
        let emb = Embeddings::new(s.m, s.dim, emb.to_vec()).map_err(shape)?;
        let result = select_frame(&prefill, &emb, &s.state, &s.prune).map_err(shape)?;

        let n = result.retained.len();
        // SAFETY: checked non-null above.
        unsafe { out_len.write(n) };
        if n > out_cap {
            return Err(Failure(VLP_ERR_BUFFER_TOO_SMALL, format!("need room for {n} indices, have {out_cap}")));
        }
        if out_indices.is_null() {
            return Err(Failure(VLP_ERR_NULL, "out_indices pointer is null".into()));
        }
        // SAFETY: non-null and caller guarantees `out_cap >= n` writable slots.
        unsafe { std::ptr::copy_nonoverlapping(result.retained.as_ptr(), out_indices, n) };
        Ok(())
    })
}

/// Number of frames observed so far.
///
/// # Safety
/// `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn vlp_session_frames_seen(handle: VlpHandle, out: *mut u64) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(Failure(VLP_ERR_NULL, "out pointer is null".into()));
        }
        let session = lookup(handle)?;
        let s = session.lock().map_err(|_| Failure(VLP_ERR_INTERNAL, "session poisoned".into()))?;
        // SAFETY: checked non-null above.
        unsafe { out.write(s.state.frames_seen()) };
        Ok(())
    })
}

/// Releases a session. Closing twice returns [`VLP_ERR_CLOSED`].
#[no_mangle]
pub extern "C" fn vlp_session_close(handle: VlpHandle) -> i32 {
    guard(|| {
        let removed =
            SESSIONS.lock().map_err(|_| Failure(VLP_ERR_INTERNAL, "session registry poisoned".into()))?.remove(&handle);
        match removed {
            Some(_) => Ok(()),
            None => Err(Failure(VLP_ERR_CLOSED, format!("handle {handle} is closed or unknown"))),
        }
    })
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vlp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vlp_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
