//! C ABI over the humbench metrics, codebook and prompt layers.
//!
//! Every fallible function returns an [`HbStatus`]; on failure the message is
//! kept per thread and read with [`hb_last_error_message`]. Strings returned
//! through out-pointers are owned by the caller and released with
//! [`hb_string_free`]. Codebooks are opaque [`HbCodebook`] handles released
//! with [`hb_codebook_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use humbench::codebook::Codebook;
use humbench::corpus::AnnotationTarget;
use humbench::metrics::{self, KappaBand};
use humbench::prompts::{PromptConfig, PromptFactory};
use humbench::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    UnknownLabel = 3,
    Metric = 4,
    Parse = 5,
    Io = 6,
    Codebook = 7,
    Panic = 8,
    Other = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbKappaBand {
    BelowModerate = 0,
    Moderate = 1,
    Substantial = 2,
    AlmostPerfect = 3,
}

/// Opaque codebook handle.
pub struct HbCodebook {
    inner: Codebook,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> HbStatus {
    match e {
        Error::InvalidInput(_) => HbStatus::InvalidInput,
        Error::UnknownLabel(_) => HbStatus::UnknownLabel,
        Error::Metric(_) => HbStatus::Metric,
        Error::Parse(_) | Error::Unparseable { .. } => HbStatus::Parse,
        Error::Io { .. } => HbStatus::Io,
        Error::Codebook(_) => HbStatus::Codebook,
        _ => HbStatus::Other,
    }
}

/// Runs `f`, translating errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), (HbStatus, String)>) -> HbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HbStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            HbStatus::Panic
        }
    }
}

fn lift(e: Error) -> (HbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (HbStatus, String) {
    (HbStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (HbStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (HbStatus::InvalidInput, format!("`{what}` is not UTF-8")))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), (HbStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = v;
    Ok(())
}

fn owned(s: String) -> Result<*mut c_char, (HbStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (HbStatus::InvalidInput, "result contains NUL".to_string()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn hb_codebook_default() -> *mut HbCodebook {
    Box::into_raw(Box::new(HbCodebook { inner: Codebook::default_codebook() }))
}

/// Loads a codebook TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hb_codebook_load(path: *const c_char, out: *mut *mut HbCodebook) -> HbStatus {
    guard(|| {
        let p = text(path, "path")?;
        let cb = Codebook::load(p).map_err(lift)?;
        write(out, Box::into_raw(Box::new(HbCodebook { inner: cb })), "out")
    })
}

/// # Safety
/// `cb` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hb_codebook_free(cb: *mut HbCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// # Safety
/// `cb` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_codebook_version(cb: *const HbCodebook, out: *mut u32) -> HbStatus {
    guard(|| {
        let cb = cb.as_ref().ok_or_else(|| null("cb"))?;
        write(out, cb.inner.version, "out")
    })
}

/// # Safety
/// `cb` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_codebook_label_count(cb: *const HbCodebook, out: *mut usize) -> HbStatus {
    guard(|| {
        let cb = cb.as_ref().ok_or_else(|| null("cb"))?;
        write(out, cb.inner.labels.len(), "out")
    })
}

/// Codebook as JSON; free with [`hb_string_free`].
///
/// # Safety
/// `cb` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_codebook_json(cb: *const HbCodebook, out: *mut *mut c_char) -> HbStatus {
    guard(|| {
        let cb = cb.as_ref().ok_or_else(|| null("cb"))?;
        let json = serde_json::to_string(&cb.inner).map_err(|e| (HbStatus::Other, e.to_string()))?;
        write(out, owned(json)?, "out")
    })
}

/// Cohen's kappa of two binary vectors of length `n` (nonzero = present).
///
/// # Safety
/// `a` and `b` must point to `n` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn hb_cohen_kappa(a: *const u8, b: *const u8, n: usize, out: *mut f64) -> HbStatus {
    guard(|| {
        let a: Vec<bool> = slice(a, n, "a")?.iter().map(|x| *x != 0).collect();
        let b: Vec<bool> = slice(b, n, "b")?.iter().map(|x| *x != 0).collect();
        write(out, metrics::cohen_kappa(&a, &b).map_err(lift)?, "out")
    })
}

/// Agreement band of a kappa value in [-1, 1].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hb_kappa_band(kappa: f64, out: *mut HbKappaBand) -> HbStatus {
    guard(|| {
        let band = match metrics::interpret_kappa(kappa).map_err(lift)? {
            KappaBand::BelowModerate => HbKappaBand::BelowModerate,
            KappaBand::Moderate => HbKappaBand::Moderate,
            KappaBand::Substantial => HbKappaBand::Substantial,
            KappaBand::AlmostPerfect => HbKappaBand::AlmostPerfect,
        };
        write(out, band, "out")
    })
}

/// Static name of a band; never freed.
#[no_mangle]
pub extern "C" fn hb_kappa_band_name(band: HbKappaBand) -> *const c_char {
    let s: &'static CStr = match band {
        HbKappaBand::BelowModerate => c"below moderate",
        HbKappaBand::Moderate => c"moderate",
        HbKappaBand::Substantial => c"substantial",
        HbKappaBand::AlmostPerfect => c"almost perfect",
    };
    s.as_ptr()
}

/// Macro-F1 over integer class ids; the class set is every id seen in either
/// vector.
///
/// # Safety
/// `gold` and `pred` must point to `n` readable values.
#[no_mangle]
pub unsafe extern "C" fn hb_macro_f1(gold: *const i32, pred: *const i32, n: usize, out: *mut f64) -> HbStatus {
    guard(|| {
        let g = slice(gold, n, "gold")?;
        let p = slice(pred, n, "pred")?;
        let classes = metrics::observed_classes(&[g, p]);
        write(out, metrics::macro_f1(g, p, &classes).map_err(lift)?, "out")
    })
}

/// Mean of the two directed macro-F1 scores between annotators.
///
/// # Safety
/// `a` and `b` must point to `n` readable values.
#[no_mangle]
pub unsafe extern "C" fn hb_mutual_upper_bound(a: *const i32, b: *const i32, n: usize, out: *mut f64) -> HbStatus {
    guard(|| {
        let a = slice(a, n, "a")?;
        let b = slice(b, n, "b")?;
        let classes = metrics::observed_classes(&[a, b]);
        write(out, metrics::mutual_upper_bound(a, b, &classes).map_err(lift)?, "out")
    })
}

/// Monte-Carlo distribution baseline for gold class counts `counts[0..k]`.
///
/// # Safety
/// `counts` must point to `k` readable values; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hb_distribution_baseline(
    counts: *const u64,
    k: usize,
    trials: usize,
    seed: u64,
    out_mean: *mut f64,
    out_std_error: *mut f64,
) -> HbStatus {
    guard(|| {
        let c = slice(counts, k, "counts")?;
        let map: BTreeMap<usize, u64> = c.iter().copied().enumerate().collect();
        let est = metrics::distribution_baseline(&map, trials, seed).map_err(lift)?;
        write(out_mean, est.mean, "out_mean")?;
        write(out_std_error, est.std_error, "out_std_error")
    })
}

/// Conversation for a target as a JSON array of `{"role", "content"}`.
/// `target_json` is an annotation target record; `label` may be null for
/// multiple-selection and coarse prompts.
///
/// # Safety
/// Strings must be NUL-terminated; `cb` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_build_prompt(
    cb: *const HbCodebook,
    config: *const c_char,
    target_json: *const c_char,
    label: *const c_char,
    out: *mut *mut c_char,
) -> HbStatus {
    guard(|| {
        let cb = cb.as_ref().ok_or_else(|| null("cb"))?;
        let config: PromptConfig = text(config, "config")?.parse().map_err(lift)?;
        let target: AnnotationTarget = serde_json::from_str(text(target_json, "target_json")?)
            .map_err(|e| (HbStatus::Parse, e.to_string()))?;
        let label = if label.is_null() { None } else { Some(text(label, "label")?) };
        let conv = PromptFactory::new(&cb.inner).build_prompt(&target, &config, label).map_err(lift)?;
        let json = serde_json::to_string(&conv).map_err(|e| (HbStatus::Other, e.to_string()))?;
        write(out, owned(json)?, "out")
    })
}

/// Parses a model reply for a prompt config; the verdict kind comes back as
/// JSON.
///
/// # Safety
/// Strings must be NUL-terminated; `cb` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_parse_reply(
    cb: *const HbCodebook,
    config: *const c_char,
    reply: *const c_char,
    out: *mut *mut c_char,
) -> HbStatus {
    guard(|| {
        let cb = cb.as_ref().ok_or_else(|| null("cb"))?;
        let config: PromptConfig = text(config, "config")?.parse().map_err(lift)?;
        let kind = PromptFactory::new(&cb.inner).parse_reply(&config, text(reply, "reply")?).map_err(lift)?;
        let json = serde_json::to_string(&kind).map_err(|e| (HbStatus::Other, e.to_string()))?;
        write(out, owned(json)?, "out")
    })
}
