//! C ABI over the moss library: load a trained model and knowledge base,
//! hold a chat session, score a corpus, compute BLEU.
//!
//! Every fallible call returns a [`MossStatus`]. On failure the message is
//! kept per thread and can be fetched with [`moss_last_error_message`].
//! Strings handed out by this library must be released with
//! [`moss_string_free`]; handles with their own `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use moss::cli::{load_eval_data, ChatSession};
use moss::eval::{corpus_bleu, evaluate};
use moss::kb::KnowledgeBase;
use moss::model::Moss;
use moss::MossError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MossStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Precondition = 5,
    Contract = 6,
    Runtime = 7,
    Panic = 8,
}

/// A trained model. Opaque.
pub struct MossModel {
    inner: Moss,
}

/// A knowledge base. Opaque.
pub struct MossKb {
    inner: KnowledgeBase,
}

/// A chat session; context comes only from the model's own outputs. Opaque.
pub struct MossChat {
    inner: ChatSession,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: MossStatus,
    message: String,
}

impl From<MossError> for Failure {
    fn from(e: MossError) -> Self {
        let status = match &e {
            MossError::Io { .. } => MossStatus::Io,
            MossError::Parse { .. } | MossError::Json(_) => MossStatus::Parse,
            MossError::Precondition(_) | MossError::Index { .. } => MossStatus::Precondition,
            MossError::Contract(_) | MossError::Dimension { .. } => MossStatus::Contract,
            MossError::Training(_) | MossError::NonFinite(_) => MossStatus::Runtime,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        MossError::from(e).into()
    }
}

fn null(what: &str) -> Failure {
    Failure {
        status: MossStatus::NullArgument,
        message: format!("`{what}` is null"),
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MossStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MossStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            MossStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure {
        status: MossStatus::InvalidUtf8,
        message: format!("`{what}` is not valid UTF-8"),
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn moss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Free the
/// result with `moss_string_free`.
#[no_mangle]
pub extern "C" fn moss_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => c.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn moss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a model directory written by `moss train`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moss_model_load(
    dir: *const c_char,
    out: *mut *mut MossModel,
) -> MossStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let inner = Moss::load(Path::new(dir))?;
        put(out, Box::into_raw(Box::new(MossModel { inner })), "out")
    })
}

/// # Safety
/// `model` must come from `moss_model_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn moss_model_free(model: *mut MossModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// The model's framework config as JSON.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moss_model_config_json(
    model: *const MossModel,
    out: *mut *mut c_char,
) -> MossStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let json = serde_json::to_string(&model.inner.config)?;
        put(out, c_string(json), "out")
    })
}

/// Loads a knowledge base JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moss_kb_load(path: *const c_char, out: *mut *mut MossKb) -> MossStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = KnowledgeBase::load(Path::new(path))?;
        put(out, Box::into_raw(Box::new(MossKb { inner })), "out")
    })
}

/// # Safety
/// `kb` must come from `moss_kb_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn moss_kb_free(kb: *mut MossKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Starts an empty chat session.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moss_chat_new(out: *mut *mut MossChat) -> MossStatus {
    guard(|| {
        let chat = MossChat {
            inner: ChatSession::new(),
        };
        put(out, Box::into_raw(Box::new(chat)), "out")
    })
}

/// Runs one user turn. `out_json` receives
/// `{"m":..,"s":..,"a":..,"r":..,"k":bucket}` with absent modules as null.
///
/// # Safety
/// Handles must be live; `utterance` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn moss_chat_respond(
    chat: *mut MossChat,
    model: *const MossModel,
    kb: *const MossKb,
    utterance: *const c_char,
    out_json: *mut *mut c_char,
) -> MossStatus {
    guard(|| {
        let chat = chat.as_mut().ok_or_else(|| null("chat"))?;
        let model = ref_arg(model, "model")?;
        let kb = ref_arg(kb, "kb")?;
        let utterance = str_arg(utterance, "utterance")?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let rec = chat.inner.respond(&model.inner, &kb.inner, utterance)?;
        let words = |t: &Option<Vec<String>>| t.as_ref().map(|t| t.join(" "));
        let p = &rec.prediction;
        let json = serde_json::json!({
            "m": words(&p.m),
            "s": words(&p.s),
            "a": words(&p.a),
            "r": words(&p.r),
            "k": rec.k.bucket(),
        });
        put(out_json, c_string(json.to_string()), "out_json")
    })
}

/// Number of turns the session has completed; 0 for null.
///
/// # Safety
/// `chat` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn moss_chat_turns(chat: *const MossChat) -> usize {
    chat.as_ref().map_or(0, |c| c.inner.turns())
}

/// # Safety
/// `chat` must come from `moss_chat_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn moss_chat_free(chat: *mut MossChat) {
    if !chat.is_null() {
        drop(Box::from_raw(chat));
    }
}

/// Evaluates a model on a corpus file (or a directory's test.jsonl) with
/// kb.json and schema.json beside it. `out_json` receives the metric report.
///
/// # Safety
/// `model` must be live; `data` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn moss_evaluate(
    model: *const MossModel,
    data: *const c_char,
    out_json: *mut *mut c_char,
) -> MossStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let data = str_arg(data, "data")?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let (corpus, kb, schema) = load_eval_data(Path::new(data))?;
        let (rep, _) = evaluate(&model.inner, &kb, &schema, &corpus)?;
        put(out_json, c_string(serde_json::to_string(&rep)?), "out_json")
    })
}

/// Corpus BLEU-4 of `n` whitespace-tokenized candidate/reference pairs.
///
/// # Safety
/// `candidates` and `references` must point to `n` NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moss_bleu(
    candidates: *const *const c_char,
    references: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> MossStatus {
    guard(|| {
        if candidates.is_null() || references.is_null() {
            return Err(null("candidates/references"));
        }
        let mut cands = Vec::with_capacity(n);
        let mut refs = Vec::with_capacity(n);
        for i in 0..n {
            cands.push(moss::corpus::tokenize(str_arg(
                *candidates.add(i),
                "candidate",
            )?));
            refs.push(moss::corpus::tokenize(str_arg(
                *references.add(i),
                "reference",
            )?));
        }
        let b = corpus_bleu(&cands, &refs)?;
        put(out, b, "out")
    })
}
