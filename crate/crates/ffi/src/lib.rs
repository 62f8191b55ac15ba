//! C ABI over `rac-core`.
//!
//! Every fallible function returns a status code (`RAC_OK` on success) and
//! writes results through out-pointers. On failure the message is available
//! from [`rac_last_error_message`] on the same thread. Objects are opaque
//! handles released with their matching `*_free` function; strings returned
//! by the library are released with [`rac_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rac_core::decode::{generate, SampleConfig};
use rac_core::eval::{bleu, hallucination_rate, parent_recall, rouge_l};
use rac_core::lm::{self, context_ids, LMParams, ModelRole};
use rac_core::pipeline::stages::read_documents;
use rac_core::retrieval::{retrieve_topk, Bm25Params, InvertedIndex, ScoredPassage};
use rac_core::text::{chunk_corpus, detokenize, tokenize, Stopwords, Vocab};
use rac_core::RacError;

pub const RAC_OK: i32 = 0;
/// A required pointer argument was null.
pub const RAC_ERR_NULL: i32 = 1;
/// A string argument was not valid UTF-8.
pub const RAC_ERR_UTF8: i32 = 2;
/// An argument or configuration value was out of range.
pub const RAC_ERR_INVALID: i32 = 3;
pub const RAC_ERR_IO: i32 = 4;
/// A file was malformed or failed its integrity check.
pub const RAC_ERR_FORMAT: i32 = 5;
/// A passage id or list index does not exist.
pub const RAC_ERR_NOT_FOUND: i32 = 6;
/// A Rust panic was caught at the boundary.
pub const RAC_ERR_PANIC: i32 = 7;
/// Any other library error.
pub const RAC_ERR_OTHER: i32 = 8;

pub const RAC_ROLE_GROUNDED: i32 = 0;
pub const RAC_ROLE_UNGROUNDED: i32 = 1;
pub const RAC_ROLE_POLICY: i32 = 2;
pub const RAC_ROLE_BASE_LM: i32 = 3;

/// A BM25 passage index.
pub struct RacIndex(InvertedIndex);

/// Ranked search results.
pub struct RacHits {
    ids: Vec<CString>,
    scores: Vec<f64>,
}

/// A checkpoint together with its vocabulary.
pub struct RacModel {
    params: LMParams,
    vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(i32, String);

fn code(e: &RacError) -> i32 {
    match e {
            RacError::InvalidConfig(_)
            | RacError::NotEnoughPassages { .. }
            | RacError::SequenceTooLong { .. }
            | RacError::RoleContract(_)
            | RacError::EmptyBatch
            | RacError::EmptyDataset(_)
            | RacError::DuplicatePassage(_) => RAC_ERR_INVALID,
            RacError::UnknownPassage(_) => RAC_ERR_NOT_FOUND,
            RacError::Io(_) => RAC_ERR_IO,
            RacError::CorruptHeader(_)
            | RacError::Checksum(_)
            | RacError::ShapeMismatch { .. }
            | RacError::Malformed { .. }
            | RacError::Json(_) => RAC_ERR_FORMAT,
            RacError::Stage { source, .. } => code(source),
            _ => RAC_ERR_OTHER,
    }
}

impl From<RacError> for Failure {
    fn from(e: RacError) -> Self {
        Failure(code(&e), e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RAC_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            RAC_ERR_PANIC
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(RAC_ERR_NULL, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RAC_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

unsafe fn texts(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<Vec<String>>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(Failure(RAC_ERR_NULL, format!("{what} is null")));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .map(|&s| text(s, what).map(tokenize))
        .collect()
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(RAC_ERR_NULL, "output pointer is null".into()))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(RAC_ERR_NULL, format!("{what} is null")))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library.
#[no_mangle]
pub extern "C" fn rac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Chunks a JSON Lines document file into passages of at most `chunk_size`
/// tokens and indexes them.
///
/// # Safety
/// `corpus_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rac_index_build(corpus_path: *const c_char, chunk_size: usize, out: *mut *mut RacIndex) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        let docs = read_documents(text(corpus_path, "corpus_path")?)?;
        let index = InvertedIndex::build(chunk_corpus(&docs, chunk_size)?)?;
        *out = Box::into_raw(Box::new(RacIndex(index)));
        Ok(())
    })
}

/// Loads an index written by [`rac_index_save`] or the `rac index` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rac_index_load(path: *const c_char, out: *mut *mut RacIndex) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        let index = InvertedIndex::load(text(path, "path")?)?;
        *out = Box::into_raw(Box::new(RacIndex(index)));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rac_index_save(index: *const RacIndex, path: *const c_char) -> i32 {
    guard(|| {
        handle(index, "index")?.0.save(text(path, "path")?)?;
        Ok(())
    })
}

/// Number of passages, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rac_index_num_passages(index: *const RacIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.num_docs())
}

/// # Safety
/// `index` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rac_index_free(index: *mut RacIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// BM25 top-`k` search. Passages with zero score are left out, so the
/// result may hold fewer than `k` hits.
///
/// # Safety
/// `index` must be a live handle, `query` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rac_index_search(
    index: *const RacIndex,
    query: *const c_char,
    k: usize,
    k1: f64,
    b: f64,
    out: *mut *mut RacHits,
) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        let index = handle(index, "index")?;
        let params = Bm25Params { k1, b };
        params.validate()?;
        let hits: Vec<ScoredPassage> = retrieve_topk(&index.0, &tokenize(text(query, "query")?), k, params);
        let ids = hits
            .iter()
            .map(|h| CString::new(h.passage_id.as_str()).map_err(|_| Failure(RAC_ERR_INVALID, "NUL in passage id".into())))
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(RacHits {
            ids,
            scores: hits.iter().map(|h| h.score).collect(),
        }));
        Ok(())
    })
}

/// # Safety
/// `hits` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rac_hits_len(hits: *const RacHits) -> usize {
    hits.as_ref().map_or(0, |h| h.ids.len())
}

/// Passage id and score of hit `i`. The id pointer is owned by `hits`.
///
/// # Safety
/// `hits` must be a live handle; `id` and `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rac_hits_get(hits: *const RacHits, i: usize, id: *mut *const c_char, score: *mut f64) -> i32 {
    guard(|| {
        let hits = handle(hits, "hits")?;
        let (id, score) = (out_ptr(id)?, out_ptr(score)?);
        if i >= hits.ids.len() {
            return Err(Failure(RAC_ERR_NOT_FOUND, format!("hit {i} out of range ({} hits)", hits.ids.len())));
        }
        *id = hits.ids[i].as_ptr();
        *score = hits.scores[i];
        Ok(())
    })
}

/// # Safety
/// `hits` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rac_hits_free(hits: *mut RacHits) {
    if !hits.is_null() {
        drop(Box::from_raw(hits));
    }
}

/// Adapted PARENT recall of a candidate against `n` passages and an
/// optional reference (may be null).
///
/// # Safety
/// All strings must be NUL-terminated; `passages` must hold `n` pointers.
#[no_mangle]
pub unsafe extern "C" fn rac_parent_recall(
    candidate: *const c_char,
    passages: *const *const c_char,
    n: usize,
    reference: *const c_char,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        let cand = tokenize(text(candidate, "candidate")?);
        let ps = texts(passages, n, "passage")?;
        let reference = if reference.is_null() {
            None
        } else {
            Some(tokenize(text(reference, "reference")?))
        };
        *out = parent_recall(&cand, &ps, reference.as_deref(), &Stopwords::default());
        Ok(())
    })
}

/// Share of the candidate's content units found in none of the passages.
///
/// # Safety
/// As for [`rac_parent_recall`].
#[no_mangle]
pub unsafe extern "C" fn rac_hallucination_rate(
    candidate: *const c_char,
    passages: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        let cand = tokenize(text(candidate, "candidate")?);
        *out = hallucination_rate(&cand, &texts(passages, n, "passage")?, &Stopwords::default());
        Ok(())
    })
}

/// Sentence BLEU-4 of a candidate against one reference.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rac_bleu(candidate: *const c_char, reference: *const c_char, out: *mut f64) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        *out = bleu(&tokenize(text(candidate, "candidate")?), &tokenize(text(reference, "reference")?));
        Ok(())
    })
}

/// ROUGE-L F-measure of a candidate against one reference.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rac_rouge_l(candidate: *const c_char, reference: *const c_char, out: *mut f64) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        *out = rouge_l(&tokenize(text(candidate, "candidate")?), &tokenize(text(reference, "reference")?));
        Ok(())
    })
}

/// Loads a checkpoint and the vocabulary file it was trained with.
///
/// # Safety
/// Both paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rac_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut RacModel,
) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        let (params, _) = lm::load(text(checkpoint_path, "checkpoint_path")?)?;
        let vocab = Vocab::load(text(vocab_path, "vocab_path")?)?;
        if vocab.len() != params.config.vocab_size {
            return Err(Failure(
                RAC_ERR_INVALID,
                format!("vocabulary has {} entries, model expects {}", vocab.len(), params.config.vocab_size),
            ));
        }
        *out = Box::into_raw(Box::new(RacModel { params, vocab }));
        Ok(())
    })
}

/// Generates a clarifying question. `temperature` 0 decodes greedily;
/// `top_k` 0 keeps the whole vocabulary. The result is released with
/// [`rac_string_free`].
///
/// # Safety
/// `model` must be a live handle, `query` NUL-terminated, `passages` must
/// hold `n` NUL-terminated strings and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rac_model_generate(
    model: *const RacModel,
    query: *const c_char,
    passages: *const *const c_char,
    n: usize,
    role: i32,
    max_len: usize,
    temperature: f64,
    top_k: usize,
    seed: u64,
    out: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let out = out_ptr(out)?;
        let m = handle(model, "model")?;
        let role = match role {
            RAC_ROLE_GROUNDED => ModelRole::Grounded,
            RAC_ROLE_UNGROUNDED => ModelRole::Ungrounded,
            RAC_ROLE_POLICY => ModelRole::Policy,
            RAC_ROLE_BASE_LM => ModelRole::BaseLm,
            other => return Err(Failure(RAC_ERR_INVALID, format!("unknown role {other}"))),
        };
        let q = m.vocab.encode(&tokenize(text(query, "query")?));
        let ps: Vec<Vec<u32>> = texts(passages, n, "passage")?.iter().map(|p| m.vocab.encode(p)).collect();
        let cfg = if temperature == 0.0 {
            SampleConfig::greedy(max_len)
        } else {
            SampleConfig {
                temperature,
                top_k,
                max_len,
                seed,
            }
        };
        let g = generate(&m.params, &context_ids(role, &q, &ps), &cfg)?;
        let s = detokenize(&m.vocab.decode(&g.tokens));
        *out = CString::new(s)
            .map_err(|_| Failure(RAC_ERR_OTHER, "NUL in generated text".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rac_model_free(model: *mut RacModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
