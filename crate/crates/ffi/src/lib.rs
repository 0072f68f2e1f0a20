//! C ABI for scoring with a trained model.
//!
//! Every function returns a [`KgrecStatus`]; on failure a description is
//! available from [`kgrec_last_error_message`] on the same thread. Models are
//! opaque handles created by [`kgrec_model_load`] and released with
//! [`kgrec_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kgrec::bundle::{checkpoint_config, config_from_text, fingerprint, read_bundle};
use kgrec::dataset::ModelInputs;
use kgrec::eval::Scorer;
use kgrec::model::FrozenModel;
use kgrec::numeric::ModelParams;
use kgrec::vocab::Vocabulary;
use kgrec::{Error, ItemId, UserId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgrecStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Data = 6,
    Numeric = 7,
    OutOfRange = 8,
    UnknownToken = 9,
    Panic = 10,
}

/// A trained model with its vocabularies.
pub struct KgrecModel {
    frozen: FrozenModel,
    users: Vocabulary,
    entities: Vocabulary,
    num_items: usize,
    dim: usize,
    /// Sorted items each user interacted with in any split.
    interacted: Vec<Vec<ItemId>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> KgrecStatus {
    match e {
        Error::Io { .. } => KgrecStatus::Io,
        Error::Parse { .. } | Error::Json(_) => KgrecStatus::Parse,
        Error::Config(_) => KgrecStatus::Config,
        Error::Numeric(_) => KgrecStatus::Numeric,
        Error::Index { .. } => KgrecStatus::OutOfRange,
        _ => KgrecStatus::Data,
    }
}

fn fail(status: KgrecStatus, message: impl Into<String>) -> KgrecStatus {
    set_error(message.into());
    status
}

/// Runs `f`, converting panics into `KgrecStatus::Panic`.
fn guard(f: impl FnOnce() -> KgrecStatus) -> KgrecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(KgrecStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, KgrecStatus> {
    if p.is_null() {
        return Err(fail(KgrecStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(KgrecStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn load(bundle: &Path, checkpoint: &Path) -> Result<KgrecModel, Error> {
    let (ds, meta) = read_bundle(bundle)?;
    let cfg = match checkpoint_config(checkpoint)? {
        Some(c) => c,
        None => config_from_text(&meta.config)?,
    };
    let (params, fp) = ModelParams::load(checkpoint)?;
    if fp != fingerprint(&cfg) || params.dims != ds.dims(&cfg) {
        return Err(Error::Config("checkpoint does not match the bundle configuration".into()));
    }
    let inputs = ModelInputs::build(&ds, &cfg)?;
    let frozen = FrozenModel::build(&params, inputs.context())?;
    Ok(KgrecModel {
        frozen,
        interacted: ds.interacted(),
        num_items: ds.num_items,
        dim: cfg.d,
        users: ds.users,
        entities: ds.entities,
    })
}

/// Loads a prepared bundle directory and a checkpoint written by training.
///
/// # Safety
/// `bundle_dir` and `checkpoint` must be NUL-terminated strings; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgrec_model_load(
    bundle_dir: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut KgrecModel,
) -> KgrecStatus {
    guard(|| {
        if out.is_null() {
            return fail(KgrecStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let bundle = match path_arg(bundle_dir, "bundle_dir") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ckpt = match path_arg(checkpoint, "checkpoint") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load(bundle, ckpt) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(m));
                KgrecStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`kgrec_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgrec_model_free(model: *mut KgrecModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_ref<'a>(model: *const KgrecModel) -> Result<&'a KgrecModel, KgrecStatus> {
    model
        .as_ref()
        .ok_or_else(|| fail(KgrecStatus::NullArgument, "model is null"))
}

/// Number of users, items and the embedding size. Any output may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kgrec_model_dims(
    model: *const KgrecModel,
    users: *mut usize,
    items: *mut usize,
    dim: *mut usize,
) -> KgrecStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        for (p, v) in [(users, m.users.len()), (items, m.num_items), (dim, m.dim)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        KgrecStatus::Ok
    })
}

fn check_ids(m: &KgrecModel, user: u32, item: Option<u32>) -> Result<(), KgrecStatus> {
    if user as usize >= m.users.len() {
        return Err(fail(
            KgrecStatus::OutOfRange,
            format!("user id {user} out of range (count {})", m.users.len()),
        ));
    }
    if let Some(item) = item {
        if item as usize >= m.num_items {
            return Err(fail(
                KgrecStatus::OutOfRange,
                format!("item id {item} out of range (count {})", m.num_items),
            ));
        }
    }
    Ok(())
}

/// Interaction probability for one (user, item) pair.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgrec_model_score(
    model: *const KgrecModel,
    user: u32,
    item: u32,
    out: *mut f64,
) -> KgrecStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(KgrecStatus::NullArgument, "out is null");
        }
        if let Err(s) = check_ids(m, user, Some(item)) {
            return s;
        }
        *out = m.frozen.score(UserId(user), ItemId(item));
        KgrecStatus::Ok
    })
}

/// Top `capacity` items for `user` by descending score (ties by ascending
/// id), optionally skipping items the user already interacted with. Writes
/// up to `capacity` ids and scores and stores the count in `written`.
/// `scores` may be null.
///
/// # Safety
/// `items` must hold `capacity` values, `scores` too when non-null, and
/// `written` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgrec_model_recommend(
    model: *const KgrecModel,
    user: u32,
    exclude_seen: bool,
    items: *mut u32,
    scores: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> KgrecStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if written.is_null() || (items.is_null() && capacity > 0) {
            return fail(KgrecStatus::NullArgument, "items or written is null");
        }
        if let Err(s) = check_ids(m, user, None) {
            return s;
        }
        let seen = &m.interacted[user as usize];
        let mut ranked: Vec<(ItemId, f64)> = (0..m.num_items as u32)
            .map(ItemId)
            .filter(|i| !exclude_seen || seen.binary_search(i).is_err())
            .map(|i| (i, m.frozen.score(UserId(user), i)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let n = ranked.len().min(capacity);
        for (j, (item, score)) in ranked.iter().take(n).enumerate() {
            *items.add(j) = item.0;
            if !scores.is_null() {
                *scores.add(j) = *score;
            }
        }
        *written = n;
        KgrecStatus::Ok
    })
}

unsafe fn lookup(vocab: &Vocabulary, limit: usize, token: *const c_char, out: *mut u32, kind: &str) -> KgrecStatus {
    if token.is_null() || out.is_null() {
        return fail(KgrecStatus::NullArgument, "token or out is null");
    }
    let Ok(t) = CStr::from_ptr(token).to_str() else {
        return fail(KgrecStatus::InvalidUtf8, "token is not UTF-8");
    };
    match vocab.get(t) {
        Some(id) if (id as usize) < limit => {
            *out = id;
            KgrecStatus::Ok
        }
        _ => fail(KgrecStatus::UnknownToken, format!("unknown {kind} {t:?}")),
    }
}

/// Dense id of a user token from the original interaction file.
///
/// # Safety
/// `token` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgrec_model_user_id(
    model: *const KgrecModel,
    token: *const c_char,
    out: *mut u32,
) -> KgrecStatus {
    guard(|| match model_ref(model) {
        Ok(m) => lookup(&m.users, m.users.len(), token, out, "user"),
        Err(s) => s,
    })
}

/// Dense id of an item token from the original interaction file.
///
/// # Safety
/// `token` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgrec_model_item_id(
    model: *const KgrecModel,
    token: *const c_char,
    out: *mut u32,
) -> KgrecStatus {
    guard(|| match model_ref(model) {
        Ok(m) => lookup(&m.entities, m.num_items, token, out, "item"),
        Err(s) => s,
    })
}

/// Copy of the last error message on this thread, or null when there is
/// none. Release it with [`kgrec_string_free`].
#[no_mangle]
pub extern "C" fn kgrec_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgrec_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kgrec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
