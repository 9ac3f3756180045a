//! C ABI over the seqsplat toolkit.
//!
//! Every fallible function returns a [`SeqsplatStatus`]; on failure the
//! message is kept per thread and can be copied out with
//! [`seqsplat_last_error`]. Objects cross the boundary as opaque handles that
//! the caller releases with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use seqsplat::lift::{lift_pipeline, FeatureBank, LiftConfig, ProceduralFeatureizer};
use seqsplat::metrics;
use seqsplat::model::{load_model, ModelMeta, Mode, SceneTensors, SeqSplatNet, Vocabulary};
use seqsplat::scene::{load_scene, GaussianScene};
use seqsplat::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqsplatStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    Io = 2,
    /// Malformed file or text input.
    Parse = 3,
    /// Invalid argument, configuration or state.
    Invalid = 4,
    /// Lengths or shapes disagree.
    Shape = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> SeqsplatStatus {
    match err {
        Error::Io { .. } => SeqsplatStatus::Io,
        Error::Parse { .. } | Error::Annotation(_) => SeqsplatStatus::Parse,
        Error::Shape(_) => SeqsplatStatus::Shape,
        Error::Invalid(_) | Error::Generation(_) | Error::Config(_) | Error::NonFinite(_) => SeqsplatStatus::Invalid,
    }
}

struct Fail(SeqsplatStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SeqsplatStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `body`, records any failure and converts panics.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SeqsplatStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            SeqsplatStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
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
            SeqsplatStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SeqsplatStatus::Parse, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies `src` into `buf` (capacity `len`) NUL-terminated and truncated if
/// needed; returns the length `src` needs, excluding the terminator.
unsafe fn copy_str(src: &str, buf: *mut c_char, len: usize) -> usize {
    if !buf.is_null() && len > 0 {
        let n = src.len().min(len - 1);
        ptr::copy_nonoverlapping(src.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
    }
    src.len()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn seqsplat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf` and returns
/// its full length. Pass `buf = NULL` to query the length.
///
/// # Safety
/// `buf` must be NULL or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| copy_str(&e.borrow(), buf, len))
}

// ---- scenes ----

/// Opaque handle to a loaded Gaussian scene.
pub struct SeqsplatScene(GaussianScene);

/// Loads a binary PLY scene.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_scene_load(path: *const c_char, out: *mut *mut SeqsplatScene) -> SeqsplatStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, SeqsplatScene(load_scene(path)?))
    })
}

/// Number of primitives, or 0 for a NULL handle.
///
/// # Safety
/// `scene` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_scene_len(scene: *const SeqsplatScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `scene` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_scene_free(scene: *mut SeqsplatScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

// ---- feature banks ----

/// Opaque handle to a per-primitive feature bank.
pub struct SeqsplatFeatures(FeatureBank);

/// Lifts the procedural 2D features of `views` renders at `width × height`
/// onto the scene's primitives.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_lift(
    scene: *const SeqsplatScene,
    views: usize,
    width: u32,
    height: u32,
    out: *mut *mut SeqsplatFeatures,
) -> SeqsplatStatus {
    guard(|| {
        let scene = scene.as_ref().ok_or_else(|| null("scene"))?;
        let config = LiftConfig {
            views,
            width,
            height,
            ..Default::default()
        };
        put(out, SeqsplatFeatures(lift_pipeline(&scene.0, &config, &ProceduralFeatureizer, None)?))
    })
}

/// Rows (primitives) of the bank, or 0 for NULL.
///
/// # Safety
/// `bank` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_features_len(bank: *const SeqsplatFeatures) -> usize {
    bank.as_ref().map_or(0, |b| b.0.n())
}

/// Channels per primitive, or 0 for NULL.
///
/// # Safety
/// `bank` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_features_dim(bank: *const SeqsplatFeatures) -> usize {
    bank.as_ref().map_or(0, |b| b.0.dim())
}

/// Copies the row-major `len × dim` values into `buf`, which must hold
/// exactly `n` doubles.
///
/// # Safety
/// `bank` must be a live handle and `buf` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_features_copy(bank: *const SeqsplatFeatures, buf: *mut f64, n: usize) -> SeqsplatStatus {
    guard(|| {
        let bank = bank.as_ref().ok_or_else(|| null("bank"))?;
        let data = bank.0.data();
        if n != data.len() {
            return Err(Fail(SeqsplatStatus::Shape, format!("buffer holds {n} values, bank has {}", data.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, n);
        Ok(())
    })
}

/// # Safety
/// `bank` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_features_free(bank: *mut SeqsplatFeatures) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

// ---- models ----

/// Opaque handle to a trained model with its vocabulary.
pub struct SeqsplatModel {
    net: SeqSplatNet,
    vocab: Vocabulary,
    meta: ModelMeta,
}

/// Loads a model directory written by `seqsplat train`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_model_load(dir: *const c_char, out: *mut *mut SeqsplatModel) -> SeqsplatStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let (net, vocab, meta) = load_model(dir)?;
        put(out, SeqsplatModel { net, vocab, meta })
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_model_free(model: *mut SeqsplatModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Opaque handle to a decoded plan and its masks.
pub struct SeqsplatPrediction {
    text: String,
    masks: Vec<Vec<f64>>,
}

/// Plans `instruction` greedily and decodes one mask per `<SEG>`.
///
/// `features` may be NULL: a model trained with features then lifts them
/// itself with its stored settings; one trained without ignores them.
///
/// # Safety
/// `model` and `scene` must be live handles, `features` NULL or live,
/// `instruction` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_model_predict(
    model: *const SeqsplatModel,
    scene: *const SeqsplatScene,
    features: *const SeqsplatFeatures,
    instruction: *const c_char,
    max_steps: usize,
    out: *mut *mut SeqsplatPrediction,
) -> SeqsplatStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let scene = scene.as_ref().ok_or_else(|| null("scene"))?;
        let instruction = str_arg(instruction, "instruction")?;
        let lifted;
        let bank = match (&model.meta.features, features.as_ref()) {
            (None, _) => None,
            (Some(_), Some(f)) => Some(&f.0),
            (Some(config), None) => {
                lifted = lift_pipeline(&scene.0, config, &ProceduralFeatureizer, None)?;
                Some(&lifted)
            }
        };
        let tensors = SceneTensors::new(&scene.0, bank)?;
        let mode = Mode::Greedy {
            max_steps,
            max_tokens: model.net.config.planner.context,
        };
        let ids = model.vocab.encode(instruction);
        let result = model.net.forward_sequence(&ids, &tensors, &mode)?;
        let masks = result
            .mask_logits
            .iter()
            .map(|l| l.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect())
            .collect();
        put(
            out,
            SeqsplatPrediction {
                text: model.vocab.decode(&result.plan.output),
                masks,
            },
        )
    })
}

/// Number of predicted steps, or 0 for NULL.
///
/// # Safety
/// `pred` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_prediction_steps(pred: *const SeqsplatPrediction) -> usize {
    pred.as_ref().map_or(0, |p| p.masks.len())
}

/// Copies the planner's decoded text into `buf`; returns its full length.
///
/// # Safety
/// `pred` must be NULL or live; `buf` NULL or `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_prediction_text(pred: *const SeqsplatPrediction, buf: *mut c_char, len: usize) -> usize {
    pred.as_ref().map_or(0, |p| copy_str(&p.text, buf, len))
}

/// Copies the probabilities of step `step` into `buf` of `n` doubles, where
/// `n` must equal the scene's primitive count.
///
/// # Safety
/// `pred` must be live and `buf` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_prediction_mask(
    pred: *const SeqsplatPrediction,
    step: usize,
    buf: *mut f64,
    n: usize,
) -> SeqsplatStatus {
    guard(|| {
        let pred = pred.as_ref().ok_or_else(|| null("prediction"))?;
        let mask = pred.masks.get(step).ok_or_else(|| {
            Fail(SeqsplatStatus::Invalid, format!("step {step} of {}", pred.masks.len()))
        })?;
        if n != mask.len() {
            return Err(Fail(SeqsplatStatus::Shape, format!("buffer holds {n} values, mask has {}", mask.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(mask.as_ptr(), buf, n);
        Ok(())
    })
}

/// # Safety
/// `pred` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_prediction_free(pred: *mut SeqsplatPrediction) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}

// ---- metrics ----

/// Per-step scores.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SeqsplatStepScores {
    pub iou: f64,
    pub auc: f64,
    pub sim: f64,
    pub mae: f64,
}

/// Sequence scores after padding the shorter side with empty frames.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SeqsplatSequenceScores {
    pub siou: f64,
    pub sauc: f64,
    pub ssim: f64,
    pub smae: f64,
    pub aligned_length: usize,
}

/// IoU, AUC, SIM and MAE of one predicted mask against ground truth, both of
/// length `n`.
///
/// # Safety
/// `pred` and `gt` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_step_scores(
    pred: *const f64,
    gt: *const f64,
    n: usize,
    out: *mut SeqsplatStepScores,
) -> SeqsplatStatus {
    guard(|| {
        let p = slice_arg(pred, n, "pred")?;
        let g = slice_arg(gt, n, "gt")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = metrics::step_scores(p, g)?;
        *out = SeqsplatStepScores {
            iou: s.iou,
            auc: s.auc,
            sim: s.sim,
            mae: s.mae,
        };
        Ok(())
    })
}

/// Sequential scores of `t_pred` predicted masks against `t_gt` ground-truth
/// masks, each row-major with `n` values per mask.
///
/// # Safety
/// `pred` must point to `t_pred · n` doubles, `gt` to `t_gt · n`, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn seqsplat_sequential_scores(
    pred: *const f64,
    t_pred: usize,
    gt: *const f64,
    t_gt: usize,
    n: usize,
    out: *mut SeqsplatSequenceScores,
) -> SeqsplatStatus {
    guard(|| {
        let total = |t: usize| {
            t.checked_mul(n)
                .ok_or_else(|| Fail(SeqsplatStatus::Shape, "mask buffer size overflows".into()))
        };
        let p = slice_arg(pred, total(t_pred)?, "pred")?;
        let g = slice_arg(gt, total(t_gt)?, "gt")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rows = |s: &[f64], t: usize| -> Vec<Vec<f64>> {
            (0..t).map(|i| s[i * n..(i + 1) * n].to_vec()).collect()
        };
        let s = metrics::sequential_metrics(&rows(p, t_pred), &rows(g, t_gt))?;
        *out = SeqsplatSequenceScores {
            siou: s.siou,
            sauc: s.sauc,
            ssim: s.ssim,
            smae: s.smae,
            aligned_length: s.aligned_length,
        };
        Ok(())
    })
}
