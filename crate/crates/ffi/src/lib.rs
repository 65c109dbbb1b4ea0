//! C ABI over `pdploc`.
//!
//! Every fallible function returns a [`PdpStatus`]; on failure the message
//! is available from [`pdploc_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pdploc::augment::AugmentConfig;
use pdploc::dataio::{compress_dataset, generate_dataset, read_dataset, write_dataset, GeneratorConfig, PdpMatrix, SensorLayout};
use pdploc::eval::evaluate;
use pdploc::model::{count_flops, predict, Checkpoint, Family, ModelConfig};
use pdploc::tokenizer::TokenizerSpec;
use pdploc::train::{train, TrainConfig};
use pdploc::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Format = 4,
    Io = 5,
    Diverged = 6,
    Unsupported = 7,
    NonFinite = 8,
    EmptyDataset = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for PdpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidInput(_) => PdpStatus::InvalidArgument,
            Error::Shape { .. } => PdpStatus::Shape,
            Error::NonFinite(_) => PdpStatus::NonFinite,
            Error::EmptyDataset => PdpStatus::EmptyDataset,
            Error::Format(_) | Error::Json(_) => PdpStatus::Format,
            Error::Diverged { .. } => PdpStatus::Diverged,
            Error::Unsupported(_) => PdpStatus::Unsupported,
            Error::Io { .. } => PdpStatus::Io,
        }
    }
}

/// A set of PDP samples with their labels.
pub struct PdpDataset {
    samples: Vec<PdpMatrix>,
}

/// Trained weights together with their model and compression settings.
pub struct PdpCheckpoint {
    inner: Checkpoint,
}

/// Localization error statistics in meters.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PdpErrorSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub p50: f64,
    pub p67: f64,
    pub p80: f64,
    pub p90: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PdpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PdpStatus::from(&e), e.to_string())
    }
}

fn fail(status: PdpStatus, message: &str) -> Failure {
    Failure(status, message.to_string())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PdpStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            PdpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(fail(PdpStatus::NullPointer, &format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(PdpStatus::InvalidArgument, &format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(ptr: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if ptr.is_null() {
        Ok(None)
    } else {
        str_arg(ptr, name).map(Some)
    }
}

unsafe fn handle<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| fail(PdpStatus::NullPointer, &format!("{name} is null")))
}

unsafe fn out_ptr<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| fail(PdpStatus::NullPointer, &format!("{name} is null")))
}

unsafe fn out_slice<'a>(ptr: *mut f64, len: usize, needed: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(fail(PdpStatus::NullPointer, &format!("{name} is null")));
    }
    if len < needed {
        return Err(fail(
            PdpStatus::BufferTooSmall,
            &format!("{name} holds {len} values, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, needed))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pdploc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pdploc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Synthesizes `samples` PDPs on the first `sensors` sensors of the default
/// grid (0 selects all of them).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pdploc_dataset_generate(samples: usize, seed: u64, sensors: usize, out: *mut *mut PdpDataset) -> PdpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if samples == 0 {
            return Err(fail(PdpStatus::InvalidArgument, "samples must be >= 1"));
        }
        let layout = if sensors == 0 {
            SensorLayout::default()
        } else {
            SensorLayout::default_subset(sensors)?
        };
        let gen = GeneratorConfig {
            rng_seed: seed,
            ..GeneratorConfig::default()
        };
        let samples = generate_dataset(&layout, &gen, samples)?;
        *out = Box::into_raw(Box::new(PdpDataset { samples }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pdploc_dataset_read(path: *const c_char, out: *mut *mut PdpDataset) -> PdpStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_ptr(out, "out")?;
        let samples = read_dataset(&path)?;
        *out = Box::into_raw(Box::new(PdpDataset { samples }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pdploc_dataset_write(dataset: *const PdpDataset, path: *const c_char) -> PdpStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        write_dataset(&path, &ds.samples)?;
        Ok(())
    })
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn pdploc_dataset_len(dataset: *const PdpDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.samples.len())
}

/// Sensor and delay-bin count of the samples.
///
/// # Safety
/// `dataset` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdploc_dataset_shape(dataset: *const PdpDataset, sensors: *mut usize, time_samples: *mut usize) -> PdpStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let first = ds.samples.first().ok_or(Error::EmptyDataset)?;
        *out_ptr(sensors, "sensors")? = first.sensors();
        *out_ptr(time_samples, "time_samples")? = first.time_samples();
        Ok(())
    })
}

/// Copies the (x, y) label of sample `index` into `xy[0..2]`.
///
/// # Safety
/// `xy` must point to two writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pdploc_dataset_label(dataset: *const PdpDataset, index: usize, xy: *mut f64) -> PdpStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let s = ds
            .samples
            .get(index)
            .ok_or_else(|| fail(PdpStatus::InvalidArgument, "sample index out of range"))?;
        out_slice(xy, 2, 2, "xy")?.copy_from_slice(&s.label);
        Ok(())
    })
}

/// Copies the row-major sensor x delay powers of sample `index`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pdploc_dataset_powers(dataset: *const PdpDataset, index: usize, buf: *mut f64, len: usize) -> PdpStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let s = ds
            .samples
            .get(index)
            .ok_or_else(|| fail(PdpStatus::InvalidArgument, "sample index out of range"))?;
        out_slice(buf, len, s.powers().len(), "buf")?.copy_from_slice(s.powers());
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn pdploc_dataset_free(dataset: *mut PdpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

fn model_config(preset: &str, family: Option<&str>, sensors: usize, time_samples: usize) -> Result<ModelConfig, Failure> {
    let (tok, size) = preset
        .split_once('-')
        .ok_or_else(|| fail(PdpStatus::InvalidArgument, "preset must look like <tokenizer>-<size>"))?;
    let tok: TokenizerSpec = tok.parse()?;
    let family = match family {
        Some(f) => f.parse()?,
        None if tok == TokenizerSpec::Sst => Family::LSwiGlu,
        None => Family::Vanilla,
    };
    Ok(ModelConfig::preset(family, tok, size.parse()?, sensors, time_samples)?)
}

/// Forward FLOPs of one sample for a preset such as `sst-small`. A null
/// `family` selects lswiglu for sst tokens and vanilla otherwise.
///
/// # Safety
/// String arguments must be NUL-terminated; `flops` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdploc_flops(preset: *const c_char, family: *const c_char, sensors: usize, flops: *mut f64) -> PdpStatus {
    guard(|| {
        let cfg = model_config(
            str_arg(preset, "preset")?,
            opt_str_arg(family, "family")?,
            sensors,
            pdploc::dataio::DEFAULT_TIME_SAMPLES,
        )?;
        *out_ptr(flops, "flops")? = count_flops(&cfg);
        Ok(())
    })
}

/// Trains a preset on `dataset` with default hyper-parameters except the
/// given epoch count, seed and augmentation list (`all`, `none` or a comma
/// list of `drop`, `shift`, `mixup`; null keeps all three).
///
/// # Safety
/// `dataset` must come from this library, strings be NUL-terminated or
/// null where allowed, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pdploc_train(
    dataset: *const PdpDataset,
    preset: *const c_char,
    family: *const c_char,
    epochs: usize,
    seed: u64,
    augment: *const c_char,
    out: *mut *mut PdpCheckpoint,
) -> PdpStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let out = out_ptr(out, "out")?;
        let first = ds.samples.first().ok_or(Error::EmptyDataset)?;
        let model = model_config(
            str_arg(preset, "preset")?,
            opt_str_arg(family, "family")?,
            first.sensors(),
            first.time_samples(),
        )?;
        let mut cfg = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        };
        if let Some(list) = opt_str_arg(augment, "augment")? {
            cfg.augment = AugmentConfig::default().with_enabled(list)?;
        }
        cfg.validate()?;
        let outcome = train(&ds.samples, &model, &cfg, None, |_| {})?;
        *out = Box::into_raw(Box::new(PdpCheckpoint {
            inner: outcome.checkpoint,
        }));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pdploc_checkpoint_load(path: *const c_char, out: *mut *mut PdpCheckpoint) -> PdpStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_ptr(out, "out")?;
        let inner = Checkpoint::load(&path)?;
        *out = Box::into_raw(Box::new(PdpCheckpoint { inner }));
        Ok(())
    })
}

/// # Safety
/// `checkpoint` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pdploc_checkpoint_save(checkpoint: *const PdpCheckpoint, path: *const c_char) -> PdpStatus {
    guard(|| {
        let ck = handle(checkpoint, "checkpoint")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        ck.inner.save(&path)?;
        Ok(())
    })
}

/// Predicted (x, y) positions of every sample, written as `x0 y0 x1 y1 ...`
/// into `xy`, which must hold `2 * pdploc_dataset_len(dataset)` doubles.
///
/// # Safety
/// Handles must come from this library; `xy` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdploc_checkpoint_predict(
    checkpoint: *const PdpCheckpoint,
    dataset: *const PdpDataset,
    xy: *mut f64,
    len: usize,
) -> PdpStatus {
    guard(|| {
        let ck = &handle(checkpoint, "checkpoint")?.inner;
        let ds = handle(dataset, "dataset")?;
        let out = out_slice(xy, len, 2 * ds.samples.len(), "xy")?;
        let inputs = compress_dataset(&ds.samples, &ck.header.compression)?;
        let preds = predict(&ck.ema, ck.config(), &inputs)?;
        for (dst, p) in out.chunks_exact_mut(2).zip(preds) {
            dst.copy_from_slice(&p);
        }
        Ok(())
    })
}

/// Euclidean error statistics of the checkpoint on a labelled dataset.
///
/// # Safety
/// Handles must come from this library; `summary` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdploc_checkpoint_evaluate(
    checkpoint: *const PdpCheckpoint,
    dataset: *const PdpDataset,
    summary: *mut PdpErrorSummary,
) -> PdpStatus {
    guard(|| {
        let ck = &handle(checkpoint, "checkpoint")?.inner;
        let ds = handle(dataset, "dataset")?;
        let out = out_ptr(summary, "summary")?;
        let s = evaluate(ck, &ds.samples)?.summary;
        *out = PdpErrorSummary {
            mean: s.mean,
            std_dev: s.std,
            p50: s.p50,
            p67: s.p67,
            p80: s.p80,
            p90: s.p90,
        };
        Ok(())
    })
}

/// # Safety
/// `checkpoint` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn pdploc_checkpoint_free(checkpoint: *mut PdpCheckpoint) {
    if !checkpoint.is_null() {
        drop(Box::from_raw(checkpoint));
    }
}
