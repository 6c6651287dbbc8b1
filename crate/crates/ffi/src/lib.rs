//! C ABI over the `semcom` library.
//!
//! Every fallible call returns a [`SemcomStatus`]; on failure the message is kept per
//! thread and can be read with [`semcom_last_error`]. Objects are opaque handles
//! created by `*_new`/`*_load` functions and released with the matching `*_free`.
//! Passing a null handle to a `*_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use semcom::channel::{self, ChannelConfig, ChannelKind};
use semcom::codec::Ratio;
use semcom::error::Category;
use semcom::harness::eval::detect_batch;
use semcom::harness::sweep::{load_trained, TrainedModel};
use semcom::harness::{Mode, Model, RunConfig, Workspace};
use semcom::kg::EmbeddingTable;
use semcom::numeric::Tensor;
use semcom::Error;

/// Status codes. Values 2 to 6 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemcomStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemcomChannelKind {
    Awgn = 0,
    Rayleigh = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemcomMode {
    /// Initial classifier only.
    Msed = 0,
    /// Knowledge-graph refined classifier.
    MsedKg = 1,
}

/// Channel width and symbol counts for one compression ratio.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SemcomRate {
    pub channels: usize,
    /// Complex channel symbols per image.
    pub k: usize,
    /// Image reals per image.
    pub n: usize,
    pub achieved: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SemcomComplexity {
    pub parameters: u64,
    pub additions: u64,
    pub multiplications: u64,
}

/// One detection in pixel coordinates; `class_index` excludes background.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SemcomDetection {
    pub class_index: usize,
    pub score: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Run configuration.
pub struct SemcomConfig {
    cfg: RunConfig,
}

/// Channel model with fixed kind, power and SNR.
pub struct SemcomChannel {
    config: ChannelConfig,
}

/// A trained pipeline with its embeddings.
pub struct SemcomPipeline {
    trained: TrainedModel,
    embeddings: Option<EmbeddingTable>,
    mode: Mode,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

enum Failure {
    Null(&'static str),
    Status(SemcomStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(c: Category) -> SemcomStatus {
    match c {
        Category::Input => SemcomStatus::InvalidInput,
        Category::Config => SemcomStatus::Config,
        Category::Data => SemcomStatus::Data,
        Category::Numeric => SemcomStatus::Numeric,
        Category::Io => SemcomStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SemcomStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SemcomStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SemcomStatus::NullPointer
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(e.category())
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SemcomStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(SemcomStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copy `s` NUL-terminated into `buf` (truncating if needed); returns the size needed
/// including the terminator.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize) -> usize {
    let bytes = s.as_bytes();
    if !buf.is_null() && len > 0 {
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    bytes.len() + 1
}

fn ratio(num: u64, den: u64) -> Result<Ratio, Failure> {
    Ok(Ratio::new(num, den)?)
}

fn mode(m: SemcomMode) -> Mode {
    match m {
        SemcomMode::Msed => Mode::Msed,
        SemcomMode::MsedKg => Mode::MsedKg,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn semcom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` and return the buffer size
/// needed to hold it, terminator included. `buf` may be null to query the size.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn semcom_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| copy_out(&e.borrow(), buf, len))
}

/// Default run configuration.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free with
/// [`semcom_config_free`].
#[no_mangle]
pub unsafe extern "C" fn semcom_config_default(out: *mut *mut SemcomConfig) -> SemcomStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(SemcomConfig { cfg: RunConfig::default() }));
        Ok(())
    })
}

/// Parse a TOML configuration; omitted fields take their defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_config_from_toml(toml: *const c_char, out: *mut *mut SemcomConfig) -> SemcomStatus {
    guard(|| {
        let text = text(toml, "toml")?;
        let out = out_ref(out, "out")?;
        let cfg = RunConfig::from_toml(text)?;
        *out = Box::into_raw(Box::new(SemcomConfig { cfg }));
        Ok(())
    })
}

/// Load a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_config_load(path: *const c_char, out: *mut *mut SemcomConfig) -> SemcomStatus {
    guard(|| {
        let path = text(path, "path")?;
        let out = out_ref(out, "out")?;
        let cfg = RunConfig::load(path)?;
        *out = Box::into_raw(Box::new(SemcomConfig { cfg }));
        Ok(())
    })
}

/// Serialize the configuration as TOML into `buf`; `needed` receives the size
/// required including the terminator. Returns `BufferTooSmall` when `len` is short.
///
/// # Safety
/// `config` must come from this library, `buf` must be null or valid for `len` bytes,
/// and `needed` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_config_to_toml(
    config: *const SemcomConfig,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> SemcomStatus {
    guard(|| {
        let c = deref(config, "config")?;
        let needed = out_ref(needed, "needed")?;
        let s = c.cfg.to_toml();
        *needed = copy_out(&s, buf, len);
        if *needed > len {
            return Err(Failure::Status(SemcomStatus::BufferTooSmall, format!("need {} bytes", *needed)));
        }
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semcom_config_free(config: *mut SemcomConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Rate accounting for the ratio `num/den` under `config`.
///
/// # Safety
/// `config` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_rate(
    config: *const SemcomConfig,
    num: u64,
    den: u64,
    out: *mut SemcomRate,
) -> SemcomStatus {
    guard(|| {
        let c = deref(config, "config")?;
        let out = out_ref(out, "out")?;
        let model = Model::new(&c.cfg.model, ratio(num, den)?, &c.cfg.data.world.class_names())?;
        let r = &model.codec.rate;
        *out = SemcomRate { channels: r.channels, k: r.k, n: r.n, achieved: r.achieved() };
        Ok(())
    })
}

/// Per-image parameter and operation counts of the configured system.
///
/// # Safety
/// `config` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_complexity(
    config: *const SemcomConfig,
    mode_: SemcomMode,
    out: *mut SemcomComplexity,
) -> SemcomStatus {
    guard(|| {
        let c = deref(config, "config")?;
        let out = out_ref(out, "out")?;
        let model = Model::new(&c.cfg.model, c.cfg.train.rate, &c.cfg.data.world.class_names())?;
        let x = model.complexity(mode(mode_), c.cfg.model.eval_proposals.post_nms);
        *out =
            SemcomComplexity { parameters: x.parameters, additions: x.additions, multiplications: x.multiplications };
        Ok(())
    })
}

/// Channel with average transmit power `power` at `snr_db`. Rayleigh blocks are
/// equalized at the receiver.
///
/// # Safety
/// `out` must be a valid pointer; free the handle with [`semcom_channel_free`].
#[no_mangle]
pub unsafe extern "C" fn semcom_channel_new(
    kind: SemcomChannelKind,
    power: f64,
    snr_db: f64,
    out: *mut *mut SemcomChannel,
) -> SemcomStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let kind = match kind {
            SemcomChannelKind::Awgn => ChannelKind::Awgn,
            SemcomChannelKind::Rayleigh => ChannelKind::Rayleigh,
        };
        let config = ChannelConfig::from_snr_db(kind, power, snr_db, 0)?;
        *out = Box::into_raw(Box::new(SemcomChannel { config }));
        Ok(())
    })
}

/// # Safety
/// `channel` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semcom_channel_free(channel: *mut SemcomChannel) {
    if !channel.is_null() {
        drop(Box::from_raw(channel));
    }
}

/// Pack `len` reals into complex symbols, normalize to the channel power, transmit
/// one block seeded by `seed` and unpack the received reals into `out` (`len` values).
///
/// # Safety
/// `channel` must come from this library; `input` and `out` must be valid for `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn semcom_channel_transmit(
    channel: *const SemcomChannel,
    input: *const f64,
    len: usize,
    seed: u64,
    out: *mut f64,
) -> SemcomStatus {
    guard(|| {
        let ch = deref(channel, "channel")?;
        let x = slice(input, len, "input")?;
        if len == 0 {
            return Err(Failure::Status(SemcomStatus::InvalidInput, "empty input".into()));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let t = Tensor::new(&[len], x.to_vec())?;
        let z = channel::power_normalize(&channel::to_complex(&t), ch.config.power)?;
        let y = channel::transmit(&z, &ch.config, seed)?;
        let r = channel::from_complex(&y.received, &[len])?;
        ptr::copy_nonoverlapping(r.data().as_ptr(), out, len);
        Ok(())
    })
}

/// Load the pipeline trained for ratio `num/den` and `seed` from the run directory
/// `dir` (as written by the command-line tool). `MsedKg` also loads the knowledge-graph
/// embeddings from `dir`.
///
/// # Safety
/// `config` must come from this library, `dir` must be a NUL-terminated string and
/// `out` a valid pointer; free the handle with [`semcom_pipeline_free`].
#[no_mangle]
pub unsafe extern "C" fn semcom_pipeline_load(
    config: *const SemcomConfig,
    dir: *const c_char,
    num: u64,
    den: u64,
    seed: u64,
    mode_: SemcomMode,
    out: *mut *mut SemcomPipeline,
) -> SemcomStatus {
    guard(|| {
        let c = deref(config, "config")?;
        let dir = Path::new(text(dir, "dir")?);
        let out = out_ref(out, "out")?;
        let m = mode(mode_);
        let trained = load_trained(&c.cfg, dir, ratio(num, den)?, seed, m)?;
        let embeddings = match m {
            Mode::MsedKg => {
                let ws = Workspace { cfg: c.cfg.clone(), dir: dir.to_path_buf() };
                let p = ws.embeddings_path();
                if !p.exists() {
                    return Err(Error::Missing(format!("embeddings {}", p.display())).into());
                }
                Some(EmbeddingTable::load(&p)?)
            }
            Mode::Msed => None,
        };
        *out = Box::into_raw(Box::new(SemcomPipeline { trained, embeddings, mode: m }));
        Ok(())
    })
}

/// # Safety
/// `pipeline` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semcom_pipeline_free(pipeline: *mut SemcomPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Side length in pixels of the square images the pipeline expects, 0 for null.
///
/// # Safety
/// `pipeline` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn semcom_pipeline_image_size(pipeline: *const SemcomPipeline) -> usize {
    pipeline.as_ref().map_or(0, |p| p.trained.model.image_size())
}

/// Number of foreground classes, 0 for null.
///
/// # Safety
/// `pipeline` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn semcom_pipeline_classes(pipeline: *const SemcomPipeline) -> usize {
    pipeline.as_ref().map_or(0, |p| p.trained.model.classes())
}

/// Send one planar RGB image (`3·S·S` bytes, channel-major) through the pipeline and
/// the channel, and write its detections into `out`. `count` receives the number of
/// detections; when it exceeds `capacity` nothing is written and `BufferTooSmall` is
/// returned.
///
/// # Safety
/// `pipeline` and `channel` must come from this library, `rgb` must be valid for
/// `3·S·S` bytes, `out` must be null or valid for `capacity` entries and `count` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_pipeline_detect(
    pipeline: *const SemcomPipeline,
    rgb: *const u8,
    channel: *const SemcomChannel,
    seed: u64,
    out: *mut SemcomDetection,
    capacity: usize,
    count: *mut usize,
) -> SemcomStatus {
    guard(|| {
        let p = deref(pipeline, "pipeline")?;
        let ch = deref(channel, "channel")?;
        let count = out_ref(count, "count")?;
        let s = p.trained.model.image_size();
        let px = slice(rgb, 3 * s * s, "rgb")?;
        let image = Tensor::new(&[1, 3, s, s], px.iter().map(|&v| v as f64 / 255.0).collect())?;
        let (initial, refined) =
            detect_batch(&p.trained.model, &p.trained.store, &image, &[0], &ch.config, &[seed], p.embeddings.as_ref())?;
        let dets = match p.mode {
            Mode::Msed => initial,
            Mode::MsedKg => refined.unwrap_or_default(),
        };
        *count = dets.len();
        if dets.len() > capacity {
            return Err(Failure::Status(
                SemcomStatus::BufferTooSmall,
                format!("{} detections, capacity {capacity}", dets.len()),
            ));
        }
        if dets.is_empty() {
            return Ok(());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        for (i, d) in dets.iter().enumerate() {
            *out.add(i) = SemcomDetection {
                class_index: d.class,
                score: d.score,
                x1: d.bbox.x1,
                y1: d.bbox.y1,
                x2: d.bbox.x2,
                y2: d.bbox.y2,
            };
        }
        Ok(())
    })
}
