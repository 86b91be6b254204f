//! C interface to the sacnet point cloud networks.
//!
//! Models are opaque handles created by `sacnet_model_new` or
//! `sacnet_model_load` and released with `sacnet_model_free`. Every fallible
//! call returns a [`SacnetStatus`]; on failure the message is kept per
//! thread and can be copied out with `sacnet_last_error`. Point buffers are
//! row-major `x, y, z` doubles. Output buffers are caller-allocated and their
//! capacities are checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sacnet::error::Error;
use sacnet::geometry::{farthest_point_sampling, knn, Point, PointCloud};
use sacnet::losses::chamfer_points;
use sacnet::models::SHAPENET_PART_COUNTS;
use sacnet::rng::SeededRng;
use sacnet::train::{Checkpoint, Model, RunConfig, Task};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SacnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Dimension = 4,
    TooFewPoints = 5,
    Data = 6,
    Config = 7,
    Format = 8,
    Integrity = 9,
    Io = 10,
    WrongTask = 11,
    Numeric = 12,
    Internal = 13,
}

/// Network kind held by a model handle.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SacnetTask {
    Classification = 0,
    Segmentation = 1,
    Autoencoder = 2,
}

/// Opaque model handle.
pub struct SacnetModel {
    config: RunConfig,
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SacnetStatus {
    match e {
        Error::Dimension { .. } => SacnetStatus::Dimension,
        Error::TooFewPoints { .. } => SacnetStatus::TooFewPoints,
        Error::Precondition(_) | Error::Parameter(_) | Error::Contract(_) => SacnetStatus::InvalidArgument,
        Error::Numeric(_) => SacnetStatus::Numeric,
        Error::Data(_) | Error::Parse { .. } => SacnetStatus::Data,
        Error::Config(_) => SacnetStatus::Config,
        Error::Format(_) => SacnetStatus::Format,
        Error::Integrity(_) => SacnetStatus::Integrity,
        Error::Io(_) => SacnetStatus::Io,
    }
}

/// Failure raised inside the wrappers before reaching the library.
struct Fail(SacnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SacnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SacnetStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SacnetStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SacnetStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn points(ptr: *const f64, n: usize, what: &str) -> Result<Vec<Point>, Fail> {
    let flat = slice(
        ptr,
        n.checked_mul(3)
            .ok_or_else(|| Fail(SacnetStatus::InvalidArgument, "size overflow".into()))?,
        what,
    )?;
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

unsafe fn model_ref<'a>(m: *const SacnetModel) -> Result<&'a SacnetModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(SacnetStatus::InvalidArgument, "path is not UTF-8".into()))
}

fn check_capacity(needed: usize, got: usize, what: &str) -> Result<(), Fail> {
    if got < needed {
        return Err(Fail(
            SacnetStatus::BufferTooSmall,
            format!("{what} holds {got} values but {needed} are needed"),
        ));
    }
    Ok(())
}

fn wrong_task(m: &SacnetModel, want: Task) -> Fail {
    Fail(
        SacnetStatus::WrongTask,
        format!(
            "operation needs a {} model, handle holds {}",
            want.name(),
            m.model.task().name()
        ),
    )
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity`, and returns the full message length in bytes.
///
/// # Safety
/// `buffer` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn sacnet_last_error(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buffer.cast::<u8>(), n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a freshly initialized model with the default schedule.
///
/// `classes` sizes a classifier's output; `latent` and `points` shape an
/// autoencoder (`points` must factor into three decoder expansions). A
/// segmenter uses the 16-category part table.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_new(
    task: SacnetTask,
    classes: usize,
    latent: usize,
    points: usize,
    seed: u64,
    out: *mut *mut SacnetModel,
) -> SacnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let task = match task {
            SacnetTask::Classification => Task::Classification,
            SacnetTask::Segmentation => Task::Segmentation,
            SacnetTask::Autoencoder => Task::Autoencoder,
        };
        let mut config = RunConfig::defaults(task);
        config.seed = seed;
        if task == Task::Autoencoder {
            config.latent = latent;
            config.points = points;
        }
        if task == Task::Segmentation {
            config.part_counts = SHAPENET_PART_COUNTS.to_vec();
        }
        config.validate()?;
        let model = Model::build(&config, classes)?;
        *out = Box::into_raw(Box::new(SacnetModel { config, model }));
        Ok(())
    })
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_load(file: *const c_char, out: *mut *mut SacnetModel) -> SacnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Checkpoint::load(path(file)?)?;
        let (config, model) = Model::from_checkpoint(&ckpt)?;
        *out = Box::into_raw(Box::new(SacnetModel { config, model }));
        Ok(())
    })
}

/// Writes the model's parameters and configuration as a checkpoint
/// without optimizer state.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_save(model: *const SacnetModel, file: *const c_char) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let store = m.model.store();
        let ckpt = Checkpoint {
            config: m.config.echo(),
            params: store
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.tensor.clone()))
                .collect(),
            buffers: store
                .buffers()
                .iter()
                .map(|p| (p.name.clone(), p.tensor.clone()))
                .collect(),
            adam: None,
            rng: SeededRng::new(m.config.seed).state(),
            epoch: 0,
            steps: 0,
            best: f64::NEG_INFINITY,
            history: Vec::new(),
        };
        ckpt.save(path(file)?)?;
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_free(model: *mut SacnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` valid for one value.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_task(model: *const SacnetModel, out: *mut SacnetTask) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = match m.model.task() {
            Task::Classification => SacnetTask::Classification,
            Task::Segmentation => SacnetTask::Segmentation,
            Task::Autoencoder => SacnetTask::Autoencoder,
        };
        Ok(())
    })
}

/// Trainable scalar count.
///
/// # Safety
/// `model` must be a live handle and `out` valid for one value.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_param_count(model: *const SacnetModel, out: *mut usize) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.store().scalar_count();
        Ok(())
    })
}

/// Floating-point operations per sample of `points` inputs.
///
/// # Safety
/// `model` must be a live handle and `out` valid for one value.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_flops(model: *const SacnetModel, points: usize, out: *mut u64) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let f = match &m.model {
            Model::Classifier(c) => c.flops(points)?,
            Model::Segmenter(s) => s.flops(points)?,
            Model::Autoencoder(a) => a.flops(points)?,
        };
        *out.as_mut().ok_or_else(|| null("out"))? = f;
        Ok(())
    })
}

/// Output width: classes, maximum parts, or latent size.
///
/// # Safety
/// `model` must be a live handle and `out` valid for one value.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_output_width(model: *const SacnetModel, out: *mut usize) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = match &m.model {
            Model::Classifier(c) => c.spec.classes,
            Model::Segmenter(s) => s.spec.max_parts(),
            Model::Autoencoder(a) => a.spec.latent,
        };
        Ok(())
    })
}

/// Points in an autoencoder's finest decoded level.
///
/// # Safety
/// `model` must be a live handle and `out` valid for one value.
#[no_mangle]
pub unsafe extern "C" fn sacnet_model_decoded_points(model: *const SacnetModel, out: *mut usize) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let Model::Autoencoder(a) = &m.model else {
            return Err(wrong_task(m, Task::Autoencoder));
        };
        *out.as_mut().ok_or_else(|| null("out"))? = a.spec.output_points();
        Ok(())
    })
}

/// Evaluation-mode class logits of one cloud of `n` points.
///
/// # Safety
/// `pts` must hold `3 n` doubles and `logits` `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sacnet_classify(
    model: *const SacnetModel,
    pts: *const f64,
    n: usize,
    logits: *mut f64,
    capacity: usize,
) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let Model::Classifier(c) = &m.model else {
            return Err(wrong_task(m, Task::Classification));
        };
        let cloud = PointCloud::new(points(pts, n, "points")?)?;
        check_capacity(c.spec.classes, capacity, "logits")?;
        let y = c.logits(&cloud)?;
        slice_mut(logits, capacity, "logits")?[..y.len()].copy_from_slice(&y);
        Ok(())
    })
}

/// Evaluation-mode part label per point, restricted to `category`.
///
/// # Safety
/// `pts` must hold `3 n` doubles and `labels` `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn sacnet_segment(
    model: *const SacnetModel,
    pts: *const f64,
    n: usize,
    category: usize,
    labels: *mut usize,
    capacity: usize,
) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let Model::Segmenter(s) = &m.model else {
            return Err(wrong_task(m, Task::Segmentation));
        };
        if category >= s.spec.categories() {
            return Err(Fail(
                SacnetStatus::InvalidArgument,
                format!("category {category} out of range"),
            ));
        }
        let cloud = PointCloud::new(points(pts, n, "points")?)?;
        check_capacity(n, capacity, "labels")?;
        let y = s.predict(&cloud, category)?;
        slice_mut(labels, capacity, "labels")?[..n].copy_from_slice(&y);
        Ok(())
    })
}

/// Latent code of one cloud.
///
/// # Safety
/// `pts` must hold `3 n` doubles and `z` `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sacnet_encode(
    model: *const SacnetModel,
    pts: *const f64,
    n: usize,
    z: *mut f64,
    capacity: usize,
) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let Model::Autoencoder(a) = &m.model else {
            return Err(wrong_task(m, Task::Autoencoder));
        };
        let cloud = PointCloud::new(points(pts, n, "points")?)?;
        check_capacity(a.spec.latent, capacity, "latent buffer")?;
        let code = a.latent_code(&cloud)?;
        slice_mut(z, capacity, "latent buffer")?[..code.len()].copy_from_slice(&code);
        Ok(())
    })
}

/// Decodes a latent code to the finest point level; decoder noise comes
/// from `seed`. `capacity` counts points, not doubles.
///
/// # Safety
/// `z` must hold `latent` doubles and `out` `3 capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sacnet_decode(
    model: *const SacnetModel,
    z: *const f64,
    latent: usize,
    seed: u64,
    out: *mut f64,
    capacity: usize,
) -> SacnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let Model::Autoencoder(a) = &m.model else {
            return Err(wrong_task(m, Task::Autoencoder));
        };
        if latent != a.spec.latent {
            return Err(Fail(
                SacnetStatus::Dimension,
                format!("latent code of width {latent} for a model of width {}", a.spec.latent),
            ));
        }
        let code = slice(z, latent, "latent code")?;
        check_capacity(a.spec.output_points(), capacity, "point buffer")?;
        let levels = a.decode_points(code, SeededRng::new(seed))?;
        let finest = levels.last().expect("nonempty pyramid");
        let dst = slice_mut(out, capacity * 3, "point buffer")?;
        for (d, p) in dst.chunks_exact_mut(3).zip(finest) {
            d.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Chamfer distance between two point sets.
///
/// # Safety
/// `a` and `b` must hold `3 na` and `3 nb` doubles; `out` one double.
#[no_mangle]
pub unsafe extern "C" fn sacnet_chamfer(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> SacnetStatus {
    guard(|| {
        let d = chamfer_points(&points(a, na, "a")?, &points(b, nb, "b")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = d;
        Ok(())
    })
}

/// Indices of `m` farthest-point samples.
///
/// # Safety
/// `pts` must hold `3 n` doubles and `out` `m` values.
#[no_mangle]
pub unsafe extern "C" fn sacnet_fps(pts: *const f64, n: usize, m: usize, out: *mut usize) -> SacnetStatus {
    guard(|| {
        let idx = farthest_point_sampling(&points(pts, n, "points")?, m)?;
        slice_mut(out, m, "out")?.copy_from_slice(&idx);
        Ok(())
    })
}

/// The `k` nearest references of every query, nearest first, as row-major
/// `nq × k` indices and Euclidean distances.
///
/// # Safety
/// `queries` and `refs` must hold `3 nq` and `3 nr` doubles; `indices` and
/// `distances` `nq k` values each.
#[no_mangle]
pub unsafe extern "C" fn sacnet_knn(
    queries: *const f64,
    nq: usize,
    refs: *const f64,
    nr: usize,
    k: usize,
    indices: *mut usize,
    distances: *mut f64,
) -> SacnetStatus {
    guard(|| {
        let (idx, dist) = knn(&points(queries, nq, "queries")?, &points(refs, nr, "refs")?, k)?;
        slice_mut(indices, nq * k, "indices")?.copy_from_slice(&idx);
        slice_mut(distances, nq * k, "distances")?.copy_from_slice(&dist);
        Ok(())
    })
}
