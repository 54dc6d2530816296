//! C ABI over the denoiser.
//!
//! Clouds and sequences are opaque handles created and released through this
//! interface. Every fallible call returns a [`DfStatus`]; on failure the
//! message is available from [`df_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use driftfield::correspondence::StepSchedule;
use driftfield::denoiser::{build_fields, denoise_sequence, CorrespondenceBackend, DenoiseConfig, FieldKind};
use driftfield::fusion::FusionMode;
use driftfield::geometry::{FrameSequence, Point3, PointCloud};
use driftfield::metrics::{chamfer, hausdorff};
use driftfield::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Runtime = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfFusion {
    Gradient = 0,
    Mean = 1,
    None = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfCorrespondence {
    Gradient = 0,
    Icp = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfField {
    Kde = 0,
    /// Requires clean reference frames.
    Oracle = 1,
}

/// Flat denoising parameters. `patch_centers == 0` keeps three-fold coverage
/// and `threads == 0` uses the global pool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfDenoiseConfig {
    pub patch_size: usize,
    pub patch_centers: usize,
    pub ascent_iterations: usize,
    pub alpha0: f64,
    pub alpha_decay: f64,
    pub search_iterations: usize,
    pub beta0: f64,
    pub gamma0: f64,
    pub search_decay: f64,
    pub tolerance: f64,
    pub kde_bandwidth: f64,
    pub kde_truncation: f64,
    pub field: DfField,
    pub fusion: DfFusion,
    pub correspondence: DfCorrespondence,
    pub seed: u64,
    pub threads: usize,
}

/// Opaque point cloud.
pub struct DfCloud(PointCloud);

/// Opaque ordered list of frames.
pub struct DfSequence(Vec<PointCloud>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> DfStatus {
    match e {
        Error::Config { .. } => DfStatus::Config,
        Error::InvalidArgument(_)
        | Error::EmptyInput
        | Error::NonFinite(_)
        | Error::KExceedsCloudSize { .. }
        | Error::InvalidSampleCount { .. } => DfStatus::InvalidArgument,
        _ => DfStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (DfStatus, String)>) -> DfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DfStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DfStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (DfStatus, String) {
    (DfStatus::NullPointer, format!("{name} is null"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one, or 0 when
/// there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn df_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Creates a cloud from `n` packed `x, y, z` triples.
///
/// # Safety
/// `xyz` must be valid for `3 * n` doubles; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn df_cloud_new(xyz: *const f64, n: usize, out: *mut *mut DfCloud) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if xyz.is_null() && n > 0 {
            return Err(null("xyz"));
        }
        let coords = if n == 0 {
            &[][..]
        } else {
            slice::from_raw_parts(xyz, 3 * n)
        };
        let points = coords.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let cloud = PointCloud::new(points).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DfCloud(cloud)));
        Ok(())
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn df_cloud_len(cloud: *const DfCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the coordinates into `xyz`, which must hold `3 * df_cloud_len` doubles.
///
/// # Safety
/// `cloud` must be a live handle and `xyz` valid for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn df_cloud_copy_points(cloud: *const DfCloud, xyz: *mut f64, capacity: usize) -> DfStatus {
    guard(|| {
        let cloud = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let needed = 3 * cloud.0.len();
        if capacity < needed {
            return Err((
                DfStatus::InvalidArgument,
                format!("buffer holds {capacity} doubles, need {needed}"),
            ));
        }
        let out = slice::from_raw_parts_mut(xyz, needed);
        for (slot, p) in out.chunks_exact_mut(3).zip(&cloud.0.points) {
            slot.copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_cloud_free(cloud: *mut DfCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

#[no_mangle]
pub extern "C" fn df_sequence_new() -> *mut DfSequence {
    Box::into_raw(Box::new(DfSequence(Vec::new())))
}

/// Appends a copy of `cloud`.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn df_sequence_push(sequence: *mut DfSequence, cloud: *const DfCloud) -> DfStatus {
    guard(|| {
        let seq = sequence.as_mut().ok_or_else(|| null("sequence"))?;
        let cloud = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        seq.0.push(cloud.0.clone());
        Ok(())
    })
}

/// # Safety
/// `sequence` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn df_sequence_len(sequence: *const DfSequence) -> usize {
    sequence.as_ref().map_or(0, |s| s.0.len())
}

/// Returns a new cloud handle holding a copy of frame `index`.
///
/// # Safety
/// `sequence` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn df_sequence_get(
    sequence: *const DfSequence,
    index: usize,
    out: *mut *mut DfCloud,
) -> DfStatus {
    guard(|| {
        let seq = sequence.as_ref().ok_or_else(|| null("sequence"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let frame = seq.0.get(index).ok_or_else(|| {
            (
                DfStatus::InvalidArgument,
                format!("frame {index} out of range for {} frames", seq.0.len()),
            )
        })?;
        *out = Box::into_raw(Box::new(DfCloud(frame.clone())));
        Ok(())
    })
}

/// # Safety
/// `sequence` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_sequence_free(sequence: *mut DfSequence) {
    if !sequence.is_null() {
        drop(Box::from_raw(sequence));
    }
}

fn flatten(c: &DenoiseConfig) -> DfDenoiseConfig {
    DfDenoiseConfig {
        patch_size: c.patch_size,
        patch_centers: c.patch_centers.unwrap_or(0),
        ascent_iterations: c.ascent_iterations,
        alpha0: c.alpha.initial,
        alpha_decay: c.alpha.decay,
        search_iterations: c.search.max_iterations,
        beta0: c.search.translation.initial,
        gamma0: c.search.rotation.initial,
        search_decay: c.search.translation.decay,
        tolerance: c.search.tolerance,
        kde_bandwidth: c.kde_bandwidth,
        kde_truncation: c.kde_truncation,
        field: DfField::Kde,
        fusion: match c.fusion {
            FusionMode::Gradient => DfFusion::Gradient,
            FusionMode::Mean => DfFusion::Mean,
            FusionMode::None => DfFusion::None,
        },
        correspondence: match c.correspondence {
            CorrespondenceBackend::Gradient => DfCorrespondence::Gradient,
            CorrespondenceBackend::Icp => DfCorrespondence::Icp,
        },
        seed: c.seed,
        threads: c.threads.unwrap_or(0),
    }
}

fn expand(c: &DfDenoiseConfig) -> DenoiseConfig {
    let mut config = DenoiseConfig {
        patch_size: c.patch_size,
        patch_centers: (c.patch_centers > 0).then_some(c.patch_centers),
        ascent_iterations: c.ascent_iterations,
        alpha: StepSchedule::new(c.alpha0, c.alpha_decay),
        field: match c.field {
            DfField::Kde => FieldKind::Kde,
            DfField::Oracle => FieldKind::Oracle,
        },
        kde_bandwidth: c.kde_bandwidth,
        kde_truncation: c.kde_truncation,
        fusion: match c.fusion {
            DfFusion::Gradient => FusionMode::Gradient,
            DfFusion::Mean => FusionMode::Mean,
            DfFusion::None => FusionMode::None,
        },
        correspondence: match c.correspondence {
            DfCorrespondence::Gradient => CorrespondenceBackend::Gradient,
            DfCorrespondence::Icp => CorrespondenceBackend::Icp,
        },
        seed: c.seed,
        threads: (c.threads > 0).then_some(c.threads),
        ..DenoiseConfig::default()
    };
    config.search.max_iterations = c.search_iterations;
    config.search.translation = StepSchedule::new(c.beta0, c.search_decay);
    config.search.rotation = StepSchedule::new(c.gamma0, c.search_decay);
    config.search.tolerance = c.tolerance;
    config
}

/// Published hyperparameters.
#[no_mangle]
pub extern "C" fn df_denoise_config_default() -> DfDenoiseConfig {
    flatten(&DenoiseConfig::default())
}

/// Hyperparameters tuned for clouds of a few thousand points.
#[no_mangle]
pub extern "C" fn df_denoise_config_desk() -> DfDenoiseConfig {
    flatten(&DenoiseConfig::desk())
}

fn to_sequence(frames: &[PointCloud]) -> Result<FrameSequence, (DfStatus, String)> {
    FrameSequence::new(frames.to_vec()).map_err(lib_err)
}

/// Denoises every frame of `noisy`. `clean` may be null unless the oracle
/// field is selected. On success `*out` receives a new sequence handle.
///
/// # Safety
/// Handles must be live (or null where allowed); `config` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_denoise(
    noisy: *const DfSequence,
    clean: *const DfSequence,
    config: *const DfDenoiseConfig,
    out: *mut *mut DfSequence,
) -> DfStatus {
    guard(|| {
        let noisy = noisy.as_ref().ok_or_else(|| null("noisy"))?;
        let config = expand(config.as_ref().ok_or_else(|| null("config"))?);
        if out.is_null() {
            return Err(null("out"));
        }
        let noisy = to_sequence(&noisy.0)?;
        let clean = match clean.as_ref() {
            Some(c) => Some(to_sequence(&c.0)?),
            None => None,
        };
        config.validate_for(&noisy).map_err(lib_err)?;
        let fields = build_fields(&noisy, clean.as_ref(), None, &config).map_err(lib_err)?;
        let outputs = denoise_sequence(&noisy, &fields, &config).map_err(lib_err)?;
        let frames = outputs.into_iter().map(|o| o.cloud).collect();
        *out = Box::into_raw(Box::new(DfSequence(frames)));
        Ok(())
    })
}

/// Symmetric Chamfer distance (no normalization).
///
/// # Safety
/// Handles must be live; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn df_chamfer(a: *const DfCloud, b: *const DfCloud, out: *mut f64) -> DfStatus {
    guard(|| {
        let (a, b) = (
            a.as_ref().ok_or_else(|| null("a"))?,
            b.as_ref().ok_or_else(|| null("b"))?,
        );
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = chamfer(&a.0, &b.0).map_err(lib_err)?;
        Ok(())
    })
}

/// Directed Hausdorff distance from `a` to `b` (no normalization).
///
/// # Safety
/// Handles must be live; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn df_hausdorff(a: *const DfCloud, b: *const DfCloud, out: *mut f64) -> DfStatus {
    guard(|| {
        let (a, b) = (
            a.as_ref().ok_or_else(|| null("a"))?,
            b.as_ref().ok_or_else(|| null("b"))?,
        );
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = hausdorff(&a.0, &b.0).map_err(lib_err)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        for c in [DenoiseConfig::default(), DenoiseConfig::desk()] {
            assert_eq!(expand(&flatten(&c)), c);
        }
    }

    #[test]
    fn error_message_copied_and_truncated() {
        let mut out = ptr::null_mut();
        let status = unsafe { df_cloud_new(ptr::null(), 2, &mut out) };
        assert_eq!(status, DfStatus::NullPointer);
        let full = unsafe { df_last_error(ptr::null_mut(), 0) };
        assert_eq!(full, "xyz is null".len() + 1);
        let mut buf = [0 as c_char; 4];
        unsafe { df_last_error(buf.as_mut_ptr(), buf.len()) };
        let text: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
        assert_eq!(text, b"xyz");
    }
}
