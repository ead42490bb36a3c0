//! C ABI for the softgpu simulator.
//!
//! Every fallible function returns an [`SgStatus`]. When a call fails, its
//! message stays available through [`sg_last_error`] on the same thread until
//! the next failure. Kernels, memories and runs are opaque handles owned by
//! the caller and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};

use softgpu::container;
use softgpu::gpu::{self, GpuConfig, LaunchError, LaunchParams, RunResult};
use softgpu::kasm::Kernel;
use softgpu::memsys::MemoryImage;
use softgpu::metrics::{EnergyWeights, Report};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Assembly = 3,
    Container = 4,
    Config = 5,
    UnsupportedInstruction = 6,
    InvalidLaunch = 7,
    Memory = 8,
    Runtime = 9,
    BufferTooSmall = 10,
    UnknownCounter = 11,
    Panic = 12,
}

/// Hardware configuration. Start from [`sg_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SgConfig {
    pub num_sms: u32,
    /// 8, 16 or 32.
    pub sps_per_sm: u32,
    /// 0 to 32.
    pub warp_stack_depth: u32,
    /// 2 or 3. Two operand units require `mad_enabled = false`.
    pub operand_units: u32,
    pub mad_enabled: bool,
    pub global_mem_penalty: u32,
    pub shared_mem_penalty: u32,
    /// Re-check mask conservation and reconvergence at every stack event.
    pub check_invariants: bool,
}

/// An assembled kernel.
pub struct SgKernel(Kernel);

/// A global memory image.
pub struct SgMemory(MemoryImage);

/// Counters and stack profile of one finished launch.
pub struct SgRun {
    result: RunResult,
    config: GpuConfig,
}

struct Failure(SgStatus, String);

impl Failure {
    fn new(status: SgStatus, msg: impl Display) -> Failure {
        Failure(status, msg.to_string())
    }
}

impl From<LaunchError> for Failure {
    fn from(e: LaunchError) -> Failure {
        let status = match &e {
            LaunchError::Config(_) => SgStatus::Config,
            LaunchError::UnsupportedInstruction(_) => SgStatus::UnsupportedInstruction,
            LaunchError::BadBlockDim(_) | LaunchError::EmptyGrid | LaunchError::Unlaunchable => SgStatus::InvalidLaunch,
            LaunchError::Mem(_) => SgStatus::Memory,
            LaunchError::Sim(_) => SgStatus::Runtime,
        };
        Failure::new(status, e)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn ffi(f: impl FnOnce() -> Result<(), Failure>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            SgStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure::new(SgStatus::NullArgument, "null pointer argument")
}

unsafe fn arg<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn arg_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    match len {
        0 => Ok(&[]),
        _ if p.is_null() => Err(null()),
        _ => Ok(std::slice::from_raw_parts(p, len)),
    }
}

fn gpu_config(c: &SgConfig, mem: &MemoryImage) -> Result<GpuConfig, Failure> {
    Ok(GpuConfig {
        num_sms: c.num_sms,
        sps_per_sm: c.sps_per_sm,
        warp_stack_depth: c.warp_stack_depth,
        operand_units: u8::try_from(c.operand_units)
            .map_err(|_| Failure::new(SgStatus::Config, format!("operand_units {}", c.operand_units)))?,
        mad_enabled: c.mad_enabled,
        global_mem_penalty: c.global_mem_penalty,
        shared_mem_penalty: c.shared_mem_penalty,
        global_mem_bytes: u32::try_from(mem.size_bytes()).unwrap_or(u32::MAX),
        check_invariants: c.check_invariants,
        trace_issue: false,
    })
}

/// Copies `text` plus a terminating NUL into `buf`. `needed` receives the
/// required size including the NUL either way.
unsafe fn write_text(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), Failure> {
    let len = text.len() + 1;
    *arg_mut(needed)? = len;
    if cap < len {
        return Err(Failure::new(SgStatus::BufferTooSmall, format!("{len} bytes needed")));
    }
    let out = std::slice::from_raw_parts_mut(buf.cast::<u8>(), len);
    out[..text.len()].copy_from_slice(text.as_bytes());
    out[text.len()] = 0;
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn sg_status_name(status: SgStatus) -> *const c_char {
    let name: &'static CStr = match status {
        SgStatus::Ok => c"Ok",
        SgStatus::NullArgument => c"NullArgument",
        SgStatus::InvalidUtf8 => c"InvalidUtf8",
        SgStatus::Assembly => c"Assembly",
        SgStatus::Container => c"Container",
        SgStatus::Config => c"Config",
        SgStatus::UnsupportedInstruction => c"UnsupportedInstruction",
        SgStatus::InvalidLaunch => c"InvalidLaunch",
        SgStatus::Memory => c"Memory",
        SgStatus::Runtime => c"Runtime",
        SgStatus::BufferTooSmall => c"BufferTooSmall",
        SgStatus::UnknownCounter => c"UnknownCounter",
        SgStatus::Panic => c"Panic",
    };
    name.as_ptr()
}

/// # Safety
/// `out` must be null or point to writable memory for one `SgConfig`.
#[no_mangle]
pub unsafe extern "C" fn sg_config_default(out: *mut SgConfig) -> SgStatus {
    ffi(|| {
        let d = GpuConfig::default();
        *arg_mut(out)? = SgConfig {
            num_sms: d.num_sms,
            sps_per_sm: d.sps_per_sm,
            warp_stack_depth: d.warp_stack_depth,
            operand_units: d.operand_units.into(),
            mad_enabled: d.mad_enabled,
            global_mem_penalty: d.global_mem_penalty,
            shared_mem_penalty: d.shared_mem_penalty,
            check_invariants: d.check_invariants,
        };
        Ok(())
    })
}

/// Blocks that fit on one SM at once.
///
/// # Safety
/// `out` must be null or point to a writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn sg_occupancy(
    block_dim: u32,
    regs_per_thread: u32,
    shared_bytes: u32,
    out: *mut u32,
) -> SgStatus {
    ffi(|| {
        let out = arg_mut(out)?;
        *out = gpu::occupancy(block_dim, regs_per_thread, shared_bytes)?;
        Ok(())
    })
}

/// Assembles NUL-terminated kernel source.
///
/// # Safety
/// `source` must be null or a NUL-terminated string; `out` must be null or
/// point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sg_kernel_assemble(source: *const c_char, out: *mut *mut SgKernel) -> SgStatus {
    ffi(|| {
        let out = arg_mut(out)?;
        if source.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(source)
            .to_str()
            .map_err(|e| Failure::new(SgStatus::InvalidUtf8, e))?;
        let kernel = Kernel::from_source(text).map_err(|e| Failure::new(SgStatus::Assembly, e))?;
        *out = Box::into_raw(Box::new(SgKernel(kernel)));
        Ok(())
    })
}

/// Loads a `.gk` container.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be null or point to
/// a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sg_kernel_load(bytes: *const u8, len: usize, out: *mut *mut SgKernel) -> SgStatus {
    ffi(|| {
        let out = arg_mut(out)?;
        let kernel = container::read(slice(bytes, len)?).map_err(|e| Failure::new(SgStatus::Container, e))?;
        *out = Box::into_raw(Box::new(SgKernel(kernel)));
        Ok(())
    })
}

/// Serializes a kernel as a `.gk` container. With a too small `buf` this
/// returns `BufferTooSmall` and only sets `needed`.
///
/// # Safety
/// `kernel` must be a live handle; `buf` must point to `cap` writable bytes;
/// `needed` must be null or point to a writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn sg_kernel_save(
    kernel: *const SgKernel,
    buf: *mut u8,
    cap: usize,
    needed: *mut usize,
) -> SgStatus {
    ffi(|| {
        let k = &arg(kernel)?.0;
        let bytes = container::write(&k.image, &k.meta);
        *arg_mut(needed)? = bytes.len();
        if cap < bytes.len() {
            return Err(Failure::new(
                SgStatus::BufferTooSmall,
                format!("{} bytes needed", bytes.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, bytes.len()).copy_from_slice(&bytes);
        Ok(())
    })
}

/// # Safety
/// `kernel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_kernel_free(kernel: *mut SgKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Zero-filled memory of `size_bytes`, rounded up to a word.
///
/// # Safety
/// `out` must be null or point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sg_memory_new(size_bytes: u32, out: *mut *mut SgMemory) -> SgStatus {
    ffi(|| {
        *arg_mut(out)? = Box::into_raw(Box::new(SgMemory(MemoryImage::new(size_bytes))));
        Ok(())
    })
}

/// Writes `count` words at byte address `addr` (word aligned).
///
/// # Safety
/// `mem` must be a live handle and `words` must point to `count` words.
#[no_mangle]
pub unsafe extern "C" fn sg_memory_write(mem: *mut SgMemory, addr: u32, words: *const u32, count: usize) -> SgStatus {
    ffi(|| {
        let mem = &mut arg_mut(mem)?.0;
        mem.write_words(addr, slice(words, count)?)
            .map_err(|e| Failure::new(SgStatus::Memory, e))
    })
}

/// Reads `count` words from byte address `addr` (word aligned).
///
/// # Safety
/// `mem` must be a live handle and `out` must point to `count` writable words.
#[no_mangle]
pub unsafe extern "C" fn sg_memory_read(mem: *const SgMemory, addr: u32, out: *mut u32, count: usize) -> SgStatus {
    ffi(|| {
        let mem = &arg(mem)?.0;
        let words = mem
            .read_words(addr, count)
            .map_err(|e| Failure::new(SgStatus::Memory, e))?;
        if count > 0 {
            if out.is_null() {
                return Err(null());
            }
            std::slice::from_raw_parts_mut(out, count).copy_from_slice(words);
        }
        Ok(())
    })
}

/// # Safety
/// `mem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_memory_free(mem: *mut SgMemory) {
    if !mem.is_null() {
        drop(Box::from_raw(mem));
    }
}

/// Runs one launch over `mem`. Kernel parameters are `param_count` words
/// placed at address 0. On success `mem` holds the final memory and `out`
/// a new run handle; on failure `mem` is left unchanged.
///
/// # Safety
/// `kernel`, `config` and `mem` must be live; `params` must point to
/// `param_count` words; `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sg_launch(
    kernel: *const SgKernel,
    config: *const SgConfig,
    grid_dim: u32,
    block_dim: u32,
    params: *const u32,
    param_count: usize,
    mem: *mut SgMemory,
    out: *mut *mut SgRun,
) -> SgStatus {
    ffi(|| {
        let kernel = &arg(kernel)?.0;
        let mem = &mut arg_mut(mem)?.0;
        let out = arg_mut(out)?;
        let config = gpu_config(arg(config)?, mem)?;
        let lp = LaunchParams::new(grid_dim, block_dim, slice(params, param_count)?);
        let mut result = gpu::launch(kernel, &lp, &config, mem.clone())?;
        *mem = std::mem::replace(&mut result.memory, MemoryImage::new(0));
        *out = Box::into_raw(Box::new(SgRun { result, config }));
        Ok(())
    })
}

/// Reads a counter by its report name, e.g. `cycles` or `global_loads`.
///
/// # Safety
/// `run` must be live, `name` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sg_run_counter(run: *const SgRun, name: *const c_char, out: *mut u64) -> SgStatus {
    ffi(|| {
        let run = arg(run)?;
        let out = arg_mut(out)?;
        if name.is_null() {
            return Err(null());
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|e| Failure::new(SgStatus::InvalidUtf8, e))?;
        let (_, v) = run
            .result
            .counters
            .fields()
            .into_iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Failure::new(SgStatus::UnknownCounter, name))?;
        *out = v;
        Ok(())
    })
}

/// # Safety
/// `run` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sg_run_cycles(run: *const SgRun, out: *mut u64) -> SgStatus {
    ffi(|| {
        *arg_mut(out)? = arg(run)?.result.cycles();
        Ok(())
    })
}

/// Deepest warp stack reached by any warp.
///
/// # Safety
/// `run` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sg_run_max_stack_depth(run: *const SgRun, out: *mut u32) -> SgStatus {
    ffi(|| {
        let run = arg(run)?;
        *arg_mut(out)? = run.result.warp_depths.iter().map(|w| w.depth).max().unwrap_or(0);
        Ok(())
    })
}

/// Writes the text report with unit energy weights. With a too small `buf`
/// this returns `BufferTooSmall` and only sets `needed`.
///
/// # Safety
/// `run` must be live; `buf` must point to `cap` writable bytes; `needed`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_run_report(
    run: *const SgRun,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SgStatus {
    ffi(|| {
        let run = arg(run)?;
        let report = Report::new(
            "ok",
            run.config.echo(),
            run.result.counters,
            &EnergyWeights::default(),
            &run.result.warp_depths,
        );
        write_text(&report.to_text(), buf, cap, needed)
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_run_free(run: *mut SgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
