//! C ABI over the specsim core model.
//!
//! Every entry point returns a [`SpecsimStatus`]; results come back through
//! out-pointers. On failure the thread's last error message is set and can be
//! copied out with [`specsim_last_error`]. Programs and simulators are opaque
//! handles owned by the caller and released with their `_free` function.
//!
//! Config arguments are C strings holding either a preset name (`small`,
//! `medium`, `large`, `mega`) or a TOML config document.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use specsim::experiment::secret_variants;
use specsim::observe::RunStats;
use specsim::pipeline::CycleReport;
use specsim::timing::{cost_nda, cost_stt_issue, cost_stt_rename, LogicCost};
use specsim::{
    assemble, check_noninterference, gen_spectre_v1, gen_workload, ConfigError, CoreConfig,
    Program, SchemeKind, Simulator, WorkloadKind,
};

/// Register operands per instruction, used for the rename-stage cost.
const SOURCES_PER_UOP: usize = 2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    SimulationError = 5,
    /// The simulator has already committed `HALT`.
    Halted = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecsimScheme {
    Baseline = 0,
    SttRename = 1,
    SttIssue = 2,
    Nda = 3,
}

impl From<SpecsimScheme> for SchemeKind {
    fn from(s: SpecsimScheme) -> Self {
        match s {
            SpecsimScheme::Baseline => SchemeKind::Baseline,
            SpecsimScheme::SttRename => SchemeKind::SttRename,
            SpecsimScheme::SttIssue => SchemeKind::SttIssue,
            SpecsimScheme::Nda => SchemeKind::Nda,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpecsimStats {
    pub cycles: u64,
    pub committed_instrs: u64,
    pub ipc: f64,
    pub loads_forwarded: u64,
    pub forwarding_errors: u64,
    pub squashes: u64,
    pub taint_delays: u64,
    pub nop_issues: u64,
    pub partial_store_issues: u64,
    pub pending_broadcast_peak: u64,
    pub replays: u64,
    pub executed_slots: u64,
    pub idle_slots: u64,
}

impl From<RunStats> for SpecsimStats {
    fn from(s: RunStats) -> Self {
        SpecsimStats {
            cycles: s.cycles,
            committed_instrs: s.committed_instrs,
            ipc: s.ipc,
            loads_forwarded: s.loads_forwarded,
            forwarding_errors: s.forwarding_errors,
            squashes: s.squashes,
            taint_delays: s.taint_delays,
            nop_issues: s.nop_issues,
            partial_store_issues: s.partial_store_issues,
            pending_broadcast_peak: s.pending_broadcast_peak,
            replays: s.replays,
            executed_slots: s.executed_slots,
            idle_slots: s.idle_slots,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpecsimLogicCost {
    pub depth: u64,
    pub comparators: u64,
    pub muxes: u64,
    pub storage_bits: u64,
}

impl From<LogicCost> for SpecsimLogicCost {
    fn from(c: LogicCost) -> Self {
        SpecsimLogicCost {
            depth: c.depth,
            comparators: c.comparators,
            muxes: c.muxes,
            storage_bits: c.storage_bits,
        }
    }
}

/// An assembled or generated program.
pub struct SpecsimProgram {
    program: Program,
}

/// A simulator stepping one program under one scheme and config.
pub struct SpecsimSim {
    sim: Simulator,
    reports: Vec<CycleReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(SpecsimStatus, String);

impl Failure {
    fn new(status: SpecsimStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpecsimStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (SpecsimStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (SpecsimStatus::Panic, m)
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            SpecsimStatus::NullPointer,
            "null string argument",
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(SpecsimStatus::InvalidUtf8, e))
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(SpecsimStatus::NullPointer, "null output pointer"))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(SpecsimStatus::NullPointer, "null handle"))
}

fn config_from(text: &str) -> Result<CoreConfig, Failure> {
    let config_failure = |e: ConfigError| match e {
        ConfigError::Invalid(_) => Failure::new(SpecsimStatus::InvalidArgument, e),
        _ => Failure::new(SpecsimStatus::ParseError, e),
    };
    let cfg = CoreConfig::preset(text.trim())
        .or_else(|_| CoreConfig::from_toml_str(text))
        .map_err(config_failure)?;
    cfg.validate().map_err(config_failure)?;
    Ok(cfg)
}

fn emit_program(out: &mut *mut SpecsimProgram, program: Program) {
    *out = Box::into_raw(Box::new(SpecsimProgram { program }));
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length, not
/// counting the terminator. An empty message means the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn specsim_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Assembles program text.
///
/// # Safety
/// `text` must be a valid C string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_program_assemble(
    text: *const c_char,
    out: *mut *mut SpecsimProgram,
) -> SpecsimStatus {
    guard(|| {
        let out = out_ref(out)?;
        let p = assemble(c_str(text)?).map_err(|e| Failure::new(SpecsimStatus::ParseError, e))?;
        emit_program(out, p);
        Ok(())
    })
}

/// Generates a synthetic workload. `kind` is `compute_bound`,
/// `pointer_chase`, `store_load_mix` or `mixed`.
///
/// # Safety
/// `kind` must be a valid C string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_program_generate(
    kind: *const c_char,
    size: usize,
    seed: u64,
    out: *mut *mut SpecsimProgram,
) -> SpecsimStatus {
    guard(|| {
        let out = out_ref(out)?;
        let kind: WorkloadKind = c_str(kind)?
            .parse()
            .map_err(|e| Failure::new(SpecsimStatus::InvalidArgument, e))?;
        let p = gen_workload(kind, size, seed)
            .map_err(|e| Failure::new(SpecsimStatus::InvalidArgument, e))?;
        emit_program(out, p);
        Ok(())
    })
}

/// Builds the bounds-check-bypass gadget with its secret at `secret_addr`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_program_spectre_v1(
    secret_addr: u64,
    probe_stride: u64,
    out: *mut *mut SpecsimProgram,
) -> SpecsimStatus {
    guard(|| {
        let out = out_ref(out)?;
        let p = gen_spectre_v1(secret_addr, probe_stride)
            .map_err(|e| Failure::new(SpecsimStatus::InvalidArgument, e))?;
        emit_program(out, p);
        Ok(())
    })
}

/// Number of static instructions in the program.
///
/// # Safety
/// `program` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_program_len(
    program: *const SpecsimProgram,
    out: *mut usize,
) -> SpecsimStatus {
    guard(|| {
        *out_ref(out)? = handle(program)?.program.instrs.len();
        Ok(())
    })
}

/// # Safety
/// `program` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn specsim_program_free(program: *mut SpecsimProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Creates a simulator. The program is copied; the handle can be freed
/// afterwards.
///
/// # Safety
/// `program` must be a live handle, `config` a valid C string and `out`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_sim_new(
    program: *const SpecsimProgram,
    scheme: SpecsimScheme,
    config: *const c_char,
    out: *mut *mut SpecsimSim,
) -> SpecsimStatus {
    guard(|| {
        let out = out_ref(out)?;
        let program = handle(program)?.program.clone();
        let cfg = config_from(c_str(config)?)?;
        let sim = Simulator::new(cfg, scheme.into(), program)
            .map_err(|e| Failure::new(SpecsimStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(SpecsimSim {
            sim,
            reports: Vec::new(),
        }));
        Ok(())
    })
}

/// Advances one cycle. `halted` (optional) is set once `HALT` has committed.
///
/// # Safety
/// `sim` must be a live handle; `halted` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_sim_step(
    sim: *mut SpecsimSim,
    halted: *mut bool,
) -> SpecsimStatus {
    guard(|| {
        let s = sim
            .as_mut()
            .ok_or_else(|| Failure::new(SpecsimStatus::NullPointer, "null handle"))?;
        step(s)?;
        if let Some(h) = halted.as_mut() {
            *h = s.sim.halted();
        }
        Ok(())
    })
}

fn step(s: &mut SpecsimSim) -> Result<(), Failure> {
    if s.sim.halted() {
        return Err(Failure::new(
            SpecsimStatus::Halted,
            "simulator already halted",
        ));
    }
    let r = s
        .sim
        .step()
        .map_err(|e| Failure::new(SpecsimStatus::SimulationError, e))?;
    s.reports.push(r);
    Ok(())
}

/// Runs until `HALT` commits or `max_cycles` have elapsed in total, then
/// fills `stats` (optional) with the counters so far.
///
/// # Safety
/// `sim` must be a live handle; `stats` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_sim_run(
    sim: *mut SpecsimSim,
    max_cycles: u64,
    stats: *mut SpecsimStats,
) -> SpecsimStatus {
    guard(|| {
        let s = sim
            .as_mut()
            .ok_or_else(|| Failure::new(SpecsimStatus::NullPointer, "null handle"))?;
        while !s.sim.halted() {
            if s.sim.cycle() >= max_cycles {
                return Err(Failure::new(
                    SpecsimStatus::SimulationError,
                    format!("cycle limit {max_cycles} reached before HALT committed"),
                ));
            }
            step(s)?;
        }
        if let Some(out) = stats.as_mut() {
            *out = RunStats::from_reports(&s.reports).into();
        }
        Ok(())
    })
}

/// Counters over the cycles stepped so far.
///
/// # Safety
/// `sim` must be a live handle; `stats` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_sim_stats(
    sim: *const SpecsimSim,
    stats: *mut SpecsimStats,
) -> SpecsimStatus {
    guard(|| {
        let s = handle(sim)?;
        *out_ref(stats)? = RunStats::from_reports(&s.reports).into();
        Ok(())
    })
}

/// Architectural register value (`reg` in 0..32).
///
/// # Safety
/// `sim` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_sim_reg(
    sim: *const SpecsimSim,
    reg: u32,
    out: *mut u64,
) -> SpecsimStatus {
    guard(|| {
        let s = handle(sim)?;
        let out = out_ref(out)?;
        let state = s.sim.arch_state();
        *out = *state.regs.get(reg as usize).ok_or_else(|| {
            Failure::new(
                SpecsimStatus::InvalidArgument,
                format!("no register r{reg}"),
            )
        })?;
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn specsim_sim_free(sim: *mut SpecsimSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs the program once per secret variant (variant `k` stores `k` in
/// every secret cell) and compares the observation traces.
/// `distinguishable` is set when any variant's trace differs.
///
/// # Safety
/// `program` must be a live handle, `config` a valid C string and
/// `distinguishable` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_check_noninterference(
    program: *const SpecsimProgram,
    scheme: SpecsimScheme,
    config: *const c_char,
    variants: u32,
    distinguishable: *mut bool,
) -> SpecsimStatus {
    guard(|| {
        let out = out_ref(distinguishable)?;
        let p = &handle(program)?.program;
        let cfg = config_from(c_str(config)?)?;
        if p.secret_cells.is_empty() {
            return Err(Failure::new(
                SpecsimStatus::InvalidArgument,
                "program declares no secret cells",
            ));
        }
        let v = check_noninterference(
            p,
            &secret_variants(p, variants as usize),
            scheme.into(),
            &cfg,
        )
        .map_err(|e| Failure::new(SpecsimStatus::InvalidArgument, e))?;
        *out = v.is_distinguishable();
        Ok(())
    })
}

/// Logic cost of a scheme's extra hardware for a core of the given shape.
/// The baseline has none and reports all zeros.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn specsim_timing_cost(
    scheme: SpecsimScheme,
    width: usize,
    phys_regs: usize,
    mem_ports: usize,
    lq_entries: usize,
    out: *mut SpecsimLogicCost,
) -> SpecsimStatus {
    guard(|| {
        let out = out_ref(out)?;
        if width == 0 {
            return Err(Failure::new(
                SpecsimStatus::InvalidArgument,
                "width must be at least 1",
            ));
        }
        let cost = match scheme {
            SpecsimScheme::Baseline => LogicCost::default(),
            SpecsimScheme::SttRename => cost_stt_rename(width, SOURCES_PER_UOP),
            SpecsimScheme::SttIssue => cost_stt_issue(width, phys_regs),
            SpecsimScheme::Nda => cost_nda(width, mem_ports, lq_entries),
        };
        *out = cost.into();
        Ok(())
    })
}
