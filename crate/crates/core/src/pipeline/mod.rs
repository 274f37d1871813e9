//! The cycle-stepped out-of-order core.
//!
//! Each cycle evaluates its stages in a fixed order:
//!
//! 1. commit
//! 2. execute: completion events due this cycle (branch resolution, store
//!    address/data, load data), including misprediction recovery
//! 3. visibility sync: loads that crossed the visibility point are handed to
//!    the scheme (untaint broadcasts, deferred NDA broadcasts)
//! 4. issue: wakeup and select
//! 5. rename
//! 6. fetch
//!
//! A value produced by an op issued at cycle `t` with latency `l` can be
//! consumed by an op issuing at `t + l`. Anything completed in execute is
//! seen by issue in the same cycle and by commit in the next one. A fetched
//! instruction renames no earlier than the next cycle, and a renamed one
//! issues no earlier than the cycle after rename.

mod rename;
mod trace;

use std::collections::VecDeque;

use crate::config::{CoreConfig, Predictor};
use crate::isa::{ArchInstr, ArchState, Opcode, Program, NUM_ARCH_REGS};
use crate::observe::{Observation, ObservationEvent};
use crate::schemes::{
    IssueDecision, Recovery, RenameInput, Scheme, SchemeKind, SelectInput, Writeback, Yrot,
};
use crate::shadows::{Seq, ShadowId, ShadowKind, ShadowLedger, Visibility};

pub use rename::{Checkpoint, PhysReg, Rat, RenameState, RenamedOp};
pub use trace::{
    BroadcastRecord, CycleReport, IssueOutcome, IssueRecord, ShadowRecord, Trace, UopRecord,
};

const ALU_LATENCY: u64 = 1;
const MUL_LATENCY: u64 = 3;
const FORWARD_LATENCY: u64 = 1;
/// Cycles without a commit before a run is declared stuck.
const WATCHDOG_CYCLES: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Program(#[from] crate::isa::ProgramError),
    #[error("simulator already halted")]
    Halted,
    #[error("no commit for {WATCHDOG_CYCLES} cycles at cycle {cycle}")]
    Deadlock { cycle: u64 },
    #[error("cycle limit {0} reached before HALT committed")]
    CycleLimit(u64),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UopState {
    Waiting,
    Issued,
    Completed,
}

#[derive(Clone, Debug)]
struct Uop {
    seq: Seq,
    pc: usize,
    instr: ArchInstr,
    ops: RenamedOp,
    state: UopState,
    predicted_next: usize,
    shadow: Option<ShadowId>,
    /// Effective address once generated (loads at execute, stores one cycle
    /// after the address part issues).
    addr: Option<u64>,
    /// Store data once its data part has executed.
    data: Option<u64>,
    load_executed: bool,
    forwarded_from: Option<Seq>,
    broadcast_done: bool,
    nonspec_notified: bool,
    taint_undo: Option<(crate::isa::ArchReg, Yrot)>,
}

#[derive(Clone, Debug)]
struct IqEntry {
    seq: Seq,
    mask: Option<Seq>,
    eligible_from: u64,
    /// Set after a replay: wait for true readiness.
    no_spec_wakeup: bool,
    wait_store: Option<Seq>,
    addr_issued: bool,
    data_issued: bool,
}

#[derive(Clone, Copy, Debug)]
struct Preg {
    value: u64,
    ready_at: Option<u64>,
    spec_ready_at: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    BranchResolve,
    StoreAddr,
    StoreData,
    AluDone,
    LoadDone,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    at: u64,
    seq: Seq,
    kind: EventKind,
    value: u64,
}

#[derive(Clone, Debug)]
struct Fetched {
    seq: Seq,
    pc: usize,
    instr: ArchInstr,
    predicted_next: usize,
    cycle: u64,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub config: CoreConfig,
    pub scheme: SchemeKind,
    pub reports: Vec<CycleReport>,
    pub observations: Vec<ObservationEvent>,
    pub trace: Trace,
    pub final_state: ArchState,
    /// Cycles up to and including the one that committed `HALT`.
    pub cycles: u64,
    pub committed: u64,
}

pub struct Simulator {
    config: CoreConfig,
    program: Program,
    scheme: Box<dyn Scheme>,
    spec_wakeup: bool,
    cycle: u64,

    fetch_pc: usize,
    fetch_stopped: bool,
    next_seq: Seq,
    fetch_buf: VecDeque<Fetched>,
    predictor_cursor: usize,

    rename: RenameState,
    rob: VecDeque<Uop>,
    iq: Vec<IqEntry>,
    regs: Vec<Preg>,
    events: Vec<Event>,
    shadows: ShadowLedger,
    mem: ArchState,
    committed_rat: Rat,

    halted: bool,
    halt_cycle: Option<u64>,
    committed: u64,
    last_commit_cycle: u64,
    observations: Vec<ObservationEvent>,
    trace: Trace,
    report: CycleReport,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator")
            .field("config", &self.config.name)
            .field("scheme", &self.scheme.kind())
            .field("cycle", &self.cycle)
            .field("halted", &self.halted)
            .finish_non_exhaustive()
    }
}

impl Simulator {
    pub fn new(config: CoreConfig, scheme: SchemeKind, program: Program) -> Result<Self, SimError> {
        config.validate()?;
        program.validate()?;
        let scheme = scheme.build(&config);
        let spec_wakeup = config.speculative_wakeup && scheme.allows_speculative_wakeup();
        let regs = (0..config.phys_regs)
            .map(|i| Preg {
                value: 0,
                ready_at: (i < NUM_ARCH_REGS).then_some(0),
                spec_ready_at: None,
            })
            .collect();
        let rename = RenameState::new(config.phys_regs, config.checkpoints);
        let committed_rat = *rename.rat();
        Ok(Self {
            shadows: ShadowLedger::new(config.rob_entries * 2),
            mem: ArchState::from_program(&program),
            spec_wakeup,
            scheme,
            cycle: 0,
            fetch_pc: 0,
            fetch_stopped: false,
            next_seq: 1,
            fetch_buf: VecDeque::new(),
            predictor_cursor: 0,
            rename,
            rob: VecDeque::new(),
            iq: Vec::new(),
            regs,
            events: Vec::new(),
            committed_rat,
            halted: false,
            halt_cycle: None,
            committed: 0,
            last_commit_cycle: 0,
            observations: Vec::new(),
            trace: Trace::default(),
            report: CycleReport::new(0),
            config,
            program,
        })
    }

    pub fn config(&self) -> &CoreConfig {
        &self.config
    }

    pub fn scheme_kind(&self) -> SchemeKind {
        self.scheme.kind()
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn committed(&self) -> u64 {
        self.committed
    }

    pub fn observations(&self) -> &[ObservationEvent] {
        &self.observations
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn shadows(&self) -> &ShadowLedger {
        &self.shadows
    }

    pub fn rename_state(&self) -> &RenameState {
        &self.rename
    }

    pub fn visibility(&self) -> Visibility {
        self.shadows.visibility()
    }

    /// Committed architectural state so far.
    pub fn arch_state(&self) -> ArchState {
        let mut s = self.mem.clone();
        for (i, p) in self.committed_rat.iter().enumerate() {
            s.regs[i] = self.regs[p.index()].value;
        }
        s.regs[0] = 0;
        s
    }

    /// Advances one cycle.
    pub fn step(&mut self) -> Result<CycleReport, SimError> {
        if self.halted {
            return Err(SimError::Halted);
        }
        let t = self.cycle;
        self.report = CycleReport::new(t);
        self.commit(t);
        if !self.halted {
            self.execute(t)?;
            self.sync_visibility(t);
            self.issue(t);
            self.rename(t)?;
            self.fetch(t);
        }
        let mut r = std::mem::replace(&mut self.report, CycleReport::new(t + 1));
        r.idle = self.config.width as u32 - r.executed - r.nops - r.replays;
        r.pending_broadcasts = self.scheme.pending_broadcasts() as u32;
        r.visibility = self.shadows.visibility();
        r.unresolved_shadows = self.shadows.unresolved_count() as u32;
        r.rob_occupancy = self.rob.len() as u32;
        r.halted = self.halted;
        self.cycle += 1;
        if !self.halted && t.saturating_sub(self.last_commit_cycle) > WATCHDOG_CYCLES {
            return Err(SimError::Deadlock { cycle: t });
        }
        Ok(r)
    }

    /// Runs until `HALT` commits.
    pub fn run(mut self, max_cycles: u64) -> Result<SimRun, SimError> {
        let mut reports = Vec::new();
        while !self.halted {
            if self.cycle >= max_cycles {
                return Err(SimError::CycleLimit(max_cycles));
            }
            reports.push(self.step()?);
        }
        Ok(SimRun {
            final_state: self.arch_state(),
            cycles: self.halt_cycle.map_or(self.cycle, |c| c + 1),
            committed: self.committed,
            scheme: self.scheme.kind(),
            config: self.config,
            reports,
            observations: self.observations,
            trace: self.trace,
        })
    }

    fn rob_pos(&self, seq: Seq) -> Option<usize> {
        self.rob.binary_search_by_key(&seq, |u| u.seq).ok()
    }

    fn ready(&self, p: Option<PhysReg>, t: u64, allow_spec: bool) -> bool {
        match p {
            None => true,
            Some(p) => {
                let r = &self.regs[p.index()];
                r.ready_at.is_some_and(|c| c <= t)
                    || (allow_spec && r.spec_ready_at.is_some_and(|c| c <= t))
            }
        }
    }

    fn truly_ready(&self, p: Option<PhysReg>, t: u64) -> bool {
        self.ready(p, t, false)
    }

    fn value(&self, p: Option<PhysReg>) -> u64 {
        p.map_or(0, |p| self.regs[p.index()].value)
    }

    // ---------------------------------------------------------------- commit

    fn commit(&mut self, t: u64) {
        for _ in 0..self.config.width {
            let Some(head) = self.rob.front() else { break };
            let done = head.state == UopState::Completed
                && (head.instr.opcode != Opcode::Load || head.broadcast_done);
            if !done {
                break;
            }
            let u = self.rob.pop_front().unwrap();
            if let Some(prev) = u.ops.prev_pdst {
                self.rename.free(prev);
            }
            if let (Some(d), Some(p)) = (u.instr.dest(), u.ops.pdst) {
                self.committed_rat[d.index()] = p;
            }
            self.committed += 1;
            self.last_commit_cycle = t;
            self.report.committed += 1;
            if let Some(rec) = self.trace.uop_mut(u.seq) {
                rec.commit_cycle = Some(t);
            }
            match u.instr.opcode {
                Opcode::Halt => {
                    self.halted = true;
                    self.halt_cycle = Some(t);
                    break;
                }
                Opcode::Store => {
                    let addr = u.addr.expect("committed store has an address");
                    self.mem
                        .write_mem(addr, u.data.expect("committed store has data"));
                    self.observe(t, Observation::CacheAccess { addr });
                    if let Some(load) = self.stale_load(&u) {
                        self.report.forwarding_errors += 1;
                        self.recover_walk(load, t);
                        break;
                    }
                }
                _ => {}
            }
        }
    }

    /// Oldest younger load that read `store`'s address without seeing it.
    fn stale_load(&self, store: &Uop) -> Option<Seq> {
        self.rob
            .iter()
            .find(|l| {
                l.instr.opcode == Opcode::Load
                    && l.load_executed
                    && l.addr == store.addr
                    && l.forwarded_from.is_none_or(|f| f < store.seq)
            })
            .map(|l| l.seq)
    }

    // --------------------------------------------------------------- execute

    fn execute(&mut self, t: u64) -> Result<(), SimError> {
        let mut due: Vec<Event> = Vec::new();
        self.events.retain(|e| {
            if e.at == t {
                due.push(*e);
                false
            } else {
                true
            }
        });
        due.sort_by_key(|e| (e.seq, e.kind));
        for ev in due {
            let Some(pos) = self.rob_pos(ev.seq) else {
                continue;
            };
            match ev.kind {
                EventKind::AluDone => self.rob[pos].state = UopState::Completed,
                EventKind::StoreAddr => {
                    self.rob[pos].addr = Some(ev.value);
                    if let Some(id) = self.rob[pos].shadow.take() {
                        self.resolve_shadow(id, t)?;
                    }
                    self.complete_store(pos);
                }
                EventKind::StoreData => {
                    self.rob[pos].data = Some(ev.value);
                    self.complete_store(pos);
                }
                EventKind::LoadDone => {
                    let u = &mut self.rob[pos];
                    u.state = UopState::Completed;
                    if !u.broadcast_done {
                        let (seq, pdst) = (u.seq, u.ops.pdst);
                        let vis = self.shadows.visibility();
                        if self.scheme.on_load_complete(seq, pdst, vis) == Writeback::BroadcastNow {
                            self.broadcast(seq, pdst, t, false);
                        }
                    }
                }
                EventKind::BranchResolve => {
                    let taken = ev.value != 0;
                    let u = &mut self.rob[pos];
                    u.state = UopState::Completed;
                    let actual = if taken {
                        (u.pc as i64 + u.instr.imm) as usize
                    } else {
                        u.pc + 1
                    };
                    let (seq, predicted) = (u.seq, u.predicted_next);
                    if let Some(id) = u.shadow.take() {
                        self.resolve_shadow(id, t)?;
                    }
                    self.observe(t, Observation::BranchResolve { seq, taken });
                    if actual == predicted {
                        self.rename.release_checkpoint(seq);
                    } else {
                        self.recover_branch(seq, actual, t);
                    }
                }
            }
        }
        Ok(())
    }

    fn complete_store(&mut self, pos: usize) {
        let u = &mut self.rob[pos];
        if u.addr.is_some() && u.data.is_some() {
            u.state = UopState::Completed;
        }
    }

    fn resolve_shadow(&mut self, id: ShadowId, t: u64) -> Result<(), SimError> {
        self.shadows
            .resolve_shadow(id)
            .map_err(|e| SimError::Internal(e.to_string()))?;
        self.trace.shadows[id.0 as usize].resolved = Some(t);
        Ok(())
    }

    /// Marks a load's destination ready from the next cycle on.
    fn broadcast(&mut self, seq: Seq, pdst: Option<PhysReg>, t: u64, deferred: bool) {
        if let Some(p) = pdst {
            self.regs[p.index()].ready_at = Some(t + 1);
        }
        if let Some(pos) = self.rob_pos(seq) {
            self.rob[pos].broadcast_done = true;
        }
        self.trace.broadcasts.push(BroadcastRecord {
            seq,
            cycle: t,
            deferred,
        });
    }

    // -------------------------------------------------------------- recovery

    /// Removes everything younger than `after`. Returns the removed uops,
    /// youngest first.
    fn squash_after(&mut self, after: Seq, t: u64) -> Vec<Uop> {
        let mut removed = Vec::new();
        while self.rob.back().is_some_and(|u| u.seq > after) {
            removed.push(self.rob.pop_back().unwrap());
        }
        for u in &removed {
            if let Some(rec) = self.trace.uop_mut(u.seq) {
                rec.squash_cycle = Some(t);
            }
        }
        self.iq.retain(|e| e.seq <= after);
        self.events.retain(|e| e.seq <= after);
        self.fetch_buf.clear();
        for rec in self.trace.shadows.iter_mut().rev() {
            if rec.seq <= after {
                break;
            }
            if rec.resolved.is_none() && rec.squashed.is_none() {
                rec.squashed = Some(t);
            }
        }
        self.shadows.squash_after(after);
        self.rename.drop_checkpoints_after(after);
        self.scheme.on_squash(after);
        self.report.squashes += 1;
        removed
    }

    fn recover_branch(&mut self, branch: Seq, target: usize, t: u64) {
        let removed = self.squash_after(branch, t);
        let cp = self.rename.restore_checkpoint(branch);
        for u in removed.iter().rev() {
            if let Some(p) = u.ops.pdst {
                self.rename.free(p);
            }
        }
        self.scheme.on_recovery(
            Recovery::Checkpoint(cp.as_ref().and_then(|c| c.scheme.as_ref())),
            branch,
        );
        self.redirect(target);
    }

    /// Squashes `load` and everything younger, walking the ROB back.
    fn recover_walk(&mut self, load: Seq, t: u64) {
        let after = load - 1;
        let removed = self.squash_after(after, t);
        let mut undos = Vec::new();
        for u in &removed {
            if let (Some(d), Some(prev)) = (u.instr.dest(), u.ops.prev_pdst) {
                self.rename.undo(d, prev);
            }
            if let Some(undo) = u.taint_undo {
                undos.push(undo);
            }
        }
        for u in removed.iter().rev() {
            if let Some(p) = u.ops.pdst {
                self.rename.free(p);
            }
        }
        self.scheme.on_recovery(Recovery::Walk(&undos), after);
        let pc = removed.last().expect("load was in flight").pc;
        self.redirect(pc);
    }

    fn redirect(&mut self, pc: usize) {
        self.fetch_pc = pc;
        self.fetch_stopped = false;
    }

    // ------------------------------------------------------- visibility sync

    fn sync_visibility(&mut self, t: u64) {
        let vis = self.shadows.visibility();
        let mut newly = Vec::new();
        for u in self.rob.iter_mut() {
            if !vis.covers(u.seq) {
                break;
            }
            if u.instr.opcode == Opcode::Load && !u.nonspec_notified {
                u.nonspec_notified = true;
                newly.push(u.seq);
            }
        }
        for &s in &newly {
            self.trace.nonspec.push((t, s));
        }
        let roots = self.scheme.on_visibility_advance(&newly, vis);
        if !roots.is_empty() {
            self.report.untaint_broadcasts += roots.len() as u32;
            for &r in &roots {
                self.trace.untaints.push((t, r));
            }
            for e in self.iq.iter_mut() {
                if e.mask.is_some_and(|m| roots.binary_search(&m).is_ok()) {
                    e.mask = None;
                    e.eligible_from = e.eligible_from.max(t + 1);
                    if let Some(rec) = self.trace.uop_mut(e.seq) {
                        rec.unmask_cycle = Some(t);
                    }
                }
            }
        }
        let drained = self.scheme.drain_broadcasts(self.config.mem_ports, vis);
        self.report.deferred_broadcasts += drained.len() as u32;
        for (seq, pdst) in drained {
            self.broadcast(seq, pdst, t, true);
        }
    }

    // ----------------------------------------------------------------- issue

    fn issue(&mut self, t: u64) {
        let mut slots = self.config.width;
        let mut ports = self.config.mem_ports;
        let vis = self.shadows.visibility();
        self.report.masked = self.iq.iter().filter(|e| e.mask.is_some()).count() as u32;
        // A store address generated this cycle is not yet visible to the LSU,
        // so younger loads sit out the rest of the cycle.
        let mut store_addr_now = false;
        let mut i = 0;
        while i < self.iq.len() && slots > 0 {
            let e = self.iq[i].clone();
            if e.mask.is_some() || e.eligible_from > t {
                i += 1;
                continue;
            }
            if let Some(s) = e.wait_store {
                let blocked = self.rob_pos(s).is_some_and(|p| self.rob[p].data.is_none());
                if blocked {
                    i += 1;
                    continue;
                }
                self.iq[i].wait_store = None;
            }
            let pos = self.rob_pos(e.seq).expect("iq entry in rob");
            let u = &self.rob[pos];
            let opcode = u.instr.opcode;
            let allow_spec = self.spec_wakeup && !e.no_spec_wakeup;
            let [s1, s2] = u.ops.psrc;
            let (addr_part, data_part) = if opcode == Opcode::Store {
                (
                    !e.addr_issued && self.ready(s1, t, allow_spec),
                    !e.data_issued && self.ready(s2, t, allow_spec),
                )
            } else {
                (
                    self.ready(s1, t, allow_spec) && self.ready(s2, t, allow_spec),
                    false,
                )
            };
            if !addr_part && !data_part {
                i += 1;
                continue;
            }
            if opcode == Opcode::Load && store_addr_now {
                i += 1;
                continue;
            }
            if opcode.is_memory() {
                if ports == 0 {
                    i += 1;
                    continue;
                }
                ports -= 1;
            }
            slots -= 1;

            let sel = SelectInput {
                seq: e.seq,
                opcode,
                srcs: u.ops.psrc,
                pdst: u.ops.pdst,
                addr_part,
                data_part,
                visibility: vis,
            };
            if let IssueDecision::Kill { root } = self.scheme.on_issue_select(&sel) {
                self.iq[i].mask = Some(root);
                self.report.nops += 1;
                self.record_issue(
                    e.seq,
                    t,
                    addr_part,
                    data_part,
                    IssueOutcome::Killed { root },
                );
                i += 1;
                continue;
            }
            let used_ready = |p| self.truly_ready(p, t);
            let truly = if opcode == Opcode::Store {
                (!addr_part || used_ready(s1)) && (!data_part || used_ready(s2))
            } else {
                used_ready(s1) && used_ready(s2)
            };
            if !truly {
                self.iq[i].no_spec_wakeup = true;
                self.report.replays += 1;
                self.record_issue(e.seq, t, addr_part, data_part, IssueOutcome::Replayed);
                i += 1;
                continue;
            }
            store_addr_now |= opcode == Opcode::Store && addr_part;
            if self.execute_uop(i, pos, t, addr_part, data_part) {
                self.iq.remove(i);
            } else {
                i += 1;
            }
        }
    }

    fn record_issue(
        &mut self,
        seq: Seq,
        cycle: u64,
        addr_part: bool,
        data_part: bool,
        outcome: IssueOutcome,
    ) {
        self.trace.issues.push(IssueRecord {
            seq,
            cycle,
            addr_part,
            data_part,
            outcome,
        });
    }

    /// Executes a selected uop. Returns whether its issue-queue entry is done.
    fn execute_uop(
        &mut self,
        iq_idx: usize,
        pos: usize,
        t: u64,
        addr_part: bool,
        data_part: bool,
    ) -> bool {
        let u = self.rob[pos].clone();
        let [s1, s2] = u.ops.psrc;
        let (a, b) = (self.value(s1), self.value(s2));
        let seq = u.seq;
        match u.instr.opcode {
            Opcode::Add | Opcode::Addi | Opcode::Mul => {
                let (v, lat) = match u.instr.opcode {
                    Opcode::Add => (a.wrapping_add(b), ALU_LATENCY),
                    Opcode::Addi => (a.wrapping_add(u.instr.imm as u64), ALU_LATENCY),
                    _ => (a.wrapping_mul(b), MUL_LATENCY),
                };
                if let Some(p) = u.ops.pdst {
                    self.regs[p.index()].value = v;
                    self.regs[p.index()].ready_at = Some(t + lat);
                }
                self.rob[pos].state = UopState::Issued;
                self.events.push(Event {
                    at: t + lat,
                    seq,
                    kind: EventKind::AluDone,
                    value: v,
                });
                self.record_issue(seq, t, true, false, IssueOutcome::Executed);
                self.report.executed += 1;
                true
            }
            Opcode::Beq | Opcode::Bne => {
                let taken = (a == b) == (u.instr.opcode == Opcode::Beq);
                self.rob[pos].state = UopState::Issued;
                self.events.push(Event {
                    at: t + 1,
                    seq,
                    kind: EventKind::BranchResolve,
                    value: taken as u64,
                });
                self.record_issue(seq, t, true, false, IssueOutcome::Executed);
                self.report.executed += 1;
                true
            }
            Opcode::Load => {
                let addr = a.wrapping_add(u.instr.imm as u64);
                let older_store = self
                    .rob
                    .iter()
                    .take(pos)
                    .rev()
                    .find(|s| s.instr.opcode == Opcode::Store && s.addr == Some(addr));
                let (value, lat, from) = match older_store {
                    Some(s) => match s.data {
                        Some(d) => (d, FORWARD_LATENCY, Some(s.seq)),
                        None => {
                            let store = s.seq;
                            self.iq[iq_idx].wait_store = Some(store);
                            self.report.replays += 1;
                            self.record_issue(
                                seq,
                                t,
                                true,
                                false,
                                IssueOutcome::WaitStore { store },
                            );
                            return false;
                        }
                    },
                    None => (
                        self.mem.read_mem(addr),
                        self.config.load_latency(addr),
                        None,
                    ),
                };
                if from.is_some() {
                    self.report.loads_forwarded += 1;
                }
                self.observe(t, Observation::CacheAccess { addr });
                let l1 = self.config.l1_latency_cycles;
                if let Some(p) = u.ops.pdst {
                    let r = &mut self.regs[p.index()];
                    r.value = value;
                    if self.spec_wakeup {
                        r.spec_ready_at = Some(t + l1);
                        r.ready_at = Some(if lat <= l1 { t + lat } else { t + lat + 1 });
                    }
                }
                let uop = &mut self.rob[pos];
                uop.state = UopState::Issued;
                uop.addr = Some(addr);
                uop.load_executed = true;
                uop.forwarded_from = from;
                if self.spec_wakeup {
                    uop.broadcast_done = true;
                    self.trace.broadcasts.push(BroadcastRecord {
                        seq,
                        cycle: t,
                        deferred: false,
                    });
                }
                self.events.push(Event {
                    at: t + lat,
                    seq,
                    kind: EventKind::LoadDone,
                    value,
                });
                self.record_issue(seq, t, true, false, IssueOutcome::Executed);
                self.report.executed += 1;
                true
            }
            Opcode::Store => {
                let e = &mut self.iq[iq_idx];
                if addr_part {
                    e.addr_issued = true;
                    let addr = a.wrapping_add(u.instr.imm as u64);
                    self.events.push(Event {
                        at: t + 1,
                        seq,
                        kind: EventKind::StoreAddr,
                        value: addr,
                    });
                }
                if data_part {
                    e.data_issued = true;
                    self.events.push(Event {
                        at: t + 1,
                        seq,
                        kind: EventKind::StoreData,
                        value: b,
                    });
                }
                let done = e.addr_issued && e.data_issued;
                if !done {
                    self.report.partial_store_issues += 1;
                }
                self.rob[pos].state = UopState::Issued;
                self.record_issue(seq, t, addr_part, data_part, IssueOutcome::Executed);
                self.report.executed += 1;
                done
            }
            Opcode::Jmp | Opcode::Halt => unreachable!("never enter the issue queue"),
        }
    }

    // ---------------------------------------------------------------- rename

    fn rename(&mut self, t: u64) -> Result<(), SimError> {
        let rob_space = self.config.rob_entries - self.rob.len();
        let mut iq_space = self.config.iq_entries - self.iq.len();
        let mut group: Vec<(Seq, ArchInstr)> = Vec::new();
        for f in self.fetch_buf.iter().take(self.config.width.min(rob_space)) {
            if f.cycle >= t {
                break;
            }
            if needs_iq(f.instr.opcode) {
                if iq_space == 0 {
                    break;
                }
                iq_space -= 1;
            }
            group.push((f.seq, f.instr));
        }
        if group.is_empty() {
            return Ok(());
        }
        let ops = self.rename.rename_group(&group);
        let n = ops.len();
        let fetched: Vec<Fetched> = self.fetch_buf.drain(..n).collect();

        let mut shadow_ids = Vec::with_capacity(n);
        for f in &fetched {
            let kind = match f.instr.opcode {
                Opcode::Beq | Opcode::Bne => Some(ShadowKind::C),
                Opcode::Store => Some(ShadowKind::D),
                _ => None,
            };
            let id = match kind {
                Some(k) => {
                    let id = self
                        .shadows
                        .register_shadow(f.seq, k)
                        .map_err(|e| SimError::Internal(e.to_string()))?;
                    self.trace.shadows.push(ShadowRecord {
                        seq: f.seq,
                        kind: k,
                        registered: t,
                        resolved: None,
                        squashed: None,
                    });
                    debug_assert_eq!(self.trace.shadows.len() as u64, id.0 + 1);
                    Some(id)
                }
                None => None,
            };
            shadow_ids.push(id);
        }
        let vis = self.shadows.visibility();
        let inputs: Vec<RenameInput> = fetched
            .iter()
            .map(|f| RenameInput {
                seq: f.seq,
                instr: f.instr,
                speculative: !vis.covers(f.seq),
                needs_checkpoint: f.instr.opcode.is_conditional_branch(),
            })
            .collect();
        let taints = self.scheme.on_rename(&inputs, vis);

        for ((f, op), (taint, shadow)) in fetched
            .into_iter()
            .zip(ops)
            .zip(taints.into_iter().zip(shadow_ids))
        {
            if f.instr.opcode.is_conditional_branch() {
                self.rename.attach_scheme_snapshot(f.seq, taint.checkpoint);
            }
            if let Some(p) = op.pdst {
                self.regs[p.index()] = Preg {
                    value: 0,
                    ready_at: None,
                    spec_ready_at: None,
                };
            }
            let immediate = !needs_iq(f.instr.opcode);
            self.rob.push_back(Uop {
                seq: f.seq,
                pc: f.pc,
                instr: f.instr,
                ops: op,
                state: if immediate {
                    UopState::Completed
                } else {
                    UopState::Waiting
                },
                predicted_next: f.predicted_next,
                shadow,
                addr: None,
                data: None,
                load_executed: false,
                forwarded_from: None,
                broadcast_done: false,
                nonspec_notified: false,
                taint_undo: taint.undo,
            });
            if !immediate {
                self.iq.push(IqEntry {
                    seq: f.seq,
                    mask: taint.mask,
                    eligible_from: t + 1,
                    no_spec_wakeup: false,
                    wait_store: None,
                    addr_issued: false,
                    data_issued: false,
                });
            }
            self.trace.uops.push(UopRecord {
                seq: f.seq,
                pc: f.pc,
                instr: f.instr,
                rename_cycle: t,
                squash_cycle: None,
                commit_cycle: None,
                rename_root: taint.root,
                rename_mask: taint.mask,
                unmask_cycle: None,
            });
            self.report.renamed += 1;
        }
        Ok(())
    }

    // ----------------------------------------------------------------- fetch

    fn fetch(&mut self, t: u64) {
        for _ in 0..self.config.width {
            if self.fetch_stopped || self.fetch_buf.len() >= self.config.fetch_buffer {
                break;
            }
            let pc = self.fetch_pc;
            let instr = self
                .program
                .instrs
                .get(pc)
                .copied()
                .unwrap_or_else(ArchInstr::halt);
            let next = match instr.opcode {
                Opcode::Beq | Opcode::Bne => {
                    if self.predict() {
                        (pc as i64 + instr.imm) as usize
                    } else {
                        pc + 1
                    }
                }
                Opcode::Jmp => (pc as i64 + instr.imm) as usize,
                Opcode::Halt => {
                    self.fetch_stopped = true;
                    pc
                }
                _ => pc + 1,
            };
            self.fetch_buf.push_back(Fetched {
                seq: self.next_seq,
                pc,
                instr,
                predicted_next: next,
                cycle: t,
            });
            self.next_seq += 1;
            self.fetch_pc = next;
            self.report.fetched += 1;
        }
    }

    fn predict(&mut self) -> bool {
        match &self.config.predictor {
            Predictor::AlwaysTaken => true,
            Predictor::NeverTaken => false,
            Predictor::Scripted(outcomes) => {
                let p = outcomes.get(self.predictor_cursor).copied().unwrap_or(true);
                self.predictor_cursor += 1;
                p
            }
        }
    }

    fn observe(&mut self, cycle: u64, what: Observation) {
        self.observations.push(ObservationEvent { cycle, what });
    }

    /// Structural self-checks against brute-force recomputation. Intended for
    /// tests; cost is linear in the machine size.
    pub fn check_invariants(&self) -> Result<(), String> {
        // Replaying in-flight renames over the committed map gives the RAT.
        let mut rat = self.committed_rat;
        for u in &self.rob {
            if let (Some(d), Some(p)) = (u.instr.dest(), u.ops.pdst) {
                rat[d.index()] = p;
            }
        }
        if &rat != self.rename.rat() {
            return Err(format!(
                "cycle {}: RAT differs from replayed renames",
                self.cycle
            ));
        }
        // Free registers are not live anywhere.
        let mut live = vec![false; self.config.phys_regs];
        for p in self.committed_rat.iter().chain(self.rename.rat().iter()) {
            live[p.index()] = true;
        }
        for u in &self.rob {
            for p in u.ops.psrc.iter().flatten().chain(u.ops.pdst.iter()) {
                live[p.index()] = true;
            }
        }
        let mut seen = vec![false; self.config.phys_regs];
        for p in self.rename.free_list() {
            if live[p.index()] || seen[p.index()] || *p == PhysReg::ZERO {
                return Err(format!(
                    "cycle {}: {p} free while live or free twice",
                    self.cycle
                ));
            }
            seen[p.index()] = true;
        }
        // Live mappings are pairwise distinct.
        let mut mapped = vec![false; self.config.phys_regs];
        for p in self.rename.rat().iter().skip(1) {
            if std::mem::replace(&mut mapped[p.index()], true) {
                return Err(format!("cycle {}: {p} mapped twice", self.cycle));
            }
        }
        // Speculation matches a scan of unresolved branches and stores. A
        // shadow's own instruction counts as past the visibility point.
        let pending: Vec<Seq> = self
            .rob
            .iter()
            .filter(|u| {
                (u.instr.opcode.is_conditional_branch() && u.state != UopState::Completed)
                    || (u.instr.opcode == Opcode::Store && u.addr.is_none())
            })
            .map(|u| u.seq)
            .collect();
        for u in &self.rob {
            let scan = pending.iter().any(|&s| s <= u.seq);
            if scan != self.shadows.is_speculative(u.seq) {
                return Err(format!(
                    "cycle {}: speculation of seq {} disagrees with scan",
                    self.cycle, u.seq
                ));
            }
        }
        Ok(())
    }
}

fn needs_iq(op: Opcode) -> bool {
    !matches!(op, Opcode::Jmp | Opcode::Halt)
}

/// Runs `program` to completion with a generous cycle cap.
pub fn simulate(
    config: &CoreConfig,
    scheme: SchemeKind,
    program: &Program,
) -> Result<SimRun, SimError> {
    let cap = 1_000_000 + 1_000 * program.instrs.len() as u64;
    Simulator::new(config.clone(), scheme, program.clone())?.run(cap)
}
