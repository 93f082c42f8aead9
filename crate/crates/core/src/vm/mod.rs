//! Step-counting interpreter for transformed RC programs, with a simulated
//! address space and the runtime library linked in.

mod image;
pub mod lower;
pub mod memory;
pub mod value;

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use image::{Image, INSTR_BYTES};
use lower::{Dest, Instr, PrintArg, Rt, TAddr, TExpr, TPlace};
pub use memory::{AccessFault, AddressSpace, SegmentKind};
pub use value::{ArithFault, Sty, Val};

use crate::frontend::ast::Program;
use crate::runtime::{
    vote_and_repair, ActionKind, BlockCtx, Decision, DrmEntry, Memory, Policy, Runtime, RuntimeEvent, VoteResult,
    ICV_NORMAL, ICV_RETRY, RETRY_BUDGET,
};
use crate::transform::{RecordKind, TransformedProgram};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("load error: {0}")]
pub struct LoadError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashReason {
    InvalidAccess(u64),
    UninitRead(u64),
    OutOfBounds { index: i64, len: u32 },
    DivByZero,
    NanPredicate,
    Timeout,
    StackOverflow,
    OutOfMemory,
    BadFree(u64),
    NotRobust(u64),
    Internal(&'static str),
}

impl fmt::Display for CrashReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashReason::InvalidAccess(a) => write!(f, "invalid memory access at {a:#x}"),
            CrashReason::UninitRead(a) => write!(f, "read of uninitialized memory at {a:#x}"),
            CrashReason::OutOfBounds { index, len } => write!(f, "index {index} out of bounds for length {len}"),
            CrashReason::DivByZero => f.write_str("division by zero"),
            CrashReason::NanPredicate => f.write_str("NaN in a predicate"),
            CrashReason::Timeout => f.write_str("step limit exceeded"),
            CrashReason::StackOverflow => f.write_str("stack overflow"),
            CrashReason::OutOfMemory => f.write_str("out of simulated memory"),
            CrashReason::BadFree(a) => write!(f, "free of non-heap address {a:#x}"),
            CrashReason::NotRobust(a) => write!(f, "replica access outside a robust allocation at {a:#x}"),
            CrashReason::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<AccessFault> for CrashReason {
    fn from(f: AccessFault) -> Self {
        match f {
            AccessFault::Invalid(a) => CrashReason::InvalidAccess(a),
            AccessFault::Uninit(a) => CrashReason::UninitRead(a),
        }
    }
}

impl From<ArithFault> for CrashReason {
    fn from(f: ArithFault) -> Self {
        match f {
            ArithFault::DivByZero => CrashReason::DivByZero,
            ArithFault::NanPredicate => CrashReason::NanPredicate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Running,
    CompletedOk,
    TerminatedGraceful(String),
    Crashed(CrashReason),
}

impl Status {
    pub fn is_running(&self) -> bool {
        matches!(self, Status::Running)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Running => f.write_str("running"),
            Status::CompletedOk => f.write_str("completed"),
            Status::TerminatedGraceful(r) => write!(f, "terminated: {r}"),
            Status::Crashed(c) => write!(f, "crashed: {c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VmConfig {
    pub step_limit: u64,
    /// Steps charged for delivering one error notification to the runtime.
    pub dispatch_cost: u64,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig { step_limit: 50_000_000, dispatch_cost: 50 }
    }
}

const MAX_FRAMES: usize = 4096;
const MAX_OUTPUT: usize = 1 << 20;
const MAX_EVENTS: usize = 10_000;

#[derive(Debug, Clone)]
struct Frame {
    func: usize,
    pc: usize,
    base: u64,
    ret: Option<Dest>,
    /// Return value goes to the pending recovery-function result.
    capture: bool,
}

#[derive(Clone)]
pub struct Vm {
    image: Arc<Image>,
    pub mem: AddressSpace,
    pub runtime: Runtime,
    frames: Vec<Frame>,
    steps: u64,
    output: String,
    status: Status,
    exit_code: Option<i64>,
    config: VmConfig,
    pending: VecDeque<(u64, u8)>,
    healing: u32,
    heal_result: Option<Val>,
}

/// Summary of a finished execution.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub status: Status,
    pub output: String,
    pub exit_code: Option<i64>,
    pub steps: u64,
    pub stats: crate::runtime::RuntimeStats,
}

impl Vm {
    pub fn new(image: Arc<Image>, config: VmConfig, inputs: &[Val]) -> Vm {
        let mut runtime = Runtime::from_profile(&image.profile);
        for (b, spec) in runtime.blocks.iter_mut().enumerate() {
            spec.code = image.block_code.get(b).copied().flatten();
        }
        let mut mem = AddressSpace::new(image.statics.clone(), image.code_len, image.heap_start);
        let mut status = Status::Running;
        for e in &image.static_entries {
            if runtime.drm.register(e.clone()).is_err() {
                status = Status::Crashed(CrashReason::Internal("static DRM registration failed"));
            }
        }
        let main = &image.code.funcs[image.main];
        let mut frames = Vec::new();
        match mem.push_frame(main.frame_size) {
            Some(base) => {
                for (i, &(off, sty)) in main.params.iter().enumerate() {
                    let v = inputs.get(i).copied().unwrap_or(Val::I32(0)).convert(sty);
                    let _ = mem.store(base + off, v);
                }
                frames.push(Frame { func: image.main, pc: 0, base, ret: None, capture: false });
            }
            None => status = Status::Crashed(CrashReason::StackOverflow),
        }
        Vm {
            image,
            mem,
            runtime,
            frames,
            steps: 0,
            output: String::new(),
            status,
            exit_code: None,
            config,
            pending: VecDeque::new(),
            healing: 0,
            heal_result: None,
        }
    }

    pub fn image(&self) -> &Arc<Image> {
        &self.image
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn exit_code(&self) -> Option<i64> {
        self.exit_code
    }

    pub fn result(&self) -> RunResult {
        RunResult {
            status: self.status.clone(),
            output: self.output.clone(),
            exit_code: self.exit_code,
            steps: self.steps,
            stats: self.runtime.stats,
        }
    }

    /// Address and type of a global variable.
    pub fn global(&self, name: &str) -> Option<(u64, crate::frontend::ast::Type)> {
        self.image.globals.get(name).cloned()
    }

    pub fn read(&self, addr: u64, ty: Sty) -> Result<Val, AccessFault> {
        self.mem.load(addr, ty)
    }

    /// Name of the function currently executing.
    pub fn current_function(&self) -> Option<&str> {
        self.frames.last().map(|f| self.image.code.funcs[f.func].name.as_str())
    }

    /// Byte ranges a fault may strike right now: static data, live heap
    /// blocks and block instruction memory.
    pub fn injectable_ranges(&self) -> Vec<(u64, u64, SegmentKind)> {
        let mut out: Vec<_> = self.image.layout.iter().map(|(_, a, l)| (*a, *l, SegmentKind::Static)).collect();
        out.extend(self.mem.heap_blocks().map(|(a, l)| (a, l, SegmentKind::Heap)));
        out.extend(self.image.block_code.iter().flatten().map(|&(a, l)| (a, l, SegmentKind::Code)));
        out
    }

    /// Flip one bit. Instruction memory is never altered.
    pub fn flip(&mut self, addr: u64, bit: u8) -> bool {
        self.mem.segment_of(addr) != Some(SegmentKind::Code) && self.mem.flip_bit(addr, bit)
    }

    /// Queue an error notification; it is handled before the next instruction.
    pub fn notify(&mut self, addr: u64, bit: u8) {
        self.pending.push_back((addr, bit));
    }

    pub fn run(&mut self) -> &Status {
        while self.status.is_running() {
            self.step();
        }
        &self.status
    }

    /// Deliver pending notifications, then execute one instruction.
    pub fn step(&mut self) -> &Status {
        while self.status.is_running() {
            let Some((a, b)) = self.pending.pop_front() else { break };
            self.handle(a, b);
        }
        if self.status.is_running() {
            self.exec_one();
        }
        &self.status
    }

    fn exec_one(&mut self) {
        if self.steps >= self.config.step_limit {
            self.status = Status::Crashed(CrashReason::Timeout);
            return;
        }
        self.steps += 1;
        if let Err(c) = self.exec() {
            self.status = Status::Crashed(c);
        }
    }

    fn terminate(&mut self, reason: impl Into<String>) {
        let reason = reason.into();
        self.event(RuntimeEvent::Terminated { reason: reason.clone() });
        self.status = Status::TerminatedGraceful(reason);
    }

    fn event(&mut self, e: RuntimeEvent) {
        if self.runtime.events.len() < MAX_EVENTS {
            self.runtime.events.push(e);
        }
    }

    // ---- error notifications ----

    fn handle(&mut self, addr: u64, bit: u8) {
        self.runtime.stats.notifications += 1;
        self.steps += self.config.dispatch_cost;
        let d = self.runtime.decide(addr, bit);
        let action = self.runtime.action_of(&d);
        self.event(RuntimeEvent::Decided { addr, bit, action });
        self.apply(d, addr);
    }

    fn apply(&mut self, d: Decision, addr: u64) {
        match d {
            Decision::Block { ctx, kind } => self.apply_block(ctx, kind),
            Decision::Deferred { block, .. } => {
                self.runtime.pending_code[block] = true;
                self.runtime.stats.deferred += 1;
            }
            Decision::Tolerant { entry, kind, element_offset } => {
                let e = self.runtime.drm.get(entry).expect("entry").clone();
                if kind == ActionKind::Elide {
                    self.runtime.stats.elided += 1;
                    return;
                }
                let Policy::Tolerant(mask) = e.policy else { return };
                let at = e.base() + element_offset;
                if let Some(mut snap) = self.mem.snapshot(at, e.element.bytes()) {
                    let mut raw = [0u8; 8];
                    let n = snap.data.len();
                    raw[..n].copy_from_slice(&snap.data);
                    let fixed = mask.apply_coercion(u64::from_le_bytes(raw));
                    snap.data.copy_from_slice(&fixed.to_le_bytes()[..n]);
                    self.mem.restore(&snap);
                }
                self.runtime.stats.coerced += 1;
            }
            Decision::Vote { entry } => {
                let e = self.runtime.drm.get(entry).expect("entry").clone();
                let r = vote_and_repair(&mut self.mem, &e.ranges, e.element.bytes());
                self.event(RuntimeEvent::Compared { places: e.ranges.len(), result: r });
                match r {
                    VoteResult::Corrected => self.runtime.stats.votes_repaired += 1,
                    // three-way split mid write group: left to the group's compare
                    VoteResult::DetectedOnly if e.ranges.len() < 3 => {
                        self.runtime.stats.mismatches += 1;
                        let d = self.runtime.escalate_mismatch();
                        self.escalate(d);
                    }
                    _ => {}
                }
            }
            Decision::Detect { .. } => {
                self.runtime.stats.mismatches += 1;
                let d = self.runtime.escalate_mismatch();
                self.escalate(d);
            }
            Decision::Heal { entry } => {
                if !self.run_heal(entry) && self.status.is_running() {
                    self.terminate("unrepairable heap object");
                }
            }
            Decision::Terminate => self.terminate(format!("unhandled error at {addr:#x}")),
        }
    }

    fn escalate(&mut self, d: Decision) {
        match d {
            Decision::Block { ctx, kind } => self.apply_block(ctx, kind),
            _ => self.terminate("replica mismatch"),
        }
    }

    /// Vote over replica ranges; returns whether execution continues in place.
    fn vote(&mut self, ranges: &[(u64, u64)], elem: u64) -> (bool, VoteResult) {
        let r = vote_and_repair(&mut self.mem, ranges, elem);
        self.event(RuntimeEvent::Compared { places: ranges.len(), result: r });
        match r {
            VoteResult::Clean => (true, r),
            VoteResult::Corrected => {
                self.runtime.stats.votes_repaired += 1;
                (true, r)
            }
            VoteResult::DetectedOnly => {
                self.runtime.stats.mismatches += 1;
                let d = self.runtime.escalate_mismatch();
                self.escalate(d);
                (false, r)
            }
        }
    }

    /// Redirect a block instance: unwind to the frame that entered it, set its
    /// control variable and continue at its recovery pad.
    fn apply_block(&mut self, ctx: usize, kind: ActionKind) {
        let BlockCtx { block, owner_depth, pad_pc, .. } = self.runtime.active[ctx].clone();
        while self.frames.len() > owner_depth {
            let f = self.frames.pop().expect("frame");
            self.mem.pop_frame(f.base);
        }
        self.runtime.active.truncate(ctx + 1);
        self.runtime.icv[block] = kind.icv();
        let stats = &mut self.runtime.stats;
        match kind {
            ActionKind::Rollback => stats.rollbacks += 1,
            ActionKind::Retry => stats.retries += 1,
            ActionKind::Rollforward => stats.rollforwards += 1,
            _ => stats.fallbacks += 1,
        }
        if let Some(f) = self.frames.last_mut() {
            f.pc = pad_pc;
        }
    }

    /// Run an entry's recovery function to completion. Its steps count; a
    /// crash inside it makes the object unrepairable.
    fn run_heal(&mut self, entry: usize) -> bool {
        let e: DrmEntry = self.runtime.drm.get(entry).expect("entry").clone();
        let Policy::Heal(name) = &e.policy else { return false };
        self.runtime.stats.heals += 1;
        let Some(&func) = self.image.code.index.get(name) else { return false };
        let depth = self.frames.len();
        if self.call(func, &[Val::Ptr(e.base())], None, true).is_err() {
            return false;
        }
        self.healing += 1;
        while self.frames.len() > depth && self.status.is_running() {
            self.exec_one();
        }
        self.healing -= 1;
        match &self.status {
            Status::Crashed(CrashReason::Timeout) => return false,
            Status::Crashed(_) => {
                self.status = Status::Running;
                self.terminate(format!("recovery function '{name}' crashed"));
                return false;
            }
            _ => {}
        }
        let ok = self.heal_result.take().is_some_and(|v| v.truthy().unwrap_or(false));
        if ok {
            self.runtime.stats.heals_repaired += 1;
        }
        self.event(RuntimeEvent::HealFinished { construct: e.construct.clone(), repaired: ok });
        ok
    }

    // ---- execution ----

    fn call(&mut self, func: usize, args: &[Val], ret: Option<Dest>, capture: bool) -> Result<(), CrashReason> {
        if self.frames.len() >= MAX_FRAMES {
            return Err(CrashReason::StackOverflow);
        }
        let f = &self.image.code.funcs[func];
        let base = self.mem.push_frame(f.frame_size).ok_or(CrashReason::StackOverflow)?;
        for (&(off, sty), v) in f.params.iter().zip(args) {
            self.mem.store(base + off, v.convert(sty))?;
        }
        self.frames.push(Frame { func, pc: 0, base, ret, capture });
        Ok(())
    }

    fn exec(&mut self) -> Result<(), CrashReason> {
        let image = Arc::clone(&self.image);
        let fr = self.frames.last_mut().ok_or(CrashReason::Internal("no frame"))?;
        let base = fr.base;
        let instr = &image.code.funcs[fr.func].instrs[fr.pc];
        fr.pc += 1;
        match instr {
            Instr::Store { addr, value } => {
                let v = self.eval(value, base)?;
                let a = self.addr(addr, base)?;
                self.mem.store(a, v)?;
            }
            Instr::Fill { addr, items } => {
                let a = self.addr(addr, base)?;
                for (off, e) in items {
                    let v = self.eval(e, base)?;
                    self.mem.store(a + off, v)?;
                }
            }
            Instr::Eval(e) => {
                self.eval(e, base)?;
            }
            Instr::Call { func, args, dest } => {
                let vals = args.iter().map(|a| self.eval(a, base)).collect::<Result<Vec<_>, _>>()?;
                self.call(*func, &vals, dest.clone(), false)?;
            }
            Instr::Jump(t) => self.jump(*t),
            Instr::BranchFalse { cond, target } => {
                if !self.eval(cond, base)?.truthy()? {
                    self.jump(*target);
                }
            }
            Instr::Return(v) => {
                let v = match v {
                    Some(e) => Some(self.eval(e, base)?),
                    None => None,
                };
                let f = self.frames.pop().expect("frame");
                self.mem.pop_frame(f.base);
                if self.frames.is_empty() {
                    self.exit_code = Some(v.map_or(0, |v| v.as_i64()));
                    self.status = Status::CompletedOk;
                } else if f.capture {
                    self.heal_result = v;
                } else if let (Some(d), Some(v)) = (f.ret, v) {
                    let caller = self.frames.last().expect("caller").base;
                    self.store_dest(&d, v, caller)?;
                }
            }
            Instr::Print(args) => {
                let mut line = String::new();
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        line.push(' ');
                    }
                    match a {
                        PrintArg::Str(s) => line.push_str(s),
                        PrintArg::Val(e) => line.push_str(&self.eval(e, base)?.to_string()),
                    }
                }
                if self.output.len() < MAX_OUTPUT {
                    self.output.push_str(&line);
                    self.output.push('\n');
                }
            }
            Instr::Rt(op) => self.rt(op, base)?,
        }
        Ok(())
    }

    fn jump(&mut self, to: usize) {
        self.frames.last_mut().expect("frame").pc = to;
    }

    fn store_dest(&mut self, d: &Dest, v: Val, base: u64) -> Result<(), CrashReason> {
        let a = self.addr(&d.addr, base)?;
        self.mem.store(a, v.convert(d.ty))?;
        Ok(())
    }

    fn places(&self, ps: &[TPlace], base: u64) -> Result<Vec<(u64, u64)>, CrashReason> {
        ps.iter().map(|p| Ok((self.addr(&p.addr, base)?, p.len))).collect()
    }

    fn rt(&mut self, op: &Rt, base: u64) -> Result<(), CrashReason> {
        match op {
            Rt::Nop => {}
            Rt::Preserve { block, places, pad, reentry } => {
                let places = self.places(places, base)?;
                self.runtime.active.push(BlockCtx {
                    block: *block,
                    owner_depth: self.frames.len(),
                    places,
                    checkpoint: Vec::new(),
                    checkpointed: false,
                    retries: 0,
                    pad_pc: *pad,
                    reentry_pc: *reentry,
                });
                self.runtime.icv[*block] = ICV_NORMAL;
            }
            Rt::Checkpoint { block, places } => {
                let ranges = self.places(places, base)?;
                self.runtime.checkpoint(&self.mem, *block, &ranges);
                if std::mem::take(&mut self.runtime.pending_code[*block]) {
                    let ctx = self.runtime.active.len() - 1;
                    let kind = self.runtime.blocks[*block].hit_action();
                    self.apply_block(ctx, kind);
                }
            }
            Rt::JmpFwd { block, target } => {
                if let Some(i) = self.runtime.active.iter().rposition(|c| c.block == *block) {
                    self.runtime.active.truncate(i);
                }
                self.jump(*target);
            }
            Rt::Restore { block } => {
                self.runtime.restore(&mut self.mem, *block).ok_or(CrashReason::Internal("restore without checkpoint"))?;
            }
            Rt::JmpBack { block, amel } => {
                if let Some(e) = amel {
                    if !self.eval(e, base)?.truthy()? {
                        self.terminate("amelioration failed");
                        return Ok(());
                    }
                }
                let retry = self.runtime.icv[*block] == ICV_RETRY;
                let Some(ctx) = self.runtime.active.iter_mut().rev().find(|c| c.block == *block) else {
                    return Err(CrashReason::Internal("jump back without block context"));
                };
                if retry {
                    ctx.retries += 1;
                    if ctx.retries > RETRY_BUDGET {
                        self.terminate("retry budget exhausted");
                        return Ok(());
                    }
                    let to = ctx.reentry_pc;
                    self.runtime.icv[*block] = ICV_NORMAL;
                    self.jump(to);
                } else if let Some(i) = self.runtime.active.iter().rposition(|c| c.block == *block) {
                    self.runtime.active.truncate(i);
                }
            }
            Rt::Copy { dst, src } => {
                let from = self.addr(&src.addr, base)?;
                let to = self.addr(&dst.addr, base)?;
                let mut snap = self.mem.snapshot(from, src.len.min(dst.len)).ok_or(CrashReason::InvalidAccess(from))?;
                if self.mem.snapshot(to, snap.data.len() as u64).is_none() {
                    return Err(CrashReason::InvalidAccess(to));
                }
                snap.addr = to;
                self.mem.restore(&snap);
            }
            Rt::Compare { places, dest } => {
                let ranges = self.places(places, base)?;
                let elem = places.first().map_or(1, |p| p.elem);
                let (cont, r) = self.vote(&ranges, elem);
                if let (true, Some(d)) = (cont, dest) {
                    self.store_dest(d, Val::I32((r != VoteResult::Clean) as i32), base)?;
                }
            }
            Rt::ValidateHeap { ptr, dest } => {
                let p = self.eval(ptr, base)?.bits();
                let robust = self.runtime.drm.lookup(p).and_then(|h| self.runtime.drm.get(h.entry)).and_then(|e| match e.policy {
                    Policy::Robust(_) => Some((e.ranges.clone(), e.element.bytes())),
                    _ => None,
                });
                let (cont, r) = match robust {
                    Some((ranges, elem)) => self.vote(&ranges, elem),
                    None => (true, VoteResult::Clean),
                };
                if let (true, Some(d)) = (cont, dest) {
                    self.store_dest(d, Val::I32((r != VoteResult::Clean) as i32), base)?;
                }
            }
            Rt::Alloc { size, record, dest } => {
                let n = self.eval(size, base)?.as_i64();
                let rec = &self.image.profile.records[*record];
                let element = rec.element.ok_or(CrashReason::Internal("allocation record without element"))?;
                let policy = match rec.kind {
                    RecordKind::TolerantHeap => Policy::Tolerant(match rec.mask {
                        Some(m) => m,
                        None => crate::bitmask::derive_mask(element, None).map_err(|_| CrashReason::Internal("mask"))?,
                    }),
                    RecordKind::RobustHeap => Policy::Robust(rec.strength.unwrap_or(crate::frontend::ast::Strength::Correct)),
                    RecordKind::RepairableHeap => Policy::Heal(rec.recovery_fn.clone().unwrap_or_default()),
                    _ => return Err(CrashReason::Internal("allocation record of a non-heap kind")),
                };
                let copies = match &policy {
                    Policy::Robust(s) => s.copies(),
                    _ => 1,
                };
                let ranges: Vec<_> =
                    (0..copies).map_while(|_| u64::try_from(n).ok().and_then(|n| self.mem.alloc(n)).map(|a| (a, n as u64))).collect();
                if ranges.len() != copies {
                    return Err(CrashReason::OutOfMemory);
                }
                let entry = DrmEntry { construct: rec.id.clone(), ranges, element, policy, dynamic: true };
                let ptr = entry.base();
                self.runtime.drm.register(entry).map_err(|_| CrashReason::Internal("heap DRM registration"))?;
                if let Some(d) = dest {
                    self.store_dest(d, Val::Ptr(ptr), base)?;
                }
            }
            Rt::Malloc { size, dest } => {
                let n = self.eval(size, base)?.as_i64();
                let p = if n > 0 { self.mem.alloc(n as u64).unwrap_or(0) } else { 0 };
                if let Some(d) = dest {
                    self.store_dest(d, Val::Ptr(p), base)?;
                }
            }
            Rt::Free(e) => {
                let p = self.eval(e, base)?.bits();
                if p != 0 {
                    let owned = self
                        .runtime
                        .drm
                        .lookup(p)
                        .filter(|h| h.copy == 0 && h.offset == 0)
                        .filter(|h| self.runtime.drm.get(h.entry).is_some_and(|e| e.dynamic));
                    match owned {
                        Some(h) => {
                            let e = self.runtime.drm.deregister(h.entry).map_err(|_| CrashReason::BadFree(p))?;
                            for (a, _) in e.ranges {
                                self.mem.free(a);
                            }
                        }
                        None if self.mem.free(p) => {}
                        None => return Err(CrashReason::BadFree(p)),
                    }
                }
            }
            Rt::Heal { ptr, dest } => {
                let p = self.eval(ptr, base)?.bits();
                let entry = self
                    .runtime
                    .drm
                    .lookup(p)
                    .filter(|h| self.runtime.drm.get(h.entry).is_some_and(|e| matches!(e.policy, Policy::Heal(_))));
                let ok = match entry {
                    Some(h) => self.run_heal(h.entry),
                    None => false,
                };
                if let (true, Some(d)) = (self.status.is_running(), dest) {
                    self.store_dest(d, Val::I32(ok as i32), base)?;
                }
            }
        }
        Ok(())
    }

    fn addr(&self, a: &TAddr, base: u64) -> Result<u64, CrashReason> {
        Ok(match a {
            TAddr::Abs(x) => *x,
            TAddr::Frame(off) => base + off,
            TAddr::Dyn(p) => self.eval(p, base)?.bits(),
            TAddr::Index { base: b, idx, size, len } => {
                let i = self.eval(idx, base)?.as_i64();
                if i < 0 || i >= i64::from(*len) {
                    return Err(CrashReason::OutOfBounds { index: i, len: *len });
                }
                self.addr(b, base)? + i as u64 * size
            }
        })
    }

    fn eval(&self, e: &TExpr, base: u64) -> Result<Val, CrashReason> {
        Ok(match e {
            TExpr::Const(v) => *v,
            TExpr::Load(a, ty) => self.mem.load(self.addr(a, base)?, *ty)?,
            TExpr::Addr(a) => Val::Ptr(self.addr(a, base)?),
            TExpr::Neg(a) => self.eval(a, base)?.neg(),
            TExpr::BitNot(a) => self.eval(a, base)?.bit_not(),
            TExpr::Not(a) => Val::I32(!self.eval(a, base)?.truthy()? as i32),
            TExpr::Bin(op, a, b) => Val::binary(*op, self.eval(a, base)?, self.eval(b, base)?)?,
            TExpr::Shift(op, a, b) => Val::shift(*op, self.eval(a, base)?, self.eval(b, base)?.as_i64() as u32),
            TExpr::And(a, b) => Val::I32((self.eval(a, base)?.truthy()? && self.eval(b, base)?.truthy()?) as i32),
            TExpr::Or(a, b) => Val::I32((self.eval(a, base)?.truthy()? || self.eval(b, base)?.truthy()?) as i32),
            TExpr::Conv(a, t) => self.eval(a, base)?.convert(*t),
            TExpr::PtrAdd(p, i, s) => {
                let p = self.eval(p, base)?.bits();
                Val::Ptr(p.wrapping_add((self.eval(i, base)?.as_i64().wrapping_mul(*s)) as u64))
            }
            TExpr::PtrDiff(a, b, s) => {
                let d = self.eval(a, base)?.bits().wrapping_sub(self.eval(b, base)?.bits()) as i64;
                Val::I32((d / (*s).max(1) as i64) as i32)
            }
            TExpr::Sqrt(a) => Val::F64(self.eval(a, base)?.as_f64().sqrt()),
            TExpr::Fabs(a) => Val::F64(self.eval(a, base)?.as_f64().abs()),
            TExpr::IsNan(a) => Val::I32(self.eval(a, base)?.as_f64().is_nan() as i32),
            TExpr::Icv(b) => Val::I32(i32::from(self.runtime.icv[*b])),
            TExpr::Replica(p, k) => {
                let p = self.eval(p, base)?;
                let k = self.eval(k, base)?.as_i64() as usize;
                let a = p.bits();
                let hit = self.runtime.drm.lookup(a).filter(|h| h.copy == 0).ok_or(CrashReason::NotRobust(a))?;
                let e = self.runtime.drm.get(hit.entry).expect("entry");
                match (&e.policy, e.ranges.get(k)) {
                    (Policy::Robust(_), Some(r)) => Val::Ptr(r.0 + hit.offset),
                    _ => return Err(CrashReason::NotRobust(a)),
                }
            }
        })
    }
}


/// Build and run a program to completion.
pub fn run_program(program: &Program, profile: &crate::transform::Profile, inputs: &[Val], config: VmConfig) -> Result<RunResult, LoadError> {
    let image = Arc::new(Image::build(program, profile, 0)?);
    let mut vm = Vm::new(image, config, inputs);
    vm.run();
    Ok(vm.result())
}

/// Whether a transformed program behaves like the original on fault-free
/// execution: same output and exit status.
pub fn equivalence_check(original: &Program, transformed: &TransformedProgram, inputs: &[Val]) -> Result<bool, LoadError> {
    let plain = crate::transform::strip_directives(original);
    let a = run_program(&plain, &Default::default(), inputs, VmConfig::default())?;
    let b = run_program(&transformed.program, &transformed.profile, inputs, VmConfig::default())?;
    Ok(a.status == Status::CompletedOk && a.status == b.status && a.output == b.output && a.exit_code == b.exit_code)
}
