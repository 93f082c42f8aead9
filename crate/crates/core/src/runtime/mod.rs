//! Runtime inference system: DRM, block contexts, checkpoints, internal
//! control variables and the decision tree that maps an error notification
//! to a recovery action.

mod drm;

use std::fmt;

pub use drm::{Drm, DrmEntry, DrmError, EntryId, Hit, Policy};

use crate::frontend::ast::Strength;
use crate::transform::{BlockPolicy, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Elide,
    Coerce,
    MaskReset,
    VoteCorrect,
    DetectReport,
    HealInvoke,
    Reinitialize,
    Rollback,
    Rollforward,
    Retry,
    IgnoreWithFallback,
    GracefulTerminate,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Elide => "Elide",
            ActionKind::Coerce => "Coerce",
            ActionKind::MaskReset => "MaskReset",
            ActionKind::VoteCorrect => "VoteCorrect",
            ActionKind::DetectReport => "DetectReport",
            ActionKind::HealInvoke => "HealInvoke",
            ActionKind::Reinitialize => "Reinitialize",
            ActionKind::Rollback => "Rollback",
            ActionKind::Rollforward => "Rollforward",
            ActionKind::Retry => "Retry",
            ActionKind::IgnoreWithFallback => "IgnoreWithFallback",
            ActionKind::GracefulTerminate => "GracefulTerminate",
        }
    }

    /// Value the block's control variable takes when this action redirects it.
    pub fn icv(self) -> u8 {
        match self {
            ActionKind::Rollback | ActionKind::Retry => ICV_RETRY,
            _ => ICV_SKIP,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const ICV_NORMAL: u8 = 0;
pub const ICV_RETRY: u8 = 1;
pub const ICV_SKIP: u8 = 2;

/// Rollback/retry attempts allowed per block instance.
pub const RETRY_BUDGET: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryAction {
    pub kind: ActionKind,
    /// Construct or block id the action applies to; empty when nothing matched.
    pub target: String,
}

impl fmt::Display for RecoveryAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.target.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{} {}", self.kind, self.target)
        }
    }
}

/// Byte contents and initialization states of a memory range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub addr: u64,
    pub data: Vec<u8>,
    pub state: Vec<u8>,
}

/// Raw memory access used by the runtime for voting and checkpoints.
pub trait Memory {
    fn snapshot(&self, addr: u64, len: u64) -> Option<Snapshot>;
    fn restore(&mut self, snap: &Snapshot);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteResult {
    Clean,
    Corrected,
    DetectedOnly,
}

/// Compare equal-length copies element by element. With three copies the
/// majority value overwrites a deviating copy; two copies (or three-way
/// disagreement) can only be reported.
pub fn vote_and_repair(mem: &mut dyn Memory, ranges: &[(u64, u64)], elem: u64) -> VoteResult {
    let snaps: Vec<Snapshot> = match ranges.iter().map(|&(a, l)| mem.snapshot(a, l)).collect::<Option<Vec<_>>>() {
        Some(s) => s,
        None => return VoteResult::DetectedOnly,
    };
    let len = ranges.first().map_or(0, |r| r.1) as usize;
    let elem = elem.max(1) as usize;
    fn cell(s: &Snapshot, i: usize, n: usize) -> (&[u8], &[u8]) {
        (&s.data[i..i + n], &s.state[i..i + n])
    }
    let mut result = VoteResult::Clean;
    let mut repaired: Vec<Snapshot> = snaps.clone();
    let mut dirty = vec![false; snaps.len()];
    let mut i = 0;
    while i < len {
        let n = elem.min(len - i);
        let cells: Vec<_> = snaps.iter().map(|s| cell(s, i, n)).collect();
        if cells.windows(2).all(|w| w[0] == w[1]) {
            i += elem;
            continue;
        }
        if cells.len() < 3 {
            return VoteResult::DetectedOnly;
        }
        let majority = (0..cells.len()).find(|&a| cells.iter().filter(|c| **c == cells[a]).count() * 2 > cells.len());
        let Some(m) = majority else { return VoteResult::DetectedOnly };
        for (k, c) in cells.iter().enumerate() {
            if *c != cells[m] {
                repaired[k].data[i..i + n].copy_from_slice(&snaps[m].data[i..i + n]);
                repaired[k].state[i..i + n].copy_from_slice(&snaps[m].state[i..i + n]);
                dirty[k] = true;
            }
        }
        result = VoteResult::Corrected;
        i += elem;
    }
    for (k, s) in repaired.iter().enumerate() {
        if dirty[k] {
            mem.restore(s);
        }
    }
    result
}

/// Static description of one resilient block, taken from the profile.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub id: String,
    pub policy: BlockPolicy,
    pub fallback: bool,
    pub has_reinit: bool,
    /// Synthetic instruction-memory range of the block's outlined function.
    pub code: Option<(u64, u64)>,
}

impl BlockSpec {
    /// Action a code or clause-variable hit triggers for this block.
    pub fn hit_action(&self) -> ActionKind {
        match self.policy {
            BlockPolicy::Rollback | BlockPolicy::Redundant(_) => ActionKind::Rollback,
            BlockPolicy::Rollforward => ActionKind::Rollforward,
            BlockPolicy::Retry | BlockPolicy::DeclareRedundant(_) => ActionKind::Retry,
            BlockPolicy::Ignore => ActionKind::IgnoreWithFallback,
        }
    }

    /// Whether an unresolved mismatch inside this block may fall back instead of terminating.
    pub fn absorbs_mismatch(&self) -> bool {
        self.policy == BlockPolicy::Ignore || (self.policy.is_declare() && self.fallback)
    }
}

/// A dynamically active block instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCtx {
    pub block: usize,
    /// Call-stack depth of the frame that entered the block.
    pub owner_depth: usize,
    /// Clause variable ranges registered at entry.
    pub places: Vec<(u64, u64)>,
    pub checkpoint: Vec<Snapshot>,
    /// Set once the block's checkpoint has been taken.
    pub checkpointed: bool,
    pub retries: u32,
    pub pad_pc: usize,
    pub reentry_pc: usize,
}

/// Outcome of the decision tree for one detected error.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Apply a block policy to the active context at this stack index.
    Block { ctx: usize, kind: ActionKind },
    /// Code-region hit on a block that is not running; applied at its next entry.
    Deferred { block: usize, kind: ActionKind },
    Tolerant { entry: EntryId, kind: ActionKind, element_offset: u64 },
    Vote { entry: EntryId },
    Detect { entry: EntryId },
    Heal { entry: EntryId },
    Terminate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RuntimeStats {
    pub notifications: u64,
    pub elided: u64,
    pub coerced: u64,
    pub votes_repaired: u64,
    pub mismatches: u64,
    pub heals: u64,
    pub heals_repaired: u64,
    pub rollbacks: u64,
    pub rollforwards: u64,
    pub retries: u64,
    pub fallbacks: u64,
    pub deferred: u64,
}

impl RuntimeStats {
    /// Whether any mechanism actively repaired or recovered state.
    pub fn recovered(&self) -> bool {
        self.votes_repaired + self.heals_repaired + self.rollbacks + self.rollforwards + self.retries + self.fallbacks > 0
    }
}

/// Observable runtime activity, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum RuntimeEvent {
    Decided { addr: u64, bit: u8, action: RecoveryAction },
    Compared { places: usize, result: VoteResult },
    Restored { block: String, bytes: u64 },
    HealFinished { construct: String, repaired: bool },
    Terminated { reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct Runtime {
    pub drm: Drm,
    pub blocks: Vec<BlockSpec>,
    pub active: Vec<BlockCtx>,
    pub icv: Vec<u8>,
    pub pending_code: Vec<bool>,
    pub stats: RuntimeStats,
    pub events: Vec<RuntimeEvent>,
}

impl Runtime {
    /// Runtime with block specifications read from a profile.
    pub fn from_profile(profile: &Profile) -> Runtime {
        let blocks: Vec<BlockSpec> = profile
            .blocks()
            .map(|r| BlockSpec {
                id: r.id.clone(),
                policy: r.policy.unwrap_or(BlockPolicy::Rollback),
                fallback: r.block.fallback,
                has_reinit: !r.block.reinitialize.is_empty(),
                code: None,
            })
            .collect();
        let n = blocks.len();
        Runtime { blocks, icv: vec![ICV_NORMAL; n], pending_code: vec![false; n], ..Default::default() }
    }

    pub fn block_index(&self, id: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.id == id)
    }

    /// The decision tree: active blocks innermost first, then per-construct
    /// policy, then termination.
    pub fn decide(&self, addr: u64, bit: u8) -> Decision {
        for (i, ctx) in self.active.iter().enumerate().rev() {
            let spec = &self.blocks[ctx.block];
            let in_code = spec.code.is_some_and(|(b, l)| addr >= b && addr < b + l);
            let in_place = ctx.places.iter().any(|&(b, l)| addr >= b && addr < b + l);
            if !ctx.checkpointed {
                if in_code {
                    return Decision::Deferred { block: ctx.block, kind: spec.hit_action() };
                }
                continue;
            }
            if in_code || in_place {
                return Decision::Block { ctx: i, kind: spec.hit_action() };
            }
        }
        if let Some(b) = self.blocks.iter().position(|s| s.code.is_some_and(|(b, l)| addr >= b && addr < b + l)) {
            return Decision::Deferred { block: b, kind: self.blocks[b].hit_action() };
        }
        let Some(hit) = self.drm.lookup(addr) else { return Decision::Terminate };
        let entry = self.drm.get(hit.entry).expect("indexed entry");
        match &entry.policy {
            Policy::Tolerant(mask) => {
                let es = entry.element.bytes();
                let element_offset = hit.offset - hit.offset % es;
                let bit_in_elem = ((hit.offset % es) * 8) as u32 + u32::from(bit);
                let kind = if mask.is_full_elision() {
                    ActionKind::Elide
                } else if mask.is_error_elidable(bit_in_elem) {
                    if entry.element.is_float() {
                        ActionKind::Coerce
                    } else {
                        ActionKind::MaskReset
                    }
                } else {
                    return Decision::Terminate;
                };
                Decision::Tolerant { entry: hit.entry, kind, element_offset }
            }
            Policy::Robust(Strength::Correct) => Decision::Vote { entry: hit.entry },
            Policy::Robust(Strength::Detect) => Decision::Detect { entry: hit.entry },
            Policy::Heal(_) => Decision::Heal { entry: hit.entry },
        }
    }

    /// Where an unresolved mismatch goes: a redundant block re-executes, a
    /// block that can fall back does so, anything else terminates.
    pub fn escalate_mismatch(&self) -> Decision {
        let Some(ctx) = self.active.last() else { return Decision::Terminate };
        let spec = &self.blocks[ctx.block];
        let at = self.active.len() - 1;
        match spec.policy {
            BlockPolicy::Redundant(_) | BlockPolicy::DeclareRedundant(_) => Decision::Block { ctx: at, kind: spec.hit_action() },
            _ if spec.absorbs_mismatch() => Decision::Block { ctx: at, kind: ActionKind::IgnoreWithFallback },
            _ => Decision::Terminate,
        }
    }

    pub fn action_of(&self, d: &Decision) -> RecoveryAction {
        let entry_name = |e: &EntryId| self.drm.get(*e).map(|x| x.construct.clone()).unwrap_or_default();
        match d {
            Decision::Block { ctx, kind } => {
                RecoveryAction { kind: *kind, target: self.blocks[self.active[*ctx].block].id.clone() }
            }
            Decision::Deferred { block, kind } => RecoveryAction { kind: *kind, target: self.blocks[*block].id.clone() },
            Decision::Tolerant { entry, kind, .. } => RecoveryAction { kind: *kind, target: entry_name(entry) },
            Decision::Vote { entry } => RecoveryAction { kind: ActionKind::VoteCorrect, target: entry_name(entry) },
            Decision::Detect { entry } => RecoveryAction { kind: ActionKind::DetectReport, target: entry_name(entry) },
            Decision::Heal { entry } => RecoveryAction { kind: ActionKind::HealInvoke, target: entry_name(entry) },
            Decision::Terminate => RecoveryAction { kind: ActionKind::GracefulTerminate, target: String::new() },
        }
    }

    /// Snapshot the given ranges into the innermost context of `block`.
    pub fn checkpoint(&mut self, mem: &dyn Memory, block: usize, ranges: &[(u64, u64)]) -> bool {
        let Some(ctx) = self.active.iter_mut().rev().find(|c| c.block == block) else { return false };
        ctx.checkpoint = ranges.iter().filter_map(|&(a, l)| mem.snapshot(a, l)).collect();
        ctx.checkpointed = true;
        true
    }

    /// Restore the innermost checkpoint of `block`; `None` without a live context.
    pub fn restore(&mut self, mem: &mut dyn Memory, block: usize) -> Option<u64> {
        let ctx = self.active.iter().rev().find(|c| c.block == block)?;
        let mut bytes = 0;
        for s in &ctx.checkpoint {
            mem.restore(s);
            bytes += s.data.len() as u64;
        }
        self.events.push(RuntimeEvent::Restored { block: self.blocks[block].id.clone(), bytes });
        Some(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Flat byte store with every byte initialized.
    #[derive(Default)]
    struct Flat(HashMap<u64, u8>);

    impl Memory for Flat {
        fn snapshot(&self, addr: u64, len: u64) -> Option<Snapshot> {
            let data = (addr..addr + len).map(|a| self.0.get(&a).copied()).collect::<Option<Vec<_>>>()?;
            Some(Snapshot { addr, state: vec![2; data.len()], data })
        }
        fn restore(&mut self, s: &Snapshot) {
            for (i, b) in s.data.iter().enumerate() {
                self.0.insert(s.addr + i as u64, *b);
            }
        }
    }

    fn put(m: &mut Flat, addr: u64, v: u32) {
        for (i, b) in v.to_le_bytes().iter().enumerate() {
            m.0.insert(addr + i as u64, *b);
        }
    }

    fn get(m: &Flat, addr: u64) -> u32 {
        u32::from_le_bytes(std::array::from_fn(|i| m.0[&(addr + i as u64)]))
    }

    #[test]
    fn majority_overwrites_minority() {
        let mut m = Flat::default();
        for (base, v) in [(0x100, 5), (0x200, 5), (0x300, 9)] {
            put(&mut m, base, v);
        }
        let r = vote_and_repair(&mut m, &[(0x100, 4), (0x200, 4), (0x300, 4)], 4);
        assert_eq!(r, VoteResult::Corrected);
        assert_eq!(get(&m, 0x300), 5);
        assert_eq!(vote_and_repair(&mut m, &[(0x100, 4), (0x200, 4), (0x300, 4)], 4), VoteResult::Clean);
    }

    #[test]
    fn two_copies_only_detect() {
        let mut m = Flat::default();
        put(&mut m, 0x100, 5);
        put(&mut m, 0x200, 9);
        assert_eq!(vote_and_repair(&mut m, &[(0x100, 4), (0x200, 4)], 4), VoteResult::DetectedOnly);
        assert_eq!(get(&m, 0x200), 9);
    }

    #[test]
    fn three_way_disagreement_is_reported() {
        let mut m = Flat::default();
        for (base, v) in [(0x100, 1), (0x200, 2), (0x300, 3)] {
            put(&mut m, base, v);
        }
        assert_eq!(vote_and_repair(&mut m, &[(0x100, 4), (0x200, 4), (0x300, 4)], 4), VoteResult::DetectedOnly);
    }

    #[test]
    fn unregistered_address_terminates() {
        let rt = Runtime::default();
        assert_eq!(rt.decide(0x1234, 3), Decision::Terminate);
        assert_eq!(rt.action_of(&Decision::Terminate).kind, ActionKind::GracefulTerminate);
    }
}
