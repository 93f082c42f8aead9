//! Simulated byte-addressable address space with per-byte validity tracking.

use std::collections::BTreeMap;

use super::value::{Sty, Val};
use crate::runtime::{Memory, Snapshot};

pub const STATIC_BASE: u64 = 0x0001_0000;
pub const CODE_BASE: u64 = 0x0080_0000;
pub const HEAP_BASE: u64 = 0x0100_0000;
pub const HEAP_LIMIT: u64 = 64 << 20;
pub const STACK_BASE: u64 = 0x7000_0000;
pub const STACK_LIMIT: u64 = 8 << 20;
/// Unmapped gap kept between heap blocks so small overruns fault.
pub const RED_ZONE: u64 = 16;

pub const INVALID: u8 = 0;
pub const UNINIT: u8 = 1;
pub const INIT: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Static,
    Code,
    Heap,
    Stack,
}

impl SegmentKind {
    pub fn name(self) -> &'static str {
        match self {
            SegmentKind::Static => "static",
            SegmentKind::Code => "code",
            SegmentKind::Heap => "heap",
            SegmentKind::Stack => "stack",
        }
    }

    pub fn parse(s: &str) -> Option<SegmentKind> {
        [SegmentKind::Static, SegmentKind::Code, SegmentKind::Heap, SegmentKind::Stack].into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessFault {
    Invalid(u64),
    Uninit(u64),
}

#[derive(Debug, Clone, Default)]
pub struct Segment {
    pub base: u64,
    pub data: Vec<u8>,
    pub state: Vec<u8>,
}

impl Segment {
    fn new(base: u64) -> Self {
        Segment { base, data: Vec::new(), state: Vec::new() }
    }

    #[inline]
    fn offset(&self, addr: u64, len: u64) -> Option<usize> {
        let off = addr.checked_sub(self.base)?;
        (off.checked_add(len)? <= self.data.len() as u64).then_some(off as usize)
    }

    fn grow_to(&mut self, len: usize) {
        if self.data.len() < len {
            self.data.resize(len, 0);
            self.state.resize(len, INVALID);
        }
    }
}

#[derive(Debug, Clone)]
pub struct AddressSpace {
    pub statics: Segment,
    pub heap: Segment,
    pub stack: Segment,
    /// Total length of the synthetic instruction-memory segment.
    pub code_len: u64,
    heap_top: u64,
    stack_top: u64,
    /// Live heap blocks: base -> length.
    blocks: BTreeMap<u64, u64>,
}

impl AddressSpace {
    pub fn new(statics: Segment, code_len: u64, heap_start: u64) -> Self {
        AddressSpace {
            statics,
            heap: Segment::new(HEAP_BASE),
            stack: Segment::new(STACK_BASE),
            code_len,
            heap_top: heap_start,
            stack_top: STACK_BASE,
            blocks: BTreeMap::new(),
        }
    }

    pub fn static_segment(base: u64, len: usize) -> Segment {
        Segment { base, data: vec![0; len], state: vec![INVALID; len] }
    }

    pub fn segment_of(&self, addr: u64) -> Option<SegmentKind> {
        if self.statics.offset(addr, 1).is_some() {
            Some(SegmentKind::Static)
        } else if addr >= CODE_BASE && addr < CODE_BASE + self.code_len {
            Some(SegmentKind::Code)
        } else if self.heap.offset(addr, 1).is_some() {
            Some(SegmentKind::Heap)
        } else if self.stack.offset(addr, 1).is_some() {
            Some(SegmentKind::Stack)
        } else {
            None
        }
    }

    #[inline]
    fn seg(&self, addr: u64, len: u64) -> Option<(&Segment, usize)> {
        if addr >= STACK_BASE {
            self.stack.offset(addr, len).map(|o| (&self.stack, o))
        } else if addr >= HEAP_BASE {
            self.heap.offset(addr, len).map(|o| (&self.heap, o))
        } else {
            self.statics.offset(addr, len).map(|o| (&self.statics, o))
        }
    }

    #[inline]
    fn seg_mut(&mut self, addr: u64, len: u64) -> Option<(&mut Segment, usize)> {
        if addr >= STACK_BASE {
            self.stack.offset(addr, len).map(|o| (&mut self.stack, o))
        } else if addr >= HEAP_BASE {
            self.heap.offset(addr, len).map(|o| (&mut self.heap, o))
        } else {
            self.statics.offset(addr, len).map(|o| (&mut self.statics, o))
        }
    }

    #[inline]
    pub fn load(&self, addr: u64, ty: Sty) -> Result<Val, AccessFault> {
        let n = ty.size();
        let (seg, off) = self.seg(addr, n).ok_or(AccessFault::Invalid(addr))?;
        let n = n as usize;
        for (i, &s) in seg.state[off..off + n].iter().enumerate() {
            if s != INIT {
                let at = addr + i as u64;
                return Err(if s == INVALID { AccessFault::Invalid(at) } else { AccessFault::Uninit(at) });
            }
        }
        let mut raw = [0u8; 8];
        raw[..n].copy_from_slice(&seg.data[off..off + n]);
        Ok(Val::from_bits(ty, u64::from_le_bytes(raw)))
    }

    #[inline]
    pub fn store(&mut self, addr: u64, v: Val) -> Result<(), AccessFault> {
        let n = v.ty().size();
        let (seg, off) = self.seg_mut(addr, n).ok_or(AccessFault::Invalid(addr))?;
        let n = n as usize;
        if let Some(i) = seg.state[off..off + n].iter().position(|&s| s == INVALID) {
            return Err(AccessFault::Invalid(addr + i as u64));
        }
        seg.data[off..off + n].copy_from_slice(&v.bits().to_le_bytes()[..n]);
        seg.state[off..off + n].fill(INIT);
        Ok(())
    }

    /// Flip one bit of stored data. Code and invalid bytes are left untouched.
    pub fn flip_bit(&mut self, addr: u64, bit: u8) -> bool {
        match self.seg_mut(addr, 1) {
            Some((seg, off)) if seg.state[off] != INVALID => {
                seg.data[off] ^= 1 << (bit & 7);
                true
            }
            _ => false,
        }
    }

    pub fn byte_state(&self, addr: u64) -> u8 {
        self.seg(addr, 1).map_or(INVALID, |(s, o)| s.state[o])
    }

    pub fn alloc(&mut self, len: u64) -> Option<u64> {
        if len == 0 {
            return None;
        }
        let base = self.heap_top;
        let end = base.checked_add(len)?;
        if end + RED_ZONE - HEAP_BASE > HEAP_LIMIT {
            return None;
        }
        self.heap.grow_to((end + RED_ZONE - HEAP_BASE) as usize);
        let off = (base - HEAP_BASE) as usize;
        self.heap.state[off..off + len as usize].fill(UNINIT);
        self.heap_top = (end + RED_ZONE + 15) & !15;
        self.blocks.insert(base, len);
        Some(base)
    }

    pub fn free(&mut self, base: u64) -> bool {
        let Some(len) = self.blocks.remove(&base) else { return false };
        let off = (base - HEAP_BASE) as usize;
        self.heap.state[off..off + len as usize].fill(INVALID);
        true
    }

    pub fn heap_blocks(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.blocks.iter().map(|(b, l)| (*b, *l))
    }

    /// Push a stack frame of `len` bytes, all uninitialized.
    pub fn push_frame(&mut self, len: u64) -> Option<u64> {
        let base = self.stack_top;
        let end = (base + len.max(8) + 7) & !7;
        if end - STACK_BASE > STACK_LIMIT {
            return None;
        }
        self.stack.grow_to((end - STACK_BASE) as usize);
        let off = (base - STACK_BASE) as usize;
        self.stack.state[off..(end - STACK_BASE) as usize].fill(UNINIT);
        self.stack_top = end;
        Some(base)
    }

    /// Pop every frame at or above `base`.
    pub fn pop_frame(&mut self, base: u64) {
        let off = (base - STACK_BASE) as usize;
        let top = (self.stack_top - STACK_BASE) as usize;
        self.stack.state[off..top].fill(INVALID);
        self.stack_top = base;
    }
}

impl Memory for AddressSpace {
    fn snapshot(&self, addr: u64, len: u64) -> Option<Snapshot> {
        let (seg, off) = self.seg(addr, len)?;
        let n = len as usize;
        Some(Snapshot { addr, data: seg.data[off..off + n].to_vec(), state: seg.state[off..off + n].to_vec() })
    }

    fn restore(&mut self, snap: &Snapshot) {
        if let Some((seg, off)) = self.seg_mut(snap.addr, snap.data.len() as u64) {
            let n = snap.data.len();
            seg.data[off..off + n].copy_from_slice(&snap.data);
            seg.state[off..off + n].copy_from_slice(&snap.state);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> AddressSpace {
        let mut s = AddressSpace::static_segment(STATIC_BASE, 64);
        s.state[..16].fill(UNINIT);
        AddressSpace::new(s, 0, HEAP_BASE)
    }

    #[test]
    fn uninit_then_store_then_load() {
        let mut m = space();
        assert_eq!(m.load(STATIC_BASE, Sty::I32), Err(AccessFault::Uninit(STATIC_BASE)));
        m.store(STATIC_BASE, Val::I32(-7)).unwrap();
        assert_eq!(m.load(STATIC_BASE, Sty::I32), Ok(Val::I32(-7)));
        assert_eq!(m.load(STATIC_BASE + 16, Sty::I32), Err(AccessFault::Invalid(STATIC_BASE + 16)));
        assert!(m.store(0x10, Val::I32(1)).is_err());
    }

    #[test]
    fn heap_blocks_are_separated_and_freed() {
        let mut m = space();
        let a = m.alloc(12).unwrap();
        let b = m.alloc(4).unwrap();
        assert!(b >= a + 12 + RED_ZONE);
        m.store(a + 8, Val::U32(3)).unwrap();
        assert!(m.store(a + 12, Val::U32(3)).is_err());
        assert!(m.free(a));
        assert_eq!(m.load(a + 8, Sty::U32), Err(AccessFault::Invalid(a + 8)));
        assert!(!m.free(a));
    }

    #[test]
    fn flip_changes_one_bit() {
        let mut m = space();
        m.store(STATIC_BASE, Val::U32(0)).unwrap();
        assert!(m.flip_bit(STATIC_BASE + 1, 3));
        assert_eq!(m.load(STATIC_BASE, Sty::U32), Ok(Val::U32(1 << 11)));
    }

    #[test]
    fn frames_invalidate_on_pop() {
        let mut m = space();
        let f = m.push_frame(16).unwrap();
        m.store(f, Val::F64(1.5)).unwrap();
        m.pop_frame(f);
        assert!(m.load(f, Sty::F64).is_err());
    }
}
