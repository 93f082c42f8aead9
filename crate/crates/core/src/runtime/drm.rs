//! Dynamic Resilience Map: address ranges of annotated objects and the
//! error-management knowledge attached to them.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bitmask::{ElementKind, ToleranceMask};
use crate::frontend::ast::Strength;

/// Error-management knowledge carried by one entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Tolerant(ToleranceMask),
    Robust(Strength),
    /// Heal qualifier or repairable allocation: recovery function name.
    Heal(String),
}

impl Policy {
    pub fn class_name(&self) -> &'static str {
        match self {
            Policy::Tolerant(_) => "tolerant",
            Policy::Robust(_) => "robust",
            Policy::Heal(_) => "heal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrmEntry {
    pub construct: String,
    /// One range per physical copy; robust entries hold `strength` equal-length ranges.
    pub ranges: Vec<(u64, u64)>,
    pub element: ElementKind,
    pub policy: Policy,
    pub dynamic: bool,
}

impl DrmEntry {
    pub fn len(&self) -> u64 {
        self.ranges.first().map_or(0, |r| r.1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn base(&self) -> u64 {
        self.ranges.first().map_or(0, |r| r.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DrmError {
    #[error("range {0:#x}+{1} of '{2}' overlaps an existing entry")]
    Overlap(u64, u64, String),
    #[error("unknown construct '{0}'")]
    UnknownConstruct(String),
    #[error("robust entry '{0}' needs equal-length ranges, one per copy")]
    BadReplicaRanges(String),
}

/// Handle of a registered entry.
pub type EntryId = usize;

#[derive(Debug, Clone, Default)]
pub struct Drm {
    entries: BTreeMap<EntryId, DrmEntry>,
    /// Range start -> (end exclusive, entry, copy index).
    index: BTreeMap<u64, (u64, EntryId, usize)>,
    next: EntryId,
}

/// Result of a point lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub entry: EntryId,
    pub copy: usize,
    /// Byte offset from the start of the hit copy.
    pub offset: u64,
}

impl Drm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, entry: DrmEntry) -> Result<EntryId, DrmError> {
        if let Policy::Robust(s) = entry.policy {
            let len = entry.len();
            if entry.ranges.len() != s.copies() || entry.ranges.iter().any(|r| r.1 != len) {
                return Err(DrmError::BadReplicaRanges(entry.construct));
            }
        }
        for (i, &(base, len)) in entry.ranges.iter().enumerate() {
            let end = base + len;
            let clash = self.index.range(..end).next_back().is_some_and(|(_, &(e, _, _))| e > base)
                || entry.ranges[..i].iter().any(|&(b, l)| b < end && base < b + l);
            if clash || len == 0 {
                return Err(DrmError::Overlap(base, len, entry.construct));
            }
        }
        let id = self.next;
        self.next += 1;
        for (copy, &(base, len)) in entry.ranges.iter().enumerate() {
            self.index.insert(base, (base + len, id, copy));
        }
        self.entries.insert(id, entry);
        Ok(id)
    }

    pub fn deregister(&mut self, id: EntryId) -> Result<DrmEntry, DrmError> {
        let entry = self.entries.remove(&id).ok_or_else(|| DrmError::UnknownConstruct(format!("#{id}")))?;
        for (base, _) in &entry.ranges {
            self.index.remove(base);
        }
        Ok(entry)
    }

    /// Remove the entry registered under a construct name.
    pub fn deregister_construct(&mut self, construct: &str) -> Result<DrmEntry, DrmError> {
        let id = self
            .entries
            .iter()
            .find(|(_, e)| e.construct == construct)
            .map(|(id, _)| *id)
            .ok_or_else(|| DrmError::UnknownConstruct(construct.to_string()))?;
        self.deregister(id)
    }

    pub fn lookup(&self, addr: u64) -> Option<Hit> {
        let (&start, &(end, entry, copy)) = self.index.range(..=addr).next_back()?;
        (addr < end).then_some(Hit { entry, copy, offset: addr - start })
    }

    pub fn get(&self, id: EntryId) -> Option<&DrmEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (EntryId, &DrmEntry)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn find(&self, construct: &str) -> Option<EntryId> {
        self.entries.iter().find(|(_, e)| e.construct == construct).map(|(id, _)| *id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitmask::derive_mask;

    fn tol(name: &str, base: u64, len: u64) -> DrmEntry {
        DrmEntry {
            construct: name.into(),
            ranges: vec![(base, len)],
            element: ElementKind::U32,
            policy: Policy::Tolerant(derive_mask(ElementKind::U32, None).unwrap()),
            dynamic: true,
        }
    }

    #[test]
    fn interior_lookup_and_deregister() {
        let mut d = Drm::new();
        let id = d.register(tol("t", 0x1000, 64)).unwrap();
        assert_eq!(d.lookup(0x1020), Some(Hit { entry: id, copy: 0, offset: 0x20 }));
        assert_eq!(d.lookup(0x1040), None);
        assert_eq!(d.lookup(0xfff), None);
        d.deregister(id).unwrap();
        assert_eq!(d.lookup(0x1020), None);
        assert!(d.deregister(id).is_err());
    }

    #[test]
    fn one_shared_byte_overlaps() {
        let mut d = Drm::new();
        d.register(tol("a", 0x1000, 16)).unwrap();
        assert!(matches!(d.register(tol("b", 0x100f, 4)), Err(DrmError::Overlap(..))));
        assert!(matches!(d.register(tol("c", 0xff0, 0x11)), Err(DrmError::Overlap(..))));
        d.register(tol("d", 0x1010, 4)).unwrap();
        d.register(tol("e", 0xff0, 0x10)).unwrap();
    }

    #[test]
    fn robust_ranges_must_match_strength() {
        let mut d = Drm::new();
        let mut e = tol("r", 0x2000, 8);
        e.policy = Policy::Robust(Strength::Correct);
        assert!(d.register(e.clone()).is_err());
        e.ranges = vec![(0x2000, 8), (0x3000, 8), (0x4000, 8)];
        let id = d.register(e).unwrap();
        assert_eq!(d.lookup(0x3004), Some(Hit { entry: id, copy: 1, offset: 4 }));
    }
}
