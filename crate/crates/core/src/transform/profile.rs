//! Resilience profile: one record per annotated construct, serialized as a
//! line-oriented text file read back by the loader.

use std::fmt;

use thiserror::Error;

use crate::bitmask::{ElementKind, ToleranceMask};
use crate::frontend::ast::Strength;

pub const PROFILE_HEADER: &str = "ROLEXPROFILE 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    Tolerant,
    Robust,
    Heal,
    TolerantHeap,
    RobustHeap,
    RepairableHeap,
    Block,
}

impl RecordKind {
    pub fn keyword(self) -> &'static str {
        match self {
            RecordKind::Tolerant => "TOLERANT",
            RecordKind::Robust => "ROBUST",
            RecordKind::Heal => "HEAL",
            RecordKind::TolerantHeap => "TOLERANTHEAP",
            RecordKind::RobustHeap => "ROBUSTHEAP",
            RecordKind::RepairableHeap => "REPAIRABLEHEAP",
            RecordKind::Block => "BLOCK",
        }
    }

    fn parse(s: &str) -> Option<RecordKind> {
        [
            RecordKind::Tolerant,
            RecordKind::Robust,
            RecordKind::Heal,
            RecordKind::TolerantHeap,
            RecordKind::RobustHeap,
            RecordKind::RepairableHeap,
            RecordKind::Block,
        ]
        .into_iter()
        .find(|k| k.keyword() == s)
    }

    pub fn is_heap(self) -> bool {
        matches!(self, RecordKind::TolerantHeap | RecordKind::RobustHeap | RecordKind::RepairableHeap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockPolicy {
    Rollback,
    Rollforward,
    /// Robust directive: redundant execution of the block.
    Redundant(Strength),
    /// `declare resilient retry`
    Retry,
    /// `declare resilient ignore`
    Ignore,
    /// `declare resilient robust(...)`
    DeclareRedundant(Strength),
}

impl BlockPolicy {
    pub fn keyword(self) -> &'static str {
        match self {
            BlockPolicy::Rollback => "rollback",
            BlockPolicy::Rollforward => "rollforward",
            BlockPolicy::Redundant(Strength::Detect) => "robust-detect",
            BlockPolicy::Redundant(Strength::Correct) => "robust-correct",
            BlockPolicy::Retry => "retry",
            BlockPolicy::Ignore => "ignore",
            BlockPolicy::DeclareRedundant(Strength::Detect) => "declare-robust-detect",
            BlockPolicy::DeclareRedundant(Strength::Correct) => "declare-robust-correct",
        }
    }

    fn parse(s: &str) -> Option<BlockPolicy> {
        use Strength::*;
        Some(match s {
            "rollback" => BlockPolicy::Rollback,
            "rollforward" => BlockPolicy::Rollforward,
            "robust-detect" => BlockPolicy::Redundant(Detect),
            "robust-correct" => BlockPolicy::Redundant(Correct),
            "retry" => BlockPolicy::Retry,
            "ignore" => BlockPolicy::Ignore,
            "declare-robust-detect" => BlockPolicy::DeclareRedundant(Detect),
            "declare-robust-correct" => BlockPolicy::DeclareRedundant(Correct),
            _ => return None,
        })
    }

    /// Declare-directive policies guard a whole function.
    pub fn is_declare(self) -> bool {
        matches!(self, BlockPolicy::Retry | BlockPolicy::Ignore | BlockPolicy::DeclareRedundant(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockInfo {
    pub share: Vec<String>,
    pub private: Vec<String>,
    pub compare: Vec<String>,
    pub reinitialize: Vec<String>,
    pub ameliorate: Option<String>,
    /// An explicit `fallback(...)` clause was given.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileRecord {
    pub kind: RecordKind,
    pub id: String,
    /// `None` only for block records.
    pub element: Option<ElementKind>,
    pub mask: Option<ToleranceMask>,
    pub strength: Option<Strength>,
    pub recovery_fn: Option<String>,
    pub policy: Option<BlockPolicy>,
    pub block: BlockInfo,
}

impl ProfileRecord {
    pub fn new(kind: RecordKind, id: impl Into<String>, element: Option<ElementKind>) -> Self {
        ProfileRecord {
            kind,
            id: id.into(),
            element,
            mask: None,
            strength: None,
            recovery_fn: None,
            policy: None,
            block: BlockInfo::default(),
        }
    }

    /// Whether this construct is a global object (no `function::` prefix).
    pub fn is_global(&self) -> bool {
        !self.id.contains("::")
    }
}

fn strength_word(s: Strength) -> &'static str {
    match s {
        Strength::Detect => "detect",
        Strength::Correct => "correct",
    }
}

impl fmt::Display for ProfileRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let elem = self.element.map(|e| e.name()).unwrap_or("-");
        write!(f, "{} {} {}", self.kind.keyword(), self.id, elem)?;
        match self.kind {
            RecordKind::Tolerant | RecordKind::TolerantHeap => match &self.mask {
                Some(m) if !m.is_full_elision() => write!(f, " mask={}", m.hex())?,
                _ => f.write_str(" mask=none")?,
            },
            RecordKind::Robust | RecordKind::RobustHeap => {
                write!(f, " strength={}", strength_word(self.strength.unwrap_or(Strength::Correct)))?
            }
            RecordKind::Heal | RecordKind::RepairableHeap => {
                write!(f, " fn={}", self.recovery_fn.as_deref().unwrap_or("-"))?
            }
            RecordKind::Block => {
                if let Some(p) = self.policy {
                    write!(f, " policy={}", p.keyword())?;
                }
                let b = &self.block;
                for (key, list) in
                    [("share", &b.share), ("private", &b.private), ("compare", &b.compare), ("reinit", &b.reinitialize)]
                {
                    if !list.is_empty() {
                        write!(f, " {key}={}", list.join(","))?;
                    }
                }
                if let Some(a) = &b.ameliorate {
                    write!(f, " amel={a}")?;
                }
                if b.fallback {
                    f.write_str(" fallback=yes")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Profile {
    pub records: Vec<ProfileRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("profile line {line}: {message}")]
pub struct ProfileError {
    pub line: usize,
    pub message: String,
}

impl Profile {
    pub fn find(&self, id: &str) -> Option<&ProfileRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ProfileRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Block)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(PROFILE_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Profile, ProfileError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, PROFILE_HEADER)) => {}
            _ => return Err(ProfileError { line: 1, message: format!("expected header '{PROFILE_HEADER}'") }),
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let bad = |m: String| ProfileError { line: lineno, message: m };
            let mut parts = line.split_whitespace();
            let (Some(kw), Some(id), Some(elem)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("record needs kind, id and element kind".into()));
            };
            let kind = RecordKind::parse(kw).ok_or_else(|| bad(format!("unknown record kind '{kw}'")))?;
            let element = if elem == "-" {
                None
            } else {
                Some(ElementKind::parse(elem).ok_or_else(|| bad(format!("unknown element kind '{elem}'")))?)
            };
            let mut rec = ProfileRecord::new(kind, id, element);
            for kv in parts {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("malformed field '{kv}'")))?;
                let list = || v.split(',').map(str::to_string).collect::<Vec<_>>();
                match k {
                    "mask" => {
                        let ek = element.ok_or_else(|| bad("mask without element kind".into()))?;
                        rec.mask = Some(if v == "none" {
                            crate::bitmask::derive_mask(ek, None).map_err(|e| bad(e.to_string()))?
                        } else {
                            let keep = u64::from_str_radix(v, 16).map_err(|_| bad(format!("bad mask '{v}'")))?;
                            ToleranceMask::from_keep(ek, keep).map_err(|e| bad(e.to_string()))?
                        });
                    }
                    "strength" => {
                        rec.strength = Some(match v {
                            "detect" => Strength::Detect,
                            "correct" => Strength::Correct,
                            _ => return Err(bad(format!("bad strength '{v}'"))),
                        })
                    }
                    "fn" => rec.recovery_fn = Some(v.to_string()),
                    "policy" => {
                        rec.policy = Some(BlockPolicy::parse(v).ok_or_else(|| bad(format!("bad policy '{v}'")))?)
                    }
                    "share" => rec.block.share = list(),
                    "private" => rec.block.private = list(),
                    "compare" => rec.block.compare = list(),
                    "reinit" => rec.block.reinitialize = list(),
                    "amel" => rec.block.ameliorate = Some(v.to_string()),
                    "fallback" => rec.block.fallback = v == "yes",
                    _ => return Err(bad(format!("unknown field '{k}'"))),
                }
            }
            if records.iter().any(|r: &ProfileRecord| r.id == rec.id) {
                return Err(bad(format!("duplicate construct id '{}'", rec.id)));
            }
            records.push(rec);
        }
        Ok(Profile { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitmask::{derive_mask, ToleranceLimit};

    #[test]
    fn tolerant_record_text() {
        let mut r = ProfileRecord::new(RecordKind::Tolerant, "counter", Some(ElementKind::U32));
        r.mask = Some(derive_mask(ElementKind::U32, Some(ToleranceLimit::Maximus(1023))).unwrap());
        assert_eq!(r.to_string(), "TOLERANT counter U32 mask=000003ff");
    }

    #[test]
    fn round_trip() {
        let mut heal = ProfileRecord::new(RecordKind::Heal, "matrix_A", Some(ElementKind::F32));
        heal.recovery_fn = Some("recovery_func".into());
        let mut blk = ProfileRecord::new(RecordKind::Block, "__rolex_blk_0", None);
        blk.policy = Some(BlockPolicy::Rollback);
        blk.block.share = vec!["a".into(), "b".into()];
        blk.block.private = vec!["t".into()];
        blk.block.ameliorate = Some("fix".into());
        let mut tol = ProfileRecord::new(RecordKind::TolerantHeap, "main::t", Some(ElementKind::F64));
        tol.mask = Some(derive_mask(ElementKind::F64, None).unwrap());
        let p = Profile { records: vec![heal, blk, tol] };
        let text = p.to_text();
        assert!(text.starts_with("ROLEXPROFILE 1\nHEAL matrix_A F32 fn=recovery_func\n"));
        assert_eq!(Profile::parse(&text).unwrap(), p);
    }

    #[test]
    fn empty_profile_is_header_only() {
        assert_eq!(Profile::default().to_text(), "ROLEXPROFILE 1\n");
    }
}
