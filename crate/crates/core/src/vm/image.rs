//! Load-time layout: global placement, static initial contents, lowered code
//! and the DRM entries known before execution starts.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lower::{lower_global_init, lower_program, Code, Env};
use super::memory::{AddressSpace, Segment, CODE_BASE, HEAP_BASE, INIT, STATIC_BASE};
use super::value::Sty;
use super::LoadError;
use crate::bitmask::derive_mask;
use crate::frontend::ast::{Program, Type};
use crate::runtime::{DrmEntry, Policy};
use crate::transform::{replica_name, Profile, RecordKind, TransformedProgram};

/// Bytes of synthetic instruction memory per lowered instruction.
pub const INSTR_BYTES: u64 = 16;

/// A program ready to execute: immutable and shared by every run of a campaign.
#[derive(Debug, Clone)]
pub struct Image {
    pub code: Code,
    pub profile: Profile,
    pub globals: HashMap<String, (u64, Type)>,
    /// Placed globals as (name, address, size), in address order.
    pub layout: Vec<(String, u64, u64)>,
    pub statics: Segment,
    pub code_len: u64,
    /// Instruction-memory range of each profile block, indexed like the runtime's blocks.
    pub block_code: Vec<Option<(u64, u64)>>,
    pub heap_start: u64,
    pub static_entries: Vec<DrmEntry>,
    pub main: usize,
    pub main_params: Vec<Sty>,
}

impl Image {
    pub fn build(program: &Program, profile: &Profile, layout_seed: u64) -> Result<Image, LoadError> {
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        let decls: Vec<_> = program.globals().collect();
        let mut order: Vec<usize> = (0..decls.len()).collect();
        order.shuffle(&mut rng);

        let mut at = STATIC_BASE + 16;
        let mut layout = Vec::new();
        let mut globals = HashMap::new();
        for i in order {
            let d = decls[i];
            if d.ty.size() == 0 {
                return Err(LoadError(format!("{}: global '{}' has no storage", d.pos, d.name)));
            }
            at = (at + 7) & !7;
            layout.push((d.name.clone(), at, d.ty.size()));
            globals.insert(d.name.clone(), (at, d.ty.clone()));
            at += d.ty.size() + 16 + 8 * rng.gen_range(0..4u64);
        }
        let mut statics = AddressSpace::static_segment(STATIC_BASE, (at - STATIC_BASE) as usize);
        for (_, addr, size) in &layout {
            let off = (addr - STATIC_BASE) as usize;
            statics.state[off..off + *size as usize].fill(INIT);
        }

        let blocks: HashMap<String, usize> = profile.blocks().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let records: HashMap<String, usize> =
            profile.records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let env = Env { globals: &globals, blocks: &blocks, records: &records };

        for d in &decls {
            let Some(init) = &d.init else { continue };
            let base = globals[&d.name].0;
            for (off, v) in lower_global_init(init, &d.ty, d.pos, &env)? {
                let o = (base + off - STATIC_BASE) as usize;
                let n = v.ty().size() as usize;
                statics.data[o..o + n].copy_from_slice(&v.bits().to_le_bytes()[..n]);
            }
        }

        let code = lower_program(program, &env)?;
        let main = *code.index.get("main").ok_or_else(|| LoadError("program has no main function".into()))?;
        let main_params = code.funcs[main].params.iter().map(|p| p.1).collect();

        let mut block_code = vec![None; blocks.len()];
        let mut block_funcs: Vec<(usize, usize)> =
            blocks.iter().filter_map(|(id, &b)| code.index.get(id).map(|&f| (b, f))).collect();
        block_funcs.sort_unstable();
        block_funcs.shuffle(&mut rng);
        let mut code_len = 0;
        for (b, f) in block_funcs {
            let len = code.funcs[f].instrs.len() as u64 * INSTR_BYTES;
            block_code[b] = Some((CODE_BASE + code_len, len));
            code_len += len + INSTR_BYTES;
        }
        for r in profile.blocks() {
            if !code.index.contains_key(&r.id) {
                return Err(LoadError(format!("profile block '{}' has no function in the program", r.id)));
            }
        }

        let mut static_entries = Vec::new();
        for r in profile.records.iter().filter(|r| r.is_global() && !r.kind.is_heap()) {
            let policy = match r.kind {
                RecordKind::Tolerant => Policy::Tolerant(match r.mask {
                    Some(m) => m,
                    None => derive_mask(r.element.expect("element"), None).map_err(|e| LoadError(e.to_string()))?,
                }),
                RecordKind::Robust => Policy::Robust(r.strength.unwrap_or(crate::frontend::ast::Strength::Correct)),
                RecordKind::Heal => Policy::Heal(r.recovery_fn.clone().unwrap_or_default()),
                _ => continue,
            };
            let copies = match &policy {
                Policy::Robust(s) => s.copies(),
                _ => 1,
            };
            let mut ranges = Vec::new();
            for k in 0..copies {
                let name = if k == 0 { r.id.clone() } else { replica_name(&r.id, k) };
                let (addr, ty) = globals
                    .get(&name)
                    .ok_or_else(|| LoadError(format!("profile names global '{name}' that the program lacks")))?;
                ranges.push((*addr, ty.size()));
            }
            let element = r.element.ok_or_else(|| LoadError(format!("record '{}' has no element type", r.id)))?;
            static_entries.push(DrmEntry { construct: r.id.clone(), ranges, element, policy, dynamic: false });
        }

        let heap_start = HEAP_BASE + 16 * rng.gen_range(0..16u64);
        Ok(Image {
            code,
            profile: profile.clone(),
            globals,
            layout,
            statics,
            code_len,
            block_code,
            heap_start,
            static_entries,
            main,
            main_params,
        })
    }

    pub fn from_transformed(t: &TransformedProgram, layout_seed: u64) -> Result<Image, LoadError> {
        Image::build(&t.program, &t.profile, layout_seed)
    }
}
