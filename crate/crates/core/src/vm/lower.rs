//! Lowering of a laid-out RC program into typed, flat instruction lists.
//! Every instruction costs one VM step; calls are hoisted into frame temps
//! so an instruction never suspends mid-expression.

use std::collections::HashMap;

use super::value::{Sty, Val};
use super::LoadError;
use crate::frontend::ast::*;

#[derive(Debug, Clone, PartialEq)]
pub enum TAddr {
    Abs(u64),
    Frame(u64),
    /// Address held by a pointer-valued expression.
    Dyn(Box<TExpr>),
    /// Bounds-checked element of a fixed-size array.
    Index { base: Box<TAddr>, idx: Box<TExpr>, size: u64, len: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TExpr {
    Const(Val),
    Load(Box<TAddr>, Sty),
    Addr(Box<TAddr>),
    Neg(Box<TExpr>),
    BitNot(Box<TExpr>),
    Not(Box<TExpr>),
    /// Arithmetic or comparison on operands of one common type.
    Bin(BinaryOp, Box<TExpr>, Box<TExpr>),
    Shift(BinaryOp, Box<TExpr>, Box<TExpr>),
    And(Box<TExpr>, Box<TExpr>),
    Or(Box<TExpr>, Box<TExpr>),
    Conv(Box<TExpr>, Sty),
    /// Pointer plus a signed element count times `scale` bytes.
    PtrAdd(Box<TExpr>, Box<TExpr>, i64),
    PtrDiff(Box<TExpr>, Box<TExpr>, u64),
    Sqrt(Box<TExpr>),
    Fabs(Box<TExpr>),
    IsNan(Box<TExpr>),
    Icv(usize),
    Replica(Box<TExpr>, Box<TExpr>),
}

/// A memory range named by a place expression.
#[derive(Debug, Clone, PartialEq)]
pub struct TPlace {
    pub addr: TAddr,
    pub len: u64,
    pub elem: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dest {
    pub addr: TAddr,
    pub ty: Sty,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrintArg {
    Str(String),
    Val(TExpr),
}

/// Runtime-library operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Rt {
    Nop,
    Preserve { block: usize, places: Vec<TPlace>, pad: usize, reentry: usize },
    Checkpoint { block: usize, places: Vec<TPlace> },
    JmpFwd { block: usize, target: usize },
    Restore { block: usize },
    JmpBack { block: usize, amel: Option<TExpr> },
    Copy { dst: TPlace, src: TPlace },
    Compare { places: Vec<TPlace>, dest: Option<Dest> },
    ValidateHeap { ptr: TExpr, dest: Option<Dest> },
    Alloc { size: TExpr, record: usize, dest: Option<Dest> },
    Malloc { size: TExpr, dest: Option<Dest> },
    Free(TExpr),
    Heal { ptr: TExpr, dest: Option<Dest> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instr {
    Store { addr: TAddr, value: TExpr },
    Fill { addr: TAddr, items: Vec<(u64, TExpr)> },
    Eval(TExpr),
    Call { func: usize, args: Vec<TExpr>, dest: Option<Dest> },
    Jump(usize),
    BranchFalse { cond: TExpr, target: usize },
    Return(Option<TExpr>),
    Print(Vec<PrintArg>),
    Rt(Rt),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncCode {
    pub name: String,
    /// Frame offset and storage type of each parameter; arrays arrive as pointers.
    pub params: Vec<(u64, Sty)>,
    pub frame_size: u64,
    pub ret: Option<Sty>,
    pub instrs: Vec<Instr>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Code {
    pub funcs: Vec<FuncCode>,
    pub index: HashMap<String, usize>,
}

/// Names resolved before lowering.
pub struct Env<'a> {
    pub globals: &'a HashMap<String, (u64, Type)>,
    pub blocks: &'a HashMap<String, usize>,
    pub records: &'a HashMap<String, usize>,
}

struct Sig {
    idx: usize,
    ret: Type,
    params: Vec<Type>,
}

pub fn lower_program(program: &Program, env: &Env) -> Result<Code, LoadError> {
    let defined: Vec<&Function> = program.functions().filter(|f| f.body.is_some()).collect();
    let sigs: HashMap<String, Sig> = defined
        .iter()
        .enumerate()
        .map(|(idx, f)| (f.name.clone(), Sig { idx, ret: f.ret.clone(), params: f.params.iter().map(|p| p.ty.clone()).collect() }))
        .collect();
    let mut code = Code::default();
    for f in defined {
        let mut l = FnLower {
            env,
            sigs: &sigs,
            code: Vec::new(),
            scopes: vec![HashMap::new()],
            frame: 0,
            ret: f.ret.clone(),
            loops: Vec::new(),
            preserve_at: HashMap::new(),
            fwd_at: HashMap::new(),
        };
        let mut params = Vec::new();
        for p in &f.params {
            let (size, sty) = match &p.ty {
                Type::Array(..) => (8, Sty::Ptr),
                t => (t.size(), Sty::of(t).ok_or_else(|| err(f.pos, format!("parameter '{}' has no storage type", p.name)))?),
            };
            let off = l.slot(size);
            l.scopes[0].insert(p.name.clone(), Local { off, ty: p.ty.clone(), by_ref: p.ty.is_array() });
            params.push((off, sty));
        }
        l.stmts(f.body.as_deref().unwrap_or_default())?;
        let tail = match Sty::of(&f.ret) {
            Some(s) => Some(TExpr::Const(Val::zero(s))),
            None => None,
        };
        l.code.push(Instr::Return(tail));
        code.index.insert(f.name.clone(), code.funcs.len());
        code.funcs.push(FuncCode { name: f.name.clone(), params, frame_size: l.frame, ret: Sty::of(&f.ret), instrs: l.code });
    }
    Ok(code)
}

/// Constant contents of a global initializer as (byte offset, value) pairs.
pub fn lower_global_init(init: &Init, ty: &Type, pos: Pos, env: &Env) -> Result<Vec<(u64, Val)>, LoadError> {
    let sigs = HashMap::new();
    let mut l = FnLower {
        env,
        sigs: &sigs,
        code: Vec::new(),
        scopes: vec![HashMap::new()],
        frame: 0,
        ret: Type::Void,
        loops: Vec::new(),
        preserve_at: HashMap::new(),
        fwd_at: HashMap::new(),
    };
    let mut items = Vec::new();
    l.flatten_init(init, ty, 0, pos, &mut items)?;
    if !l.code.is_empty() {
        return Err(err(pos, "global initializer must be a constant expression"));
    }
    items
        .into_iter()
        .map(|(off, e)| const_eval(&e).map(|v| (off, v)).ok_or_else(|| err(pos, "global initializer must be a constant expression")))
        .collect()
}

fn err(pos: Pos, msg: impl Into<String>) -> LoadError {
    LoadError(format!("{pos}: {}", msg.into()))
}

/// Fold an expression that touches no memory.
pub fn const_eval(e: &TExpr) -> Option<Val> {
    Some(match e {
        TExpr::Const(v) => *v,
        TExpr::Conv(a, t) => const_eval(a)?.convert(*t),
        TExpr::Neg(a) => const_eval(a)?.neg(),
        TExpr::BitNot(a) => const_eval(a)?.bit_not(),
        TExpr::Bin(op, a, b) => Val::binary(*op, const_eval(a)?, const_eval(b)?).ok()?,
        TExpr::Shift(op, a, b) => Val::shift(*op, const_eval(a)?, const_eval(b)?.as_i64() as u32),
        TExpr::Addr(a) => match **a {
            TAddr::Abs(x) => Val::Ptr(x),
            _ => return None,
        },
        TExpr::PtrAdd(p, i, s) => Val::Ptr(const_eval(p)?.bits().wrapping_add((const_eval(i)?.as_i64() * s) as u64)),
        _ => return None,
    })
}

fn is_pure_builtin(name: &str) -> bool {
    matches!(name, "sqrt" | "fabs" | "isnan" | "__rolex_icv" | "__rolex_replica" | "rolex_validate_robust")
}

/// Whether evaluating the expression needs an instruction of its own.
fn effectful(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |x| {
        if let ExprKind::Call { name, .. } = &x.kind {
            found |= !is_pure_builtin(name);
        }
    });
    found
}

fn elem_size(ptr: &Type) -> u64 {
    match ptr.pointee() {
        Some(Type::Void) | None => 1,
        Some(t) => t.size(),
    }
}

struct Local {
    off: u64,
    ty: Type,
    /// Array parameter: the slot holds the array's address.
    by_ref: bool,
}

#[derive(Default)]
struct LoopCtx {
    breaks: Vec<usize>,
    continues: Vec<usize>,
}

struct FnLower<'a> {
    env: &'a Env<'a>,
    sigs: &'a HashMap<String, Sig>,
    code: Vec<Instr>,
    scopes: Vec<HashMap<String, Local>>,
    frame: u64,
    ret: Type,
    loops: Vec<LoopCtx>,
    /// Index of the open `Preserve` / `JmpFwd` instruction per block.
    preserve_at: HashMap<usize, usize>,
    fwd_at: HashMap<usize, usize>,
}

type R<T> = Result<T, LoadError>;

impl FnLower<'_> {
    fn slot(&mut self, size: u64) -> u64 {
        let off = (self.frame + 7) & !7;
        self.frame = off + size.max(1);
        off
    }

    fn emit(&mut self, i: Instr) -> usize {
        self.code.push(i);
        self.code.len() - 1
    }

    fn here(&self) -> usize {
        self.code.len()
    }

    fn patch(&mut self, at: usize, to: usize) {
        match &mut self.code[at] {
            Instr::Jump(t) | Instr::BranchFalse { target: t, .. } => *t = to,
            Instr::Rt(Rt::JmpFwd { target, .. }) => *target = to,
            other => unreachable!("patching {other:?}"),
        }
    }

    fn lookup(&self, name: &str) -> Option<&Local> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn block_id(&self, e: &Expr) -> R<usize> {
        match &e.kind {
            ExprKind::StrLit(id) => self.env.blocks.get(id).copied().ok_or_else(|| err(e.pos, format!("unknown block '{id}'"))),
            _ => Err(err(e.pos, "block id must be a string literal")),
        }
    }

    // ---- statements ----

    fn stmts(&mut self, stmts: &[Stmt]) -> R<()> {
        stmts.iter().try_for_each(|s| self.stmt(s))
    }

    fn scoped(&mut self, f: impl FnOnce(&mut Self) -> R<()>) -> R<()> {
        self.scopes.push(HashMap::new());
        let r = f(self);
        self.scopes.pop();
        r
    }

    fn stmt(&mut self, s: &Stmt) -> R<()> {
        match &s.kind {
            StmtKind::Decl(d) => self.decl(d),
            StmtKind::Assign { target, value } => self.assign(target, value, s.pos),
            StmtKind::Expr(e) => match &e.kind {
                ExprKind::Call { name, args } => self.call(name, args, e.pos, None).map(|_| ()),
                _ => {
                    let (v, _) = self.expr(e)?;
                    self.emit(Instr::Eval(v));
                    Ok(())
                }
            },
            StmtKind::If { cond, then, els } => {
                let c = self.cond(cond)?;
                let br = self.emit(Instr::BranchFalse { cond: c, target: 0 });
                self.scoped(|l| l.stmt(then))?;
                match els {
                    Some(e) => {
                        let j = self.emit(Instr::Jump(0));
                        let at = self.here();
                        self.patch(br, at);
                        self.scoped(|l| l.stmt(e))?;
                        let end = self.here();
                        self.patch(j, end);
                    }
                    None => {
                        let end = self.here();
                        self.patch(br, end);
                    }
                }
                Ok(())
            }
            StmtKind::While { cond, body } => {
                let top = self.here();
                let c = self.cond(cond)?;
                let br = self.emit(Instr::BranchFalse { cond: c, target: 0 });
                self.loop_body(body, top, br)
            }
            StmtKind::For { init, cond, step, body } => self.scoped(|l| {
                if let Some(i) = init {
                    l.stmt(i)?;
                }
                let top = l.here();
                let br = match cond {
                    Some(c) => {
                        let c = l.cond(c)?;
                        Some(l.emit(Instr::BranchFalse { cond: c, target: 0 }))
                    }
                    None => None,
                };
                l.loops.push(LoopCtx::default());
                l.scoped(|l| l.stmt(body))?;
                let ctx = l.loops.pop().expect("loop context");
                let cont = l.here();
                if let Some(st) = step {
                    l.stmt(st)?;
                }
                l.emit(Instr::Jump(top));
                let end = l.here();
                if let Some(br) = br {
                    l.patch(br, end);
                }
                ctx.breaks.iter().for_each(|&b| l.patch(b, end));
                ctx.continues.iter().for_each(|&c| l.patch(c, cont));
                Ok(())
            }),
            StmtKind::Block(b) => self.scoped(|l| l.stmts(b)),
            StmtKind::Return(e) => {
                let v = match (e, Sty::of(&self.ret)) {
                    (Some(e), Some(_)) => {
                        let (v, t) = self.expr(e)?;
                        let ret = self.ret.clone();
                        Some(self.conv(v, &t, &ret, false, e.pos)?)
                    }
                    (None, None) => None,
                    (None, Some(s)) => Some(TExpr::Const(Val::zero(s))),
                    (Some(e), None) => return Err(err(e.pos, "void function returns a value")),
                };
                self.emit(Instr::Return(v));
                Ok(())
            }
            StmtKind::Break => {
                let j = self.emit(Instr::Jump(0));
                self.loops.last_mut().ok_or_else(|| err(s.pos, "break outside loop"))?.breaks.push(j);
                Ok(())
            }
            StmtKind::Continue => {
                let j = self.emit(Instr::Jump(0));
                self.loops.last_mut().ok_or_else(|| err(s.pos, "continue outside loop"))?.continues.push(j);
                Ok(())
            }
            StmtKind::Print(args) => {
                let mut out = Vec::new();
                for a in args {
                    out.push(match &a.kind {
                        ExprKind::StrLit(t) => PrintArg::Str(t.clone()),
                        _ => {
                            let (v, t) = self.expr(a)?;
                            if !t.is_scalar() {
                                return Err(err(a.pos, "print argument must be a scalar"));
                            }
                            PrintArg::Val(v)
                        }
                    });
                }
                self.emit(Instr::Print(out));
                Ok(())
            }
            StmtKind::Directive(d) => self.scoped(|l| l.stmt(&d.body)),
        }
    }

    fn loop_body(&mut self, body: &Stmt, top: usize, br: usize) -> R<()> {
        self.loops.push(LoopCtx::default());
        self.scoped(|l| l.stmt(body))?;
        let ctx = self.loops.pop().expect("loop context");
        self.emit(Instr::Jump(top));
        let end = self.here();
        self.patch(br, end);
        ctx.breaks.iter().for_each(|&b| self.patch(b, end));
        ctx.continues.iter().for_each(|&c| self.patch(c, top));
        Ok(())
    }

    fn decl(&mut self, d: &VarDecl) -> R<()> {
        if d.ty == Type::Void {
            return Err(err(d.pos, format!("variable '{}' has void type", d.name)));
        }
        let off = self.slot(d.ty.size());
        let init = match &d.init {
            Some(Init::Expr(e)) if !d.ty.is_array() => {
                let (v, t) = self.expr(e)?;
                Some(Instr::Store { addr: TAddr::Frame(off), value: self.conv(v, &t, &d.ty, false, e.pos)? })
            }
            Some(init) => {
                let mut items = Vec::new();
                self.flatten_init(init, &d.ty, 0, d.pos, &mut items)?;
                Some(Instr::Fill { addr: TAddr::Frame(off), items })
            }
            None => None,
        };
        self.scopes.last_mut().expect("scope").insert(d.name.clone(), Local { off, ty: d.ty.clone(), by_ref: false });
        if let Some(i) = init {
            self.emit(i);
        }
        Ok(())
    }

    fn flatten_init(&mut self, init: &Init, ty: &Type, off: u64, pos: Pos, out: &mut Vec<(u64, TExpr)>) -> R<()> {
        match (init, ty) {
            (Init::List(items), Type::Array(elem, n)) => {
                if items.len() > *n as usize {
                    return Err(err(pos, "too many initializers"));
                }
                for (i, item) in items.iter().enumerate() {
                    self.flatten_init(item, elem, off + i as u64 * elem.size(), pos, out)?;
                }
                for i in items.len()..*n as usize {
                    zero_fill(elem, off + i as u64 * elem.size(), out);
                }
                Ok(())
            }
            (Init::Expr(e), t) if t.is_scalar() => {
                let (v, vt) = self.expr(e)?;
                out.push((off, self.conv(v, &vt, t, false, e.pos)?));
                Ok(())
            }
            _ => Err(err(pos, "initializer does not match the declared type")),
        }
    }

    fn assign(&mut self, target: &Expr, value: &Expr, pos: Pos) -> R<()> {
        let (addr, ty) = self.place(target)?;
        let sty = Sty::of(&ty).ok_or_else(|| err(pos, "assignment target is not a scalar"))?;
        if let ExprKind::Call { name, args } = &value.kind {
            if self.call_result_sty(name) == Some(sty) {
                let dest = Dest { addr, ty: sty };
                self.call(name, args, value.pos, Some(dest))?;
                return Ok(());
            }
        }
        let (v, vt) = self.expr(value)?;
        let value = self.conv(v, &vt, &ty, false, value.pos)?;
        self.emit(Instr::Store { addr, value });
        Ok(())
    }

    /// Storage type a call writes straight into its destination, when it has one.
    fn call_result_sty(&self, name: &str) -> Option<Sty> {
        match name {
            "malloc" | "__rolex_alloc" | "rolex_malloc_tolerant" | "rolex_malloc_robust" | "rolex_malloc_repairable" => {
                Some(Sty::Ptr)
            }
            "__rolex_compare" | "__rolex_validate_heap" | "rolex_ameliorate_heal" => Some(Sty::I32),
            _ if is_pure_builtin(name) => None,
            _ => self.sigs.get(name).and_then(|s| Sty::of(&s.ret)),
        }
    }

    // ---- expressions ----

    fn cond(&mut self, e: &Expr) -> R<TExpr> {
        let (v, t) = self.expr(e)?;
        if !t.is_scalar() {
            return Err(err(e.pos, "condition must be a scalar"));
        }
        Ok(v)
    }

    fn conv(&self, v: TExpr, from: &Type, to: &Type, explicit: bool, pos: Pos) -> R<TExpr> {
        let (Some(f), Some(t)) = (Sty::of(from), Sty::of(to)) else {
            return Err(err(pos, "conversion between non-scalar types"));
        };
        if f == t {
            return Ok(v);
        }
        let ok = match (f, t) {
            (Sty::Ptr, _) | (_, Sty::Ptr) if explicit => f.is_int() || t.is_int() || f == t,
            (_, Sty::Ptr) => matches!(const_eval(&v), Some(z) if z.is_zero_int()),
            (Sty::Ptr, _) => false,
            _ => true,
        };
        if !ok {
            return Err(err(pos, "incompatible pointer conversion"));
        }
        Ok(match const_eval(&v) {
            Some(c) => TExpr::Const(c.convert(t)),
            None => TExpr::Conv(Box::new(v), t),
        })
    }

    fn expr(&mut self, e: &Expr) -> R<(TExpr, Type)> {
        match &e.kind {
            ExprKind::IntLit { value, unsigned } => {
                if *value > u64::from(u32::MAX) {
                    Err(err(e.pos, "integer literal out of range"))
                } else if *unsigned || *value > i32::MAX as u64 {
                    Ok((TExpr::Const(Val::U32(*value as u32)), Type::UInt))
                } else {
                    Ok((TExpr::Const(Val::I32(*value as i32)), Type::Int))
                }
            }
            ExprKind::FloatLit { value, single: true } => Ok((TExpr::Const(Val::F32(*value as f32)), Type::Float)),
            ExprKind::FloatLit { value, .. } => Ok((TExpr::Const(Val::F64(*value)), Type::Double)),
            ExprKind::Null => Ok((TExpr::Const(Val::Ptr(0)), Type::ptr(Type::Void))),
            ExprKind::StrLit(_) => Err(err(e.pos, "string literal outside print")),
            ExprKind::SizeOf(t) => Ok((TExpr::Const(Val::U32(t.size() as u32)), Type::UInt)),
            ExprKind::Var(_) | ExprKind::Index(..) | ExprKind::Unary(UnaryOp::Deref, _) => {
                let (a, ty) = self.place(e)?;
                match ty {
                    Type::Array(elem, _) => Ok((TExpr::Addr(Box::new(a)), Type::Ptr(elem))),
                    Type::Void => Err(err(e.pos, "dereference of void pointer")),
                    t => Ok((TExpr::Load(Box::new(a), Sty::of(&t).expect("scalar")), t)),
                }
            }
            ExprKind::Unary(UnaryOp::AddrOf, inner) => {
                let (a, ty) = self.place(inner)?;
                Ok((TExpr::Addr(Box::new(a)), Type::ptr(ty)))
            }
            ExprKind::Unary(op, inner) => {
                let (v, t) = self.expr(inner)?;
                match op {
                    UnaryOp::Neg if t.is_arith() => Ok((fold(TExpr::Neg(Box::new(v))), t)),
                    UnaryOp::BitNot if t.is_integer() => Ok((fold(TExpr::BitNot(Box::new(v))), t)),
                    UnaryOp::Not if t.is_scalar() => Ok((TExpr::Not(Box::new(v)), Type::Int)),
                    _ => Err(err(e.pos, format!("invalid operand for unary {op:?}"))),
                }
            }
            ExprKind::Binary(op, a, b) => self.binary(*op, a, b, e.pos),
            ExprKind::Cast(to, inner) => {
                let (v, t) = self.expr(inner)?;
                let v = self.conv(v, &t, to, true, e.pos)?;
                Ok((v, to.clone()))
            }
            ExprKind::Call { name, args } => {
                self.call(name, args, e.pos, None)?.ok_or_else(|| err(e.pos, format!("'{name}' does not return a value")))
            }
        }
    }

    fn binary(&mut self, op: BinaryOp, a: &Expr, b: &Expr, pos: Pos) -> R<(TExpr, Type)> {
        use BinaryOp::*;
        if matches!(op, And | Or) {
            let ea = self.cond(a)?;
            if effectful(b) {
                return self.short_circuit(op, ea, b);
            }
            let eb = self.cond(b)?;
            let node = if op == And { TExpr::And(Box::new(ea), Box::new(eb)) } else { TExpr::Or(Box::new(ea), Box::new(eb)) };
            return Ok((node, Type::Int));
        }
        let (ea, ta) = self.expr(a)?;
        let (eb, tb) = self.expr(b)?;
        let bx = Box::new;
        match op {
            Add | Sub if ta.is_ptr() && tb.is_integer() => {
                let s = elem_size(&ta) as i64;
                Ok((TExpr::PtrAdd(bx(ea), bx(eb), if op == Add { s } else { -s }), ta))
            }
            Add if ta.is_integer() && tb.is_ptr() => Ok((TExpr::PtrAdd(bx(eb), bx(ea), elem_size(&tb) as i64), tb)),
            Sub if ta.is_ptr() && tb.is_ptr() => Ok((TExpr::PtrDiff(bx(ea), bx(eb), elem_size(&ta)), Type::Int)),
            _ if op.is_comparison() && (ta.is_ptr() || tb.is_ptr()) => {
                let ptr = Type::ptr(Type::Void);
                let ea = if ta.is_ptr() { ea } else { self.conv(ea, &ta, &ptr, false, pos)? };
                let eb = if tb.is_ptr() { eb } else { self.conv(eb, &tb, &ptr, false, pos)? };
                Ok((TExpr::Bin(op, bx(ea), bx(eb)), Type::Int))
            }
            Shl | Shr if ta.is_integer() && tb.is_integer() => Ok((fold(TExpr::Shift(op, bx(ea), bx(eb))), ta)),
            Rem | BitAnd | BitOr | BitXor if ta.is_integer() && tb.is_integer() => self.arith(op, ea, &ta, eb, &tb, pos),
            Add | Sub | Mul | Div | Eq | Ne | Lt | Le | Gt | Ge if ta.is_arith() && tb.is_arith() => {
                self.arith(op, ea, &ta, eb, &tb, pos)
            }
            _ => Err(err(pos, format!("invalid operands to '{}'", op.symbol()))),
        }
    }

    fn arith(&self, op: BinaryOp, ea: TExpr, ta: &Type, eb: TExpr, tb: &Type, pos: Pos) -> R<(TExpr, Type)> {
        let common = Sty::common(Sty::of(ta).expect("arith"), Sty::of(tb).expect("arith"));
        let ct = match common {
            Sty::I32 => Type::Int,
            Sty::U32 => Type::UInt,
            Sty::F32 => Type::Float,
            _ => Type::Double,
        };
        let ea = self.conv(ea, ta, &ct, false, pos)?;
        let eb = self.conv(eb, tb, &ct, false, pos)?;
        let rt = if op.is_comparison() { Type::Int } else { ct };
        Ok((fold(TExpr::Bin(op, Box::new(ea), Box::new(eb))), rt))
    }

    /// `a && b` / `a || b` where `b` has calls: branch so `b` runs only when needed.
    fn short_circuit(&mut self, op: BinaryOp, ea: TExpr, b: &Expr) -> R<(TExpr, Type)> {
        let t = self.slot(4);
        let tmp = TAddr::Frame(t);
        let (init, test) = if op == BinaryOp::And { (0, ea) } else { (1, TExpr::Not(Box::new(ea))) };
        self.emit(Instr::Store { addr: tmp.clone(), value: TExpr::Const(Val::I32(init)) });
        let br = self.emit(Instr::BranchFalse { cond: test, target: 0 });
        let eb = self.cond(b)?;
        self.emit(Instr::Store { addr: tmp.clone(), value: TExpr::Not(Box::new(TExpr::Not(Box::new(eb)))) });
        let end = self.here();
        self.patch(br, end);
        Ok((TExpr::Load(Box::new(tmp), Sty::I32), Type::Int))
    }

    fn place(&mut self, e: &Expr) -> R<(TAddr, Type)> {
        match &e.kind {
            ExprKind::Var(n) => {
                if let Some(l) = self.lookup(n) {
                    let a = TAddr::Frame(l.off);
                    return Ok(if l.by_ref {
                        (TAddr::Dyn(Box::new(TExpr::Load(Box::new(a), Sty::Ptr))), l.ty.clone())
                    } else {
                        (a, l.ty.clone())
                    });
                }
                match self.env.globals.get(n) {
                    Some((addr, ty)) => Ok((TAddr::Abs(*addr), ty.clone())),
                    None => Err(err(e.pos, format!("unknown variable '{n}'"))),
                }
            }
            ExprKind::Index(base, idx) => {
                let (ei, ti) = self.expr(idx)?;
                if !ti.is_integer() {
                    return Err(err(idx.pos, "array index must be an integer"));
                }
                if is_place(base) {
                    let (a, t) = self.place(base)?;
                    if let Type::Array(elem, len) = t {
                        let size = elem.size();
                        return Ok((TAddr::Index { base: Box::new(a), idx: Box::new(ei), size, len }, *elem));
                    }
                }
                let (p, pt) = self.expr(base)?;
                match pt.pointee() {
                    Some(el) if pt.is_ptr() && *el != Type::Void => {
                        let el = el.clone();
                        Ok((TAddr::Dyn(Box::new(TExpr::PtrAdd(Box::new(p), Box::new(ei), el.size() as i64))), el))
                    }
                    _ => Err(err(e.pos, "subscript of a non-pointer")),
                }
            }
            ExprKind::Unary(UnaryOp::Deref, inner) => {
                if let ExprKind::Unary(UnaryOp::AddrOf, x) = &inner.kind {
                    return self.place(x);
                }
                let (p, pt) = self.expr(inner)?;
                match pt {
                    Type::Ptr(t) => Ok((TAddr::Dyn(Box::new(p)), *t)),
                    _ => Err(err(e.pos, "dereference of a non-pointer")),
                }
            }
            _ => Err(err(e.pos, "expression is not assignable")),
        }
    }

    fn tplace(&mut self, e: &Expr) -> R<TPlace> {
        let (addr, ty) = self.place(e)?;
        Ok(TPlace { addr, len: ty.size(), elem: ty.element().size() })
    }

    fn hoisted(&mut self, ty: Type, f: impl FnOnce(Option<Dest>) -> Instr, dest: Option<Dest>) -> Option<(TExpr, Type)> {
        match dest {
            Some(d) => {
                self.emit(f(Some(d)));
                None
            }
            None => {
                let sty = Sty::of(&ty).expect("scalar result");
                let off = self.slot(sty.size());
                self.emit(f(Some(Dest { addr: TAddr::Frame(off), ty: sty })));
                Some((TExpr::Load(Box::new(TAddr::Frame(off)), sty), ty))
            }
        }
    }

    /// Lower a call. With `dest` the result is stored there; without it the
    /// result (if any) is hoisted into a temp and returned as an expression.
    /// Calls in statement position discard the temp.
    fn call(&mut self, name: &str, args: &[Expr], pos: Pos, dest: Option<Dest>) -> R<Option<(TExpr, Type)>> {
        let arity = |n: usize| if args.len() == n { Ok(()) } else { Err(err(pos, format!("'{name}' expects {n} argument(s)"))) };
        let int = Type::Int;
        let vptr = Type::ptr(Type::Void);
        match name {
            "sqrt" | "fabs" => {
                arity(1)?;
                let (v, t) = self.expr(&args[0])?;
                let v = self.conv(v, &t, &Type::Double, false, pos)?;
                let node = if name == "sqrt" { TExpr::Sqrt(Box::new(v)) } else { TExpr::Fabs(Box::new(v)) };
                Ok(Some((node, Type::Double)))
            }
            "isnan" => {
                arity(1)?;
                let (v, t) = self.expr(&args[0])?;
                if !t.is_float() {
                    return Err(err(pos, "isnan needs a floating-point argument"));
                }
                Ok(Some((TExpr::IsNan(Box::new(v)), int)))
            }
            "rolex_validate_robust" => {
                arity(1)?;
                self.emit(Instr::Rt(Rt::Nop));
                Ok(Some((TExpr::Const(Val::I32(0)), int)))
            }
            "malloc" | "rolex_malloc_tolerant" | "rolex_malloc_robust" | "rolex_malloc_repairable" => {
                let size = self.size_arg(&args[0])?;
                Ok(self.hoisted(vptr, |dest| Instr::Rt(Rt::Malloc { size, dest }), dest))
            }
            "free" => {
                arity(1)?;
                let (p, t) = self.expr(&args[0])?;
                if !t.is_ptr() {
                    return Err(err(pos, "free needs a pointer"));
                }
                self.emit(Instr::Rt(Rt::Free(p)));
                Ok(None)
            }
            "rolex_ameliorate_heal" => {
                arity(1)?;
                let (ptr, _) = self.expr(&args[0])?;
                Ok(self.hoisted(int, |dest| Instr::Rt(Rt::Heal { ptr, dest }), dest))
            }
            "__rolex_initialize" | "__rolex_finalize" => {
                self.emit(Instr::Rt(Rt::Nop));
                Ok(None)
            }
            "__rolex_preserve_state" => {
                let block = self.block_id(&args[0])?;
                let places = args[1..].iter().map(|a| self.tplace(a)).collect::<R<Vec<_>>>()?;
                let at = self.emit(Instr::Rt(Rt::Preserve { block, places, pad: 0, reentry: 0 }));
                self.preserve_at.insert(block, at);
                Ok(None)
            }
            "__rolex_create_checkpoint" => {
                let block = self.block_id(&args[0])?;
                let places = args[1..].iter().map(|a| self.tplace(a)).collect::<R<Vec<_>>>()?;
                let at = self.emit(Instr::Rt(Rt::Checkpoint { block, places }));
                if let Some(Instr::Rt(Rt::Preserve { reentry, .. })) = self.preserve_at.get(&block).map(|&p| &mut self.code[p]) {
                    *reentry = at + 1;
                }
                Ok(None)
            }
            "__rolex_jmp_fwd" => {
                let block = self.block_id(&args[0])?;
                let at = self.emit(Instr::Rt(Rt::JmpFwd { block, target: 0 }));
                self.fwd_at.insert(block, at);
                Ok(None)
            }
            "__rolex_restore_checkpoint" | "__rolex_restore_state" => {
                let block = self.block_id(&args[0])?;
                let at = self.emit(Instr::Rt(Rt::Restore { block }));
                if let Some(Instr::Rt(Rt::Preserve { pad, .. })) = self.preserve_at.get(&block).map(|&p| &mut self.code[p]) {
                    *pad = at;
                }
                Ok(None)
            }
            "__rolex_jmp_back" => {
                let block = self.block_id(&args[0])?;
                let amel = match args.get(1) {
                    Some(a) => Some(self.expr(a)?.0),
                    None => None,
                };
                let at = self.emit(Instr::Rt(Rt::JmpBack { block, amel }));
                let fwd = self.fwd_at.remove(&block).ok_or_else(|| err(pos, "jump back without a forward jump"))?;
                self.patch(fwd, at + 1);
                self.preserve_at.remove(&block);
                Ok(None)
            }
            "__rolex_copy" => {
                arity(2)?;
                let dst = self.tplace(&args[0])?;
                let src = self.tplace(&args[1])?;
                self.emit(Instr::Rt(Rt::Copy { dst, src }));
                Ok(None)
            }
            "__rolex_compare" => {
                let places = args.iter().map(|a| self.tplace(a)).collect::<R<Vec<_>>>()?;
                Ok(self.hoisted(int, |dest| Instr::Rt(Rt::Compare { places, dest }), dest))
            }
            "__rolex_validate_heap" => {
                arity(1)?;
                let (ptr, _) = self.expr(&args[0])?;
                Ok(self.hoisted(int, |dest| Instr::Rt(Rt::ValidateHeap { ptr, dest }), dest))
            }
            "__rolex_alloc" => {
                arity(2)?;
                let size = self.size_arg(&args[0])?;
                let record = match &args[1].kind {
                    ExprKind::StrLit(id) => {
                        *self.env.records.get(id).ok_or_else(|| err(pos, format!("no profile record for '{id}'")))?
                    }
                    _ => return Err(err(pos, "allocation id must be a string literal")),
                };
                Ok(self.hoisted(vptr, |dest| Instr::Rt(Rt::Alloc { size, record, dest }), dest))
            }
            "__rolex_icv" => {
                arity(1)?;
                Ok(Some((TExpr::Icv(self.block_id(&args[0])?), int)))
            }
            "__rolex_replica" => {
                arity(2)?;
                let (p, t) = self.expr(&args[0])?;
                let (k, _) = self.expr(&args[1])?;
                Ok(Some((TExpr::Replica(Box::new(p), Box::new(k)), t)))
            }
            _ => {
                let sig = self.sigs.get(name).ok_or_else(|| err(pos, format!("call to undefined function '{name}'")))?;
                if sig.params.len() != args.len() {
                    return Err(err(pos, format!("'{name}' expects {} argument(s)", sig.params.len())));
                }
                let (func, ret, params) = (sig.idx, sig.ret.clone(), sig.params.clone());
                let mut targs = Vec::new();
                for (a, pt) in args.iter().zip(&params) {
                    let (v, t) = self.expr(a)?;
                    let v = match pt {
                        Type::Array(..) if t.is_ptr() => v,
                        Type::Array(..) => return Err(err(a.pos, "array parameter needs an array argument")),
                        _ => self.conv(v, &t, pt, false, a.pos)?,
                    };
                    targs.push(v);
                }
                if ret == Type::Void {
                    if dest.is_some() {
                        return Err(err(pos, format!("'{name}' does not return a value")));
                    }
                    self.emit(Instr::Call { func, args: targs, dest: None });
                    return Ok(None);
                }
                Ok(self.hoisted(ret, |dest| Instr::Call { func, args: targs, dest }, dest))
            }
        }
    }

    fn size_arg(&mut self, e: &Expr) -> R<TExpr> {
        let (v, t) = self.expr(e)?;
        if !t.is_integer() {
            return Err(err(e.pos, "allocation size must be an integer"));
        }
        Ok(v)
    }
}

fn is_place(e: &Expr) -> bool {
    matches!(e.kind, ExprKind::Var(_) | ExprKind::Index(..) | ExprKind::Unary(UnaryOp::Deref, _))
}

fn fold(e: TExpr) -> TExpr {
    match const_eval(&e) {
        Some(v) => TExpr::Const(v),
        None => e,
    }
}

fn zero_fill(ty: &Type, off: u64, out: &mut Vec<(u64, TExpr)>) {
    match ty {
        Type::Array(elem, n) => (0..u64::from(*n)).for_each(|i| zero_fill(elem, off + i * elem.size(), out)),
        t => out.push((off, TExpr::Const(Val::zero(Sty::of(t).expect("scalar element"))))),
    }
}
