//! Directive outlining, call-site wrapping, declare wrappers and block records.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::annotate::annotate;
use super::env::Env;
use super::profile::{BlockInfo, BlockPolicy, Profile, ProfileRecord, RecordKind};
use super::{TransformError, TransformedProgram};
use crate::frontend::ast::*;

pub fn outline_directives(program: &Program) -> Result<TransformedProgram, TransformError> {
    let annotated = annotate(program)?;
    let source = &annotated.program;
    let ids = assign_block_ids(source);
    let mut out = Outliner {
        ids,
        blocks: Vec::new(),
        outlined: BTreeMap::new(),
        generated: Vec::new(),
    };
    let mut items = Vec::new();
    for item in &source.items {
        let Item::Function(f) = item else {
            items.push(item.clone());
            continue;
        };
        let Some(body) = &f.body else {
            items.push(Item::Function(Function { declare: None, ..f.clone() }));
            continue;
        };
        let mut env = Env::new(source);
        env.enter_function(f);
        env.push();
        let mut body = out.stmts(body, &mut env, &f.name)?;
        items.append(&mut out.generated);
        if f.name == "main" {
            body = wrap_main(body, f.pos);
        }
        let func = Function { body: Some(body), declare: None, ..f.clone() };
        match &f.declare {
            Some(d) => {
                let (imp, wrapper) = out.declare_wrapper(func, d, source)?;
                items.push(Item::Function(imp));
                items.push(Item::Function(wrapper));
            }
            None => items.push(Item::Function(func)),
        }
    }
    let mut records = annotated.records;
    records.append(&mut out.blocks);
    records.sort_by_key(|(p, _)| (p.line, p.col));
    let mut by_k: Vec<(usize, String)> = out.ids.values().cloned().collect();
    by_k.sort();
    Ok(TransformedProgram {
        program: Program { items },
        profile: Profile { records: records.into_iter().map(|(_, r)| r).collect() },
        outlined: out.outlined,
        icvs: by_k.into_iter().map(|(_, id)| id).collect(),
    })
}

type Site = (u32, u32);

/// Block ids in source order; declare directives and structured blocks share one counter.
fn assign_block_ids(program: &Program) -> HashMap<Site, (usize, String)> {
    let mut ids = HashMap::new();
    let mut k = 0;
    for f in program.functions() {
        if let (Some(d), Some(_)) = (&f.declare, &f.body) {
            ids.insert((d.pos.line, d.pos.col), (k, impl_name(&f.name)));
            k += 1;
        }
        if let Some(body) = &f.body {
            walk_stmts(body, &mut |s| {
                if let StmtKind::Directive(d) = &s.kind {
                    ids.insert((d.pos.line, d.pos.col), (k, format!("__rolex_blk_{k}")));
                    k += 1;
                }
            });
        }
    }
    ids
}

pub(crate) fn impl_name(f: &str) -> String {
    format!("{f}__rolex_impl")
}

fn private_replica(v: &str, k: usize) -> String {
    format!("{v}__p{k}")
}

fn id_lit(id: &str, pos: Pos) -> Expr {
    Expr::new(ExprKind::StrLit(id.to_string()), pos)
}

fn call_stmt(name: &str, args: Vec<Expr>, pos: Pos) -> Stmt {
    Stmt::new(StmtKind::Expr(Expr::call(name, args, pos)), pos)
}

fn with_id(id: &str, places: &[String], pos: Pos) -> Vec<Expr> {
    let mut v = vec![id_lit(id, pos)];
    v.extend(places.iter().map(|p| Expr::var(p, pos)));
    v
}

fn zero_of(ty: &Type, pos: Pos) -> Expr {
    match ty {
        Type::Float | Type::Double => Expr::new(ExprKind::FloatLit { value: 0.0, single: *ty == Type::Float }, pos),
        Type::Ptr(_) => Expr::new(ExprKind::Null, pos),
        Type::UInt => Expr::new(ExprKind::IntLit { value: 0, unsigned: true }, pos),
        _ => Expr::int(0, pos),
    }
}

fn wrap_main(mut body: Vec<Stmt>, pos: Pos) -> Vec<Stmt> {
    fn fin(stmts: &mut Vec<Stmt>) {
        let mut out = Vec::with_capacity(stmts.len());
        for mut s in stmts.drain(..) {
            match &mut s.kind {
                StmtKind::Return(_) => {
                    out.push(call_stmt("__rolex_finalize", vec![], s.pos));
                }
                StmtKind::If { then, els, .. } => {
                    fin_one(then);
                    if let Some(e) = els {
                        fin_one(e);
                    }
                }
                StmtKind::While { body, .. } | StmtKind::For { body, .. } => fin_one(body),
                StmtKind::Block(b) => fin(b),
                _ => {}
            }
            out.push(s);
        }
        *stmts = out;
    }
    fn fin_one(s: &mut Box<Stmt>) {
        if matches!(s.kind, StmtKind::Return(_)) {
            let pos = s.pos;
            let ret = std::mem::replace(s.as_mut(), Stmt::new(StmtKind::Block(vec![]), pos));
            **s = Stmt::new(StmtKind::Block(vec![call_stmt("__rolex_finalize", vec![], pos), ret]), pos);
        } else if let StmtKind::Block(b) = &mut s.kind {
            fin(b);
        } else {
            let mut v = vec![(**s).clone()];
            fin(&mut v);
            if v.len() == 1 {
                **s = v.remove(0);
            } else {
                **s = Stmt::new(StmtKind::Block(v), s.pos);
            }
        }
    }
    fin(&mut body);
    body.insert(0, call_stmt("__rolex_initialize", vec![], pos));
    if !matches!(body.last().map(|s| &s.kind), Some(StmtKind::Return(_))) {
        body.push(call_stmt("__rolex_finalize", vec![], pos));
    }
    body
}

/// Substitute variables bottom-up without revisiting replacements.
fn subst_vars(e: &mut Expr, f: &dyn Fn(&str) -> Option<Expr>) {
    match &mut e.kind {
        ExprKind::Var(n) => {
            if let Some(r) = f(n) {
                *e = r;
            }
        }
        ExprKind::Unary(_, a) | ExprKind::Cast(_, a) => subst_vars(a, f),
        ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
            subst_vars(a, f);
            subst_vars(b, f);
        }
        ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| subst_vars(a, f)),
        _ => {}
    }
    if let ExprKind::Unary(UnaryOp::AddrOf, inner) = &e.kind {
        if let ExprKind::Unary(UnaryOp::Deref, p) = &inner.kind {
            *e = (**p).clone();
        }
    }
}

/// Scope-aware traversal: `f` sees each statement's expressions together with
/// the set of names declared inside the traversed region at that point.
fn visit_scoped(stmts: &mut [Stmt], bound: &mut Vec<HashSet<String>>, f: &mut dyn FnMut(&mut Stmt, &[HashSet<String>])) {
    for s in stmts {
        visit_one(s, bound, f);
    }
}

fn visit_one(s: &mut Stmt, bound: &mut Vec<HashSet<String>>, f: &mut dyn FnMut(&mut Stmt, &[HashSet<String>])) {
    f(s, bound);
    if let StmtKind::Decl(d) = &s.kind {
        bound.last_mut().unwrap().insert(d.name.clone());
    }
    let s_pos = s.pos;
    let scoped = |s: &mut Stmt, bound: &mut Vec<HashSet<String>>, f: &mut dyn FnMut(&mut Stmt, &[HashSet<String>])| {
        bound.push(HashSet::new());
        visit_one(s, bound, f);
        bound.pop();
    };
    match &mut s.kind {
        StmtKind::If { then, els, .. } => {
            scoped(then, bound, f);
            if let Some(e) = els {
                scoped(e, bound, f);
            }
        }
        StmtKind::While { body, .. } => scoped(body, bound, f),
        StmtKind::For { init, cond, step, body } => {
            bound.push(HashSet::new());
            if let Some(i) = init {
                visit_one(i, bound, f);
            }
            if let Some(c) = cond.take() {
                let mut wrapped = Stmt::new(StmtKind::Expr(c), s_pos);
                f(&mut wrapped, bound);
                let StmtKind::Expr(c) = wrapped.kind else { unreachable!() };
                *cond = Some(c);
            }
            if let Some(st) = step {
                visit_one(st, bound, f);
            }
            scoped(body, bound, f);
            bound.pop();
        }
        StmtKind::Block(b) => {
            bound.push(HashSet::new());
            visit_scoped(b, bound, f);
            bound.pop();
        }
        StmtKind::Directive(d) => scoped(&mut d.body, bound, f),
        _ => {}
    }
}

fn own_exprs(s: &mut Stmt) -> Vec<&mut Expr> {
    let mut out = Vec::new();
    fn init_exprs<'a>(i: &'a mut Init, out: &mut Vec<&'a mut Expr>) {
        match i {
            Init::Expr(e) => out.push(e),
            Init::List(v) => v.iter_mut().for_each(|i| init_exprs(i, out)),
        }
    }
    match &mut s.kind {
        StmtKind::Decl(d) => {
            if let Some(i) = &mut d.init {
                init_exprs(i, &mut out);
            }
        }
        StmtKind::Assign { target, value } => {
            out.push(target);
            out.push(value);
        }
        StmtKind::Expr(e) => out.push(e),
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => out.push(cond),
        StmtKind::Return(Some(e)) => out.push(e),
        StmtKind::Print(args) => out.extend(args.iter_mut()),
        StmtKind::Directive(d) => {
            for c in &mut d.clauses {
                match c {
                    Clause::Ameliorate(spec) => out.extend(spec.args.iter_mut()),
                    Clause::Fallback(v) => out.extend(v.iter_mut()),
                    _ => {}
                }
            }
        }
        _ => {}
    }
    out
}

fn is_bound(bound: &[HashSet<String>], n: &str) -> bool {
    bound.iter().any(|s| s.contains(n))
}

/// Variable whose storage (or pointee) a write target modifies.
fn written_root(e: &Expr) -> Option<&str> {
    match &e.kind {
        ExprKind::Var(n) => Some(n),
        ExprKind::Index(b, _) | ExprKind::Unary(UnaryOp::Deref, b) | ExprKind::Cast(_, b) => written_root(b),
        ExprKind::Binary(_, a, _) => written_root(a),
        ExprKind::Call { args, .. } => args.first().and_then(written_root),
        _ => None,
    }
}

struct Outliner {
    ids: HashMap<Site, (usize, String)>,
    blocks: Vec<(Pos, ProfileRecord)>,
    outlined: BTreeMap<String, String>,
    generated: Vec<Item>,
}

impl Outliner {
    fn stmts(&mut self, stmts: &[Stmt], env: &mut Env, func: &str) -> Result<Vec<Stmt>, TransformError> {
        stmts.iter().map(|s| self.stmt(s, env, func)).collect()
    }

    fn scoped(&mut self, s: &Stmt, env: &mut Env, func: &str) -> Result<Stmt, TransformError> {
        env.push();
        let r = self.stmt(s, env, func);
        env.pop();
        r
    }

    fn stmt(&mut self, s: &Stmt, env: &mut Env, func: &str) -> Result<Stmt, TransformError> {
        let pos = s.pos;
        let kind = match &s.kind {
            StmtKind::Decl(d) => {
                env.declare(&d.name, d.ty.clone(), None);
                s.kind.clone()
            }
            StmtKind::If { cond, then, els } => StmtKind::If {
                cond: cond.clone(),
                then: Box::new(self.scoped(then, env, func)?),
                els: match els {
                    Some(e) => Some(Box::new(self.scoped(e, env, func)?)),
                    None => None,
                },
            },
            StmtKind::While { cond, body } => {
                StmtKind::While { cond: cond.clone(), body: Box::new(self.scoped(body, env, func)?) }
            }
            StmtKind::For { init, cond, step, body } => {
                env.push();
                let init = match init {
                    Some(i) => Some(Box::new(self.stmt(i, env, func)?)),
                    None => None,
                };
                let body = Box::new(self.scoped(body, env, func)?);
                env.pop();
                StmtKind::For { init, cond: cond.clone(), step: step.clone(), body }
            }
            StmtKind::Block(b) => {
                env.push();
                let b = self.stmts(b, env, func)?;
                env.pop();
                StmtKind::Block(b)
            }
            StmtKind::Directive(d) => return self.directive(d, env, func),
            other => other.clone(),
        };
        Ok(Stmt::new(kind, pos))
    }

    fn directive(&mut self, d: &Directive, env: &mut Env, func: &str) -> Result<Stmt, TransformError> {
        let pos = d.pos;
        let (_, id) = self.ids[&(pos.line, pos.col)].clone();
        env.push();
        let body = self.scoped(&d.body, env, func)?;
        env.pop();
        let mut body = vec![body];

        // Captured variables, in first-use order, followed by unused clause variables.
        let clause_vars: Vec<String> = d.clauses.iter().flat_map(|c| c.variables().to_vec()).collect();
        let mut captures: Vec<String> = Vec::new();
        visit_scoped(&mut body, &mut vec![HashSet::new()], &mut |s, bound| {
            for e in own_exprs(s) {
                e.walk(&mut |x| {
                    if let ExprKind::Var(n) = &x.kind {
                        let wanted = env.lookup(n).is_some_and(|b| b.local) || clause_vars.contains(n);
                        if wanted && !is_bound(bound, n) && !captures.contains(n) {
                            captures.push(n.clone());
                        }
                    }
                });
            }
        });
        for v in &clause_vars {
            if !captures.contains(v) {
                captures.push(v.clone());
            }
        }
        let mut params = Vec::new();
        let mut by_ref = HashSet::new();
        for n in &captures {
            let ty = env
                .lookup(n)
                .map(|b| b.ty)
                .ok_or_else(|| TransformError::new(pos, format!("unknown variable '{n}' in directive")))?;
            if ty.is_array() {
                params.push(Param { ty, name: n.clone() });
            } else {
                params.push(Param { ty: Type::ptr(ty), name: n.clone() });
                by_ref.insert(n.clone());
            }
        }

        let redundant = match d.kind {
            DirectiveKind::Robust(s) => Some(s),
            _ => None,
        };
        let replicated: Vec<String> = [d.private(), d.compare()].concat();
        if redundant.is_some() {
            let mut err = None;
            visit_scoped(&mut body, &mut vec![HashSet::new()], &mut |s, bound| {
                let target = match &s.kind {
                    StmtKind::Assign { target, .. } => target,
                    StmtKind::Print(_) => {
                        err.get_or_insert_with(|| TransformError::new(s.pos, "print inside a robust block"));
                        return;
                    }
                    _ => return,
                };
                if let Some(root) = written_root(target) {
                    if !is_bound(bound, root) && !replicated.iter().any(|r| r == root) {
                        err.get_or_insert_with(|| {
                            TransformError::new(
                                s.pos,
                                format!("robust block writes '{root}', which is neither private nor compared"),
                            )
                        });
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }

        visit_scoped(&mut body, &mut vec![HashSet::new()], &mut |s, bound| {
            for e in own_exprs(s) {
                subst_vars(e, &|n| {
                    (by_ref.contains(n) && !is_bound(bound, n)).then(|| Expr::deref(Expr::var(n, pos)))
                });
            }
        });
        self.generated.push(Item::Function(Function {
            ret: Type::Void,
            name: id.clone(),
            params,
            body: Some(body),
            declare: None,
            pos,
        }));
        self.outlined.insert(format!("{func}@{}:{}", pos.line, pos.col), id.clone());

        let args_for = |k: usize| -> Vec<Expr> {
            captures
                .iter()
                .map(|n| {
                    let name = if k > 0 && replicated.contains(n) { private_replica(n, k) } else { n.clone() };
                    let v = Expr::var(name, pos);
                    if by_ref.contains(n) {
                        Expr::addr_of(v)
                    } else {
                        v
                    }
                })
                .collect()
        };

        let mut info = BlockInfo {
            share: d.share(),
            private: d.private(),
            compare: d.compare(),
            reinitialize: d.reinitialize(),
            ameliorate: d.ameliorate().map(|a| a.name.clone()),
            fallback: false,
        };
        let mut site = Vec::new();
        let all: Vec<String> = [info.share.clone(), info.private.clone(), info.compare.clone(), info.reinitialize.clone()]
            .concat();
        let policy;
        match redundant {
            None => {
                policy = if d.kind == DirectiveKind::RecoverRollback { BlockPolicy::Rollback } else { BlockPolicy::Rollforward };
                if d.ameliorate().is_some() {
                    site.push(Stmt::new(
                        StmtKind::Decl(VarDecl {
                            qualifier: None,
                            ty: Type::Int,
                            name: "__rolex_amel".into(),
                            init: None,
                            pos,
                        }),
                        pos,
                    ));
                }
                let saved = [info.share.clone(), info.reinitialize.clone()].concat();
                site.push(call_stmt("__rolex_preserve_state", with_id(&id, &all, pos), pos));
                site.push(call_stmt("__rolex_create_checkpoint", with_id(&id, &saved, pos), pos));
                site.push(call_stmt(&id, args_for(0), pos));
                site.push(call_stmt("__rolex_jmp_fwd", vec![id_lit(&id, pos)], pos));
                site.push(call_stmt("__rolex_restore_checkpoint", vec![id_lit(&id, pos)], pos));
                let mut back = vec![id_lit(&id, pos)];
                if let Some(a) = d.ameliorate() {
                    site.push(Stmt::new(
                        StmtKind::Assign {
                            target: Expr::var("__rolex_amel", pos),
                            value: Expr::call(&a.name, a.args.clone(), pos),
                        },
                        pos,
                    ));
                    back.push(Expr::var("__rolex_amel", pos));
                }
                site.push(call_stmt("__rolex_jmp_back", back, pos));
            }
            Some(strength) => {
                policy = BlockPolicy::Redundant(strength);
                let copies = strength.copies();
                for v in &replicated {
                    let ty = env.lookup(v).map(|b| b.ty).expect("captured variable has a type");
                    for k in 1..copies {
                        site.push(Stmt::new(
                            StmtKind::Decl(VarDecl {
                                qualifier: None,
                                ty: ty.clone(),
                                name: private_replica(v, k),
                                init: None,
                                pos,
                            }),
                            pos,
                        ));
                    }
                }
                site.push(call_stmt("__rolex_preserve_state", with_id(&id, &all, pos), pos));
                site.push(call_stmt("__rolex_create_checkpoint", with_id(&id, &all, pos), pos));
                for v in &replicated {
                    for k in 1..copies {
                        site.push(call_stmt(
                            "__rolex_copy",
                            vec![Expr::var(private_replica(v, k), pos), Expr::var(v, pos)],
                            pos,
                        ));
                    }
                }
                for k in 0..copies {
                    site.push(call_stmt(&id, args_for(k), pos));
                }
                for v in &info.compare {
                    let places = (0..copies)
                        .map(|k| Expr::var(if k == 0 { v.clone() } else { private_replica(v, k) }, pos))
                        .collect();
                    site.push(call_stmt("__rolex_compare", places, pos));
                }
                site.push(call_stmt("__rolex_jmp_fwd", vec![id_lit(&id, pos)], pos));
                site.push(call_stmt("__rolex_restore_checkpoint", vec![id_lit(&id, pos)], pos));
                site.push(call_stmt("__rolex_jmp_back", vec![id_lit(&id, pos)], pos));
            }
        }
        info.fallback = false;
        let mut rec = ProfileRecord::new(RecordKind::Block, id, None);
        rec.policy = Some(policy);
        rec.block = info;
        self.blocks.push((pos, rec));
        Ok(Stmt::new(StmtKind::Block(site), pos))
    }

    fn declare_wrapper(
        &mut self,
        f: Function,
        d: &DeclareDirective,
        program: &Program,
    ) -> Result<(Function, Function), TransformError> {
        let pos = d.pos;
        let (_, id) = self.ids[&(pos.line, pos.col)].clone();
        let policy = match d.kind {
            DeclareKind::Retry => BlockPolicy::Retry,
            DeclareKind::Ignore => BlockPolicy::Ignore,
            DeclareKind::Robust(s) => BlockPolicy::DeclareRedundant(s),
        };
        if let DeclareKind::Robust(_) = d.kind {
            let mut err = None;
            let mut body = f.body.clone().unwrap_or_default();
            let params: HashSet<String> = f.params.iter().map(|p| p.name.clone()).collect();
            visit_scoped(&mut body, &mut vec![params, HashSet::new()], &mut |s, bound| match &s.kind {
                StmtKind::Print(_) => {
                    err.get_or_insert_with(|| TransformError::new(s.pos, "print inside a robust function"));
                }
                StmtKind::Assign { target, .. } => {
                    if let Some(root) = written_root(target) {
                        let through_ptr = !matches!(target.kind, ExprKind::Var(_));
                        if (!is_bound(bound, root) && program.global(root).is_some()) || (through_ptr && is_bound(&bound[..1], root))
                        {
                            err.get_or_insert_with(|| {
                                TransformError::new(s.pos, format!("robust function writes non-local storage through '{root}'"))
                            });
                        }
                    }
                }
                _ => {}
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        let imp = Function { name: id.clone(), ..f.clone() };
        let args: Vec<Expr> = f.params.iter().map(|p| Expr::var(&p.name, pos)).collect();
        let has_ret = f.ret != Type::Void;
        let decl = |name: &str| {
            Stmt::new(
                StmtKind::Decl(VarDecl { qualifier: None, ty: f.ret.clone(), name: name.into(), init: None, pos }),
                pos,
            )
        };
        let assign_call = |name: &str| {
            if has_ret {
                Stmt::new(
                    StmtKind::Assign { target: Expr::var(name, pos), value: Expr::call(&id, args.clone(), pos) },
                    pos,
                )
            } else {
                call_stmt(&id, args.clone(), pos)
            }
        };
        let mut body = Vec::new();
        if has_ret {
            body.push(decl("__rolex_ret"));
        }
        body.push(call_stmt("__rolex_preserve_state", vec![id_lit(&id, pos)], pos));
        body.push(call_stmt("__rolex_create_checkpoint", vec![id_lit(&id, pos)], pos));
        match d.kind {
            DeclareKind::Robust(s) => {
                let copies = s.copies();
                let names: Vec<String> = (0..copies).map(|k| format!("__rolex_r{k}")).collect();
                if has_ret {
                    for n in &names {
                        body.insert(1, decl(n));
                    }
                }
                for n in &names {
                    body.push(assign_call(n));
                }
                if has_ret {
                    body.push(call_stmt("__rolex_compare", names.iter().map(|n| Expr::var(n, pos)).collect(), pos));
                    body.push(Stmt::new(
                        StmtKind::Assign { target: Expr::var("__rolex_ret", pos), value: Expr::var(&names[0], pos) },
                        pos,
                    ));
                }
            }
            _ => body.push(assign_call("__rolex_ret")),
        }
        body.push(call_stmt("__rolex_jmp_fwd", vec![id_lit(&id, pos)], pos));
        body.push(call_stmt("__rolex_restore_checkpoint", vec![id_lit(&id, pos)], pos));
        body.push(call_stmt("__rolex_jmp_back", vec![id_lit(&id, pos)], pos));
        if has_ret {
            let fallback = d
                .fallback
                .as_ref()
                .and_then(|v| v.first().cloned())
                .unwrap_or_else(|| zero_of(&f.ret, pos));
            let cond = Expr::new(
                ExprKind::Binary(
                    BinaryOp::Eq,
                    Box::new(Expr::call("__rolex_icv", vec![id_lit(&id, pos)], pos)),
                    Box::new(Expr::int(2, pos)),
                ),
                pos,
            );
            let set = Stmt::new(StmtKind::Assign { target: Expr::var("__rolex_ret", pos), value: fallback }, pos);
            body.push(Stmt::new(
                StmtKind::If { cond, then: Box::new(Stmt::new(StmtKind::Block(vec![set]), pos)), els: None },
                pos,
            ));
            body.push(Stmt::new(StmtKind::Return(Some(Expr::var("__rolex_ret", pos))), pos));
        }
        let wrapper = Function { body: Some(body), ..f.clone() };
        self.outlined.insert(format!("{}@{}:{}", f.name, pos.line, pos.col), id.clone());
        let mut rec = ProfileRecord::new(RecordKind::Block, id, None);
        rec.policy = Some(policy);
        rec.block.fallback = d.fallback.as_ref().is_some_and(|v| !v.is_empty());
        self.blocks.push((pos, rec));
        Ok((imp, wrapper))
    }
}

#[cfg(test)]
mod tests {
    use super::super::transform;
    use crate::frontend::{check_source, print_program};

    fn run(src: &str) -> super::TransformedProgram {
        transform(&check_source(src).unwrap()).unwrap()
    }

    #[test]
    fn rollback_block_is_outlined() {
        let t = run("int a;\nint main() {\nint t;\n#pragma rolex recover-rollback share(a) private(t)\n{ t = 4; a = a + t; }\nprint(a);\nreturn 0;\n}");
        let text = print_program(&t.program);
        assert!(text.contains("void __rolex_blk_0(int *t, int *a)"), "{text}");
        assert!(text.contains("(*a) = ((*a) + (*t));"), "{text}");
        assert!(text.contains("__rolex_create_checkpoint(\"__rolex_blk_0\", a);"), "{text}");
        assert!(text.contains("__rolex_blk_0((&t), (&a));"), "{text}");
        assert_eq!(t.profile.to_text(), "ROLEXPROFILE 1\nBLOCK __rolex_blk_0 - policy=rollback share=a private=t\n");
        assert_eq!(t.icvs, ["__rolex_blk_0"]);
        assert!(text.starts_with("int a;\nvoid __rolex_blk_0"), "{text}");
    }

    #[test]
    fn robust_block_runs_three_times() {
        let t = run("int main() {\nint s;\nint x;\nx = 3;\n#pragma rolex robust CORRECT compare(s)\n{ s = x * 2; }\nprint(s);\nreturn 0;\n}");
        let text = print_program(&t.program);
        assert_eq!(text.matches("__rolex_blk_0((&s__p").count(), 2, "{text}");
        assert!(text.contains("__rolex_compare(s, s__p1, s__p2);"), "{text}");
    }

    #[test]
    fn robust_block_rejects_shared_write() {
        let p = check_source("int g;\nint main() {\nint s;\n#pragma rolex robust DETECT compare(s)\n{ s = 1; g = 2; }\nreturn 0;\n}").unwrap();
        assert!(transform(&p).is_err());
    }

    #[test]
    fn declare_wrapper_with_fallback() {
        let t = run("#pragma rolex declare resilient ignore fallback(7)\nint f(int x) { return x + 1; }\nint main() { print(f(1)); return 0; }");
        let text = print_program(&t.program);
        assert!(text.contains("int f__rolex_impl(int x)"), "{text}");
        assert!(text.contains("__rolex_ret = f__rolex_impl(x);"), "{text}");
        assert!(text.contains("__rolex_ret = 7;"), "{text}");
        assert!(t.profile.to_text().contains("BLOCK f__rolex_impl - policy=ignore fallback=yes"));
    }

    #[test]
    fn qualified_data_and_heap_records_in_order() {
        let t = run("tolerant(MAXIMUS = 1023) unsigned int c;\nint main() {\nfloat *v;\nv = (float *) rolex_malloc_tolerant(64, NULL);\nrobust(DETECT) int k = 0;\nk = k + 1;\nfree(v);\nreturn k;\n}");
        let text = t.profile.to_text();
        assert_eq!(
            text,
            "ROLEXPROFILE 1\nTOLERANT c U32 mask=000003ff\nTOLERANTHEAP main::v F32 mask=none\nROBUST main::k I32 strength=detect\n"
        );
        let prog = print_program(&t.program);
        assert!(prog.contains("__rolex_alloc(64, \"main::v\")"), "{prog}");
        assert!(prog.contains("__rolex_initialize();"));
        assert!(prog.contains("__rolex_finalize();\nreturn k;") || prog.contains("__rolex_finalize();\n    return k;"), "{prog}");
        assert!(!prog.contains("tolerant"));
    }
}
