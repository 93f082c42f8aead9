//! Statement-level DMR/TMR for `robust`-qualified variables and for memory
//! obtained from `rolex_malloc_robust`.
//!
//! Each write to a robust variable is issued once per replica, with every
//! robust variable read in the statement substituted by the same replica, and
//! followed by a `__rolex_compare` over the written places. Writes through a
//! pointer that holds a robust allocation are mirrored into the other copies
//! via `__rolex_replica(p, k)`. Reads use replica 0.

use std::collections::HashMap;

use super::env::Env;
use super::{replica_name, TransformError};
use crate::frontend::ast::*;

/// Variable identity: `(Some(function), name)` for locals, `(None, name)` for globals.
type VarKey = (Option<String>, String);

pub fn replicate_robust(program: &Program) -> Result<Program, TransformError> {
    let heap = robust_heap_vars(program)?;
    let mut items = Vec::new();
    for item in &program.items {
        match item {
            Item::Global(d) => {
                items.push(Item::Global(d.clone()));
                if let Some(Qualifier::Robust(s)) = d.qualifier {
                    if let Some(init) = &d.init {
                        if init_has_call(init) {
                            return Err(TransformError::new(d.pos, "robust global initializer must be constant"));
                        }
                    }
                    for k in 1..s.copies() {
                        items.push(Item::Global(VarDecl {
                            qualifier: None,
                            ty: d.ty.clone(),
                            name: replica_name(&d.name, k),
                            init: d.init.clone(),
                            pos: d.pos,
                        }));
                    }
                }
            }
            Item::Function(f) => {
                let mut f = f.clone();
                if let Some(body) = &f.body {
                    let mut r = Replicator { env: Env::new(program), heap: &heap, func: f.name.clone() };
                    r.env.enter_function(&f);
                    r.env.push();
                    f.body = Some(r.stmts(body)?);
                }
                items.push(Item::Function(f));
            }
        }
    }
    Ok(Program { items })
}

fn init_has_call(init: &Init) -> bool {
    match init {
        Init::Expr(e) => e.contains_call(),
        Init::List(items) => items.iter().any(init_has_call),
    }
}

fn strip_casts(e: &Expr) -> &Expr {
    match &e.kind {
        ExprKind::Cast(_, inner) => strip_casts(inner),
        _ => e,
    }
}

/// Copies requested by a `rolex_malloc_robust(size, K)` call.
fn robust_alloc_copies(e: &Expr) -> Option<usize> {
    match &strip_casts(e).kind {
        ExprKind::Call { name, args } if name == "rolex_malloc_robust" && args.len() == 2 => match args[1].kind {
            ExprKind::IntLit { value: v @ (2 | 3), .. } => Some(v as usize),
            _ => None,
        },
        _ => None,
    }
}

/// Pointer variables that receive a robust allocation, with their copy count.
fn robust_heap_vars(program: &Program) -> Result<HashMap<VarKey, usize>, TransformError> {
    let mut out = HashMap::new();
    for f in program.functions() {
        let Some(body) = &f.body else { continue };
        let mut env = Env::new(program);
        env.enter_function(f);
        env.push();
        let mut record = |env: &Env, name: &str, copies: usize, pos: Pos| -> Result<(), TransformError> {
            let local = env.lookup(name).is_some_and(|b| b.local);
            let key = (local.then(|| f.name.clone()), name.to_string());
            match out.insert(key, copies) {
                Some(prev) if prev != copies => {
                    Err(TransformError::new(pos, format!("'{name}' receives robust allocations of different strengths")))
                }
                _ => Ok(()),
            }
        };
        scan(body, &mut env, &mut record)?;
    }
    Ok(out)
}

fn scan(
    stmts: &[Stmt],
    env: &mut Env,
    record: &mut dyn FnMut(&Env, &str, usize, Pos) -> Result<(), TransformError>,
) -> Result<(), TransformError> {
    for s in stmts {
        scan_stmt(s, env, record)?;
    }
    Ok(())
}

fn scan_stmt(
    s: &Stmt,
    env: &mut Env,
    record: &mut dyn FnMut(&Env, &str, usize, Pos) -> Result<(), TransformError>,
) -> Result<(), TransformError> {
    match &s.kind {
        StmtKind::Decl(d) => {
            env.declare(&d.name, d.ty.clone(), d.qualifier.clone());
            if let Some(Init::Expr(e)) = &d.init {
                if let Some(k) = robust_alloc_copies(e) {
                    record(env, &d.name, k, d.pos)?;
                }
            }
        }
        StmtKind::Assign { target, value } => {
            if let (ExprKind::Var(n), Some(k)) = (&target.kind, robust_alloc_copies(value)) {
                record(env, n, k, s.pos)?;
            }
        }
        StmtKind::If { then, els, .. } => {
            scoped_scan(std::slice::from_ref(then.as_ref()), env, record)?;
            if let Some(e) = els {
                scoped_scan(std::slice::from_ref(e.as_ref()), env, record)?;
            }
        }
        StmtKind::While { body, .. } => scoped_scan(std::slice::from_ref(body.as_ref()), env, record)?,
        StmtKind::For { init, step, body, .. } => {
            env.push();
            if let Some(i) = init {
                scan_stmt(i, env, record)?;
            }
            if let Some(st) = step {
                scan_stmt(st, env, record)?;
            }
            scoped_scan(std::slice::from_ref(body.as_ref()), env, record)?;
            env.pop();
        }
        StmtKind::Block(b) => scoped_scan(b, env, record)?,
        StmtKind::Directive(d) => scoped_scan(std::slice::from_ref(d.body.as_ref()), env, record)?,
        _ => {}
    }
    Ok(())
}

fn scoped_scan(
    stmts: &[Stmt],
    env: &mut Env,
    record: &mut dyn FnMut(&Env, &str, usize, Pos) -> Result<(), TransformError>,
) -> Result<(), TransformError> {
    env.push();
    let r = scan(stmts, env, record);
    env.pop();
    r
}

struct Replicator<'a, 'p> {
    env: Env<'p>,
    heap: &'a HashMap<VarKey, usize>,
    func: String,
}

fn compare_call(places: Vec<Expr>, pos: Pos) -> Stmt {
    Stmt::new(StmtKind::Expr(Expr::call("__rolex_compare", places, pos)), pos)
}

fn replica_ptr(p: &Expr, k: usize) -> Expr {
    Expr::call("__rolex_replica", vec![p.clone(), Expr::int(k as i64, p.pos)], p.pos)
}

impl Replicator<'_, '_> {
    fn robust_strength(&self, name: &str) -> Option<Strength> {
        match self.env.lookup(name)?.qualifier {
            Some(Qualifier::Robust(s)) => Some(s),
            _ => None,
        }
    }

    fn heap_copies(&self, name: &str) -> Option<usize> {
        let b = self.env.lookup(name)?;
        let key = (b.local.then(|| self.func.clone()), name.to_string());
        self.heap.get(&key).copied()
    }

    /// Replace every robust variable by its `k`-th replica.
    fn subst(&self, e: &Expr, k: usize) -> Expr {
        let mut out = e.clone();
        if k == 0 {
            return out;
        }
        out.walk_mut(&mut |x| {
            if let ExprKind::Var(n) = &x.kind {
                if self.robust_strength(n).is_some() {
                    x.kind = ExprKind::Var(replica_name(n, k));
                }
            }
        });
        out
    }

    fn subst_init(&self, init: &Init, k: usize) -> Init {
        match init {
            Init::Expr(e) => Init::Expr(self.subst(e, k)),
            Init::List(items) => Init::List(items.iter().map(|i| self.subst_init(i, k)).collect()),
        }
    }

    /// Reject uses that would let a robust object escape replication.
    fn check_expr(&self, e: &Expr, index_base: bool, exempt: bool) -> Result<(), TransformError> {
        match &e.kind {
            ExprKind::Var(n) => {
                if !index_base && !exempt && self.robust_strength(n).is_some() {
                    if self.env.lookup(n).is_some_and(|b| b.ty.is_array()) {
                        return Err(TransformError::new(
                            e.pos,
                            format!("robust-qualified array '{n}' cannot be used as a pointer value"),
                        ));
                    }
                }
                Ok(())
            }
            ExprKind::Unary(UnaryOp::AddrOf, inner) => {
                if let Some(root) = self.env.storage_root(inner) {
                    if self.robust_strength(root).is_some() {
                        return Err(TransformError::new(
                            e.pos,
                            format!("address of robust-qualified variable '{root}' is taken"),
                        ));
                    }
                }
                self.check_expr(inner, false, false)
            }
            ExprKind::Unary(_, inner) | ExprKind::Cast(_, inner) => self.check_expr(inner, false, false),
            ExprKind::Binary(_, a, b) => {
                self.check_expr(a, false, false)?;
                self.check_expr(b, false, false)
            }
            ExprKind::Index(a, b) => {
                self.check_expr(a, true, false)?;
                self.check_expr(b, false, false)
            }
            ExprKind::Call { name, args } => {
                let exempt = name == "rolex_validate_robust";
                for a in args {
                    self.check_expr(a, false, exempt)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn check_stmt_exprs(&self, s: &Stmt) -> Result<(), TransformError> {
        for e in stmt_exprs(s) {
            self.check_expr(e, false, false)?;
        }
        Ok(())
    }

    fn stmts(&mut self, stmts: &[Stmt]) -> Result<Vec<Stmt>, TransformError> {
        let mut out = Vec::new();
        for s in stmts {
            out.extend(self.stmt(s)?);
        }
        Ok(out)
    }

    fn single(&mut self, s: &Stmt) -> Result<Stmt, TransformError> {
        self.env.push();
        let mut v = self.stmt(s)?;
        self.env.pop();
        Ok(if v.len() == 1 { v.remove(0) } else { Stmt::new(StmtKind::Block(v), s.pos) })
    }

    fn header(&mut self, s: &Stmt) -> Result<Stmt, TransformError> {
        let v = self.stmt(s)?;
        if v.len() != 1 {
            return Err(TransformError::new(s.pos, "robust-qualified variable written in a for-loop header"));
        }
        Ok(v.into_iter().next().unwrap())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<Vec<Stmt>, TransformError> {
        let pos = s.pos;
        match &s.kind {
            StmtKind::Decl(d) => {
                if let Some(Init::Expr(e)) = &d.init {
                    self.check_expr(e, false, false)?;
                }
                self.env.declare(&d.name, d.ty.clone(), d.qualifier.clone());
                let mut out = vec![s.clone()];
                if let Some(Qualifier::Robust(st)) = d.qualifier {
                    for k in 1..st.copies() {
                        let init = d.init.as_ref().map(|i| {
                            if init_has_call(i) {
                                Init::Expr(Expr::var(&d.name, pos))
                            } else {
                                self.subst_init(i, k)
                            }
                        });
                        out.push(Stmt::new(
                            StmtKind::Decl(VarDecl {
                                qualifier: None,
                                ty: d.ty.clone(),
                                name: replica_name(&d.name, k),
                                init,
                                pos,
                            }),
                            pos,
                        ));
                    }
                }
                Ok(out)
            }
            StmtKind::Assign { target, value } => {
                self.check_stmt_exprs(s)?;
                self.assign(target, value, pos)
            }
            StmtKind::If { cond, then, els } => {
                self.check_expr(cond, false, false)?;
                let then = Box::new(self.single(then)?);
                let els = match els {
                    Some(e) => Some(Box::new(self.single(e)?)),
                    None => None,
                };
                Ok(vec![Stmt::new(StmtKind::If { cond: cond.clone(), then, els }, pos)])
            }
            StmtKind::While { cond, body } => {
                self.check_expr(cond, false, false)?;
                let body = Box::new(self.single(body)?);
                Ok(vec![Stmt::new(StmtKind::While { cond: cond.clone(), body }, pos)])
            }
            StmtKind::For { init, cond, step, body } => {
                self.env.push();
                let init = match init {
                    Some(i) => {
                        if let StmtKind::Decl(d) = &i.kind {
                            if matches!(d.qualifier, Some(Qualifier::Robust(_))) {
                                return Err(TransformError::new(
                                    i.pos,
                                    "robust-qualified variable declared in a for-loop header",
                                ));
                            }
                        }
                        Some(Box::new(self.header(i)?))
                    }
                    None => None,
                };
                if let Some(c) = cond {
                    self.check_expr(c, false, false)?;
                }
                let step = match step {
                    Some(st) => Some(Box::new(self.header(st)?)),
                    None => None,
                };
                let body = Box::new(self.single(body)?);
                self.env.pop();
                Ok(vec![Stmt::new(StmtKind::For { init, cond: cond.clone(), step, body }, pos)])
            }
            StmtKind::Block(b) => {
                self.env.push();
                let b = self.stmts(b)?;
                self.env.pop();
                Ok(vec![Stmt::new(StmtKind::Block(b), pos)])
            }
            StmtKind::Directive(d) => {
                let body = Box::new(self.single(&d.body)?);
                let mut d = d.clone();
                d.body = body;
                Ok(vec![Stmt::new(StmtKind::Directive(d), pos)])
            }
            _ => {
                self.check_stmt_exprs(s)?;
                Ok(vec![s.clone()])
            }
        }
    }

    fn assign(&mut self, target: &Expr, value: &Expr, pos: Pos) -> Result<Vec<Stmt>, TransformError> {
        let plain = || vec![Stmt::new(StmtKind::Assign { target: target.clone(), value: value.clone() }, pos)];
        let qualifier_root = self.env.storage_root(target).map(str::to_string);
        if let Some(strength) = qualifier_root.as_deref().and_then(|r| self.robust_strength(r)) {
            if target.contains_call() {
                return Err(TransformError::new(pos, "robust-qualified write with a call in its target"));
            }
            let copies = strength.copies();
            let hoisted = value.contains_call();
            let mut out = Vec::new();
            let mut places = Vec::new();
            for k in 0..copies {
                let t = self.subst(target, k);
                let v = if k == 0 {
                    value.clone()
                } else if hoisted {
                    target.clone()
                } else {
                    self.subst(value, k)
                };
                places.push(t.clone());
                out.push(Stmt::new(StmtKind::Assign { target: t, value: v }, pos));
            }
            out.push(compare_call(places, pos));
            return Ok(out);
        }
        if let Some((ptr, rebuild)) = self.heap_write(target) {
            let copies = self.heap_copies(ptr_name(&ptr)).unwrap_or(1);
            if target.contains_call() {
                return Err(TransformError::new(pos, "robust allocation write with a call in its target"));
            }
            let mut out = vec![Stmt::new(StmtKind::Assign { target: target.clone(), value: value.clone() }, pos)];
            let mut places = vec![target.clone()];
            for k in 1..copies {
                let t = rebuild(replica_ptr(&ptr, k));
                let v = if value.contains_call() { target.clone() } else { value.clone() };
                places.push(t.clone());
                out.push(Stmt::new(StmtKind::Assign { target: t, value: v }, pos));
            }
            out.push(compare_call(places, pos));
            return Ok(out);
        }
        Ok(plain())
    }

    /// `p[i]` or `*p` where `p` holds a robust allocation.
    #[allow(clippy::type_complexity)]
    fn heap_write(&self, target: &Expr) -> Option<(Expr, Box<dyn Fn(Expr) -> Expr>)> {
        match &target.kind {
            ExprKind::Index(base, idx) => {
                let ExprKind::Var(n) = &base.kind else { return None };
                self.heap_copies(n)?;
                let idx = (**idx).clone();
                let pos = target.pos;
                Some(((**base).clone(), Box::new(move |p| Expr::new(ExprKind::Index(Box::new(p), Box::new(idx.clone())), pos))))
            }
            ExprKind::Unary(UnaryOp::Deref, inner) => {
                let ExprKind::Var(n) = &inner.kind else { return None };
                self.heap_copies(n)?;
                Some(((**inner).clone(), Box::new(Expr::deref)))
            }
            _ => None,
        }
    }
}

fn ptr_name(e: &Expr) -> &str {
    match &e.kind {
        ExprKind::Var(n) => n,
        _ => "",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_source, print_program};

    fn rep(src: &str) -> String {
        print_program(&replicate_robust(&parse_source(src).unwrap()).unwrap())
    }

    #[test]
    fn tmr_pointer_write() {
        let out = rep("int base[8];\nint main() { robust(CORRECT) int *p; int i; i = 2; p = base + i; return 0; }");
        assert!(out.contains("p = (base + i);"), "{out}");
        assert!(out.contains("p__r1 = (base + i);"), "{out}");
        assert!(out.contains("p__r2 = (base + i);"), "{out}");
        assert!(out.contains("__rolex_compare(p, p__r1, p__r2);"), "{out}");
    }

    #[test]
    fn dmr_increment_uses_own_replica() {
        let out = rep("int main() { robust(DETECT) int x = 0; x = x + 1; x = x + 1; return x; }");
        assert_eq!(out.matches("x__r1 = (x__r1 + 1);").count(), 2, "{out}");
        assert!(!out.contains("x__r2"));
    }

    #[test]
    fn no_robust_is_identity() {
        let src = "int g;\nint main() { g = 3; print(g); return 0; }";
        let p = parse_source(src).unwrap();
        assert_eq!(replicate_robust(&p).unwrap(), p);
    }

    #[test]
    fn address_of_robust_is_rejected() {
        let p = parse_source("int main() { robust(DETECT) int x; int *q; q = &x; return 0; }").unwrap();
        assert!(replicate_robust(&p).is_err());
    }

    #[test]
    fn robust_allocation_writes_are_mirrored() {
        let out = rep("int main() { int *e; e = (int *) rolex_malloc_robust(16, 3); e[1] = 7; return 0; }");
        assert!(out.contains("__rolex_replica(e, 1)[1] = 7;"), "{out}");
        assert!(out.contains("__rolex_replica(e, 2)[1] = 7;"), "{out}");
        assert!(out.contains("__rolex_compare(e[1], __rolex_replica(e, 1)[1], __rolex_replica(e, 2)[1]);"), "{out}");
    }

    #[test]
    fn call_value_is_evaluated_once() {
        let out = rep("int f() { return 4; }\nint main() { robust(CORRECT) int x; x = f(); return x; }");
        assert_eq!(out.matches("= f()").count(), 1, "{out}");
        assert!(out.contains("x__r1 = x;"), "{out}");
    }
}
