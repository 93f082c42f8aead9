//! Data-side profile records, allocation-site rewriting and qualifier removal.

use std::collections::HashMap;

use super::env::Env;
use super::profile::{ProfileRecord, RecordKind};
use super::{replica_name, TransformError};
use crate::bitmask::{derive_mask, RolexPrecision};
use crate::frontend::ast::*;

pub(crate) struct Annotated {
    pub program: Program,
    pub records: Vec<(Pos, ProfileRecord)>,
}

pub(crate) fn annotate(program: &Program) -> Result<Annotated, TransformError> {
    let mut records = Vec::new();
    let mut heap_ids: HashMap<String, usize> = HashMap::new();
    let mut items = Vec::new();
    for item in &program.items {
        match item {
            Item::Global(d) => {
                if let Some(r) = qualifier_record(d, d.name.clone())? {
                    records.push((d.pos, r));
                }
                items.push(Item::Global(VarDecl { qualifier: None, ..d.clone() }));
            }
            Item::Function(f) => {
                let mut f = f.clone();
                if let Some(body) = f.body.take() {
                    let mut a = Annotator {
                        env: Env::new(program),
                        func: f.name.clone(),
                        records: &mut records,
                        heap_ids: &mut heap_ids,
                    };
                    a.env.enter_function(&f);
                    a.env.push();
                    f.body = Some(a.stmts(body)?);
                }
                items.push(Item::Function(f));
            }
        }
    }
    Ok(Annotated { program: Program { items }, records })
}

fn qualifier_record(d: &VarDecl, id: String) -> Result<Option<ProfileRecord>, TransformError> {
    let Some(q) = &d.qualifier else { return Ok(None) };
    let elem = d.ty.element_kind();
    let rec = match q {
        Qualifier::Tolerant(limit) => {
            let kind = elem.ok_or_else(|| TransformError::new(d.pos, "tolerant object must have scalar elements"))?;
            let mut r = ProfileRecord::new(RecordKind::Tolerant, id, Some(kind));
            r.mask = Some(derive_mask(kind, *limit).map_err(|e| TransformError::new(d.pos, e.to_string()))?);
            r
        }
        Qualifier::Robust(s) => {
            let mut r = ProfileRecord::new(RecordKind::Robust, id, elem);
            r.strength = Some(*s);
            r
        }
        Qualifier::Heal(f) => {
            let mut r = ProfileRecord::new(RecordKind::Heal, id, elem);
            r.recovery_fn = Some(f.clone());
            r
        }
    };
    Ok(Some(rec))
}

const ALLOCATORS: [&str; 3] = ["rolex_malloc_tolerant", "rolex_malloc_robust", "rolex_malloc_repairable"];

fn alloc_call(e: &Expr) -> Option<(&str, &[Expr])> {
    match &e.kind {
        ExprKind::Cast(_, inner) => alloc_call(inner),
        ExprKind::Call { name, args } if ALLOCATORS.contains(&name.as_str()) => Some((name, args)),
        _ => None,
    }
}

fn const_int(e: &Expr) -> Option<u64> {
    match &e.kind {
        ExprKind::IntLit { value, .. } => Some(*value),
        ExprKind::Cast(_, inner) => const_int(inner),
        _ => None,
    }
}

struct Annotator<'a, 'p> {
    env: Env<'p>,
    func: String,
    records: &'a mut Vec<(Pos, ProfileRecord)>,
    heap_ids: &'a mut HashMap<String, usize>,
}

impl Annotator<'_, '_> {
    fn stmts(&mut self, stmts: Vec<Stmt>) -> Result<Vec<Stmt>, TransformError> {
        stmts.into_iter().map(|s| self.stmt(s)).collect()
    }

    fn scoped(&mut self, s: Stmt) -> Result<Stmt, TransformError> {
        self.env.push();
        let r = self.stmt(s);
        self.env.pop();
        r
    }

    fn stmt(&mut self, mut s: Stmt) -> Result<Stmt, TransformError> {
        let pos = s.pos;
        s.kind = match s.kind {
            StmtKind::Decl(mut d) => {
                if let Some(r) = qualifier_record(&d, format!("{}::{}", self.func, d.name))? {
                    self.records.push((d.pos, r));
                }
                self.env.declare(&d.name, d.ty.clone(), d.qualifier.clone());
                if let Some(Init::Expr(e)) = &mut d.init {
                    if alloc_call(e).is_some() {
                        *e = self.alloc_site(&d.name, e, d.pos)?;
                    } else {
                        self.expr(e)?;
                    }
                }
                d.qualifier = None;
                StmtKind::Decl(d)
            }
            StmtKind::Assign { target, mut value } => {
                let mut target = target;
                self.expr(&mut target)?;
                if let (ExprKind::Var(n), Some(_)) = (&target.kind, alloc_call(&value)) {
                    value = self.alloc_site(n, &value, pos)?;
                } else {
                    self.expr(&mut value)?;
                }
                StmtKind::Assign { target, value }
            }
            StmtKind::Expr(mut e) => {
                self.expr(&mut e)?;
                StmtKind::Expr(e)
            }
            StmtKind::If { mut cond, then, els } => {
                self.expr(&mut cond)?;
                let then = Box::new(self.scoped(*then)?);
                let els = match els {
                    Some(e) => Some(Box::new(self.scoped(*e)?)),
                    None => None,
                };
                StmtKind::If { cond, then, els }
            }
            StmtKind::While { mut cond, body } => {
                self.expr(&mut cond)?;
                StmtKind::While { cond, body: Box::new(self.scoped(*body)?) }
            }
            StmtKind::For { init, cond, step, body } => {
                self.env.push();
                let init = match init {
                    Some(i) => Some(Box::new(self.stmt(*i)?)),
                    None => None,
                };
                let cond = match cond {
                    Some(mut c) => {
                        self.expr(&mut c)?;
                        Some(c)
                    }
                    None => None,
                };
                let step = match step {
                    Some(st) => Some(Box::new(self.stmt(*st)?)),
                    None => None,
                };
                let body = Box::new(self.scoped(*body)?);
                self.env.pop();
                StmtKind::For { init, cond, step, body }
            }
            StmtKind::Block(b) => {
                self.env.push();
                let b = self.stmts(b)?;
                self.env.pop();
                StmtKind::Block(b)
            }
            StmtKind::Return(Some(mut e)) => {
                self.expr(&mut e)?;
                StmtKind::Return(Some(e))
            }
            StmtKind::Print(mut args) => {
                for a in &mut args {
                    self.expr(a)?;
                }
                StmtKind::Print(args)
            }
            StmtKind::Directive(mut d) => {
                d.body = Box::new(self.scoped(*d.body)?);
                StmtKind::Directive(d)
            }
            other => other,
        };
        Ok(s)
    }

    /// Rewrite validate calls; allocations are only legal as a whole assignment source.
    fn expr(&mut self, e: &mut Expr) -> Result<(), TransformError> {
        let mut err = None;
        let env = &self.env;
        e.walk_mut(&mut |x| {
            let ExprKind::Call { name, args } = &x.kind else { return };
            if ALLOCATORS.contains(&name.as_str()) {
                err.get_or_insert_with(|| {
                    TransformError::new(x.pos, format!("result of '{name}' must be assigned directly to a pointer variable"))
                });
            } else if name == "rolex_validate_robust" {
                let ExprKind::Var(v) = &args[0].kind else {
                    err.get_or_insert_with(|| TransformError::new(x.pos, "rolex_validate_robust expects a variable"));
                    return;
                };
                match env.lookup(v).and_then(|b| b.qualifier) {
                    Some(Qualifier::Robust(s)) => {
                        let places = (0..s.copies())
                            .map(|k| if k == 0 { Expr::var(v, x.pos) } else { Expr::var(replica_name(v, k), x.pos) })
                            .collect();
                        *x = Expr::call("__rolex_compare", places, x.pos);
                    }
                    _ => *x = Expr::call("__rolex_validate_heap", args.clone(), x.pos),
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn alloc_site(&mut self, var: &str, value: &Expr, pos: Pos) -> Result<Expr, TransformError> {
        let (name, args) = alloc_call(value).expect("allocation call");
        let ty = self
            .env
            .lookup(var)
            .map(|b| b.ty)
            .ok_or_else(|| TransformError::new(pos, format!("unknown allocation target '{var}'")))?;
        let elem = ty
            .pointee()
            .and_then(Type::element_kind)
            .filter(|_| ty.is_ptr())
            .ok_or_else(|| TransformError::new(pos, format!("allocation target '{var}' must be a pointer to scalars")))?;
        let base = format!("{}::{}", self.func, var);
        let n = self.heap_ids.entry(base.clone()).or_insert(0);
        *n += 1;
        let id = if *n == 1 { base } else { format!("{base}#{n}") };
        let rec = match name {
            "rolex_malloc_tolerant" => {
                let limit = match &args[1].kind {
                    ExprKind::Null => None,
                    _ => {
                        let v = const_int(&args[1]).ok_or_else(|| {
                            TransformError::new(pos, "tolerant allocation precision must be a constant or NULL")
                        })?;
                        let p = RolexPrecision::for_kind(elem, v).map_err(|e| TransformError::new(pos, e.to_string()))?;
                        Some(p.limit())
                    }
                };
                let mut r = ProfileRecord::new(RecordKind::TolerantHeap, id.clone(), Some(elem));
                r.mask = Some(derive_mask(elem, limit).map_err(|e| TransformError::new(pos, e.to_string()))?);
                r
            }
            "rolex_malloc_robust" => {
                let strength = const_int(&args[1]).and_then(Strength::from_copies).ok_or_else(|| {
                    TransformError::new(pos, "robust allocation strength must be 2 or 3")
                })?;
                let mut r = ProfileRecord::new(RecordKind::RobustHeap, id.clone(), Some(elem));
                r.strength = Some(strength);
                r
            }
            _ => {
                let ExprKind::Var(f) = &args[1].kind else {
                    return Err(TransformError::new(pos, "repairable allocation needs a recovery function name"));
                };
                let mut r = ProfileRecord::new(RecordKind::RepairableHeap, id.clone(), Some(elem));
                r.recovery_fn = Some(f.clone());
                r
            }
        };
        self.records.push((pos, rec));
        let mut size = args[0].clone();
        self.expr(&mut size)?;
        let call = Expr::call("__rolex_alloc", vec![size, Expr::new(ExprKind::StrLit(id), pos)], pos);
        Ok(match &value.kind {
            ExprKind::Cast(t, _) => Expr::new(ExprKind::Cast(t.clone(), Box::new(call)), value.pos),
            _ => call,
        })
    }
}
