//! Static checks over a parsed program: name resolution, structured-block
//! discipline, recovery-function signatures and tolerance-limit widths.

use std::collections::{HashMap, HashSet};

use super::ast::*;
use super::{builtin_arity, Diagnostic};
use crate::bitmask::{derive_mask, ElementKind, ToleranceLimit};

pub const RESERVED_PREFIX: &str = "__rolex";

pub fn validate(program: &Program) -> Vec<Diagnostic> {
    let mut v = Validator::new(program);
    v.run();
    v.diags
}

struct DirCtx {
    loop_depth: usize,
    scope_depth: usize,
    clause_vars: HashSet<String>,
    default_none: bool,
    reported: HashSet<String>,
}

struct Validator<'p> {
    program: &'p Program,
    globals: HashMap<&'p str, &'p VarDecl>,
    scopes: Vec<HashMap<String, Type>>,
    loop_depth: usize,
    directives: Vec<DirCtx>,
    diags: Vec<Diagnostic>,
}

impl<'p> Validator<'p> {
    fn new(program: &'p Program) -> Self {
        Validator {
            program,
            globals: HashMap::new(),
            scopes: Vec::new(),
            loop_depth: 0,
            directives: Vec::new(),
            diags: Vec::new(),
        }
    }

    fn err(&mut self, pos: Pos, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(pos, msg));
    }

    fn check_name(&mut self, name: &str, pos: Pos) {
        if name.starts_with(RESERVED_PREFIX) {
            self.err(pos, format!("identifier '{name}' uses the reserved {RESERVED_PREFIX}_ prefix"));
        }
    }

    fn run(&mut self) {
        let mut defined: HashSet<&str> = HashSet::new();
        let mut protos: HashMap<&str, &Function> = HashMap::new();
        for item in &self.program.items {
            match item {
                Item::Global(d) => {
                    self.check_name(&d.name, d.pos);
                    if self.globals.contains_key(d.name.as_str()) || protos.contains_key(d.name.as_str()) {
                        self.err(d.pos, format!("redefinition of '{}'", d.name));
                    }
                    self.globals.insert(&d.name, d);
                }
                Item::Function(f) => {
                    self.check_name(&f.name, f.pos);
                    if self.globals.contains_key(f.name.as_str()) || builtin_arity(&f.name).is_some() {
                        self.err(f.pos, format!("redefinition of '{}'", f.name));
                    }
                    if let Some(prev) = protos.get(f.name.as_str()) {
                        if prev.ret != f.ret || !same_params(&prev.params, &f.params) {
                            self.err(f.pos, format!("conflicting declarations of function '{}'", f.name));
                        }
                    }
                    if f.body.is_some() && !defined.insert(&f.name) {
                        self.err(f.pos, format!("redefinition of function '{}'", f.name));
                    }
                    protos.insert(&f.name, f);
                }
            }
        }
        for d in self.program.globals() {
            self.qualified_decl(d);
            if let Some(init) = &d.init {
                self.init(init);
            }
        }
        for f in self.program.functions() {
            if let Some(dd) = &f.declare {
                self.declare(f, dd, defined.contains(f.name.as_str()));
            }
            let Some(body) = &f.body else { continue };
            self.scopes.push(HashMap::new());
            for p in &f.params {
                self.check_name(&p.name, f.pos);
                if self.scopes[0].insert(p.name.clone(), p.ty.clone()).is_some() {
                    self.err(f.pos, format!("duplicate parameter '{}'", p.name));
                }
            }
            self.scopes.push(HashMap::new());
            self.stmts(body);
            self.scopes.clear();
        }
    }

    fn declare(&mut self, f: &Function, dd: &DeclareDirective, defined: bool) {
        if f.name == "main" {
            self.err(dd.pos, "declare directive cannot apply to main");
        }
        if !defined {
            self.err(dd.pos, format!("declare directive on '{}' requires a definition", f.name));
        }
        if let Some(fb) = &dd.fallback {
            if fb.len() > 1 {
                self.err(dd.pos, "fallback takes at most one value");
            }
            if f.ret == Type::Void && !fb.is_empty() {
                self.err(dd.pos, format!("fallback value given for void function '{}'", f.name));
            }
            if f.ret.is_array() {
                self.err(dd.pos, "fallback value must be a scalar");
            }
            for e in fb {
                if e.contains_call() {
                    self.err(e.pos, "fallback value must not call functions");
                }
                self.expr(e);
            }
        }
    }

    fn qualified_decl(&mut self, d: &VarDecl) {
        match &d.qualifier {
            None | Some(Qualifier::Robust(_)) => {}
            Some(Qualifier::Tolerant(limit)) => match d.ty.element_kind() {
                Some(ElementKind::Ptr) | None => {
                    self.err(d.pos, "tolerant qualifier requires integer or floating-point data");
                }
                Some(kind) => self.tolerance_limit(d, kind, *limit),
            },
            Some(Qualifier::Heal(fname)) => {
                if !d.ty.is_array() && !d.ty.is_ptr() {
                    self.err(d.pos, "heal qualifier requires an array or pointer object");
                }
                self.recovery_fn(fname, d.pos, "heal");
            }
        }
    }

    fn tolerance_limit(&mut self, d: &VarDecl, kind: ElementKind, limit: Option<ToleranceLimit>) {
        let Some(lim) = limit else { return };
        let msg = match (kind, lim) {
            (ElementKind::U32, ToleranceLimit::Maximus(m)) if m > u64::from(u32::MAX) => {
                Some("maximus exceeds 32-bit range".to_string())
            }
            (ElementKind::I32, ToleranceLimit::Maximus(m)) if m > i32::MAX as u64 => {
                Some("maximus exceeds signed 32-bit range".to_string())
            }
            (ElementKind::U32 | ElementKind::I32, ToleranceLimit::Precision(_)) => {
                Some("PRECISION applies only to floating-point objects".to_string())
            }
            (ElementKind::F32 | ElementKind::F64, ToleranceLimit::Maximus(_)) => {
                Some("MAXIMUS applies only to integer objects".to_string())
            }
            _ => derive_mask(kind, Some(lim)).err().map(|e| e.to_string()),
        };
        if let Some(m) = msg {
            self.err(d.pos, m);
        }
    }

    /// Heal and repairable-allocation functions: `int f(T *)`.
    fn recovery_fn(&mut self, name: &str, pos: Pos, what: &str) {
        match self.program.function(name) {
            None => self.err(pos, format!("{what} function '{name}' is not declared")),
            Some(f) => {
                if f.ret != Type::Int || f.params.len() != 1 || !f.params[0].ty.is_ptr() {
                    self.err(pos, format!("{what} function '{name}' must have signature int {name}(T *)"));
                }
            }
        }
    }

    fn lookup(&self, name: &str) -> Option<(usize, &Type)> {
        self.scopes.iter().enumerate().rev().find_map(|(i, s)| s.get(name).map(|t| (i, t)))
    }

    fn resolve_var(&mut self, name: &str, pos: Pos) {
        if let Some((depth, _)) = self.lookup(name) {
            let mut missing = false;
            for d in &mut self.directives {
                if d.default_none && depth < d.scope_depth && !d.clause_vars.contains(name) && d.reported.insert(name.to_string()) {
                    missing = true;
                }
            }
            if missing {
                self.err(pos, format!("variable '{name}' must appear in a data clause under default(none)"));
            }
            return;
        }
        if self.globals.contains_key(name) || self.program.function(name).is_some() {
            return;
        }
        if name.starts_with(RESERVED_PREFIX) {
            self.err(pos, format!("identifier '{name}' uses the reserved {RESERVED_PREFIX}_ prefix"));
        } else {
            self.err(pos, format!("use of undeclared identifier '{name}'"));
        }
    }

    fn expr(&mut self, e: &Expr) {
        match &e.kind {
            ExprKind::Var(n) => self.resolve_var(n, e.pos),
            ExprKind::Unary(_, a) | ExprKind::Cast(_, a) => self.expr(a),
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                self.expr(a);
                self.expr(b);
            }
            ExprKind::Call { name, args } => {
                self.call(name, args, e.pos);
                for a in args {
                    self.expr(a);
                }
            }
            _ => {}
        }
    }

    fn call(&mut self, name: &str, args: &[Expr], pos: Pos) {
        let arity = if let Some(n) = builtin_arity(name) {
            n
        } else if let Some(f) = self.program.function(name) {
            f.params.len()
        } else {
            if name.starts_with(RESERVED_PREFIX) {
                self.err(pos, format!("identifier '{name}' uses the reserved {RESERVED_PREFIX}_ prefix"));
            } else {
                self.err(pos, format!("call to undeclared function '{name}'"));
            }
            return;
        };
        if arity != args.len() {
            self.err(pos, format!("function '{name}' expects {arity} argument(s), got {}", args.len()));
            return;
        }
        match name {
            "rolex_malloc_robust" => {
                let ok = matches!(args[1].kind, ExprKind::IntLit { value: 2 | 3, .. });
                if !ok {
                    self.err(args[1].pos, "robust allocation strength must be the constant 2 or 3");
                }
            }
            "rolex_malloc_repairable" => match &args[1].kind {
                ExprKind::Var(f) if self.lookup(f).is_none() && !self.globals.contains_key(f.as_str()) => {
                    let f = f.clone();
                    self.recovery_fn(&f, args[1].pos, "repair");
                }
                _ => self.err(args[1].pos, "repairable allocation needs a recovery function name"),
            },
            _ => {}
        }
    }

    fn init(&mut self, init: &Init) {
        match init {
            Init::Expr(e) => self.expr(e),
            Init::List(items) => items.iter().for_each(|i| self.init(i)),
        }
    }

    fn stmts(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            self.stmt(s);
        }
    }

    fn scoped(&mut self, f: impl FnOnce(&mut Self)) {
        self.scopes.push(HashMap::new());
        f(self);
        self.scopes.pop();
    }

    fn branch(&mut self, pos: Pos, what: &str) {
        if let Some(d) = self.directives.last() {
            if self.loop_depth == d.loop_depth {
                self.err(pos, "branch out of structured block");
                return;
            }
        }
        if self.loop_depth == 0 {
            self.err(pos, format!("'{what}' outside of a loop"));
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Decl(d) => {
                self.check_name(&d.name, d.pos);
                if self.directives.iter().any(|dc| dc.clause_vars.contains(&d.name)) {
                    self.err(d.pos, format!("declaration of '{}' shadows a clause variable", d.name));
                }
                self.qualified_decl(d);
                if let Some(init) = &d.init {
                    self.init(init);
                }
                let scope = self.scopes.last_mut().expect("function scope");
                if scope.insert(d.name.clone(), d.ty.clone()).is_some() {
                    self.err(d.pos, format!("redefinition of '{}'", d.name));
                }
            }
            StmtKind::Assign { target, value } => {
                self.expr(target);
                self.expr(value);
            }
            StmtKind::Expr(e) => self.expr(e),
            StmtKind::If { cond, then, els } => {
                self.expr(cond);
                self.scoped(|v| v.stmt(then));
                if let Some(e) = els {
                    self.scoped(|v| v.stmt(e));
                }
            }
            StmtKind::While { cond, body } => {
                self.expr(cond);
                self.loop_depth += 1;
                self.scoped(|v| v.stmt(body));
                self.loop_depth -= 1;
            }
            StmtKind::For { init, cond, step, body } => self.scoped(|v| {
                if let Some(i) = init {
                    v.stmt(i);
                }
                if let Some(c) = cond {
                    v.expr(c);
                }
                if let Some(st) = step {
                    v.stmt(st);
                }
                v.loop_depth += 1;
                v.scoped(|v| v.stmt(body));
                v.loop_depth -= 1;
            }),
            StmtKind::Block(b) => self.scoped(|v| v.stmts(b)),
            StmtKind::Return(e) => {
                if !self.directives.is_empty() {
                    self.err(s.pos, "branch out of structured block");
                }
                if let Some(e) = e {
                    self.expr(e);
                }
            }
            StmtKind::Break => self.branch(s.pos, "break"),
            StmtKind::Continue => self.branch(s.pos, "continue"),
            StmtKind::Print(args) => args.iter().for_each(|a| self.expr(a)),
            StmtKind::Directive(d) => self.directive(d),
        }
    }

    fn directive(&mut self, d: &Directive) {
        let mut clause_vars = HashSet::new();
        for c in &d.clauses {
            for v in c.variables() {
                let visible = self.lookup(v).is_some() || self.globals.contains_key(v.as_str());
                if !visible {
                    self.err(d.pos, format!("clause variable '{v}' is not visible at the directive"));
                }
                clause_vars.insert(v.clone());
            }
        }
        if let Some(spec) = d.ameliorate() {
            match self.program.function(&spec.name) {
                None => self.err(d.pos, format!("ameliorate function '{}' is not declared", spec.name)),
                Some(f) => {
                    if f.ret != Type::Int {
                        self.err(d.pos, format!("ameliorate function '{}' must return int", spec.name));
                    }
                    if f.params.len() != spec.args.len() {
                        self.err(
                            d.pos,
                            format!(
                                "ameliorate function '{}' expects {} argument(s), got {}",
                                spec.name,
                                f.params.len(),
                                spec.args.len()
                            ),
                        );
                    }
                }
            }
            for a in &spec.args {
                self.expr(a);
            }
        }
        self.directives.push(DirCtx {
            loop_depth: self.loop_depth,
            scope_depth: self.scopes.len(),
            clause_vars,
            default_none: d.default_kind() == Some(DefaultKind::None),
            reported: HashSet::new(),
        });
        self.scoped(|v| v.stmt(&d.body));
        self.directives.pop();
    }
}

fn same_params(a: &[Param], b: &[Param]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.ty == y.ty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;

    fn diags(src: &str) -> Vec<String> {
        validate(&parse_source(src).unwrap()).into_iter().map(|d| d.message).collect()
    }

    #[test]
    fn plain_program_is_clean() {
        assert!(diags("int g;\nint main() { int i; for (i = 0; i < 4; i++) { g = g + i; } print(g); return 0; }")
            .is_empty());
    }

    #[test]
    fn break_leaving_block() {
        let d = diags("int main() { int i; while (1) {\n#pragma rolex recover-rollback\n{ break; }\n} return 0; }");
        assert_eq!(d, ["branch out of structured block"]);
    }

    #[test]
    fn break_inside_inner_loop_is_fine() {
        let d = diags("int main() {\n#pragma rolex recover-rollback\n{ while (1) { break; } }\nreturn 0; }");
        assert!(d.is_empty(), "{d:?}");
    }

    #[test]
    fn maximus_width() {
        assert_eq!(diags("tolerant(MAXIMUS = 5000000000) unsigned int x;"), ["maximus exceeds 32-bit range"]);
        assert!(diags("tolerant(MAXIMUS = 4294967295) unsigned int x;").is_empty());
    }

    #[test]
    fn heal_signature() {
        assert!(diags("int fix(float *m) { return 1; }\nheal(fix()) float m[4];").is_empty());
        assert_eq!(diags("heal(nope()) float m[4];").len(), 1);
        assert_eq!(diags("void fix(float *m) { }\nheal(fix()) float m[4];").len(), 1);
    }

    #[test]
    fn default_none_requires_listing() {
        let d = diags("int main() { int a; int b;\n#pragma rolex recover-rollback default(none) share(a)\n{ a = b; }\nreturn 0; }");
        assert_eq!(d.len(), 1);
        assert!(d[0].contains("'b'"));
    }

    #[test]
    fn clause_visibility_and_shadowing() {
        let d = diags("int main() {\n#pragma rolex recover-rollback share(q)\n{ }\nreturn 0; }");
        assert_eq!(d, ["clause variable 'q' is not visible at the directive"]);
        let d = diags("int main() { int a;\n#pragma rolex recover-rollback share(a)\n{ int a; a = 1; }\nreturn 0; }");
        assert_eq!(d, ["declaration of 'a' shadows a clause variable"]);
    }

    #[test]
    fn undeclared_and_reserved() {
        assert_eq!(diags("int main() { return y; }"), ["use of undeclared identifier 'y'"]);
        assert_eq!(diags("int __rolex_x;").len(), 1);
    }

    #[test]
    fn precision_out_of_range() {
        assert!(diags("tolerant(PRECISION = 6) float x;").is_empty());
        assert_eq!(diags("tolerant(PRECISION = 7) float x;").len(), 1);
        assert_eq!(diags("tolerant(PRECISION = 7) int x;"), ["PRECISION applies only to floating-point objects"]);
    }
}
