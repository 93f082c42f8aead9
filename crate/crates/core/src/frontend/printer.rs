//! Pretty-printer emitting RC source. Expressions are fully parenthesized so
//! the output re-parses to the same tree.

use std::fmt::Write;

use super::ast::*;
use crate::bitmask::ToleranceLimit;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for item in &p.items {
        match item {
            Item::Global(d) => {
                out.push_str(&decl_line(d));
                out.push('\n');
            }
            Item::Function(f) => {
                if let Some(d) = &f.declare {
                    out.push_str(&declare_pragma(d));
                    out.push('\n');
                }
                function(&mut out, f);
            }
        }
    }
    out
}

pub fn print_type(ty: &Type) -> String {
    let (base, stars, dims) = split_type(ty);
    let mut s = base.to_string();
    if stars > 0 {
        s.push(' ');
        s.push_str(&"*".repeat(stars));
    }
    for d in dims {
        let _ = write!(s, "[{d}]");
    }
    s
}

fn split_type(ty: &Type) -> (&'static str, usize, Vec<u32>) {
    let mut dims = Vec::new();
    let mut t = ty;
    while let Type::Array(inner, n) = t {
        dims.push(*n);
        t = inner;
    }
    let mut stars = 0;
    while let Type::Ptr(inner) = t {
        stars += 1;
        t = inner;
    }
    let base = match t {
        Type::Int => "int",
        Type::UInt => "unsigned int",
        Type::Float => "float",
        Type::Double => "double",
        Type::Void => "void",
        Type::Ptr(_) | Type::Array(..) => unreachable!("stripped above"),
    };
    (base, stars, dims)
}

/// Declarator text such as `int *p` or `double a[4][4]`.
fn declarator(ty: &Type, name: &str) -> String {
    let (base, stars, dims) = split_type(ty);
    let mut s = format!("{base} {}{name}", "*".repeat(stars));
    for d in dims {
        let _ = write!(s, "[{d}]");
    }
    s
}

fn qualifier(q: &Qualifier) -> String {
    match q {
        Qualifier::Tolerant(None) => "tolerant".into(),
        Qualifier::Tolerant(Some(ToleranceLimit::Precision(d))) => format!("tolerant(PRECISION = {d})"),
        Qualifier::Tolerant(Some(ToleranceLimit::Maximus(m))) => format!("tolerant(MAXIMUS = {m})"),
        Qualifier::Tolerant(Some(ToleranceLimit::MantissaBits(k))) => {
            panic!("mantissa-bit limit {k} has no source syntax")
        }
        Qualifier::Robust(Strength::Detect) => "robust(DETECT)".into(),
        Qualifier::Robust(Strength::Correct) => "robust(CORRECT)".into(),
        Qualifier::Heal(f) => format!("heal({f}())"),
    }
}

fn decl_line(d: &VarDecl) -> String {
    let mut s = String::new();
    if let Some(q) = &d.qualifier {
        s.push_str(&qualifier(q));
        s.push(' ');
    }
    s.push_str(&declarator(&d.ty, &d.name));
    if let Some(init) = &d.init {
        s.push_str(" = ");
        s.push_str(&print_init(init));
    }
    s.push(';');
    s
}

fn print_init(init: &Init) -> String {
    match init {
        Init::Expr(e) => print_expr(e),
        Init::List(items) => {
            let inner: Vec<String> = items.iter().map(print_init).collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}

fn strength_word(s: Strength) -> &'static str {
    match s {
        Strength::Detect => "detect",
        Strength::Correct => "correct",
    }
}

fn declare_pragma(d: &DeclareDirective) -> String {
    let kind = match d.kind {
        DeclareKind::Retry => "retry".to_string(),
        DeclareKind::Ignore => "ignore".to_string(),
        DeclareKind::Robust(s) => format!("robust({})", strength_word(s)),
    };
    let mut s = format!("#pragma rolex declare resilient {kind}");
    if let Some(fb) = &d.fallback {
        let _ = write!(s, " fallback({})", join_exprs(fb));
    }
    s
}

fn directive_pragma(d: &Directive) -> String {
    let mut s = match d.kind {
        DirectiveKind::RecoverRollback => "#pragma rolex recover-rollback".to_string(),
        DirectiveKind::RecoverRollforward => "#pragma rolex recover-rollforward".to_string(),
        DirectiveKind::Robust(st) => format!("#pragma rolex robust {}", strength_word(st)),
    };
    for c in &d.clauses {
        s.push(' ');
        match c {
            Clause::Default(DefaultKind::Shared) => s.push_str("default(shared)"),
            Clause::Default(DefaultKind::None) => s.push_str("default(none)"),
            Clause::Private(v) | Clause::Share(v) | Clause::Reinitialize(v) | Clause::Compare(v) => {
                let _ = write!(s, "{}({})", c.keyword(), v.join(", "));
            }
            Clause::Ameliorate(spec) => {
                let _ = write!(s, "ameliorate({}({}))", spec.name, join_exprs(&spec.args));
            }
            Clause::Fallback(v) => {
                let _ = write!(s, "fallback({})", join_exprs(v));
            }
        }
    }
    s
}

fn join_exprs(es: &[Expr]) -> String {
    es.iter().map(print_expr).collect::<Vec<_>>().join(", ")
}

fn function(out: &mut String, f: &Function) {
    let params: Vec<String> = f.params.iter().map(|p| declarator(&p.ty, &p.name)).collect();
    let head = declarator(&f.ret, &f.name);
    let _ = write!(out, "{head}({})", params.join(", "));
    match &f.body {
        None => out.push_str(";\n"),
        Some(body) => {
            out.push_str(" {\n");
            for s in body {
                stmt(out, s, 1);
            }
            out.push_str("}\n");
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

/// Statement text without trailing `;`, for `for` headers.
fn simple(s: &Stmt) -> String {
    match &s.kind {
        StmtKind::Assign { target, value } => format!("{} = {}", print_expr(target), print_expr(value)),
        StmtKind::Expr(e) => print_expr(e),
        StmtKind::Decl(d) => decl_line(d).trim_end_matches(';').to_string(),
        other => panic!("not a simple statement: {other:?}"),
    }
}

fn stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match &s.kind {
        StmtKind::Decl(d) => {
            out.push_str(&decl_line(d));
            out.push('\n');
        }
        StmtKind::Assign { .. } | StmtKind::Expr(_) => {
            out.push_str(&simple(s));
            out.push_str(";\n");
        }
        StmtKind::If { cond, then, els } => {
            let _ = writeln!(out, "if ({})", print_expr(cond));
            nested(out, then, depth);
            if let Some(e) = els {
                indent(out, depth);
                out.push_str("else\n");
                nested(out, e, depth);
            }
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while ({})", print_expr(cond));
            nested(out, body, depth);
        }
        StmtKind::For { init, cond, step, body } => {
            let i = init.as_ref().map(|s| simple(s)).unwrap_or_default();
            let c = cond.as_ref().map(print_expr).unwrap_or_default();
            let st = step.as_ref().map(|s| simple(s)).unwrap_or_default();
            let _ = writeln!(out, "for ({i}; {c}; {st})");
            nested(out, body, depth);
        }
        StmtKind::Block(stmts) => {
            out.push_str("{\n");
            for s in stmts {
                stmt(out, s, depth + 1);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
        StmtKind::Return(None) => out.push_str("return;\n"),
        StmtKind::Return(Some(e)) => {
            let _ = writeln!(out, "return {};", print_expr(e));
        }
        StmtKind::Break => out.push_str("break;\n"),
        StmtKind::Continue => out.push_str("continue;\n"),
        StmtKind::Print(args) => {
            let _ = writeln!(out, "print({});", join_exprs(args));
        }
        StmtKind::Directive(d) => {
            // Pragmas start at column 1 of their own line.
            out.truncate(out.trim_end_matches(' ').len());
            out.push_str(&directive_pragma(d));
            out.push('\n');
            nested(out, &d.body, depth);
        }
    }
}

fn nested(out: &mut String, s: &Stmt, depth: usize) {
    if matches!(s.kind, StmtKind::Block(_)) {
        stmt(out, s, depth);
    } else {
        stmt(out, s, depth + 1);
    }
}

pub fn print_expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::IntLit { value, unsigned } => {
            if *unsigned {
                format!("{value}u")
            } else {
                value.to_string()
            }
        }
        ExprKind::FloatLit { value, single } => {
            let mut s = format!("{value:?}");
            if *single {
                s.push('f');
            }
            s
        }
        ExprKind::StrLit(s) => {
            let mut out = String::from("\"");
            for c in s.chars() {
                match c {
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    c => out.push(c),
                }
            }
            out.push('"');
            out
        }
        ExprKind::Null => "NULL".into(),
        ExprKind::Var(n) => n.clone(),
        ExprKind::Unary(op, inner) => {
            let sym = match op {
                UnaryOp::Neg => "-",
                UnaryOp::Not => "!",
                UnaryOp::BitNot => "~",
                UnaryOp::Deref => "*",
                UnaryOp::AddrOf => "&",
            };
            format!("({sym}{})", print_expr(inner))
        }
        ExprKind::Binary(op, a, b) => format!("({} {} {})", print_expr(a), op.symbol(), print_expr(b)),
        ExprKind::Index(a, i) => format!("{}[{}]", print_expr(a), print_expr(i)),
        ExprKind::Call { name, args } => format!("{name}({})", join_exprs(args)),
        ExprKind::Cast(ty, inner) => format!("(({}) {})", print_type(ty), print_expr(inner)),
        ExprKind::SizeOf(ty) => format!("sizeof({})", print_type(ty)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;

    #[test]
    fn round_trip_small_program() {
        let src = "tolerant(MAXIMUS = 1023) unsigned int counter;\n\
                   double a[2][3];\n\
                   #pragma rolex declare resilient retry fallback(-1)\n\
                   int g(int x, double *p) { return x * 2 + 1; }\n\
                   int main() {\n  int i;\n  for (i = 0; i < 3; i++) { counter += i; }\n\
                   #pragma rolex recover-rollforward share(counter) ameliorate(g(3, a))\n\
                   { if (counter > 2u) counter = 0; else { print(\"c\", 1.5f); } }\n  return -i;\n}\n";
        let p1 = parse_source(src).unwrap();
        let printed = print_program(&p1);
        let p2 = parse_source(&printed).unwrap();
        assert_eq!(p1, p2, "{printed}");
    }

    #[test]
    fn binary_is_parenthesized() {
        let p = parse_source("int f() { return 1 + 2 * 3; }").unwrap();
        let body = p.function("f").unwrap().body.as_ref().unwrap();
        let StmtKind::Return(Some(e)) = &body[0].kind else { panic!() };
        assert_eq!(print_expr(e), "(1 + (2 * 3))");
    }
}
