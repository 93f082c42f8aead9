//! Abstract syntax tree for RC programs carrying resilience annotations.

use std::fmt;

use crate::bitmask::{ElementKind, ToleranceLimit};

/// Source position, 1-based line and column.
///
/// Positions never participate in structural equality, so two trees that
/// differ only in where they were parsed from compare equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    pub fn new(line: u32, col: u32) -> Self {
        Pos { line, col }
    }
}

impl PartialEq for Pos {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Type {
    Int,
    UInt,
    Float,
    Double,
    Void,
    Ptr(Box<Type>),
    Array(Box<Type>, u32),
}

impl Type {
    pub fn ptr(inner: Type) -> Type {
        Type::Ptr(Box::new(inner))
    }

    pub fn array(elem: Type, len: u32) -> Type {
        Type::Array(Box::new(elem), len)
    }

    pub fn is_arith(&self) -> bool {
        matches!(self, Type::Int | Type::UInt | Type::Float | Type::Double)
    }

    pub fn is_integer(&self) -> bool {
        matches!(self, Type::Int | Type::UInt)
    }

    pub fn is_float(&self) -> bool {
        matches!(self, Type::Float | Type::Double)
    }

    pub fn is_ptr(&self) -> bool {
        matches!(self, Type::Ptr(_))
    }

    pub fn is_array(&self) -> bool {
        matches!(self, Type::Array(..))
    }

    pub fn is_scalar(&self) -> bool {
        self.is_arith() || self.is_ptr()
    }

    /// Storage size in bytes.
    pub fn size(&self) -> u64 {
        match self {
            Type::Int | Type::UInt | Type::Float => 4,
            Type::Double | Type::Ptr(_) => 8,
            Type::Void => 0,
            Type::Array(elem, n) => elem.size() * u64::from(*n),
        }
    }

    /// Innermost non-array element type.
    pub fn element(&self) -> &Type {
        match self {
            Type::Array(elem, _) => elem.element(),
            other => other,
        }
    }

    /// Primitive kind of the innermost element, if it is a scalar.
    pub fn element_kind(&self) -> Option<ElementKind> {
        match self.element() {
            Type::Int => Some(ElementKind::I32),
            Type::UInt => Some(ElementKind::U32),
            Type::Float => Some(ElementKind::F32),
            Type::Double => Some(ElementKind::F64),
            Type::Ptr(_) => Some(ElementKind::Ptr),
            _ => None,
        }
    }

    /// Type obtained by indexing or dereferencing once.
    pub fn pointee(&self) -> Option<&Type> {
        match self {
            Type::Ptr(inner) | Type::Array(inner, _) => Some(inner),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strength {
    Detect,
    Correct,
}

impl Strength {
    /// Number of physical copies the strength asks for.
    pub fn copies(self) -> usize {
        match self {
            Strength::Detect => 2,
            Strength::Correct => 3,
        }
    }

    pub fn from_copies(n: u64) -> Option<Strength> {
        match n {
            2 => Some(Strength::Detect),
            3 => Some(Strength::Correct),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Qualifier {
    Tolerant(Option<ToleranceLimit>),
    Robust(Strength),
    Heal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Expr(Expr),
    List(Vec<Init>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub qualifier: Option<Qualifier>,
    pub ty: Type,
    pub name: String,
    pub init: Option<Init>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub ty: Type,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeclareKind {
    Retry,
    Ignore,
    Robust(Strength),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeclareDirective {
    pub kind: DeclareKind,
    pub fallback: Option<Vec<Expr>>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    pub ret: Type,
    pub name: String,
    pub params: Vec<Param>,
    /// `None` for a prototype.
    pub body: Option<Vec<Stmt>>,
    pub declare: Option<DeclareDirective>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Global(VarDecl),
    Function(Function),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub items: Vec<Item>,
}

impl Program {
    pub fn functions(&self) -> impl Iterator<Item = &Function> {
        self.items.iter().filter_map(|i| match i {
            Item::Function(f) => Some(f),
            _ => None,
        })
    }

    pub fn globals(&self) -> impl Iterator<Item = &VarDecl> {
        self.items.iter().filter_map(|i| match i {
            Item::Global(g) => Some(g),
            _ => None,
        })
    }

    /// The defining occurrence of a function, falling back to a prototype.
    pub fn function(&self, name: &str) -> Option<&Function> {
        let mut proto = None;
        for f in self.functions().filter(|f| f.name == name) {
            if f.body.is_some() {
                return Some(f);
            }
            proto = Some(f);
        }
        proto
    }

    pub fn global(&self, name: &str) -> Option<&VarDecl> {
        self.globals().find(|g| g.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectiveKind {
    RecoverRollback,
    RecoverRollforward,
    Robust(Strength),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefaultKind {
    Shared,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallSpec {
    pub name: String,
    pub args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Clause {
    Default(DefaultKind),
    Private(Vec<String>),
    Share(Vec<String>),
    Reinitialize(Vec<String>),
    Ameliorate(CallSpec),
    Compare(Vec<String>),
    Fallback(Vec<Expr>),
}

impl Clause {
    pub fn keyword(&self) -> &'static str {
        match self {
            Clause::Default(_) => "default",
            Clause::Private(_) => "private",
            Clause::Share(_) => "share",
            Clause::Reinitialize(_) => "reinitialize",
            Clause::Ameliorate(_) => "ameliorate",
            Clause::Compare(_) => "compare",
            Clause::Fallback(_) => "fallback",
        }
    }

    pub fn variables(&self) -> &[String] {
        match self {
            Clause::Private(v) | Clause::Share(v) | Clause::Reinitialize(v) | Clause::Compare(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directive {
    pub kind: DirectiveKind,
    pub clauses: Vec<Clause>,
    pub body: Box<Stmt>,
    pub pos: Pos,
}

impl Directive {
    fn list(&self, pick: fn(&Clause) -> Option<&Vec<String>>) -> Vec<String> {
        self.clauses.iter().filter_map(pick).flatten().cloned().collect()
    }

    pub fn share(&self) -> Vec<String> {
        self.list(|c| match c {
            Clause::Share(v) => Some(v),
            _ => None,
        })
    }

    pub fn private(&self) -> Vec<String> {
        self.list(|c| match c {
            Clause::Private(v) => Some(v),
            _ => None,
        })
    }

    pub fn compare(&self) -> Vec<String> {
        self.list(|c| match c {
            Clause::Compare(v) => Some(v),
            _ => None,
        })
    }

    pub fn reinitialize(&self) -> Vec<String> {
        self.list(|c| match c {
            Clause::Reinitialize(v) => Some(v),
            _ => None,
        })
    }

    pub fn ameliorate(&self) -> Option<&CallSpec> {
        self.clauses.iter().find_map(|c| match c {
            Clause::Ameliorate(spec) => Some(spec),
            _ => None,
        })
    }

    pub fn default_kind(&self) -> Option<DefaultKind> {
        self.clauses.iter().find_map(|c| match c {
            Clause::Default(d) => Some(*d),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub pos: Pos,
}

impl Stmt {
    pub fn new(kind: StmtKind, pos: Pos) -> Self {
        Stmt { kind, pos }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Decl(VarDecl),
    Assign { target: Expr, value: Expr },
    Expr(Expr),
    If { cond: Expr, then: Box<Stmt>, els: Option<Box<Stmt>> },
    While { cond: Expr, body: Box<Stmt> },
    For { init: Option<Box<Stmt>>, cond: Option<Expr>, step: Option<Box<Stmt>>, body: Box<Stmt> },
    Block(Vec<Stmt>),
    Return(Option<Expr>),
    Break,
    Continue,
    Print(Vec<Expr>),
    Directive(Directive),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
    BitNot,
    Deref,
    AddrOf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Shl,
    Shr,
    BitAnd,
    BitOr,
    BitXor,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        use BinaryOp::*;
        match self {
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Rem => "%",
            Shl => "<<",
            Shr => ">>",
            BitAnd => "&",
            BitOr => "|",
            BitXor => "^",
            Eq => "==",
            Ne => "!=",
            Lt => "<",
            Le => "<=",
            Gt => ">",
            Ge => ">=",
            And => "&&",
            Or => "||",
        }
    }

    pub fn is_comparison(self) -> bool {
        use BinaryOp::*;
        matches!(self, Eq | Ne | Lt | Le | Gt | Ge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

impl Expr {
    pub fn new(kind: ExprKind, pos: Pos) -> Self {
        Expr { kind, pos }
    }

    pub fn var(name: impl Into<String>, pos: Pos) -> Self {
        Expr::new(ExprKind::Var(name.into()), pos)
    }

    pub fn int(v: i64, pos: Pos) -> Self {
        Expr::new(ExprKind::IntLit { value: v as u64, unsigned: false }, pos)
    }

    pub fn call(name: impl Into<String>, args: Vec<Expr>, pos: Pos) -> Self {
        Expr::new(ExprKind::Call { name: name.into(), args }, pos)
    }

    pub fn deref(inner: Expr) -> Self {
        let pos = inner.pos;
        Expr::new(ExprKind::Unary(UnaryOp::Deref, Box::new(inner)), pos)
    }

    pub fn addr_of(inner: Expr) -> Self {
        let pos = inner.pos;
        Expr::new(ExprKind::Unary(UnaryOp::AddrOf, Box::new(inner)), pos)
    }

    /// Root variable name of a place expression (`a`, `a[i][j]`).
    pub fn root_var(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Var(n) => Some(n),
            ExprKind::Index(base, _) => base.root_var(),
            _ => None,
        }
    }

    pub fn contains_call(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(e.kind, ExprKind::Call { .. }) {
                found = true;
            }
        });
        found
    }

    /// Pre-order traversal of this expression and its children.
    pub fn walk(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Unary(_, e) | ExprKind::Cast(_, e) => e.walk(f),
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ExprKind::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            _ => {}
        }
    }

    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        match &mut self.kind {
            ExprKind::Unary(_, e) | ExprKind::Cast(_, e) => e.walk_mut(f),
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                a.walk_mut(f);
                b.walk_mut(f);
            }
            ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| a.walk_mut(f)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    IntLit { value: u64, unsigned: bool },
    FloatLit { value: f64, single: bool },
    StrLit(String),
    Null,
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Call { name: String, args: Vec<Expr> },
    Cast(Type, Box<Expr>),
    SizeOf(Type),
}

/// Visit every statement in a list, recursing into nested bodies.
pub fn walk_stmts(stmts: &[Stmt], f: &mut dyn FnMut(&Stmt)) {
    for s in stmts {
        walk_stmt(s, f);
    }
}

pub fn walk_stmt(s: &Stmt, f: &mut dyn FnMut(&Stmt)) {
    f(s);
    match &s.kind {
        StmtKind::If { then, els, .. } => {
            walk_stmt(then, f);
            if let Some(e) = els {
                walk_stmt(e, f);
            }
        }
        StmtKind::While { body, .. } => walk_stmt(body, f),
        StmtKind::For { init, step, body, .. } => {
            if let Some(i) = init {
                walk_stmt(i, f);
            }
            if let Some(st) = step {
                walk_stmt(st, f);
            }
            walk_stmt(body, f);
        }
        StmtKind::Block(b) => walk_stmts(b, f),
        StmtKind::Directive(d) => walk_stmt(&d.body, f),
        _ => {}
    }
}

/// Every expression that appears directly in a statement (not nested statements).
pub fn stmt_exprs(s: &Stmt) -> Vec<&Expr> {
    let mut out = Vec::new();
    match &s.kind {
        StmtKind::Decl(d) => {
            if let Some(init) = &d.init {
                init_exprs(init, &mut out);
            }
        }
        StmtKind::Assign { target, value } => {
            out.push(target);
            out.push(value);
        }
        StmtKind::Expr(e) => out.push(e),
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => out.push(cond),
        StmtKind::For { cond: Some(c), .. } => out.push(c),
        StmtKind::Return(Some(e)) => out.push(e),
        StmtKind::Print(args) => out.extend(args.iter()),
        StmtKind::Directive(d) => {
            for c in &d.clauses {
                match c {
                    Clause::Ameliorate(spec) => out.extend(spec.args.iter()),
                    Clause::Fallback(v) => out.extend(v.iter()),
                    _ => {}
                }
            }
        }
        _ => {}
    }
    out
}

fn init_exprs<'a>(init: &'a Init, out: &mut Vec<&'a Expr>) {
    match init {
        Init::Expr(e) => out.push(e),
        Init::List(items) => items.iter().for_each(|i| init_exprs(i, out)),
    }
}
