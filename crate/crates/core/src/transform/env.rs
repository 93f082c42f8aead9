//! Lexical scope tracking shared by the transformation passes.

use std::collections::HashMap;

use crate::frontend::ast::*;

#[derive(Debug, Clone)]
pub struct Binding {
    pub ty: Type,
    pub qualifier: Option<Qualifier>,
    pub local: bool,
}

pub struct Env<'p> {
    program: &'p Program,
    scopes: Vec<HashMap<String, Binding>>,
}

impl<'p> Env<'p> {
    pub fn new(program: &'p Program) -> Self {
        Env { program, scopes: Vec::new() }
    }

    pub fn push(&mut self) {
        self.scopes.push(HashMap::new());
    }

    pub fn pop(&mut self) {
        self.scopes.pop();
    }

    pub fn declare(&mut self, name: &str, ty: Type, qualifier: Option<Qualifier>) {
        let scope = self.scopes.last_mut().expect("scope pushed");
        scope.insert(name.to_string(), Binding { ty, qualifier, local: true });
    }

    pub fn enter_function(&mut self, f: &Function) {
        self.scopes.clear();
        self.push();
        for p in &f.params {
            self.declare(&p.name, p.ty.clone(), None);
        }
    }

    pub fn lookup(&self, name: &str) -> Option<Binding> {
        for s in self.scopes.iter().rev() {
            if let Some(b) = s.get(name) {
                return Some(b.clone());
            }
        }
        self.program
            .global(name)
            .map(|g| Binding { ty: g.ty.clone(), qualifier: g.qualifier.clone(), local: false })
    }

    /// Static type of a place or simple value expression, when evident.
    pub fn type_of(&self, e: &Expr) -> Option<Type> {
        match &e.kind {
            ExprKind::Var(n) => self.lookup(n).map(|b| b.ty),
            ExprKind::Index(base, _) => self.type_of(base)?.pointee().cloned(),
            ExprKind::Unary(UnaryOp::Deref, inner) => self.type_of(inner)?.pointee().cloned(),
            ExprKind::Unary(UnaryOp::AddrOf, inner) => self.type_of(inner).map(Type::ptr),
            ExprKind::Cast(ty, _) => Some(ty.clone()),
            ExprKind::Call { name, .. } => self.program.function(name).map(|f| f.ret.clone()),
            ExprKind::IntLit { unsigned: true, .. } => Some(Type::UInt),
            ExprKind::IntLit { .. } => Some(Type::Int),
            ExprKind::FloatLit { single: true, .. } => Some(Type::Float),
            ExprKind::FloatLit { .. } => Some(Type::Double),
            _ => None,
        }
    }

    /// Variable whose own storage a place expression denotes: `x`, or
    /// `x[i][j]` when every indexed base is an array (not a pointer).
    pub fn storage_root<'e>(&self, e: &'e Expr) -> Option<&'e str> {
        match &e.kind {
            ExprKind::Var(n) => Some(n),
            ExprKind::Index(base, _) if self.type_of(base).is_some_and(|t| t.is_array()) => self.storage_root(base),
            _ => None,
        }
    }
}
