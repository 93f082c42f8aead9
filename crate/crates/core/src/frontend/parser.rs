//! Recursive-descent parser producing [`Program`] from tokens.

use super::ast::*;
use super::token::{Keyword as K, Punct as P, Token, TokenKind};
use super::FrontendError;
use crate::bitmask::ToleranceLimit;

pub fn parse(tokens: &[Token]) -> Result<Program, FrontendError> {
    let mut p = Parser { toks: tokens, i: 0 };
    let mut items = Vec::new();
    while !p.at_end() {
        p.item(&mut items)?;
    }
    Ok(Program { items })
}

struct Parser<'a> {
    toks: &'a [Token],
    i: usize,
}

const TYPE_START: &[&str] = &["int", "unsigned", "float", "double", "void"];

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.i >= self.toks.len()
    }

    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.i)
    }

    fn peek_at(&self, off: usize) -> Option<&'a Token> {
        self.toks.get(self.i + off)
    }

    fn pos(&self) -> Pos {
        match self.peek() {
            Some(t) => t.pos,
            None => self.toks.last().map(|t| t.pos).unwrap_or_default(),
        }
    }

    fn advance(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.i);
        self.i += 1;
        t
    }

    fn unexpected(&self, expected: &[&str]) -> FrontendError {
        let found = match self.peek() {
            Some(t) if t.kind == TokenKind::PragmaEnd => "end of pragma line".to_string(),
            Some(t) => format!("'{}'", t.lexeme),
            None => "end of input".to_string(),
        };
        FrontendError::syntax(self.pos(), format!("unexpected {found}"), expected)
    }

    fn is_punct(&self, p: P) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn is_kw(&self, k: K) -> bool {
        self.peek().is_some_and(|t| t.is_kw(k))
    }

    fn eat_punct(&mut self, p: P) -> bool {
        if self.is_punct(p) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: K) -> bool {
        if self.is_kw(k) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: P) -> Result<Pos, FrontendError> {
        let pos = self.pos();
        if self.eat_punct(p) {
            Ok(pos)
        } else {
            Err(self.unexpected(&[p.text()]))
        }
    }

    fn expect_kw(&mut self, k: K) -> Result<(), FrontendError> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            Err(self.unexpected(&[k.text()]))
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), FrontendError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Ident => {
                self.i += 1;
                Ok((t.lexeme.clone(), t.pos))
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }

    fn starts_type(&self) -> bool {
        self.starts_type_at(0)
    }

    fn starts_type_at(&self, off: usize) -> bool {
        self.peek_at(off).is_some_and(|t| {
            matches!(t.kind, TokenKind::Keyword(K::RolexPrecisionType)) || (matches!(t.kind, TokenKind::Keyword(_)) && TYPE_START.contains(&t.lexeme.as_str()))
        })
    }

    fn starts_decl(&self) -> bool {
        self.starts_type() || self.is_kw(K::Tolerant) || self.is_kw(K::Robust) || self.is_kw(K::Heal)
    }

    // ---------- types and declarations ----------

    fn base_type(&mut self) -> Result<Type, FrontendError> {
        let t = self.peek().ok_or_else(|| self.unexpected(TYPE_START))?;
        let ty = match t.kind {
            TokenKind::Keyword(K::Int) => Type::Int,
            TokenKind::Keyword(K::Unsigned) => {
                self.i += 1;
                self.eat_kw(K::Int);
                return Ok(Type::UInt);
            }
            TokenKind::Keyword(K::Float) => Type::Float,
            TokenKind::Keyword(K::Double) => Type::Double,
            TokenKind::Keyword(K::Void) => Type::Void,
            TokenKind::Keyword(K::RolexPrecisionType) => Type::UInt,
            _ => return Err(self.unexpected(TYPE_START)),
        };
        self.i += 1;
        Ok(ty)
    }

    fn pointers(&mut self, mut ty: Type) -> Type {
        while self.eat_punct(P::Star) {
            ty = Type::ptr(ty);
        }
        ty
    }

    /// Type name as used in casts and `sizeof`.
    fn type_name(&mut self) -> Result<Type, FrontendError> {
        let base = self.base_type()?;
        Ok(self.pointers(base))
    }

    fn array_dims(&mut self, ty: Type) -> Result<Type, FrontendError> {
        let mut dims = Vec::new();
        while self.eat_punct(P::LBracket) {
            let pos = self.pos();
            let n = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::IntLit { value, .. }) => *value,
                _ => return Err(self.unexpected(&["integer constant"])),
            };
            self.i += 1;
            if n == 0 || n > u64::from(u32::MAX) {
                return Err(FrontendError::syntax(pos, "array dimension must be a positive 32-bit constant", &[]));
            }
            dims.push(n as u32);
            self.expect_punct(P::RBracket)?;
        }
        Ok(dims.into_iter().rev().fold(ty, Type::array))
    }

    fn qualifier(&mut self) -> Result<Option<Qualifier>, FrontendError> {
        if self.eat_kw(K::Tolerant) {
            if !self.eat_punct(P::LParen) {
                return Ok(Some(Qualifier::Tolerant(None)));
            }
            let which = if self.eat_kw(K::Precision) {
                K::Precision
            } else if self.eat_kw(K::Maximus) {
                K::Maximus
            } else {
                return Err(self.unexpected(&["PRECISION", "MAXIMUS"]));
            };
            self.expect_punct(P::Assign)?;
            let pos = self.pos();
            let value = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::IntLit { value, .. }) => *value,
                _ => return Err(self.unexpected(&["integer constant"])),
            };
            self.i += 1;
            if value == 0 {
                return Err(FrontendError::grammar(pos, "tolerance limit must be strictly positive"));
            }
            self.expect_punct(P::RParen)?;
            let limit =
                if which == K::Precision { ToleranceLimit::Precision(value) } else { ToleranceLimit::Maximus(value) };
            return Ok(Some(Qualifier::Tolerant(Some(limit))));
        }
        if self.eat_kw(K::Robust) {
            self.expect_punct(P::LParen)?;
            let s = self.strength_word().ok_or_else(|| self.unexpected(&["DETECT", "CORRECT"]))?;
            self.expect_punct(P::RParen)?;
            return Ok(Some(Qualifier::Robust(s)));
        }
        if self.eat_kw(K::Heal) {
            self.expect_punct(P::LParen)?;
            let (name, _) = self.ident()?;
            self.expect_punct(P::LParen)?;
            self.expect_punct(P::RParen)?;
            self.expect_punct(P::RParen)?;
            return Ok(Some(Qualifier::Heal(name)));
        }
        Ok(None)
    }

    fn strength_word(&mut self) -> Option<Strength> {
        let s = match self.peek()?.kind {
            TokenKind::Keyword(K::Detect | K::DetectUpper) => Strength::Detect,
            TokenKind::Keyword(K::Correct | K::CorrectUpper) => Strength::Correct,
            _ => return None,
        };
        self.i += 1;
        Some(s)
    }

    fn initializer(&mut self) -> Result<Init, FrontendError> {
        if self.eat_punct(P::LBrace) {
            let mut items = Vec::new();
            if !self.is_punct(P::RBrace) {
                loop {
                    items.push(self.initializer()?);
                    if !self.eat_punct(P::Comma) || self.is_punct(P::RBrace) {
                        break;
                    }
                }
            }
            self.expect_punct(P::RBrace)?;
            Ok(Init::List(items))
        } else {
            Ok(Init::Expr(self.expr()?))
        }
    }

    /// `qualifier? type declarator (, declarator)* ;` once the base type is known.
    fn var_decls(
        &mut self,
        qualifier: Option<Qualifier>,
        base: Type,
        first: (Type, String, Pos),
    ) -> Result<Vec<VarDecl>, FrontendError> {
        let mut out = Vec::new();
        let (mut ty, mut name, mut pos) = first;
        loop {
            ty = self.array_dims(ty)?;
            let init = if self.eat_punct(P::Assign) { Some(self.initializer()?) } else { None };
            out.push(VarDecl { qualifier: qualifier.clone(), ty, name, init, pos });
            if !self.eat_punct(P::Comma) {
                break;
            }
            ty = self.pointers(base.clone());
            (name, pos) = self.ident()?;
        }
        self.expect_punct(P::Semi)?;
        Ok(out)
    }

    fn local_decls(&mut self) -> Result<Vec<VarDecl>, FrontendError> {
        let qualifier = self.qualifier()?;
        let base = self.base_type()?;
        let ty = self.pointers(base.clone());
        let (name, pos) = self.ident()?;
        if ty == Type::Void {
            return Err(FrontendError::syntax(pos, "variable declared void", &[]));
        }
        self.var_decls(qualifier, base, (ty, name, pos))
    }

    // ---------- top level ----------

    fn item(&mut self, items: &mut Vec<Item>) -> Result<(), FrontendError> {
        if self.peek().is_some_and(|t| t.kind == TokenKind::PragmaIntro) {
            let pos = self.pos();
            self.i += 1;
            if !self.is_kw(K::Declare) {
                return Err(FrontendError::grammar(
                    pos,
                    "only 'declare resilient' directives may appear outside a function body",
                ));
            }
            let declare = self.declare_directive(pos)?;
            let item_pos = self.pos();
            if !self.starts_type() {
                return Err(FrontendError::grammar(item_pos, "declare directive must precede a function declaration"));
            }
            let before = items.len();
            self.declaration(items)?;
            match items.get_mut(before..) {
                Some([Item::Function(f)]) => f.declare = Some(declare),
                _ => {
                    return Err(FrontendError::grammar(
                        item_pos,
                        "declare directive must precede a function declaration",
                    ))
                }
            }
            return Ok(());
        }
        if self.starts_decl() {
            return self.declaration(items);
        }
        Err(self.unexpected(&["declaration", "function definition", "#pragma rolex declare"]))
    }

    fn declaration(&mut self, items: &mut Vec<Item>) -> Result<(), FrontendError> {
        let qualifier = self.qualifier()?;
        let base = self.base_type()?;
        let ty = self.pointers(base.clone());
        let (name, pos) = self.ident()?;
        if self.is_punct(P::LParen) {
            if qualifier.is_some() {
                return Err(FrontendError::grammar(pos, "resilience qualifiers apply to object declarations only"));
            }
            let f = self.function_rest(ty, name, pos)?;
            items.push(Item::Function(f));
            return Ok(());
        }
        if ty == Type::Void {
            return Err(FrontendError::syntax(pos, "variable declared void", &[]));
        }
        for d in self.var_decls(qualifier, base, (ty, name, pos))? {
            items.push(Item::Global(d));
        }
        Ok(())
    }

    fn function_rest(&mut self, ret: Type, name: String, pos: Pos) -> Result<Function, FrontendError> {
        self.expect_punct(P::LParen)?;
        let mut params = Vec::new();
        if self.is_kw(K::Void) && self.peek_at(1).is_some_and(|t| t.is_punct(P::RParen)) {
            self.i += 1;
        }
        if !self.is_punct(P::RParen) {
            loop {
                let base = self.base_type()?;
                let ty = self.pointers(base);
                let (pname, _) = self.ident()?;
                let ty = self.array_dims(ty)?;
                params.push(Param { ty, name: pname });
                if !self.eat_punct(P::Comma) {
                    break;
                }
            }
        }
        self.expect_punct(P::RParen)?;
        if self.eat_punct(P::Semi) {
            return Ok(Function { ret, name, params, body: None, declare: None, pos });
        }
        if !self.is_punct(P::LBrace) {
            return Err(self.unexpected(&[";", "{"]));
        }
        let body = self.block_items()?;
        Ok(Function { ret, name, params, body: Some(body), declare: None, pos })
    }

    // ---------- directives ----------

    fn declare_directive(&mut self, pos: Pos) -> Result<DeclareDirective, FrontendError> {
        self.expect_kw(K::Declare)?;
        self.expect_kw(K::Resilient)?;
        let kind = if self.eat_kw(K::Retry) {
            DeclareKind::Retry
        } else if self.eat_kw(K::Ignore) {
            DeclareKind::Ignore
        } else if self.eat_kw(K::Robust) {
            DeclareKind::Robust(self.strength_clause()?)
        } else {
            return Err(self.unexpected(&["retry", "ignore", "robust"]));
        };
        let mut fallback = None;
        for clause in self.clauses()? {
            match clause {
                (Clause::Fallback(v), cpos) => {
                    if fallback.is_some() {
                        return Err(FrontendError::grammar(cpos, "duplicate fallback clause"));
                    }
                    fallback = Some(v);
                }
                (other, cpos) => {
                    return Err(FrontendError::grammar(
                        cpos,
                        format!("clause '{}' is not permitted on a declare directive", other.keyword()),
                    ))
                }
            }
        }
        Ok(DeclareDirective { kind, fallback, pos })
    }

    /// `detect`, `correct`, or either wrapped in parentheses.
    fn strength_clause(&mut self) -> Result<Strength, FrontendError> {
        let paren = self.eat_punct(P::LParen);
        let s = self.strength_word().ok_or_else(|| self.unexpected(&["detect", "correct"]))?;
        if paren {
            self.expect_punct(P::RParen)?;
        }
        Ok(s)
    }

    fn clauses(&mut self) -> Result<Vec<(Clause, Pos)>, FrontendError> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                Some(t) if t.kind == TokenKind::PragmaEnd => {
                    self.i += 1;
                    return Ok(out);
                }
                None => return Ok(out),
                _ => {}
            }
            if !out.is_empty() {
                self.eat_punct(P::Comma);
            }
            let pos = self.pos();
            if self.strength_word().is_some() {
                return Err(FrontendError::grammar(pos, "directive takes exactly one strength clause"));
            }
            let clause = self.clause()?;
            out.push((clause, pos));
        }
    }

    fn clause(&mut self) -> Result<Clause, FrontendError> {
        const CLAUSES: &[&str] =
            &["default", "private", "share", "reinitialize", "ameliorate", "compare", "fallback", "new-line"];
        let Some(tok) = self.peek() else { return Err(self.unexpected(CLAUSES)) };
        let TokenKind::Keyword(kw) = tok.kind else { return Err(self.unexpected(CLAUSES)) };
        self.i += 1;
        match kw {
            K::Default => {
                self.expect_punct(P::LParen)?;
                let d = if self.eat_kw(K::Shared) {
                    DefaultKind::Shared
                } else if self.eat_kw(K::None) {
                    DefaultKind::None
                } else {
                    return Err(self.unexpected(&["shared", "none"]));
                };
                self.expect_punct(P::RParen)?;
                Ok(Clause::Default(d))
            }
            K::Private | K::Share | K::Reinitialize | K::Compare => {
                self.expect_punct(P::LParen)?;
                let mut vars = Vec::new();
                loop {
                    vars.push(self.ident()?.0);
                    if !self.eat_punct(P::Comma) {
                        break;
                    }
                }
                self.expect_punct(P::RParen)?;
                Ok(match kw {
                    K::Private => Clause::Private(vars),
                    K::Share => Clause::Share(vars),
                    K::Reinitialize => Clause::Reinitialize(vars),
                    _ => Clause::Compare(vars),
                })
            }
            K::Ameliorate => {
                self.expect_punct(P::LParen)?;
                let (name, _) = self.ident()?;
                let args = self.call_args()?;
                self.expect_punct(P::RParen)?;
                Ok(Clause::Ameliorate(CallSpec { name, args }))
            }
            K::Fallback => {
                let args = self.call_args()?;
                Ok(Clause::Fallback(args))
            }
            _ => {
                self.i -= 1;
                Err(self.unexpected(CLAUSES))
            }
        }
    }

    fn directive_stmt(&mut self) -> Result<Stmt, FrontendError> {
        let pos = self.pos();
        self.i += 1;
        let kind = if self.eat_kw(K::RecoverRollback) {
            DirectiveKind::RecoverRollback
        } else if self.eat_kw(K::RecoverRollforward) {
            DirectiveKind::RecoverRollforward
        } else if self.eat_kw(K::Robust) {
            DirectiveKind::Robust(self.strength_clause()?)
        } else if self.is_kw(K::Declare) {
            return Err(FrontendError::grammar(pos, "declare directive must precede a function at file scope"));
        } else {
            return Err(self.unexpected(&["recover-rollback", "recover-rollforward", "robust", "declare"]));
        };
        let clauses = self.clauses()?;
        let recover = !matches!(kind, DirectiveKind::Robust(_));
        let mut seen: Vec<(&str, String)> = Vec::new();
        let mut amel = false;
        let mut default = false;
        for (c, cpos) in &clauses {
            let licensed = match c {
                Clause::Default(_) | Clause::Private(_) | Clause::Share(_) => true,
                Clause::Reinitialize(_) | Clause::Ameliorate(_) => recover,
                Clause::Compare(_) => !recover,
                Clause::Fallback(_) => false,
            };
            if !licensed {
                let dname = if recover { "recover" } else { "robust" };
                return Err(FrontendError::grammar(
                    *cpos,
                    format!("clause '{}' is not permitted on a {dname} directive", c.keyword()),
                ));
            }
            match c {
                Clause::Ameliorate(_) if std::mem::replace(&mut amel, true) => {
                    return Err(FrontendError::grammar(*cpos, "duplicate ameliorate clause"))
                }
                Clause::Default(_) if std::mem::replace(&mut default, true) => {
                    return Err(FrontendError::grammar(*cpos, "duplicate default clause"))
                }
                _ => {}
            }
            for v in c.variables() {
                if let Some((prev, _)) = seen.iter().find(|(_, n)| n == v) {
                    return Err(FrontendError::grammar(
                        *cpos,
                        format!("variable '{v}' listed in both '{prev}' and '{}' clauses", c.keyword()),
                    ));
                }
                seen.push((c.keyword(), v.clone()));
            }
        }
        if self.at_end() {
            return Err(self.unexpected(&["statement"]));
        }
        if self.starts_decl() {
            return Err(FrontendError::syntax(self.pos(), "directive must be followed by a structured block", &["statement"]));
        }
        let body = self.statement()?;
        let clauses = clauses.into_iter().map(|(c, _)| c).collect();
        Ok(Stmt::new(StmtKind::Directive(Directive { kind, clauses, body: Box::new(body), pos }), pos))
    }

    // ---------- statements ----------

    fn block_items(&mut self) -> Result<Vec<Stmt>, FrontendError> {
        self.expect_punct(P::LBrace)?;
        let mut out = Vec::new();
        while !self.is_punct(P::RBrace) {
            if self.at_end() {
                return Err(self.unexpected(&["}"]));
            }
            if self.starts_decl() {
                for d in self.local_decls()? {
                    let pos = d.pos;
                    out.push(Stmt::new(StmtKind::Decl(d), pos));
                }
            } else {
                out.push(self.statement()?);
            }
        }
        self.i += 1;
        Ok(out)
    }

    fn statement(&mut self) -> Result<Stmt, FrontendError> {
        let pos = self.pos();
        let Some(tok) = self.peek() else { return Err(self.unexpected(&["statement"])) };
        if tok.kind == TokenKind::PragmaIntro {
            return self.directive_stmt();
        }
        if tok.is_punct(P::LBrace) {
            return Ok(Stmt::new(StmtKind::Block(self.block_items()?), pos));
        }
        if tok.is_punct(P::Semi) {
            self.i += 1;
            return Ok(Stmt::new(StmtKind::Block(Vec::new()), pos));
        }
        if self.starts_decl() {
            return Err(FrontendError::syntax(pos, "declaration is not allowed here", &["statement"]));
        }
        let kind = match tok.kind {
            TokenKind::Keyword(K::If) => {
                self.i += 1;
                self.expect_punct(P::LParen)?;
                let cond = self.expr()?;
                self.expect_punct(P::RParen)?;
                let then = Box::new(self.statement()?);
                let els = if self.eat_kw(K::Else) { Some(Box::new(self.statement()?)) } else { None };
                StmtKind::If { cond, then, els }
            }
            TokenKind::Keyword(K::While) => {
                self.i += 1;
                self.expect_punct(P::LParen)?;
                let cond = self.expr()?;
                self.expect_punct(P::RParen)?;
                StmtKind::While { cond, body: Box::new(self.statement()?) }
            }
            TokenKind::Keyword(K::For) => {
                self.i += 1;
                self.expect_punct(P::LParen)?;
                let init = if self.is_punct(P::Semi) {
                    None
                } else if self.starts_decl() {
                    let ipos = self.pos();
                    let mut decls = self.local_decls()?;
                    if decls.len() != 1 {
                        return Err(FrontendError::syntax(ipos, "for-loop declares one variable", &[]));
                    }
                    self.i -= 1;
                    Some(Box::new(Stmt::new(StmtKind::Decl(decls.remove(0)), ipos)))
                } else {
                    Some(Box::new(self.simple()?))
                };
                self.expect_punct(P::Semi)?;
                let cond = if self.is_punct(P::Semi) { None } else { Some(self.expr()?) };
                self.expect_punct(P::Semi)?;
                let step = if self.is_punct(P::RParen) { None } else { Some(Box::new(self.simple()?)) };
                self.expect_punct(P::RParen)?;
                StmtKind::For { init, cond, step, body: Box::new(self.statement()?) }
            }
            TokenKind::Keyword(K::Return) => {
                self.i += 1;
                let value = if self.is_punct(P::Semi) { None } else { Some(self.expr()?) };
                self.expect_punct(P::Semi)?;
                StmtKind::Return(value)
            }
            TokenKind::Keyword(K::Break) => {
                self.i += 1;
                self.expect_punct(P::Semi)?;
                StmtKind::Break
            }
            TokenKind::Keyword(K::Continue) => {
                self.i += 1;
                self.expect_punct(P::Semi)?;
                StmtKind::Continue
            }
            TokenKind::Keyword(K::Print) => {
                self.i += 1;
                let args = self.call_args()?;
                self.expect_punct(P::Semi)?;
                StmtKind::Print(args)
            }
            _ => {
                let s = self.simple()?;
                self.expect_punct(P::Semi)?;
                return Ok(s);
            }
        };
        Ok(Stmt::new(kind, pos))
    }

    /// Assignment, compound assignment, increment, or expression statement (no `;`).
    fn simple(&mut self) -> Result<Stmt, FrontendError> {
        let pos = self.pos();
        for (p, op) in [(P::PlusPlus, BinaryOp::Add), (P::MinusMinus, BinaryOp::Sub)] {
            if self.eat_punct(p) {
                let target = self.unary()?;
                return Ok(bump(target, op, pos));
            }
        }
        let lhs = self.expr()?;
        let compound = [
            (P::PlusAssign, BinaryOp::Add),
            (P::MinusAssign, BinaryOp::Sub),
            (P::StarAssign, BinaryOp::Mul),
            (P::SlashAssign, BinaryOp::Div),
        ];
        if self.eat_punct(P::Assign) {
            let value = self.expr()?;
            return Ok(Stmt::new(StmtKind::Assign { target: lhs, value }, pos));
        }
        for (p, op) in compound {
            if self.eat_punct(p) {
                let rhs = self.expr()?;
                let value = Expr::new(ExprKind::Binary(op, Box::new(lhs.clone()), Box::new(rhs)), pos);
                return Ok(Stmt::new(StmtKind::Assign { target: lhs, value }, pos));
            }
        }
        for (p, op) in [(P::PlusPlus, BinaryOp::Add), (P::MinusMinus, BinaryOp::Sub)] {
            if self.eat_punct(p) {
                return Ok(bump(lhs, op, pos));
            }
        }
        Ok(Stmt::new(StmtKind::Expr(lhs), pos))
    }

    // ---------- expressions ----------

    fn call_args(&mut self) -> Result<Vec<Expr>, FrontendError> {
        self.expect_punct(P::LParen)?;
        let mut args = Vec::new();
        if !self.is_punct(P::RParen) {
            loop {
                args.push(self.expr()?);
                if !self.eat_punct(P::Comma) {
                    break;
                }
            }
        }
        self.expect_punct(P::RParen)?;
        Ok(args)
    }

    pub fn expr(&mut self) -> Result<Expr, FrontendError> {
        self.binary(0)
    }

    fn binary_op(&self) -> Option<(BinaryOp, u8)> {
        let t = self.peek()?;
        let TokenKind::Punct(p) = t.kind else { return None };
        Some(match p {
            P::OrOr => (BinaryOp::Or, 1),
            P::AndAnd => (BinaryOp::And, 2),
            P::Pipe => (BinaryOp::BitOr, 3),
            P::Caret => (BinaryOp::BitXor, 4),
            P::Amp => (BinaryOp::BitAnd, 5),
            P::EqEq => (BinaryOp::Eq, 6),
            P::Ne => (BinaryOp::Ne, 6),
            P::Lt => (BinaryOp::Lt, 7),
            P::Le => (BinaryOp::Le, 7),
            P::Gt => (BinaryOp::Gt, 7),
            P::Ge => (BinaryOp::Ge, 7),
            P::Shl => (BinaryOp::Shl, 8),
            P::Shr => (BinaryOp::Shr, 8),
            P::Plus => (BinaryOp::Add, 9),
            P::Minus => (BinaryOp::Sub, 9),
            P::Star => (BinaryOp::Mul, 10),
            P::Slash => (BinaryOp::Div, 10),
            P::Percent => (BinaryOp::Rem, 10),
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, FrontendError> {
        let mut lhs = self.unary()?;
        while let Some((op, prec)) = self.binary_op() {
            if prec <= min_prec {
                break;
            }
            let pos = self.pos();
            self.i += 1;
            let rhs = self.binary(prec)?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, FrontendError> {
        let pos = self.pos();
        let ops = [
            (P::Minus, UnaryOp::Neg),
            (P::Bang, UnaryOp::Not),
            (P::Tilde, UnaryOp::BitNot),
            (P::Star, UnaryOp::Deref),
            (P::Amp, UnaryOp::AddrOf),
        ];
        for (p, op) in ops {
            if self.eat_punct(p) {
                let inner = self.unary()?;
                return Ok(Expr::new(ExprKind::Unary(op, Box::new(inner)), pos));
            }
        }
        if self.eat_punct(P::Plus) {
            return self.unary();
        }
        if self.is_punct(P::LParen) && self.starts_type_at(1) {
            self.i += 1;
            let ty = self.type_name()?;
            self.expect_punct(P::RParen)?;
            let inner = self.unary()?;
            return Ok(Expr::new(ExprKind::Cast(ty, Box::new(inner)), pos));
        }
        if self.eat_kw(K::Sizeof) {
            self.expect_punct(P::LParen)?;
            let ty = self.type_name()?;
            let ty = self.array_dims(ty)?;
            self.expect_punct(P::RParen)?;
            return Ok(Expr::new(ExprKind::SizeOf(ty), pos));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, FrontendError> {
        let mut e = self.primary()?;
        loop {
            let pos = self.pos();
            if self.eat_punct(P::LBracket) {
                let idx = self.expr()?;
                self.expect_punct(P::RBracket)?;
                e = Expr::new(ExprKind::Index(Box::new(e), Box::new(idx)), pos);
            } else if self.is_punct(P::LParen) {
                let ExprKind::Var(name) = &e.kind else {
                    return Err(FrontendError::syntax(pos, "only named functions can be called", &[]));
                };
                let name = name.clone();
                let args = self.call_args()?;
                e = Expr::new(ExprKind::Call { name, args }, e.pos);
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, FrontendError> {
        const EXPECTED: &[&str] = &["identifier", "literal", "(", "NULL"];
        let pos = self.pos();
        let Some(tok) = self.advance() else {
            self.i -= 1;
            return Err(self.unexpected(EXPECTED));
        };
        let kind = match &tok.kind {
            TokenKind::IntLit { value, unsigned } => ExprKind::IntLit { value: *value, unsigned: *unsigned },
            TokenKind::FloatLit { value, single } => ExprKind::FloatLit { value: *value, single: *single },
            TokenKind::StrLit(s) => ExprKind::StrLit(s.clone()),
            TokenKind::Keyword(K::Null) => ExprKind::Null,
            TokenKind::Ident => ExprKind::Var(tok.lexeme.clone()),
            TokenKind::Punct(P::LParen) => {
                let e = self.expr()?;
                self.expect_punct(P::RParen)?;
                return Ok(e);
            }
            _ => {
                self.i -= 1;
                return Err(self.unexpected(EXPECTED));
            }
        };
        Ok(Expr::new(kind, pos))
    }
}

fn bump(target: Expr, op: BinaryOp, pos: Pos) -> Stmt {
    let one = Expr::new(ExprKind::IntLit { value: 1, unsigned: false }, pos);
    let value = Expr::new(ExprKind::Binary(op, Box::new(target.clone()), Box::new(one)), pos);
    Stmt::new(StmtKind::Assign { target, value }, pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_source, ErrorKind};

    #[test]
    fn robust_directive_with_compare() {
        let p = parse_source("int a; int b; int x;\nvoid f() {\n#pragma rolex robust detect compare(x)\n{ x = a + b; }\n}")
            .unwrap();
        let body = p.function("f").unwrap().body.as_ref().unwrap();
        let StmtKind::Directive(d) = &body[0].kind else { panic!("expected directive") };
        assert_eq!(d.kind, DirectiveKind::Robust(Strength::Detect));
        assert_eq!(d.clauses, vec![Clause::Compare(vec!["x".into()])]);
        let StmtKind::Block(stmts) = &d.body.kind else { panic!("expected block") };
        assert_eq!(stmts.len(), 1);
    }

    #[test]
    fn heal_qualified_global() {
        let p = parse_source("heal (recovery_func()) float matrix_A[4][4];").unwrap();
        let g = p.global("matrix_A").unwrap();
        assert_eq!(g.qualifier, Some(Qualifier::Heal("recovery_func".into())));
        assert_eq!(g.ty, Type::array(Type::array(Type::Float, 4), 4));
    }

    #[test]
    fn compare_on_recover_is_grammar_violation() {
        let err = parse_source("int x;\nvoid f() {\n#pragma rolex recover-rollback compare(x)\n{ x = 1; }\n}").unwrap_err();
        assert_eq!(err.kind, ErrorKind::GrammarViolation);
        assert_eq!(err.pos.line, 3);
    }

    #[test]
    fn variable_in_two_lists() {
        let err =
            parse_source("int x;\nvoid f() {\n#pragma rolex recover-rollback share(x) private(x)\n{ x = 1; }\n}")
                .unwrap_err();
        assert_eq!(err.kind, ErrorKind::GrammarViolation);
    }

    #[test]
    fn declare_attaches_to_function() {
        let p = parse_source("#pragma rolex declare resilient robust (detect) fallback(0)\nint g(int a) { return a; }")
            .unwrap();
        let f = p.function("g").unwrap();
        let d = f.declare.as_ref().unwrap();
        assert_eq!(d.kind, DeclareKind::Robust(Strength::Detect));
        assert_eq!(d.fallback.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn syntax_error_lists_expected() {
        let err = parse_source("int main() { x = ; }").unwrap_err();
        assert_eq!(err.kind, ErrorKind::Syntax);
        assert!(err.expected.contains(&"identifier".to_string()));
    }

    #[test]
    fn compound_assignment_desugars() {
        let p = parse_source("int main() { int i; i = 0; i += 2; i++; return i; }").unwrap();
        let body = p.function("main").unwrap().body.as_ref().unwrap();
        assert!(matches!(&body[2].kind, StmtKind::Assign { value, .. }
            if matches!(value.kind, ExprKind::Binary(BinaryOp::Add, _, _))));
        assert!(matches!(&body[3].kind, StmtKind::Assign { .. }));
    }

    #[test]
    fn missing_strength_rejected() {
        assert!(parse_source("void f() {\n#pragma rolex robust share(a)\n{ }\n}").is_err());
        let err = parse_source("void f() {\n#pragma rolex robust detect correct\n{ }\n}").unwrap_err();
        assert_eq!(err.kind, ErrorKind::GrammarViolation);
    }
}
