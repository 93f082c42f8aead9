//! RC front end: lexer, parser, pretty-printer and static validation.

pub mod ast;
mod parser;
mod printer;
pub mod token;
mod validate;

use std::fmt;

pub use ast::Pos;
pub use parser::parse;
pub use printer::{print_expr, print_program, print_type};
pub use token::{tokenize, Token, TokenKind};
pub use validate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Lexical,
    Syntax,
    GrammarViolation,
}

impl ErrorKind {
    fn label(self) -> &'static str {
        match self {
            ErrorKind::Lexical => "lexical error",
            ErrorKind::Syntax => "syntax error",
            ErrorKind::GrammarViolation => "grammar violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct FrontendError {
    pub kind: ErrorKind,
    pub pos: Pos,
    pub message: String,
    /// Symbols the parser would have accepted, for syntax errors.
    pub expected: Vec<String>,
}

impl FrontendError {
    pub fn lexical(pos: Pos, message: impl Into<String>) -> Self {
        FrontendError { kind: ErrorKind::Lexical, pos, message: message.into(), expected: Vec::new() }
    }

    pub fn syntax(pos: Pos, message: impl Into<String>, expected: &[&str]) -> Self {
        FrontendError {
            kind: ErrorKind::Syntax,
            pos,
            message: message.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn grammar(pos: Pos, message: impl Into<String>) -> Self {
        FrontendError { kind: ErrorKind::GrammarViolation, pos, message: message.into(), expected: Vec::new() }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        let mut message = format!("{}: {}", self.kind.label(), self.message);
        if !self.expected.is_empty() {
            message.push_str(&format!(" (expected one of: {})", self.expected.join(", ")));
        }
        Diagnostic::error(self.pos, message)
    }
}

impl fmt::Display for FrontendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pos, self.to_diagnostic().message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub pos: Pos,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn error(pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic { pos, severity: Severity::Error, message: message.into() }
    }

    pub fn warning(pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic { pos, severity: Severity::Warning, message: message.into() }
    }

    /// `file:line:col: severity: message`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}:{}: {}: {}", self.pos.line, self.pos.col, self.severity, self.message)
    }
}

/// Arity of library routines and math builtins callable from RC.
pub fn builtin_arity(name: &str) -> Option<usize> {
    Some(match name {
        "sqrt" | "fabs" | "isnan" | "malloc" | "free" | "rolex_validate_robust" | "rolex_ameliorate_heal" => 1,
        "rolex_malloc_tolerant" | "rolex_malloc_robust" | "rolex_malloc_repairable" => 2,
        _ => return None,
    })
}

/// Tokenize and parse in one go.
pub fn parse_source(source: &str) -> Result<ast::Program, FrontendError> {
    parse(&tokenize(source)?)
}

/// Parse and validate, returning the program only when no error diagnostics remain.
pub fn check_source(source: &str) -> Result<ast::Program, Vec<Diagnostic>> {
    let program = parse_source(source).map_err(|e| vec![e.to_diagnostic()])?;
    let diags: Vec<Diagnostic> = validate(&program).into_iter().filter(|d| d.severity == Severity::Error).collect();
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(diags)
    }
}
