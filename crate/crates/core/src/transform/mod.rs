//! Source-to-source resilience pass: robust replication, directive outlining
//! and profile emission.

mod annotate;
mod env;
mod outline;
pub mod profile;
mod replicate;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frontend::ast::*;
use crate::frontend::Pos;
pub use outline::outline_directives;
pub use profile::{BlockInfo, BlockPolicy, Profile, ProfileError, ProfileRecord, RecordKind};
pub use replicate::replicate_robust;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{pos}: transform error: {message}")]
pub struct TransformError {
    pub pos: Pos,
    pub message: String,
}

impl TransformError {
    pub(crate) fn new(pos: Pos, message: impl Into<String>) -> Self {
        TransformError { pos, message: message.into() }
    }
}

/// Output of the resilience pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedProgram {
    pub program: Program,
    pub profile: Profile,
    /// Directive site (`function@line:col`) to generated function name.
    pub outlined: BTreeMap<String, String>,
    /// One internal control variable per generated block.
    pub icvs: Vec<String>,
}

impl TransformedProgram {
    /// Wrap a program that needs no runtime support.
    pub fn plain(program: Program) -> Self {
        TransformedProgram { program, profile: Profile::default(), outlined: BTreeMap::new(), icvs: Vec::new() }
    }
}

/// Full resilience pass over a validated program.
pub fn transform(program: &Program) -> Result<TransformedProgram, TransformError> {
    let replicated = replicate_robust(program)?;
    outline_directives(&replicated)
}

/// Resilience-free build: drops every pragma but keeps declarations as written.
/// Qualifiers stay in the source and are ignored by execution.
pub fn strip_directives(program: &Program) -> Program {
    fn strip(s: &mut Stmt) {
        match &mut s.kind {
            StmtKind::Directive(d) => {
                let mut body = (*d.body).clone();
                strip(&mut body);
                *s = body;
            }
            StmtKind::If { then, els, .. } => {
                strip(then);
                if let Some(e) = els {
                    strip(e);
                }
            }
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => strip(body),
            StmtKind::Block(b) => b.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut p = program.clone();
    for item in &mut p.items {
        if let Item::Function(f) = item {
            f.declare = None;
            if let Some(body) = &mut f.body {
                body.iter_mut().for_each(strip);
            }
        }
    }
    p
}

/// Names of generated robust-qualifier replicas.
pub fn replica_name(var: &str, k: usize) -> String {
    format!("{var}__r{k}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_source, print_program};

    #[test]
    fn strip_keeps_bodies() {
        let src = "int a;\n#pragma rolex declare resilient retry\nint g() { return 1; }\n\
                   int main() {\n#pragma rolex recover-rollback share(a)\n{ a = g(); }\nreturn a; }";
        let p = strip_directives(&parse_source(src).unwrap());
        let text = print_program(&p);
        assert!(!text.contains("pragma"));
        assert!(text.contains("a = g();"));
    }
}
