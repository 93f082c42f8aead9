//! The annotated kernel corpus: sources, default inputs and the acceptance
//! bound each kernel's output is judged by.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::frontend::{ast::Program, check_source};
use crate::injector::{golden_run, Golden, Mode, OutputCheck};
use crate::transform::{strip_directives, transform, Profile, TransformedProgram};
use crate::vm::value::Val;
use crate::vm::{Image, LoadError, VmConfig};

pub const MANIFEST: &str = include_str!("../../kernels/manifest.conf");

/// Kernel sources by file name.
pub const SOURCES: &[(&str, &str)] = &[
    ("randomaccess.rc", include_str!("../../kernels/randomaccess.rc")),
    ("render.rc", include_str!("../../kernels/render.rc")),
    ("md.rc", include_str!("../../kernels/md.rc")),
    ("bfs.rc", include_str!("../../kernels/bfs.rc")),
    ("dgemm.rc", include_str!("../../kernels/dgemm.rc")),
    ("cg.rc", include_str!("../../kernels/cg.rc")),
    ("sscg.rc", include_str!("../../kernels/sscg.rc")),
    ("declare.rc", include_str!("../../kernels/declare.rc")),
];

/// Construct families a kernel exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Construct {
    TolerantQualifier,
    TolerantMalloc,
    RobustQualifier,
    RobustDirective,
    HealQualifier,
    RepairableMalloc,
    Rollback,
    Rollforward,
    DeclareResilient,
}

impl Construct {
    pub const ALL: [Construct; 9] = [
        Construct::TolerantQualifier,
        Construct::TolerantMalloc,
        Construct::RobustQualifier,
        Construct::RobustDirective,
        Construct::HealQualifier,
        Construct::RepairableMalloc,
        Construct::Rollback,
        Construct::Rollforward,
        Construct::DeclareResilient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Construct::TolerantQualifier => "tolerant",
            Construct::TolerantMalloc => "tolerant_malloc",
            Construct::RobustQualifier => "robust",
            Construct::RobustDirective => "robust_directive",
            Construct::HealQualifier => "heal",
            Construct::RepairableMalloc => "repairable_malloc",
            Construct::Rollback => "rollback",
            Construct::Rollforward => "rollforward",
            Construct::DeclareResilient => "declare_resilient",
        }
    }

    pub fn parse(s: &str) -> Option<Construct> {
        Construct::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Output acceptance predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Exact,
    /// Fraction of differing numbers at most `max_fraction`.
    Table { max_fraction: f64 },
    /// Fraction of numbers deviating by more than `threshold` below `max_fraction`.
    Pixels { threshold: f64, max_fraction: f64 },
    /// Last `energy` line within `rel` of the golden value.
    Energy { rel: f64 },
    /// `residual` line below `tol`.
    Residual { tol: f64 },
}

fn numbers(s: &str) -> Option<Vec<f64>> {
    s.split_whitespace().map(|t| t.parse::<f64>().ok()).collect()
}

fn tagged(s: &str, tag: &str) -> Option<f64> {
    s.lines().rev().find_map(|l| {
        let mut it = l.split_whitespace();
        (it.next() == Some(tag)).then(|| it.next().and_then(|v| v.parse().ok())).flatten()
    })
}

impl Bound {
    pub fn parse(s: &str) -> Option<Bound> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| parts.get(i).and_then(|v| v.parse::<f64>().ok()).filter(|x| x.is_finite() && *x >= 0.0);
        Some(match parts.first()? {
            &"exact" if parts.len() == 1 => Bound::Exact,
            &"table" if parts.len() == 2 => Bound::Table { max_fraction: num(1)? },
            &"pixels" if parts.len() == 3 => Bound::Pixels { threshold: num(1)?, max_fraction: num(2)? },
            &"energy" if parts.len() == 2 => Bound::Energy { rel: num(1)? },
            &"residual" if parts.len() == 2 => Bound::Residual { tol: num(1)? },
            _ => return None,
        })
    }

    /// Fraction of numbers in `output` differing from `golden` by more than `threshold`.
    pub fn deviating_fraction(output: &str, golden: &str, threshold: f64) -> Option<f64> {
        let (a, b) = (numbers(output)?, numbers(golden)?);
        if a.len() != b.len() || a.is_empty() {
            return None;
        }
        let off = a.iter().zip(&b).filter(|(x, y)| !((*x - *y).abs() <= threshold)).count();
        Some(off as f64 / a.len() as f64)
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Bound::Exact => f.write_str("exact"),
            Bound::Table { max_fraction } => write!(f, "table {max_fraction}"),
            Bound::Pixels { threshold, max_fraction } => write!(f, "pixels {threshold} {max_fraction}"),
            Bound::Energy { rel } => write!(f, "energy {rel}"),
            Bound::Residual { tol } => write!(f, "residual {tol}"),
        }
    }
}

impl OutputCheck for Bound {
    fn accepts(&self, output: &str, golden: &str) -> bool {
        match *self {
            Bound::Exact => output == golden,
            Bound::Table { max_fraction } => {
                Bound::deviating_fraction(output, golden, 0.0).is_some_and(|f| f <= max_fraction)
            }
            Bound::Pixels { threshold, max_fraction } => {
                Bound::deviating_fraction(output, golden, threshold).is_some_and(|f| f < max_fraction)
            }
            Bound::Energy { rel } => match (tagged(output, "energy"), tagged(golden, "energy")) {
                (Some(e), Some(g)) => (e - g).abs() <= rel * g.abs(),
                _ => false,
            },
            Bound::Residual { tol } => tagged(output, "residual").is_some_and(|r| r < tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub name: String,
    pub source_path: String,
    pub source: &'static str,
    pub inputs: Vec<Val>,
    pub bound: Bound,
    pub constructs: Vec<Construct>,
    /// Fault mode the kernel's campaigns use by default.
    pub mode: Mode,
    pub oracle: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("unknown kernel '{0}'")]
    Unknown(String),
    #[error("{name}: {message}")]
    Source { name: String, message: String },
    #[error(transparent)]
    Load(#[from] LoadError),
}

/// Parse `<kernel>.<key> = value` lines.
pub fn parse_manifest(text: &str) -> Result<Vec<KernelSpec>, KernelError> {
    let mut out: Vec<KernelSpec> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |m: String| KernelError::Manifest { line: line_no, message: m };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected 'key = value'".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let (name, field) = key.rsplit_once('.').ok_or_else(|| err(format!("key '{key}' has no kernel prefix")))?;
        if !out.iter().any(|k| k.name == name) {
            out.push(KernelSpec {
                name: name.to_string(),
                source_path: String::new(),
                source: "",
                inputs: Vec::new(),
                bound: Bound::Exact,
                constructs: Vec::new(),
                mode: Mode::Detected,
                oracle: String::new(),
            });
        }
        let k = out.iter_mut().find(|k| k.name == name).expect("inserted");
        match field {
            "source" => {
                k.source = SOURCES
                    .iter()
                    .find(|(f, _)| *f == value)
                    .map(|(_, s)| *s)
                    .ok_or_else(|| err(format!("no bundled source '{value}'")))?;
                k.source_path = format!("kernels/{value}");
            }
            "input" => {
                k.inputs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Val::parse_input(s).ok_or_else(|| err(format!("bad input '{s}'"))))
                    .collect::<Result<_, _>>()?
            }
            "bound" => k.bound = Bound::parse(value).ok_or_else(|| err(format!("bad bound '{value}'")))?,
            "constructs" => {
                k.constructs = value
                    .split(',')
                    .map(str::trim)
                    .map(|s| Construct::parse(s).ok_or_else(|| err(format!("unknown construct '{s}'"))))
                    .collect::<Result<_, _>>()?
            }
            "mode" => k.mode = Mode::parse(value).ok_or_else(|| err(format!("bad mode '{value}'")))?,
            "oracle" => k.oracle = value.to_string(),
            _ => return Err(err(format!("unknown field '{field}'"))),
        }
    }
    if let Some(k) = out.iter().find(|k| k.source.is_empty()) {
        return Err(KernelError::Manifest { line: 0, message: format!("kernel '{}' has no source", k.name) });
    }
    Ok(out)
}

/// The bundled corpus, in manifest order.
pub fn corpus() -> Vec<KernelSpec> {
    parse_manifest(MANIFEST).expect("bundled manifest is well formed")
}

pub fn find(name: &str) -> Result<KernelSpec, KernelError> {
    corpus().into_iter().find(|k| k.name == name).ok_or_else(|| KernelError::Unknown(name.to_string()))
}

/// A kernel ready to execute, with and without the resilience pass.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: KernelSpec,
    pub program: Program,
    pub transformed: TransformedProgram,
    pub image: Arc<Image>,
    pub baseline: Arc<Image>,
}

impl KernelSpec {
    pub fn program(&self) -> Result<Program, KernelError> {
        check_source(self.source).map_err(|d| KernelError::Source {
            name: self.name.clone(),
            message: d.iter().map(|d| d.render(&self.source_path)).collect::<Vec<_>>().join("\n"),
        })
    }

    pub fn prepare(&self, layout_seed: u64) -> Result<Prepared, KernelError> {
        let program = self.program()?;
        let transformed = transform(&program)
            .map_err(|e| KernelError::Source { name: self.name.clone(), message: e.to_string() })?;
        let image = Arc::new(Image::from_transformed(&transformed, layout_seed)?);
        let baseline = Arc::new(Image::build(&strip_directives(&program), &Profile::default(), layout_seed)?);
        Ok(Prepared { spec: self.clone(), program, transformed, image, baseline })
    }

    /// Constructs found in the source text, independent of the manifest's claims.
    pub fn constructs_in_source(&self) -> Vec<Construct> {
        let s = self.source;
        let mut out = Vec::new();
        let has = |p: &str| s.contains(p);
        if s.lines().any(|l| l.trim_start().starts_with("tolerant")) {
            out.push(Construct::TolerantQualifier);
        }
        if has("rolex_malloc_tolerant(") {
            out.push(Construct::TolerantMalloc);
        }
        if s.lines().any(|l| l.trim_start().starts_with("robust")) {
            out.push(Construct::RobustQualifier);
        }
        if has("#pragma rolex robust") {
            out.push(Construct::RobustDirective);
        }
        if s.lines().any(|l| l.trim_start().starts_with("heal")) {
            out.push(Construct::HealQualifier);
        }
        if has("rolex_malloc_repairable(") {
            out.push(Construct::RepairableMalloc);
        }
        if has("recover-rollback") {
            out.push(Construct::Rollback);
        }
        if has("recover-rollforward") {
            out.push(Construct::Rollforward);
        }
        if has("#pragma rolex declare resilient") {
            out.push(Construct::DeclareResilient);
        }
        out
    }
}

impl Prepared {
    pub fn golden(&self, config: VmConfig) -> Result<Golden, LoadError> {
        golden_run(&self.image, &self.baseline, &self.spec.inputs, config)
    }
}

#[cfg(test)]
mod tests;
