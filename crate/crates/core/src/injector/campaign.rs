//! Campaign grids: configuration, parallel execution, CSV reports.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::{inject_run, Classification, FaultSchedule, Golden, Mode, OutputCheck, SiteSelector, Timing};
use crate::vm::memory::SegmentKind;
use crate::vm::value::Val;
use crate::vm::{Image, VmConfig};

pub const CSV_HEADER: &str = "run_id,rate,seed,mode,faults,classification,steps,efficiency,fault_sites";
pub const SUMMARY_HEADER: &str = "rate,mode,runs,survived,survival,completed_correct,detected_corrected,benign,silent_wrong,terminated_graceful,crashed,mean_efficiency";

/// Golden-run length expressed in scale units when the scale is derived.
pub const AUTO_RUN_UNITS: u64 = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {0}: expected 'key = value'")]
    Syntax(usize),
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("key '{key}': invalid value '{value}'")]
    Value { key: String, value: String },
    #[error("missing key '{0}'")]
    Missing(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub kernel: String,
    /// Overrides the kernel's default inputs when present.
    pub inputs: Option<Vec<Val>>,
    /// Fault intervals, in scale units per fault.
    pub rates: Vec<f64>,
    /// Exact fault counts per run; used instead of `rates` when non-empty.
    pub exact_faults: Vec<usize>,
    pub runs_per_rate: usize,
    pub modes: Vec<Mode>,
    pub seed: u64,
    pub layout_seed: u64,
    /// Steps per scale unit; derived from the golden run when absent.
    pub scale: Option<u64>,
    pub selector: SiteSelector,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            kernel: String::new(),
            inputs: None,
            rates: vec![15.0, 10.0, 5.0, 2.0, 1.0],
            exact_faults: Vec::new(),
            runs_per_rate: 2000,
            modes: vec![Mode::Detected],
            seed: 1,
            layout_seed: 0,
            scale: None,
            selector: SiteSelector::UniformRandom,
            threads: 0,
        }
    }
}

fn list<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).ok_or_else(|| ConfigError::Value { key: key.into(), value: s.into() }))
        .collect()
}

/// Input literal that parses back to the same value and type.
fn input_text(v: &Val) -> String {
    match v {
        Val::F64(x) => format!("{x:?}"),
        other => other.to_string(),
    }
}

pub fn parse_selector(s: &str) -> Option<SiteSelector> {
    match s.split_once(':') {
        None if s == "uniform" => Some(SiteSelector::UniformRandom),
        Some(("segment", seg)) => SegmentKind::parse(seg).map(SiteSelector::TargetSegment),
        Some(("construct", name)) if !name.is_empty() => Some(SiteSelector::TargetConstruct(name.to_string())),
        _ => None,
    }
}

fn selector_text(s: &SiteSelector) -> String {
    match s {
        SiteSelector::UniformRandom => "uniform".into(),
        SiteSelector::TargetSegment(k) => format!("segment:{}", k.name()),
        SiteSelector::TargetConstruct(c) => format!("construct:{c}"),
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<CampaignConfig, ConfigError> {
    let mut c = CampaignConfig::default();
    let mut have_kernel = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = || ConfigError::Value { key: key.into(), value: value.into() };
        match key {
            "kernel" => {
                c.kernel = value.to_string();
                have_kernel = !value.is_empty();
            }
            "input" | "inputs" => c.inputs = Some(list(key, value, Val::parse_input)?),
            "rates" => {
                c.rates = list(key, value, |s| s.parse::<f64>().ok().filter(|x| x.is_finite() && *x > 0.0))?;
                if c.rates.is_empty() {
                    return Err(bad());
                }
            }
            "exact_faults" => c.exact_faults = list(key, value, |s| s.parse().ok())?,
            "runs_per_rate" | "runsPerRate" => c.runs_per_rate = value.parse().ok().filter(|&n| n >= 1).ok_or_else(bad)?,
            "mode" | "modes" => {
                c.modes = list(key, value, Mode::parse)?;
                if c.modes.is_empty() {
                    return Err(bad());
                }
            }
            "seed" => c.seed = value.parse().map_err(|_| bad())?,
            "layout_seed" => c.layout_seed = value.parse().map_err(|_| bad())?,
            "scale" => {
                c.scale = match value {
                    "auto" => None,
                    v => Some(v.parse().ok().filter(|&s| s >= 1).ok_or_else(bad)?),
                }
            }
            "selector" => c.selector = parse_selector(value).ok_or_else(bad)?,
            "threads" => c.threads = value.parse().map_err(|_| bad())?,
            _ => return Err(ConfigError::UnknownKey { line: i + 1, key: key.into() }),
        }
    }
    if !have_kernel {
        return Err(ConfigError::Missing("kernel"));
    }
    Ok(c)
}

impl CampaignConfig {
    /// Canonical text form; parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "kernel = {}", self.kernel);
        if let Some(inputs) = &self.inputs {
            let _ = writeln!(s, "input = {}", join(inputs.iter().map(input_text).collect()));
        }
        let _ = writeln!(s, "rates = {}", join(self.rates.iter().map(|r| r.to_string()).collect()));
        if !self.exact_faults.is_empty() {
            let _ = writeln!(s, "exact_faults = {}", join(self.exact_faults.iter().map(|k| k.to_string()).collect()));
        }
        let _ = writeln!(s, "runs_per_rate = {}", self.runs_per_rate);
        let _ = writeln!(s, "mode = {}", join(self.modes.iter().map(|m| m.name().to_string()).collect()));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "layout_seed = {}", self.layout_seed);
        let _ = writeln!(s, "scale = {}", self.scale.map_or("auto".to_string(), |x| x.to_string()));
        let _ = writeln!(s, "selector = {}", selector_text(&self.selector));
        s
    }

    /// Fault timings of the grid with their report labels.
    pub fn timings(&self, scale: u64) -> Vec<(String, Timing)> {
        if self.exact_faults.is_empty() {
            self.rates.iter().map(|&r| (r.to_string(), Timing::Interval { interval: r, scale })).collect()
        } else {
            self.exact_faults.iter().map(|&k| (format!("k{k}"), Timing::Exact(k))).collect()
        }
    }

    pub fn resolved_scale(&self, golden_steps: u64) -> u64 {
        self.scale.unwrap_or((golden_steps / AUTO_RUN_UNITS).max(1))
    }
}

/// Seed of one run, a pure function of the base seed and the grid position.
pub fn derive_seed(base: u64, cell: u64, run: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream((cell << 32) | (run & 0xffff_ffff));
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub run_id: usize,
    pub rate: String,
    pub seed: u64,
    pub mode: Mode,
    pub classification: Classification,
    pub steps: u64,
    pub efficiency: Option<f64>,
    pub fault_sites: Vec<String>,
}

impl RunRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.rate,
            self.seed,
            self.mode.name(),
            self.fault_sites.len(),
            self.classification.name(),
            self.steps,
            self.efficiency.map_or(String::new(), |e| format!("{e:.6}")),
            self.fault_sites.join(";"),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub rate: String,
    pub mode: Mode,
    pub runs: usize,
    pub counts: [usize; 6],
    pub mean_efficiency: Option<f64>,
}

impl RateSummary {
    pub fn count(&self, c: Classification) -> usize {
        self.counts[Classification::ALL.iter().position(|&x| x == c).expect("class")]
    }

    pub fn survived(&self) -> usize {
        Classification::ALL.iter().filter(|c| c.survived()).map(|&c| self.count(c)).sum()
    }

    pub fn survival(&self) -> f64 {
        self.survived() as f64 / self.runs.max(1) as f64
    }

    pub fn csv_line(&self) -> String {
        let counts: Vec<String> = self.counts.iter().map(|c| c.to_string()).collect();
        format!(
            "{},{},{},{},{:.6},{},{}",
            self.rate,
            self.mode.name(),
            self.runs,
            self.survived(),
            self.survival(),
            counts.join(","),
            self.mean_efficiency.map_or(String::new(), |e| format!("{e:.6}")),
        )
    }
}

/// Aggregate rows by (rate, mode), keeping first-appearance order.
pub fn summarize(rows: &[RunRow]) -> Vec<RateSummary> {
    let mut out: Vec<(RateSummary, f64, usize)> = Vec::new();
    for r in rows {
        let i = match out.iter().position(|(s, ..)| s.rate == r.rate && s.mode == r.mode) {
            Some(i) => i,
            None => {
                out.push((
                    RateSummary { rate: r.rate.clone(), mode: r.mode, runs: 0, counts: [0; 6], mean_efficiency: None },
                    0.0,
                    0,
                ));
                out.len() - 1
            }
        };
        let (s, sum, n) = &mut out[i];
        s.runs += 1;
        s.counts[Classification::ALL.iter().position(|&c| c == r.classification).expect("class")] += 1;
        if let Some(e) = r.efficiency {
            *sum += e;
            *n += 1;
        }
    }
    out.into_iter()
        .map(|(mut s, sum, n)| {
            s.mean_efficiency = (n > 0).then(|| sum / n as f64);
            s
        })
        .collect()
}

/// Fixed-width text table of per-rate summaries.
pub fn summary_table(summary: &[RateSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>8} {:>9} {:>6} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
        "rate", "mode", "runs", "survival", "correct", "repaired", "benign", "sdc", "term", "crash", "efficiency"
    );
    for r in summary {
        let _ = writeln!(
            s,
            "{:>8} {:>9} {:>6} {:>8.1}% {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
            r.rate,
            r.mode.name(),
            r.runs,
            100.0 * r.survival(),
            r.counts[0],
            r.counts[1],
            r.counts[2],
            r.counts[3],
            r.counts[4],
            r.counts[5],
            r.mean_efficiency.map_or("-".to_string(), |e| format!("{e:.4}")),
        );
    }
    s
}

/// Parse a per-run CSV as written by [`CampaignReport::runs_csv`].
pub fn parse_runs_csv(text: &str) -> Result<Vec<RunRow>, ConfigError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((i, _)) => return Err(ConfigError::Syntax(i + 1)),
        None => return Err(ConfigError::Missing("header")),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.splitn(9, ',').collect();
            let bad = || ConfigError::Syntax(i + 1);
            if f.len() != 9 {
                return Err(bad());
            }
            let sites: Vec<String> = if f[8].is_empty() { Vec::new() } else { f[8].split(';').map(String::from).collect() };
            if f[4].parse::<usize>().map_err(|_| bad())? != sites.len() {
                return Err(bad());
            }
            Ok(RunRow {
                run_id: f[0].parse().map_err(|_| bad())?,
                rate: f[1].to_string(),
                seed: f[2].parse().map_err(|_| bad())?,
                mode: Mode::parse(f[3]).ok_or_else(bad)?,
                classification: Classification::parse(f[5]).ok_or_else(bad)?,
                steps: f[6].parse().map_err(|_| bad())?,
                efficiency: if f[7].is_empty() { None } else { Some(f[7].parse().map_err(|_| bad())?) },
                fault_sites: sites,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub golden: Golden,
    pub scale: u64,
    pub rows: Vec<RunRow>,
    pub summary: Vec<RateSummary>,
}

impl CampaignReport {
    pub fn runs_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in &self.summary {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    /// Plain-text outcome table.
    pub fn table(&self) -> String {
        format!(
            "kernel {}  golden steps {}  baseline steps {}  scale {}\n{}",
            self.config.kernel,
            self.golden.steps,
            self.golden.baseline_steps,
            self.scale,
            summary_table(&self.summary)
        )
    }
}

/// Run the full (mode, rate, run) grid. Rows come back in grid order whatever
/// the degree of parallelism.
pub fn campaign(
    image: &Arc<Image>,
    inputs: &[Val],
    vm_config: VmConfig,
    golden: &Golden,
    check: &dyn OutputCheck,
    config: &CampaignConfig,
) -> CampaignReport {
    let scale = config.resolved_scale(golden.steps);
    let timings = config.timings(scale);
    let mut cells = Vec::new();
    for &mode in &config.modes {
        for (label, timing) in &timings {
            cells.push((mode, label.clone(), *timing));
        }
    }
    let n = config.runs_per_rate;
    let job = |i: usize| {
        let (mode, label, timing) = &cells[i / n];
        let seed = derive_seed(config.seed, (i / n) as u64, (i % n) as u64);
        let schedule = FaultSchedule { mode: *mode, timing: *timing, selector: config.selector.clone(), seed };
        let o = inject_run(image, inputs, vm_config, golden, &schedule, check);
        RunRow {
            run_id: i,
            rate: label.clone(),
            seed,
            mode: *mode,
            classification: o.classification,
            steps: o.steps,
            efficiency: o.efficiency,
            fault_sites: o.faults.iter().map(|f| f.to_string()).collect(),
        }
    };
    let total = cells.len() * n;
    let rows: Vec<RunRow> = if config.threads == 1 {
        (0..total).map(job).collect()
    } else if config.threads > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(config.threads).build() {
            Ok(pool) => pool.install(|| (0..total).into_par_iter().map(job).collect()),
            Err(_) => (0..total).map(job).collect(),
        }
    } else {
        (0..total).into_par_iter().map(job).collect()
    };
    let summary = summarize(&rows);
    CampaignReport { config: config.clone(), golden: golden.clone(), scale, rows, summary }
}

/// Write a file by renaming a completed temporary beside it.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
