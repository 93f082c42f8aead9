//! Fault injection: scheduled bit flips in a running VM, outcome
//! classification against a golden run and efficiency accounting.

mod campaign;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::runtime::{RecoveryAction, RuntimeEvent};
use crate::vm::memory::SegmentKind;
use crate::vm::value::Val;
use crate::vm::{Image, LoadError, RunResult, Status, Vm, VmConfig};

pub use campaign::{
    campaign, derive_seed, parse_config, parse_runs_csv, summarize, summary_table, write_atomic, CampaignConfig, CampaignReport, ConfigError,
    RateSummary, RunRow, CSV_HEADER, SUMMARY_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Every flip is reported to the runtime, as an uncorrectable SECDED error would be.
    Detected,
    /// Flips are never reported.
    Silent,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Detected => "detected",
            Mode::Silent => "silent",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "detected" => Some(Mode::Detected),
            "silent" => Some(Mode::Silent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SiteSelector {
    UniformRandom,
    /// Bytes of one construct: a registered variable or a block's code.
    TargetConstruct(String),
    TargetSegment(SegmentKind),
}

/// When faults strike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timing {
    /// One fault at a uniform step inside each consecutive window of
    /// `interval * scale` steps, for as long as the golden run lasts.
    Interval { interval: f64, scale: u64 },
    /// Exactly `k` faults at distinct uniform steps of the golden run.
    Exact(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSchedule {
    pub mode: Mode,
    pub timing: Timing,
    pub selector: SiteSelector,
    pub seed: u64,
}

impl FaultSchedule {
    /// Upper bound on the number of faults over a run of `golden_steps`.
    pub fn max_faults(&self, golden_steps: u64) -> usize {
        match self.timing {
            Timing::Exact(k) => k,
            Timing::Interval { interval, scale } => {
                let window = window_len(interval, scale);
                golden_steps.div_ceil(window) as usize
            }
        }
    }

    /// Fault steps, strictly increasing.
    pub fn fault_steps(&self, golden_steps: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let span = golden_steps.max(1);
        match self.timing {
            Timing::Interval { interval, scale } => {
                let window = window_len(interval, scale);
                let mut out = Vec::new();
                let mut start = 0;
                while start < span {
                    let t = start + rng.gen_range(0..window);
                    if t < span {
                        out.push(t);
                    }
                    start += window;
                }
                out
            }
            Timing::Exact(k) => {
                let k = k.min(span as usize);
                let mut v = rand::seq::index::sample(rng, span as usize, k).into_vec();
                v.sort_unstable();
                v.into_iter().map(|x| x as u64).collect()
            }
        }
    }
}

fn window_len(interval: f64, scale: u64) -> u64 {
    ((interval * scale as f64).round() as u64).max(1)
}

/// One applied bit flip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultEvent {
    pub step: u64,
    pub addr: u64,
    pub bit: u8,
    pub mode: Mode,
    /// Construct owning the struck byte, if any.
    pub construct: Option<String>,
}

impl fmt::Display for FaultEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{:#x}/{}", self.step, self.addr, self.bit)?;
        if let Some(c) = &self.construct {
            write!(f, "={c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Classification {
    CompletedCorrect,
    DetectedCorrected,
    Benign,
    SilentWrong,
    TerminatedGraceful,
    Crashed,
}

impl Classification {
    pub const ALL: [Classification; 6] = [
        Classification::CompletedCorrect,
        Classification::DetectedCorrected,
        Classification::Benign,
        Classification::SilentWrong,
        Classification::TerminatedGraceful,
        Classification::Crashed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Classification::CompletedCorrect => "completed_correct",
            Classification::DetectedCorrected => "detected_corrected",
            Classification::Benign => "benign",
            Classification::SilentWrong => "silent_wrong",
            Classification::TerminatedGraceful => "terminated_graceful",
            Classification::Crashed => "crashed",
        }
    }

    pub fn parse(s: &str) -> Option<Classification> {
        Classification::ALL.into_iter().find(|c| c.name() == s)
    }

    /// The run finished with acceptable output.
    pub fn survived(self) -> bool {
        matches!(
            self,
            Classification::CompletedCorrect | Classification::DetectedCorrected | Classification::Benign
        )
    }

    pub fn completed(self) -> bool {
        self.survived() || self == Classification::SilentWrong
    }
}

/// Acceptance predicate of a program's output against the golden output.
pub trait OutputCheck: Sync {
    fn accepts(&self, output: &str, golden: &str) -> bool;
}

/// Bit-exact output equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactOutput;

impl OutputCheck for ExactOutput {
    fn accepts(&self, output: &str, golden: &str) -> bool {
        output == golden
    }
}

/// Reference data from a fault-free execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Golden {
    pub output: String,
    /// Steps of the fault-free run of the program under test.
    pub steps: u64,
    /// Steps of the fault-free untransformed program: the ideal time-to-solution.
    pub baseline_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub classification: Classification,
    pub faults: Vec<FaultEvent>,
    pub steps: u64,
    pub efficiency: Option<f64>,
    /// Runtime decisions, one per delivered notification.
    pub actions: Vec<RecoveryAction>,
    pub result: RunResult,
}

/// Ratio of ideal to actual time-to-solution; absent when the run did not complete.
pub fn efficiency_of(outcome_completed: bool, baseline_steps: u64, steps: u64) -> Option<f64> {
    (outcome_completed && steps > 0).then(|| baseline_steps as f64 / steps as f64)
}

/// Fault-free execution of `image`; `baseline` is the untransformed program
/// (pass the same image when there is none).
pub fn golden_run(image: &Arc<Image>, baseline: &Arc<Image>, inputs: &[Val], config: VmConfig) -> Result<Golden, LoadError> {
    let run = |img: &Arc<Image>| -> Result<RunResult, LoadError> {
        let mut vm = Vm::new(img.clone(), config, inputs);
        vm.run();
        let r = vm.result();
        match &r.status {
            Status::CompletedOk => Ok(r),
            other => Err(LoadError(format!("fault-free run did not complete: {other}"))),
        }
    };
    let r = run(image)?;
    let baseline_steps = if Arc::ptr_eq(image, baseline) { r.steps } else { run(baseline)?.steps };
    Ok(Golden { output: r.output, steps: r.steps, baseline_steps })
}

/// Classify a finished run.
pub fn classify(result: &RunResult, faults: &[FaultEvent], mode: Mode, golden: &Golden, check: &dyn OutputCheck) -> Classification {
    match &result.status {
        Status::Crashed(_) | Status::Running => Classification::Crashed,
        Status::TerminatedGraceful(_) => Classification::TerminatedGraceful,
        Status::CompletedOk if !check.accepts(&result.output, &golden.output) => Classification::SilentWrong,
        Status::CompletedOk if result.stats.recovered() => Classification::DetectedCorrected,
        Status::CompletedOk if mode == Mode::Silent && !faults.is_empty() => Classification::Benign,
        Status::CompletedOk => Classification::CompletedCorrect,
    }
}

/// Owner of the byte at `addr`: a registered construct or a block's code.
pub fn construct_at(vm: &Vm, addr: u64) -> Option<String> {
    if let Some(hit) = vm.runtime.drm.lookup(addr) {
        return vm.runtime.drm.get(hit.entry).map(|e| e.construct.clone());
    }
    let blocks = vm.image().profile.blocks().map(|r| r.id.clone());
    vm.image()
        .block_code
        .iter()
        .zip(blocks)
        .find(|(r, _)| r.is_some_and(|(a, l)| addr >= a && addr < a + l))
        .map(|(_, id)| id)
}

/// Candidate byte ranges for a selector at the current VM state.
pub fn candidate_ranges(vm: &Vm, selector: &SiteSelector) -> Vec<(u64, u64)> {
    match selector {
        SiteSelector::UniformRandom => vm.injectable_ranges().into_iter().map(|(a, l, _)| (a, l)).collect(),
        SiteSelector::TargetSegment(seg) => {
            vm.injectable_ranges().into_iter().filter(|r| r.2 == *seg).map(|(a, l, _)| (a, l)).collect()
        }
        SiteSelector::TargetConstruct(name) => {
            let mut out: Vec<(u64, u64)> = vm
                .runtime
                .drm
                .entries()
                .filter(|(_, e)| &e.construct == name)
                .flat_map(|(_, e)| e.ranges.iter().copied())
                .collect();
            if out.is_empty() {
                if let Some(i) = vm.image().profile.blocks().position(|r| &r.id == name) {
                    out.extend(vm.image().block_code[i]);
                }
            }
            if out.is_empty() {
                if let Some((a, ty)) = vm.global(name) {
                    out.push((a, ty.size()));
                }
            }
            out
        }
    }
}

/// Uniform (byte, bit) over the ranges.
pub fn pick_site(ranges: &[(u64, u64)], rng: &mut ChaCha8Rng) -> Option<(u64, u8)> {
    let total: u64 = ranges.iter().map(|r| r.1).sum();
    if total == 0 {
        return None;
    }
    let mut at = rng.gen_range(0..total);
    let bit = rng.gen_range(0..8u8);
    for &(a, l) in ranges {
        if at < l {
            return Some((a + at, bit));
        }
        at -= l;
    }
    None
}

/// A fault fixed in advance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedFault {
    pub step: u64,
    pub addr: u64,
    pub bit: u8,
}

/// Advance the VM until it has executed `step` steps or stopped.
fn run_until(vm: &mut Vm, step: u64) {
    while vm.status().is_running() && vm.steps() < step {
        vm.step();
    }
}

fn strike(vm: &mut Vm, addr: u64, bit: u8, mode: Mode) -> FaultEvent {
    let event = FaultEvent { step: vm.steps(), addr, bit, mode, construct: construct_at(vm, addr) };
    vm.flip(addr, bit);
    if mode == Mode::Detected {
        vm.notify(addr, bit);
    }
    event
}

fn finish(vm: &mut Vm, faults: Vec<FaultEvent>, mode: Mode, golden: &Golden, check: &dyn OutputCheck) -> RunOutcome {
    vm.run();
    let result = vm.result();
    let classification = classify(&result, &faults, mode, golden, check);
    let actions = vm
        .runtime
        .events
        .iter()
        .filter_map(|e| match e {
            RuntimeEvent::Decided { action, .. } => Some(action.clone()),
            _ => None,
        })
        .collect();
    RunOutcome {
        classification,
        steps: result.steps,
        efficiency: efficiency_of(classification.completed(), golden.baseline_steps, result.steps),
        faults,
        actions,
        result,
    }
}

/// Execute one run under a fault schedule.
pub fn inject_run(
    image: &Arc<Image>,
    inputs: &[Val],
    config: VmConfig,
    golden: &Golden,
    schedule: &FaultSchedule,
    check: &dyn OutputCheck,
) -> RunOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let times = schedule.fault_steps(golden.steps, &mut rng);
    let mut vm = Vm::new(image.clone(), config, inputs);
    let mut faults = Vec::with_capacity(times.len());
    for t in times {
        run_until(&mut vm, t);
        if !vm.status().is_running() {
            break;
        }
        let ranges = candidate_ranges(&vm, &schedule.selector);
        if let Some((addr, bit)) = pick_site(&ranges, &mut rng) {
            faults.push(strike(&mut vm, addr, bit, schedule.mode));
        }
    }
    finish(&mut vm, faults, schedule.mode, golden, check)
}

/// Execute one run with faults at fixed steps and sites.
pub fn inject_planned(
    image: &Arc<Image>,
    inputs: &[Val],
    config: VmConfig,
    golden: &Golden,
    plan: &[PlannedFault],
    mode: Mode,
    check: &dyn OutputCheck,
) -> RunOutcome {
    let mut vm = Vm::new(image.clone(), config, inputs);
    let mut plan = plan.to_vec();
    plan.sort_by_key(|p| p.step);
    let mut faults = Vec::with_capacity(plan.len());
    for p in plan {
        run_until(&mut vm, p.step);
        if !vm.status().is_running() {
            break;
        }
        faults.push(strike(&mut vm, p.addr, p.bit, mode));
    }
    finish(&mut vm, faults, mode, golden, check)
}

/// Where a single targeted fault lands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Address(u64),
    /// Byte `offset` into a construct, global or block code, counted across its ranges.
    Construct { name: String, offset: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TargetError {
    #[error("address {0:#x} is not in an injectable segment at step {1}")]
    NotInjectable(u64, u64),
    #[error("'{0}' names no construct, global or block at step {1}")]
    UnknownConstruct(String, u64),
    #[error("offset {offset} is outside '{name}' ({len} bytes)")]
    Offset { name: String, offset: u64, len: u64 },
    #[error("bit {0} is outside 0..64")]
    Bit(u8),
    #[error("the program stopped before step {0}")]
    Stopped(u64),
}

/// Run with one fault at `step`, resolving the target against the live VM.
/// `bit` counts from the target's first byte, little-endian, so bit 20 of an
/// `int` is bit 4 of its third byte.
#[allow(clippy::too_many_arguments)]
pub fn inject_targeted(
    image: &Arc<Image>,
    inputs: &[Val],
    config: VmConfig,
    golden: &Golden,
    step: u64,
    target: &Target,
    bit: u8,
    mode: Mode,
    check: &dyn OutputCheck,
) -> Result<RunOutcome, TargetError> {
    if bit > 63 {
        return Err(TargetError::Bit(bit));
    }
    let (byte, bit) = (u64::from(bit / 8), bit % 8);
    let mut vm = Vm::new(image.clone(), config, inputs);
    run_until(&mut vm, step);
    if !vm.status().is_running() {
        return Err(TargetError::Stopped(step));
    }
    let addr = match target {
        Target::Address(a) => {
            let a = a + byte;
            if !vm.injectable_ranges().iter().any(|&(b, l, _)| a >= b && a < b + l) {
                return Err(TargetError::NotInjectable(a, vm.steps()));
            }
            a
        }
        Target::Construct { name, offset } => {
            let ranges = candidate_ranges(&vm, &SiteSelector::TargetConstruct(name.clone()));
            if ranges.is_empty() {
                return Err(TargetError::UnknownConstruct(name.clone(), vm.steps()));
            }
            let len: u64 = ranges.iter().map(|r| r.1).sum();
            let offset = offset + byte;
            let mut at = offset;
            let mut found = None;
            for (a, l) in ranges {
                if at < l {
                    found = Some(a + at);
                    break;
                }
                at -= l;
            }
            found.ok_or_else(|| TargetError::Offset { name: name.clone(), offset, len })?
        }
    };
    let event = strike(&mut vm, addr, bit, mode);
    Ok(finish(&mut vm, vec![event], mode, golden, check))
}

/// Bytes of each injectable range that a construct covers, taken at `step`
/// of a fault-free run: (covered bytes per policy name, total bytes).
pub fn coverage_at(image: &Arc<Image>, inputs: &[Val], config: VmConfig, step: u64) -> (Vec<(String, u64)>, u64) {
    let mut vm = Vm::new(image.clone(), config, inputs);
    run_until(&mut vm, step);
    let ranges = vm.injectable_ranges();
    let total = ranges.iter().map(|r| r.1).sum();
    let mut by_policy: Vec<(String, u64)> = Vec::new();
    for (a, l, seg) in ranges {
        let class = if seg == SegmentKind::Code {
            "code".to_string()
        } else {
            match vm.runtime.drm.lookup(a) {
                Some(hit) => vm.runtime.drm.get(hit.entry).map(|e| e.policy.class_name().to_string()).unwrap_or_default(),
                None => "unprotected".to_string(),
            }
        };
        match by_policy.iter_mut().find(|(c, _)| *c == class) {
            Some(slot) => slot.1 += l,
            None => by_policy.push((class, l)),
        }
    }
    by_policy.sort();
    (by_policy, total)
}

#[cfg(test)]
mod tests;
