//! `rolex`: translate RC programs, run them, inject faults and drive campaigns.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rolex_core::frontend::{parse_source, print_program, validate, Severity};
use rolex_core::injector::{
    campaign, golden_run, inject_targeted, parse_config, parse_runs_csv, summarize, summary_table, write_atomic,
    ExactOutput, Mode, OutputCheck, Target, SUMMARY_HEADER,
};
use rolex_core::kernels::{self, corpus, find, KernelError, MANIFEST};
use rolex_core::transform::{strip_directives, transform, Profile};
use rolex_core::vm::value::Val;
use rolex_core::vm::{Image, Status, Vm, VmConfig};

#[derive(Parser)]
#[command(name = "rolex", version, about = "Resilience-annotated C: translator, simulator and fault injector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the resilience pass, writing `<stem>.rcx` and `<stem>.profile`.
    Translate {
        source: PathBuf,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
        /// Strip every pragma instead of transforming.
        #[arg(long)]
        no_rolex: bool,
    },
    /// Run a program fault-free and print its output.
    Run {
        #[command(flatten)]
        program: ProgramArgs,
    },
    /// Run once with a single targeted bit flip.
    Inject {
        #[command(flatten)]
        program: ProgramArgs,
        /// Byte address to strike (hex with 0x, or decimal).
        #[arg(long, conflicts_with = "target", required_unless_present = "target")]
        addr: Option<String>,
        /// Construct, global or block id, optionally `name+offset`.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 0)]
        bit: u8,
        #[arg(long, default_value = "detected")]
        mode: String,
        /// Step at which the fault strikes; half the golden run by default.
        #[arg(long)]
        step: Option<u64>,
        /// Also print the program output.
        #[arg(long)]
        show_output: bool,
    },
    /// Execute a fault-injection campaign described by a config file.
    Campaign {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarize a per-run campaign CSV.
    Report {
        csv: PathBuf,
        /// Write the summary CSV here as well.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// List the kernel corpus, optionally exporting sources and manifest.
    Corpus {
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ProgramArgs {
    /// `.rc` source (translated on the fly) or `.rcx` with a `.profile` beside it.
    #[arg(required_unless_present = "kernel", conflicts_with = "kernel")]
    path: Option<PathBuf>,
    /// Profile for a `.rcx` program; defaults to the sibling `.profile`.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Corpus kernel instead of a file.
    #[arg(long)]
    kernel: Option<String>,
    /// Program input; repeat for several.
    #[arg(long = "input", allow_hyphen_values = true)]
    inputs: Vec<String>,
    #[arg(long, default_value_t = 0)]
    layout_seed: u64,
}

/// A user-facing error: reported and mapped to exit code 1.
#[derive(Debug)]
struct Diagnostics(String);

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Diagnostics {}

fn diag(msg: impl Into<String>) -> anyhow::Error {
    Diagnostics(msg.into()).into()
}

struct Loaded {
    image: Arc<Image>,
    baseline: Arc<Image>,
    inputs: Vec<Val>,
    check: Box<dyn OutputCheck>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| diag(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(String::from)
        .ok_or_else(|| diag(format!("{}: no file name", path.display())))
}

fn parse_inputs(raw: &[String]) -> Result<Vec<Val>> {
    raw.iter().map(|s| Val::parse_input(s).ok_or_else(|| diag(format!("bad input value '{s}'")))).collect()
}

fn kernel_error(e: KernelError) -> anyhow::Error {
    match e {
        KernelError::Unknown(_) => diag(e.to_string()),
        other => anyhow::Error::new(other),
    }
}

/// Parse and validate an RC source, printing warnings; errors become diagnostics.
fn checked(path: &Path, text: &str) -> Result<rolex_core::frontend::ast::Program> {
    let file = path.display().to_string();
    let program = parse_source(text).map_err(|e| diag(e.to_diagnostic().render(&file)))?;
    let diags = validate(&program);
    let mut errors = Vec::new();
    for d in &diags {
        match d.severity {
            Severity::Warning => eprintln!("{}", d.render(&file)),
            Severity::Error => errors.push(d.render(&file)),
        }
    }
    if errors.is_empty() {
        Ok(program)
    } else {
        Err(diag(errors.join("\n")))
    }
}

fn load(args: &ProgramArgs) -> Result<Loaded> {
    let overrides = parse_inputs(&args.inputs)?;
    if let Some(name) = &args.kernel {
        let spec = find(name).map_err(kernel_error)?;
        let p = spec.prepare(args.layout_seed).map_err(kernel_error)?;
        let inputs = if overrides.is_empty() { spec.inputs.clone() } else { overrides };
        return Ok(Loaded { image: p.image, baseline: p.baseline, inputs, check: Box::new(spec.bound) });
    }
    let path = args.path.as_deref().expect("clap requires a path or a kernel");
    let text = read(path)?;
    let file = path.display().to_string();
    let (image, baseline) = if path.extension().is_some_and(|e| e == "rcx") {
        let profile_path = args.profile.clone().unwrap_or_else(|| path.with_extension("profile"));
        let profile = Profile::parse(&read(&profile_path)?)
            .map_err(|e| diag(format!("{}: {e}", profile_path.display())))?;
        let program = parse_source(&text).map_err(|e| diag(e.to_diagnostic().render(&file)))?;
        let image = Arc::new(Image::build(&program, &profile, args.layout_seed).map_err(|e| diag(e.to_string()))?);
        (image.clone(), image)
    } else {
        let program = checked(path, &text)?;
        let t = transform(&program).map_err(|e| diag(format!("{file}:{e}")))?;
        let image = Arc::new(Image::from_transformed(&t, args.layout_seed).map_err(|e| diag(e.to_string()))?);
        let baseline = Image::build(&strip_directives(&program), &Profile::default(), args.layout_seed)
            .map_err(|e| diag(e.to_string()))?;
        (image, Arc::new(baseline))
    };
    Ok(Loaded { image, baseline, inputs: overrides, check: Box::new(ExactOutput) })
}

fn cmd_translate(source: &Path, out: &Path, no_rolex: bool) -> Result<()> {
    let text = read(source)?;
    let file = source.display().to_string();
    let (program, profile) = if no_rolex {
        let program = parse_source(&text).map_err(|e| diag(e.to_diagnostic().render(&file)))?;
        (strip_directives(&program), Profile::default())
    } else {
        let t = transform(&checked(source, &text)?).map_err(|e| diag(format!("{file}:{e}")))?;
        (t.program, t.profile)
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stem = stem(source)?;
    let rcx = out.join(format!("{stem}.rcx"));
    let prof = out.join(format!("{stem}.profile"));
    write_atomic(&rcx, &print_program(&program)).with_context(|| format!("writing {}", rcx.display()))?;
    write_atomic(&prof, &profile.to_text()).with_context(|| format!("writing {}", prof.display()))?;
    println!("{}\n{}", rcx.display(), prof.display());
    Ok(())
}

fn cmd_run(args: &ProgramArgs) -> Result<()> {
    let l = load(args)?;
    let mut vm = Vm::new(l.image, VmConfig::default(), &l.inputs);
    vm.run();
    let r = vm.result();
    print!("{}", r.output);
    eprintln!("status {}  steps {}", r.status, r.steps);
    match r.status {
        Status::CompletedOk => Ok(()),
        other => Err(diag(format!("program did not complete: {other}"))),
    }
}

fn parse_target(addr: Option<&str>, target: Option<&str>) -> Result<Target> {
    if let Some(a) = addr {
        let v = match a.strip_prefix("0x").or_else(|| a.strip_prefix("0X")) {
            Some(hex) => u64::from_str_radix(hex, 16),
            None => a.parse(),
        };
        return v.map(Target::Address).map_err(|_| diag(format!("bad address '{a}'")));
    }
    let t = target.expect("clap requires an address or a target");
    let (name, offset) = match t.rsplit_once('+') {
        Some((n, o)) => (n, o.parse().map_err(|_| diag(format!("bad offset in '{t}'")))?),
        None => (t, 0),
    };
    Ok(Target::Construct { name: name.to_string(), offset })
}

#[allow(clippy::too_many_arguments)]
fn cmd_inject(
    args: &ProgramArgs,
    addr: Option<&str>,
    target: Option<&str>,
    bit: u8,
    mode: &str,
    step: Option<u64>,
    show_output: bool,
) -> Result<()> {
    let mode = Mode::parse(mode).ok_or_else(|| diag(format!("unknown mode '{mode}' (detected or silent)")))?;
    let target = parse_target(addr, target)?;
    let l = load(args)?;
    let config = VmConfig::default();
    let golden =
        golden_run(&l.image, &l.baseline, &l.inputs, config).map_err(|e| diag(format!("golden run failed: {e}")))?;
    let step = step.unwrap_or(golden.steps / 2);
    let outcome = inject_targeted(&l.image, &l.inputs, config, &golden, step, &target, bit, mode, l.check.as_ref())
        .map_err(|e| diag(e.to_string()))?;
    for f in &outcome.faults {
        println!("fault    {f} ({})", f.mode.name());
    }
    if outcome.actions.is_empty() {
        println!("action   none");
    }
    for a in &outcome.actions {
        println!("action   {a}");
    }
    println!("status   {}", outcome.result.status);
    println!("outcome  {}", outcome.classification.name());
    println!(
        "steps    {} (golden {}, baseline {})  efficiency {}",
        outcome.steps,
        golden.steps,
        golden.baseline_steps,
        outcome.efficiency.map_or("-".to_string(), |e| format!("{e:.4}"))
    );
    if show_output {
        print!("{}", outcome.result.output);
    }
    Ok(())
}

fn cmd_campaign(
    path: &Path,
    out: &Path,
    seed: Option<u64>,
    runs: Option<usize>,
    threads: Option<usize>,
) -> Result<()> {
    let text = read(path)?;
    let mut cfg = parse_config(&text).map_err(|e| diag(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = runs {
        if r == 0 {
            return Err(diag("--runs must be positive"));
        }
        cfg.runs_per_rate = r;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    let spec = find(&cfg.kernel).map_err(kernel_error)?;
    let p = spec.prepare(cfg.layout_seed).map_err(kernel_error)?;
    let inputs = cfg.inputs.clone().unwrap_or_else(|| spec.inputs.clone());
    let config = VmConfig::default();
    let golden = golden_run(&p.image, &p.baseline, &inputs, config)
        .map_err(|e| diag(format!("{}: golden run failed: {e}", cfg.kernel)))?;
    let report = campaign(&p.image, &inputs, config, &golden, &spec.bound, &cfg);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let runs_path = out.join(format!("{}-runs.csv", cfg.kernel));
    let summary_path = out.join(format!("{}-summary.csv", cfg.kernel));
    write_atomic(&runs_path, &report.runs_csv()).with_context(|| format!("writing {}", runs_path.display()))?;
    write_atomic(&summary_path, &report.summary_csv())
        .with_context(|| format!("writing {}", summary_path.display()))?;
    print!("{}", report.table());
    println!("wrote {} and {}", runs_path.display(), summary_path.display());
    Ok(())
}

fn cmd_report(csv: &Path, summary_out: Option<&Path>) -> Result<()> {
    let rows = parse_runs_csv(&read(csv)?).map_err(|e| diag(format!("{}: {e}", csv.display())))?;
    let summary = summarize(&rows);
    print!("{}", summary_table(&summary));
    if let Some(path) = summary_out {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for r in &summary {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        write_atomic(path, &s).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_corpus(export: Option<&Path>) -> Result<()> {
    let specs = corpus();
    for k in &specs {
        let constructs: Vec<&str> = k.constructs.iter().map(|c| c.name()).collect();
        println!(
            "{:<18} {:<20} mode {:<8} bound {:<14} {}",
            k.name,
            k.source_path,
            k.mode.name(),
            k.bound.to_string(),
            constructs.join(",")
        );
    }
    if let Some(dir) = export {
        let kdir = dir.join("kernels");
        fs::create_dir_all(&kdir).with_context(|| format!("creating {}", kdir.display()))?;
        for (name, source) in kernels::SOURCES {
            let path = kdir.join(name);
            write_atomic(&path, source).with_context(|| format!("writing {}", path.display()))?;
        }
        let manifest = kdir.join("manifest.conf");
        write_atomic(&manifest, MANIFEST).with_context(|| format!("writing {}", manifest.display()))?;
        println!("exported to {}", kdir.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Translate { source, out, no_rolex } => cmd_translate(&source, &out, no_rolex),
        Command::Run { program } => cmd_run(&program),
        Command::Inject { program, addr, target, bit, mode, step, show_output } => {
            cmd_inject(&program, addr.as_deref(), target.as_deref(), bit, &mode, step, show_output)
        }
        Command::Campaign { config, out, seed, runs, threads } => cmd_campaign(&config, &out, seed, runs, threads),
        Command::Report { csv, summary } => cmd_report(&csv, summary.as_deref()),
        Command::Corpus { export } => cmd_corpus(export.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<Diagnostics>() {
            Some(d) => {
                eprintln!("{d}");
                ExitCode::from(1)
            }
            None => {
                eprintln!("internal error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}
