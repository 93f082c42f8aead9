use super::*;
use crate::frontend::check_source;
use crate::transform::{strip_directives, transform, Profile};

struct AcceptAll;

impl OutputCheck for AcceptAll {
    fn accepts(&self, _: &str, _: &str) -> bool {
        true
    }
}

fn images(src: &str) -> (Arc<Image>, Arc<Image>) {
    let p = check_source(src).unwrap();
    let t = transform(&p).unwrap();
    let img = Arc::new(Image::from_transformed(&t, 0).unwrap());
    let base = Arc::new(Image::build(&strip_directives(&p), &Profile::default(), 0).unwrap());
    (img, base)
}

fn golden_of(img: &Arc<Image>, base: &Arc<Image>) -> Golden {
    golden_run(img, base, &[], VmConfig::default()).unwrap()
}

const TOY: &str = "tolerant int t[8];\nint u[4];\nint main() {\n int i; int s = 0;\n\
    for (i = 0; i < 8; i = i + 1) { t[i] = i; }\n\
    for (i = 0; i < 4; i = i + 1) { u[i] = i; }\n\
    for (i = 0; i < 8; i = i + 1) { s = s + t[i]; }\n print(s);\n return 0;\n}";

const COUNTER: &str = "int dead[16];\nint live;\nrobust(CORRECT) int r;\nint main() {\n int i;\n live = 0; r = 0;\n\
    for (i = 0; i < 200; i = i + 1) { live = live + 1; r = r + 1; }\n print(live, r);\n return 0;\n}";

#[test]
fn interval_windows_bound_fault_count() {
    let golden = 20_000;
    for (interval, expect) in [(1.0, 20), (2.0, 10), (5.0, 4), (10.0, 2)] {
        for seed in 0..20 {
            let s = FaultSchedule {
                mode: Mode::Detected,
                timing: Timing::Interval { interval, scale: golden / 20 },
                selector: SiteSelector::UniformRandom,
                seed,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = s.fault_steps(golden, &mut rng);
            assert_eq!(t.len(), expect);
            assert_eq!(s.max_faults(golden), expect);
            assert!(t.windows(2).all(|w| w[0] < w[1]));
        }
    }
    let s = FaultSchedule {
        mode: Mode::Detected,
        timing: Timing::Interval { interval: 15.0, scale: 1000 },
        selector: SiteSelector::UniformRandom,
        seed: 0,
    };
    let counts: Vec<usize> =
        (0..200).map(|seed| s.fault_steps(golden, &mut ChaCha8Rng::seed_from_u64(seed)).len()).collect();
    assert!(counts.iter().all(|&c| c == 1 || c == 2));
    assert!(counts.contains(&1) && counts.contains(&2));
}

#[test]
fn exact_schedule_has_k_distinct_steps() {
    let s = FaultSchedule { mode: Mode::Silent, timing: Timing::Exact(4), selector: SiteSelector::UniformRandom, seed: 9 };
    let t = s.fault_steps(100, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(t.len(), 4);
    assert!(t.windows(2).all(|w| w[0] < w[1]) && t[3] < 100);
}

#[test]
fn efficiency_arithmetic() {
    assert_eq!(efficiency_of(true, 1000, 1250), Some(0.8));
    assert_eq!(efficiency_of(true, 1000, 1000), Some(1.0));
    assert_eq!(efficiency_of(false, 1000, 10), None);
}

#[test]
fn golden_run_is_deterministic_and_counts_overhead() {
    let (img, base) = images(COUNTER);
    let a = golden_of(&img, &base);
    assert_eq!(a, golden_of(&img, &base));
    assert_eq!(a.output, "200 200\n");
    assert!(a.steps > a.baseline_steps);
}

/// Every (byte, bit) site of the toy's injectable space, hit once.
#[test]
fn single_fault_enumeration_matches_coverage() {
    let (img, base) = images(TOY);
    let golden = golden_of(&img, &base);
    let vm = Vm::new(img.clone(), VmConfig::default(), &[]);
    let ranges = vm.injectable_ranges();
    let total: u64 = ranges.iter().map(|r| r.1).sum();
    assert_eq!(total, 48);
    let mut survived = 0;
    let mut runs = 0;
    for &(a, l, _) in &ranges {
        for addr in a..a + l {
            for bit in 0..8 {
                let plan = [PlannedFault { step: 5, addr, bit }];
                let o = inject_planned(&img, &[], VmConfig::default(), &golden, &plan, Mode::Detected, &AcceptAll);
                runs += 1;
                survived += o.classification.survived() as usize;
            }
        }
    }
    assert_eq!(runs, 384);
    assert_eq!(survived * 3, runs * 2);
}

#[test]
fn double_fault_enumeration_matches_coverage_squared() {
    let (img, base) = images(TOY);
    let golden = golden_of(&img, &base);
    let vm = Vm::new(img.clone(), VmConfig::default(), &[]);
    let bytes: Vec<u64> = vm.injectable_ranges().iter().flat_map(|&(a, l, _)| a..a + l).collect();
    let mut survived = 0;
    for &x in &bytes {
        for &y in &bytes {
            let plan = [PlannedFault { step: 3, addr: x, bit: 1 }, PlannedFault { step: 40, addr: y, bit: 6 }];
            let o = inject_planned(&img, &[], VmConfig::default(), &golden, &plan, Mode::Detected, &AcceptAll);
            survived += o.classification.survived() as usize;
        }
    }
    assert_eq!(survived * 9, bytes.len() * bytes.len() * 4);
}

#[test]
fn classification_paths() {
    let (img, base) = images(COUNTER);
    let golden = golden_of(&img, &base);
    let vm = Vm::new(img.clone(), VmConfig::default(), &[]);
    let addr = |n: &str| vm.global(n).unwrap().0;
    let run = |name: &str, bit: u8, mode: Mode| {
        let plan = [PlannedFault { step: 50, addr: addr(name), bit }];
        inject_planned(&img, &[], VmConfig::default(), &golden, &plan, mode, &ExactOutput)
    };
    assert_eq!(run("dead", 0, Mode::Detected).classification, Classification::TerminatedGraceful);
    assert_eq!(run("dead", 0, Mode::Silent).classification, Classification::Benign);
    assert_eq!(run("live", 2, Mode::Silent).classification, Classification::SilentWrong);
    let tmr = run("r__r1", 2, Mode::Detected);
    assert_eq!(tmr.classification, Classification::DetectedCorrected);
    assert_eq!(tmr.faults[0].construct.as_deref(), Some("r"));
    let no_fault = inject_planned(&img, &[], VmConfig::default(), &golden, &[], Mode::Detected, &ExactOutput);
    assert_eq!(no_fault.classification, Classification::CompletedCorrect);
    assert_eq!(no_fault.efficiency, Some(golden.baseline_steps as f64 / golden.steps as f64));
    assert!(run("dead", 0, Mode::Detected).efficiency.is_none());
}

#[test]
fn modes_control_notifications() {
    let (img, base) = images(COUNTER);
    let golden = golden_of(&img, &base);
    for mode in [Mode::Detected, Mode::Silent] {
        for seed in 0..30 {
            let s = FaultSchedule { mode, timing: Timing::Exact(2), selector: SiteSelector::UniformRandom, seed };
            let o = inject_run(&img, &[], VmConfig::default(), &golden, &s, &ExactOutput);
            let n = o.result.stats.notifications as usize;
            match mode {
                Mode::Silent => assert_eq!(n, 0),
                Mode::Detected => assert_eq!(n, o.faults.len()),
            }
            assert_eq!(o, inject_run(&img, &[], VmConfig::default(), &golden, &s, &ExactOutput));
        }
    }
}

#[test]
fn targeted_selectors_stay_inside_target() {
    let (img, base) = images(COUNTER);
    let golden = golden_of(&img, &base);
    let s = |selector| FaultSchedule { mode: Mode::Detected, timing: Timing::Exact(1), selector, seed: 3 };
    for seed in 0..20 {
        let o = inject_run(
            &img,
            &[],
            VmConfig::default(),
            &golden,
            &FaultSchedule { seed, ..s(SiteSelector::TargetConstruct("r".into())) },
            &ExactOutput,
        );
        assert_eq!(o.faults[0].construct.as_deref(), Some("r"));
        assert_eq!(o.classification, Classification::DetectedCorrected);
    }
    let o = inject_run(&img, &[], VmConfig::default(), &golden, &s(SiteSelector::TargetSegment(SegmentKind::Heap)), &ExactOutput);
    assert!(o.faults.is_empty());
}

#[test]
fn config_parses_and_round_trips() {
    let c = parse_config(
        "# campaign\nkernel = toy\nrates = 15, 10, 5\nruns_per_rate = 7\nmode = detected, silent\n\
         seed = 42\nscale = 500\nselector = segment:heap\ninput = 3, 2.5\n",
    )
    .unwrap();
    assert_eq!(c.rates, vec![15.0, 10.0, 5.0]);
    assert_eq!(c.modes, vec![Mode::Detected, Mode::Silent]);
    assert_eq!(c.selector, SiteSelector::TargetSegment(SegmentKind::Heap));
    assert_eq!(c.inputs, Some(vec![Val::I32(3), Val::F64(2.5)]));
    assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    assert!(matches!(parse_config("rates = 1"), Err(ConfigError::Missing("kernel"))));
    assert!(matches!(parse_config("kernel = a\nbogus = 1"), Err(ConfigError::UnknownKey { line: 2, .. })));
    assert!(matches!(parse_config("kernel = a\nruns_per_rate = 0"), Err(ConfigError::Value { .. })));
    assert!(matches!(parse_config("kernel"), Err(ConfigError::Syntax(1))));
}

#[test]
fn seeds_depend_on_grid_position() {
    let mut seen = std::collections::HashSet::new();
    for cell in 0..5 {
        for run in 0..200 {
            assert!(seen.insert(derive_seed(7, cell, run)));
        }
    }
    assert_eq!(derive_seed(7, 2, 3), derive_seed(7, 2, 3));
    assert_ne!(derive_seed(7, 2, 3), derive_seed(8, 2, 3));
}

#[test]
fn campaign_is_independent_of_thread_count() {
    let (img, base) = images(COUNTER);
    let golden = golden_of(&img, &base);
    let mut cfg = CampaignConfig { kernel: "counter".into(), runs_per_rate: 25, ..CampaignConfig::default() };
    cfg.modes = vec![Mode::Detected, Mode::Silent];
    cfg.threads = 1;
    let a = campaign(&img, &[], VmConfig::default(), &golden, &ExactOutput, &cfg);
    cfg.threads = 3;
    let b = campaign(&img, &[], VmConfig::default(), &golden, &ExactOutput, &cfg);
    assert_eq!(a.runs_csv(), b.runs_csv());
    assert_eq!(a.summary_csv(), b.summary_csv());
    assert_eq!(a.rows.len(), 250);
    assert_eq!(a.summary.len(), 10);
    assert_eq!(summarize(&a.rows), a.summary);
    assert!(a.runs_csv().starts_with(CSV_HEADER));
    for s in &a.summary {
        assert_eq!(s.counts.iter().sum::<usize>(), s.runs);
    }
}

#[test]
fn single_run_per_rate_gives_one_row_each() {
    let (img, base) = images(COUNTER);
    let golden = golden_of(&img, &base);
    let cfg = CampaignConfig { kernel: "counter".into(), runs_per_rate: 1, ..CampaignConfig::default() };
    let r = campaign(&img, &[], VmConfig::default(), &golden, &ExactOutput, &cfg);
    assert_eq!(r.summary.len(), 5);
    assert_eq!(r.summary_csv().lines().count(), 6);
}

#[test]
fn atomic_write_replaces_file() {
    let dir = std::env::temp_dir().join(format!("rolex-atomic-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("out.csv");
    write_atomic(&p, "a\n").unwrap();
    write_atomic(&p, "b\n").unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "b\n");
    assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 1);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn runs_csv_parses_back_to_the_same_rows() {
    let (img, base) = images(COUNTER);
    let golden = golden_of(&img, &base);
    let cfg = CampaignConfig { kernel: "counter".into(), runs_per_rate: 6, ..CampaignConfig::default() };
    let rep = campaign(&img, &[], VmConfig::default(), &golden, &ExactOutput, &cfg);
    let rows = parse_runs_csv(&rep.runs_csv()).unwrap();
    assert_eq!(rows.len(), rep.rows.len());
    for (a, b) in rows.iter().zip(&rep.rows) {
        assert_eq!(a.csv_line(), b.csv_line());
    }
    assert_eq!(summarize(&rows).iter().map(|s| s.csv_line()).collect::<Vec<_>>(),
        rep.summary.iter().map(|s| s.csv_line()).collect::<Vec<_>>());
    assert!(parse_runs_csv("").is_err());
    assert!(parse_runs_csv("a,b\n").is_err());
    assert!(parse_runs_csv(&format!("{CSV_HEADER}\n1,15,3,detected,2,benign,9,,x\n")).is_err());
}

#[test]
fn targeted_injection_resolves_and_validates_sites() {
    let (img, base) = images(COUNTER);
    let golden = golden_of(&img, &base);
    let vm = Vm::new(img.clone(), VmConfig::default(), &[]);
    let inject = |t: Target, bit: u8, mode: Mode| {
        inject_targeted(&img, &[], VmConfig::default(), &golden, 50, &t, bit, mode, &ExactOutput)
    };
    let tmr = inject(Target::Construct { name: "r".into(), offset: 4 }, 1, Mode::Detected).unwrap();
    assert_eq!(tmr.classification, Classification::DetectedCorrected);
    assert_eq!(tmr.actions.len(), 1);
    assert_eq!(tmr.actions[0].kind, crate::runtime::ActionKind::VoteCorrect);
    let dead = inject(Target::Address(vm.global("dead").unwrap().0), 0, Mode::Detected).unwrap();
    assert_eq!(dead.classification, Classification::TerminatedGraceful);
    assert_eq!(dead.actions[0].kind, crate::runtime::ActionKind::GracefulTerminate);
    assert!(matches!(inject(Target::Address(0x10), 0, Mode::Silent), Err(TargetError::NotInjectable(0x10, 50))));
    assert!(matches!(inject(Target::Address(0x10000), 64, Mode::Silent), Err(TargetError::Bit(64))));
    let live = vm.global("live").unwrap().0;
    let wide = inject(Target::Address(live), 20, Mode::Silent).unwrap();
    assert_eq!((wide.faults[0].addr, wide.faults[0].bit), (live + 2, 4));
    assert!(matches!(
        inject(Target::Construct { name: "live".into(), offset: 0 }, 33, Mode::Silent),
        Err(TargetError::Offset { offset: 4, .. })
    ));
    assert!(matches!(
        inject(Target::Construct { name: "nothing".into(), offset: 0 }, 0, Mode::Silent),
        Err(TargetError::UnknownConstruct(..))
    ));
    assert!(matches!(
        inject(Target::Construct { name: "live".into(), offset: 4 }, 0, Mode::Silent),
        Err(TargetError::Offset { len: 4, .. })
    ));
    let late = inject_targeted(&img, &[], VmConfig::default(), &golden, golden.steps + 10, &Target::Address(0), 0, Mode::Silent, &ExactOutput);
    assert!(matches!(late, Err(TargetError::Stopped(_))));
}
