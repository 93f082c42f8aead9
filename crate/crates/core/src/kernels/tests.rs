use super::*;
use crate::injector::coverage_at;

fn lines(rows: usize, bad: usize) -> (String, String) {
    let golden: Vec<String> = (0..rows).map(|i| format!("{i} {}", i * 2)).collect();
    let mut out = golden.clone();
    for row in out.iter_mut().take(bad) {
        *row = format!("{row}0").replacen(' ', " 1", 1);
    }
    (out.join("\n"), golden.join("\n"))
}

#[test]
fn corpus_lists_the_eight_kernels() {
    let names: Vec<String> = corpus().into_iter().map(|k| k.name).collect();
    assert_eq!(
        names,
        [
            "randomaccess-lite",
            "render-lite",
            "md-lite",
            "bfs-robust",
            "dgemm-chk",
            "cg-ameliorate",
            "sscg",
            "declare-demo"
        ]
    );
    assert!(matches!(find("nope"), Err(KernelError::Unknown(_))));
}

#[test]
fn claimed_constructs_match_sources_and_cover_every_family() {
    let mut all = std::collections::BTreeSet::new();
    for k in corpus() {
        let mut claimed = k.constructs.clone();
        claimed.sort();
        let mut found = k.constructs_in_source();
        found.sort();
        assert_eq!(claimed, found, "{}", k.name);
        all.extend(claimed);
    }
    assert_eq!(all.into_iter().collect::<Vec<_>>(), Construct::ALL.to_vec());
}

#[test]
fn every_kernel_prepares_and_runs_transparently() {
    for k in corpus() {
        let p = k.prepare(0).unwrap();
        let g = p.golden(VmConfig::default()).unwrap();
        let base = golden_run(&p.baseline, &p.baseline, &k.inputs, VmConfig::default()).unwrap();
        assert_eq!(g.output, base.output, "{}", k.name);
        assert!(k.bound.accepts(&g.output, &g.output), "{}", k.name);
        assert!((20_000..=60_000).contains(&g.steps), "{}: {}", k.name, g.steps);
    }
}

#[test]
fn pixel_bound_threshold() {
    let golden: Vec<String> = (0..100).map(|i| i.to_string()).collect();
    let perturb = |n: usize| {
        let mut v = golden.clone();
        for x in v.iter_mut().take(n) {
            *x = (x.parse::<i32>().unwrap() + 100).to_string();
        }
        v.join(" ")
    };
    let b = Bound::Pixels { threshold: 8.0, max_fraction: 0.05 };
    let g = golden.join(" ");
    assert!(b.accepts(&perturb(3), &g));
    assert!(!b.accepts(&perturb(7), &g));
    assert!(!b.accepts(&perturb(5), &g));
    let mut small = golden.clone();
    small[0] = "8".into();
    assert!(b.accepts(&small.join(" "), &g));
}

#[test]
fn exact_bound_rejects_a_transposed_visit() {
    let golden = "0 0\n3 1\n5 1\nvisited 3\n";
    assert!(Bound::Exact.accepts(golden, golden));
    assert!(!Bound::Exact.accepts("0 0\n5 1\n3 1\nvisited 3\n", golden));
}

#[test]
fn table_bound_counts_mismatches() {
    let b = Bound::Table { max_fraction: 0.01 };
    let (one, g) = lines(100, 1);
    assert_eq!(Bound::deviating_fraction(&one, &g, 0.0), Some(0.005));
    assert!(b.accepts(&one, &g));
    let (three, g) = lines(100, 3);
    assert!(!b.accepts(&three, &g));
    assert!(!b.accepts("1 2", "1 2 3"));
    assert!(!b.accepts("x", "1"));
}

#[test]
fn energy_and_residual_bounds() {
    let e = Bound::Energy { rel: 0.05 };
    assert!(e.accepts("initial 1\nenergy 1.04\n", "initial 1\nenergy 1.0\n"));
    assert!(!e.accepts("energy 1.06\n", "energy 1.0\n"));
    assert!(!e.accepts("energy NaN\n", "energy 1.0\n"));
    assert!(!e.accepts("", "energy 1.0\n"));
    let r = Bound::Residual { tol: 1e-6 };
    assert!(r.accepts("iterations 9\nresidual 0.0000001\n", ""));
    assert!(!r.accepts("residual 0.01\n", ""));
    assert!(!r.accepts("residual NaN\n", ""));
}

#[test]
fn bound_text_round_trips() {
    for s in ["exact", "table 0.01", "pixels 8 0.05", "energy 0.05", "residual 0.000001"] {
        let b = Bound::parse(s).unwrap();
        assert_eq!(Bound::parse(&b.to_string()), Some(b), "{s}");
    }
    for s in ["", "table", "pixels 8", "energy -1", "exact 1", "bogus 1"] {
        assert!(Bound::parse(s).is_none(), "{s}");
    }
}

#[test]
fn manifest_errors_are_positioned() {
    assert!(matches!(parse_manifest("k.source = missing.rc"), Err(KernelError::Manifest { line: 1, .. })));
    assert!(matches!(parse_manifest("k.source = md.rc\nk.color = red"), Err(KernelError::Manifest { line: 2, .. })));
    assert!(matches!(parse_manifest("k.input = 3"), Err(KernelError::Manifest { line: 0, .. })));
    assert!(matches!(parse_manifest("nodot = 1"), Err(KernelError::Manifest { line: 1, .. })));
}

#[test]
fn randomaccess_table_dominates_injectable_space() {
    let k = find("randomaccess-lite").unwrap();
    let p = k.prepare(0).unwrap();
    let g = p.golden(VmConfig::default()).unwrap();
    let (by_class, total) = coverage_at(&p.image, &k.inputs, VmConfig::default(), g.steps / 2);
    let tolerant = by_class.iter().find(|(c, _)| c == "tolerant").map_or(0, |c| c.1);
    assert!(tolerant as f64 / total as f64 >= 0.5, "{by_class:?} of {total}");
    assert_eq!(tolerant, 2048 * 4);
}
