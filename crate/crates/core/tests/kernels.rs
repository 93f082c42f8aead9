mod common;

use rolex_core::injector::{golden_run, OutputCheck};
use rolex_core::kernels::{corpus, find};
use rolex_core::vm::value::Val;
use rolex_core::vm::VmConfig;

fn run(name: &str, inputs: &[Val]) -> String {
    let k = find(name).unwrap();
    let p = k.prepare(0).unwrap();
    golden_run(&p.image, &p.image, inputs, VmConfig::default()).unwrap().output
}

#[test]
fn fault_free_outputs_match_references() {
    for k in corpus() {
        let out = run(&k.name, &k.inputs);
        common::agrees(&k.name, &k.inputs, &out).unwrap();
    }
}

#[test]
fn dgemm_eight_by_eight_is_the_exact_product() {
    let out = run("dgemm-chk", &[Val::I32(8)]);
    let (a, b) = common::dgemm_operands(8);
    let want: Vec<i32> = common::matmul(&a, &b).into_iter().flatten().collect();
    let got: Vec<i32> = out.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(got, want);
}

#[test]
fn cg_solves_the_two_by_two_system() {
    let out = run("cg-ameliorate", &[Val::I32(2)]);
    let x = common::solution_lines(&out);
    assert_eq!(x.len(), 2);
    assert!((x[0] - 1.0 / 11.0).abs() < 1e-6, "{out}");
    assert!((x[1] - 7.0 / 11.0).abs() < 1e-6, "{out}");
}

#[test]
fn md_without_steps_conserves_energy_exactly() {
    let out = run("md-lite", &[Val::I32(0)]);
    let vals: Vec<&str> = out.lines().map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    assert_eq!(vals.len(), 2);
    assert_eq!(vals[0], vals[1]);
}

#[test]
fn md_energy_drift_stays_inside_its_bound() {
    let (e0, e) = common::md(100);
    assert!((e - e0).abs() < 0.05 * e0);
}

#[test]
fn transformed_kernels_reproduce_untransformed_output() {
    for k in corpus() {
        let p = k.prepare(3).unwrap();
        let a = golden_run(&p.image, &p.baseline, &k.inputs, VmConfig::default()).unwrap();
        let b = golden_run(&p.baseline, &p.baseline, &k.inputs, VmConfig::default()).unwrap();
        assert_eq!(a.output, b.output, "{}", k.name);
        assert_eq!(a.baseline_steps, b.steps);
        assert!(k.bound.accepts(&a.output, &b.output));
    }
}

#[test]
fn golden_runs_are_repeatable() {
    let k = find("dgemm-chk").unwrap();
    let p = k.prepare(0).unwrap();
    let a = p.golden(VmConfig::default()).unwrap();
    let b = p.golden(VmConfig::default()).unwrap();
    assert_eq!(a, b);
}
