use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const COUNTER: &str = "tolerant(MAXIMUS = 1000) int count;\nint plain;\nint main() {\n    int i;\n    count = 0; plain = 0;\n\
    for (i = 0; i < 500; i = i + 1) {\n        count = (count + 1) % 1000;\n        plain = plain + 1;\n    }\n\
    print(count, plain);\n    return 0;\n}\n";

const PRAGMAS: &str = "int data[8];\nint total;\n\n#pragma rolex declare resilient retry\nint sum(int n) {\n    int i; int s = 0;\n\
    for (i = 0; i < n; i = i + 1) { s = s + data[i]; }\n    return s;\n}\n\nint main() {\n    int i;\n\
    for (i = 0; i < 8; i = i + 1) { data[i] = i * i; }\n\
    #pragma rolex robust CORRECT private(i) compare(total)\n    {\n        total = sum(8);\n    }\n\
    print(total);\n    return 0;\n}\n";

fn rolex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rolex")).current_dir(dir).args(args).output().expect("spawn rolex")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines().find_map(|l| l.strip_prefix(key)).map(str::trim).unwrap_or_else(|| panic!("no {key} in\n{out}"))
}

fn with_file(name: &str, text: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join(name), text).unwrap();
    dir
}

#[test]
fn tolerant_counter_high_bit_is_mask_reset() {
    let dir = with_file("counter.rc", COUNTER);
    let o = rolex(dir.path(), &["inject", "counter.rc", "--target", "count", "--bit", "20", "--mode", "detected"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(field(&out, "fault").ends_with("=count (detected)"), "{out}");
    assert_eq!(field(&out, "action"), "MaskReset count");
    assert_eq!(field(&out, "outcome"), "completed_correct");
}

#[test]
fn unregistered_global_terminates_gracefully() {
    let dir = with_file("counter.rc", COUNTER);
    let o = rolex(dir.path(), &["inject", "counter.rc", "--target", "plain", "--bit", "3", "--step", "2000"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert_eq!(field(&out, "action"), "GracefulTerminate");
    assert_eq!(field(&out, "outcome"), "terminated_graceful");
}

#[test]
fn silent_replica_fault_is_repaired_by_validation() {
    let dir = TempDir::new().unwrap();
    let o = rolex(
        dir.path(),
        &["inject", "--kernel", "bfs-robust", "--target", "offsets__r1", "--bit", "3", "--mode", "silent"],
    );
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert_eq!(field(&out, "action"), "none");
    assert_eq!(field(&out, "outcome"), "detected_corrected");
}

#[test]
fn address_outside_injectable_segments_exits_one() {
    let dir = with_file("counter.rc", COUNTER);
    let o = rolex(dir.path(), &["inject", "counter.rc", "--addr", "0x10", "--bit", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not in an injectable segment"));
}

#[test]
fn campaign_with_fixed_seed_is_reproducible() {
    let dir = with_file("ra.conf", "kernel = randomaccess-lite\nrates = 15, 10, 5, 2, 1\nruns_per_rate = 12\n");
    for (out, threads) in [("a", "1"), ("b", "2")] {
        let o = rolex(dir.path(), &["campaign", "ra.conf", "--out", out, "--seed", "42", "--threads", threads]);
        assert!(o.status.success(), "{o:?}");
    }
    for f in ["randomaccess-lite-runs.csv", "randomaccess-lite-summary.csv"] {
        let a = fs::read_to_string(dir.path().join("a").join(f)).unwrap();
        let b = fs::read_to_string(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let summary = fs::read_to_string(dir.path().join("a/randomaccess-lite-summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
    let runs = fs::read_to_string(dir.path().join("a/randomaccess-lite-runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 61);

    let o = rolex(dir.path(), &["report", "a/randomaccess-lite-runs.csv", "--summary", "re.csv"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(fs::read_to_string(dir.path().join("re.csv")).unwrap(), summary);
}

#[test]
fn unknown_kernel_exits_one() {
    let dir = with_file("x.conf", "kernel = no-such-kernel\n");
    let o = rolex(dir.path(), &["campaign", "x.conf"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-kernel"));
    let o = rolex(dir.path(), &["run", "--kernel", "no-such-kernel"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_source_exits_one_with_a_positioned_diagnostic() {
    let dir = with_file("bad.rc", "int main() {\n    int x = ;\n}\n");
    let o = rolex(dir.path(), &["translate", "bad.rc"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.rc:2:"), "{err}");
    assert!(!dir.path().join("bad.rcx").exists());
}

#[test]
fn no_rolex_output_is_the_input_without_pragmas() {
    let dir = with_file("p.rc", PRAGMAS);
    let stripped: String = PRAGMAS.lines().filter(|l| !l.trim_start().starts_with("#pragma")).map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("plain.rc"), stripped).unwrap();
    for (src, out) in [("p.rc", "x"), ("plain.rc", "y")] {
        let o = rolex(dir.path(), &["translate", "--no-rolex", src, "-o", out]);
        assert!(o.status.success(), "{o:?}");
    }
    let a = fs::read_to_string(dir.path().join("x/p.rcx")).unwrap();
    let b = fs::read_to_string(dir.path().join("y/plain.rcx")).unwrap();
    assert_eq!(a, b);
    assert!(!a.contains("pragma"));
}

#[test]
fn translate_then_run_reproduces_the_untransformed_output() {
    let dir = TempDir::new().unwrap();
    assert!(rolex(dir.path(), &["corpus", "--export", "."]).status.success());
    let manifest = fs::read_to_string(dir.path().join("kernels/manifest.conf")).unwrap();
    for line in manifest.lines().filter(|l| l.contains(".source")) {
        let (key, file) = line.split_once('=').unwrap();
        let kernel = key.trim().trim_end_matches(".source");
        let src = format!("kernels/{}", file.trim().trim_start_matches("kernels/"));
        let stem = Path::new(&src).file_stem().unwrap().to_str().unwrap().to_string();
        assert!(rolex(dir.path(), &["translate", &src, "-o", "t"]).status.success(), "{kernel}");
        assert!(rolex(dir.path(), &["translate", "--no-rolex", &src, "-o", "n"]).status.success(), "{kernel}");
        let inputs: Vec<String> = manifest
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{kernel}.input")))
            .map(|v| v.trim_start().trim_start_matches('=').split_whitespace().map(|s| format!("--input={s}")).collect())
            .unwrap_or_default();
        let run = |p: String| {
            let mut args = vec!["run".to_string(), p];
            args.extend(inputs.iter().cloned());
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let o = rolex(dir.path(), &args);
            assert!(o.status.success(), "{kernel}: {o:?}");
            stdout(&o)
        };
        let transformed = run(format!("t/{stem}.rcx"));
        let plain = run(format!("n/{stem}.rcx"));
        assert_eq!(transformed, plain, "{kernel}");
        assert!(!plain.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(rolex(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(rolex(dir.path(), &["inject", "--kernel", "md-lite"]).status.code(), Some(1));
    assert!(rolex(dir.path(), &["--help"]).status.success());
}
