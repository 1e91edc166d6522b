//! Black-box tests of the `truncheck` binary: exit codes, JSON output,
//! and the reproduce and corpus subcommands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn truncheck(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_truncheck"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const NARROWING: &str = "\
    mov rbp, rsp
    read_i32 DWORD PTR [rbp-8]
    mov eax, DWORD PTR [rbp-8]
    mov WORD PTR [rbp-10], ax
    print WORD PTR [rbp-10]
    exit
";

const CLEAN: &str = "\
    mov rbp, rsp
    read_i32 DWORD PTR [rbp-8]
    mov eax, DWORD PTR [rbp-8]
    mov DWORD PTR [rbp-4], eax
    print DWORD PTR [rbp-4]
    exit
";

// the conversion site is reachable only with ax at or below 100, which
// forces the dropped byte to zero: a decidable contradiction
const UNSAT_SITE: &str = "\
    mov rbp, rsp
    read_u16 ax
    cmp ax, 100
    ja big
    cbw
    print ax
    exit

big:
    print 0
    exit
";

#[test]
fn run_prints_json_warning_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.s"), NARROWING).unwrap();
    fs::write(dir.path().join("seed.bin"), [100u8, 0, 0, 0]).unwrap();

    let out = truncheck(
        &["run", "p.s", "--input", "seed.bin", "--out", "w"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));

    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["insn"], 3);
    assert_eq!(v["kind"], "signed");
    assert_eq!(v["bits"], serde_json::json!([16, 31]));
    assert_eq!(v["verdict"], "sat");
    let witness = dir.path().join(v["input"].as_str().unwrap());
    assert!(witness.exists(), "witness file is written");
}

#[test]
fn run_is_silent_and_zero_on_clean_program() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.s"), CLEAN).unwrap();
    fs::write(dir.path().join("seed.bin"), [9u8, 0, 0, 0]).unwrap();

    let out = truncheck(
        &["run", "p.s", "--input", "seed.bin", "--out", "w"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).is_empty());
}

#[test]
fn verbose_run_lists_unsat_verdicts_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.s"), UNSAT_SITE).unwrap();
    fs::write(dir.path().join("seed.bin"), [5u8, 0]).unwrap();

    let quiet = truncheck(
        &["run", "p.s", "--input", "seed.bin", "--out", "w"],
        dir.path(),
    );
    assert_eq!(quiet.status.code(), Some(0));
    assert!(stdout(&quiet).is_empty());

    let verbose = truncheck(
        &["run", "p.s", "--input", "seed.bin", "--out", "w", "--verbose"],
        dir.path(),
    );
    assert_eq!(verbose.status.code(), Some(0));
    let text = stdout(&verbose);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["verdict"], "unsat");
    assert_eq!(v["input"], serde_json::Value::Null);
}

#[test]
fn undecided_job_exits_two_and_dumps_a_script() {
    // same contradiction, but over a 32-bit read whose space is far
    // beyond the tiny budget given here
    let src = "\
    mov rbp, rsp
    read_u32 DWORD PTR [rbp-8]
    mov eax, DWORD PTR [rbp-8]
    cmp eax, 16
    ja big
    mov WORD PTR [rbp-12], ax
    print WORD PTR [rbp-12]
    exit

big:
    print 0
    exit
";
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.s"), src).unwrap();
    fs::write(dir.path().join("seed.bin"), [5u8, 0, 0, 0]).unwrap();

    let out = truncheck(
        &[
            "run",
            "p.s",
            "--input",
            "seed.bin",
            "--out",
            "w",
            "--solver-budget",
            "1000",
            "--smt2-dir",
            "scripts",
            "--verbose",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["verdict"], "unknown");

    let scripts: Vec<_> = fs::read_dir(dir.path().join("scripts"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(scripts.len(), 1);
    let script = fs::read_to_string(&scripts[0]).unwrap();
    assert!(script.starts_with("(set-logic QF_BV)"));
    assert!(script.contains("(check-sat)"));
}

#[test]
fn reproduce_round_trip_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.s"), NARROWING).unwrap();
    fs::write(dir.path().join("seed.bin"), [100u8, 0, 0, 0]).unwrap();

    let run = truncheck(
        &["run", "p.s", "--input", "seed.bin", "--out", "w"],
        dir.path(),
    );
    let v: serde_json::Value =
        serde_json::from_str(stdout(&run).lines().next().unwrap()).unwrap();

    let ok = truncheck(
        &[
            "reproduce",
            "p.s",
            "--input",
            v["input"].as_str().unwrap(),
            "--insn",
            "3",
            "--kind",
            "signed",
            "--low",
            "16",
            "--high",
            "31",
        ],
        dir.path(),
    );
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).starts_with("triggered"));

    // the original seed stays in range, so the same spec does not trigger
    let benign = truncheck(
        &[
            "reproduce",
            "p.s",
            "--input",
            "seed.bin",
            "--insn",
            "3",
            "--kind",
            "signed",
            "--low",
            "16",
            "--high",
            "31",
        ],
        dir.path(),
    );
    assert_eq!(benign.status.code(), Some(1));
    assert!(stdout(&benign).starts_with("not triggered"));
}

#[test]
fn corpus_subcommand_scores_a_small_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("err.s"), NARROWING).unwrap();
    fs::write(dir.path().join("ok.s"), CLEAN).unwrap();
    fs::write(dir.path().join("seed.bin"), [100u8, 0, 0, 0]).unwrap();
    fs::write(
        dir.path().join("manifest.txt"),
        "err.s, seed.bin, expect=error, insns=3\nok.s, seed.bin, expect=clean\n",
    )
    .unwrap();

    let out = truncheck(&["corpus", "manifest.txt", "--out", "w"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("accuracy 1.00"));
    assert!(text.contains("1 TP, 1 TN, 0 FP, 0 FN"));
}

#[test]
fn usage_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = truncheck(&["run", "missing.s"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("missing.s"));
}
