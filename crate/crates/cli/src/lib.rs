//! Command implementations behind the `truncheck` binary.
//!
//! Each subcommand lives here as a plain function returning the process
//! exit code, so integration tests can call the same logic the binary runs
//! without spawning a child process.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use truncheck_core::isa::parse_program;
use truncheck_core::{
    analyze, reproduce, AnalyzeOptions, EngineConfig, ReplaySpec, SolverConfig, TruncationKind,
};

/// Knobs shared by `run` and `corpus`.
#[derive(Debug, Clone)]
pub struct Settings {
    /// Candidate assignments the enumerating solver may try per job.
    pub solver_budget: u64,
    /// Worker threads for solving; `1` solves inline.
    pub solver_workers: usize,
    /// Executed-instruction cap per program run.
    pub step_limit: u64,
    /// Directory for witness input files.
    pub out_dir: PathBuf,
    /// Directory for SMT-LIB scripts of jobs the enumerator gives up on.
    pub smt2_dir: Option<PathBuf>,
    /// Also report unsat and unknown warnings, and print run statistics.
    pub verbose: bool,
}

impl Default for Settings {
    fn default() -> Settings {
        Settings {
            solver_budget: 1 << 20,
            solver_workers: 1,
            step_limit: 1_000_000,
            out_dir: PathBuf::from("truncheck-out"),
            smt2_dir: None,
            verbose: false,
        }
    }
}

impl Settings {
    fn analyze_options(&self, out_dir: &Path) -> AnalyzeOptions {
        AnalyzeOptions {
            engine: EngineConfig {
                step_limit: self.step_limit,
                ..EngineConfig::default()
            },
            solver: SolverConfig {
                budget: self.solver_budget,
                smt2_dir: self.smt2_dir.clone(),
            },
            workers: self.solver_workers,
            out_dir: Some(out_dir.to_path_buf()),
        }
    }
}

/// Parse the truncation kind argument of `reproduce`.
pub fn parse_kind(s: &str) -> Result<TruncationKind> {
    match s {
        "signed" => Ok(TruncationKind::Signed),
        "unsigned" => Ok(TruncationKind::Unsigned),
        other => bail!("unknown kind `{other}`, expected `signed` or `unsigned`"),
    }
}

fn read_seed(path: Option<&Path>) -> Result<Vec<u8>> {
    match path {
        Some(p) => fs::read(p).with_context(|| format!("reading input {}", p.display())),
        None => Ok(Vec::new()),
    }
}

fn load_program(path: &Path) -> Result<truncheck_core::isa::Program> {
    let src =
        fs::read_to_string(path).with_context(|| format!("reading program {}", path.display()))?;
    parse_program(&src).with_context(|| format!("parsing {}", path.display()))
}

/// Analyze one program and print its warnings as JSON lines.
///
/// Exit code: `1` when any warning is solver-confirmed, `2` when the run
/// was inconclusive (an unknown verdict, a trap, or the step limit), `0`
/// otherwise.
pub fn cmd_run(program: &Path, input: Option<&Path>, settings: &Settings) -> Result<i32> {
    let prog = load_program(program)?;
    let seed = read_seed(input)?;
    let analysis = analyze(&prog, &seed, &settings.analyze_options(&settings.out_dir))?;

    print!("{}", analysis.report.jsonl(settings.verbose));
    if settings.verbose {
        eprintln!(
            "steps={} sites={} jobs={} confirmed={}",
            analysis.outcome.steps,
            analysis.outcome.sites.len(),
            analysis.outcome.jobs.len(),
            analysis.report.sat_count(),
        );
        if let Some(trap) = &analysis.outcome.trap {
            eprintln!("trap: {trap}");
        }
        if analysis.outcome.hit_step_limit {
            eprintln!("stopped at step limit {}", settings.step_limit);
        }
    }

    let code = if analysis.report.sat_count() > 0 {
        1
    } else if analysis.report.has_unknown()
        || analysis.outcome.trap.is_some()
        || analysis.outcome.hit_step_limit
    {
        2
    } else {
        0
    };
    Ok(code)
}

/// Re-run a program concretely and check whether the named instruction
/// actually drops meaningful bits under this input.
///
/// Exit code: `0` when the truncation is observed, `1` otherwise.
pub fn cmd_reproduce(
    program: &Path,
    input: &Path,
    spec: &ReplaySpec,
    step_limit: u64,
) -> Result<i32> {
    let prog = load_program(program)?;
    let seed = fs::read(input).with_context(|| format!("reading input {}", input.display()))?;
    let outcome = reproduce(&prog, &seed, spec, step_limit);

    let dropped: Vec<String> = outcome
        .observations
        .iter()
        .map(|v| format!("{v:#x}"))
        .collect();
    match outcome.reason() {
        None => println!(
            "triggered: insn {} ({} bits {}..{}) dropped {}",
            spec.insn,
            spec.kind,
            spec.low,
            spec.high,
            dropped.join(", "),
        ),
        Some(reason) => println!(
            "not triggered: insn {} visited {} times ({})",
            spec.insn, outcome.visits, reason,
        ),
    }
    let prints: Vec<String> = outcome.prints.iter().map(|v| v.to_string()).collect();
    println!("prints: [{}]", prints.join(", "));

    Ok(if outcome.triggered { 0 } else { 1 })
}

/// What a corpus entry is expected to produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    /// Confirmed warnings exactly at these instruction indices.
    Error { insns: BTreeSet<usize> },
    /// No confirmed warnings at all.
    Clean,
}

/// One line of a corpus manifest, with paths resolved against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub program: PathBuf,
    pub seed: PathBuf,
    pub expect: Expectation,
}

impl ManifestEntry {
    /// Short case name used in the result table.
    pub fn name(&self) -> String {
        self.program
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.program.display().to_string())
    }
}

/// Parse a manifest. Each non-comment line reads
/// `program.s, seed.bin, expect=error, insns=3;5` or
/// `program.s, seed.bin, expect=clean`; relative paths are taken
/// relative to `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| anyhow::anyhow!("manifest line {}: {}", lineno + 1, msg);

        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(err(format!(
                "expected `program, seed, expect=...`, got `{line}`"
            )));
        }
        let program = base.join(fields[0]);
        let seed = base.join(fields[1]);

        let mut expect_field = None;
        let mut insns_field = None;
        for f in &fields[2..] {
            if let Some(v) = f.strip_prefix("expect=") {
                expect_field = Some(v);
            } else if let Some(v) = f.strip_prefix("insns=") {
                insns_field = Some(v);
            } else {
                return Err(err(format!("unknown field `{f}`")));
            }
        }
        let expect = match expect_field {
            Some("clean") => {
                if insns_field.is_some() {
                    return Err(err("`insns=` is only valid with expect=error".into()));
                }
                Expectation::Clean
            }
            Some("error") => {
                let spec = insns_field
                    .ok_or_else(|| err("expect=error needs an `insns=` field".into()))?;
                let mut insns = BTreeSet::new();
                for part in spec.split(';') {
                    let n: usize = part
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("bad instruction index `{part}`")))?;
                    insns.insert(n);
                }
                Expectation::Error { insns }
            }
            Some(other) => return Err(err(format!("unknown expectation `{other}`"))),
            None => return Err(err("missing `expect=` field".into())),
        };
        entries.push(ManifestEntry {
            program,
            seed,
            expect,
        });
    }
    if entries.is_empty() {
        bail!("manifest has no entries");
    }
    Ok(entries)
}

/// How one corpus case came out against its expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseClass {
    TruePositive,
    TrueNegative,
    FalsePositive,
    FalseNegative,
}

impl fmt::Display for CaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseClass::TruePositive => "TP",
            CaseClass::TrueNegative => "TN",
            CaseClass::FalsePositive => "FP",
            CaseClass::FalseNegative => "FN",
        };
        f.write_str(s)
    }
}

/// Decide a case's class from the confirmed warning set alone.
///
/// A warning at an instruction the expectation does not list is a false
/// positive no matter what else was found. Otherwise an error case needs
/// every listed instruction confirmed and every confirmed warning
/// reproduced on its witness input to count as a true positive.
pub fn classify_case(
    expect: &Expectation,
    sat_insns: &BTreeSet<usize>,
    all_reproduced: bool,
) -> CaseClass {
    match expect {
        Expectation::Clean => {
            if sat_insns.is_empty() {
                CaseClass::TrueNegative
            } else {
                CaseClass::FalsePositive
            }
        }
        Expectation::Error { insns } => {
            if sat_insns.iter().any(|i| !insns.contains(i)) {
                CaseClass::FalsePositive
            } else if sat_insns != insns {
                CaseClass::FalseNegative
            } else if all_reproduced {
                CaseClass::TruePositive
            } else {
                CaseClass::FalseNegative
            }
        }
    }
}

/// Result row of one corpus case.
#[derive(Debug)]
pub struct CaseResult {
    pub name: String,
    pub expect: Expectation,
    pub sat_insns: BTreeSet<usize>,
    pub class: CaseClass,
}

/// Run every manifest entry and classify it. Witness inputs land under
/// `out_dir/<case name>/`.
pub fn run_corpus(
    entries: &[ManifestEntry],
    settings: &Settings,
) -> Result<Vec<CaseResult>> {
    let mut results = Vec::new();
    for entry in entries {
        let prog = load_program(&entry.program)?;
        let seed = read_seed(Some(&entry.seed))?;
        let case_out = settings.out_dir.join(entry.name());
        let analysis = analyze(&prog, &seed, &settings.analyze_options(&case_out))?;

        let mut sat_insns = BTreeSet::new();
        let mut all_reproduced = true;
        for w in analysis.report.sat_warnings() {
            sat_insns.insert(w.insn);
            let witness = w
                .input_path
                .as_ref()
                .context("confirmed warning without a witness file")?;
            let bytes = fs::read(witness)
                .with_context(|| format!("reading witness {}", witness.display()))?;
            let spec = ReplaySpec {
                insn: w.insn,
                kind: w.kind,
                low: w.low,
                high: w.high,
            };
            let replay = reproduce(&prog, &bytes, &spec, settings.step_limit);
            if !replay.triggered {
                all_reproduced = false;
            }
        }

        let class = classify_case(&entry.expect, &sat_insns, all_reproduced);
        results.push(CaseResult {
            name: entry.name(),
            expect: entry.expect.clone(),
            sat_insns,
            class,
        });
    }
    Ok(results)
}

/// Counts and rates over a set of case results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
}

/// Tally case results into accuracy, true-positive rate over error cases,
/// and true-negative rate over clean cases. An empty denominator yields a
/// rate of 1.0.
pub fn corpus_stats(results: &[CaseResult]) -> CorpusStats {
    let count = |c: CaseClass| results.iter().filter(|r| r.class == c).count();
    let (tp, tn, fp, fn_) = (
        count(CaseClass::TruePositive),
        count(CaseClass::TrueNegative),
        count(CaseClass::FalsePositive),
        count(CaseClass::FalseNegative),
    );
    let rate = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    CorpusStats {
        tp,
        tn,
        fp,
        fn_,
        accuracy: rate(tp + tn, results.len()),
        tpr: rate(tp, tp + fn_),
        tnr: rate(tn, tn + fp),
    }
}

/// Run a whole corpus manifest and print a per-case table plus summary
/// rates.
///
/// Exit code: `0` when every case matches its expectation, `1` otherwise.
pub fn cmd_corpus(manifest: &Path, settings: &Settings) -> Result<i32> {
    let text = fs::read_to_string(manifest)
        .with_context(|| format!("reading manifest {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let entries = parse_manifest(&text, base)?;

    let started = Instant::now();
    let results = run_corpus(&entries, settings)?;
    let elapsed = started.elapsed();

    let name_width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let expect = match &r.expect {
            Expectation::Clean => "clean".to_string(),
            Expectation::Error { insns } => format!("error at {}", join_indices(insns)),
        };
        let found = if r.sat_insns.is_empty() {
            "none".to_string()
        } else {
            join_indices(&r.sat_insns)
        };
        println!(
            "{:<name_width$}  {}  expect {:<16} found {}",
            r.name, r.class, expect, found,
        );
    }

    let stats = corpus_stats(&results);
    println!(
        "{} cases in {:.2}s: {} TP, {} TN, {} FP, {} FN",
        results.len(),
        elapsed.as_secs_f64(),
        stats.tp,
        stats.tn,
        stats.fp,
        stats.fn_,
    );
    println!(
        "accuracy {:.2}  tpr {:.2}  tnr {:.2}",
        stats.accuracy, stats.tpr, stats.tnr,
    );

    Ok(if stats.fp == 0 && stats.fn_ == 0 { 0 } else { 1 })
}

fn join_indices(insns: &BTreeSet<usize>) -> String {
    let parts: Vec<String> = insns.iter().map(|i| i.to_string()).collect();
    parts.join(";")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn insns(list: &[usize]) -> BTreeSet<usize> {
        list.iter().copied().collect()
    }

    #[test]
    fn clean_case_classification() {
        let expect = Expectation::Clean;
        assert_eq!(
            classify_case(&expect, &insns(&[]), true),
            CaseClass::TrueNegative
        );
        assert_eq!(
            classify_case(&expect, &insns(&[4]), true),
            CaseClass::FalsePositive
        );
    }

    #[test]
    fn error_case_classification() {
        let expect = Expectation::Error { insns: insns(&[3, 5]) };
        assert_eq!(
            classify_case(&expect, &insns(&[3, 5]), true),
            CaseClass::TruePositive
        );
        assert_eq!(
            classify_case(&expect, &insns(&[3]), true),
            CaseClass::FalseNegative
        );
        assert_eq!(
            classify_case(&expect, &insns(&[]), true),
            CaseClass::FalseNegative
        );
        assert_eq!(
            classify_case(&expect, &insns(&[3, 5, 7]), true),
            CaseClass::FalsePositive
        );
        assert_eq!(
            classify_case(&expect, &insns(&[3, 5]), false),
            CaseClass::FalseNegative
        );
    }

    #[test]
    fn extra_warning_beats_missing_warning() {
        // an unrelated extra warning makes the case a false positive even
        // when an expected one is missing too
        let expect = Expectation::Error { insns: insns(&[3, 5]) };
        assert_eq!(
            classify_case(&expect, &insns(&[7]), true),
            CaseClass::FalsePositive
        );
    }

    #[test]
    fn manifest_round_trip() {
        let text = "\
# comment line
programs/a.s, seeds/a.bin, expect=error, insns=3;5
programs/b.s, seeds/b.bin, expect=clean  # trailing note
";
        let entries = parse_manifest(text, Path::new("/corpus")).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].program, PathBuf::from("/corpus/programs/a.s"));
        assert_eq!(entries[0].seed, PathBuf::from("/corpus/seeds/a.bin"));
        assert_eq!(
            entries[0].expect,
            Expectation::Error { insns: insns(&[3, 5]) }
        );
        assert_eq!(entries[1].expect, Expectation::Clean);
        assert_eq!(entries[0].name(), "a");
    }

    #[test]
    fn manifest_rejects_malformed_lines() {
        let base = Path::new(".");
        assert!(parse_manifest("a.s, b.bin", base).is_err());
        assert!(parse_manifest("a.s, b.bin, expect=maybe", base).is_err());
        assert!(parse_manifest("a.s, b.bin, expect=error", base).is_err());
        assert!(parse_manifest("a.s, b.bin, expect=clean, insns=1", base).is_err());
        assert!(parse_manifest("a.s, b.bin, expect=error, insns=x", base).is_err());
        assert!(parse_manifest("# only comments\n", base).is_err());
    }

    #[test]
    fn stats_over_mixed_results() {
        let mk = |class| CaseResult {
            name: String::new(),
            expect: Expectation::Clean,
            sat_insns: BTreeSet::new(),
            class,
        };
        let results: Vec<CaseResult> = vec![
            mk(CaseClass::TruePositive),
            mk(CaseClass::TruePositive),
            mk(CaseClass::TrueNegative),
            mk(CaseClass::FalseNegative),
        ];
        let s = corpus_stats(&results);
        assert_eq!((s.tp, s.tn, s.fp, s.fn_), (2, 1, 0, 1));
        assert!((s.accuracy - 0.75).abs() < 1e-12);
        assert!((s.tpr - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.tnr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kind_argument_parses() {
        assert_eq!(parse_kind("signed").unwrap(), TruncationKind::Signed);
        assert_eq!(parse_kind("unsigned").unwrap(), TruncationKind::Unsigned);
        assert!(parse_kind("wide").is_err());
    }
}
