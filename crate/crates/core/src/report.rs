//! Warning records produced by an analysis run.

use std::path::PathBuf;

use serde::Serialize;

use crate::bitvec::Assignment;

/// Whether the dropped bits were judged against signed or unsigned range
/// rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationKind {
    Signed,
    Unsigned,
}

impl TruncationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TruncationKind::Signed => "signed",
            TruncationKind::Unsigned => "unsigned",
        }
    }
}

impl std::fmt::Display for TruncationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of the solver job behind a warning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Sat,
    Unsat,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Sat => "sat",
            Verdict::Unsat => "unsat",
            Verdict::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The machine-readable form of a warning, one JSON object per line in the
/// tool's output. `bits` is the inclusive `[low, high]` range of the
/// discarded bit positions and `input` points at the witness input file
/// when one was produced.
#[derive(Debug, Clone, Serialize)]
pub struct WarningRecord {
    pub insn: usize,
    pub line: usize,
    pub kind: TruncationKind,
    pub bits: [u32; 2],
    pub verdict: Verdict,
    pub input: Option<String>,
}

/// A truncation finding with everything the caller might want to follow up
/// with: the solver model, the witness input path, and the SMT dump path
/// for undecided jobs.
#[derive(Debug, Clone)]
pub struct TruncationWarning {
    pub insn: usize,
    pub line: usize,
    pub kind: TruncationKind,
    pub low: u32,
    pub high: u32,
    pub verdict: Verdict,
    pub model: Option<Assignment>,
    pub input_path: Option<PathBuf>,
    pub smt2_path: Option<PathBuf>,
}

impl TruncationWarning {
    pub fn record(&self) -> WarningRecord {
        WarningRecord {
            insn: self.insn,
            line: self.line,
            kind: self.kind,
            bits: [self.low, self.high],
            verdict: self.verdict,
            input: self
                .input_path
                .as_ref()
                .map(|p| p.display().to_string()),
        }
    }
}

/// All warnings from one analysis, in the order their sites were first
/// reached.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub warnings: Vec<TruncationWarning>,
}

impl RunReport {
    pub fn sat_warnings(&self) -> impl Iterator<Item = &TruncationWarning> {
        self.warnings
            .iter()
            .filter(|w| w.verdict == Verdict::Sat)
    }

    pub fn sat_count(&self) -> usize {
        self.sat_warnings().count()
    }

    pub fn has_unknown(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| w.verdict == Verdict::Unknown)
    }

    /// One JSON object per line. By default only solver-confirmed warnings
    /// are listed; `include_all` adds the unsat and unknown ones.
    pub fn jsonl(&self, include_all: bool) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            if include_all || w.verdict == Verdict::Sat {
                out.push_str(&serde_json::to_string(&w.record()).unwrap());
                out.push('\n');
            }
        }
        out
    }
}
