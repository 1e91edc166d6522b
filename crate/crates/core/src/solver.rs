//! Satisfiability of path and security predicates by bounded enumeration.
//!
//! Jobs are tiny by construction: a handful of byte-and-word input
//! variables and a short constraint list. The solver walks candidate
//! assignments in lexicographic order of the input layout (first slot most
//! significant) and returns the first satisfying one, so identical jobs
//! always produce identical models and the generated inputs are
//! reproducible. A job whose space cannot be swept within the evaluation
//! budget and that has no hit among the first `budget` candidates is
//! reported unknown, and its constraints are written out as an SMT-LIB2
//! script for an external solver. Every satisfying assignment is re-checked
//! with the evaluator before it is returned.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::bitvec::{mask, Assignment, BvExpr, EvalError, VarId};
use crate::smtlib::{to_smtlib, SmtError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobId(pub u32);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "job{}", self.0)
    }
}

/// One symbolic input variable and where its bytes sit in the input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSlot {
    pub var: VarId,
    pub width: u32,
    /// Ordinal of the read that produced the variable.
    pub read_index: usize,
    /// Offset of the variable's first byte in the input file.
    pub byte_offset: usize,
}

#[derive(Debug, Clone)]
pub struct SolverJob {
    pub id: JobId,
    pub constraints: Vec<BvExpr>,
    pub layout: Vec<InputSlot>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolverVerdict {
    Sat(Assignment),
    Unsat,
    Unknown { smt2_path: Option<PathBuf> },
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Maximum number of candidate assignments evaluated per job.
    pub budget: u64,
    /// Where to drop SMT-LIB2 scripts for jobs the enumerator gives up on.
    pub smt2_dir: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            budget: 1 << 20,
            smt2_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("constraint has width {0}, expected 1")]
    NonBooleanConstraint(u32),
    #[error("variable {0} occurs in constraints but not in the layout")]
    MissingFromLayout(VarId),
    #[error("variable {0} appears twice in the layout")]
    DuplicateSlot(VarId),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("model failed re-evaluation, {0} evaluated to 0")]
    ModelRejected(JobId),
    #[error(transparent)]
    Smt(#[from] SmtError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Decide one job. Deterministic for a given job and budget.
pub fn solve(job: &SolverJob, config: &SolverConfig) -> Result<SolverVerdict, SolverError> {
    for c in &job.constraints {
        if c.width() != 1 {
            return Err(SolverError::NonBooleanConstraint(c.width()));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for slot in &job.layout {
        if !seen.insert(slot.var) {
            return Err(SolverError::DuplicateSlot(slot.var));
        }
    }
    for c in &job.constraints {
        for v in c.vars() {
            if !seen.contains(&v) {
                return Err(SolverError::MissingFromLayout(v));
            }
        }
    }

    let total_width: u32 = job.layout.iter().map(|s| s.width).sum();
    let space: Option<u64> = if total_width >= 64 {
        None
    } else {
        Some(1u64 << total_width)
    };
    let exhaustive = match space {
        Some(s) => s <= config.budget,
        None => false,
    };
    let limit = match space {
        Some(s) => s.min(config.budget),
        None => config.budget,
    };

    let mut assignment = Assignment::new();
    for counter in 0..limit {
        decode(counter, &job.layout, &mut assignment);
        let mut hit = true;
        for c in &job.constraints {
            if c.eval(&assignment)? != 1 {
                hit = false;
                break;
            }
        }
        if hit {
            verify_model(job, &assignment)?;
            return Ok(SolverVerdict::Sat(assignment));
        }
    }

    if exhaustive {
        return Ok(SolverVerdict::Unsat);
    }

    let smt2_path = match &config.smt2_dir {
        Some(dir) => Some(write_script(job, dir)?),
        None => None,
    };
    Ok(SolverVerdict::Unknown { smt2_path })
}

/// Spread `counter` over the layout, last slot in the low bits, so that
/// counting up walks assignments in lexicographic layout order.
fn decode(counter: u64, layout: &[InputSlot], out: &mut Assignment) {
    let mut rest = counter;
    for slot in layout.iter().rev() {
        out.set(slot.var, rest & mask(slot.width));
        if slot.width >= 64 {
            rest = 0;
        } else {
            rest >>= slot.width;
        }
    }
}

fn verify_model(job: &SolverJob, assignment: &Assignment) -> Result<(), SolverError> {
    for c in &job.constraints {
        if c.eval(assignment)? != 1 {
            return Err(SolverError::ModelRejected(job.id));
        }
    }
    Ok(())
}

fn write_script(job: &SolverJob, dir: &Path) -> Result<PathBuf, SolverError> {
    let script = to_smtlib(&job.constraints)?;
    let path = dir.join(format!("{}.smt2", job.id));
    std::fs::create_dir_all(dir).map_err(|source| SolverError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    std::fs::write(&path, script).map_err(|source| SolverError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Serialize a model back into an input file image. Each slot's value is
/// written little-endian at the slot's byte offset; bytes the model does
/// not cover keep their seed values.
pub fn model_to_input_bytes(
    assignment: &Assignment,
    layout: &[InputSlot],
    seed: &[u8],
) -> Vec<u8> {
    let mut out = seed.to_vec();
    for slot in layout {
        let len = (slot.width as usize).div_ceil(8);
        let end = slot.byte_offset + len;
        if out.len() < end {
            out.resize(end, 0);
        }
        let value = assignment.get(slot.var).unwrap_or(0);
        out[slot.byte_offset..end].copy_from_slice(&value.to_le_bytes()[..len]);
    }
    out
}

/// Drain `jobs` with `workers` threads (one shared queue) and key the
/// verdicts by job id. A single worker runs inline; results are identical
/// either way because jobs are independent and individually deterministic.
pub fn run_jobs(
    jobs: Vec<SolverJob>,
    config: &SolverConfig,
    workers: usize,
) -> Result<BTreeMap<JobId, SolverVerdict>, SolverError> {
    if workers <= 1 {
        let mut out = BTreeMap::new();
        for job in jobs {
            let verdict = solve(&job, config)?;
            out.insert(job.id, verdict);
        }
        return Ok(out);
    }

    let queue: Mutex<VecDeque<SolverJob>> = Mutex::new(jobs.into());
    let results: Mutex<BTreeMap<JobId, Result<SolverVerdict, SolverError>>> =
        Mutex::new(BTreeMap::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = match queue.lock().unwrap().pop_front() {
                    Some(j) => j,
                    None => break,
                };
                let verdict = solve(&job, config);
                results.lock().unwrap().insert(job.id, verdict);
            });
        }
    });

    let mut out = BTreeMap::new();
    for (id, res) in results.into_inner().unwrap() {
        out.insert(id, res?);
    }
    Ok(out)
}
