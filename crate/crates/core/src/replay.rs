//! Witness replay.
//!
//! A confirmed warning comes with an input file; replaying it checks the
//! claim concretely, with no symbolic machinery involved. The program runs
//! on the plain machine, and every time the flagged instruction is about
//! to execute, the wide source value is sampled and its dropped bit range
//! inspected: a signed truncation really fires when the dropped bits are
//! neither all zeros nor all ones, an unsigned one when they are not all
//! zeros.

use crate::isa::{HaltKind, Machine, Mnemonic, Operand, Program, Reg, StepEvent, TrapInfo};
use crate::report::TruncationKind;

/// What to look for: the flagged instruction and the dropped bit range.
#[derive(Debug, Clone, Copy)]
pub struct ReplaySpec {
    pub insn: usize,
    pub kind: TruncationKind,
    pub low: u32,
    pub high: u32,
}

/// Result of a replay. `observations` holds the dropped-bits value seen at
/// each visit of the flagged instruction, in execution order.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub visits: u64,
    pub triggered: bool,
    pub observations: Vec<u64>,
    pub prints: Vec<u64>,
    pub halt: Option<HaltKind>,
    pub trap: Option<TrapInfo>,
    pub hit_step_limit: bool,
}

impl ReplayOutcome {
    /// Short explanation when the replay does not confirm the warning.
    pub fn reason(&self) -> Option<&'static str> {
        if self.triggered {
            None
        } else if self.visits == 0 {
            Some("unreached")
        } else {
            Some("dropped bits stayed in range")
        }
    }
}

fn bits_mask(width: u32) -> u64 {
    crate::bitvec::mask(width)
}

/// The wide value the flagged instruction is about to narrow, sampled from
/// the concrete machine right before the instruction executes.
fn source_value(machine: &Machine, program: &Program, spec: &ReplaySpec) -> Option<u64> {
    let insn = program.instructions.get(spec.insn)?;
    match insn.mnemonic {
        Mnemonic::Mov | Mnemonic::Movsx | Mnemonic::Movzx => match insn.src() {
            Operand::Mem(m) => {
                let bytes = (spec.high + 1) / 8;
                let addr = machine.effective_addr(m);
                machine.read_mem(addr, bytes).ok()
            }
            Operand::Reg(s) => Some(machine.read_reg(s.reg)),
            _ => None,
        },
        Mnemonic::Cbw | Mnemonic::Cwde | Mnemonic::Cdqe => Some(machine.read_reg(Reg::Rax)),
        _ => None,
    }
}

/// Run `input` and check whether the flagged narrowing actually loses
/// information on this input, at any visit of the instruction.
pub fn reproduce(
    program: &Program,
    input: &[u8],
    spec: &ReplaySpec,
    step_limit: u64,
) -> ReplayOutcome {
    let mut machine = Machine::new(input.to_vec());
    let mut out = ReplayOutcome {
        visits: 0,
        triggered: false,
        observations: Vec::new(),
        prints: Vec::new(),
        halt: None,
        trap: None,
        hit_step_limit: false,
    };
    let width = spec.high - spec.low + 1;
    loop {
        if machine.steps() >= step_limit {
            out.hit_step_limit = true;
            break;
        }
        if machine.pc() == spec.insn {
            out.visits += 1;
            if let Some(value) = source_value(&machine, program, spec) {
                let dropped = (value >> spec.low) & bits_mask(width);
                out.observations.push(dropped);
                let lossy = match spec.kind {
                    TruncationKind::Unsigned => dropped != 0,
                    TruncationKind::Signed => dropped != 0 && dropped != bits_mask(width),
                };
                out.triggered |= lossy;
            }
        }
        match machine.step(program) {
            Ok(StepEvent::Halt(h)) => {
                out.halt = Some(h);
                break;
            }
            Ok(_) => {}
            Err(t) => {
                out.trap = Some(t);
                break;
            }
        }
    }
    out.prints = machine.prints().to_vec();
    out
}
