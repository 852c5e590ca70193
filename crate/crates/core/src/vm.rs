//! Interpreter for hardened containers.
//!
//! Unprotected blocks execute directly from the working image against the
//! live data store. A protected block is entered only at its first
//! instruction and runs as a pair of twins:
//!
//! 1. snapshot the data store;
//! 2. run the block from the working image on a scratch copy, recording
//!    its write set, buffered `out` values and exit;
//! 3. run it again from the backup image on a fresh copy of the snapshot;
//! 4. on agreement, commit the first twin;
//! 5. on disagreement, copy the block's code bytes from the backup over the
//!    working image, run the block a third time from the snapshot and
//!    commit that.
//!
//! Every executed instruction counts toward `dyn_instr_count`, twins and
//! the recovery run included. Data faults land in whatever store the
//! current instruction reads from, so a flip inside a twin only affects
//! that twin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{FaultSpec, Segment};
use crate::hardener::{verify_backup, HardenedProgram, IntegrityError, ProtectedBlock};
use crate::ir::{
    decode_record, BlockId, FetchError, Instruction, Opcode, CODE_RECORD_LEN, HEADER_LEN,
};

pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrapKind {
    InvalidOpcode,
    DivZero,
    OobTarget,
    OobOperand,
    MalformedImage,
}

impl TrapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrapKind::InvalidOpcode => "invalid-opcode",
            TrapKind::DivZero => "div-zero",
            TrapKind::OobTarget => "oob-target",
            TrapKind::OobOperand => "oob-operand",
            TrapKind::MalformedImage => "malformed-image",
        }
    }
}

impl From<FetchError> for TrapKind {
    fn from(e: FetchError) -> Self {
        match e {
            FetchError::InvalidOpcode(_) | FetchError::InvalidRelop(_) => TrapKind::InvalidOpcode,
            FetchError::OperandOutOfRange(_) => TrapKind::OobOperand,
            FetchError::TargetOutOfRange(_) => TrapKind::OobTarget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum Status {
    Halted,
    Trapped { kind: TrapKind, pc: usize },
    StepLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Detection {
    pub block: BlockId,
    /// Dynamic instruction count when the twins were compared.
    pub dyn_instr: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub output_tape: Vec<i32>,
    pub status: Status,
    pub dyn_instr_count: u64,
    pub detections: Vec<Detection>,
    pub recoveries: u32,
    /// Backup image bytes, plus one data snapshot once a protected block
    /// has run; 0 without protected blocks.
    pub shadow_bytes: usize,
    /// The fault, if its trigger was reached.
    pub fault_applied: Option<FaultSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error("step limit must be positive")]
    ZeroStepLimit,
    #[error(transparent)]
    Fault(#[from] crate::fault::FaultError),
}

/// One executed instruction, for `--trace`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub dyn_instr: u64,
    pub pc: usize,
    pub opcode: String,
    pub writes: Vec<(u8, i32)>,
}

/// Architectural state visible between blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub data: Vec<i32>,
    pub pc: usize,
    pub output_tape: Vec<i32>,
    pub dyn_instr_count: u64,
    /// `None` while running.
    pub status: Option<Status>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Working,
    Backup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Next(usize),
    Halt,
    Trap(TrapKind, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TwinOutcome {
    writes: BTreeMap<u8, i32>,
    outs: Vec<i32>,
    exit: Exit,
}

/// Result of decoding and executing one instruction against `data`.
struct Executed {
    opcode: String,
    write: Option<(u8, i32)>,
    out: Option<i32>,
    exit: Exit,
    terminator: bool,
}

fn execute(
    record: &[u8],
    var_count: usize,
    instr_count: usize,
    pc: usize,
    data: &mut [i32],
) -> Executed {
    let mut done = Executed {
        opcode: Opcode::from_byte(record[0])
            .map(|o| o.mnemonic().to_string())
            .unwrap_or_else(|| format!("0x{:02x}", record[0])),
        write: None,
        out: None,
        exit: Exit::Next(pc + 1),
        terminator: false,
    };
    let ins = match decode_record(record, var_count, instr_count) {
        Ok(ins) => ins,
        Err(e) => {
            done.exit = Exit::Trap(e.into(), pc);
            return done;
        }
    };
    done.terminator = ins.is_terminator();
    let mut write = None;
    match ins {
        Instruction::Halt => done.exit = Exit::Halt,
        Instruction::Const { dst, value } => write = Some((dst, value)),
        Instruction::Mov { dst, src } => write = Some((dst, data[src.index()])),
        Instruction::Binary { op, dst, lhs, rhs } => {
            match op.apply(data[lhs.index()], data[rhs.index()]) {
                Some(v) => write = Some((dst, v)),
                None => done.exit = Exit::Trap(TrapKind::DivZero, pc),
            }
        }
        Instruction::Out { src } => done.out = Some(data[src.index()]),
        Instruction::Jmp { target } => done.exit = Exit::Next(target),
        Instruction::Br {
            relop,
            lhs,
            rhs,
            then_target,
            else_target,
        } => {
            let taken = relop.holds(data[lhs.index()], data[rhs.index()]);
            done.exit = Exit::Next(if taken { then_target } else { else_target });
        }
    }
    if let Some((dst, value)) = write {
        data[dst.index()] = value;
        done.write = Some((dst.0, value));
    }
    done
}

/// A single run over a private copy of the working image.
pub struct Vm<'h> {
    h: &'h HardenedProgram,
    working: Vec<u8>,
    code_offset: usize,
    var_count: usize,
    instr_count: usize,
    state: MachineState,
    step_limit: u64,
    fault: Option<FaultSpec>,
    fault_applied: Option<FaultSpec>,
    detections: Vec<Detection>,
    recoveries: u32,
    snapshot_taken: bool,
    trace: Option<&'h mut dyn FnMut(&TraceEvent)>,
}

impl<'h> Vm<'h> {
    /// Loads `h`. The backup must pass its integrity check and the fault,
    /// if any, must address an existing byte.
    pub fn new(
        h: &'h HardenedProgram,
        fault: Option<&FaultSpec>,
        step_limit: u64,
    ) -> Result<Self, RunError> {
        verify_backup(h)?;
        if step_limit == 0 {
            return Err(RunError::ZeroStepLimit);
        }
        if let Some(f) = fault {
            f.validate(h)?;
        }
        let backup = h.backup_image();
        let working = h.working_image().to_vec();
        let loadable = working.len() == backup.len()
            && working[..HEADER_LEN] == backup.as_bytes()[..HEADER_LEN];
        let (data, status) = if loadable {
            let words = working[HEADER_LEN..backup.code_offset()]
                .chunks_exact(4)
                .map(|w| i32::from_le_bytes([w[0], w[1], w[2], w[3]]))
                .collect();
            (words, None)
        } else {
            let crash = Status::Trapped {
                kind: TrapKind::MalformedImage,
                pc: 0,
            };
            (vec![0; backup.var_count()], Some(crash))
        };
        Ok(Vm {
            h,
            working,
            code_offset: backup.code_offset(),
            var_count: backup.var_count(),
            instr_count: backup.instr_count(),
            state: MachineState {
                data,
                pc: 0,
                output_tape: Vec::new(),
                dyn_instr_count: 0,
                status,
            },
            step_limit,
            fault: fault.copied(),
            fault_applied: None,
            detections: Vec::new(),
            recoveries: 0,
            snapshot_taken: false,
            trace: None,
        })
    }

    /// Calls `sink` after every executed instruction.
    pub fn with_trace(mut self, sink: &'h mut dyn FnMut(&TraceEvent)) -> Self {
        self.trace = Some(sink);
        self
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn working_image(&self) -> &[u8] {
        &self.working
    }

    /// Applies the pending fault if the next dynamic instruction is its
    /// trigger. Data flips go to `store`.
    fn maybe_inject(&mut self, store: &mut [i32]) {
        let Some(f) = self.fault else { return };
        if f.trigger != self.state.dyn_instr_count {
            return;
        }
        self.fault = None;
        self.fault_applied = Some(f);
        let mask = 1u8 << f.bit_index;
        match f.segment {
            Segment::Code => self.working[self.code_offset + f.byte_index] ^= mask,
            Segment::Data => {
                let word = &mut store[f.byte_index / 4];
                let mut bytes = word.to_le_bytes();
                bytes[f.byte_index % 4] ^= mask;
                *word = i32::from_le_bytes(bytes);
            }
        }
    }

    fn record(&self, source: Source, pc: usize) -> Option<[u8; CODE_RECORD_LEN]> {
        if pc >= self.instr_count {
            return None;
        }
        let code = match source {
            Source::Working => &self.working[self.code_offset..],
            Source::Backup => self.h.backup_image().code_segment(),
        };
        let at = pc * CODE_RECORD_LEN;
        Some(
            code[at..at + CODE_RECORD_LEN]
                .try_into()
                .expect("record width"),
        )
    }

    /// Fetches and executes the instruction at `pc` against `store`,
    /// counting it and reporting it to the trace sink.
    fn step_on(&mut self, source: Source, pc: usize, store: &mut [i32]) -> Executed {
        self.maybe_inject(store);
        let done = match self.record(source, pc) {
            Some(rec) => execute(&rec, self.var_count, self.instr_count, pc, store),
            None => Executed {
                opcode: String::from("-"),
                write: None,
                out: None,
                exit: Exit::Trap(TrapKind::OobTarget, pc),
                terminator: true,
            },
        };
        if let Some(sink) = self.trace.as_mut() {
            sink(&TraceEvent {
                dyn_instr: self.state.dyn_instr_count,
                pc,
                opcode: done.opcode.clone(),
                writes: done.write.into_iter().collect(),
            });
        }
        self.state.dyn_instr_count += 1;
        done
    }

    fn limit_reached(&self) -> bool {
        self.state.dyn_instr_count >= self.step_limit
    }

    /// Runs one unprotected instruction against the live store.
    pub fn step(&mut self) {
        if self.state.status.is_some() {
            return;
        }
        if self.limit_reached() {
            self.state.status = Some(Status::StepLimit);
            return;
        }
        let pc = self.state.pc;
        let mut data = std::mem::take(&mut self.state.data);
        let done = self.step_on(Source::Working, pc, &mut data);
        self.state.data = data;
        self.state.output_tape.extend(done.out);
        self.finish(done.exit);
    }

    fn finish(&mut self, exit: Exit) {
        match exit {
            Exit::Next(pc) => self.state.pc = pc,
            Exit::Halt => self.state.status = Some(Status::Halted),
            Exit::Trap(kind, pc) => self.state.status = Some(Status::Trapped { kind, pc }),
        }
    }

    /// One twin: runs from the block's first instruction until a
    /// terminator executes or control leaves the block. `None` means the
    /// step limit cut it short.
    fn twin(
        &mut self,
        source: Source,
        block: &ProtectedBlock,
        snapshot: &[i32],
    ) -> Option<TwinOutcome> {
        let mut scratch = snapshot.to_vec();
        let mut outcome = TwinOutcome {
            writes: BTreeMap::new(),
            outs: Vec::new(),
            exit: Exit::Next(block.start),
        };
        let mut pc = block.start;
        loop {
            if self.limit_reached() {
                return None;
            }
            let done = self.step_on(source, pc, &mut scratch);
            if let Some((var, value)) = done.write {
                outcome.writes.insert(var, value);
            }
            outcome.outs.extend(done.out);
            outcome.exit = done.exit;
            match done.exit {
                Exit::Next(next)
                    if !done.terminator && (block.start..block.end).contains(&next) =>
                {
                    pc = next
                }
                _ => return Some(outcome),
            }
        }
    }

    /// Twin-executes `block`, which must start at the current pc, and
    /// commits the agreed (or recovered) outcome.
    pub fn execute_block_protected(&mut self, block: &ProtectedBlock) {
        debug_assert_eq!(self.state.pc, block.start);
        self.snapshot_taken = true;
        let snapshot = self.state.data.clone();
        let Some(first) = self.twin(Source::Working, block, &snapshot) else {
            self.state.status = Some(Status::StepLimit);
            return;
        };
        let Some(second) = self.twin(Source::Backup, block, &snapshot) else {
            self.state.status = Some(Status::StepLimit);
            return;
        };
        let committed = if first == second {
            first
        } else {
            self.detections.push(Detection {
                block: block.id,
                dyn_instr: self.state.dyn_instr_count,
            });
            let range = self.code_offset + block.start * CODE_RECORD_LEN
                ..self.code_offset + block.end * CODE_RECORD_LEN;
            let clean = &self.h.backup_image().as_bytes()[range.clone()];
            self.working[range].copy_from_slice(clean);
            let Some(third) = self.twin(Source::Backup, block, &snapshot) else {
                self.state.status = Some(Status::StepLimit);
                return;
            };
            self.recoveries += 1;
            third
        };
        self.state.data = snapshot;
        for (var, value) in committed.writes {
            self.state.data[var as usize] = value;
        }
        self.state.output_tape.extend(committed.outs);
        self.finish(committed.exit);
    }

    /// Runs to completion.
    pub fn run(mut self) -> RunResult {
        while self.state.status.is_none() {
            if self.limit_reached() {
                self.state.status = Some(Status::StepLimit);
                break;
            }
            match self.h.manifest().protected_at(self.state.pc).copied() {
                Some(block) => self.execute_block_protected(&block),
                None => self.step(),
            }
        }
        let shadow_bytes = if self.h.manifest().protected_blocks.is_empty() {
            0
        } else {
            self.h.backup_image().len()
                + if self.snapshot_taken {
                    4 * self.var_count
                } else {
                    0
                }
        };
        RunResult {
            output_tape: self.state.output_tape,
            status: self.state.status.expect("loop ends with a status"),
            dyn_instr_count: self.state.dyn_instr_count,
            detections: self.detections,
            recoveries: self.recoveries,
            shadow_bytes,
            fault_applied: self.fault_applied,
        }
    }
}

/// Runs `h` from its entry, optionally injecting one fault.
pub fn run(
    h: &HardenedProgram,
    fault: Option<&FaultSpec>,
    step_limit: u64,
) -> Result<RunResult, RunError> {
    Ok(Vm::new(h, fault, step_limit)?.run())
}

/// [`run`] with a per-instruction trace callback.
pub fn run_traced(
    h: &HardenedProgram,
    fault: Option<&FaultSpec>,
    step_limit: u64,
    sink: &mut dyn FnMut(&TraceEvent),
) -> Result<RunResult, RunError> {
    Ok(Vm::new(h, fault, step_limit)?.with_trace(sink).run())
}
