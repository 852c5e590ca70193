//! The three-address IR: programs over named 32-bit variables, their text
//! form, their fixed-width binary image and basic-block CFGs.

mod cfg;
mod encoding;
mod text;

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

pub use cfg::{build_cfg, BasicBlock, BlockId, Cfg};
pub use encoding::{
    decode, decode_record, encode, BinaryImage, DecodeError, FetchError, CODE_RECORD_LEN,
    HEADER_LEN, MAGIC,
};
pub use text::{parse_text, ParseError};

/// Upper bound on declared variables; operand fields are one byte wide.
pub const MAX_VARIABLES: usize = 256;
/// Upper bound on instructions; branch targets are packed into 16 bits.
pub const MAX_INSTRUCTIONS: usize = u16::MAX as usize;

/// Index of a variable in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u8);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Halt = 0,
    Const = 1,
    Mov = 2,
    Add = 3,
    Sub = 4,
    Mul = 5,
    Div = 6,
    Out = 7,
    Jmp = 8,
    Br = 9,
}

impl Opcode {
    pub fn from_byte(byte: u8) -> Option<Opcode> {
        Some(match byte {
            0 => Opcode::Halt,
            1 => Opcode::Const,
            2 => Opcode::Mov,
            3 => Opcode::Add,
            4 => Opcode::Sub,
            5 => Opcode::Mul,
            6 => Opcode::Div,
            7 => Opcode::Out,
            8 => Opcode::Jmp,
            9 => Opcode::Br,
            _ => return None,
        })
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Halt => "halt",
            Opcode::Const => "const",
            Opcode::Mov => "mov",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Div => "div",
            Opcode::Out => "out",
            Opcode::Jmp => "jmp",
            Opcode::Br => "br",
        }
    }
}

/// Arithmetic operators. ADD/SUB/MUL wrap; DIV truncates toward zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    /// Returns `None` only for division by zero.
    pub fn apply(self, lhs: i32, rhs: i32) -> Option<i32> {
        match self {
            BinOp::Add => Some(lhs.wrapping_add(rhs)),
            BinOp::Sub => Some(lhs.wrapping_sub(rhs)),
            BinOp::Mul => Some(lhs.wrapping_mul(rhs)),
            BinOp::Div if rhs == 0 => None,
            // i32::MIN / -1 wraps back to i32::MIN
            BinOp::Div => Some(lhs.wrapping_div(rhs)),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn opcode(self) -> Opcode {
        match self {
            BinOp::Add => Opcode::Add,
            BinOp::Sub => Opcode::Sub,
            BinOp::Mul => Opcode::Mul,
            BinOp::Div => Opcode::Div,
        }
    }
}

/// Branch comparison, stored in the `dst` byte of a BR record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Relop {
    Eq = 0,
    Ne = 1,
    Lt = 2,
    Ge = 3,
    Gt = 4,
    Le = 5,
}

impl Relop {
    pub fn from_code(code: u8) -> Option<Relop> {
        Some(match code {
            0 => Relop::Eq,
            1 => Relop::Ne,
            2 => Relop::Lt,
            3 => Relop::Ge,
            4 => Relop::Gt,
            5 => Relop::Le,
            _ => return None,
        })
    }

    pub fn holds(self, lhs: i32, rhs: i32) -> bool {
        match self {
            Relop::Eq => lhs == rhs,
            Relop::Ne => lhs != rhs,
            Relop::Lt => lhs < rhs,
            Relop::Ge => lhs >= rhs,
            Relop::Gt => lhs > rhs,
            Relop::Le => lhs <= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relop::Eq => "==",
            Relop::Ne => "!=",
            Relop::Lt => "<",
            Relop::Ge => ">=",
            Relop::Gt => ">",
            Relop::Le => "<=",
        }
    }

    pub fn negate(self) -> Relop {
        match self {
            Relop::Eq => Relop::Ne,
            Relop::Ne => Relop::Eq,
            Relop::Lt => Relop::Ge,
            Relop::Ge => Relop::Lt,
            Relop::Gt => Relop::Le,
            Relop::Le => Relop::Gt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Halt,
    Const {
        dst: VarId,
        value: i32,
    },
    Mov {
        dst: VarId,
        src: VarId,
    },
    Binary {
        op: BinOp,
        dst: VarId,
        lhs: VarId,
        rhs: VarId,
    },
    Out {
        src: VarId,
    },
    Jmp {
        target: usize,
    },
    Br {
        relop: Relop,
        lhs: VarId,
        rhs: VarId,
        then_target: usize,
        else_target: usize,
    },
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Halt => Opcode::Halt,
            Instruction::Const { .. } => Opcode::Const,
            Instruction::Mov { .. } => Opcode::Mov,
            Instruction::Binary { op, .. } => op.opcode(),
            Instruction::Out { .. } => Opcode::Out,
            Instruction::Jmp { .. } => Opcode::Jmp,
            Instruction::Br { .. } => Opcode::Br,
        }
    }

    /// HALT, JMP and BR end a basic block.
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Instruction::Halt | Instruction::Jmp { .. } | Instruction::Br { .. }
        )
    }

    /// The variable written by this instruction, if any.
    pub fn def(&self) -> Option<VarId> {
        match *self {
            Instruction::Const { dst, .. }
            | Instruction::Mov { dst, .. }
            | Instruction::Binary { dst, .. } => Some(dst),
            _ => None,
        }
    }

    /// Variables read by this instruction, without duplicates.
    pub fn uses(&self) -> Vec<VarId> {
        let mut out = match *self {
            Instruction::Mov { src, .. } | Instruction::Out { src } => vec![src],
            Instruction::Binary { lhs, rhs, .. } | Instruction::Br { lhs, rhs, .. } => {
                vec![lhs, rhs]
            }
            _ => Vec::new(),
        };
        out.dedup();
        out
    }

    /// Static successors within a program of `len` instructions.
    pub fn successors(&self, index: usize, len: usize) -> Vec<usize> {
        match *self {
            Instruction::Halt => Vec::new(),
            Instruction::Jmp { target } => vec![target],
            Instruction::Br {
                then_target,
                else_target,
                ..
            } => {
                if then_target == else_target {
                    vec![then_target]
                } else {
                    vec![then_target, else_target]
                }
            }
            _ if index + 1 < len => vec![index + 1],
            _ => Vec::new(),
        }
    }

    fn targets(&self) -> Vec<usize> {
        match *self {
            Instruction::Jmp { target } => vec![target],
            Instruction::Br {
                then_target,
                else_target,
                ..
            } => vec![then_target, else_target],
            _ => Vec::new(),
        }
    }

    fn operands(&self) -> Vec<VarId> {
        let mut ops = self.uses();
        ops.extend(self.def());
        ops
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Variable {
    pub name: String,
    pub init: i32,
}

impl Variable {
    pub fn new(name: impl Into<String>, init: i32) -> Self {
        Variable {
            name: name.into(),
            init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("program has no instructions")]
    Empty,
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("{0} variables declared, at most {MAX_VARIABLES} allowed")]
    TooManyVariables(usize),
    #[error("{0} instructions, at most {MAX_INSTRUCTIONS} allowed")]
    TooManyInstructions(usize),
    #[error("instruction {index} references variable index {var} but only {count} are declared")]
    OperandOutOfRange { index: usize, var: u8, count: usize },
    #[error("instruction {index} targets {target}, outside 0..{len}")]
    TargetOutOfRange {
        index: usize,
        target: usize,
        len: usize,
    },
    #[error("program contains no HALT")]
    MissingHalt,
    #[error("last instruction is not HALT, JMP or BR; execution would fall off the end")]
    FallsOffEnd,
}

/// A validated program. Construction checks every structural invariant, so
/// any `Program` value is canonical and encodes without error.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    vars: Vec<Variable>,
    instrs: Vec<Instruction>,
}

impl Program {
    pub fn new(vars: Vec<Variable>, instrs: Vec<Instruction>) -> Result<Program, ProgramError> {
        if instrs.is_empty() {
            return Err(ProgramError::Empty);
        }
        if vars.len() > MAX_VARIABLES {
            return Err(ProgramError::TooManyVariables(vars.len()));
        }
        if instrs.len() > MAX_INSTRUCTIONS {
            return Err(ProgramError::TooManyInstructions(instrs.len()));
        }
        let mut seen = HashSet::new();
        for v in &vars {
            if !seen.insert(v.name.as_str()) {
                return Err(ProgramError::DuplicateVariable(v.name.clone()));
            }
        }
        for (index, ins) in instrs.iter().enumerate() {
            for var in ins.operands() {
                if var.index() >= vars.len() {
                    return Err(ProgramError::OperandOutOfRange {
                        index,
                        var: var.0,
                        count: vars.len(),
                    });
                }
            }
            for target in ins.targets() {
                if target >= instrs.len() {
                    return Err(ProgramError::TargetOutOfRange {
                        index,
                        target,
                        len: instrs.len(),
                    });
                }
            }
        }
        if !instrs.iter().any(|i| matches!(i, Instruction::Halt)) {
            return Err(ProgramError::MissingHalt);
        }
        if !instrs.last().is_some_and(Instruction::is_terminator) {
            return Err(ProgramError::FallsOffEnd);
        }
        Ok(Program { vars, instrs })
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn instrs(&self) -> &[Instruction] {
        &self.instrs
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.index()].name
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .map(|i| VarId(i as u8))
    }

    pub fn var_ids(&self) -> impl Iterator<Item = VarId> {
        (0..self.vars.len()).map(|i| VarId(i as u8))
    }

    pub fn initial_values(&self) -> Vec<i32> {
        self.vars.iter().map(|v| v.init).collect()
    }

    /// True when some instruction writes `v`. Variables that are never
    /// written hold their declared value for the whole run and act as
    /// named constants.
    pub fn is_written(&self, v: VarId) -> bool {
        self.instrs.iter().any(|i| i.def() == Some(v))
    }

    /// Same program with variables renamed `v0, v1, ...`, the naming a
    /// decoded image carries.
    pub fn with_canonical_names(&self) -> Program {
        Program {
            vars: self
                .vars
                .iter()
                .enumerate()
                .map(|(i, v)| Variable::new(format!("v{i}"), v.init))
                .collect(),
            instrs: self.instrs.clone(),
        }
    }

    /// Replaces variable names, e.g. to restore symbols after decoding.
    /// A name list of the wrong length leaves the program unchanged.
    pub fn with_names(&self, names: &[String]) -> Result<Program, ProgramError> {
        if names.len() != self.vars.len() {
            return Ok(self.clone());
        }
        let vars = self
            .vars
            .iter()
            .zip(names)
            .map(|(v, n)| Variable::new(n.clone(), v.init))
            .collect();
        Program::new(vars, self.instrs.clone())
    }
}
