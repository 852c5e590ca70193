//! Bit-exact binary image.
//!
//! ```text
//! header  : "SFT1" | var_count: u16 | instr_count: u16
//! data    : var_count   x i32          (initial values)
//! code    : instr_count x [opcode, dst, a, b, imm: i32]
//! ```
//!
//! All multi-byte fields are little-endian. Operand fields an opcode does not
//! use are zero. BR keeps its relop in `dst` and packs the then-target in the
//! low 16 bits of `imm`, the else-target in the high 16 bits.

use thiserror::Error;

use super::MAX_VARIABLES;
use super::{BinOp, Instruction, Opcode, Program, ProgramError, Relop, VarId, Variable};

pub const MAGIC: [u8; 4] = *b"SFT1";
pub const HEADER_LEN: usize = 8;
pub const CODE_RECORD_LEN: usize = 8;
const WORD_LEN: usize = 4;

/// Encoded program bytes. Only [`encode`] and [`BinaryImage::from_bytes`]
/// construct one; the latter checks the header and the length formula but
/// not the code records.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    bytes: Vec<u8>,
}

impl BinaryImage {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<BinaryImage, DecodeError> {
        let (vars, instrs) = read_header(&bytes)?;
        let expected = image_len(vars, instrs);
        if bytes.len() > expected {
            return Err(DecodeError::TrailingBytes {
                expected,
                actual: bytes.len(),
            });
        }
        Ok(BinaryImage { bytes })
    }

    /// Total image length announced by the header at the start of
    /// `bytes`; only the 8 header bytes need to be present.
    pub fn len_from_header(bytes: &[u8]) -> Result<usize, DecodeError> {
        if bytes.len() < HEADER_LEN {
            return Err(DecodeError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        if bytes[..4] != MAGIC {
            return Err(DecodeError::BadMagic([
                bytes[0], bytes[1], bytes[2], bytes[3],
            ]));
        }
        let vars = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let instrs = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        if vars > MAX_VARIABLES {
            return Err(DecodeError::TooManyVariables(vars));
        }
        Ok(image_len(vars, instrs))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn var_count(&self) -> usize {
        u16::from_le_bytes([self.bytes[4], self.bytes[5]]) as usize
    }

    pub fn instr_count(&self) -> usize {
        u16::from_le_bytes([self.bytes[6], self.bytes[7]]) as usize
    }

    /// Byte offset of the first code record.
    pub fn code_offset(&self) -> usize {
        HEADER_LEN + WORD_LEN * self.var_count()
    }

    pub fn data_segment(&self) -> &[u8] {
        &self.bytes[HEADER_LEN..self.code_offset()]
    }

    pub fn code_segment(&self) -> &[u8] {
        &self.bytes[self.code_offset()..]
    }

    pub fn code_segment_mut(&mut self) -> &mut [u8] {
        let start = self.code_offset();
        &mut self.bytes[start..]
    }

    /// The 8-byte record of instruction `index`.
    pub fn record(&self, index: usize) -> &[u8] {
        let start = index * CODE_RECORD_LEN;
        &self.code_segment()[start..start + CODE_RECORD_LEN]
    }
}

pub fn image_len(var_count: usize, instr_count: usize) -> usize {
    HEADER_LEN + WORD_LEN * var_count + CODE_RECORD_LEN * instr_count
}

fn read_header(bytes: &[u8]) -> Result<(usize, usize), DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(DecodeError::BadMagic([
            bytes[0], bytes[1], bytes[2], bytes[3],
        ]));
    }
    let vars = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let instrs = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if vars > MAX_VARIABLES {
        return Err(DecodeError::TooManyVariables(vars));
    }
    let expected = image_len(vars, instrs);
    if bytes.len() < expected {
        return Err(DecodeError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok((vars, instrs))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}, expected \"SFT1\"")]
    BadMagic([u8; 4]),
    #[error("truncated image: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("image has {actual} bytes, layout allows exactly {expected}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("header declares {0} variables, at most 256 allowed")]
    TooManyVariables(usize),
    #[error("invalid opcode 0x{byte:02x} at instruction {index}")]
    InvalidOpcode { index: usize, byte: u8 },
    #[error("invalid relop code {code} at instruction {index}")]
    InvalidRelop { index: usize, code: u8 },
    #[error("instruction {index} references variable {var}, outside the data segment")]
    OperandOutOfRange { index: usize, var: u8 },
    #[error("instruction {index} targets {target}, outside the code segment")]
    TargetOutOfRange { index: usize, target: usize },
    #[error("instruction {index} has non-zero unused fields")]
    NonCanonical { index: usize },
    #[error("malformed program: {0}")]
    Structure(ProgramError),
}

impl DecodeError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::BadMagic(_) => "bad-magic",
            DecodeError::Truncated { .. } => "truncated",
            DecodeError::TrailingBytes { .. } => "trailing-bytes",
            DecodeError::TooManyVariables(_) => "too-many-variables",
            DecodeError::InvalidOpcode { .. } => "invalid-opcode",
            DecodeError::InvalidRelop { .. } => "invalid-relop",
            DecodeError::OperandOutOfRange { .. } => "operand-out-of-range",
            DecodeError::TargetOutOfRange { .. } => "target-out-of-range",
            DecodeError::NonCanonical { .. } => "non-canonical",
            DecodeError::Structure(_) => "malformed-program",
        }
    }
}

/// Why a single code record cannot be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("invalid opcode 0x{0:02x}")]
    InvalidOpcode(u8),
    #[error("invalid relop code {0}")]
    InvalidRelop(u8),
    #[error("operand {0} outside the data segment")]
    OperandOutOfRange(u8),
    #[error("target {0} outside the code segment")]
    TargetOutOfRange(usize),
}

pub fn encode(program: &Program) -> BinaryImage {
    let vars = program.vars();
    let instrs = program.instrs();
    let mut bytes = Vec::with_capacity(image_len(vars.len(), instrs.len()));
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&(vars.len() as u16).to_le_bytes());
    bytes.extend_from_slice(&(instrs.len() as u16).to_le_bytes());
    for v in vars {
        bytes.extend_from_slice(&v.init.to_le_bytes());
    }
    for ins in instrs {
        bytes.extend_from_slice(&encode_record(ins));
    }
    BinaryImage { bytes }
}

pub(crate) fn encode_record(ins: &Instruction) -> [u8; CODE_RECORD_LEN] {
    let (dst, a, b, imm): (u8, u8, u8, i32) = match *ins {
        Instruction::Halt => (0, 0, 0, 0),
        Instruction::Const { dst, value } => (dst.0, 0, 0, value),
        Instruction::Mov { dst, src } => (dst.0, src.0, 0, 0),
        Instruction::Binary { dst, lhs, rhs, .. } => (dst.0, lhs.0, rhs.0, 0),
        Instruction::Out { src } => (0, src.0, 0, 0),
        Instruction::Jmp { target } => (0, 0, 0, target as i32),
        Instruction::Br {
            relop,
            lhs,
            rhs,
            then_target,
            else_target,
        } => {
            let packed = (then_target as u32 & 0xffff) | ((else_target as u32 & 0xffff) << 16);
            (relop as u8, lhs.0, rhs.0, packed as i32)
        }
    };
    let mut rec = [0u8; CODE_RECORD_LEN];
    rec[0] = ins.opcode() as u8;
    rec[1] = dst;
    rec[2] = a;
    rec[3] = b;
    rec[4..].copy_from_slice(&imm.to_le_bytes());
    rec
}

/// Decodes one code record the way the interpreter fetches it: operand
/// fields the opcode does not use are ignored, everything it does use is
/// range-checked against the image's segment sizes.
pub fn decode_record(
    rec: &[u8],
    var_count: usize,
    instr_count: usize,
) -> Result<Instruction, FetchError> {
    let opcode = Opcode::from_byte(rec[0]).ok_or(FetchError::InvalidOpcode(rec[0]))?;
    let var = |byte: u8| {
        if (byte as usize) < var_count {
            Ok(VarId(byte))
        } else {
            Err(FetchError::OperandOutOfRange(byte))
        }
    };
    let target = |t: usize| {
        if t < instr_count {
            Ok(t)
        } else {
            Err(FetchError::TargetOutOfRange(t))
        }
    };
    let imm = i32::from_le_bytes([rec[4], rec[5], rec[6], rec[7]]);
    let binary = |op| -> Result<Instruction, FetchError> {
        Ok(Instruction::Binary {
            op,
            dst: var(rec[1])?,
            lhs: var(rec[2])?,
            rhs: var(rec[3])?,
        })
    };
    Ok(match opcode {
        Opcode::Halt => Instruction::Halt,
        Opcode::Const => Instruction::Const {
            dst: var(rec[1])?,
            value: imm,
        },
        Opcode::Mov => Instruction::Mov {
            dst: var(rec[1])?,
            src: var(rec[2])?,
        },
        Opcode::Add => binary(BinOp::Add)?,
        Opcode::Sub => binary(BinOp::Sub)?,
        Opcode::Mul => binary(BinOp::Mul)?,
        Opcode::Div => binary(BinOp::Div)?,
        Opcode::Out => Instruction::Out { src: var(rec[2])? },
        Opcode::Jmp => Instruction::Jmp {
            target: target(imm as u32 as usize)?,
        },
        Opcode::Br => {
            let relop = Relop::from_code(rec[1]).ok_or(FetchError::InvalidRelop(rec[1]))?;
            let packed = imm as u32;
            Instruction::Br {
                relop,
                lhs: var(rec[2])?,
                rhs: var(rec[3])?,
                then_target: target((packed & 0xffff) as usize)?,
                else_target: target((packed >> 16) as usize)?,
            }
        }
    })
}

/// Decodes an arbitrary byte string. Variables get canonical names
/// `v0, v1, ...` since the image carries no symbols.
pub fn decode(bytes: &[u8]) -> Result<Program, DecodeError> {
    let (var_count, instr_count) = read_header(bytes)?;
    let expected = image_len(var_count, instr_count);
    if bytes.len() != expected {
        return Err(DecodeError::TrailingBytes {
            expected,
            actual: bytes.len(),
        });
    }
    let vars = bytes[HEADER_LEN..HEADER_LEN + WORD_LEN * var_count]
        .chunks_exact(WORD_LEN)
        .enumerate()
        .map(|(i, w)| {
            Variable::new(
                format!("v{i}"),
                i32::from_le_bytes([w[0], w[1], w[2], w[3]]),
            )
        })
        .collect();
    let code = &bytes[HEADER_LEN + WORD_LEN * var_count..];
    let mut instrs = Vec::with_capacity(instr_count);
    for (index, rec) in code.chunks_exact(CODE_RECORD_LEN).enumerate() {
        let ins = decode_record(rec, var_count, instr_count).map_err(|e| match e {
            FetchError::InvalidOpcode(byte) => DecodeError::InvalidOpcode { index, byte },
            FetchError::InvalidRelop(code) => DecodeError::InvalidRelop { index, code },
            FetchError::OperandOutOfRange(var) => DecodeError::OperandOutOfRange { index, var },
            FetchError::TargetOutOfRange(target) => DecodeError::TargetOutOfRange { index, target },
        })?;
        if encode_record(&ins)[..] != rec[..] {
            return Err(DecodeError::NonCanonical { index });
        }
        instrs.push(ins);
    }
    Program::new(vars, instrs).map_err(DecodeError::Structure)
}
