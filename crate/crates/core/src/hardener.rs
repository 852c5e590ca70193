//! Hardened containers: a working image that faults may hit, a golden
//! backup image with its CRC-32, and a manifest naming the blocks that run
//! under twin execution.
//!
//! Container layout:
//!
//! ```text
//! backup image | working image | crc32(backup): u32 LE | len: u32 LE | manifest JSON
//! ```
//!
//! The CRC is IEEE CRC-32 (reflected polynomial 0xEDB88320).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{
    build_cfg, decode, encode, BinaryImage, BlockId, Cfg, DecodeError, Instruction, Program,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardeningMode {
    None,
    Critical,
    Full,
}

impl HardeningMode {
    pub const ALL: [HardeningMode; 3] = [
        HardeningMode::None,
        HardeningMode::Critical,
        HardeningMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HardeningMode::None => "none",
            HardeningMode::Critical => "critical",
            HardeningMode::Full => "full",
        }
    }
}

impl fmt::Display for HardeningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HardeningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(HardeningMode::None),
            "critical" => Ok(HardeningMode::Critical),
            "full" => Ok(HardeningMode::Full),
            other => Err(format!(
                "unknown mode `{other}` (expected none, critical or full)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProtectedBlock {
    pub id: BlockId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: HardeningMode,
    pub protected_blocks: Vec<ProtectedBlock>,
    /// Variables read or written inside protected blocks.
    pub protected_variables: Vec<String>,
    /// Critical blocks chosen by analysis; kept so other modes can be
    /// rebuilt from the container.
    pub critical_blocks: Vec<BlockId>,
    /// Variable names, in declaration order.
    pub symbols: Vec<String>,
}

impl Manifest {
    /// Index of the protected block starting at instruction `pc`.
    pub fn protected_at(&self, pc: usize) -> Option<&ProtectedBlock> {
        self.protected_blocks
            .binary_search_by_key(&pc, |b| b.start)
            .ok()
            .map(|i| &self.protected_blocks[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardenedProgram {
    working: Vec<u8>,
    backup: BinaryImage,
    backup_crc: u32,
    manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HardenError {
    #[error("block {0} does not exist in the program's CFG")]
    UnknownBlock(BlockId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("backup image: {0}")]
    Backup(DecodeError),
    #[error("container truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("backup integrity check failed: stored crc {stored:08x}, computed {computed:08x}")]
pub struct IntegrityError {
    pub stored: u32,
    pub computed: u32,
}

/// Blocks twin execution is worth applying to: anything with a
/// non-terminator instruction or a conditional branch.
pub fn protectable(program: &Program, cfg: &Cfg) -> BTreeSet<BlockId> {
    let instrs = program.instrs();
    cfg.blocks()
        .iter()
        .filter(|b| {
            instrs[b.range()]
                .iter()
                .any(|i| !i.is_terminator() || matches!(i, Instruction::Br { .. }))
        })
        .map(|b| b.id)
        .collect()
}

pub fn harden(
    program: &Program,
    critical_blocks: &BTreeSet<BlockId>,
    mode: HardeningMode,
) -> Result<HardenedProgram, HardenError> {
    let cfg = build_cfg(program);
    if let Some(&bad) = critical_blocks.iter().find(|b| b.0 >= cfg.len()) {
        return Err(HardenError::UnknownBlock(bad));
    }
    let eligible = protectable(program, &cfg);
    let chosen: BTreeSet<BlockId> = match mode {
        HardeningMode::None => BTreeSet::new(),
        HardeningMode::Critical => critical_blocks.intersection(&eligible).copied().collect(),
        HardeningMode::Full => eligible,
    };
    let protected_blocks: Vec<ProtectedBlock> = chosen
        .iter()
        .map(|&id| ProtectedBlock {
            id,
            start: cfg.block(id).start,
            end: cfg.block(id).end,
        })
        .collect();
    let touched: BTreeSet<_> = protected_blocks
        .iter()
        .flat_map(|b| program.instrs()[b.start..b.end].iter())
        .flat_map(|i| i.uses().into_iter().chain(i.def()))
        .collect();
    let image = encode(program);
    Ok(HardenedProgram {
        working: image.as_bytes().to_vec(),
        backup_crc: crc32fast::hash(image.as_bytes()),
        backup: image,
        manifest: Manifest {
            mode,
            protected_blocks,
            protected_variables: touched
                .iter()
                .map(|&v| program.var_name(v).to_string())
                .collect(),
            critical_blocks: critical_blocks.iter().copied().collect(),
            symbols: program.vars().iter().map(|v| v.name.clone()).collect(),
        },
    })
}

/// Checks the stored CRC-32 against the backup bytes.
pub fn verify_backup(h: &HardenedProgram) -> Result<(), IntegrityError> {
    let computed = crc32fast::hash(h.backup.as_bytes());
    if computed == h.backup_crc {
        Ok(())
    } else {
        Err(IntegrityError {
            stored: h.backup_crc,
            computed,
        })
    }
}

impl HardenedProgram {
    pub fn working_image(&self) -> &[u8] {
        &self.working
    }

    pub fn backup_image(&self) -> &BinaryImage {
        &self.backup
    }

    pub fn backup_crc(&self) -> u32 {
        self.backup_crc
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn mode(&self) -> HardeningMode {
        self.manifest.mode
    }

    /// The golden program, with its original variable names.
    pub fn program(&self) -> Result<Program, DecodeError> {
        let p = decode(self.backup.as_bytes())?;
        p.with_names(&self.manifest.symbols)
            .map_err(DecodeError::Structure)
    }

    /// The same program hardened under another mode, reusing the critical
    /// blocks recorded in this container.
    pub fn rehardened(&self, mode: HardeningMode) -> Result<HardenedProgram, DecodeError> {
        let program = self.program()?;
        let critical = self.manifest.critical_blocks.iter().copied().collect();
        Ok(harden(&program, &critical, mode).expect("recorded blocks come from this program"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(2 * self.backup.len() + 8 + manifest.len());
        out.extend_from_slice(self.backup.as_bytes());
        out.extend_from_slice(&self.working);
        out.extend_from_slice(&self.backup_crc.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out
    }

    /// Parses a container. The CRC is not checked here; call
    /// [`verify_backup`] before running. The working image only has to
    /// match the backup in length; it is validated when a run loads it.
    pub fn from_bytes(bytes: &[u8]) -> Result<HardenedProgram, ContainerError> {
        let image_len = BinaryImage::len_from_header(bytes).map_err(ContainerError::Backup)?;
        let need = |n: usize| {
            if bytes.len() < n {
                Err(ContainerError::Truncated {
                    expected: n,
                    actual: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(2 * image_len + 8)?;
        let backup =
            BinaryImage::from_bytes(bytes[..image_len].to_vec()).map_err(ContainerError::Backup)?;
        let working = bytes[image_len..2 * image_len].to_vec();
        let at = 2 * image_len;
        let word =
            |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let backup_crc = word(at);
        let manifest_len = word(at + 4) as usize;
        need(at + 8 + manifest_len)?;
        if bytes.len() != at + 8 + manifest_len {
            return Err(ContainerError::Manifest(format!(
                "{} trailing bytes after manifest",
                bytes.len() - (at + 8 + manifest_len)
            )));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[at + 8..])
            .map_err(|e| ContainerError::Manifest(e.to_string()))?;
        Ok(HardenedProgram {
            working,
            backup,
            backup_crc,
            manifest,
        })
    }
}
