//! Single-bit upsets in the working image's code segment or in the data
//! store, and the fault spaces campaigns draw from.
//!
//! Random sampling uses ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`; each draw is one `gen_range(0..space_size)` over the
//! enumeration order, so a seed fixes the sampled list exactly.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardener::HardenedProgram;
use crate::ir::CODE_RECORD_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Code,
    Data,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Code => "code",
            Segment::Data => "data",
        }
    }

    /// Injectable bytes of this segment for `h`.
    pub fn len_in(self, h: &HardenedProgram) -> usize {
        let image = h.backup_image();
        match self {
            Segment::Code => CODE_RECORD_LEN * image.instr_count(),
            Segment::Data => 4 * image.var_count(),
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One bit flip. Field order is the canonical ordering of fault spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub segment: Segment,
    /// Offset within the code segment or the data store.
    pub byte_index: usize,
    /// 0 is the least significant bit.
    pub bit_index: u8,
    /// The flip happens right before this dynamic instruction (0-based).
    pub trigger: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultError {
    #[error("malformed fault `{0}`, expected segment:byte:bit@trigger")]
    Syntax(String),
    #[error("unknown segment `{0}` (expected code or data)")]
    UnknownSegment(String),
    #[error("bit index {0} out of range 0..=7")]
    BitOutOfRange(u64),
    #[error("{segment} byte {byte} out of range; segment has {len} bytes")]
    ByteOutOfRange {
        segment: Segment,
        byte: usize,
        len: usize,
    },
    #[error("MSB-first bit position {0} out of range 1..=8")]
    MsbPositionOutOfRange(u8),
    #[error("malformed trigger range `{0}`, expected a..b or a single number")]
    Range(String),
}

impl FaultSpec {
    pub fn validate(&self, h: &HardenedProgram) -> Result<(), FaultError> {
        let len = self.segment.len_in(h);
        if self.byte_index >= len {
            return Err(FaultError::ByteOutOfRange {
                segment: self.segment,
                byte: self.byte_index,
                len,
            });
        }
        Ok(())
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}@{}",
            self.segment, self.byte_index, self.bit_index, self.trigger
        )
    }
}

impl FromStr for FaultSpec {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || FaultError::Syntax(s.to_string());
        let (location, trigger) = s.split_once('@').ok_or_else(syntax)?;
        let mut parts = location.split(':');
        let (Some(seg), Some(byte), Some(bit), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(syntax());
        };
        let segment = match seg {
            "code" => Segment::Code,
            "data" => Segment::Data,
            other => return Err(FaultError::UnknownSegment(other.to_string())),
        };
        let byte_index = byte.parse().map_err(|_| syntax())?;
        let bit: u64 = bit.parse().map_err(|_| syntax())?;
        if bit > 7 {
            return Err(FaultError::BitOutOfRange(bit));
        }
        let trigger = trigger.parse().map_err(|_| syntax())?;
        Ok(FaultSpec {
            segment,
            byte_index,
            bit_index: bit as u8,
            trigger,
        })
    }
}

/// XOR with `1 << bit_index`.
///
/// # Panics
///
/// If `bit_index > 7`.
pub fn flip_bit(byte: u8, bit_index: u8) -> u8 {
    assert!(bit_index <= 7, "bit index {bit_index} out of range");
    byte ^ (1 << bit_index)
}

/// Converts a position counted 1..=8 from the most significant bit into an
/// LSB-0 bit index.
pub fn msb_position_to_index(position: u8) -> Result<u8, FaultError> {
    if (1..=8).contains(&position) {
        Ok(8 - position)
    } else {
        Err(FaultError::MsbPositionOutOfRange(position))
    }
}

/// Inclusive trigger range; `end < start` is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRange {
    pub start: u64,
    pub end: u64,
}

impl TriggerRange {
    pub fn new(start: u64, end: u64) -> Self {
        TriggerRange { start, end }
    }

    pub fn single(t: u64) -> Self {
        TriggerRange { start: t, end: t }
    }

    pub fn len(&self) -> u64 {
        if self.end < self.start {
            0
        } else {
            self.end - self.start + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<u64> {
        self.start..=self.end
    }
}

impl fmt::Display for TriggerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for TriggerRange {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FaultError::Range(s.to_string());
        match s.split_once("..") {
            Some((a, b)) => Ok(TriggerRange::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            )),
            None => Ok(TriggerRange::single(s.trim().parse().map_err(|_| bad())?)),
        }
    }
}

/// Every `(segment, byte, bit, trigger)` combination, code before data,
/// then ascending byte, bit and trigger.
pub fn enumerate_fault_space(h: &HardenedProgram, triggers: TriggerRange) -> Vec<FaultSpec> {
    enumerate_bytes(h, &[Segment::Code, Segment::Data], triggers)
}

/// The fault space restricted to the given segments.
pub fn enumerate_bytes(
    h: &HardenedProgram,
    segments: &[Segment],
    triggers: TriggerRange,
) -> Vec<FaultSpec> {
    let mut out = Vec::new();
    for &segment in segments {
        for byte_index in 0..segment.len_in(h) {
            push_byte(&mut out, segment, byte_index, triggers);
        }
    }
    out
}

/// All bits of the given bytes of one segment at every trigger, in
/// canonical order.
pub fn enumerate_byte_range(
    segment: Segment,
    bytes: std::ops::Range<usize>,
    triggers: TriggerRange,
) -> Vec<FaultSpec> {
    let mut out = Vec::new();
    for byte_index in bytes {
        push_byte(&mut out, segment, byte_index, triggers);
    }
    out
}

fn push_byte(
    out: &mut Vec<FaultSpec>,
    segment: Segment,
    byte_index: usize,
    triggers: TriggerRange,
) {
    for bit_index in 0..8 {
        for trigger in triggers.iter() {
            out.push(FaultSpec {
                segment,
                byte_index,
                bit_index,
                trigger,
            });
        }
    }
}

/// `n` draws, with replacement, uniform over [`enumerate_fault_space`].
/// An empty space yields an empty list.
pub fn sample_faults(
    h: &HardenedProgram,
    triggers: TriggerRange,
    n: usize,
    seed: u64,
) -> Vec<FaultSpec> {
    sample_space(
        Segment::Code.len_in(h),
        Segment::Data.len_in(h),
        triggers,
        n,
        seed,
    )
}

fn sample_space(
    code: usize,
    data: usize,
    triggers: TriggerRange,
    n: usize,
    seed: u64,
) -> Vec<FaultSpec> {
    let (code, data) = (code as u64, data as u64);
    let t = triggers.len();
    let per_byte = 8 * t;
    let size = (code + data) * per_byte;
    if size == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(0..size);
            let byte = k / per_byte;
            let rest = k % per_byte;
            let (segment, byte_index) = if byte < code {
                (Segment::Code, byte)
            } else {
                (Segment::Data, byte - code)
            };
            FaultSpec {
                segment,
                byte_index: byte_index as usize,
                bit_index: (rest / t) as u8,
                trigger: triggers.start + rest % t,
            }
        })
        .collect()
}
