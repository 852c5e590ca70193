//! Fault-injection campaigns: golden runs, trials, outcome classes,
//! aggregates and fault-free overhead tables.

mod generator;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{enumerate_fault_space, sample_faults, FaultSpec, TriggerRange};
use crate::hardener::{
    harden, verify_backup, HardenError, HardenedProgram, HardeningMode, IntegrityError,
};
use crate::ir::{BlockId, DecodeError, Program};
use crate::vm::{run, RunError, RunResult, Status};

pub use generator::{generate_random_program, GeneratorBounds, GeneratorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeClass {
    DetectedRecovered,
    Benign,
    Sdc,
    Crash,
    Hang,
    DetectedNotRecovered,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 6] = [
        OutcomeClass::DetectedRecovered,
        OutcomeClass::Benign,
        OutcomeClass::Sdc,
        OutcomeClass::Crash,
        OutcomeClass::Hang,
        OutcomeClass::DetectedNotRecovered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::DetectedRecovered => "detected-recovered",
            OutcomeClass::Benign => "benign",
            OutcomeClass::Sdc => "sdc",
            OutcomeClass::Crash => "crash",
            OutcomeClass::Hang => "hang",
            OutcomeClass::DetectedNotRecovered => "detected-not-recovered",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OutcomeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown outcome `{s}`"))
    }
}

/// Status decides first (trap, step limit), then detections, then
/// whether the tape matches the golden tape.
pub fn classify_outcome(r: &RunResult, golden: &RunResult) -> OutcomeClass {
    match r.status {
        Status::Trapped { .. } => OutcomeClass::Crash,
        Status::StepLimit => OutcomeClass::Hang,
        Status::Halted => {
            let same = r.output_tape == golden.output_tape;
            match (r.detections.is_empty(), same) {
                (false, true) => OutcomeClass::DetectedRecovered,
                (false, false) => OutcomeClass::DetectedNotRecovered,
                (true, true) => OutcomeClass::Benign,
                (true, false) => OutcomeClass::Sdc,
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("golden run did not halt: {0:?}")]
    GoldenDidNotHalt(Status),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("backup does not decode: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Harden(#[from] HardenError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("no modes requested")]
    NoModes,
}

/// Fault-free run of the unhardened program.
pub fn golden_run(p: &Program, step_limit: u64) -> Result<RunResult, CampaignError> {
    let h = harden(p, &BTreeSet::new(), HardeningMode::None).expect("no blocks requested");
    let r = run(&h, None, step_limit)?;
    match r.status {
        Status::Halted => Ok(r),
        other => Err(CampaignError::GoldenDidNotHalt(other)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultSource {
    Exhaustive,
    Sample {
        n: usize,
        seed: u64,
    },
    /// An explicit list; rows come back sorted like the other sources.
    List(Vec<FaultSpec>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignConfig {
    pub modes: Vec<HardeningMode>,
    pub source: FaultSource,
    pub triggers: TriggerRange,
    pub step_limit: u64,
    /// Worker threads; 0 means rayon's default.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRow {
    pub mode: HardeningMode,
    pub fault: FaultSpec,
    pub outcome: OutcomeClass,
    pub detections: usize,
    pub recoveries: u32,
    pub dyn_instr: u64,
    pub tape_equal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: HardeningMode,
    pub trials: u64,
    pub counts: BTreeMap<OutcomeClass, u64>,
    /// Class count over all trials.
    pub fractions: BTreeMap<OutcomeClass, f64>,
    /// Trials that were not benign.
    pub coverage_denominator: u64,
    /// DetectedRecovered over non-benign trials; absent when every trial
    /// was benign.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub mode: HardeningMode,
    pub dyn_instr: u64,
    pub shadow_bytes: usize,
    pub protected_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub golden_tape: Vec<i32>,
    pub golden_dyn_instr: u64,
    pub modes: Vec<ModeSummary>,
    pub overhead: Vec<OverheadRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub rows: Vec<TrialRow>,
    pub summary: CampaignSummary,
}

pub const CSV_HEADER: &str =
    "mode,segment,byte,bit,trigger,outcome,detections,recoveries,dyn_instr,tape_equal";

impl CampaignResult {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[TrialRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let f = &r.fault;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.mode,
            f.segment,
            f.byte_index,
            f.bit_index,
            f.trigger,
            r.outcome,
            r.detections,
            r.recoveries,
            r.dyn_instr,
            r.tape_equal
        )
        .expect("writing to a String");
    }
    out
}

pub fn summarize(mode: HardeningMode, rows: &[TrialRow]) -> ModeSummary {
    let mut counts: BTreeMap<OutcomeClass, u64> =
        OutcomeClass::ALL.iter().map(|&c| (c, 0)).collect();
    for r in rows.iter().filter(|r| r.mode == mode) {
        *counts.get_mut(&r.outcome).expect("all classes present") += 1;
    }
    let trials: u64 = counts.values().sum();
    let fractions = counts
        .iter()
        .map(|(&c, &n)| {
            (
                c,
                if trials == 0 {
                    0.0
                } else {
                    n as f64 / trials as f64
                },
            )
        })
        .collect();
    let denominator = trials - counts[&OutcomeClass::Benign];
    let coverage = (denominator > 0)
        .then(|| counts[&OutcomeClass::DetectedRecovered] as f64 / denominator as f64);
    ModeSummary {
        mode,
        trials,
        counts,
        fractions,
        coverage_denominator: denominator,
        coverage,
    }
}

/// Runs one trial per fault per mode. Rows come back sorted by mode, then
/// fault, whatever the thread count.
pub fn run_campaign(
    h: &HardenedProgram,
    config: &CampaignConfig,
) -> Result<CampaignResult, CampaignError> {
    verify_backup(h)?;
    if config.modes.is_empty() {
        return Err(CampaignError::NoModes);
    }
    let program = h.program()?;
    let golden = golden_run(&program, config.step_limit)?;
    let faults = match &config.source {
        FaultSource::Exhaustive => enumerate_fault_space(h, config.triggers),
        FaultSource::Sample { n, seed } => sample_faults(h, config.triggers, *n, *seed),
        FaultSource::List(list) => list.clone(),
    };
    for f in &faults {
        f.validate(h).map_err(RunError::from)?;
    }
    let modes: BTreeSet<HardeningMode> = config.modes.iter().copied().collect();
    let containers: Vec<HardenedProgram> = modes
        .iter()
        .map(|&m| h.rehardened(m))
        .collect::<Result<_, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CampaignError::Pool(e.to_string()))?;
    let step_limit = config.step_limit;
    let mut rows: Vec<TrialRow> = pool.install(|| {
        containers
            .iter()
            .flat_map(|c| faults.iter().map(move |f| (c, f)))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(c, f)| {
                let r = run(c, Some(f), step_limit).expect("container and fault were validated");
                TrialRow {
                    mode: c.mode(),
                    fault: *f,
                    outcome: classify_outcome(&r, &golden),
                    detections: r.detections.len(),
                    recoveries: r.recoveries,
                    dyn_instr: r.dyn_instr_count,
                    tape_equal: r.output_tape == golden.output_tape,
                }
            })
            .collect()
    });
    rows.sort_by_key(|r| (r.mode, r.fault));
    let critical: BTreeSet<BlockId> = h.manifest().critical_blocks.iter().copied().collect();
    let summary = CampaignSummary {
        golden_tape: golden.output_tape.clone(),
        golden_dyn_instr: golden.dyn_instr_count,
        modes: modes.iter().map(|&m| summarize(m, &rows)).collect(),
        overhead: overhead_report(&program, &critical, step_limit)?,
    };
    Ok(CampaignResult { rows, summary })
}

/// Fault-free cost of each mode.
pub fn overhead_report(
    p: &Program,
    critical_blocks: &BTreeSet<BlockId>,
    step_limit: u64,
) -> Result<Vec<OverheadRow>, CampaignError> {
    HardeningMode::ALL
        .iter()
        .map(|&mode| {
            let h = harden(p, critical_blocks, mode)?;
            let r = run(&h, None, step_limit)?;
            Ok(OverheadRow {
                mode,
                dyn_instr: r.dyn_instr_count,
                shadow_bytes: r.shadow_bytes,
                protected_blocks: h.manifest().protected_blocks.len(),
            })
        })
        .collect()
}

pub fn overhead_csv(rows: &[OverheadRow]) -> String {
    let mut out = String::from("mode,dyn_instr,shadow_bytes,protected_blocks\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.mode, r.dyn_instr, r.shadow_bytes, r.protected_blocks
        )
        .expect("String write");
    }
    out
}
