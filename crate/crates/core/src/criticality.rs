//! Variable criticality scores and critical-variable / critical-block
//! selection.
//!
//! Each variable gets
//!
//! ```text
//! score(v) = w_control * C(v) + w_fanout * F(v) + w_loop * L(v)
//! ```
//!
//! where `C(v)` counts the conditional branches whose condition `v` can
//! influence, `F(v)` is the size of `v`'s forward fan-out and `L(v)` is the
//! deepest loop nesting of any definition of `v`. Variables scoring at
//! least the threshold are critical. A block is critical when it ends in a
//! conditional branch that a critical variable can steer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dependence::{DependenceGraph, LoopInfo};
use crate::ir::{BlockId, Cfg, Program, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalityWeights {
    pub control: f64,
    pub fanout: f64,
    pub loop_depth: f64,
    pub threshold: f64,
}

impl Default for CriticalityWeights {
    /// Feeding any branch alone reaches the threshold; fan-out and loop
    /// depth refine the ranking.
    fn default() -> Self {
        CriticalityWeights {
            control: 4.0,
            fanout: 1.0,
            loop_depth: 2.0,
            threshold: 4.0,
        }
    }
}

impl CriticalityWeights {
    pub fn validate(&self) -> Result<(), CriticalityError> {
        for (name, value) in [
            ("w_control", self.control),
            ("w_fanout", self.fanout),
            ("w_loop", self.loop_depth),
            ("theta", self.threshold),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(CriticalityError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CriticalityWeights {
            control: self.control * factor,
            fanout: self.fanout * factor,
            loop_depth: self.loop_depth * factor,
            threshold: self.threshold * factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriticalityError {
    #[error("{name} must be finite and non-negative, got {value}")]
    InvalidWeight { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableScore {
    pub var: VarId,
    /// Conditional branches whose condition slice contains the variable.
    pub control: u32,
    /// Size of the forward fan-out.
    pub fanout: u32,
    /// Deepest loop nesting of a definition.
    pub loop_depth: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockReason {
    ConditionalTerminator,
    DefinesCriticalVariable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalityReport {
    pub weights: CriticalityWeights,
    pub scores: Vec<VariableScore>,
    pub critical_variables: BTreeSet<VarId>,
    /// Condition slice of every conditional branch, keyed by instruction.
    pub branch_slices: BTreeMap<usize, BTreeSet<VarId>>,
    /// `(instruction, variable)` for every defining instruction.
    pub definitions: Vec<(usize, VarId)>,
}

impl CriticalityReport {
    pub fn score(&self, v: VarId) -> &VariableScore {
        &self.scores[v.index()]
    }

    /// The same report with a narrower critical set, e.g. after top-k.
    pub fn with_critical(&self, critical: BTreeSet<VarId>) -> Self {
        CriticalityReport {
            critical_variables: critical,
            ..self.clone()
        }
    }
}

pub fn score_variables(
    graph: &DependenceGraph,
    loops: &LoopInfo,
    weights: &CriticalityWeights,
) -> Result<CriticalityReport, CriticalityError> {
    weights.validate()?;
    let branch_slices: BTreeMap<usize, BTreeSet<VarId>> = graph
        .branches()
        .iter()
        .map(|&b| (b, graph.condition_slice(b).expect("listed branch")))
        .collect();
    let scores: Vec<VariableScore> = (0..graph.var_count())
        .map(|i| {
            let var = VarId(i as u8);
            let control = branch_slices.values().filter(|s| s.contains(&var)).count() as u32;
            let fanout = graph.forward_fanout(var).expect("declared variable").len() as u32;
            let loop_depth = loops.var_depth(var);
            let score = weights.control * control as f64
                + weights.fanout * fanout as f64
                + weights.loop_depth * loop_depth as f64;
            VariableScore {
                var,
                control,
                fanout,
                loop_depth,
                score,
            }
        })
        .collect();
    let critical_variables = scores
        .iter()
        .filter(|s| s.score >= weights.threshold)
        .map(|s| s.var)
        .collect();
    let definitions = (0..graph.instr_count())
        .filter_map(|i| graph.def(i).map(|v| (i, v)))
        .collect();
    Ok(CriticalityReport {
        weights: *weights,
        scores,
        critical_variables,
        branch_slices,
        definitions,
    })
}

/// The threshold set, optionally intersected with the `top_k` highest
/// scores. Equal scores rank by declaration order.
pub fn select_critical_variables(
    report: &CriticalityReport,
    top_k: Option<usize>,
) -> BTreeSet<VarId> {
    match top_k {
        None => report.critical_variables.clone(),
        Some(k) => {
            let mut ranked: Vec<&VariableScore> = report.scores.iter().collect();
            // stable sort keeps declaration order among ties
            ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
            ranked
                .into_iter()
                .take(k)
                .map(|s| s.var)
                .filter(|v| report.critical_variables.contains(v))
                .collect()
        }
    }
}

/// Blocks ending in a conditional branch whose condition slice contains a
/// critical variable, plus, with `protect_defs`, blocks that write one.
/// A block qualifying both ways is tagged as a conditional terminator.
pub fn select_critical_blocks(
    cfg: &Cfg,
    report: &CriticalityReport,
    protect_defs: bool,
) -> BTreeMap<BlockId, BlockReason> {
    let mut out = BTreeMap::new();
    if protect_defs {
        for &(index, var) in &report.definitions {
            if report.critical_variables.contains(&var) {
                out.insert(cfg.block_of(index), BlockReason::DefinesCriticalVariable);
            }
        }
    }
    for (&branch, slice) in &report.branch_slices {
        if !slice.is_disjoint(&report.critical_variables) {
            out.insert(cfg.block_of(branch), BlockReason::ConditionalTerminator);
        }
    }
    out
}

/// Options for [`analyze_program`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionOptions {
    pub weights: CriticalityWeights,
    pub top_k: Option<usize>,
    pub protect_defs: bool,
}

/// Dependence analysis, scoring and block selection in one call.
pub fn analyze_program(
    program: &Program,
    options: &SelectionOptions,
) -> Result<(CriticalityReport, BTreeMap<BlockId, BlockReason>), CriticalityError> {
    let cfg = crate::ir::build_cfg(program);
    let graph = crate::dependence::analyze(program, &cfg);
    let loops = crate::dependence::loop_depths(program, &cfg);
    let report = score_variables(&graph, &loops, &options.weights)?;
    let report = report.with_critical(select_critical_variables(&report, options.top_k));
    let blocks = select_critical_blocks(&cfg, &report, options.protect_defs);
    Ok((report, blocks))
}

/// JSON shape of a report: one row per variable plus the chosen blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub weights: CriticalityWeights,
    pub variables: Vec<VariableRow>,
    pub critical_blocks: Vec<BlockRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableRow {
    pub name: String,
    #[serde(rename = "C")]
    pub control: u32,
    #[serde(rename = "F")]
    pub fanout: u32,
    #[serde(rename = "L")]
    pub loop_depth: u32,
    pub score: f64,
    pub critical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub id: BlockId,
    pub start: usize,
    pub end: usize,
    pub reason: BlockReason,
}

impl ReportDocument {
    pub fn new(
        program: &Program,
        cfg: &Cfg,
        report: &CriticalityReport,
        blocks: &BTreeMap<BlockId, BlockReason>,
    ) -> Self {
        ReportDocument {
            weights: report.weights,
            variables: report
                .scores
                .iter()
                .map(|s| VariableRow {
                    name: program.var_name(s.var).to_string(),
                    control: s.control,
                    fanout: s.fanout,
                    loop_depth: s.loop_depth,
                    score: s.score,
                    critical: report.critical_variables.contains(&s.var),
                })
                .collect(),
            critical_blocks: blocks
                .iter()
                .map(|(&id, &reason)| BlockRow {
                    id,
                    start: cfg.block(id).start,
                    end: cfg.block(id).end,
                    reason,
                })
                .collect(),
        }
    }
}
