use std::collections::BTreeSet;

use crate::ir::{BlockId, Cfg, Program, VarId};

use super::dominators::{dominates, immediate_dominators};

/// Natural-loop nesting depth per block and per variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopInfo {
    block_depth: Vec<u32>,
    headers: BTreeSet<BlockId>,
    var_depth: Vec<u32>,
}

impl LoopInfo {
    pub fn block_depth(&self, b: BlockId) -> u32 {
        self.block_depth[b.0]
    }

    pub fn block_depths(&self) -> &[u32] {
        &self.block_depth
    }

    /// Deepest loop nesting of any instruction that writes `v`; 0 when `v`
    /// is only ever its declared value.
    pub fn var_depth(&self, v: VarId) -> u32 {
        self.var_depth[v.index()]
    }

    pub fn headers(&self) -> &BTreeSet<BlockId> {
        &self.headers
    }
}

/// Natural loops from dominator back edges. Loops sharing a header count
/// once, so each enclosing header adds one level of depth.
pub fn loop_depths(program: &Program, cfg: &Cfg) -> LoopInfo {
    let n = cfg.len();
    let succs: Vec<Vec<usize>> = (0..n)
        .map(|b| cfg.successors(BlockId(b)).iter().map(|s| s.0).collect())
        .collect();
    let idom = immediate_dominators(&succs, cfg.entry().0);

    let mut bodies: Vec<(usize, BTreeSet<usize>)> = Vec::new();
    for (from, tos) in succs.iter().enumerate() {
        if idom[from].is_none() {
            continue;
        }
        for &header in tos {
            if !dominates(&idom, header, from) {
                continue;
            }
            let body = match bodies.iter_mut().find(|(h, _)| *h == header) {
                Some((_, body)) => body,
                None => {
                    bodies.push((header, BTreeSet::from([header])));
                    &mut bodies.last_mut().unwrap().1
                }
            };
            let mut work = vec![from];
            while let Some(b) = work.pop() {
                if idom[b].is_some() && body.insert(b) {
                    work.extend(cfg.predecessors(BlockId(b)).iter().map(|p| p.0));
                }
            }
        }
    }

    let mut block_depth = vec![0u32; n];
    for (_, body) in &bodies {
        for &b in body {
            block_depth[b] += 1;
        }
    }
    let mut var_depth = vec![0u32; program.var_count()];
    for (i, ins) in program.instrs().iter().enumerate() {
        if let Some(v) = ins.def() {
            let d = block_depth[cfg.block_of(i).0];
            var_depth[v.index()] = var_depth[v.index()].max(d);
        }
    }
    LoopInfo {
        block_depth,
        headers: bodies.iter().map(|(h, _)| BlockId(*h)).collect(),
        var_depth,
    }
}
