//! Data and control dependences between variables at program points.
//!
//! Nodes are `(variable, site)` pairs. At a defining instruction the node
//! stands for the value written there; at a BR it stands for the condition
//! operand read there; [`Site::Entry`] holds each variable's declared
//! initial value. An edge `from -> to` reads "`from` depends on `to`".
//!
//! Data edges follow reaching definitions. Control edges link a definition
//! (or a branch operand) to the operands of every branch it is control
//! dependent on, where control dependence comes from the postdominator tree
//! of the CFG.
//!
//! Variables that no instruction writes keep their declared value for the
//! whole run; they are named constants and never appear in a slice.

mod dominators;
mod loops;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::ir::{BlockId, Cfg, Instruction, Program, VarId};

pub use loops::{loop_depths, LoopInfo};

use dominators::immediate_dominators;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Entry,
    Instr(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarAt {
    pub var: VarId,
    pub site: Site,
}

impl VarAt {
    pub fn entry(var: VarId) -> Self {
        VarAt {
            var,
            site: Site::Entry,
        }
    }

    pub fn at(var: VarId, index: usize) -> Self {
        VarAt {
            var,
            site: Site::Instr(index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Data,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DependenceError {
    #[error("unknown variable {0}")]
    UnknownVariable(VarId),
    #[error("instruction {0} is not a branch")]
    NotABranch(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependenceGraph {
    var_count: usize,
    written: Vec<bool>,
    defs: Vec<Option<VarId>>,
    uses: Vec<Vec<VarId>>,
    /// Conditional branches (BR with distinct targets) each instruction is
    /// control dependent on.
    control_parents: Vec<Vec<usize>>,
    branches: Vec<usize>,
    /// Definitions of each variable that reach some HALT.
    final_defs: Vec<BTreeSet<VarAt>>,
    data: BTreeSet<(VarAt, VarAt)>,
    control: BTreeSet<(VarAt, VarAt)>,
    deps: BTreeMap<VarAt, BTreeSet<VarAt>>,
    dependents: BTreeMap<VarAt, BTreeSet<VarAt>>,
}

impl DependenceGraph {
    pub fn data_edges(&self) -> &BTreeSet<(VarAt, VarAt)> {
        &self.data
    }

    pub fn control_edges(&self) -> &BTreeSet<(VarAt, VarAt)> {
        &self.control
    }

    pub fn def(&self, index: usize) -> Option<VarId> {
        self.defs[index]
    }

    pub fn uses(&self, index: usize) -> &[VarId] {
        &self.uses[index]
    }

    pub fn var_count(&self) -> usize {
        self.var_count
    }

    /// Number of instructions in the analysed program.
    pub fn instr_count(&self) -> usize {
        self.defs.len()
    }

    /// Branch instructions that decide whether instruction `index` runs.
    pub fn control_parents(&self, index: usize) -> &[usize] {
        &self.control_parents[index]
    }

    /// Conditional branch instructions (BR with distinct targets), in
    /// program order.
    pub fn branches(&self) -> &[usize] {
        &self.branches
    }

    pub fn final_defs(&self, v: VarId) -> &BTreeSet<VarAt> {
        &self.final_defs[v.index()]
    }

    pub fn insert_edge(&mut self, kind: EdgeKind, from: VarAt, to: VarAt) -> bool {
        let fresh = match kind {
            EdgeKind::Data => self.data.insert((from, to)),
            EdgeKind::Control => self.control.insert((from, to)),
        };
        self.deps.entry(from).or_default().insert(to);
        self.dependents.entry(to).or_default().insert(from);
        fresh
    }

    fn check(&self, v: VarId) -> Result<(), DependenceError> {
        if v.index() < self.var_count {
            Ok(())
        } else {
            Err(DependenceError::UnknownVariable(v))
        }
    }

    fn closure(
        &self,
        start: impl IntoIterator<Item = VarAt>,
        adjacency: &BTreeMap<VarAt, BTreeSet<VarAt>>,
    ) -> BTreeSet<VarAt> {
        let mut seen: BTreeSet<VarAt> = BTreeSet::new();
        let mut queue: VecDeque<VarAt> = VecDeque::new();
        for s in start {
            if seen.insert(s) {
                queue.push_back(s);
            }
        }
        while let Some(node) = queue.pop_front() {
            for &next in adjacency.get(&node).into_iter().flatten() {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    fn initial_values_of(&self, nodes: &BTreeSet<VarAt>) -> BTreeSet<VarId> {
        nodes
            .iter()
            .filter(|n| n.site == Site::Entry && self.written[n.var.index()])
            .map(|n| n.var)
            .collect()
    }

    /// Variables whose initial values can influence the value `v` holds
    /// when the program halts.
    pub fn backward_slice(&self, v: VarId) -> Result<BTreeSet<VarId>, DependenceError> {
        self.check(v)?;
        let reached = self.closure(self.final_defs[v.index()].iter().copied(), &self.deps);
        Ok(self.initial_values_of(&reached))
    }

    /// Variables whose initial values can influence the outcome of the
    /// branch at instruction `index`.
    pub fn condition_slice(&self, index: usize) -> Result<BTreeSet<VarId>, DependenceError> {
        if !self.branches.contains(&index) {
            return Err(DependenceError::NotABranch(index));
        }
        let start = self.uses[index].iter().map(|&u| VarAt::at(u, index));
        Ok(self.initial_values_of(&self.closure(start, &self.deps)))
    }

    /// Variables whose value at halt is influenced, through at least one
    /// definition, by the initial value of `v`.
    pub fn forward_fanout(&self, v: VarId) -> Result<BTreeSet<VarId>, DependenceError> {
        self.check(v)?;
        let reached = self.closure([VarAt::entry(v)], &self.dependents);
        Ok(reached
            .iter()
            .filter(|n| {
                matches!(n.site, Site::Instr(_)) && self.final_defs[n.var.index()].contains(n)
            })
            .map(|n| n.var)
            .collect())
    }

    /// Graphviz rendering; solid edges are data, dashed edges control.
    pub fn to_dot(&self, program: &Program) -> String {
        let label = |n: &VarAt| match n.site {
            Site::Entry => format!("{}@entry", program.var_name(n.var)),
            Site::Instr(i) => format!("{}@{}", program.var_name(n.var), i),
        };
        let mut out = String::from("digraph dependence {\n");
        let nodes: BTreeSet<&VarAt> = self
            .data
            .iter()
            .chain(&self.control)
            .flat_map(|(a, b)| [a, b])
            .collect();
        for n in nodes {
            let _ = writeln!(out, "  \"{}\";", label(n));
        }
        for (a, b) in &self.data {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", label(a), label(b));
        }
        for (a, b) in &self.control {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [style=dashed];",
                label(a),
                label(b)
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Control dependence at block granularity: for each block, the blocks
/// ending in a two-way branch that decide whether it executes.
///
/// Postdominators are taken over the CFG plus a virtual exit fed by every
/// HALT block and by every block that cannot reach a HALT.
pub(crate) fn block_control_dependence(program: &Program, cfg: &Cfg) -> Vec<BTreeSet<BlockId>> {
    let n = cfg.len();
    let exit = n;
    let instrs = program.instrs();
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (from, to) in cfg.edges() {
        reverse[to.0].push(from.0);
    }
    let halts: Vec<usize> = cfg
        .blocks()
        .iter()
        .filter(|b| matches!(instrs[b.last()], Instruction::Halt))
        .map(|b| b.id.0)
        .collect();
    // blocks that can reach a HALT, by backward search
    let mut reaches = vec![false; n];
    let mut work = halts.clone();
    while let Some(b) = work.pop() {
        if !reaches[b] {
            reaches[b] = true;
            work.extend(cfg.predecessors(BlockId(b)).iter().map(|p| p.0));
        }
    }
    for (b, &live) in reaches.iter().enumerate() {
        if halts.contains(&b) || !live {
            reverse[exit].push(b);
        }
    }
    let ipdom = immediate_dominators(&reverse, exit);

    let mut cd = vec![BTreeSet::new(); n];
    for block in cfg.blocks() {
        let succs = cfg.successors(block.id);
        if succs.len() < 2 {
            continue;
        }
        let stop = ipdom[block.id.0];
        for &s in succs {
            let mut runner = Some(s.0);
            while let Some(r) = runner {
                if Some(r) == stop || r == exit {
                    break;
                }
                cd[r].insert(block.id);
                runner = ipdom[r].filter(|&up| up != r);
            }
        }
    }
    cd
}

/// Reaching definitions per instruction: `result[i]` holds the definition
/// nodes live on entry to instruction `i`. Iterative dataflow to fixpoint.
pub(crate) fn reaching_definitions(program: &Program, cfg: &Cfg) -> Vec<BTreeSet<VarAt>> {
    let instrs = program.instrs();
    let transfer = |set: &mut BTreeSet<VarAt>, index: usize| {
        if let Some(v) = instrs[index].def() {
            set.retain(|d| d.var != v);
            set.insert(VarAt::at(v, index));
        }
    };
    let entry_defs: BTreeSet<VarAt> = program.var_ids().map(VarAt::entry).collect();
    let n = cfg.len();
    let mut block_in: Vec<BTreeSet<VarAt>> = vec![BTreeSet::new(); n];
    let mut block_out: Vec<BTreeSet<VarAt>> = vec![BTreeSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for block in cfg.blocks() {
            let mut input: BTreeSet<VarAt> = if block.id == cfg.entry() {
                entry_defs.clone()
            } else {
                BTreeSet::new()
            };
            for p in cfg.predecessors(block.id) {
                input.extend(block_out[p.0].iter().copied());
            }
            let mut out = input.clone();
            for i in block.range() {
                transfer(&mut out, i);
            }
            block_in[block.id.0] = input;
            if out != block_out[block.id.0] {
                block_out[block.id.0] = out;
                changed = true;
            }
        }
    }
    let mut per_instr = vec![BTreeSet::new(); instrs.len()];
    for block in cfg.blocks() {
        let mut cur = block_in[block.id.0].clone();
        for i in block.range() {
            per_instr[i] = cur.clone();
            transfer(&mut cur, i);
        }
    }
    per_instr
}

pub fn analyze(program: &Program, cfg: &Cfg) -> DependenceGraph {
    let instrs = program.instrs();
    let var_count = program.var_count();
    let reaching = reaching_definitions(program, cfg);
    let block_cd = block_control_dependence(program, cfg);

    let defs: Vec<Option<VarId>> = instrs.iter().map(Instruction::def).collect();
    let uses: Vec<Vec<VarId>> = instrs
        .iter()
        .map(|i| match i {
            Instruction::Out { .. } => Vec::new(),
            other => other.uses(),
        })
        .collect();
    let control_parents: Vec<Vec<usize>> = (0..instrs.len())
        .map(|i| {
            block_cd[cfg.block_of(i).0]
                .iter()
                .map(|b| cfg.block(*b).last())
                .collect()
        })
        .collect();
    let mut graph = DependenceGraph {
        var_count,
        written: program.var_ids().map(|v| program.is_written(v)).collect(),
        defs,
        uses,
        control_parents,
        branches: instrs
            .iter()
            .enumerate()
            .filter(|(_, i)| {
                matches!(i, Instruction::Br { then_target, else_target, .. } if then_target != else_target)
            })
            .map(|(n, _)| n)
            .collect(),
        final_defs: vec![BTreeSet::new(); var_count],
        data: BTreeSet::new(),
        control: BTreeSet::new(),
        deps: BTreeMap::new(),
        dependents: BTreeMap::new(),
    };

    for (index, ins) in instrs.iter().enumerate() {
        // nodes carried by this instruction: its definition, or for a BR
        // its condition operands
        let carriers: Vec<VarAt> = match (ins.def(), ins) {
            (Some(v), _) => vec![VarAt::at(v, index)],
            (None, Instruction::Br { .. }) => ins
                .uses()
                .into_iter()
                .map(|u| VarAt::at(u, index))
                .collect(),
            _ => continue,
        };
        for &from in &carriers {
            for u in ins.uses() {
                for &d in reaching[index].iter().filter(|d| d.var == u) {
                    graph.insert_edge(EdgeKind::Data, from, d);
                }
            }
            for &branch in &graph.control_parents[index].clone() {
                for u in instrs[branch].uses() {
                    graph.insert_edge(EdgeKind::Control, from, VarAt::at(u, branch));
                }
            }
        }
    }

    for (index, ins) in instrs.iter().enumerate() {
        if matches!(ins, Instruction::Halt) {
            for &d in &reaching[index] {
                graph.final_defs[d.var.index()].insert(d);
            }
        }
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_cfg, parse_text};

    fn graph(src: &str) -> (Program, DependenceGraph) {
        let p = parse_text(src).unwrap();
        let g = analyze(&p, &build_cfg(&p));
        (p, g)
    }

    fn names(p: &Program, set: &BTreeSet<VarId>) -> Vec<String> {
        set.iter().map(|v| p.var_name(*v).to_string()).collect()
    }

    #[test]
    fn constants_only_have_no_edges() {
        let (p, g) = graph("var x = 0\nx = 1\nhalt");
        assert!(g.data_edges().is_empty());
        assert!(g.control_edges().is_empty());
        assert!(g.backward_slice(p.var_id("x").unwrap()).unwrap().is_empty());
    }

    #[test]
    fn untouched_variable_slices_to_itself_only_if_written() {
        let (p, g) = graph("var x = 4\nvar y = 0\nL: br y < x ? A : A\nA: y = 1\nhalt");
        // x is never written: a named constant
        assert!(g.backward_slice(p.var_id("x").unwrap()).unwrap().is_empty());
        assert!(g.forward_fanout(p.var_id("x").unwrap()).unwrap().is_empty());
    }

    #[test]
    fn diamond_control_dependence() {
        let src = "var c = 0\nvar a = 1\nvar r = 0\nvar k = 5\nc = c + k\n\
                   br c > a ? T : E\nT: r = a\njmp J\nE: r = k\nJ: out r\nhalt";
        let (p, g) = graph(src);
        let r = p.var_id("r").unwrap();
        assert_eq!(names(&p, &g.backward_slice(r).unwrap()), vec!["c"]);
        let c = p.var_id("c").unwrap();
        assert_eq!(names(&p, &g.forward_fanout(c).unwrap()), vec!["c", "r"]);
        // the join block is not control dependent on the branch
        assert!(g.control_parents(5).is_empty());
        assert_eq!(g.control_parents(2), &[1]);
        assert_eq!(g.branches(), &[1]);
    }

    #[test]
    fn unknown_variable_is_an_error() {
        let (_, g) = graph("halt");
        assert_eq!(
            g.backward_slice(VarId(0)),
            Err(DependenceError::UnknownVariable(VarId(0)))
        );
        assert_eq!(g.condition_slice(0), Err(DependenceError::NotABranch(0)));
    }

    #[test]
    fn dot_export_marks_control_edges_dashed() {
        let (p, g) =
            graph("var i = 2\nvar one = 1\nL: br i > one ? B : X\nB: i = i - one\njmp L\nX: halt");
        let dot = g.to_dot(&p);
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"i@1\" -> \"i@0\" [style=dashed];"));
        assert!(dot.contains("\"i@1\" -> \"i@entry\";"));
    }
}
