//! Brute-force oracles shared by the integration tests. Nothing here uses
//! the crate's own CFG, dataflow or dominator code; everything works on the
//! raw instruction list.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::path::PathBuf;

use twinguard::campaign::{generate_random_program, GeneratorBounds};
use twinguard::dependence::VarAt;
use twinguard::ir::{parse_text, Instruction, Program, VarId};

pub fn corpus_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("corpus")
        .join(name)
}

pub fn corpus(name: &str) -> Program {
    let text = std::fs::read_to_string(corpus_path(name)).expect("corpus file");
    parse_text(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn small_programs(count: u64, seed_base: u64, max_instructions: usize) -> Vec<Program> {
    let bounds = GeneratorBounds {
        max_instructions,
        ..GeneratorBounds::default()
    };
    (0..count)
        .map(|s| generate_random_program(seed_base + s, &bounds).expect("feasible bounds"))
        .collect()
}

/// Instruction graph with a virtual exit node `n` after every HALT.
pub struct InstrGraph {
    pub n: usize,
    pub succ: Vec<Vec<usize>>,
}

impl InstrGraph {
    pub fn new(p: &Program) -> Self {
        let n = p.len();
        let mut succ: Vec<Vec<usize>> = p
            .instrs()
            .iter()
            .enumerate()
            .map(|(i, ins)| {
                let mut s = ins.successors(i, n);
                if matches!(ins, Instruction::Halt) {
                    s.push(n);
                }
                s
            })
            .collect();
        succ.push(Vec::new());
        InstrGraph { n, succ }
    }

    pub fn exit(&self) -> usize {
        self.n
    }

    /// Nodes reachable from `start` without stepping on `removed`.
    fn reach_avoiding(&self, start: usize, removed: Option<usize>) -> Vec<bool> {
        let mut seen = vec![false; self.n + 1];
        if Some(start) == removed {
            return seen;
        }
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            for &s in &self.succ[k] {
                if !seen[s] && Some(s) != removed {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        seen
    }

    pub fn all_reach_exit(&self) -> bool {
        (0..self.n).all(|k| self.reach_avoiding(k, None)[self.exit()])
    }

    /// `pdom[j][k]`: every path from `k` to the exit passes through `j`.
    pub fn postdominators(&self) -> Vec<Vec<bool>> {
        let total = self.n + 1;
        let mut pdom = vec![vec![false; total]; total];
        for (j, row) in pdom.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                *cell = j == k || !self.reach_avoiding(k, Some(j))[self.exit()];
            }
        }
        pdom
    }

    /// Immediate postdominator of every instruction.
    pub fn ipdom(&self) -> Vec<usize> {
        let pdom = self.postdominators();
        (0..self.n)
            .map(|k| {
                let strict: Vec<usize> = (0..=self.n).filter(|&j| j != k && pdom[j][k]).collect();
                *strict
                    .iter()
                    .find(|&&d| strict.iter().all(|&e| pdom[e][d]))
                    .expect("the exit postdominates everything that reaches it")
            })
            .collect()
    }

    /// Branches each instruction is control dependent on: `b` has two
    /// distinct successors, one of which `j` postdominates, and `j` does
    /// not strictly postdominate `b`.
    pub fn control_dependence(&self) -> Vec<BTreeSet<usize>> {
        let pdom = self.postdominators();
        (0..self.n)
            .map(|j| {
                (0..self.n)
                    .filter(|&b| {
                        self.succ[b].len() == 2
                            && self.succ[b].iter().any(|&s| pdom[j][s])
                            && !(j != b && pdom[j][b])
                    })
                    .collect()
            })
            .collect()
    }
}

/// Definitions of `u` that reach the entry of instruction `j` along some
/// path with no intervening redefinition.
pub fn reaching_defs_of(p: &Program, j: usize, u: VarId) -> BTreeSet<VarAt> {
    let g = InstrGraph::new(p);
    let defines = |k: usize| p.instrs()[k].def() == Some(u);
    let reaches = |starts: Vec<usize>| {
        let mut seen = vec![false; g.n + 1];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for s in starts {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(k) = queue.pop_front() {
            if k == j {
                return true;
            }
            if k == g.exit() || defines(k) {
                continue;
            }
            for &s in &g.succ[k] {
                if !seen[s] {
                    seen[s] = true;
                    queue.push_back(s);
                }
            }
        }
        false
    };
    let mut out = BTreeSet::new();
    if reaches(vec![0]) {
        out.insert(VarAt::entry(u));
    }
    for i in 0..p.len() {
        if defines(i) && reaches(g.succ[i].clone()) {
            out.insert(VarAt::at(u, i));
        }
    }
    out
}

/// Expected data and control edge sets, built from the brute-force
/// reaching definitions and control dependence above with the same node
/// conventions as the analysis: an instruction's carrier nodes are its
/// definition, or for a BR its condition operands.
pub type EdgeSet = BTreeSet<(VarAt, VarAt)>;

pub fn expected_edges(p: &Program) -> (EdgeSet, EdgeSet) {
    let g = InstrGraph::new(p);
    let cd = g.control_dependence();
    let mut data = BTreeSet::new();
    let mut control = BTreeSet::new();
    for (j, ins) in p.instrs().iter().enumerate() {
        let carriers: Vec<VarAt> = match (ins.def(), ins) {
            (Some(v), _) => vec![VarAt::at(v, j)],
            (None, Instruction::Br { .. }) => {
                ins.uses().into_iter().map(|u| VarAt::at(u, j)).collect()
            }
            _ => continue,
        };
        for &from in &carriers {
            for u in ins.uses() {
                for d in reaching_defs_of(p, j, u) {
                    data.insert((from, d));
                }
            }
            for &b in &cd[j] {
                for u in p.instrs()[b].uses() {
                    control.insert((from, VarAt::at(u, b)));
                }
            }
        }
    }
    (data, control)
}

/// Path-enumeration taint oracle.
///
/// Explores every state `(pc, taint, context)` reachable by taking both
/// directions of each branch. `taint[v]` is the set of initial values that
/// flowed into `v`, directly or through the condition of an enclosing
/// branch. A branch's condition stays in the context until control reaches
/// the branch's immediate postdominator. Only meant for structured
/// programs, where that region never contains a postdominator of the
/// branch.
pub struct TaintOracle {
    /// Initial values reaching each variable at some HALT.
    pub slices: Vec<BTreeSet<VarId>>,
    /// Initial values reaching each two-way branch's decision.
    pub conditions: BTreeMap<usize, BTreeSet<VarId>>,
    pub states: usize,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct TaintState {
    pc: usize,
    taint: Vec<u64>,
    context: Vec<(usize, u64)>,
}

pub fn taint_oracle(p: &Program) -> TaintOracle {
    assert!(p.var_count() <= 64, "bitset taint holds 64 variables");
    let g = InstrGraph::new(p);
    assert!(
        g.all_reach_exit(),
        "oracle needs every instruction to reach a halt"
    );
    let ipdom = g.ipdom();
    let bits = |set: u64| -> BTreeSet<VarId> {
        (0..64u8).filter(|b| set >> b & 1 == 1).map(VarId).collect()
    };

    let initial: Vec<u64> = p
        .var_ids()
        .map(|v| if p.is_written(v) { 1u64 << v.0 } else { 0 })
        .collect();
    let mut finals = vec![0u64; p.var_count()];
    let mut conditions: BTreeMap<usize, u64> = BTreeMap::new();
    let mut seen: HashSet<TaintState> = HashSet::new();
    let mut queue = VecDeque::new();
    let start = TaintState {
        pc: 0,
        taint: initial,
        context: Vec::new(),
    };
    seen.insert(start.clone());
    queue.push_back(start);

    while let Some(mut s) = queue.pop_front() {
        while s.context.last().is_some_and(|&(end, _)| end == s.pc) {
            s.context.pop();
        }
        assert!(s.context.len() <= p.len(), "context grew without bound");
        let ctx = s.context.iter().fold(0u64, |acc, &(_, t)| acc | t);
        let t = |v: VarId| s.taint[v.index()];
        let mut next: Vec<TaintState> = Vec::new();
        let assign = |dst: VarId, value: u64| {
            let mut n = s.clone();
            n.taint[dst.index()] = value | ctx;
            n.pc += 1;
            n
        };
        match p.instrs()[s.pc] {
            Instruction::Halt => {
                for (f, &v) in finals.iter_mut().zip(&s.taint) {
                    *f |= v;
                }
            }
            Instruction::Const { dst, .. } => next.push(assign(dst, 0)),
            Instruction::Mov { dst, src } => next.push(assign(dst, t(src))),
            Instruction::Binary { dst, lhs, rhs, .. } => next.push(assign(dst, t(lhs) | t(rhs))),
            Instruction::Out { .. } => {
                let mut n = s.clone();
                n.pc += 1;
                next.push(n);
            }
            Instruction::Jmp { target } => {
                let mut n = s.clone();
                n.pc = target;
                next.push(n);
            }
            Instruction::Br {
                lhs,
                rhs,
                then_target,
                else_target,
                ..
            } => {
                if then_target == else_target {
                    let mut n = s.clone();
                    n.pc = then_target;
                    next.push(n);
                } else {
                    let cond = t(lhs) | t(rhs) | ctx;
                    *conditions.entry(s.pc).or_default() |= cond;
                    let end = ipdom[s.pc];
                    let mut context = s.context.clone();
                    match context.last_mut() {
                        Some((e, taint)) if *e == end => *taint |= cond,
                        _ => context.push((end, cond)),
                    }
                    for target in [then_target, else_target] {
                        next.push(TaintState {
                            pc: target,
                            taint: s.taint.clone(),
                            context: context.clone(),
                        });
                    }
                }
            }
        }
        for n in next {
            if seen.insert(n.clone()) {
                queue.push_back(n);
            }
        }
    }

    TaintOracle {
        slices: finals.into_iter().map(bits).collect(),
        conditions: conditions.into_iter().map(|(b, c)| (b, bits(c))).collect(),
        states: seen.len(),
    }
}

/// Arbitrary valid programs: up to `max_vars` variables and `max_len`
/// instructions with random operands and in-range targets. The last
/// instruction is always HALT; control flow is otherwise unconstrained, so
/// loops may be irreducible or never terminate.
pub fn arb_program(
    max_vars: usize,
    max_len: usize,
) -> impl proptest::strategy::Strategy<Value = Program> {
    use proptest::prelude::*;
    use twinguard::ir::{BinOp, Relop, Variable};

    (1..=max_vars, 1..=max_len)
        .prop_flat_map(|(nv, len)| {
            let raw = (
                0u8..10,
                0..nv,
                0..nv,
                0..nv,
                any::<i32>(),
                0..len,
                0..len,
                0u8..6,
            );
            (
                prop::collection::vec(-100i32..100, nv),
                prop::collection::vec(raw, len - 1),
            )
        })
        .prop_map(|(inits, raw)| {
            let v = |i: usize| VarId(i as u8);
            let mut instrs: Vec<Instruction> = raw
                .into_iter()
                .map(|(kind, d, a, b, imm, t, e, rel)| match kind {
                    0 => Instruction::Halt,
                    1 => Instruction::Const {
                        dst: v(d),
                        value: imm,
                    },
                    2 => Instruction::Mov {
                        dst: v(d),
                        src: v(a),
                    },
                    3..=6 => Instruction::Binary {
                        op: [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div][kind as usize - 3],
                        dst: v(d),
                        lhs: v(a),
                        rhs: v(b),
                    },
                    7 => Instruction::Out { src: v(a) },
                    8 => Instruction::Jmp { target: t },
                    _ => Instruction::Br {
                        relop: Relop::from_code(rel).expect("relop"),
                        lhs: v(a),
                        rhs: v(b),
                        then_target: t,
                        else_target: e,
                    },
                })
                .collect();
            instrs.push(Instruction::Halt);
            let vars = inits
                .into_iter()
                .enumerate()
                .map(|(i, init)| Variable::new(format!("v{i}"), init))
                .collect();
            Program::new(vars, instrs).expect("generated within bounds")
        })
}
