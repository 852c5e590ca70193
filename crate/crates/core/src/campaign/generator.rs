//! Seeded random programs for property suites.
//!
//! Programs are structured: straight-line assignments and `out`s, counted
//! loops (a dedicated counter set by `CONST` to 1..=3, tested against a
//! read-only zero and decremented by a read-only one) and, inside loops
//! only, if/else diamonds. Division always uses a read-only non-zero
//! divisor. Every program therefore halts without trapping. A candidate is
//! kept only if its golden run executes every basic block; otherwise the
//! generator draws again from the same stream, and after
//! [`DIAMOND_ATTEMPTS`] rejections it stops emitting diamonds, which makes
//! full execution certain.
//!
//! Variables are named `v0`, `v1`, ... so a program equals its own decode.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hardener::{harden, HardeningMode};
use crate::ir::{build_cfg, BinOp, Instruction, Program, Relop, VarId, Variable};
use crate::vm::{run_traced, Status};

const DIAMOND_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorBounds {
    /// Upper bound on the instruction count, at least 1.
    pub max_instructions: usize,
    /// Ordinary (non-constant, non-counter) variables, at least 1.
    pub max_data_vars: usize,
    pub max_loop_depth: u32,
}

impl Default for GeneratorBounds {
    fn default() -> Self {
        GeneratorBounds {
            max_instructions: 40,
            max_data_vars: 5,
            max_loop_depth: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("infeasible bounds: {0}")]
    Infeasible(&'static str),
}

pub fn generate_random_program(
    seed: u64,
    bounds: &GeneratorBounds,
) -> Result<Program, GeneratorError> {
    if bounds.max_instructions == 0 {
        return Err(GeneratorError::Infeasible(
            "a program needs at least one instruction",
        ));
    }
    if bounds.max_data_vars == 0 && bounds.max_instructions > 1 {
        return Err(GeneratorError::Infeasible(
            "at least one data variable is needed",
        ));
    }
    if bounds.max_instructions == 1 {
        return Ok(Program::new(Vec::new(), vec![Instruction::Halt]).expect("halt is a program"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempt = 0;
    loop {
        let diamonds = attempt < DIAMOND_ATTEMPTS;
        let p = Builder::new(&mut rng, bounds, diamonds).build();
        if diamonds && !every_block_runs(&p) {
            attempt += 1;
            continue;
        }
        return Ok(p);
    }
}

fn every_block_runs(p: &Program) -> bool {
    let h = harden(p, &BTreeSet::new(), HardeningMode::None).expect("no blocks requested");
    let mut seen = vec![false; p.len()];
    let mut sink = |e: &crate::vm::TraceEvent| seen[e.pc] = true;
    let r = run_traced(&h, None, 1_000_000, &mut sink).expect("fresh container");
    debug_assert_eq!(r.status, Status::Halted);
    build_cfg(p).blocks().iter().all(|b| seen[b.start])
}

/// Places instructions with symbolic targets, patched once labels are
/// known.
struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    bounds: GeneratorBounds,
    diamonds: bool,
    vars: Vec<Variable>,
    data: Vec<VarId>,
    zero: Option<VarId>,
    one: Option<VarId>,
    divisor: Option<VarId>,
    code: Vec<Instruction>,
}

impl<'r> Builder<'r> {
    fn new(rng: &'r mut ChaCha8Rng, bounds: &GeneratorBounds, diamonds: bool) -> Self {
        Builder {
            rng,
            bounds: *bounds,
            diamonds,
            vars: Vec::new(),
            data: Vec::new(),
            zero: None,
            one: None,
            divisor: None,
            code: Vec::new(),
        }
    }

    fn declare(&mut self, init: i32) -> VarId {
        let id = VarId(self.vars.len() as u8);
        self.vars.push(Variable::new(format!("v{}", id.0), init));
        id
    }

    fn constant(&mut self, which: fn(&mut Self) -> &mut Option<VarId>, init: i32) -> VarId {
        if let Some(v) = *which(self) {
            return v;
        }
        let v = self.declare(init);
        *which(self) = Some(v);
        v
    }

    fn data_var(&mut self) -> VarId {
        let room = self.data.len() < self.bounds.max_data_vars;
        if self.data.is_empty() || (room && self.rng.gen_bool(0.3)) {
            let init = self.rng.gen_range(-20..=20);
            let v = self.declare(init);
            self.data.push(v);
            v
        } else {
            self.data[self.rng.gen_range(0..self.data.len())]
        }
    }

    fn build(mut self) -> Program {
        let target = self.rng.gen_range(2..=self.bounds.max_instructions);
        let mut budget = target - 2;
        self.statements(&mut budget, 0, false);
        let last = self.data_var();
        self.code.push(Instruction::Out { src: last });
        self.code.push(Instruction::Halt);
        Program::new(self.vars, self.code).expect("generator emits valid programs")
    }

    /// Appends statements using at most `budget` instructions.
    fn statements(&mut self, budget: &mut usize, depth: u32, in_loop: bool) {
        while *budget > 0 && self.rng.gen_bool(0.85) {
            let choice = self.rng.gen_range(0..10);
            if choice < 2 && depth < self.bounds.max_loop_depth && *budget >= 6 {
                self.counted_loop(budget, depth);
            } else if choice < 4 && self.diamonds && in_loop && *budget >= 4 {
                self.diamond(budget, depth);
            } else if choice < 5 {
                let src = self.data_var();
                self.code.push(Instruction::Out { src });
                *budget -= 1;
            } else {
                self.assignment();
                *budget -= 1;
            }
        }
    }

    fn assignment(&mut self) {
        let dst = self.data_var();
        let ins = match self.rng.gen_range(0..10) {
            0 => Instruction::Const {
                dst,
                value: self.rng.gen_range(-50..=50),
            },
            1 => Instruction::Mov {
                dst,
                src: self.data_var(),
            },
            2 => {
                let d = self.rng.gen_range(1..=7) * if self.rng.gen_bool(0.5) { 1 } else { -1 };
                let rhs = self.constant(|b| &mut b.divisor, d);
                Instruction::Binary {
                    op: BinOp::Div,
                    dst,
                    lhs: self.data_var(),
                    rhs,
                }
            }
            k => Instruction::Binary {
                op: [BinOp::Add, BinOp::Sub, BinOp::Mul][k as usize % 3],
                dst,
                lhs: self.data_var(),
                rhs: self.data_var(),
            },
        };
        self.code.push(ins);
    }

    fn counted_loop(&mut self, budget: &mut usize, depth: u32) {
        let counter = self.declare(0);
        let zero = self.constant(|b| &mut b.zero, 0);
        let one = self.constant(|b| &mut b.one, 1);
        let trips = self.rng.gen_range(1..=3);
        self.code.push(Instruction::Const {
            dst: counter,
            value: trips,
        });
        let header = self.code.len();
        self.code.push(Instruction::Halt); // patched below
        *budget -= 4;
        let mut body = (*budget).min(self.rng.gen_range(1..=8));
        let reserved = *budget - body;
        self.assignment();
        body -= 1;
        self.statements(&mut body, depth + 1, true);
        *budget = reserved + body;
        self.code.push(Instruction::Binary {
            op: BinOp::Sub,
            dst: counter,
            lhs: counter,
            rhs: one,
        });
        self.code.push(Instruction::Jmp { target: header });
        self.code[header] = Instruction::Br {
            relop: Relop::Gt,
            lhs: counter,
            rhs: zero,
            then_target: header + 1,
            else_target: self.code.len(),
        };
    }

    fn diamond(&mut self, budget: &mut usize, depth: u32) {
        let relop = Relop::from_code(self.rng.gen_range(0..6)).expect("relop codes 0..6");
        let (lhs, rhs) = (self.data_var(), self.data_var());
        let branch = self.code.len();
        self.code.push(Instruction::Halt); // patched below
        *budget -= 4;
        let mut then_budget = (*budget / 2).min(3);
        let mut else_budget = (*budget - then_budget).min(3);
        let spare = *budget - then_budget - else_budget;
        self.assignment();
        self.statements(&mut then_budget, depth, true);
        let jump = self.code.len();
        self.code.push(Instruction::Halt); // patched below
        let else_start = self.code.len();
        self.assignment();
        self.statements(&mut else_budget, depth, true);
        *budget = spare + then_budget + else_budget;
        let join = self.code.len();
        self.code[jump] = Instruction::Jmp { target: join };
        self.code[branch] = Instruction::Br {
            relop,
            lhs,
            rhs,
            then_target: branch + 1,
            else_target: else_start,
        };
    }
}
