use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Instruction, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub usize);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}", self.0)
    }
}

/// A maximal run of instructions `start..end` entered only at `start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub start: usize,
    pub end: usize,
}

impl BasicBlock {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn last(&self) -> usize {
        self.end - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    blocks: Vec<BasicBlock>,
    succs: Vec<Vec<BlockId>>,
    preds: Vec<Vec<BlockId>>,
    block_of: Vec<BlockId>,
}

impl Cfg {
    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id.0]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn entry(&self) -> BlockId {
        BlockId(0)
    }

    pub fn successors(&self, id: BlockId) -> &[BlockId] {
        &self.succs[id.0]
    }

    pub fn predecessors(&self, id: BlockId) -> &[BlockId] {
        &self.preds[id.0]
    }

    /// Block containing instruction `index`.
    pub fn block_of(&self, index: usize) -> BlockId {
        self.block_of[index]
    }

    pub fn edges(&self) -> impl Iterator<Item = (BlockId, BlockId)> + '_ {
        self.succs
            .iter()
            .enumerate()
            .flat_map(|(from, to)| to.iter().map(move |&t| (BlockId(from), t)))
    }

    pub fn edge_count(&self) -> usize {
        self.succs.iter().map(Vec::len).sum()
    }
}

/// Splits `program` into maximal basic blocks. Leaders are instruction 0,
/// every branch target, and every instruction following a terminator.
pub fn build_cfg(program: &Program) -> Cfg {
    let instrs = program.instrs();
    let len = instrs.len();
    let mut leaders = BTreeSet::from([0]);
    for (i, ins) in instrs.iter().enumerate() {
        leaders.extend(ins.targets());
        if ins.is_terminator() && i + 1 < len {
            leaders.insert(i + 1);
        }
    }
    let starts: Vec<usize> = leaders.into_iter().collect();
    let blocks: Vec<BasicBlock> = starts
        .iter()
        .enumerate()
        .map(|(n, &start)| BasicBlock {
            id: BlockId(n),
            start,
            end: starts.get(n + 1).copied().unwrap_or(len),
        })
        .collect();
    let mut block_of = vec![BlockId(0); len];
    for b in &blocks {
        for i in b.range() {
            block_of[i] = b.id;
        }
    }
    let mut succs = vec![Vec::new(); blocks.len()];
    let mut preds = vec![Vec::new(); blocks.len()];
    for b in &blocks {
        let last = b.last();
        let targets = match instrs[last] {
            ins @ (Instruction::Halt | Instruction::Jmp { .. } | Instruction::Br { .. }) => {
                ins.successors(last, len)
            }
            _ if b.end < len => vec![b.end],
            _ => Vec::new(),
        };
        for t in targets {
            let to = block_of[t];
            if !succs[b.id.0].contains(&to) {
                succs[b.id.0].push(to);
                preds[to.0].push(b.id);
            }
        }
    }
    Cfg {
        blocks,
        succs,
        preds,
        block_of,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_text;

    #[test]
    fn straight_line_is_one_block() {
        let p = parse_text("var x = 0\nx = 1; out x; halt").unwrap();
        let cfg = build_cfg(&p);
        assert_eq!(cfg.len(), 1);
        assert_eq!(cfg.edge_count(), 0);
        assert_eq!(cfg.block(BlockId(0)).range(), 0..3);
    }

    #[test]
    fn loop_shape() {
        let p = parse_text(
            "var i = 2\nvar one = 1\nL: br i > one ? B : X\nB: i = i - one\njmp L\nX: out i\nhalt",
        )
        .unwrap();
        let cfg = build_cfg(&p);
        let ranges: Vec<_> = cfg.blocks().iter().map(BasicBlock::range).collect();
        assert_eq!(ranges, vec![0..1, 1..3, 3..5]);
        assert_eq!(cfg.successors(BlockId(0)), &[BlockId(1), BlockId(2)]);
        assert_eq!(cfg.successors(BlockId(1)), &[BlockId(0)]);
        assert!(cfg.successors(BlockId(2)).is_empty());
        assert_eq!(cfg.predecessors(BlockId(0)), &[BlockId(1)]);
    }
}
