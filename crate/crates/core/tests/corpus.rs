mod common;

use std::collections::BTreeSet;

use twinguard::criticality::{analyze_program, BlockReason, SelectionOptions};
use twinguard::dependence::{analyze, loop_depths, Site, VarAt};
use twinguard::hardener::{harden, HardeningMode};
use twinguard::ir::{build_cfg, encode, BlockId, Program};
use twinguard::vm::{run, Status, DEFAULT_STEP_LIMIT};

use common::{corpus, corpus_path};

fn names(p: &Program, set: &BTreeSet<twinguard::ir::VarId>) -> BTreeSet<String> {
    set.iter().map(|&v| p.var_name(v).to_string()).collect()
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn golden_tape(p: &Program) -> Vec<i32> {
    let h = harden(p, &BTreeSet::new(), HardeningMode::None).unwrap();
    let r = run(&h, None, DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(r.status, Status::Halted);
    r.output_tape
}

#[test]
fn every_corpus_file_parses() {
    let dir = corpus_path("");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ir") {
            let name = path.file_name().unwrap().to_str().unwrap().to_string();
            corpus(&name);
            count += 1;
        }
    }
    assert!(count >= 6);
}

#[test]
fn block_structure() {
    let straight = build_cfg(&corpus("straight.ir"));
    assert_eq!((straight.len(), straight.edge_count()), (1, 0));

    let while_loop = corpus("while_loop.ir");
    assert!(while_loop.var_count() >= 7);
    let cfg = build_cfg(&while_loop);
    assert_eq!(cfg.len(), 3);
    assert_eq!(
        encode(&while_loop).len(),
        8 + 4 * while_loop.var_count() + 8 * while_loop.len()
    );

    assert_eq!(build_cfg(&corpus("diamonds.ir")).len(), 8);
}

#[test]
fn loop_depths_of_the_corpus() {
    let while_loop = corpus("while_loop.ir");
    let cfg = build_cfg(&while_loop);
    assert_eq!(loop_depths(&while_loop, &cfg).block_depths(), &[1, 1, 0]);

    let nested = corpus("nested.ir");
    let cfg = build_cfg(&nested);
    let info = loop_depths(&nested, &cfg);
    let inner_body = cfg.block_of(3);
    assert_eq!(info.block_depth(inner_body), 2);
    assert_eq!(info.block_depth(cfg.block_of(0)), 1);
    assert_eq!(info.block_depth(cfg.block_of(nested.len() - 1)), 0);

    let straight = corpus("straight.ir");
    assert!(loop_depths(&straight, &build_cfg(&straight))
        .block_depths()
        .iter()
        .all(|&d| d == 0));
}

#[test]
fn golden_outputs() {
    let expected: Vec<i32> = std::fs::read_to_string(corpus_path("while_loop.expected"))
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(golden_tape(&corpus("while_loop.ir")), expected);
    assert_eq!(golden_tape(&corpus("out_one.ir")), [1]);
    assert_eq!(golden_tape(&corpus("straight.ir")), [1]);
}

#[test]
fn while_loop_dependences() {
    let p = corpus("while_loop.ir");
    let g = analyze(&p, &build_cfg(&p));
    let var = |n: &str| p.var_id(n).unwrap();
    let (x, y, i) = (var("x"), var("y"), var("i"));

    // y flows into x through t, and the definition of y is in the loop
    // body, so the value x sees comes from the previous iteration.
    let t_def = (0..p.len()).find(|&n| g.def(n) == Some(var("t"))).unwrap();
    let y_def = (0..p.len()).find(|&n| g.def(n) == Some(y)).unwrap();
    assert!(y_def > t_def);
    assert!(g
        .data_edges()
        .contains(&(VarAt::at(var("t"), t_def), VarAt::at(y, y_def))));

    let x_def = (0..p.len()).find(|&n| g.def(n) == Some(x)).unwrap();
    assert!(g
        .control_edges()
        .iter()
        .any(|&(from, to)| from == VarAt::at(x, x_def)
            && to.var == i
            && to.site == Site::Instr(0)));

    assert_eq!(
        names(&p, &g.backward_slice(x).unwrap()),
        set(&["i", "z", "y", "b", "x"])
    );
    let fan_z = names(&p, &g.forward_fanout(var("z")).unwrap());
    assert!(fan_z.contains("y") && fan_z.contains("x"));
}

#[test]
fn constants_only_program_has_no_edges() {
    let p = twinguard::ir::parse_text("var x = 0\nx = 1\nhalt\n").unwrap();
    let g = analyze(&p, &build_cfg(&p));
    assert!(g.data_edges().is_empty() && g.control_edges().is_empty());
    assert!(g.backward_slice(p.var_id("x").unwrap()).unwrap().is_empty());
}

#[test]
fn fanout_tree_fanout_tree() {
    let p = corpus("fanout_tree.ir");
    let g = analyze(&p, &build_cfg(&p));
    let fan = names(&p, &g.forward_fanout(p.var_id("rslt0").unwrap()).unwrap());
    assert!(fan.is_superset(&set(&["rslt1", "rslt2"])));
    let var4 = names(&p, &g.forward_fanout(p.var_id("var4").unwrap()).unwrap());
    assert_eq!(var4, set(&["rslt2"]));

    let p = twinguard::ir::parse_text("var x = 0\nvar idle = 7\nx = 1\nout x\nhalt\n").unwrap();
    let g = analyze(&p, &build_cfg(&p));
    assert!(g
        .forward_fanout(p.var_id("idle").unwrap())
        .unwrap()
        .is_empty());
}

#[test]
fn criticality_on_the_corpus() {
    let p = corpus("while_loop.ir");
    let (report, blocks) = analyze_program(&p, &SelectionOptions::default()).unwrap();
    assert!(report.critical_variables.contains(&p.var_id("i").unwrap()));
    assert!(report.score(p.var_id("i").unwrap()).control >= 1);
    assert_eq!(
        blocks.into_iter().collect::<Vec<_>>(),
        [(BlockId(0), BlockReason::ConditionalTerminator)]
    );

    let p = corpus("diamonds.ir");
    let cfg = build_cfg(&p);
    let (_, blocks) = analyze_program(&p, &SelectionOptions::default()).unwrap();
    let branch_blocks: BTreeSet<BlockId> = (0..p.len())
        .filter(|&n| matches!(p.instrs()[n], twinguard::ir::Instruction::Br { .. }))
        .map(|n| cfg.block_of(n))
        .collect();
    assert_eq!(branch_blocks.len(), 2);
    assert_eq!(
        blocks.keys().copied().collect::<BTreeSet<_>>(),
        branch_blocks
    );

    let p = corpus("straight.ir");
    assert!(analyze_program(&p, &SelectionOptions::default())
        .unwrap()
        .1
        .is_empty());
}
