//! Immediate dominators over an adjacency-list graph, after Cooper, Harvey
//! and Kennedy's "A Simple, Fast Dominance Algorithm".

/// `idom[n]` for every node reachable from `entry`; `entry` maps to itself
/// and unreachable nodes to `None`.
pub(crate) fn immediate_dominators(succs: &[Vec<usize>], entry: usize) -> Vec<Option<usize>> {
    let n = succs.len();
    let postorder = postorder(succs, entry);
    let mut po_index = vec![usize::MAX; n];
    for (i, &node) in postorder.iter().enumerate() {
        po_index[node] = i;
    }
    let mut preds = vec![Vec::new(); n];
    for (from, tos) in succs.iter().enumerate() {
        for &to in tos {
            preds[to].push(from);
        }
    }

    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[entry] = Some(entry);
    let mut changed = true;
    while changed {
        changed = false;
        for &node in postorder.iter().rev() {
            if node == entry {
                continue;
            }
            let mut new_idom: Option<usize> = None;
            for &p in &preds[node] {
                if idom[p].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, &po_index, p, cur),
                });
            }
            if new_idom.is_some() && idom[node] != new_idom {
                idom[node] = new_idom;
                changed = true;
            }
        }
    }
    idom
}

fn intersect(idom: &[Option<usize>], po_index: &[usize], mut a: usize, mut b: usize) -> usize {
    while a != b {
        while po_index[a] < po_index[b] {
            a = idom[a].expect("processed node has an idom");
        }
        while po_index[b] < po_index[a] {
            b = idom[b].expect("processed node has an idom");
        }
    }
    a
}

fn postorder(succs: &[Vec<usize>], entry: usize) -> Vec<usize> {
    let mut visited = vec![false; succs.len()];
    let mut order = Vec::with_capacity(succs.len());
    // explicit stack of (node, next successor index)
    let mut stack = vec![(entry, 0usize)];
    visited[entry] = true;
    while let Some(&mut (node, ref mut next)) = stack.last_mut() {
        if let Some(&s) = succs[node].get(*next) {
            *next += 1;
            if !visited[s] {
                visited[s] = true;
                stack.push((s, 0));
            }
        } else {
            order.push(node);
            stack.pop();
        }
    }
    order
}

/// True when `a` dominates `b` under `idom` (reflexive).
pub(crate) fn dominates(idom: &[Option<usize>], a: usize, b: usize) -> bool {
    let mut cur = b;
    loop {
        if cur == a {
            return true;
        }
        match idom[cur] {
            Some(up) if up != cur => cur = up,
            _ => return false,
        }
    }
}
