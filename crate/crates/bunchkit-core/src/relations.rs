//! The structural relations behind the LBIZ rules: essences (padding with
//! the multiplicative unit), the weakening preorder on bunches, and the
//! candidate pairs used to split resources in `*R` and `--*L`.
//!
//! All three relations only delete or prune material, so their closures over
//! a given bunch are finite sets, computed as fixpoints and memoized on the
//! canonical form.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;

use crate::bunch::{
    mk_add, mk_mult, positions, replace_at, sub_at, translate_through, Bunch, LayerKind, Position,
};
use crate::formula::Formula;

/// A candidate pair `(left, right)` for splitting a bunch.
///
/// The pair `(x, emp)` produced by the unit clause is represented with
/// `right = Leaf(emp)`; membership checking tries both the unit reading
/// (`x` alone below the target) and the pair reading (`x, emp` below it).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct CandidatePair {
    pub left: Bunch,
    pub right: Bunch,
}

impl CandidatePair {
    pub fn new(left: Bunch, right: Bunch) -> CandidatePair {
        CandidatePair { left, right }
    }

    /// Unordered normal form: components sorted.
    pub fn canonical(self) -> CandidatePair {
        if self.left <= self.right {
            self
        } else {
            CandidatePair { left: self.right, right: self.left }
        }
    }
}

static STRIP_MEMO: Lazy<Mutex<HashMap<Bunch, Arc<BTreeSet<Bunch>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));
static PRUNE_MEMO: Lazy<Mutex<HashMap<Bunch, Arc<BTreeSet<Bunch>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));
static SPINE_MEMO: Lazy<Mutex<HashMap<Bunch, Arc<BTreeSet<Bunch>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// True if the bunch has the shape of unit padding `(emp; Γ)`: either the
/// `emp` leaf itself or an additive layer with a direct `emp` component.
pub fn is_padding(b: &Bunch) -> bool {
    match b {
        Bunch::Leaf(Formula::MTop) => true,
        Bunch::Add(cs) => cs.iter().any(|c| matches!(c, Bunch::Leaf(Formula::MTop))),
        _ => false,
    }
}

/// All bunches reachable from `b` by deleting unit padding from
/// multiplicative layers, including `b` itself. These are exactly the
/// bunches that `b` is an essence of.
pub fn strip_padding_cores(b: &Bunch) -> Arc<BTreeSet<Bunch>> {
    if let Some(hit) = STRIP_MEMO.lock().unwrap().get(b) {
        return hit.clone();
    }
    let mut set: BTreeSet<Bunch> = BTreeSet::new();
    let mut work = vec![b.clone()];
    while let Some(cur) = work.pop() {
        if !set.insert(cur.clone()) {
            continue;
        }
        for pos in positions(&cur) {
            let Ok(sub) = sub_at(&cur, &pos) else { continue };
            if !matches!(sub, Bunch::Mult(_)) {
                continue;
            }
            let cs = sub.children();
            for (i, c) in cs.iter().enumerate() {
                if !is_padding(c) {
                    continue;
                }
                let mut rest: Vec<Bunch> = Vec::with_capacity(cs.len() - 1);
                for (j, d) in cs.iter().enumerate() {
                    if j != i {
                        rest.push(d.clone());
                    }
                }
                let reduced = mk_mult(rest);
                if let Ok(next) = replace_at(&cur, &pos, Some(&reduced)) {
                    work.push(next);
                }
            }
        }
    }
    let arc = Arc::new(set);
    STRIP_MEMO.lock().unwrap().insert(b.clone(), arc.clone());
    arc
}

/// True iff `e` is an essence of `b`: `e` is `b` decorated with zero or more
/// unit paddings.
pub fn is_essence_of(e: &Bunch, b: &Bunch) -> bool {
    strip_padding_cores(e).contains(b)
}

/// True iff some core of `e` exposes `f` at its top additive level: the core
/// is `f` itself or an additive layer with `f` as a direct component. This is
/// the antecedent shape of the `id`/`emp`-right axioms and the essence-root
/// condition of `->L`/`--*L`.
pub fn exposes_additively(e: &Bunch, f: &Formula) -> bool {
    strip_padding_cores(e).iter().any(|core| core_exposes(core, f))
}

pub fn core_exposes(core: &Bunch, f: &Formula) -> bool {
    match core {
        Bunch::Leaf(g) => g == f,
        Bunch::Add(cs) => cs.iter().any(|c| matches!(c, Bunch::Leaf(g) if g == f)),
        Bunch::Mult(_) => false,
    }
}

/// A core of `e` witnessing [`exposes_additively`], if any.
pub fn exposing_core(e: &Bunch, f: &Formula) -> Option<Bunch> {
    strip_padding_cores(e).iter().find(|core| core_exposes(core, f)).cloned()
}

/// The downward closure of `b` under deletion of additive material:
/// everything reachable by repeatedly replacing an additive-layer occurrence
/// with a non-empty sub-multiset of its children. Contains `b`.
pub fn weakening_downset(b: &Bunch) -> Arc<BTreeSet<Bunch>> {
    if let Some(hit) = PRUNE_MEMO.lock().unwrap().get(b) {
        return hit.clone();
    }
    let mut set: BTreeSet<Bunch> = BTreeSet::new();
    let mut work = vec![b.clone()];
    while let Some(cur) = work.pop() {
        if !set.insert(cur.clone()) {
            continue;
        }
        for pos in positions(&cur) {
            let Ok(sub) = sub_at(&cur, &pos) else { continue };
            let Bunch::Add(cs) = &sub else { continue };
            // delete one child at a time; transitivity gives the rest
            for i in 0..cs.len() {
                let mut rest: Vec<Bunch> = Vec::with_capacity(cs.len() - 1);
                for (j, d) in cs.iter().enumerate() {
                    if j != i {
                        rest.push(d.clone());
                    }
                }
                let reduced = mk_add(rest);
                if let Ok(next) = replace_at(&cur, &pos, Some(&reduced)) {
                    work.push(next);
                }
            }
        }
    }
    let arc = Arc::new(set);
    PRUNE_MEMO.lock().unwrap().insert(b.clone(), arc.clone());
    arc
}

/// The weakening preorder: `a ⪯ b` iff `a` is reachable from `b` by deleting
/// additive material anywhere.
pub fn preceq(a: &Bunch, b: &Bunch) -> bool {
    // cheap filter: the leaf multiset of `a` embeds into `b`'s
    if !leaf_submultiset(a, b) {
        return false;
    }
    weakening_downset(b).contains(a)
}

fn leaf_submultiset(a: &Bunch, b: &Bunch) -> bool {
    let la = a.leaves();
    let lb = b.leaves();
    if la.len() > lb.len() {
        return false;
    }
    let mut it = lb.into_iter();
    'outer: for x in la {
        for y in it.by_ref() {
            if y == x {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// The hereditary top-pruning closure behind representing candidates:
/// prune a sub-multiset of the top additive layer, or prune the additive top
/// of a component along the top multiplicative spine, flattening as layers
/// collapse; closed reflexively and transitively.
pub fn spine_pruning_downset(b: &Bunch) -> Arc<BTreeSet<Bunch>> {
    if let Some(hit) = SPINE_MEMO.lock().unwrap().get(b) {
        return hit.clone();
    }
    let mut set: BTreeSet<Bunch> = BTreeSet::new();
    let mut work = vec![b.clone()];
    while let Some(cur) = work.pop() {
        if !set.insert(cur.clone()) {
            continue;
        }
        match &cur {
            Bunch::Add(cs) => {
                // keep any non-empty proper sub-multiset
                for i in 0..cs.len() {
                    let mut rest: Vec<Bunch> = Vec::with_capacity(cs.len() - 1);
                    for (j, d) in cs.iter().enumerate() {
                        if j != i {
                            rest.push(d.clone());
                        }
                    }
                    work.push(mk_add(rest));
                }
            }
            Bunch::Mult(cs) => {
                // prune the additive top of one spine component
                for (i, c) in cs.iter().enumerate() {
                    let Bunch::Add(acs) = c else { continue };
                    for k in 0..acs.len() {
                        let mut rest: Vec<Bunch> = Vec::with_capacity(acs.len() - 1);
                        for (j, d) in acs.iter().enumerate() {
                            if j != k {
                                rest.push(d.clone());
                            }
                        }
                        let pruned = mk_add(rest);
                        let mut parts: Vec<Bunch> = Vec::with_capacity(cs.len());
                        for (j, d) in cs.iter().enumerate() {
                            if j == i {
                                parts.push(pruned.clone());
                            } else {
                                parts.push(d.clone());
                            }
                        }
                        work.push(mk_mult(parts));
                    }
                }
            }
            Bunch::Leaf(_) => {}
        }
    }
    let arc = Arc::new(set);
    SPINE_MEMO.lock().unwrap().insert(b.clone(), arc.clone());
    arc
}

/// The representing candidates of `g`: for every spine-pruning `s` of `g`,
/// the unit pair `(s, emp)`, and for every `s` with a top multiplicative
/// layer, every two-group split of its components. Pairs are unordered and
/// deduplicated; rule application tries both assignments.
pub fn rep_candidates(g: &Bunch) -> BTreeSet<CandidatePair> {
    let mut out = BTreeSet::new();
    for s in spine_pruning_downset(g).iter() {
        out.insert(CandidatePair::new(s.clone(), Bunch::mtop()).canonical());
        splits_into(s, &mut out);
    }
    out
}

/// The full candidate set of `g` (finite, since `⪯` only deletes).
/// Used by checkers; the prover searches over [`rep_candidates`] only.
pub fn candidates(g: &Bunch) -> BTreeSet<CandidatePair> {
    let mut out = BTreeSet::new();
    for s in weakening_downset(g).iter() {
        out.insert(CandidatePair::new(s.clone(), Bunch::mtop()).canonical());
        splits_into(s, &mut out);
    }
    out
}

fn splits_into(s: &Bunch, out: &mut BTreeSet<CandidatePair>) {
    let Bunch::Mult(cs) = s else { return };
    let n = cs.len();
    // one side gets the components of each non-empty proper bitmask;
    // restrict to masks containing index 0 to halve the symmetric work
    for mask in 0u32..(1 << (n - 1)) {
        let mask = (mask << 1) | 1;
        if mask == (1 << n) - 1 {
            continue;
        }
        let mut left: Vec<Bunch> = Vec::new();
        let mut right: Vec<Bunch> = Vec::new();
        for (i, c) in cs.iter().enumerate() {
            if mask & (1 << i) != 0 {
                left.push(c.clone());
            } else {
                right.push(c.clone());
            }
        }
        out.insert(CandidatePair::new(mk_mult(left), mk_mult(right)).canonical());
    }
}

/// Membership in the full candidate set of `g`, per the defining clauses:
/// `(x, emp)` is a candidate if `x ⪯ g`; `(x, y)` if `x, y ⪯ g`.
/// A pair whose right component is `emp` is accepted under either reading.
pub fn is_candidate_pair(pair: &CandidatePair, g: &Bunch) -> bool {
    let unit = Bunch::mtop();
    if (pair.right == unit && preceq(&pair.left, g))
        || (pair.left == unit && preceq(&pair.right, g))
    {
        return true;
    }
    let joined = mk_mult(vec![pair.left.clone(), pair.right.clone()]);
    preceq(&joined, g)
}

/// Clears the relation memo tables (used by long-running fuzz loops to bound
/// memory).
pub fn clear_memos() {
    STRIP_MEMO.lock().unwrap().clear();
    PRUNE_MEMO.lock().unwrap().clear();
    SPINE_MEMO.lock().unwrap().clear();
}

/// Enumerates the insertion steps that build essence `e` from core `c`:
/// a list of `(position, padding)` pairs, each position relative to the
/// intermediate bunch, such that grafting each padding multiplicatively in
/// order rewrites `c` into `e`. Searches the stripping graph of `e`.
pub fn essence_build_steps(e: &Bunch, c: &Bunch) -> Option<Vec<(Position, Bunch)>> {
    use std::collections::VecDeque;
    if e == c {
        return Some(Vec::new());
    }
    // parent[next] = (bigger, site-of-remainder-in-next, removed padding)
    let mut parent: HashMap<Bunch, (Bunch, Position, Bunch)> = HashMap::new();
    let mut queue: VecDeque<Bunch> = VecDeque::new();
    queue.push_back(e.clone());
    let mut seen: BTreeSet<Bunch> = BTreeSet::new();
    seen.insert(e.clone());
    while let Some(cur) = queue.pop_front() {
        for pos in positions(&cur) {
            let Ok(sub) = sub_at(&cur, &pos) else { continue };
            if !matches!(sub, Bunch::Mult(_)) {
                continue;
            }
            let cs = sub.children();
            for (i, comp) in cs.iter().enumerate() {
                if !is_padding(comp) {
                    continue;
                }
                let mut rest: Vec<Bunch> = Vec::with_capacity(cs.len() - 1);
                for (j, d) in cs.iter().enumerate() {
                    if j != i {
                        rest.push(d.clone());
                    }
                }
                let reduced = mk_mult(rest);
                let Ok(next) = replace_at(&cur, &pos, Some(&reduced)) else { continue };
                if seen.contains(&next) {
                    continue;
                }
                let Ok(Some(site)) = translate_through(&cur, &pos, Some(&reduced), &pos) else {
                    continue;
                };
                seen.insert(next.clone());
                parent.insert(next.clone(), (cur.clone(), site, comp.clone()));
                if next == *c {
                    let mut steps: Vec<(Position, Bunch)> = Vec::new();
                    let mut at = next;
                    while at != *e {
                        let (up, site, pad) = parent.get(&at).unwrap().clone();
                        steps.push((site, pad));
                        at = up;
                    }
                    return Some(steps);
                }
                queue.push_back(next);
            }
        }
    }
    None
}

/// Finds a `⪯`-path from `a` up to `b` as a list of single additive
/// insertions `(position, added sibling group)`, each position relative to
/// the intermediate bunch; grafting each addition in order rewrites `a`
/// into `b`.
pub fn weakening_path(a: &Bunch, b: &Bunch) -> Option<Vec<(Position, Bunch)>> {
    use std::collections::VecDeque;
    if a == b {
        return Some(Vec::new());
    }
    if !preceq(a, b) {
        return None;
    }
    // BFS from b downwards by single deletions until a; reverse the edges.
    let mut parent: HashMap<Bunch, (Bunch, Position, Bunch)> = HashMap::new();
    let mut queue: VecDeque<Bunch> = VecDeque::new();
    queue.push_back(b.clone());
    let mut seen: BTreeSet<Bunch> = BTreeSet::new();
    seen.insert(b.clone());
    while let Some(cur) = queue.pop_front() {
        for pos in positions(&cur) {
            let Ok(sub) = sub_at(&cur, &pos) else { continue };
            let Bunch::Add(cs) = &sub else { continue };
            for i in 0..cs.len() {
                let deleted = cs[i].clone();
                let mut rest: Vec<Bunch> = Vec::with_capacity(cs.len() - 1);
                for (j, d) in cs.iter().enumerate() {
                    if j != i {
                        rest.push(d.clone());
                    }
                }
                let reduced = mk_add(rest);
                let Ok(next) = replace_at(&cur, &pos, Some(&reduced)) else { continue };
                if seen.contains(&next) {
                    continue;
                }
                let Ok(Some(site)) = translate_through(&cur, &pos, Some(&reduced), &pos) else {
                    continue;
                };
                seen.insert(next.clone());
                parent.insert(next.clone(), (cur.clone(), site, deleted.clone()));
                if next == *a {
                    let mut steps: Vec<(Position, Bunch)> = Vec::new();
                    let mut at = next;
                    while at != *b {
                        let (up, site, added) = parent.get(&at).unwrap().clone();
                        steps.push((site, added));
                        at = up;
                    }
                    return Some(steps);
                }
                queue.push_back(next);
            }
        }
    }
    None
}

/// The multiplicative-sibling group of the occurrence at `pos`, if its
/// parent is a `,`-layer: the remaining components as one bunch.
pub fn mult_siblings(b: &Bunch, pos: &crate::bunch::Position) -> Option<Bunch> {
    use crate::bunch::Step;
    let (last, prefix) = pos.steps.split_last()?;
    let Step::Child(i) = last else { return None };
    let parent = sub_at(b, &crate::bunch::Position { steps: prefix.to_vec() }).ok()?;
    if parent.kind() != Some(LayerKind::Mult) {
        return None;
    }
    let cs = parent.children();
    let mut rest: Vec<Bunch> = Vec::with_capacity(cs.len() - 1);
    for (j, c) in cs.iter().enumerate() {
        if j != *i {
            rest.push(c.clone());
        }
    }
    Some(mk_mult(rest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bunch::parse_bunch;

    fn b(s: &str) -> Bunch {
        parse_bunch(s).unwrap()
    }

    #[test]
    fn stripping_reaches_cores() {
        // "p1; ((emp; q), p1 -> p2)" strips to "p1; p1 -> p2"
        let e = b("p1; ((emp; q), (p1 -> p2))");
        let cores = strip_padding_cores(&e);
        assert!(cores.contains(&b("p1; p1 -> p2")));
        assert!(cores.contains(&e));

        let e2 = b("p, emp");
        let cores2 = strip_padding_cores(&e2);
        assert_eq!(cores2.iter().cloned().collect::<Vec<_>>(), vec![b("p"), b("p, emp")]);

        assert_eq!(strip_padding_cores(&b("p")).len(), 1);
    }

    #[test]
    fn essence_membership() {
        assert!(is_essence_of(&b("f1; ((emp; q), (f1 -> f2))"), &b("f1; f1 -> f2")));
        assert!(is_essence_of(&b("p"), &b("p")));
        assert!(!is_essence_of(&b("p, q"), &b("p")));
    }

    #[test]
    fn preceq_examples() {
        assert!(preceq(&b("p"), &b("p; q")));
        assert!(preceq(&b("p"), &b("p")));
        assert!(!preceq(&b("p"), &b("p, q")));
        assert!(preceq(&b("q, p"), &b("p, (q; r)")));
        assert!(preceq(&b("p; q"), &b("p; q; r")));
    }

    #[test]
    fn rep_candidates_examples() {
        let rc = rep_candidates(&b("p, q"));
        let expect: BTreeSet<CandidatePair> = [
            CandidatePair::new(b("p, q"), b("emp")).canonical(),
            CandidatePair::new(b("p"), b("q")).canonical(),
        ]
        .into_iter()
        .collect();
        assert_eq!(rc, expect);

        let rc2 = rep_candidates(&b("p; q"));
        let expect2: BTreeSet<CandidatePair> = [
            CandidatePair::new(b("p; q"), b("emp")).canonical(),
            CandidatePair::new(b("p"), b("emp")).canonical(),
            CandidatePair::new(b("q"), b("emp")).canonical(),
        ]
        .into_iter()
        .collect();
        assert_eq!(rc2, expect2);

        let rc3 = rep_candidates(&b("p"));
        assert_eq!(rc3.len(), 1);
        assert!(rc3.contains(&CandidatePair::new(b("p"), b("emp")).canonical()));
    }

    #[test]
    fn candidate_membership() {
        assert!(is_candidate_pair(&CandidatePair::new(b("p"), b("emp")), &b("p; q")));
        assert!(is_candidate_pair(&CandidatePair::new(b("p"), b("q")), &b("p, q")));
        assert!(is_candidate_pair(&CandidatePair::new(b("q"), b("p")), &b("p, (q; r)")));
        assert!(!is_candidate_pair(&CandidatePair::new(b("p"), b("p")), &b("p, q")));
    }

    #[test]
    fn rep_candidates_are_candidates() {
        for s in ["p", "p, q", "p; q", "(p; q), r", "p, (q; (r, s))"] {
            let g = b(s);
            for pair in rep_candidates(&g) {
                assert!(is_candidate_pair(&pair, &g), "{pair:?} not a candidate of {g:?}");
            }
        }
    }

    #[test]
    fn essence_steps_rebuild() {
        let core = b("p1; p1 -> p2");
        let e = b("p1; ((emp; q), (p1 -> p2))");
        let steps = essence_build_steps(&e, &core).unwrap();
        assert_eq!(steps.len(), 1);
        let mut cur = core;
        for (pos, pad) in &steps {
            let (next, _) = crate::bunch::graft_mult(&cur, pos, pad).unwrap();
            cur = next;
        }
        assert_eq!(cur, e);
    }

    #[test]
    fn weakening_path_rebuilds() {
        let a = b("q, p");
        let target = b("p, (q; r)");
        let steps = weakening_path(&a, &target).unwrap();
        let mut cur = a;
        for (pos, added) in &steps {
            let (next, _) = crate::bunch::graft_add(&cur, pos, added).unwrap();
            cur = next;
        }
        assert_eq!(cur, target);
    }
}
