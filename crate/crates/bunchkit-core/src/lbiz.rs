//! The LBIZ sequent calculus: no structural rules at all.
//!
//! Weakening and the unit equivalences are absorbed into the rules through
//! two devices: the `id`/`emp`-right axioms and the left implication rules
//! act on an *essence root* (a sub-bunch that strips, by deleting `(emp; _)`
//! padding from `,`-layers, to a bunch exposing the principal additively),
//! and `*R`/`--*L` split resources through *candidate pairs* (weakenings of
//! the antecedent).
//!
//! The backward prover commits to invertible rules, selects maximal essence
//! roots, and prunes rule instances whose premise repeats an ancestor
//! sequent on the branch; pruned refutations are flagged as such.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bunch::{
    leaf_positions, mk_add, mk_mult, parse_bunch, parse_sequent, positions, print_bunch,
    replace_at, sub_at, Bunch, LayerKind, Position, Sequent, Step,
};
use crate::formula::Formula;
use crate::relations::{
    core_exposes, exposing_core, is_candidate_pair, is_essence_of, mult_siblings, rep_candidates,
    CandidatePair,
};

/// The fourteen LBIZ rules.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum RuleId {
    Id,
    BotL,
    TopR,
    MTopR,
    AndL,
    OrL,
    ImpL,
    StarL,
    WandL,
    AndR,
    OrR(u8),
    ImpR,
    StarR,
    WandR,
}

impl RuleId {
    pub fn name(self) -> String {
        match self {
            RuleId::Id => "Id".into(),
            RuleId::BotL => "BotL".into(),
            RuleId::TopR => "TopR".into(),
            RuleId::MTopR => "MTopR".into(),
            RuleId::AndL => "AndL".into(),
            RuleId::OrL => "OrL".into(),
            RuleId::ImpL => "ImpL".into(),
            RuleId::StarL => "StarL".into(),
            RuleId::WandL => "WandL".into(),
            RuleId::AndR => "AndR".into(),
            RuleId::OrR(i) => format!("OrR{i}"),
            RuleId::ImpR => "ImpR".into(),
            RuleId::StarR => "StarR".into(),
            RuleId::WandR => "WandR".into(),
        }
    }

    pub fn from_name(s: &str) -> Option<RuleId> {
        Some(match s {
            "Id" => RuleId::Id,
            "BotL" => RuleId::BotL,
            "TopR" => RuleId::TopR,
            "MTopR" => RuleId::MTopR,
            "AndL" => RuleId::AndL,
            "OrL" => RuleId::OrL,
            "ImpL" => RuleId::ImpL,
            "StarL" => RuleId::StarL,
            "WandL" => RuleId::WandL,
            "AndR" => RuleId::AndR,
            "OrR1" => RuleId::OrR(1),
            "OrR2" => RuleId::OrR(2),
            "ImpR" => RuleId::ImpR,
            "StarR" => RuleId::StarR,
            "WandR" => RuleId::WandR,
            _ => return None,
        })
    }

    pub fn is_axiom(self) -> bool {
        matches!(self, RuleId::Id | RuleId::BotL | RuleId::TopR | RuleId::MTopR)
    }
}

/// The nondeterministic choices a rule instance makes, recorded so that a
/// derivation is checkable locally.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct StepWitness {
    /// Principal occurrence: the formula leaf for the one-formula left
    /// rules, the essence root for `ImpL`/`WandL`, root for everything else.
    pub position: Position,
    /// The stripped core `(Γ; F)` chosen for `Id`/`MTopR`/`ImpL`/`WandL`.
    pub essence_core: Option<Bunch>,
    /// The resource split `(Re_i, Re_j)` in premise order, for
    /// `StarR`/`WandL`.
    pub candidate: Option<(Bunch, Bunch)>,
    /// The multiplicative sibling group of the essence root in `WandL`;
    /// `None` when the group is empty.
    pub gamma_prime: Option<Bunch>,
}

impl StepWitness {
    pub fn at(position: Position) -> StepWitness {
        StepWitness { position, ..Default::default() }
    }
}

/// A rule-labelled derivation tree. Every node records its conclusion and
/// the witness for its rule instance, so checking is local.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Derivation {
    pub rule: RuleId,
    pub conclusion: Sequent,
    pub witness: StepWitness,
    pub premises: Vec<Derivation>,
}

impl Derivation {
    pub fn axiom(rule: RuleId, conclusion: Sequent, witness: StepWitness) -> Derivation {
        Derivation { rule, conclusion, witness, premises: Vec::new() }
    }
}

/// Derivation depth: 1 at axioms, 1 + the largest premise depth otherwise.
pub fn derivation_depth(d: &Derivation) -> usize {
    1 + d.premises.iter().map(derivation_depth).max().unwrap_or(0)
}

/// A backward rule instance: the rule, its witness, and the premises read
/// off the schema.
#[derive(Clone, Debug)]
pub struct RuleInstance {
    pub rule: RuleId,
    pub witness: StepWitness,
    pub premises: Vec<Sequent>,
}

/// Essence-root enumeration policy for `ImpL`/`WandL`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RootPolicy {
    /// Only maximal roots (the largest sub-bunch whose stripping exposes the
    /// principal); sufficient for search because weakening is
    /// depth-preserving admissible.
    Maximal,
    /// Every root, including partial additive selections; used to validate
    /// the maximal policy empirically.
    All,
}

fn shaped_principals(ant: &Bunch, want_imp: bool) -> Vec<Formula> {
    let mut out: BTreeSet<Formula> = BTreeSet::new();
    for (_, f) in leaf_positions(ant) {
        let hit = match (&f, want_imp) {
            (Formula::Imp(_, _), true) | (Formula::Wand(_, _), false) => true,
            _ => false,
        };
        if hit {
            out.insert(f);
        }
    }
    out.into_iter().collect()
}

/// Positions whose sub-bunch strips to expose `phi` additively.
fn exposure_roots(ant: &Bunch, phi: &Formula, policy: RootPolicy) -> Vec<Position> {
    let mut roots: Vec<Position> = Vec::new();
    for pos in positions(ant) {
        if matches!(policy, RootPolicy::Maximal)
            && matches!(pos.steps.last(), Some(Step::Select(_)))
        {
            // a qualifying partial selection is always dominated by its full layer
            continue;
        }
        let Ok(sub) = sub_at(ant, &pos) else { continue };
        if crate::relations::exposes_additively(&sub, phi) {
            roots.push(pos);
        }
    }
    if matches!(policy, RootPolicy::Maximal) {
        let keep: Vec<bool> =
            roots.iter().map(|p| !roots.iter().any(|q| q != p && q.contains(p))).collect();
        roots = roots
            .into_iter()
            .zip(keep)
            .filter_map(|(p, k)| if k { Some(p) } else { None })
            .collect();
    }
    roots
}

/// The conclusion antecedent with `g` added as an additive sibling of the
/// occurrence at `pos` (the shared shape of the `ImpL`/`WandL` premise).
pub(crate) fn add_sibling(ant: &Bunch, pos: &Position, g: &Bunch) -> Option<Bunch> {
    let here = sub_at(ant, pos).ok()?;
    replace_at(ant, pos, Some(&mk_add(vec![g.clone(), here]))).ok()
}

/// All backward rule instances of `s`, in the fixed search order: axioms,
/// invertible single-premise rules, branching invertible rules, `∨R`, then
/// the splitting rules. Deterministic for a given input.
pub fn expand(s: &Sequent, policy: RootPolicy) -> Vec<RuleInstance> {
    let mut out: Vec<RuleInstance> = Vec::new();
    let ant = &s.antecedent;
    let goal = &s.consequent;

    // axioms
    match goal {
        Formula::Atom(_) | Formula::MTop => {
            if let Some(core) = exposing_core(ant, goal) {
                let rule = if matches!(goal, Formula::MTop) { RuleId::MTopR } else { RuleId::Id };
                out.push(RuleInstance {
                    rule,
                    witness: StepWitness { essence_core: Some(core), ..Default::default() },
                    premises: Vec::new(),
                });
            }
        }
        Formula::Top => {
            out.push(RuleInstance {
                rule: RuleId::TopR,
                witness: StepWitness::default(),
                premises: Vec::new(),
            });
        }
        _ => {}
    }
    if let Some((pos, _)) = leaf_positions(ant).into_iter().find(|(_, f)| matches!(f, Formula::Bot))
    {
        out.push(RuleInstance {
            rule: RuleId::BotL,
            witness: StepWitness::at(pos),
            premises: Vec::new(),
        });
    }

    // invertible single-premise rules
    for (pos, f) in leaf_positions(ant) {
        match &f {
            Formula::And(l, r) => {
                let prem = replace_at(
                    ant,
                    &pos,
                    Some(&mk_add(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])),
                )
                .unwrap();
                out.push(RuleInstance {
                    rule: RuleId::AndL,
                    witness: StepWitness::at(pos),
                    premises: vec![Sequent::new(prem, goal.clone())],
                });
            }
            Formula::Star(l, r) => {
                let prem = replace_at(
                    ant,
                    &pos,
                    Some(&mk_mult(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])),
                )
                .unwrap();
                out.push(RuleInstance {
                    rule: RuleId::StarL,
                    witness: StepWitness::at(pos),
                    premises: vec![Sequent::new(prem, goal.clone())],
                });
            }
            _ => {}
        }
    }
    match goal {
        Formula::Imp(l, r) => {
            let prem = mk_add(vec![ant.clone(), Bunch::Leaf((**l).clone())]);
            out.push(RuleInstance {
                rule: RuleId::ImpR,
                witness: StepWitness::default(),
                premises: vec![Sequent::new(prem, (**r).clone())],
            });
        }
        Formula::Wand(l, r) => {
            let prem = mk_mult(vec![ant.clone(), Bunch::Leaf((**l).clone())]);
            out.push(RuleInstance {
                rule: RuleId::WandR,
                witness: StepWitness::default(),
                premises: vec![Sequent::new(prem, (**r).clone())],
            });
        }
        _ => {}
    }

    // invertible branching rules
    for (pos, f) in leaf_positions(ant) {
        if let Formula::Or(l, r) = &f {
            let p1 = replace_at(ant, &pos, Some(&Bunch::Leaf((**l).clone()))).unwrap();
            let p2 = replace_at(ant, &pos, Some(&Bunch::Leaf((**r).clone()))).unwrap();
            out.push(RuleInstance {
                rule: RuleId::OrL,
                witness: StepWitness::at(pos),
                premises: vec![Sequent::new(p1, goal.clone()), Sequent::new(p2, goal.clone())],
            });
        }
    }
    if let Formula::And(l, r) = goal {
        out.push(RuleInstance {
            rule: RuleId::AndR,
            witness: StepWitness::default(),
            premises: vec![
                Sequent::new(ant.clone(), (**l).clone()),
                Sequent::new(ant.clone(), (**r).clone()),
            ],
        });
    }

    // disjunction on the right
    if let Formula::Or(l, r) = goal {
        out.push(RuleInstance {
            rule: RuleId::OrR(1),
            witness: StepWitness::default(),
            premises: vec![Sequent::new(ant.clone(), (**l).clone())],
        });
        out.push(RuleInstance {
            rule: RuleId::OrR(2),
            witness: StepWitness::default(),
            premises: vec![Sequent::new(ant.clone(), (**r).clone())],
        });
    }

    // splitting / duplicating rules
    for phi in shaped_principals(ant, true) {
        let Formula::Imp(l, r) = &phi else { unreachable!() };
        for pos in exposure_roots(ant, &phi, policy) {
            let root = sub_at(ant, &pos).unwrap();
            let core = exposing_core(&root, &phi).unwrap();
            let p2ant = add_sibling(ant, &pos, &Bunch::Leaf((**r).clone())).unwrap();
            out.push(RuleInstance {
                rule: RuleId::ImpL,
                witness: StepWitness {
                    position: pos,
                    essence_core: Some(core),
                    ..Default::default()
                },
                premises: vec![
                    Sequent::new(root, (**l).clone()),
                    Sequent::new(p2ant, goal.clone()),
                ],
            });
        }
    }
    for phi in shaped_principals(ant, false) {
        for pos in exposure_roots(ant, &phi, policy) {
            out.extend(wand_instances(s, &phi, &pos));
        }
    }
    if let Formula::Star(l, r) = goal {
        let mut seen: BTreeSet<(Bunch, Bunch)> = BTreeSet::new();
        for pair in rep_candidates(ant) {
            for (re_i, re_j) in [(pair.left.clone(), pair.right.clone()), (pair.right, pair.left)]
            {
                if !seen.insert((re_i.clone(), re_j.clone())) {
                    continue;
                }
                out.push(RuleInstance {
                    rule: RuleId::StarR,
                    witness: StepWitness {
                        candidate: Some((re_i.clone(), re_j.clone())),
                        ..Default::default()
                    },
                    premises: vec![
                        Sequent::new(re_i, (**l).clone()),
                        Sequent::new(re_j, (**r).clone()),
                    ],
                });
            }
        }
    }

    out
}

/// `--*L` instances for principal `phi` at essence root `pos`. The sibling
/// group is the full multiplicative sibling set of the root (the checker
/// accepts any subset; searching the full set suffices by weakening
/// admissibility).
fn wand_instances(s: &Sequent, phi: &Formula, pos: &Position) -> Vec<RuleInstance> {
    let Formula::Wand(f, g) = phi else { unreachable!() };
    let ant = &s.antecedent;
    let root = sub_at(ant, pos).unwrap();
    let core = exposing_core(&root, phi).unwrap();
    let gamma_prime = mult_siblings(ant, pos);
    let mut out = Vec::new();
    match &gamma_prime {
        None => {
            // empty sibling group: Re_i = emp, Re_j empty
            let p2ant = add_sibling(ant, pos, &Bunch::Leaf((**g).clone())).unwrap();
            out.push(RuleInstance {
                rule: RuleId::WandL,
                witness: StepWitness {
                    position: pos.clone(),
                    essence_core: Some(core),
                    ..Default::default()
                },
                premises: vec![
                    Sequent::new(Bunch::mtop(), (**f).clone()),
                    Sequent::new(p2ant, s.consequent.clone()),
                ],
            });
        }
        Some(gp) => {
            let Some((last, prefix)) = pos.steps.split_last() else { return out };
            let Step::Child(_) = last else { return out };
            let group_pos = Position { steps: prefix.to_vec() };
            let mut seen: BTreeSet<(Bunch, Bunch)> = BTreeSet::new();
            for pair in rep_candidates(gp) {
                for (re_i, re_j) in
                    [(pair.left.clone(), pair.right.clone()), (pair.right, pair.left)]
                {
                    if !seen.insert((re_i.clone(), re_j.clone())) {
                        continue;
                    }
                    let left_comp = mk_mult(vec![re_j.clone(), Bunch::Leaf((**g).clone())]);
                    let right_comp = mk_mult(vec![gp.clone(), root.clone()]);
                    let replacement = mk_add(vec![left_comp, right_comp]);
                    let p2ant = replace_at(ant, &group_pos, Some(&replacement)).unwrap();
                    out.push(RuleInstance {
                        rule: RuleId::WandL,
                        witness: StepWitness {
                            position: pos.clone(),
                            essence_core: Some(core.clone()),
                            candidate: Some((re_i.clone(), re_j.clone())),
                            gamma_prime: Some(gp.clone()),
                        },
                        premises: vec![
                            Sequent::new(re_i, (**f).clone()),
                            Sequent::new(p2ant, s.consequent.clone()),
                        ],
                    });
                }
            }
        }
    }
    out
}

/// The position of the group formed by the root at `pos` plus a sub-multiset
/// of its multiplicative siblings matching the components of `gp`.
/// Returns the parent position when the group covers the whole layer.
pub(crate) fn partial_group_position(ant: &Bunch, pos: &Position, gp: &Bunch) -> Option<Position> {
    let (last, prefix) = pos.steps.split_last()?;
    let Step::Child(i) = last else { return None };
    let parent_pos = Position { steps: prefix.to_vec() };
    let parent = sub_at(ant, &parent_pos).ok()?;
    if parent.kind() != Some(LayerKind::Mult) {
        return None;
    }
    let cs = parent.children();
    let want: Vec<Bunch> = match gp {
        Bunch::Mult(xs) => xs.clone(),
        other => vec![other.clone()],
    };
    let mut used = vec![*i];
    for w in &want {
        let mut found = None;
        for (j, c) in cs.iter().enumerate() {
            if !used.contains(&j) && c == w {
                found = Some(j);
                break;
            }
        }
        used.push(found?);
    }
    used.sort_unstable();
    if used.len() == cs.len() {
        Some(parent_pos)
    } else if used.len() == 1 {
        Some(parent_pos.child(used[0]))
    } else {
        Some(parent_pos.select_mult(used))
    }
}

/// A check failure: the path of premise indices from the root to the bad
/// node, plus the reason.
#[derive(Debug, Clone, Error)]
#[error("invalid derivation at {path:?}: {reason}")]
pub struct CheckError {
    pub path: Vec<usize>,
    pub reason: String,
}

fn fail(path: &[usize], reason: impl Into<String>) -> CheckError {
    CheckError { path: path.to_vec(), reason: reason.into() }
}

/// Verifies every node of a derivation against the rule schemas: witness
/// validity (essence membership, full-candidate membership, position
/// validity) and premise equality up to AC.
pub fn check_derivation(d: &Derivation) -> Result<(), CheckError> {
    let mut path = Vec::new();
    check_node(d, &mut path)
}

fn check_node(d: &Derivation, path: &mut Vec<usize>) -> Result<(), CheckError> {
    check_step(d, path)?;
    for (i, p) in d.premises.iter().enumerate() {
        path.push(i);
        check_node(p, path)?;
        path.pop();
    }
    Ok(())
}

fn expect_arity(d: &Derivation, n: usize, path: &[usize]) -> Result<(), CheckError> {
    if d.premises.len() != n {
        return Err(fail(
            path,
            format!("{} expects {} premises, found {}", d.rule.name(), n, d.premises.len()),
        ));
    }
    Ok(())
}

/// Local validity of one node (premise subtrees are not recursed into).
pub fn check_step(d: &Derivation, path: &[usize]) -> Result<(), CheckError> {
    let ant = &d.conclusion.antecedent;
    let goal = &d.conclusion.consequent;
    if !ant.is_canonical() {
        return Err(fail(path, "antecedent is not canonical"));
    }
    match d.rule {
        RuleId::Id | RuleId::MTopR => {
            expect_arity(d, 0, path)?;
            let wanted = match (d.rule, goal) {
                (RuleId::Id, Formula::Atom(_)) => goal.clone(),
                (RuleId::MTopR, Formula::MTop) => Formula::MTop,
                _ => return Err(fail(path, "axiom consequent has the wrong shape")),
            };
            let Some(core) = &d.witness.essence_core else {
                return Err(fail(path, "missing essence core"));
            };
            if !is_essence_of(ant, core) {
                return Err(fail(path, "antecedent is not an essence of the witness core"));
            }
            if !core_exposes(core, &wanted) {
                return Err(fail(path, "witness core does not expose the consequent"));
            }
            Ok(())
        }
        RuleId::TopR => {
            expect_arity(d, 0, path)?;
            if !matches!(goal, Formula::Top) {
                return Err(fail(path, "TopR requires consequent top"));
            }
            Ok(())
        }
        RuleId::BotL => {
            expect_arity(d, 0, path)?;
            match sub_at(ant, &d.witness.position) {
                Ok(Bunch::Leaf(Formula::Bot)) => Ok(()),
                _ => Err(fail(path, "BotL position does not hold bot")),
            }
        }
        RuleId::AndL | RuleId::StarL => {
            expect_arity(d, 1, path)?;
            let leaf = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid principal position"))?;
            let repl = match (&leaf, d.rule) {
                (Bunch::Leaf(Formula::And(l, r)), RuleId::AndL) => {
                    mk_add(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])
                }
                (Bunch::Leaf(Formula::Star(l, r)), RuleId::StarL) => {
                    mk_mult(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])
                }
                _ => return Err(fail(path, "principal has the wrong shape")),
            };
            let want = replace_at(ant, &d.witness.position, Some(&repl)).unwrap();
            let prem = &d.premises[0].conclusion;
            if prem.antecedent != want || prem.consequent != *goal {
                return Err(fail(path, "premise does not match the rule schema"));
            }
            Ok(())
        }
        RuleId::OrL => {
            expect_arity(d, 2, path)?;
            let leaf = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid principal position"))?;
            let Bunch::Leaf(Formula::Or(l, r)) = &leaf else {
                return Err(fail(path, "principal has the wrong shape"));
            };
            let w1 =
                replace_at(ant, &d.witness.position, Some(&Bunch::Leaf((**l).clone()))).unwrap();
            let w2 =
                replace_at(ant, &d.witness.position, Some(&Bunch::Leaf((**r).clone()))).unwrap();
            for (prem, want) in d.premises.iter().zip([w1, w2]) {
                if prem.conclusion.antecedent != want || prem.conclusion.consequent != *goal {
                    return Err(fail(path, "premise does not match the rule schema"));
                }
            }
            Ok(())
        }
        RuleId::AndR => {
            expect_arity(d, 2, path)?;
            let Formula::And(l, r) = goal else {
                return Err(fail(path, "AndR requires a conjunction consequent"));
            };
            for (prem, want) in d.premises.iter().zip([&**l, &**r]) {
                if prem.conclusion.antecedent != *ant || prem.conclusion.consequent != *want {
                    return Err(fail(path, "premise does not match the rule schema"));
                }
            }
            Ok(())
        }
        RuleId::OrR(i) => {
            expect_arity(d, 1, path)?;
            let Formula::Or(l, r) = goal else {
                return Err(fail(path, "OrR requires a disjunction consequent"));
            };
            let want = if i == 1 { &**l } else { &**r };
            let prem = &d.premises[0].conclusion;
            if prem.antecedent != *ant || prem.consequent != *want {
                return Err(fail(path, "premise does not match the rule schema"));
            }
            Ok(())
        }
        RuleId::ImpR | RuleId::WandR => {
            expect_arity(d, 1, path)?;
            let (want_ant, want_goal) = match (goal, d.rule) {
                (Formula::Imp(l, r), RuleId::ImpR) => {
                    (mk_add(vec![ant.clone(), Bunch::Leaf((**l).clone())]), (**r).clone())
                }
                (Formula::Wand(l, r), RuleId::WandR) => {
                    (mk_mult(vec![ant.clone(), Bunch::Leaf((**l).clone())]), (**r).clone())
                }
                _ => return Err(fail(path, "consequent has the wrong shape")),
            };
            let prem = &d.premises[0].conclusion;
            if prem.antecedent != want_ant || prem.consequent != want_goal {
                return Err(fail(path, "premise does not match the rule schema"));
            }
            Ok(())
        }
        RuleId::ImpL => {
            expect_arity(d, 2, path)?;
            let root = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid essence-root position"))?;
            let Some(core) = &d.witness.essence_core else {
                return Err(fail(path, "missing essence core"));
            };
            if !is_essence_of(&root, core) {
                return Err(fail(path, "root is not an essence of the witness core"));
            }
            let p1 = &d.premises[0].conclusion;
            let p2 = &d.premises[1].conclusion;
            if p1.antecedent != root {
                return Err(fail(path, "left premise antecedent is not the essence root"));
            }
            if p2.consequent != *goal {
                return Err(fail(path, "right premise consequent changed"));
            }
            // solve for the principal F -> G: F is the left premise's
            // consequent, G must make the right premise match
            let f = &p1.consequent;
            let ok = exposed_shaped(core, f, true).into_iter().any(|g| {
                add_sibling(ant, &d.witness.position, &Bunch::Leaf(g))
                    .is_some_and(|want| p2.antecedent == want)
            });
            if !ok {
                return Err(fail(path, "no exposed implication matches the premises"));
            }
            Ok(())
        }
        RuleId::WandL => {
            expect_arity(d, 2, path)?;
            let root = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid essence-root position"))?;
            let Some(core) = &d.witness.essence_core else {
                return Err(fail(path, "missing essence core"));
            };
            if !is_essence_of(&root, core) {
                return Err(fail(path, "root is not an essence of the witness core"));
            }
            let p1 = &d.premises[0].conclusion;
            let p2 = &d.premises[1].conclusion;
            if p2.consequent != *goal {
                return Err(fail(path, "right premise consequent changed"));
            }
            let f = &p1.consequent;
            match (&d.witness.gamma_prime, &d.witness.candidate) {
                (None, None) => {
                    if p1.antecedent != Bunch::mtop() {
                        return Err(fail(
                            path,
                            "empty sibling group requires left premise antecedent emp",
                        ));
                    }
                    let ok = exposed_shaped(core, f, false).into_iter().any(|g| {
                        add_sibling(ant, &d.witness.position, &Bunch::Leaf(g))
                            .is_some_and(|want| p2.antecedent == want)
                    });
                    if !ok {
                        return Err(fail(path, "no exposed wand matches the premises"));
                    }
                    Ok(())
                }
                (Some(gp), Some((re_i, re_j))) => {
                    let pair = CandidatePair::new(re_i.clone(), re_j.clone()).canonical();
                    if !is_candidate_pair(&pair, gp) {
                        return Err(fail(path, "witness pair is not a candidate of the group"));
                    }
                    if p1.antecedent != *re_i {
                        return Err(fail(path, "left premise antecedent is not Re_i"));
                    }
                    let Some(group_pos) = partial_group_position(ant, &d.witness.position, gp)
                    else {
                        return Err(fail(path, "sibling group does not match the layer"));
                    };
                    let ok = exposed_shaped(core, f, false).into_iter().any(|g| {
                        let left_comp = mk_mult(vec![re_j.clone(), Bunch::Leaf(g)]);
                        let right_comp = mk_mult(vec![gp.clone(), root.clone()]);
                        let repl = mk_add(vec![left_comp, right_comp]);
                        replace_at(ant, &group_pos, Some(&repl))
                            .is_ok_and(|want| p2.antecedent == want)
                    });
                    if !ok {
                        return Err(fail(path, "no exposed wand matches the premises"));
                    }
                    Ok(())
                }
                _ => Err(fail(path, "inconsistent sibling-group witness")),
            }
        }
        RuleId::StarR => {
            expect_arity(d, 2, path)?;
            let Formula::Star(l, r) = goal else {
                return Err(fail(path, "StarR requires a star consequent"));
            };
            let Some((re_i, re_j)) = &d.witness.candidate else {
                return Err(fail(path, "missing candidate"));
            };
            let pair = CandidatePair::new(re_i.clone(), re_j.clone()).canonical();
            if !is_candidate_pair(&pair, ant) {
                return Err(fail(path, "witness pair is not a candidate of the antecedent"));
            }
            let p1 = &d.premises[0].conclusion;
            let p2 = &d.premises[1].conclusion;
            if p1.antecedent != *re_i
                || p2.antecedent != *re_j
                || p1.consequent != **l
                || p2.consequent != **r
            {
                return Err(fail(path, "premises do not match the candidate split"));
            }
            Ok(())
        }
    }
}

/// Consequents `G` such that `F -> G` (`imp = true`) or `F --* G` is exposed
/// by the core: the core is that leaf or has it as a direct additive child.
fn exposed_shaped(core: &Bunch, f: &Formula, imp: bool) -> Vec<Formula> {
    let mut out = Vec::new();
    let mut push = |leaf: &Formula| match (leaf, imp) {
        (Formula::Imp(l, r), true) | (Formula::Wand(l, r), false) if **l == *f => {
            out.push((**r).clone())
        }
        _ => {}
    };
    match core {
        Bunch::Leaf(g) => push(g),
        Bunch::Add(cs) => {
            for c in cs {
                if let Bunch::Leaf(g) = c {
                    push(g);
                }
            }
        }
        Bunch::Mult(_) => {}
    }
    out.sort();
    out.dedup();
    out
}

/// Resolves the principal formula of a checked `ImpL`/`WandL` node.
pub fn resolve_principal(d: &Derivation) -> Option<Formula> {
    let core = d.witness.essence_core.as_ref()?;
    let f = &d.premises.first()?.conclusion.consequent;
    let ant = &d.conclusion.antecedent;
    match d.rule {
        RuleId::ImpL => {
            for g in exposed_shaped(core, f, true) {
                let want = add_sibling(ant, &d.witness.position, &Bunch::Leaf(g.clone()))?;
                if d.premises[1].conclusion.antecedent == want {
                    return Some(Formula::imp(f.clone(), g));
                }
            }
            None
        }
        RuleId::WandL => {
            for g in exposed_shaped(core, f, false) {
                let want = match (&d.witness.gamma_prime, &d.witness.candidate) {
                    (None, None) => {
                        add_sibling(ant, &d.witness.position, &Bunch::Leaf(g.clone()))?
                    }
                    (Some(gp), Some((_, re_j))) => {
                        let group_pos = partial_group_position(ant, &d.witness.position, gp)?;
                        let root = sub_at(ant, &d.witness.position).ok()?;
                        let left_comp = mk_mult(vec![re_j.clone(), Bunch::Leaf(g.clone())]);
                        let right_comp = mk_mult(vec![gp.clone(), root]);
                        replace_at(ant, &group_pos, Some(&mk_add(vec![left_comp, right_comp])))
                            .ok()?
                    }
                    _ => return None,
                };
                if d.premises[1].conclusion.antecedent == want {
                    return Some(Formula::wand(f.clone(), g));
                }
            }
            None
        }
        _ => None,
    }
}

/// Search budget.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub max_depth: usize,
    pub max_nodes: usize,
}

impl Default for Budget {
    fn default() -> Budget {
        Budget { max_depth: 24, max_nodes: 200_000 }
    }
}

/// How a negative search outcome was reached.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RefutationMode {
    /// The full backward search space was finite and contained no proof.
    Exhausted,
    /// As above, but ancestor-repeat pruning fired somewhere.
    ExhaustedWithPruning,
}

/// Outcome of a prover call.
#[derive(Clone, Debug)]
pub enum ProveResult {
    Proved(Box<Derivation>),
    Refuted(RefutationMode),
    Unknown,
}

impl ProveResult {
    pub fn is_proved(&self) -> bool {
        matches!(self, ProveResult::Proved(_))
    }
    pub fn is_refuted(&self) -> bool {
        matches!(self, ProveResult::Refuted(_))
    }
}

struct Search {
    max_nodes: usize,
    depth_limit: usize,
    policy: RootPolicy,
    disabled: Vec<RuleId>,
    nodes: usize,
    cutoff: bool,
    pruned: bool,
}

fn invertible(r: RuleId) -> bool {
    matches!(
        r,
        RuleId::AndL | RuleId::StarL | RuleId::ImpR | RuleId::WandR | RuleId::OrL | RuleId::AndR
    )
}

impl Search {
    fn run(&mut self, s: &Sequent, ancestors: &mut Vec<Sequent>) -> Option<Derivation> {
        if self.nodes >= self.max_nodes {
            self.cutoff = true;
            return None;
        }
        self.nodes += 1;
        let instances: Vec<RuleInstance> = expand(s, self.policy)
            .into_iter()
            .filter(|i| !self.disabled.contains(&i.rule))
            .collect();

        // axioms close immediately
        if let Some(inst) = instances.iter().find(|i| i.rule.is_axiom()) {
            return Some(Derivation::axiom(inst.rule, s.clone(), inst.witness.clone()));
        }

        // any further rule needs one level for itself and one for its premises
        if ancestors.len() + 2 > self.depth_limit {
            self.cutoff = true;
            return None;
        }

        // commit to the first invertible instance
        if let Some(inst) = instances.iter().find(|i| invertible(i.rule)) {
            return self.apply(inst, s, ancestors);
        }

        // branch over the rest
        for inst in instances.iter().filter(|i| !invertible(i.rule) && !i.rule.is_axiom()) {
            if inst.premises.iter().any(|p| p == s || ancestors.contains(p)) {
                self.pruned = true;
                continue;
            }
            if let Some(d) = self.apply(inst, s, ancestors) {
                return Some(d);
            }
        }
        None
    }

    fn apply(
        &mut self,
        inst: &RuleInstance,
        s: &Sequent,
        ancestors: &mut Vec<Sequent>,
    ) -> Option<Derivation> {
        let mut premises = Vec::with_capacity(inst.premises.len());
        ancestors.push(s.clone());
        for p in &inst.premises {
            match self.run(p, ancestors) {
                Some(d) => premises.push(d),
                None => {
                    ancestors.pop();
                    return None;
                }
            }
        }
        ancestors.pop();
        Some(Derivation {
            rule: inst.rule,
            conclusion: s.clone(),
            witness: inst.witness.clone(),
            premises,
        })
    }
}

/// Backward proof search. Sound: a `Proved` result always passes
/// [`check_derivation`]. `Refuted` is reported only when the search space
/// was exhausted within budget; if ancestor pruning fired, the mode says so.
pub fn prove(s: &Sequent, budget: Budget) -> ProveResult {
    prove_with(s, budget, RootPolicy::Maximal, &[])
}

/// Proof search with explicit root policy and disabled rules.
///
/// Iterative deepening over the derivation depth: the splitting left rules
/// grow antecedents without bound, so a fixed-depth first traversal can sink
/// into a hopeless branch long before the depth cap ends it. Exhausting a
/// depth iteration without hitting its limit settles refutation for the
/// whole space.
pub fn prove_with(
    s: &Sequent,
    budget: Budget,
    policy: RootPolicy,
    disabled: &[RuleId],
) -> ProveResult {
    let mut nodes_used = 0;
    for limit in 1..=budget.max_depth {
        let mut search = Search {
            max_nodes: budget.max_nodes.saturating_sub(nodes_used),
            depth_limit: limit,
            policy,
            disabled: disabled.to_vec(),
            nodes: 0,
            cutoff: false,
            pruned: false,
        };
        let mut ancestors = Vec::new();
        let found = search.run(s, &mut ancestors);
        nodes_used += search.nodes;
        match found {
            Some(d) => {
                debug_assert!(check_derivation(&d).is_ok());
                return ProveResult::Proved(Box::new(d));
            }
            None if !search.cutoff => {
                // fully exhausted below this depth limit
                return if search.pruned {
                    ProveResult::Refuted(RefutationMode::ExhaustedWithPruning)
                } else {
                    ProveResult::Refuted(RefutationMode::Exhausted)
                };
            }
            None if nodes_used >= budget.max_nodes => return ProveResult::Unknown,
            None => {}
        }
    }
    ProveResult::Unknown
}

// --- JSON serialization -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NodeDto {
    rule: String,
    conclusion: String,
    #[serde(default, skip_serializing_if = "WitnessDto::is_empty")]
    witness: WitnessDto,
    #[serde(default)]
    premises: Vec<NodeDto>,
}

#[derive(Serialize, Deserialize, Default)]
struct WitnessDto {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    position: Vec<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    essence_core: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidate: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma_prime: Option<String>,
}

impl WitnessDto {
    fn is_empty(&self) -> bool {
        self.position.is_empty()
            && self.essence_core.is_none()
            && self.candidate.is_none()
            && self.gamma_prime.is_none()
    }
}

pub(crate) fn position_to_json(pos: &Position) -> Vec<serde_json::Value> {
    pos.steps
        .iter()
        .map(|s| match s {
            Step::Child(i) => serde_json::json!(i),
            Step::Select(sel) => serde_json::json!({ "select": sel }),
            Step::SelectM(sel) => serde_json::json!({ "mselect": sel }),
        })
        .collect()
}

pub(crate) fn position_from_json(v: &[serde_json::Value]) -> Result<Position, String> {
    let mut steps = Vec::new();
    for item in v {
        if let Some(i) = item.as_u64() {
            steps.push(Step::Child(i as usize));
        } else if let Some(obj) = item.as_object() {
            let (key, arr) = obj.iter().next().ok_or("empty position step")?;
            let idxs: Vec<usize> = arr
                .as_array()
                .ok_or("selection must be an array")?
                .iter()
                .map(|x| x.as_u64().map(|u| u as usize).ok_or("bad selection index"))
                .collect::<Result<_, _>>()?;
            match key.as_str() {
                "select" => steps.push(Step::Select(idxs)),
                "mselect" => steps.push(Step::SelectM(idxs)),
                _ => return Err(format!("unknown position step `{key}`")),
            }
        } else {
            return Err("position steps must be integers or selection objects".into());
        }
    }
    Ok(Position { steps })
}

fn witness_to_dto(w: &StepWitness) -> WitnessDto {
    WitnessDto {
        position: position_to_json(&w.position),
        essence_core: w.essence_core.as_ref().map(print_bunch),
        candidate: w.candidate.as_ref().map(|(a, b)| (print_bunch(a), print_bunch(b))),
        gamma_prime: w.gamma_prime.as_ref().map(print_bunch),
    }
}

fn witness_from_dto(dto: &WitnessDto) -> Result<StepWitness, String> {
    Ok(StepWitness {
        position: position_from_json(&dto.position)?,
        essence_core: dto
            .essence_core
            .as_deref()
            .map(parse_bunch)
            .transpose()
            .map_err(|e| e.to_string())?,
        candidate: dto
            .candidate
            .as_ref()
            .map(|(a, b)| -> Result<_, String> {
                Ok((
                    parse_bunch(a).map_err(|e| e.to_string())?,
                    parse_bunch(b).map_err(|e| e.to_string())?,
                ))
            })
            .transpose()?,
        gamma_prime: dto
            .gamma_prime
            .as_deref()
            .map(parse_bunch)
            .transpose()
            .map_err(|e| e.to_string())?,
    })
}

fn node_to_dto(d: &Derivation) -> NodeDto {
    NodeDto {
        rule: d.rule.name(),
        conclusion: d.conclusion.to_string(),
        witness: witness_to_dto(&d.witness),
        premises: d.premises.iter().map(node_to_dto).collect(),
    }
}

fn node_from_dto(dto: &NodeDto) -> Result<Derivation, String> {
    let rule = RuleId::from_name(&dto.rule).ok_or_else(|| format!("unknown rule {}", dto.rule))?;
    let conclusion = parse_sequent(&dto.conclusion).map_err(|e| e.to_string())?;
    let witness = witness_from_dto(&dto.witness)?;
    let premises = dto.premises.iter().map(node_from_dto).collect::<Result<_, _>>()?;
    Ok(Derivation { rule, conclusion, witness, premises })
}

/// Serializes a derivation as the documented JSON document
/// `{"calculus": "lbiz", "derivation": {...}}`.
pub fn derivation_to_json(d: &Derivation) -> serde_json::Value {
    serde_json::json!({
        "calculus": "lbiz",
        "derivation": serde_json::to_value(node_to_dto(d)).unwrap(),
    })
}

/// Parses the JSON document format produced by [`derivation_to_json`].
pub fn derivation_from_json(v: &serde_json::Value) -> Result<Derivation, String> {
    let node = v.get("derivation").unwrap_or(v);
    let dto: NodeDto = serde_json::from_value(node.clone()).map_err(|e| e.to_string())?;
    node_from_dto(&dto)
}

/// Renders a derivation as proof-tree macros, one line per inference.
pub fn derivation_to_tex(d: &Derivation) -> String {
    fn emit(d: &Derivation, out: &mut String) {
        for p in &d.premises {
            emit(p, out);
        }
        let line = match d.premises.len() {
            0 => {
                out.push_str("\\AxiomC{}\n");
                "\\UnaryInfC"
            }
            1 => "\\UnaryInfC",
            _ => "\\BinaryInfC",
        };
        out.push_str(&format!(
            "\\RightLabel{{{}}}\n{}{{\\texttt{{{}}}}}\n",
            d.rule.name(),
            line,
            tex_escape(&d.conclusion.to_string())
        ));
    }
    let mut out = String::from("\\begin{prooftree}\n");
    emit(d, &mut out);
    out.push_str("\\end{prooftree}\n");
    out
}

fn tex_escape(s: &str) -> String {
    s.replace('\\', "\\textbackslash ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;

    fn seq(s: &str) -> Sequent {
        parse_sequent(s).unwrap()
    }

    #[test]
    fn expand_axioms() {
        let insts = expand(&seq("p, (emp; q) |- p"), RootPolicy::Maximal);
        assert!(insts.iter().any(|i| i.rule == RuleId::Id));

        let insts2 = expand(&seq("p |- q"), RootPolicy::Maximal);
        assert!(insts2.is_empty());
    }

    #[test]
    fn expand_and_r() {
        let insts = expand(&seq("p; q |- p /\\ q"), RootPolicy::Maximal);
        let and_r = insts.iter().find(|i| i.rule == RuleId::AndR).unwrap();
        assert_eq!(and_r.premises[0], seq("p; q |- p"));
        assert_eq!(and_r.premises[1], seq("p; q |- q"));
    }

    #[test]
    fn expand_star_r_unit_split() {
        let insts = expand(&seq("p |- p * emp"), RootPolicy::Maximal);
        let found = insts.iter().any(|i| {
            i.rule == RuleId::StarR
                && i.premises[0] == seq("p |- p")
                && i.premises[1] == seq("emp |- emp")
        });
        assert!(found, "{insts:?}");
    }

    #[test]
    fn prove_simple() {
        assert!(prove(&seq("p |- p"), Budget::default()).is_proved());
        assert!(prove(&seq("p /\\ top |- p"), Budget::default()).is_proved());
        assert!(prove(&seq("p |- p /\\ top"), Budget::default()).is_proved());
        assert!(prove(&seq("p |- p * emp"), Budget::default()).is_proved());
        assert!(prove(&seq("p * emp |- p"), Budget::default()).is_proved());
    }

    #[test]
    fn prove_observation_sequents() {
        let r1 = prove(&seq("top --* p1, top --* (p1 -> p2) |- p2"), Budget::default());
        assert!(r1.is_proved(), "{r1:?}");
        let r2 = prove(&seq("(emp; p1), (emp; p1 -> p2) |- p2"), Budget::default());
        assert!(r2.is_proved(), "{r2:?}");
        let r3 = prove(&seq("p1; ((emp; q), (p1 -> p2)) |- p2"), Budget::default());
        assert!(r3.is_proved(), "{r3:?}");
    }

    #[test]
    fn refutations() {
        let r = prove(&seq("p |- q"), Budget::default());
        assert!(matches!(r, ProveResult::Refuted(RefutationMode::Exhausted)), "{r:?}");
        let r2 = prove(&seq("p * q |- p /\\ q"), Budget::default());
        assert!(r2.is_refuted(), "{r2:?}");
        let r3 = prove(&seq("p ; q |- p * q"), Budget::default());
        assert!(r3.is_refuted(), "{r3:?}");
    }

    #[test]
    fn proofs_check() {
        for s in [
            "p |- p",
            "p |- p * emp",
            "top --* p1, top --* (p1 -> p2) |- p2",
            "(emp; p1), (emp; p1 -> p2) |- p2",
            "p1; ((emp; q), (p1 -> p2)) |- p2",
            "p /\\ q |- q /\\ p",
            "p * q |- q * p",
            "p -> q; p |- q",
            "p --* q, p |- q",
        ] {
            let ProveResult::Proved(d) = prove(&seq(s), Budget::default()) else {
                panic!("expected proof for {s}");
            };
            check_derivation(&d).unwrap_or_else(|e| panic!("{s}: {e}"));
        }
    }

    #[test]
    fn tampered_proof_fails_check() {
        let ProveResult::Proved(mut d) = prove(&seq("p -> q; p |- q"), Budget::default()) else {
            panic!()
        };
        fn tamper(d: &mut Derivation) {
            if d.premises.is_empty() {
                d.conclusion.consequent = parse_formula("zz").unwrap();
            } else {
                tamper(&mut d.premises[0]);
            }
        }
        tamper(&mut d);
        assert!(check_derivation(&d).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ProveResult::Proved(d) = prove(&seq("p --* q, p |- q"), Budget::default()) else {
            panic!()
        };
        let v = derivation_to_json(&d);
        let back = derivation_from_json(&v).unwrap();
        assert_eq!(*d, back);
        check_derivation(&back).unwrap();
    }

    #[test]
    fn depth_matches_shape() {
        let ProveResult::Proved(d) = prove(&seq("p; q |- p /\\ q"), Budget::default()) else {
            panic!()
        };
        assert_eq!(derivation_depth(&d), 2);
    }

    #[test]
    fn principal_resolution() {
        let ProveResult::Proved(d) = prove(&seq("p -> q; p |- q"), Budget::default()) else {
            panic!()
        };
        fn find_impl(d: &Derivation) -> Option<&Derivation> {
            if d.rule == RuleId::ImpL {
                return Some(d);
            }
            d.premises.iter().find_map(find_impl)
        }
        let node = find_impl(&d).expect("proof should use ImpL");
        assert_eq!(resolve_principal(node), Some(parse_formula("p -> q").unwrap()));
    }
}
