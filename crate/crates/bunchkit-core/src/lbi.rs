//! The reference calculus LBI: explicit structural rules and `Cut`.
//!
//! LBI exists here as an oracle and cross-check for LBIZ, not as a
//! production prover: the bidirectional unit rules and contraction make the
//! backward search space unbounded, so the prover only ever answers
//! `Proved` or `Unknown`. `Cut` is checker-only and never searched.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bunch::{
    leaf_positions, mk_add, mk_mult, parse_sequent, positions, sub_at, replace_at, Bunch,
    LayerKind, Position, Sequent, Step,
};
use crate::formula::Formula;
use crate::lbiz::{position_from_json, position_to_json, Budget, CheckError, StepWitness};

/// The LBI rules. The bidirectional unit equivalences are split into one
/// rule per direction (`Up` grows the antecedent reading backward).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum LbiRuleId {
    Id,
    Cut,
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
    WkL,
    CtrL,
    EqAnt1Up,
    EqAnt1Down,
    EqAnt2Up,
    EqAnt2Down,
}

impl LbiRuleId {
    pub fn name(self) -> String {
        match self {
            LbiRuleId::Id => "Id".into(),
            LbiRuleId::Cut => "Cut".into(),
            LbiRuleId::BotL => "BotL".into(),
            LbiRuleId::TopR => "TopR".into(),
            LbiRuleId::MTopR => "MTopR".into(),
            LbiRuleId::AndL => "AndL".into(),
            LbiRuleId::OrL => "OrL".into(),
            LbiRuleId::ImpL => "ImpL".into(),
            LbiRuleId::StarL => "StarL".into(),
            LbiRuleId::WandL => "WandL".into(),
            LbiRuleId::AndR => "AndR".into(),
            LbiRuleId::OrR(i) => format!("OrR{i}"),
            LbiRuleId::ImpR => "ImpR".into(),
            LbiRuleId::StarR => "StarR".into(),
            LbiRuleId::WandR => "WandR".into(),
            LbiRuleId::WkL => "WkL".into(),
            LbiRuleId::CtrL => "CtrL".into(),
            LbiRuleId::EqAnt1Up => "EqAnt1Up".into(),
            LbiRuleId::EqAnt1Down => "EqAnt1Down".into(),
            LbiRuleId::EqAnt2Up => "EqAnt2Up".into(),
            LbiRuleId::EqAnt2Down => "EqAnt2Down".into(),
        }
    }

    pub fn from_name(s: &str) -> Option<LbiRuleId> {
        Some(match s {
            "Id" => LbiRuleId::Id,
            "Cut" => LbiRuleId::Cut,
            "BotL" => LbiRuleId::BotL,
            "TopR" => LbiRuleId::TopR,
            "MTopR" => LbiRuleId::MTopR,
            "AndL" => LbiRuleId::AndL,
            "OrL" => LbiRuleId::OrL,
            "ImpL" => LbiRuleId::ImpL,
            "StarL" => LbiRuleId::StarL,
            "WandL" => LbiRuleId::WandL,
            "AndR" => LbiRuleId::AndR,
            "OrR1" => LbiRuleId::OrR(1),
            "OrR2" => LbiRuleId::OrR(2),
            "ImpR" => LbiRuleId::ImpR,
            "StarR" => LbiRuleId::StarR,
            "WandR" => LbiRuleId::WandR,
            "WkL" => LbiRuleId::WkL,
            "CtrL" => LbiRuleId::CtrL,
            "EqAnt1Up" => LbiRuleId::EqAnt1Up,
            "EqAnt1Down" => LbiRuleId::EqAnt1Down,
            "EqAnt2Up" => LbiRuleId::EqAnt2Up,
            "EqAnt2Down" => LbiRuleId::EqAnt2Down,
            _ => return None,
        })
    }

    pub fn is_axiom(self) -> bool {
        matches!(
            self,
            LbiRuleId::Id | LbiRuleId::BotL | LbiRuleId::TopR | LbiRuleId::MTopR
        )
    }

    /// Rules whose premise antecedent can be larger than the conclusion's
    /// (reading backward); these are capped during search.
    pub fn grows_upward(self) -> bool {
        matches!(self, LbiRuleId::CtrL | LbiRuleId::EqAnt1Up | LbiRuleId::EqAnt2Up)
    }
}

/// An LBI derivation node. Witnesses reuse the LBIZ shape: `position` for
/// the principal or rewrite site, `gamma_prime` for the shared/deleted
/// group of `->L`/`--*L`/`WkL`, `candidate` for the `*R` split.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LbiDerivation {
    pub rule: LbiRuleId,
    pub conclusion: Sequent,
    pub witness: StepWitness,
    pub premises: Vec<LbiDerivation>,
}

pub fn lbi_derivation_depth(d: &LbiDerivation) -> usize {
    1 + d.premises.iter().map(lbi_derivation_depth).max().unwrap_or(0)
}

#[derive(Clone, Debug)]
pub struct LbiInstance {
    pub rule: LbiRuleId,
    pub witness: StepWitness,
    pub premises: Vec<Sequent>,
}

/// Caps for the upward-growing rules during search.
#[derive(Clone, Copy, Debug)]
pub struct LbiCaps {
    /// Largest antecedent leaf count a growing rule may produce.
    pub max_struct_growth: usize,
}

impl LbiCaps {
    /// Default cap relative to the goal: twice its antecedent leaves,
    /// enough for one whole-antecedent contraction.
    pub fn for_goal(s: &Sequent) -> LbiCaps {
        LbiCaps { max_struct_growth: (2 * s.antecedent.leaf_count()).max(4) }
    }
}

fn non_empty_proper_subsets(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 || n > 16 {
        return out;
    }
    for mask in 1u32..(1 << n) - 1 {
        out.push((0..n).filter(|i| mask & (1 << i) != 0).collect());
    }
    out
}

fn bunch_of_indices(cs: &[Bunch], idxs: &[usize], kind: LayerKind) -> Bunch {
    let parts: Vec<Bunch> = idxs.iter().map(|i| cs[*i].clone()).collect();
    match kind {
        LayerKind::Add => mk_add(parts),
        LayerKind::Mult => mk_mult(parts),
    }
}

/// Backward instances of every enabled LBI rule. `Cut` is never generated.
/// Growing rules are generated only while the premise antecedent stays
/// within `caps.max_struct_growth` leaves.
pub fn lbi_expand(s: &Sequent, disabled: &[LbiRuleId], caps: LbiCaps) -> Vec<LbiInstance> {
    let mut out = Vec::new();
    let ant = &s.antecedent;
    let goal = &s.consequent;
    let enabled = |r: LbiRuleId| !disabled.contains(&r);

    // axioms
    if enabled(LbiRuleId::Id) {
        if let Bunch::Leaf(f) = ant {
            if f == goal {
                out.push(LbiInstance {
                    rule: LbiRuleId::Id,
                    witness: StepWitness::default(),
                    premises: Vec::new(),
                });
            }
        }
    }
    if enabled(LbiRuleId::TopR) && matches!(goal, Formula::Top) {
        out.push(LbiInstance {
            rule: LbiRuleId::TopR,
            witness: StepWitness::default(),
            premises: Vec::new(),
        });
    }
    if enabled(LbiRuleId::MTopR)
        && matches!(goal, Formula::MTop)
        && *ant == Bunch::mtop()
    {
        out.push(LbiInstance {
            rule: LbiRuleId::MTopR,
            witness: StepWitness::default(),
            premises: Vec::new(),
        });
    }
    if enabled(LbiRuleId::BotL) {
        if let Some((pos, _)) =
            leaf_positions(ant).into_iter().find(|(_, f)| matches!(f, Formula::Bot))
        {
            out.push(LbiInstance {
                rule: LbiRuleId::BotL,
                witness: StepWitness::at(pos),
                premises: Vec::new(),
            });
        }
    }

    // unit erasures early: they shrink and are half of an equivalence
    if enabled(LbiRuleId::EqAnt1Down) {
        for (pos, f) in leaf_positions(ant) {
            if matches!(f, Formula::Top) && has_parent_kind(ant, &pos, LayerKind::Add) {
                if let Ok(prem) = replace_at(ant, &pos, None) {
                    out.push(LbiInstance {
                        rule: LbiRuleId::EqAnt1Down,
                        witness: StepWitness::at(pos),
                        premises: vec![Sequent::new(prem, goal.clone())],
                    });
                }
            }
        }
    }
    if enabled(LbiRuleId::EqAnt2Down) {
        for (pos, f) in leaf_positions(ant) {
            if matches!(f, Formula::MTop) && has_parent_kind(ant, &pos, LayerKind::Mult) {
                if let Ok(prem) = replace_at(ant, &pos, None) {
                    out.push(LbiInstance {
                        rule: LbiRuleId::EqAnt2Down,
                        witness: StepWitness::at(pos),
                        premises: vec![Sequent::new(prem, goal.clone())],
                    });
                }
            }
        }
    }

    // left logical rules on formula leaves
    for (pos, f) in leaf_positions(ant) {
        match &f {
            Formula::And(l, r) if enabled(LbiRuleId::AndL) => {
                let prem = replace_at(
                    ant,
                    &pos,
                    Some(&mk_add(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])),
                )
                .unwrap();
                out.push(LbiInstance {
                    rule: LbiRuleId::AndL,
                    witness: StepWitness::at(pos),
                    premises: vec![Sequent::new(prem, goal.clone())],
                });
            }
            Formula::Star(l, r) if enabled(LbiRuleId::StarL) => {
                let prem = replace_at(
                    ant,
                    &pos,
                    Some(&mk_mult(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])),
                )
                .unwrap();
                out.push(LbiInstance {
                    rule: LbiRuleId::StarL,
                    witness: StepWitness::at(pos),
                    premises: vec![Sequent::new(prem, goal.clone())],
                });
            }
            Formula::Or(l, r) if enabled(LbiRuleId::OrL) => {
                let p1 = replace_at(ant, &pos, Some(&Bunch::Leaf((**l).clone()))).unwrap();
                let p2 = replace_at(ant, &pos, Some(&Bunch::Leaf((**r).clone()))).unwrap();
                out.push(LbiInstance {
                    rule: LbiRuleId::OrL,
                    witness: StepWitness::at(pos),
                    premises: vec![
                        Sequent::new(p1, goal.clone()),
                        Sequent::new(p2, goal.clone()),
                    ],
                });
            }
            Formula::Imp(l, r) if enabled(LbiRuleId::ImpL) => {
                // needs a non-empty shared additive context Γ1
                if let Some((siblings, kind, parent_cs)) = siblings_of(ant, &pos) {
                    if kind == LayerKind::Add {
                        let prem2 =
                            replace_at(ant, &pos, Some(&Bunch::Leaf((**r).clone()))).unwrap();
                        for subset in non_empty_proper_subsets(parent_cs.len()) {
                            if !subset.iter().all(|i| siblings.contains(i)) {
                                continue;
                            }
                            let g1 = bunch_of_indices(&parent_cs, &subset, LayerKind::Add);
                            out.push(LbiInstance {
                                rule: LbiRuleId::ImpL,
                                witness: StepWitness {
                                    position: pos.clone(),
                                    gamma_prime: Some(g1.clone()),
                                    ..Default::default()
                                },
                                premises: vec![
                                    Sequent::new(g1, (**l).clone()),
                                    Sequent::new(prem2.clone(), goal.clone()),
                                ],
                            });
                        }
                    }
                }
            }
            Formula::Wand(l, r) if enabled(LbiRuleId::WandL) => {
                if let Some((siblings, kind, parent_cs)) = siblings_of(ant, &pos) {
                    if kind == LayerKind::Mult {
                        for subset in non_empty_proper_subsets(parent_cs.len()) {
                            if !subset.iter().all(|i| siblings.contains(i)) {
                                continue;
                            }
                            let g1 = bunch_of_indices(&parent_cs, &subset, LayerKind::Mult);
                            let Some(group) = group_with(ant, &pos, &subset) else { continue };
                            let prem2 =
                                replace_at(ant, &group, Some(&Bunch::Leaf((**r).clone())))
                                    .unwrap();
                            out.push(LbiInstance {
                                rule: LbiRuleId::WandL,
                                witness: StepWitness {
                                    position: pos.clone(),
                                    gamma_prime: Some(g1.clone()),
                                    ..Default::default()
                                },
                                premises: vec![
                                    Sequent::new(g1, (**l).clone()),
                                    Sequent::new(prem2, goal.clone()),
                                ],
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }

    // right rules
    match goal {
        Formula::And(l, r) if enabled(LbiRuleId::AndR) => {
            out.push(LbiInstance {
                rule: LbiRuleId::AndR,
                witness: StepWitness::default(),
                premises: vec![
                    Sequent::new(ant.clone(), (**l).clone()),
                    Sequent::new(ant.clone(), (**r).clone()),
                ],
            });
        }
        Formula::Or(l, r) => {
            for (i, side) in [(1u8, &**l), (2, &**r)] {
                if enabled(LbiRuleId::OrR(i)) {
                    out.push(LbiInstance {
                        rule: LbiRuleId::OrR(i),
                        witness: StepWitness::default(),
                        premises: vec![Sequent::new(ant.clone(), side.clone())],
                    });
                }
            }
        }
        Formula::Imp(l, r) if enabled(LbiRuleId::ImpR) => {
            let prem = mk_add(vec![ant.clone(), Bunch::Leaf((**l).clone())]);
            out.push(LbiInstance {
                rule: LbiRuleId::ImpR,
                witness: StepWitness::default(),
                premises: vec![Sequent::new(prem, (**r).clone())],
            });
        }
        Formula::Wand(l, r) if enabled(LbiRuleId::WandR) => {
            let prem = mk_mult(vec![ant.clone(), Bunch::Leaf((**l).clone())]);
            out.push(LbiInstance {
                rule: LbiRuleId::WandR,
                witness: StepWitness::default(),
                premises: vec![Sequent::new(prem, (**r).clone())],
            });
        }
        Formula::Star(l, r) if enabled(LbiRuleId::StarR) => {
            if let Bunch::Mult(cs) = ant {
                for subset in non_empty_proper_subsets(cs.len()) {
                    let rest: Vec<usize> =
                        (0..cs.len()).filter(|i| !subset.contains(i)).collect();
                    let g1 = bunch_of_indices(cs, &subset, LayerKind::Mult);
                    let g2 = bunch_of_indices(cs, &rest, LayerKind::Mult);
                    out.push(LbiInstance {
                        rule: LbiRuleId::StarR,
                        witness: StepWitness {
                            candidate: Some((g1.clone(), g2.clone())),
                            ..Default::default()
                        },
                        premises: vec![
                            Sequent::new(g1, (**l).clone()),
                            Sequent::new(g2, (**r).clone()),
                        ],
                    });
                }
            }
        }
        _ => {}
    }

    // structural rules
    if enabled(LbiRuleId::WkL) {
        // delete a non-empty proper part of some additive layer
        for pos in positions(ant) {
            let Ok(sub) = sub_at(ant, &pos) else { continue };
            let Bunch::Add(cs) = &sub else { continue };
            if !matches!(pos.steps.last(), None | Some(Step::Child(_))) {
                continue;
            }
            for subset in non_empty_proper_subsets(cs.len()) {
                let kept: Vec<usize> = (0..cs.len()).filter(|i| !subset.contains(i)).collect();
                let deleted = bunch_of_indices(cs, &subset, LayerKind::Add);
                let kept_b = bunch_of_indices(cs, &kept, LayerKind::Add);
                let prem = replace_at(ant, &pos, Some(&kept_b)).unwrap();
                out.push(LbiInstance {
                    rule: LbiRuleId::WkL,
                    witness: StepWitness {
                        position: pos.clone(),
                        gamma_prime: Some(deleted),
                        ..Default::default()
                    },
                    premises: vec![Sequent::new(prem, goal.clone())],
                });
            }
        }
    }
    // Growing rules, capped and position-restricted: the unit insertions
    // matter at the root (for *R splits) and next to implication leaves (to
    // give ->L an additive context or --*L a resource); contraction matters
    // only on sub-bunches that hold an implication to reuse. The checker
    // accepts arbitrary instances.
    let growth_ok = |b: &Bunch| b.leaf_count() <= caps.max_struct_growth;
    if enabled(LbiRuleId::EqAnt1Up) {
        for pos in up_sites(ant, true) {
            let here = sub_at(ant, &pos).unwrap();
            let prem =
                replace_at(ant, &pos, Some(&mk_add(vec![here, Bunch::Leaf(Formula::Top)])))
                    .unwrap();
            if growth_ok(&prem) {
                out.push(LbiInstance {
                    rule: LbiRuleId::EqAnt1Up,
                    witness: StepWitness::at(pos),
                    premises: vec![Sequent::new(prem, goal.clone())],
                });
            }
        }
    }
    if enabled(LbiRuleId::EqAnt2Up) {
        for pos in up_sites(ant, false) {
            let here = sub_at(ant, &pos).unwrap();
            let prem = replace_at(ant, &pos, Some(&mk_mult(vec![here, Bunch::mtop()]))).unwrap();
            if growth_ok(&prem) {
                out.push(LbiInstance {
                    rule: LbiRuleId::EqAnt2Up,
                    witness: StepWitness::at(pos),
                    premises: vec![Sequent::new(prem, goal.clone())],
                });
            }
        }
    }
    if enabled(LbiRuleId::CtrL) {
        for pos in positions(ant) {
            let Ok(here) = sub_at(ant, &pos) else { continue };
            if !here.leaves().iter().any(|f| matches!(f, Formula::Imp(_, _) | Formula::Wand(_, _)))
            {
                continue;
            }
            let prem = replace_at(ant, &pos, Some(&mk_add(vec![here.clone(), here]))).unwrap();
            if growth_ok(&prem) {
                out.push(LbiInstance {
                    rule: LbiRuleId::CtrL,
                    witness: StepWitness::at(pos),
                    premises: vec![Sequent::new(prem, goal.clone())],
                });
            }
        }
    }

    out
}

/// Search sites for the upward unit insertions: the root, plus every
/// implication leaf of the matching flavor (`->` wants an additive `top`
/// next to it, `--*` a multiplicative `emp`).
fn up_sites(ant: &Bunch, additive: bool) -> Vec<Position> {
    let mut out = vec![Position::root()];
    for (pos, f) in leaf_positions(ant) {
        let hit = match (&f, additive) {
            (Formula::Imp(_, _), true) | (Formula::Wand(_, _), false) => true,
            _ => false,
        };
        if hit {
            out.push(pos);
        }
    }
    out
}

/// The sibling indices, layer kind, and layer children of the leaf at `pos`.
fn siblings_of(ant: &Bunch, pos: &Position) -> Option<(Vec<usize>, LayerKind, Vec<Bunch>)> {
    let (last, prefix) = pos.steps.split_last()?;
    let Step::Child(i) = last else { return None };
    let parent = sub_at(ant, &Position { steps: prefix.to_vec() }).ok()?;
    let kind = parent.kind()?;
    let cs = parent.children().to_vec();
    let sibs: Vec<usize> = (0..cs.len()).filter(|j| j != i).collect();
    Some((sibs, kind, cs))
}

/// Position covering the leaf at `pos` together with the given sibling
/// indices; the parent itself when that covers the whole layer.
fn group_with(ant: &Bunch, pos: &Position, sibling_idxs: &[usize]) -> Option<Position> {
    let (last, prefix) = pos.steps.split_last()?;
    let Step::Child(i) = last else { return None };
    let parent_pos = Position { steps: prefix.to_vec() };
    let parent = sub_at(ant, &parent_pos).ok()?;
    let n = parent.children().len();
    let mut all: Vec<usize> = sibling_idxs.to_vec();
    all.push(*i);
    all.sort_unstable();
    all.dedup();
    if all.len() == n {
        Some(parent_pos)
    } else if all.len() == 1 {
        Some(parent_pos.child(all[0]))
    } else {
        match parent.kind()? {
            LayerKind::Add => Some(parent_pos.select(all)),
            LayerKind::Mult => Some(parent_pos.select_mult(all)),
        }
    }
}

fn has_parent_kind(ant: &Bunch, pos: &Position, kind: LayerKind) -> bool {
    match pos.steps.split_last() {
        Some((Step::Child(_), prefix)) => sub_at(ant, &Position { steps: prefix.to_vec() })
            .map(|p| p.kind() == Some(kind))
            .unwrap_or(false),
        _ => false,
    }
}

fn fail(path: &[usize], reason: impl Into<String>) -> CheckError {
    CheckError { path: path.to_vec(), reason: reason.into() }
}

/// Local verification of every node against the LBI schemas, `Cut` included.
pub fn lbi_check_derivation(d: &LbiDerivation) -> Result<(), CheckError> {
    let mut path = Vec::new();
    lbi_check_node(d, &mut path)
}

fn lbi_check_node(d: &LbiDerivation, path: &mut Vec<usize>) -> Result<(), CheckError> {
    lbi_check_step(d, path)?;
    for (i, p) in d.premises.iter().enumerate() {
        path.push(i);
        lbi_check_node(p, path)?;
        path.pop();
    }
    Ok(())
}

fn premises_match(
    d: &LbiDerivation,
    want: &[Sequent],
    path: &[usize],
) -> Result<(), CheckError> {
    if d.premises.len() != want.len() {
        return Err(fail(
            path,
            format!("{} expects {} premises, found {}", d.rule.name(), want.len(), d.premises.len()),
        ));
    }
    for (prem, w) in d.premises.iter().zip(want) {
        if prem.conclusion != *w {
            return Err(fail(
                path,
                format!("premise {} does not match the rule schema {}", prem.conclusion, w),
            ));
        }
    }
    Ok(())
}

/// Checks one node locally.
pub fn lbi_check_step(d: &LbiDerivation, path: &[usize]) -> Result<(), CheckError> {
    let ant = &d.conclusion.antecedent;
    let goal = &d.conclusion.consequent;
    if !ant.is_canonical() {
        return Err(fail(path, "antecedent is not canonical"));
    }
    match d.rule {
        LbiRuleId::Id => {
            if d.premises.is_empty() && *ant == Bunch::Leaf(goal.clone()) {
                Ok(())
            } else {
                Err(fail(path, "Id requires antecedent identical to the consequent"))
            }
        }
        LbiRuleId::TopR => {
            if d.premises.is_empty() && matches!(goal, Formula::Top) {
                Ok(())
            } else {
                Err(fail(path, "TopR requires consequent top"))
            }
        }
        LbiRuleId::MTopR => {
            if d.premises.is_empty() && matches!(goal, Formula::MTop) && *ant == Bunch::mtop() {
                Ok(())
            } else {
                Err(fail(path, "MTopR requires emp |- emp"))
            }
        }
        LbiRuleId::BotL => match sub_at(ant, &d.witness.position) {
            Ok(Bunch::Leaf(Formula::Bot)) if d.premises.is_empty() => Ok(()),
            _ => Err(fail(path, "BotL position does not hold bot")),
        },
        LbiRuleId::AndL | LbiRuleId::StarL | LbiRuleId::OrL => {
            let leaf = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid principal position"))?;
            match (&leaf, d.rule) {
                (Bunch::Leaf(Formula::And(l, r)), LbiRuleId::AndL) => {
                    let repl =
                        mk_add(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())]);
                    let w = replace_at(ant, &d.witness.position, Some(&repl)).unwrap();
                    premises_match(d, &[Sequent::new(w, goal.clone())], path)
                }
                (Bunch::Leaf(Formula::Star(l, r)), LbiRuleId::StarL) => {
                    let repl =
                        mk_mult(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())]);
                    let w = replace_at(ant, &d.witness.position, Some(&repl)).unwrap();
                    premises_match(d, &[Sequent::new(w, goal.clone())], path)
                }
                (Bunch::Leaf(Formula::Or(l, r)), LbiRuleId::OrL) => {
                    let w1 = replace_at(ant, &d.witness.position, Some(&Bunch::Leaf((**l).clone())))
                        .unwrap();
                    let w2 = replace_at(ant, &d.witness.position, Some(&Bunch::Leaf((**r).clone())))
                        .unwrap();
                    premises_match(
                        d,
                        &[Sequent::new(w1, goal.clone()), Sequent::new(w2, goal.clone())],
                        path,
                    )
                }
                _ => Err(fail(path, "principal has the wrong shape")),
            }
        }
        LbiRuleId::ImpL => {
            let leaf = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid principal position"))?;
            let Bunch::Leaf(Formula::Imp(l, r)) = &leaf else {
                return Err(fail(path, "principal has the wrong shape"));
            };
            if !has_parent_kind(ant, &d.witness.position, LayerKind::Add) {
                return Err(fail(path, "->L principal needs an additive context"));
            }
            let Some(g1) = &d.witness.gamma_prime else {
                return Err(fail(path, "missing shared context"));
            };
            let Some((sibs, _, cs)) = siblings_of(ant, &d.witness.position) else {
                return Err(fail(path, "invalid principal position"));
            };
            if !subset_matches(&cs, &sibs, g1, LayerKind::Add) {
                return Err(fail(path, "shared context is not part of the additive layer"));
            }
            let prem2 =
                replace_at(ant, &d.witness.position, Some(&Bunch::Leaf((**r).clone()))).unwrap();
            premises_match(
                d,
                &[Sequent::new(g1.clone(), (**l).clone()), Sequent::new(prem2, goal.clone())],
                path,
            )
        }
        LbiRuleId::WandL => {
            let leaf = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid principal position"))?;
            let Bunch::Leaf(Formula::Wand(l, r)) = &leaf else {
                return Err(fail(path, "principal has the wrong shape"));
            };
            if !has_parent_kind(ant, &d.witness.position, LayerKind::Mult) {
                return Err(fail(path, "--*L principal needs multiplicative siblings"));
            }
            let Some(g1) = &d.witness.gamma_prime else {
                return Err(fail(path, "missing resource context"));
            };
            let Some((sibs, _, cs)) = siblings_of(ant, &d.witness.position) else {
                return Err(fail(path, "invalid principal position"));
            };
            let Some(idxs) = subset_indices(&cs, &sibs, g1, LayerKind::Mult) else {
                return Err(fail(path, "resource context is not part of the layer"));
            };
            let Some(group) = group_with(ant, &d.witness.position, &idxs) else {
                return Err(fail(path, "cannot form the principal group"));
            };
            let prem2 = replace_at(ant, &group, Some(&Bunch::Leaf((**r).clone()))).unwrap();
            premises_match(
                d,
                &[Sequent::new(g1.clone(), (**l).clone()), Sequent::new(prem2, goal.clone())],
                path,
            )
        }
        LbiRuleId::AndR => {
            let Formula::And(l, r) = goal else {
                return Err(fail(path, "AndR requires a conjunction consequent"));
            };
            premises_match(
                d,
                &[
                    Sequent::new(ant.clone(), (**l).clone()),
                    Sequent::new(ant.clone(), (**r).clone()),
                ],
                path,
            )
        }
        LbiRuleId::OrR(i) => {
            let Formula::Or(l, r) = goal else {
                return Err(fail(path, "OrR requires a disjunction consequent"));
            };
            let side = if i == 1 { &**l } else { &**r };
            premises_match(d, &[Sequent::new(ant.clone(), side.clone())], path)
        }
        LbiRuleId::ImpR => {
            let Formula::Imp(l, r) = goal else {
                return Err(fail(path, "ImpR requires an implication consequent"));
            };
            let prem = mk_add(vec![ant.clone(), Bunch::Leaf((**l).clone())]);
            premises_match(d, &[Sequent::new(prem, (**r).clone())], path)
        }
        LbiRuleId::WandR => {
            let Formula::Wand(l, r) = goal else {
                return Err(fail(path, "WandR requires a wand consequent"));
            };
            let prem = mk_mult(vec![ant.clone(), Bunch::Leaf((**l).clone())]);
            premises_match(d, &[Sequent::new(prem, (**r).clone())], path)
        }
        LbiRuleId::StarR => {
            let Formula::Star(l, r) = goal else {
                return Err(fail(path, "StarR requires a star consequent"));
            };
            let Some((g1, g2)) = &d.witness.candidate else {
                return Err(fail(path, "missing split"));
            };
            if mk_mult(vec![g1.clone(), g2.clone()]) != *ant {
                return Err(fail(path, "split does not recompose the antecedent"));
            }
            premises_match(
                d,
                &[Sequent::new(g1.clone(), (**l).clone()), Sequent::new(g2.clone(), (**r).clone())],
                path,
            )
        }
        LbiRuleId::WkL => {
            let layer = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid weakening position"))?;
            let Bunch::Add(cs) = &layer else {
                return Err(fail(path, "weakening site is not an additive layer"));
            };
            let Some(deleted) = &d.witness.gamma_prime else {
                return Err(fail(path, "missing deleted part"));
            };
            let all: Vec<usize> = (0..cs.len()).collect();
            let Some(idxs) = subset_indices(cs, &all, deleted, LayerKind::Add) else {
                return Err(fail(path, "deleted part is not in the layer"));
            };
            if idxs.len() == cs.len() {
                return Err(fail(path, "weakening cannot delete the whole layer"));
            }
            let kept: Vec<usize> = (0..cs.len()).filter(|i| !idxs.contains(i)).collect();
            let kept_b = bunch_of_indices(cs, &kept, LayerKind::Add);
            let prem = replace_at(ant, &d.witness.position, Some(&kept_b)).unwrap();
            premises_match(d, &[Sequent::new(prem, goal.clone())], path)
        }
        LbiRuleId::CtrL => {
            let here = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid contraction position"))?;
            let prem =
                replace_at(ant, &d.witness.position, Some(&mk_add(vec![here.clone(), here])))
                    .unwrap();
            premises_match(d, &[Sequent::new(prem, goal.clone())], path)
        }
        LbiRuleId::EqAnt1Up => {
            let here = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid position"))?;
            let prem = replace_at(
                ant,
                &d.witness.position,
                Some(&mk_add(vec![here, Bunch::Leaf(Formula::Top)])),
            )
            .unwrap();
            premises_match(d, &[Sequent::new(prem, goal.clone())], path)
        }
        LbiRuleId::EqAnt2Up => {
            let here = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid position"))?;
            let prem =
                replace_at(ant, &d.witness.position, Some(&mk_mult(vec![here, Bunch::mtop()])))
                    .unwrap();
            premises_match(d, &[Sequent::new(prem, goal.clone())], path)
        }
        LbiRuleId::EqAnt1Down | LbiRuleId::EqAnt2Down => {
            let (want_leaf, want_kind) = if matches!(d.rule, LbiRuleId::EqAnt1Down) {
                (Formula::Top, LayerKind::Add)
            } else {
                (Formula::MTop, LayerKind::Mult)
            };
            match sub_at(ant, &d.witness.position) {
                Ok(Bunch::Leaf(f)) if f == want_leaf => {}
                _ => return Err(fail(path, "unit erasure position does not hold the unit")),
            }
            if !has_parent_kind(ant, &d.witness.position, want_kind) {
                return Err(fail(path, "unit erasure in the wrong layer kind"));
            }
            let prem = replace_at(ant, &d.witness.position, None)
                .map_err(|_| fail(path, "cannot erase the whole antecedent"))?;
            premises_match(d, &[Sequent::new(prem, goal.clone())], path)
        }
        LbiRuleId::Cut => {
            if d.premises.len() != 2 {
                return Err(fail(path, "Cut expects 2 premises"));
            }
            let p1 = &d.premises[0].conclusion;
            let p2 = &d.premises[1].conclusion;
            let spliced = sub_at(ant, &d.witness.position)
                .map_err(|_| fail(path, "invalid cut position"))?;
            if p1.antecedent != spliced {
                return Err(fail(path, "cut position does not hold the left antecedent"));
            }
            let cut_formula = Bunch::Leaf(p1.consequent.clone());
            let want2 = replace_at(ant, &d.witness.position, Some(&cut_formula)).unwrap();
            if p2.antecedent != want2 || p2.consequent != *goal {
                return Err(fail(path, "cut premises do not recompose the conclusion"));
            }
            Ok(())
        }
    }
}

/// Matches the components of `part` against the children of a layer at
/// `allowed` indices, returning the matched indices.
fn subset_indices(
    cs: &[Bunch],
    allowed: &[usize],
    part: &Bunch,
    kind: LayerKind,
) -> Option<Vec<usize>> {
    let want: Vec<Bunch> = if part.kind() == Some(kind) {
        part.children().to_vec()
    } else {
        vec![part.clone()]
    };
    let mut used: Vec<usize> = Vec::new();
    for w in &want {
        let mut found = None;
        for &j in allowed {
            if !used.contains(&j) && &cs[j] == w {
                found = Some(j);
                break;
            }
        }
        used.push(found?);
    }
    used.sort_unstable();
    Some(used)
}

fn subset_matches(cs: &[Bunch], allowed: &[usize], part: &Bunch, kind: LayerKind) -> bool {
    subset_indices(cs, allowed, part, kind).is_some()
}

/// Outcome of bounded LBI search: never `Refuted`, the space is unbounded.
#[derive(Clone, Debug)]
pub enum LbiResult {
    Proved(Box<LbiDerivation>),
    Unknown,
}

impl LbiResult {
    pub fn is_proved(&self) -> bool {
        matches!(self, LbiResult::Proved(_))
    }
}

struct LbiSearch {
    max_nodes: usize,
    depth_limit: usize,
    disabled: Vec<LbiRuleId>,
    caps: LbiCaps,
    nodes: usize,
    exhausted_budget: bool,
    /// failure cache: sequent -> largest remaining depth at which it failed
    failed: HashMap<Sequent, usize>,
    /// success cache: sub-proofs found earlier in this call
    proved: HashMap<Sequent, LbiDerivation>,
    /// expansion cache: iterative deepening revisits the same sequents
    expansions: HashMap<Sequent, Vec<LbiInstance>>,
}

/// Search-time filtering of the raw instances: duplicates (same rule kind,
/// same premises) are dropped, `->L` keeps only the full shared context per
/// principal (weakening recovers the smaller ones), and contraction is
/// tried right after the unit erasures since it is the move that unblocks
/// resource-starved goals.
fn search_order(mut instances: Vec<LbiInstance>) -> Vec<LbiInstance> {
    let mut seen: Vec<(LbiRuleId, Vec<Sequent>)> = Vec::new();
    instances.retain(|inst| {
        if inst.rule == LbiRuleId::ImpL {
            return true; // handled below
        }
        let key = (inst.rule, inst.premises.clone());
        if seen.contains(&key) {
            false
        } else {
            seen.push(key);
            true
        }
    });
    // keep only the widest shared context per ->L site
    let mut best: HashMap<(Position, Sequent), usize> = HashMap::new();
    for inst in instances.iter().filter(|i| i.rule == LbiRuleId::ImpL) {
        let key = (inst.witness.position.clone(), inst.premises[1].clone());
        let width = inst.premises[0].antecedent.leaf_count();
        let entry = best.entry(key).or_insert(0);
        if width > *entry {
            *entry = width;
        }
    }
    instances.retain(|inst| {
        inst.rule != LbiRuleId::ImpL
            || best
                .get(&(inst.witness.position.clone(), inst.premises[1].clone()))
                .is_some_and(|w| inst.premises[0].antecedent.leaf_count() == *w)
    });
    let rank = |r: LbiRuleId| -> u8 {
        match r {
            LbiRuleId::Id | LbiRuleId::BotL | LbiRuleId::TopR | LbiRuleId::MTopR => 0,
            LbiRuleId::EqAnt1Down | LbiRuleId::EqAnt2Down => 1,
            LbiRuleId::CtrL => 2,
            LbiRuleId::AndL | LbiRuleId::StarL | LbiRuleId::OrL => 3,
            LbiRuleId::AndR | LbiRuleId::OrR(_) | LbiRuleId::ImpR | LbiRuleId::WandR => 4,
            LbiRuleId::ImpL | LbiRuleId::WandL | LbiRuleId::StarR => 5,
            LbiRuleId::WkL => 6,
            LbiRuleId::EqAnt1Up | LbiRuleId::EqAnt2Up | LbiRuleId::Cut => 7,
        }
    };
    instances.sort_by_key(|i| rank(i.rule));
    instances
}

impl LbiSearch {
    fn run(&mut self, s: &Sequent, ancestors: &mut Vec<Sequent>) -> Option<LbiDerivation> {
        if self.nodes >= self.max_nodes {
            self.exhausted_budget = true;
            return None;
        }
        self.nodes += 1;
        if let Some(d) = self.proved.get(s) {
            return Some(d.clone());
        }
        let remaining = self.depth_limit - ancestors.len();
        if let Some(rem) = self.failed.get(s) {
            if *rem >= remaining {
                return None;
            }
        }
        let instances = match self.expansions.get(s) {
            Some(cached) => cached.clone(),
            None => {
                let built = search_order(lbi_expand(s, &self.disabled, self.caps));
                self.expansions.insert(s.clone(), built.clone());
                built
            }
        };
        if let Some(inst) = instances.iter().find(|i| i.rule.is_axiom()) {
            let d = LbiDerivation {
                rule: inst.rule,
                conclusion: s.clone(),
                witness: inst.witness.clone(),
                premises: Vec::new(),
            };
            self.proved.insert(s.clone(), d.clone());
            return Some(d);
        }
        if remaining < 2 {
            return None;
        }
        for inst in instances.iter().filter(|i| !i.rule.is_axiom()) {
            if inst.premises.iter().any(|p| p == s || ancestors.contains(p)) {
                continue;
            }
            ancestors.push(s.clone());
            let mut premises = Vec::with_capacity(inst.premises.len());
            let mut ok = true;
            for p in &inst.premises {
                match self.run(p, ancestors) {
                    Some(d) => premises.push(d),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            ancestors.pop();
            if ok {
                let d = LbiDerivation {
                    rule: inst.rule,
                    conclusion: s.clone(),
                    witness: inst.witness.clone(),
                    premises,
                };
                self.proved.insert(s.clone(), d.clone());
                return Some(d);
            }
        }
        let entry = self.failed.entry(s.clone()).or_insert(0);
        if *entry < remaining {
            *entry = remaining;
        }
        None
    }
}

/// Bounded backward search over LBI with per-rule toggles. Iterative
/// deepening with a structure-growth cap; sound but incomplete, so the
/// negative answer is only ever `Unknown`.
pub fn lbi_prove(s: &Sequent, budget: Budget, disabled: &[LbiRuleId]) -> LbiResult {
    lbi_prove_capped(s, budget, disabled, LbiCaps::for_goal(s))
}

pub fn lbi_prove_capped(
    s: &Sequent,
    budget: Budget,
    disabled: &[LbiRuleId],
    caps: LbiCaps,
) -> LbiResult {
    let mut nodes_used = 0;
    let mut failed: HashMap<Sequent, usize> = HashMap::new();
    let mut proved: HashMap<Sequent, LbiDerivation> = HashMap::new();
    let mut expansions: HashMap<Sequent, Vec<LbiInstance>> = HashMap::new();
    for limit in 1..=budget.max_depth {
        let mut search = LbiSearch {
            max_nodes: budget.max_nodes.saturating_sub(nodes_used),
            depth_limit: limit,
            disabled: disabled.to_vec(),
            caps,
            nodes: 0,
            exhausted_budget: false,
            failed: std::mem::take(&mut failed),
            proved: std::mem::take(&mut proved),
            expansions: std::mem::take(&mut expansions),
        };
        let mut ancestors = Vec::new();
        let found = search.run(s, &mut ancestors);
        nodes_used += search.nodes;
        failed = search.failed;
        proved = search.proved;
        expansions = search.expansions;
        if let Some(d) = found {
            debug_assert!(lbi_check_derivation(&d).is_ok());
            return LbiResult::Proved(Box::new(d));
        }
        if nodes_used >= budget.max_nodes {
            return LbiResult::Unknown;
        }
    }
    LbiResult::Unknown
}

// --- JSON serialization ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LbiNodeDto {
    rule: String,
    conclusion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    position: Option<Vec<serde_json::Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidate: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma_prime: Option<String>,
    #[serde(default)]
    premises: Vec<LbiNodeDto>,
}

fn node_to_dto(d: &LbiDerivation) -> LbiNodeDto {
    LbiNodeDto {
        rule: d.rule.name(),
        conclusion: d.conclusion.to_string(),
        position: if d.witness.position.is_root() {
            None
        } else {
            Some(position_to_json(&d.witness.position))
        },
        candidate: d
            .witness
            .candidate
            .as_ref()
            .map(|(a, b)| (a.to_string(), b.to_string())),
        gamma_prime: d.witness.gamma_prime.as_ref().map(|g| g.to_string()),
        premises: d.premises.iter().map(node_to_dto).collect(),
    }
}

fn node_from_dto(dto: &LbiNodeDto) -> Result<LbiDerivation, String> {
    let rule =
        LbiRuleId::from_name(&dto.rule).ok_or_else(|| format!("unknown rule {}", dto.rule))?;
    let conclusion = parse_sequent(&dto.conclusion).map_err(|e| e.to_string())?;
    let witness = StepWitness {
        position: match &dto.position {
            None => Position::root(),
            Some(p) => position_from_json(p)?,
        },
        essence_core: None,
        candidate: dto
            .candidate
            .as_ref()
            .map(|(a, b)| -> Result<_, String> {
                Ok((
                    crate::bunch::parse_bunch(a).map_err(|e| e.to_string())?,
                    crate::bunch::parse_bunch(b).map_err(|e| e.to_string())?,
                ))
            })
            .transpose()?,
        gamma_prime: dto
            .gamma_prime
            .as_deref()
            .map(crate::bunch::parse_bunch)
            .transpose()
            .map_err(|e| e.to_string())?,
    };
    let premises = dto.premises.iter().map(node_from_dto).collect::<Result<_, _>>()?;
    Ok(LbiDerivation { rule, conclusion, witness, premises })
}

/// Serializes as `{"calculus": "lbi", "derivation": {...}}`.
pub fn lbi_derivation_to_json(d: &LbiDerivation) -> serde_json::Value {
    serde_json::json!({
        "calculus": "lbi",
        "derivation": serde_json::to_value(node_to_dto(d)).unwrap(),
    })
}

pub fn lbi_derivation_from_json(v: &serde_json::Value) -> Result<LbiDerivation, String> {
    let node = v.get("derivation").unwrap_or(v);
    let dto: LbiNodeDto = serde_json::from_value(node.clone()).map_err(|e| e.to_string())?;
    node_from_dto(&dto)
}

/// Proof-tree rendering, same format as the LBIZ printer.
pub fn lbi_derivation_to_tex(d: &LbiDerivation) -> String {
    fn emit(d: &LbiDerivation, out: &mut String) {
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
            d.conclusion.to_string().replace('\\', "\\textbackslash ")
        ));
    }
    let mut out = String::from("\\begin{prooftree}\n");
    emit(d, &mut out);
    out.push_str("\\end{prooftree}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> Sequent {
        parse_sequent(s).unwrap()
    }

    #[test]
    fn expand_has_and_l() {
        let insts = lbi_expand(&seq("p /\\ q |- p /\\ q"), &[], LbiCaps { max_struct_growth: 8 });
        assert!(insts.iter().any(|i| i.rule == LbiRuleId::AndL));
        assert!(insts.iter().any(|i| i.rule == LbiRuleId::Id));
    }

    #[test]
    fn id_closes_exact_formula_only() {
        let insts = lbi_expand(&seq("p |- p"), &[], LbiCaps { max_struct_growth: 8 });
        assert!(insts.iter().any(|i| i.rule == LbiRuleId::Id));
        let insts2 = lbi_expand(&seq("p; q |- p"), &[], LbiCaps { max_struct_growth: 8 });
        assert!(!insts2.iter().any(|i| i.rule == LbiRuleId::Id));
    }

    #[test]
    fn prove_basics() {
        let b = Budget { max_depth: 8, max_nodes: 50_000 };
        assert!(lbi_prove(&seq("p |- p"), b, &[]).is_proved());
        assert!(lbi_prove(&seq("p; q |- p"), b, &[]).is_proved());
        assert!(lbi_prove(&seq("p |- p * emp"), b, &[]).is_proved());
        assert!(matches!(lbi_prove(&seq("p |- q"), b, &[]), LbiResult::Unknown));
    }

    #[test]
    fn proofs_check() {
        let b = Budget { max_depth: 8, max_nodes: 50_000 };
        for s in ["p |- p", "p; q |- p", "p |- p * emp", "p /\\ q |- q /\\ p", "p, q |- p * q"] {
            let LbiResult::Proved(d) = lbi_prove(&seq(s), b, &[]) else {
                panic!("expected proof for {s}");
            };
            lbi_check_derivation(&d).unwrap_or_else(|e| panic!("{s}: {e}"));
        }
    }

    #[test]
    fn observation_sequent_needs_contraction() {
        let goal = seq("(emp; p1), (emp; p1 -> p2) |- p2");
        let b = Budget { max_depth: 16, max_nodes: 150_000 };
        let with = lbi_prove(&goal, b, &[]);
        assert!(with.is_proved(), "{with:?}");
        if let LbiResult::Proved(d) = &with {
            lbi_check_derivation(d).unwrap();
        }
    }

    #[test]
    fn wk_l_check_rejects_multiplicative() {
        // a WkL step whose added part is multiplicative must not check
        let d = LbiDerivation {
            rule: LbiRuleId::WkL,
            conclusion: seq("p, q |- p"),
            witness: StepWitness {
                position: Position::root(),
                gamma_prime: Some(crate::bunch::parse_bunch("q").unwrap()),
                ..Default::default()
            },
            premises: vec![LbiDerivation {
                rule: LbiRuleId::Id,
                conclusion: seq("p |- p"),
                witness: StepWitness::default(),
                premises: Vec::new(),
            }],
        };
        assert!(lbi_check_derivation(&d).is_err());
    }

    #[test]
    fn cut_checks() {
        // Cut composing q /\ p |- p with p |- p \/ q
        let left = LbiDerivation {
            rule: LbiRuleId::AndL,
            conclusion: seq("q /\\ p |- p"),
            witness: StepWitness::at(Position::root()),
            premises: vec![LbiDerivation {
                rule: LbiRuleId::WkL,
                conclusion: seq("p; q |- p"),
                witness: StepWitness {
                    position: Position::root(),
                    gamma_prime: Some(crate::bunch::parse_bunch("q").unwrap()),
                    ..Default::default()
                },
                premises: vec![LbiDerivation {
                    rule: LbiRuleId::Id,
                    conclusion: seq("p |- p"),
                    witness: StepWitness::default(),
                    premises: Vec::new(),
                }],
            }],
        };
        let right = LbiDerivation {
            rule: LbiRuleId::OrR(1),
            conclusion: seq("p |- p \\/ q"),
            witness: StepWitness::default(),
            premises: vec![LbiDerivation {
                rule: LbiRuleId::Id,
                conclusion: seq("p |- p"),
                witness: StepWitness::default(),
                premises: Vec::new(),
            }],
        };
        let cut = LbiDerivation {
            rule: LbiRuleId::Cut,
            conclusion: seq("q /\\ p |- p \\/ q"),
            witness: StepWitness::at(Position::root()),
            premises: vec![left, right],
        };
        lbi_check_derivation(&cut).unwrap();

        // mismatched cut formula
        let mut bad = cut.clone();
        bad.premises[1].conclusion = seq("r |- p \\/ q");
        bad.premises[1].premises[0].conclusion = seq("r |- p");
        assert!(lbi_check_derivation(&bad).is_err());
    }
}
