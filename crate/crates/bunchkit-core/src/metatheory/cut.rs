//! `Cut` and context-sharing `Cut` over LBIZ, with cut elimination.
//!
//! The eliminator is the usual double induction: an outer induction on the
//! rank (size of the cut formula) and an inner one on the level (sum of the
//! premise depths). Internally a cut is processed as a *multicut* — all the
//! tracked occurrences of the cut formula in the right premise at once — so
//! that rules which duplicate context (the left implication rules) consume
//! one multicut per premise and the level keeps decreasing. Every reduction
//! records its `(rank, level)` against its parent's; the trace is part of
//! the result so suites can assert lexicographic descent.

use serde::{Deserialize, Serialize};

use crate::bunch::{
    mk_add, mk_mult, parse_sequent, positions, replace_at, sub_at, translate_through, Bunch,
    LayerKind, Position, Sequent, Step,
};
use crate::formula::Formula;
use crate::lbiz::{
    self, check_step, derivation_depth, position_from_json, position_to_json, Derivation, RuleId,
    StepWitness,
};
use crate::relations::{
    essence_build_steps, exposing_core, is_candidate_pair, mult_siblings, strip_padding_cores,
    weakening_path, CandidatePair,
};

use super::transform::{
    component_site, contract_derivation, ea2_derivation, find_pair_in_layer, finish,
    impl_geometry, into_premise2, invert_derivation, left_rule_replacements, through_extension,
    try_axiom, weaken_derivation, ImplGeometry, InversionKind, TransformError,
};

/// Rules of LBIZ + Cut.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CutRule {
    Base(RuleId),
    Cut,
    /// Context-sharing cut: premises `Γ3; Γ1 |- F` and `Γ2(F; Γ1) |- H`,
    /// conclusion `Γ2(Γ3; Γ1) |- H`.
    CutCS,
}

impl CutRule {
    pub fn name(self) -> String {
        match self {
            CutRule::Base(r) => r.name(),
            CutRule::Cut => "Cut".into(),
            CutRule::CutCS => "CutCS".into(),
        }
    }
}

/// A derivation over LBIZ + Cut + CutCS.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CutDerivation {
    pub rule: CutRule,
    pub conclusion: Sequent,
    pub witness: StepWitness,
    pub premises: Vec<CutDerivation>,
}

pub fn cut_depth(d: &CutDerivation) -> usize {
    1 + d.premises.iter().map(cut_depth).max().unwrap_or(0)
}

/// True if no `Cut`/`CutCS` node occurs.
pub fn is_cut_free(d: &CutDerivation) -> bool {
    matches!(d.rule, CutRule::Base(_)) && d.premises.iter().all(is_cut_free)
}

/// Embeds a cut-free derivation.
pub fn from_cut_free(d: &Derivation) -> CutDerivation {
    CutDerivation {
        rule: CutRule::Base(d.rule),
        conclusion: d.conclusion.clone(),
        witness: d.witness.clone(),
        premises: d.premises.iter().map(from_cut_free).collect(),
    }
}

/// Builds a `Cut` node: `left` proves `Γ1 |- F`; `pos` addresses an `F` leaf
/// in the right conclusion's antecedent.
pub fn cut_node(
    left: CutDerivation,
    right: CutDerivation,
    pos: &Position,
) -> Result<CutDerivation, String> {
    let f = &left.conclusion.consequent;
    match sub_at(&right.conclusion.antecedent, pos) {
        Ok(Bunch::Leaf(g)) if g == *f => {}
        _ => return Err("cut position does not hold the cut formula".into()),
    }
    let ant = replace_at(&right.conclusion.antecedent, pos, Some(&left.conclusion.antecedent))
        .map_err(|_| "invalid cut position".to_string())?;
    let conclusion = Sequent::new(ant, right.conclusion.consequent.clone());
    let spliced = translate_through(
        &right.conclusion.antecedent,
        pos,
        Some(&left.conclusion.antecedent),
        pos,
    )
    .map_err(|_| "invalid cut position".to_string())?
    .ok_or_else(|| "cut site is not addressable".to_string())?;
    Ok(CutDerivation {
        rule: CutRule::Cut,
        conclusion,
        witness: StepWitness::at(spliced),
        premises: vec![left, right],
    })
}

/// Measures of a cut instance.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct CutMeasures {
    /// size of the cut formula
    pub rank: usize,
    /// sum of the premise depths
    pub level: usize,
}

pub fn cut_measures(node: &CutDerivation) -> Result<CutMeasures, String> {
    if !matches!(node.rule, CutRule::Cut | CutRule::CutCS) {
        return Err("not a cut node".into());
    }
    Ok(CutMeasures {
        rank: node.premises[0].conclusion.consequent.size(),
        level: cut_depth(&node.premises[0]) + cut_depth(&node.premises[1]),
    })
}

/// Validity over LBIZ + Cut + CutCS.
pub fn check_cut_derivation(d: &CutDerivation) -> Result<(), lbiz::CheckError> {
    let mut path = Vec::new();
    check_cut_node(d, &mut path)
}

fn cut_fail(path: &[usize], reason: impl Into<String>) -> lbiz::CheckError {
    lbiz::CheckError { path: path.to_vec(), reason: reason.into() }
}

fn check_cut_node(d: &CutDerivation, path: &mut Vec<usize>) -> Result<(), lbiz::CheckError> {
    match d.rule {
        CutRule::Base(rule) => {
            // shallow stand-in: the local checker only consults the
            // premises' conclusions
            let shallow = Derivation {
                rule,
                conclusion: d.conclusion.clone(),
                witness: d.witness.clone(),
                premises: d
                    .premises
                    .iter()
                    .map(|p| {
                        Derivation::axiom(RuleId::TopR, p.conclusion.clone(), StepWitness::default())
                    })
                    .collect(),
            };
            check_step(&shallow, path)?;
        }
        CutRule::Cut => {
            if d.premises.len() != 2 {
                return Err(cut_fail(path, "Cut expects 2 premises"));
            }
            let p1 = &d.premises[0].conclusion;
            let p2 = &d.premises[1].conclusion;
            let ant = &d.conclusion.antecedent;
            let spliced = sub_at(ant, &d.witness.position)
                .map_err(|_| cut_fail(path, "invalid cut position"))?;
            if p1.antecedent != spliced {
                return Err(cut_fail(path, "cut position does not hold the left antecedent"));
            }
            let want2 =
                replace_at(ant, &d.witness.position, Some(&Bunch::Leaf(p1.consequent.clone())))
                    .map_err(|_| cut_fail(path, "invalid cut position"))?;
            if p2.antecedent != want2 || p2.consequent != d.conclusion.consequent {
                return Err(cut_fail(path, "cut premises do not recompose the conclusion"));
            }
        }
        CutRule::CutCS => {
            if d.premises.len() != 2 {
                return Err(cut_fail(path, "CutCS expects 2 premises"));
            }
            let p1 = &d.premises[0].conclusion;
            let p2 = &d.premises[1].conclusion;
            let ant = &d.conclusion.antecedent;
            let shared = d
                .witness
                .gamma_prime
                .as_ref()
                .ok_or_else(|| cut_fail(path, "CutCS needs the shared part"))?;
            let site = sub_at(ant, &d.witness.position)
                .map_err(|_| cut_fail(path, "invalid CutCS position"))?;
            if p1.antecedent != site {
                return Err(cut_fail(path, "left premise does not match the shared site"));
            }
            if !contains_submultiset(&site, shared) {
                return Err(cut_fail(path, "shared part is not inside the CutCS site"));
            }
            let repl = mk_add(vec![Bunch::Leaf(p1.consequent.clone()), shared.clone()]);
            let want2 = replace_at(ant, &d.witness.position, Some(&repl))
                .map_err(|_| cut_fail(path, "invalid CutCS position"))?;
            if p2.antecedent != want2 || p2.consequent != d.conclusion.consequent {
                return Err(cut_fail(path, "CutCS premises do not recompose the conclusion"));
            }
        }
    }
    for (i, p) in d.premises.iter().enumerate() {
        path.push(i);
        check_cut_node(p, path)?;
        path.pop();
    }
    Ok(())
}

/// `part == whole`, or `part`'s components are a sub-multiset of `whole`'s
/// additive layer.
fn contains_submultiset(whole: &Bunch, part: &Bunch) -> bool {
    if whole == part {
        return true;
    }
    let Bunch::Add(cs) = whole else { return false };
    let want: Vec<Bunch> = match part {
        Bunch::Add(xs) => xs.clone(),
        other => vec![other.clone()],
    };
    let mut used: Vec<usize> = Vec::new();
    want.iter().all(|w| {
        cs.iter().enumerate().any(|(j, c)| {
            if !used.contains(&j) && c == w {
                used.push(j);
                true
            } else {
                false
            }
        })
    })
}

/// One recorded reduction, for the descent assertions.
#[derive(Clone, Copy, Debug)]
pub struct TraceStep {
    pub measure: CutMeasures,
    pub parent: Option<CutMeasures>,
}

#[derive(Default, Debug)]
pub struct CutTrace {
    pub steps: Vec<TraceStep>,
}

impl CutTrace {
    /// Reductions whose measure fails to decrease lexicographically below
    /// their parent reduction's.
    pub fn violations(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| {
                s.parent.is_some_and(|p| (s.measure.rank, s.measure.level) >= (p.rank, p.level))
            })
            .count()
    }
}

/// Eliminates every `Cut`/`CutCS` node, returning a cut-free derivation of
/// an AC-equal conclusion.
pub fn eliminate_cuts(d: &CutDerivation) -> Result<Derivation, TransformError> {
    eliminate_cuts_traced(d).map(|(out, _)| out)
}

pub fn eliminate_cuts_traced(
    d: &CutDerivation,
) -> Result<(Derivation, CutTrace), TransformError> {
    let mut trace = CutTrace::default();
    let out = eliminate_rec(d, &mut trace)?;
    Ok((out, trace))
}

fn shape(msg: impl Into<String>) -> TransformError {
    TransformError::ShapeMismatch(msg.into())
}

fn lost() -> TransformError {
    TransformError::InvalidPosition
}

fn eliminate_rec(d: &CutDerivation, trace: &mut CutTrace) -> Result<Derivation, TransformError> {
    match d.rule {
        CutRule::Base(rule) => {
            let premises = d
                .premises
                .iter()
                .map(|p| eliminate_rec(p, trace))
                .collect::<Result<Vec<_>, _>>()?;
            finish(rule, d.conclusion.clone(), d.witness.clone(), premises)
        }
        CutRule::Cut => {
            let l = eliminate_rec(&d.premises[0], trace)?;
            let r = eliminate_rec(&d.premises[1], trace)?;
            let f = Bunch::Leaf(l.conclusion.consequent.clone());
            let fpos = translate_through(
                &d.conclusion.antecedent,
                &d.witness.position,
                Some(&f),
                &d.witness.position,
            )
            .map_err(|_| lost())?
            .ok_or(lost())?;
            let out = reduce(&l, &r, &[fpos], None, trace)?;
            expect_conclusion(&out, &d.conclusion)
        }
        CutRule::CutCS => {
            let l = eliminate_rec(&d.premises[0], trace)?;
            let r = eliminate_rec(&d.premises[1], trace)?;
            let shared = d
                .witness
                .gamma_prime
                .clone()
                .ok_or_else(|| shape("CutCS without a shared part"))?;
            reduce_cs(&l, &r, &shared, &d.conclusion, trace)
        }
    }
}

/// Context-sharing cut, expanded into a plain cut followed by a contraction
/// of the duplicated shared part.
fn reduce_cs(
    l: &Derivation,
    r: &Derivation,
    shared: &Bunch,
    expected: &Sequent,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let f = &l.conclusion.consequent;
    let r_ant = &r.conclusion.antecedent;
    let mut last_err = shape("no viable context-sharing cut site");
    for q in formula_positions(r_ant, f) {
        // the F leaf must sit in a layer holding the shared part
        let Some(parent) = parent_of(&q) else { continue };
        let Ok(layer) = sub_at(r_ant, &parent) else { continue };
        if !contains_submultiset(&layer, shared) {
            continue;
        }
        let cut = match reduce(l, r, &[q.clone()], None, trace) {
            Ok(c) => c,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        // contract the two copies of the shared part in that layer
        let Ok(Some(spliced)) =
            translate_through(r_ant, &q, Some(&l.conclusion.antecedent), &q)
        else {
            continue;
        };
        let cut_ant = &cut.conclusion.antecedent;
        let Ok(layer_pos) =
            shrink_to_layer(cut_ant, &parent_of(&spliced).unwrap_or_else(Position::root))
        else {
            continue;
        };
        let Ok(layer) = sub_at(cut_ant, &layer_pos) else { continue };
        let Some((keep, drop)) = find_pair_in_layer(&layer, &layer_pos, shared) else {
            continue;
        };
        match contract_derivation(&cut, &keep, &drop) {
            Ok(out) if out.conclusion == *expected => return Ok(out),
            Ok(_) => continue,
            Err(e) => {
                last_err = e;
                continue;
            }
        }
    }
    Err(last_err)
}

// ---------------------------------------------------------------------------
// the multicut reducer
// ---------------------------------------------------------------------------

/// Replaces every position in `poss` (disjoint leaves) with `value`.
fn multi_replace(ant: &Bunch, poss: &[Position], value: &Bunch) -> Result<Bunch, TransformError> {
    let mut cur = ant.clone();
    let mut pending: Vec<Position> = poss.to_vec();
    while let Some(p) = pending.pop() {
        let next = replace_at(&cur, &p, Some(value)).map_err(|_| lost())?;
        let mut moved = Vec::with_capacity(pending.len());
        for q in &pending {
            moved.push(
                translate_through(&cur, &p, Some(value), q)
                    .map_err(|_| lost())?
                    .ok_or(lost())?,
            );
        }
        pending = moved;
        cur = next;
    }
    Ok(cur)
}

/// Translates `tracked` through the multi-replacement of `poss`.
fn multi_translate(
    ant: &Bunch,
    poss: &[Position],
    value: &Bunch,
    tracked: &[Position],
) -> Result<Vec<Option<Position>>, TransformError> {
    let mut cur = ant.clone();
    let mut pending: Vec<Position> = poss.to_vec();
    let mut out: Vec<Option<Position>> = tracked.iter().cloned().map(Some).collect();
    while let Some(p) = pending.pop() {
        let next = replace_at(&cur, &p, Some(value)).map_err(|_| lost())?;
        let mut moved = Vec::with_capacity(pending.len());
        for q in &pending {
            moved.push(
                translate_through(&cur, &p, Some(value), q)
                    .map_err(|_| lost())?
                    .ok_or(lost())?,
            );
        }
        for slot in out.iter_mut() {
            if let Some(q) = slot.take() {
                *slot = translate_through(&cur, &p, Some(value), &q).map_err(|_| lost())?;
            }
        }
        pending = moved;
        cur = next;
    }
    Ok(out)
}

fn formula_positions(b: &Bunch, f: &Formula) -> Vec<Position> {
    crate::bunch::leaf_positions(b)
        .into_iter()
        .filter(|(_, g)| g == f)
        .map(|(p, _)| p)
        .collect()
}

fn parent_of(p: &Position) -> Option<Position> {
    let (_, prefix) = p.steps.split_last()?;
    Some(Position { steps: prefix.to_vec() })
}

fn expect_conclusion(d: &Derivation, target: &Sequent) -> Result<Derivation, TransformError> {
    if d.conclusion == *target {
        Ok(d.clone())
    } else {
        Err(shape(format!("reduction concluded {} instead of {}", d.conclusion, target)))
    }
}

/// The multicut reduction: `l` proves `Γ1 |- F` (cut-free); `r` is cut-free
/// with `F` leaves at every position in `poss`. Produces a cut-free
/// derivation of `r`'s conclusion with those leaves replaced by `Γ1`.
fn reduce(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    parent: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    debug_assert!(!poss.is_empty());
    let f = &l.conclusion.consequent;
    let gamma1 = &l.conclusion.antecedent;
    let measure = CutMeasures { rank: f.size(), level: derivation_depth(l) + derivation_depth(r) };
    trace.steps.push(TraceStep { measure, parent });
    let pm = Some(measure);

    let target_ant = multi_replace(&r.conclusion.antecedent, poss, gamma1)?;
    let target = Sequent::new(target_ant, r.conclusion.consequent.clone());

    if let Some(ax) = try_axiom(&target) {
        return Ok(ax);
    }

    let exact_principal = match r.rule {
        RuleId::AndL | RuleId::StarL | RuleId::OrL => poss.contains(&r.witness.position),
        _ => false,
    };

    if !r.rule.is_axiom() && !exact_principal {
        match permute_right(l, r, poss, &target, pm, trace) {
            Ok(d) => return Ok(d),
            Err(_) if matches!(r.rule, RuleId::ImpL | RuleId::WandL) => {
                // the cut formula is the rule's own principal
            }
            Err(e) => return Err(e),
        }
    }

    match l.rule {
        RuleId::AndL | RuleId::StarL | RuleId::OrL | RuleId::ImpL | RuleId::WandL => {
            permute_left(l, r, poss, &target, pm, trace)
        }
        RuleId::AndR if r.rule == RuleId::AndL => and_case(l, r, poss, &target, pm, trace),
        RuleId::OrR(i) if r.rule == RuleId::OrL => or_case(l, r, poss, &target, i, pm, trace),
        RuleId::StarR if r.rule == RuleId::StarL => star_case(l, r, poss, &target, pm, trace),
        RuleId::ImpR if r.rule == RuleId::ImpL => imp_case(l, r, poss, &target, pm, trace),
        RuleId::WandR if r.rule == RuleId::WandL => wand_case(l, r, poss, &target, pm, trace),
        _ => Err(shape(format!(
            "unhandled principal interaction {} / {}",
            l.rule.name(),
            r.rule.name()
        ))),
    }
}

/// Permutes the multicut above the right rule.
fn permute_right(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    target: &Sequent,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let ant = &r.conclusion.antecedent;
    let gamma1 = &l.conclusion.antecedent;
    match r.rule {
        RuleId::AndR => {
            let ps = r
                .premises
                .iter()
                .map(|p| reduce(l, p, poss, pm, trace))
                .collect::<Result<Vec<_>, _>>()?;
            finish(RuleId::AndR, target.clone(), StepWitness::default(), ps)
        }
        RuleId::OrR(i) => {
            let p = reduce(l, &r.premises[0], poss, pm, trace)?;
            finish(RuleId::OrR(i), target.clone(), StepWitness::default(), vec![p])
        }
        RuleId::ImpR | RuleId::WandR => {
            let refs: Vec<&Position> = poss.iter().collect();
            let moved = through_extension(r, &refs)?;
            let p = reduce(l, &r.premises[0], &moved, pm, trace)?;
            finish(r.rule, target.clone(), StepWitness::default(), vec![p])
        }
        RuleId::AndL | RuleId::StarL | RuleId::OrL => {
            let repls = left_rule_replacements(r)?;
            let mut ps = Vec::with_capacity(r.premises.len());
            for (prem, repl) in r.premises.iter().zip(&repls) {
                let mut moved = Vec::with_capacity(poss.len());
                for q in poss {
                    moved.push(
                        translate_through(ant, &r.witness.position, Some(repl), q)
                            .map_err(|_| lost())?
                            .ok_or(lost())?,
                    );
                }
                ps.push(reduce(l, prem, &moved, pm, trace)?);
            }
            let wpos = multi_translate(ant, poss, gamma1, &[r.witness.position.clone()])?
                .pop()
                .flatten()
                .ok_or(lost())?;
            finish(r.rule, target.clone(), StepWitness::at(wpos), ps)
        }
        RuleId::ImpL => {
            let geo = impl_geometry(r)?;
            let rho = &r.witness.position;
            let inner: Vec<Position> = poss
                .iter()
                .filter(|q| rho.contains(q))
                .map(|q| Position::relativize(rho, q).unwrap())
                .collect();
            let p1 = if inner.is_empty() {
                r.premises[0].clone()
            } else {
                reduce(l, &r.premises[0], &inner, pm, trace)?
            };
            let refs: Vec<&Position> = poss.iter().collect();
            let moved = into_premise2(r, &geo, &refs)?;
            let p2 = reduce(l, &r.premises[1], &moved, pm, trace)?;
            let rho2 = multi_translate(ant, poss, gamma1, &[rho.clone()])?
                .pop()
                .flatten()
                .ok_or(lost())?;
            let root2 = sub_at(&target.antecedent, &rho2).map_err(|_| lost())?;
            let core2 = exposing_core(&root2, &geo.phi)
                .ok_or_else(|| shape("substitution destroyed the essence root"))?;
            finish(
                RuleId::ImpL,
                target.clone(),
                StepWitness { position: rho2, essence_core: Some(core2), ..Default::default() },
                vec![p1, p2],
            )
        }
        RuleId::WandL => permute_wand(l, r, poss, target, pm, trace),
        RuleId::StarR => {
            let Some((re_i, re_j)) = r.witness.candidate.clone() else {
                return Err(shape("missing *R candidate"));
            };
            let options_i = subst_subsets(&re_i, f_of(l), gamma1);
            let options_j = subst_subsets(&re_j, f_of(l), gamma1);
            for (vi, pi) in &options_i {
                for (vj, pj) in &options_j {
                    let pair = CandidatePair::new(vi.clone(), vj.clone()).canonical();
                    if !is_candidate_pair(&pair, &target.antecedent) {
                        continue;
                    }
                    let Ok(p1) = cut_or_reuse(l, &r.premises[0], pi, pm, trace) else { continue };
                    let Ok(p2) = cut_or_reuse(l, &r.premises[1], pj, pm, trace) else { continue };
                    if let Ok(node) = finish(
                        RuleId::StarR,
                        target.clone(),
                        StepWitness {
                            candidate: Some((vi.clone(), vj.clone())),
                            ..Default::default()
                        },
                        vec![p1, p2],
                    ) {
                        return Ok(node);
                    }
                }
            }
            Err(shape("could not carry the cut into the *R candidate"))
        }
        RuleId::Id | RuleId::MTopR | RuleId::TopR | RuleId::BotL => {
            Err(shape("axiom permutation should have been closed directly"))
        }
    }
}

fn f_of(l: &Derivation) -> &Formula {
    &l.conclusion.consequent
}

fn cut_or_reuse(
    l: &Derivation,
    prem: &Derivation,
    poss: &[Position],
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    if poss.is_empty() {
        Ok(prem.clone())
    } else {
        reduce(l, prem, poss, pm, trace)
    }
}

/// All ways to substitute a subset of the `f` leaves of `b` by `value`,
/// smallest subsets first.
fn subst_subsets(b: &Bunch, f: &Formula, value: &Bunch) -> Vec<(Bunch, Vec<Position>)> {
    let sites = formula_positions(b, f);
    let n = sites.len().min(5);
    let mut masks: Vec<u32> = (0u32..(1 << n)).collect();
    masks.sort_by_key(|m| m.count_ones());
    let mut out = Vec::new();
    for mask in masks {
        let chosen: Vec<Position> =
            (0..n).filter(|i| mask & (1 << i) != 0).map(|i| sites[i].clone()).collect();
        if let Ok(v) = multi_replace(b, &chosen, value) {
            out.push((v, chosen));
        }
    }
    out
}

/// `--*L` permutation.
fn permute_wand(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    target: &Sequent,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let ant = &r.conclusion.antecedent;
    let gamma1 = &l.conclusion.antecedent;
    let geo = impl_geometry(r)?;
    let rho = &r.witness.position;

    let rho2 = multi_translate(ant, poss, gamma1, &[rho.clone()])?
        .pop()
        .flatten()
        .ok_or(lost())?;
    let root2 = sub_at(&target.antecedent, &rho2).map_err(|_| lost())?;
    let core2 = exposing_core(&root2, &geo.phi)
        .ok_or_else(|| shape("substitution destroyed the essence root"))?;

    match (&r.witness.gamma_prime, &r.witness.candidate) {
        (None, None) => {
            let refs: Vec<&Position> = poss.iter().collect();
            let moved = into_premise2(r, &geo, &refs)?;
            let p2 = reduce(l, &r.premises[1], &moved, pm, trace)?;
            finish(
                RuleId::WandL,
                target.clone(),
                StepWitness { position: rho2, essence_core: Some(core2), ..Default::default() },
                vec![r.premises[0].clone(), p2],
            )
        }
        (Some(gp), Some((re_i, re_j))) => {
            let gp2 = mult_siblings(&target.antecedent, &rho2).unwrap_or_else(|| gp.clone());
            let refs: Vec<&Position> = poss.iter().collect();
            let base_moved = into_premise2(r, &geo, &refs)?;
            let options_i = subst_subsets(re_i, f_of(l), gamma1);
            let options_j = subst_subsets(re_j, f_of(l), gamma1);
            let p2ant = &r.premises[1].conclusion.antecedent;
            for (vi, pi) in &options_i {
                for (vj, pj) in &options_j {
                    let pair = CandidatePair::new(vi.clone(), vj.clone()).canonical();
                    if !is_candidate_pair(&pair, &gp2) {
                        continue;
                    }
                    let mut p2_poss = base_moved.clone();
                    if !pj.is_empty() {
                        let Ok(mut s2) = into_premise2(r, &geo, &[&geo.site]) else { continue };
                        let site2 = s2.pop().unwrap();
                        let Some(lc_site) = component_site(p2ant, &site2, &geo.added) else {
                            continue;
                        };
                        let Some(rej_site) = component_site(p2ant, &lc_site, re_j) else {
                            continue;
                        };
                        for q in pj {
                            p2_poss.push(rej_site.compose(q));
                        }
                    }
                    let Ok(p1) = cut_or_reuse(l, &r.premises[0], pi, pm, trace) else { continue };
                    let Ok(p2) = reduce(l, &r.premises[1], &p2_poss, pm, trace) else { continue };
                    let w = StepWitness {
                        position: rho2.clone(),
                        essence_core: Some(core2.clone()),
                        candidate: Some((vi.clone(), vj.clone())),
                        gamma_prime: Some(gp2.clone()),
                    };
                    if let Ok(node) = finish(RuleId::WandL, target.clone(), w, vec![p1, p2]) {
                        return Ok(node);
                    }
                }
            }
            Err(shape("could not carry the cut through --*L"))
        }
        _ => Err(shape("inconsistent --*L witness")),
    }
}

/// Permutes the multicut below the left premise's left rule.
fn permute_left(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    target: &Sequent,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let gamma1 = &l.conclusion.antecedent;
    let site = multi_translate(&r.conclusion.antecedent, poss, gamma1, &[poss[0].clone()])?
        .pop()
        .flatten()
        .ok_or(lost())?;
    match l.rule {
        RuleId::AndL | RuleId::StarL | RuleId::OrL => {
            let mut ps = Vec::with_capacity(l.premises.len());
            for prem in &l.premises {
                ps.push(reduce(prem, r, poss, pm, trace)?);
            }
            let wpos = site.compose(&l.witness.position);
            finish(l.rule, target.clone(), StepWitness::at(wpos), ps)
        }
        RuleId::ImpL | RuleId::WandL => {
            let p2 = reduce(&l.premises[1], r, poss, pm, trace)?;
            let rho = site.compose(&l.witness.position);
            let root = sub_at(&target.antecedent, &rho).map_err(|_| lost())?;
            let geo = impl_geometry(l)?;
            let core = exposing_core(&root, &geo.phi)
                .ok_or_else(|| shape("embedded root does not expose"))?;
            let gamma_prime = match &l.witness.gamma_prime {
                None => None,
                Some(_) => Some(
                    mult_siblings(&target.antecedent, &rho)
                        .ok_or_else(|| shape("embedded sibling group vanished"))?,
                ),
            };
            let witness = StepWitness {
                position: rho,
                essence_core: Some(core),
                candidate: l.witness.candidate.clone(),
                gamma_prime,
            };
            finish(l.rule, target.clone(), witness, vec![l.premises[0].clone(), p2])
        }
        _ => Err(shape("permute_left on a non-left rule")),
    }
}

/// Two distinct leaf children of the occurrence at `site` holding `f` and
/// `g` respectively (distinct slots even when `f == g`).
fn two_component_leaves(
    ant: &Bunch,
    site: &Position,
    f: &Formula,
    g: &Formula,
) -> Option<(Position, Position)> {
    let sub = sub_at(ant, site).ok()?;
    let from_rels = |rels: Vec<Position>| -> Option<(Position, Position)> {
        let mut it = rels.into_iter();
        let a = it.next()?;
        let b = if f == g { it.next()? } else { a.clone() };
        let _ = b;
        None
    };
    let _ = from_rels;
    let fr = formula_positions(&sub, f);
    let gr = formula_positions(&sub, g);
    let fa = fr.first()?.clone();
    let ga = if f == g { gr.get(1)?.clone() } else { gr.first()?.clone() };
    Some((site.compose(&fa), site.compose(&ga)))
}

/// Handles the residual (non-principal) cut occurrences of a one-formula
/// left rule's premise, returning the premise derivation and the tracked
/// principal site.
fn settle_others(
    l: &Derivation,
    r: &Derivation,
    prem: &Derivation,
    repl: &Bunch,
    poss: &[Position],
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<(Derivation, Position), TransformError> {
    let p0 = &r.witness.position;
    let others: Vec<Position> = poss.iter().filter(|q| *q != p0).cloned().collect();
    let mut moved = Vec::with_capacity(others.len());
    for q in &others {
        moved.push(
            translate_through(&r.conclusion.antecedent, p0, Some(repl), q)
                .map_err(|_| lost())?
                .ok_or(lost())?,
        );
    }
    let site = translate_through(&r.conclusion.antecedent, p0, Some(repl), p0)
        .map_err(|_| lost())?
        .ok_or(lost())?;
    if moved.is_empty() {
        return Ok((prem.clone(), site));
    }
    let z = reduce(l, prem, &moved, pm, trace)?;
    let site = multi_translate(&prem.conclusion.antecedent, &moved, &l.conclusion.antecedent, &[site])?
        .pop()
        .flatten()
        .ok_or(lost())?;
    Ok((z, site))
}

/// `(∧R, ∧L)` principal reduction.
fn and_case(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    target: &Sequent,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let gamma1 = &l.conclusion.antecedent;
    let repl = left_rule_replacements(r)?.pop().unwrap();
    let (z, site) = settle_others(l, r, &r.premises[0], &repl, poss, pm, trace)?;
    let (fl, fr) = match &l.conclusion.consequent {
        Formula::And(a, b) => ((**a).clone(), (**b).clone()),
        _ => return Err(shape("cut formula is not a conjunction")),
    };
    let z_ant = z.conclusion.antecedent.clone();
    let (posf, posg0) =
        two_component_leaves(&z_ant, &site, &fl, &fr).ok_or(lost())?;
    let c1 = reduce(&l.premises[0], &z, &[posf.clone()], pm, trace)?;
    let posg = translate_through(&z_ant, &posf, Some(&l.premises[0].conclusion.antecedent), &posg0)
        .map_err(|_| lost())?
        .ok_or(lost())?;
    let c2 = reduce(&l.premises[1], &c1, &[posg.clone()], pm, trace)?;
    // contract the two Γ1 copies
    let c2_ant = c2.conclusion.antecedent.clone();
    let layer_pos = shrink_to_layer(&c2_ant, &parent_of(&posg).unwrap_or_else(Position::root))?;
    let layer = sub_at(&c2_ant, &layer_pos).map_err(|_| lost())?;
    let (keep, drop) = find_pair_in_layer(&layer, &layer_pos, gamma1)
        .ok_or_else(|| shape("conjunct copies are not contractible at the cut site"))?;
    let out = contract_derivation(&c2, &keep, &drop)?;
    expect_conclusion(&out, target)
}

fn shrink_to_layer(ant: &Bunch, p: &Position) -> Result<Position, TransformError> {
    let mut cur = p.clone();
    loop {
        match sub_at(ant, &cur) {
            Ok(Bunch::Add(_)) => return Ok(cur),
            _ => match parent_of(&cur) {
                Some(up) => cur = up,
                None => return Ok(Position::root()),
            },
        }
    }
}

/// `(∨R, ∨L)` principal reduction.
fn or_case(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    target: &Sequent,
    i: u8,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let branch = (i - 1) as usize;
    let repls = left_rule_replacements(r)?;
    let (z, site) =
        settle_others(l, r, &r.premises[branch], &repls[branch], poss, pm, trace)?;
    let out = reduce(&l.premises[0], &z, &[site], pm, trace)?;
    expect_conclusion(&out, target)
}

/// `(*R, *L)` principal reduction.
fn star_case(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    target: &Sequent,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let gamma1 = &l.conclusion.antecedent;
    let repl = left_rule_replacements(r)?.pop().unwrap();
    let (z, site) = settle_others(l, r, &r.premises[0], &repl, poss, pm, trace)?;
    let (fl, fr) = match &l.conclusion.consequent {
        Formula::Star(a, b) => ((**a).clone(), (**b).clone()),
        _ => return Err(shape("cut formula is not a star")),
    };
    let Some((re_i, re_j)) = l.witness.candidate.clone() else {
        return Err(shape("missing *R candidate on the left"));
    };
    let z_ant = z.conclusion.antecedent.clone();
    let (posf, posg0) = two_component_leaves(&z_ant, &site, &fl, &fr).ok_or(lost())?;
    let c1 = reduce(&l.premises[0], &z, &[posf.clone()], pm, trace)?;
    let posg = translate_through(&z_ant, &posf, Some(&re_i), &posg0)
        .map_err(|_| lost())?
        .ok_or(lost())?;
    let c1_ant = c1.conclusion.antecedent.clone();
    let c2 = reduce(&l.premises[1], &c1, &[posg.clone()], pm, trace)?;
    // the spliced material (Re_i, Re_j) is raised back to Γ1 by weakening
    let rej_site = translate_through(&c1_ant, &posg, Some(&re_j), &posg)
        .map_err(|_| lost())?
        .ok_or(lost())?;
    let c2_ant = c2.conclusion.antecedent.clone();
    let layer_pos = outer_mult_layer(&c2_ant, &parent_of(&rej_site).unwrap_or_else(Position::root))?;
    let combined = mk_mult(vec![re_i, re_j]);
    let start = select_value_at(&c2_ant, &layer_pos, &combined)?;
    let out = raise_value_to(&c2, &start, &combined, gamma1)?;
    expect_conclusion(&out, target)
}

fn outer_mult_layer(ant: &Bunch, p: &Position) -> Result<Position, TransformError> {
    let mut cur = p.clone();
    loop {
        match sub_at(ant, &cur) {
            Ok(Bunch::Mult(_)) => return Ok(cur),
            _ => match parent_of(&cur) {
                Some(up) => cur = up,
                None => return Ok(Position::root()),
            },
        }
    }
}

/// A selection of the layer at `layer_pos` whose value is `want`.
fn select_value_at(
    ant: &Bunch,
    layer_pos: &Position,
    want: &Bunch,
) -> Result<Position, TransformError> {
    let layer = sub_at(ant, layer_pos).map_err(|_| lost())?;
    if layer == *want {
        return Ok(layer_pos.clone());
    }
    let cs = layer.children();
    let comps: Vec<Bunch> = if want.kind() == layer.kind() {
        want.children().to_vec()
    } else {
        vec![want.clone()]
    };
    let mut used: Vec<usize> = Vec::new();
    for w in &comps {
        let idx = cs
            .iter()
            .enumerate()
            .find_map(|(j, c)| if !used.contains(&j) && c == w { Some(j) } else { None })
            .ok_or(lost())?;
        used.push(idx);
    }
    used.sort_unstable();
    if used.len() == cs.len() {
        return Ok(layer_pos.clone());
    }
    if used.len() == 1 {
        return Ok(layer_pos.clone().child(used[0]));
    }
    Ok(match layer.kind() {
        Some(LayerKind::Add) => layer_pos.clone().select(used),
        Some(LayerKind::Mult) => layer_pos.clone().select_mult(used),
        None => return Err(lost()),
    })
}

/// Re-finds a selection with value `val` at or above the old position.
fn select_value_near(ant: &Bunch, old: &Position, val: &Bunch) -> Result<Position, TransformError> {
    if sub_at(ant, old).ok().as_ref() == Some(val) {
        return Ok(old.clone());
    }
    let mut cur = old.clone();
    loop {
        if let Ok(p) = select_value_at(ant, &cur, val) {
            return Ok(p);
        }
        match parent_of(&cur) {
            Some(up) => cur = up,
            None => break,
        }
    }
    for p in positions(ant) {
        if sub_at(ant, &p).ok().as_ref() == Some(val) {
            return Ok(p);
        }
    }
    Err(lost())
}

/// Rewrites the occurrence at `start` (holding `from`) up to `to`: erases
/// unit leaves that block the weakening order, then grafts the missing
/// additive material step by step.
fn raise_value_to(
    d: &Derivation,
    start: &Position,
    from: &Bunch,
    to: &Bunch,
) -> Result<Derivation, TransformError> {
    let mut cur = d.clone();
    let mut pos = start.clone();
    let mut val = from.clone();
    loop {
        if weakening_path(&val, to).is_some() {
            break;
        }
        // drop a multiplicative unit leaf and retry
        let Some(rel) = formula_positions(&val, &Formula::MTop)
            .into_iter()
            .find(|p|

 mult_parented(&val, p, &cur.conclusion.antecedent, &pos))
        else {
            return Err(shape("cut residue is not below the split antecedent"));
        };
        let abs = pos.compose(&rel);
        cur = invert_derivation(&cur, InversionKind::MTopErase, &abs)?.pop().unwrap();
        val = replace_at(&val, &rel, None).map_err(|_| lost())?;
        pos = select_value_near(&cur.conclusion.antecedent, &pos, &val)?;
    }
    let steps = weakening_path(&val, to).unwrap();
    for (rel, added) in &steps {
        let at = pos.compose(rel);
        cur = weaken_derivation(&cur, &at, added)?;
        val = crate::bunch::graft_tracking(&val, rel, added, LayerKind::Add, &[])
            .map_err(|_| lost())?
            .0;
        pos = select_value_near(&cur.conclusion.antecedent, &pos, &val)?;
    }
    Ok(cur)
}

/// The unit leaf at `rel` within the tracked occurrence has a `,`-layer
/// parent, either inside the occurrence or at the global layer around it.
fn mult_parented(val: &Bunch, rel: &Position, ant: &Bunch, pos: &Position) -> bool {
    match rel.steps.split_last() {
        Some((Step::Child(_), prefix)) => {
            sub_at(val, &Position { steps: prefix.to_vec() })
                .map(|p| p.kind() == Some(LayerKind::Mult))
                .unwrap_or(false)
        }
        _ => {
            // the unit is the tracked occurrence itself (or a selection
            // member); its parent is the global layer
            let abs = pos.compose(rel);
            match abs.steps.split_last() {
                Some((Step::Child(_), prefix)) => {
                    sub_at(ant, &Position { steps: prefix.to_vec() })
                        .map(|p| p.kind() == Some(LayerKind::Mult))
                        .unwrap_or(false)
                }
                _ => false,
            }
        }
    }
}

/// `(⊃R, ⊃L)` principal reduction.
fn imp_case(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    target: &Sequent,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let gamma3 = &l.conclusion.antecedent;
    let phi = &l.conclusion.consequent;
    let geo = impl_geometry(r)?;
    if geo.phi != *phi {
        return Err(shape("principal pair acts on different formulas"));
    }
    let rho = &r.witness.position;
    let (f1, _f2) = match phi {
        Formula::Imp(a, b) => ((**a).clone(), (**b).clone()),
        _ => return Err(shape("cut formula is not an implication")),
    };
    let inner: Vec<Position> = poss
        .iter()
        .filter(|q| rho.contains(q))
        .map(|q| Position::relativize(rho, q).unwrap())
        .collect();
    if inner.is_empty() {
        return Err(shape("principal implication is outside the essence root"));
    }
    let refs: Vec<&Position> = poss.iter().collect();
    let moved = into_premise2(r, &geo, &refs)?;

    // c1: Δ* |- F1
    let c1 = reduce(l, &r.premises[0], &inner, pm, trace)?;
    // c3: Γ2(F2; Δ*) |- H
    let c3 = reduce(l, &r.premises[1], &moved, pm, trace)?;
    // c2: (Γ3; Δ*) |- F2  — cut c1 into the ImpR premise at F1
    let l1 = &l.premises[0];
    let f1_pos = formula_positions(&l1.conclusion.antecedent, &f1)
        .into_iter()
        .next()
        .ok_or_else(|| shape("F1 not found in the ImpR premise"))?;
    let c2 = reduce(&c1, l1, &[f1_pos], pm, trace)?;
    // context-sharing cut of c2 into c3 at F2, sharing Δ*
    let delta_star = c1.conclusion.antecedent.clone();
    let c4 = cs_reduce(&c2, &c3, &delta_star, pm, trace)?;
    // absorb the Γ3 copy into Δ* and contract
    let out = absorb_copy(&c4, gamma3, &delta_star)?;
    expect_conclusion(&out, target)
}

/// Plain cut followed by contraction of the duplicated shared part
/// (the expansion of `CutCS`).
fn cs_reduce(
    c2: &Derivation,
    c3: &Derivation,
    shared: &Bunch,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let f2 = &c2.conclusion.consequent;
    let c3_ant = &c3.conclusion.antecedent;
    let mut last = shape("no context-sharing site found");
    for q in formula_positions(c3_ant, f2) {
        let Some(parent) = parent_of(&q) else { continue };
        let Ok(layer) = sub_at(c3_ant, &parent) else { continue };
        if !contains_submultiset(&layer, shared) {
            continue;
        }
        let cut = match reduce(c2, c3, &[q.clone()], pm, trace) {
            Ok(c) => c,
            Err(e) => {
                last = e;
                continue;
            }
        };
        let Ok(Some(spliced)) =
            translate_through(c3_ant, &q, Some(&c2.conclusion.antecedent), &q)
        else {
            continue;
        };
        let cut_ant = cut.conclusion.antecedent.clone();
        let Ok(layer_pos) =
            shrink_to_layer(&cut_ant, &parent_of(&spliced).unwrap_or_else(Position::root))
        else {
            continue;
        };
        let Ok(layer) = sub_at(&cut_ant, &layer_pos) else { continue };
        let Some((keep, drop)) = find_pair_in_layer(&layer, &layer_pos, shared) else {
            continue;
        };
        match contract_derivation(&cut, &keep, &drop) {
            Ok(out) => return Ok(out),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// The conclusion holds `Γ2(Γ3; Δ*)`: weaken the `Γ3` copy up to a stripped
/// core of `Δ*`, pad it back into `Δ*`, and contract the two copies.
fn absorb_copy(
    d: &Derivation,
    gamma3: &Bunch,
    delta_star: &Bunch,
) -> Result<Derivation, TransformError> {
    let ant = d.conclusion.antecedent.clone();
    let comps: Vec<Bunch> = match gamma3 {
        Bunch::Add(xs) => xs.clone(),
        other => vec![other.clone()],
    };
    let mut found: Option<Position> = None;
    for layer_pos in positions(&ant) {
        let Ok(layer) = sub_at(&ant, &layer_pos) else { continue };
        if !matches!(layer, Bunch::Add(_)) {
            continue;
        }
        let Ok(dpos) = select_value_at(&ant, &layer_pos, delta_star) else { continue };
        if dpos == layer_pos {
            continue;
        }
        let used = selection_indices(&dpos);
        let cs = layer.children();
        let mut mine: Vec<usize> = Vec::new();
        let ok = comps.iter().all(|w| {
            cs.iter().enumerate().any(|(j, c)| {
                if !used.contains(&j) && !mine.contains(&j) && c == w {
                    mine.push(j);
                    true
                } else {
                    false
                }
            })
        });
        if !ok {
            continue;
        }
        mine.sort_unstable();
        found = Some(if mine.len() == 1 {
            layer_pos.clone().child(mine[0])
        } else {
            layer_pos.clone().select(mine)
        });
        break;
    }
    let gpos = found.ok_or_else(|| shape("could not locate the duplicated copies"))?;

    // a stripped core of Δ* whose top additive layer contains the copy
    let cores = strip_padding_cores(delta_star);
    let core = cores
        .iter()
        .find(|c| contains_submultiset(c, gamma3))
        .cloned()
        .ok_or_else(|| shape("no stripped core of the root contains the copy"))?;

    let mut cur = d.clone();
    let mut pos = gpos;
    let mut val = gamma3.clone();
    if core != val {
        let core_cs: Vec<Bunch> = match &core {
            Bunch::Add(xs) => xs.clone(),
            other => vec![other.clone()],
        };
        let mut used: Vec<usize> = Vec::new();
        for w in &comps {
            if let Some(idx) = core_cs
                .iter()
                .enumerate()
                .find_map(|(j, c)| if !used.contains(&j) && c == w { Some(j) } else { None })
            {
                used.push(idx);
            }
        }
        let missing: Vec<Bunch> = core_cs
            .into_iter()
            .enumerate()
            .filter(|(j, _)| !used.contains(j))
            .map(|(_, c)| c)
            .collect();
        if !missing.is_empty() {
            let extra = if missing.len() == 1 { missing[0].clone() } else { mk_add(missing) };
            cur = weaken_derivation(&cur, &pos, &extra)?;
            val = core.clone();
            pos = select_value_near(&cur.conclusion.antecedent, &pos, &val)?;
        }
    }
    let steps = essence_build_steps(delta_star, &core)
        .ok_or_else(|| shape("root is not an essence of its core"))?;
    for (rel, pad) in &steps {
        let at = pos.compose(rel);
        cur = ea2_padding(&cur, &at, pad)?;
        val = crate::bunch::graft_tracking(&val, rel, pad, LayerKind::Mult, &[])
            .map_err(|_| lost())?
            .0;
        pos = select_value_near(&cur.conclusion.antecedent, &pos, &val)?;
    }
    let layer_pos = shrink_to_layer(&cur.conclusion.antecedent, &pos)?;
    let layer = sub_at(&cur.conclusion.antecedent, &layer_pos).map_err(|_| lost())?;
    let (keep, drop) = find_pair_in_layer(&layer, &layer_pos, delta_star)
        .ok_or_else(|| shape("root copies are not contractible"))?;
    contract_derivation(&cur, &keep, &drop)
}

/// A raw padding graft `X ↦ X, pad` where `pad` is a whole padding piece
/// (`emp` or an additive layer with an `emp` component).
fn ea2_padding(d: &Derivation, pos: &Position, pad: &Bunch) -> Result<Derivation, TransformError> {
    match pad {
        Bunch::Leaf(Formula::MTop) => ea2_derivation(d, pos, None),
        Bunch::Add(cs) => {
            let mut rest: Vec<Bunch> = Vec::new();
            let mut dropped = false;
            for c in cs {
                if !dropped && matches!(c, Bunch::Leaf(Formula::MTop)) {
                    dropped = true;
                } else {
                    rest.push(c.clone());
                }
            }
            if !dropped {
                return Err(shape("padding piece without a unit"));
            }
            let pad_arg = if rest.is_empty() {
                None
            } else if rest.len() == 1 {
                Some(rest[0].clone())
            } else {
                Some(mk_add(rest))
            };
            ea2_derivation(d, pos, pad_arg.as_ref())
        }
        _ => Err(shape("padding piece without a unit")),
    }
}

fn selection_indices(p: &Position) -> Vec<usize> {
    match p.steps.last() {
        Some(Step::Child(i)) => vec![*i],
        Some(Step::Select(s)) | Some(Step::SelectM(s)) => s.clone(),
        None => Vec::new(),
    }
}

/// `(--*R, --*L)` principal reduction.
fn wand_case(
    l: &Derivation,
    r: &Derivation,
    poss: &[Position],
    target: &Sequent,
    pm: Option<CutMeasures>,
    trace: &mut CutTrace,
) -> Result<Derivation, TransformError> {
    let gamma3 = &l.conclusion.antecedent;
    let phi = &l.conclusion.consequent;
    let geo = impl_geometry(r)?;
    if geo.phi != *phi {
        return Err(shape("principal pair acts on different formulas"));
    }
    let rho = &r.witness.position;
    let ant = &r.conclusion.antecedent;
    let (f1, f2) = match phi {
        Formula::Wand(a, b) => ((**a).clone(), (**b).clone()),
        _ => return Err(shape("cut formula is not a wand")),
    };
    let inner: Vec<Position> = poss
        .iter()
        .filter(|q| rho.contains(q))
        .map(|q| Position::relativize(rho, q).unwrap())
        .collect();
    if inner.is_empty() {
        return Err(shape("principal wand is outside the essence root"));
    }
    let refs: Vec<&Position> = poss.iter().collect();
    let moved = into_premise2(r, &geo, &refs)?;

    // c3 = the multicut carried into premise 2
    let c3 = reduce(l, &r.premises[1], &moved, pm, trace)?;
    let c3_ant = c3.conclusion.antecedent.clone();

    // locate the (Re_j, F2)-component (or the bare F2 for an empty group)
    let site2 = into_premise2(r, &geo, &[&geo.site])?.pop().unwrap();
    let site2 = multi_translate(
        &r.premises[1].conclusion.antecedent,
        &moved,
        gamma3,
        &[site2],
    )?
    .pop()
    .flatten()
    .ok_or(lost())?;
    let lc_site = component_site(&c3_ant, &site2, &geo.added)
        .ok_or_else(|| shape("lost the consequent component in premise 2"))?;
    let f2_pos = if geo.added == Bunch::Leaf(f2.clone()) {
        lc_site.clone()
    } else {
        component_site(&c3_ant, &lc_site, &Bunch::Leaf(f2.clone()))
            .ok_or_else(|| shape("F2 not found in premise 2"))?
    };

    // cut the wand premise (Γ3, F1) |- F2 into the F2 leaf
    let lw = &l.premises[0];
    let c2 = reduce(lw, &c3, &[f2_pos.clone()], pm, trace)?;
    let c2_ant = c2.conclusion.antecedent.clone();
    // an F1 leaf appeared from lw's antecedent; cut Re_i |- F1 into it
    let lw_site = translate_through(&c3_ant, &f2_pos, Some(&lw.conclusion.antecedent), &f2_pos)
        .map_err(|_| lost())?
        .ok_or(lost())?;
    let f1_pos = component_site(&c2_ant, &outer_mult_layer(&c2_ant, &lw_site)?, &Bunch::Leaf(f1.clone()))
        .ok_or_else(|| shape("F1 not found after the F2 cut"))?;
    let c1 = reduce(&r.premises[0], &c2, &[f1_pos], pm, trace)?;

    // rebuild the duplicated component and contract
    let delta_star = multi_replace(&sub_at(ant, rho).map_err(|_| lost())?, &inner, gamma3)?;
    let target_component = match &r.witness.gamma_prime {
        Some(gp) => mk_mult(vec![gp.clone(), delta_star.clone()]),
        None => delta_star.clone(),
    };
    let out = rebuild_wand_residue(&c1, &target_component, gamma3, &delta_star)?;
    expect_conclusion(&out, target)
}

/// After the `(--*R, --*L)` cuts the conclusion holds an additive layer with
/// the real `(Γ', Δ*)` component next to the cut residue. Erase stray units
/// in the residue, raise its resource part, absorb the `Γ3` copy into `Δ*`,
/// and contract.
fn rebuild_wand_residue(
    d: &Derivation,
    target_component: &Bunch,
    gamma3: &Bunch,
    delta_star: &Bunch,
) -> Result<Derivation, TransformError> {
    let ant = d.conclusion.antecedent.clone();
    let mut last = shape("could not rebuild the --*L component after the cut");
    for layer_pos in positions(&ant) {
        let Ok(layer) = sub_at(&ant, &layer_pos) else { continue };
        if !matches!(layer, Bunch::Add(_)) {
            continue;
        }
        let Ok(tpos) = select_value_at(&ant, &layer_pos, target_component) else { continue };
        if tpos == layer_pos {
            continue;
        }
        let used = selection_indices(&tpos);
        let rest: Vec<usize> =
            (0..layer.children().len()).filter(|j| !used.contains(j)).collect();
        if rest.is_empty() {
            continue;
        }
        let rpos = if rest.len() == 1 {
            layer_pos.clone().child(rest[0])
        } else {
            layer_pos.clone().select(rest)
        };
        let residue = sub_at(&ant, &rpos).map_err(|_| lost())?;
        match transform_residue(d, &rpos, &residue, target_component, gamma3, delta_star) {
            Ok(out) => return Ok(out),
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn transform_residue(
    d: &Derivation,
    rpos: &Position,
    residue: &Bunch,
    target_component: &Bunch,
    gamma3: &Bunch,
    delta_star: &Bunch,
) -> Result<Derivation, TransformError> {
    // try the direct route first: units away, then weakening up
    if let Ok(cur) = raise_value_to(d, rpos, residue, target_component) {
        let layer_pos = shrink_to_layer(&cur.conclusion.antecedent, rpos)?;
        let layer = sub_at(&cur.conclusion.antecedent, &layer_pos).map_err(|_| lost())?;
        if let Some((keep, drop)) = find_pair_in_layer(&layer, &layer_pos, target_component) {
            if let Ok(out) = contract_derivation(&cur, &keep, &drop) {
                return Ok(out);
            }
        }
    }
    // otherwise absorb the Γ3 part into a Δ* via the padding route, then the
    // component matches and the copies contract (absorb_copy does both)
    let _ = (residue, target_component);
    absorb_wand_copy(d, rpos, gamma3, delta_star, target_component)
}

/// Erase units in the residue, weaken its resource part up to `Γ'`, turn the
/// `Γ3` part into `Δ*`, then contract with the real component.
fn absorb_wand_copy(
    d: &Derivation,
    rpos: &Position,
    gamma3: &Bunch,
    delta_star: &Bunch,
    target_component: &Bunch,
) -> Result<Derivation, TransformError> {
    let mut cur = d.clone();
    let mut pos = rpos.clone();

    // the Γ' part of the target (everything but Δ*)
    let gp_value: Option<Bunch> = match target_component {
        b if b == delta_star => None,
        Bunch::Mult(cs) => {
            let want: Vec<Bunch> = match delta_star {
                Bunch::Mult(xs) => xs.clone(),
                other => vec![other.clone()],
            };
            let mut used: Vec<usize> = Vec::new();
            for w in &want {
                let idx = cs
                    .iter()
                    .enumerate()
                    .find_map(|(j, c)| if !used.contains(&j) && c == w { Some(j) } else { None })
                    .ok_or(lost())?;
                used.push(idx);
            }
            let rest: Vec<Bunch> = cs
                .iter()
                .enumerate()
                .filter(|(j, _)| !used.contains(j))
                .map(|(_, c)| c.clone())
                .collect();
            if rest.is_empty() {
                None
            } else {
                Some(mk_mult(rest))
            }
        }
        _ => return Err(shape("target component does not contain the root")),
    };

    // 1. the Γ3 part of the residue becomes Δ* (weaken to a core, pad up)
    let comps3: Vec<Bunch> = match gamma3 {
        Bunch::Add(xs) => xs.clone(),
        other => vec![other.clone()],
    };
    let here = sub_at(&cur.conclusion.antecedent, &pos).map_err(|_| lost())?;
    let g3_rel = select_value_inside(&here, gamma3).ok_or(lost())?;
    let _ = comps3;
    let g3_abs = pos.compose(&g3_rel);
    let cores = strip_padding_cores(delta_star);
    let core = cores
        .iter()
        .find(|c| contains_submultiset(c, gamma3))
        .cloned()
        .ok_or_else(|| shape("no stripped core of the root contains the copy"))?;
    let mut g3_val = gamma3.clone();
    let mut g3_pos = g3_abs;
    if core != g3_val {
        let core_cs: Vec<Bunch> = match &core {
            Bunch::Add(xs) => xs.clone(),
            other => vec![other.clone()],
        };
        let mut used: Vec<usize> = Vec::new();
        for w in match gamma3 {
            Bunch::Add(xs) => xs.clone(),
            other => vec![other.clone()],
        }
        .iter()
        {
            if let Some(idx) = core_cs
                .iter()
                .enumerate()
                .find_map(|(j, c)| if !used.contains(&j) && c == w { Some(j) } else { None })
            {
                used.push(idx);
            }
        }
        let missing: Vec<Bunch> = core_cs
            .into_iter()
            .enumerate()
            .filter(|(j, _)| !used.contains(j))
            .map(|(_, c)| c)
            .collect();
        if !missing.is_empty() {
            let extra = if missing.len() == 1 { missing[0].clone() } else { mk_add(missing) };
            cur = weaken_derivation(&cur, &g3_pos, &extra)?;
            g3_val = core.clone();
            g3_pos = select_value_near(&cur.conclusion.antecedent, &g3_pos, &g3_val)?;
        }
    }
    for (rel, pad) in
        &essence_build_steps(delta_star, &core).ok_or_else(|| shape("root core mismatch"))?
    {
        let at = g3_pos.compose(rel);
        cur = ea2_padding(&cur, &at, pad)?;
        g3_val = crate::bunch::graft_tracking(&g3_val, rel, pad, LayerKind::Mult, &[])
            .map_err(|_| lost())?
            .0;
        g3_pos = select_value_near(&cur.conclusion.antecedent, &g3_pos, &g3_val)?;
    }

    // 2. raise the remaining resource part up to Γ' (after erasing units)
    pos = select_value_near(&cur.conclusion.antecedent, &pos, &{
        // current residue value: recompute around g3_pos
        let layer = outer_mult_layer(&cur.conclusion.antecedent, &g3_pos)?;
        sub_at(&cur.conclusion.antecedent, &layer).map_err(|_| lost())?
    })
    .unwrap_or(pos);
    if let Some(gp) = &gp_value {
        let here = sub_at(&cur.conclusion.antecedent, &pos).map_err(|_| lost())?;
        // the non-Δ* part of the current residue
        let rest_rel = complement_selection(&here, &g3_val).ok_or(lost())?;
        let rest_abs = pos.compose(&rest_rel);
        let rest_val = sub_at(&cur.conclusion.antecedent, &rest_abs).map_err(|_| lost())?;
        cur = raise_value_to(&cur, &rest_abs, &rest_val, gp)?;
    }

    // 3. contract with the real component
    let pos2 = select_value_near(&cur.conclusion.antecedent, &pos, target_component)?;
    let layer_pos = shrink_to_layer(&cur.conclusion.antecedent, &pos2)?;
    let layer = sub_at(&cur.conclusion.antecedent, &layer_pos).map_err(|_| lost())?;
    let (keep, drop) = find_pair_in_layer(&layer, &layer_pos, target_component)
        .ok_or_else(|| shape("component copies are not contractible"))?;
    contract_derivation(&cur, &keep, &drop)
}

/// A selection inside `b` (relative position) with value `want`.
fn select_value_inside(b: &Bunch, want: &Bunch) -> Option<Position> {
    if b == want {
        return Some(Position::root());
    }
    for p in positions(b) {
        if sub_at(b, &p).ok().as_ref() == Some(want) {
            return Some(p);
        }
    }
    // selections of the top layer
    let cs = b.children();
    let comps: Vec<Bunch> = if want.kind() == b.kind() {
        want.children().to_vec()
    } else {
        vec![want.clone()]
    };
    let mut used: Vec<usize> = Vec::new();
    for w in &comps {
        let idx = cs
            .iter()
            .enumerate()
            .find_map(|(j, c)| if !used.contains(&j) && c == w { Some(j) } else { None })?;
        used.push(idx);
    }
    used.sort_unstable();
    if used.len() == cs.len() || used.is_empty() {
        return None;
    }
    if used.len() == 1 {
        return Some(Position::root().child(used[0]));
    }
    match b.kind() {
        Some(LayerKind::Add) => Some(Position::root().select(used)),
        Some(LayerKind::Mult) => Some(Position::root().select_mult(used)),
        None => None,
    }
}

/// The selection of `b`'s top layer complementary to the one holding `part`.
fn complement_selection(b: &Bunch, part: &Bunch) -> Option<Position> {
    let cs = b.children();
    if cs.is_empty() {
        return None;
    }
    let comps: Vec<Bunch> = if part.kind() == b.kind() {
        part.children().to_vec()
    } else {
        vec![part.clone()]
    };
    let mut used: Vec<usize> = Vec::new();
    for w in &comps {
        let idx = cs
            .iter()
            .enumerate()
            .find_map(|(j, c)| if !used.contains(&j) && c == w { Some(j) } else { None })?;
        used.push(idx);
    }
    let rest: Vec<usize> = (0..cs.len()).filter(|j| !used.contains(j)).collect();
    if rest.is_empty() {
        return None;
    }
    if rest.len() == 1 {
        return Some(Position::root().child(rest[0]));
    }
    match b.kind() {
        Some(LayerKind::Add) => Some(Position::root().select(rest)),
        Some(LayerKind::Mult) => Some(Position::root().select_mult(rest)),
        None => None,
    }
}

// --- JSON --------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CutNodeDto {
    rule: String,
    conclusion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    position: Option<Vec<serde_json::Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    essence_core: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidate: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma_prime: Option<String>,
    #[serde(default)]
    premises: Vec<CutNodeDto>,
}

fn node_to_dto(d: &CutDerivation) -> CutNodeDto {
    CutNodeDto {
        rule: d.rule.name(),
        conclusion: d.conclusion.to_string(),
        position: if d.witness.position.is_root() {
            None
        } else {
            Some(position_to_json(&d.witness.position))
        },
        essence_core: d.witness.essence_core.as_ref().map(|b| b.to_string()),
        candidate: d.witness.candidate.as_ref().map(|(a, b)| (a.to_string(), b.to_string())),
        gamma_prime: d.witness.gamma_prime.as_ref().map(|b| b.to_string()),
        premises: d.premises.iter().map(node_to_dto).collect(),
    }
}

fn node_from_dto(dto: &CutNodeDto) -> Result<CutDerivation, String> {
    let rule = match dto.rule.as_str() {
        "Cut" => CutRule::Cut,
        "CutCS" => CutRule::CutCS,
        other => {
            CutRule::Base(RuleId::from_name(other).ok_or_else(|| format!("unknown rule {other}"))?)
        }
    };
    let conclusion = parse_sequent(&dto.conclusion).map_err(|e| e.to_string())?;
    let parse_b = |s: &String| crate::bunch::parse_bunch(s).map_err(|e| e.to_string());
    let witness = StepWitness {
        position: match &dto.position {
            None => Position::root(),
            Some(p) => position_from_json(p)?,
        },
        essence_core: dto.essence_core.as_ref().map(parse_b).transpose()?,
        candidate: dto
            .candidate
            .as_ref()
            .map(|(a, b)| -> Result<_, String> { Ok((parse_b(a)?, parse_b(b)?)) })
            .transpose()?,
        gamma_prime: dto.gamma_prime.as_ref().map(parse_b).transpose()?,
    };
    let premises = dto.premises.iter().map(node_from_dto).collect::<Result<_, _>>()?;
    Ok(CutDerivation { rule, conclusion, witness, premises })
}

/// Serializes as `{"calculus": "lbiz+cut", "derivation": {...}}`.
pub fn cut_derivation_to_json(d: &CutDerivation) -> serde_json::Value {
    serde_json::json!({
        "calculus": "lbiz+cut",
        "derivation": serde_json::to_value(node_to_dto(d)).unwrap(),
    })
}

pub fn cut_derivation_from_json(v: &serde_json::Value) -> Result<CutDerivation, String> {
    let node = v.get("derivation").unwrap_or(v);
    let dto: CutNodeDto = serde_json::from_value(node.clone()).map_err(|e| e.to_string())?;
    node_from_dto(&dto)
}
