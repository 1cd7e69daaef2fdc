//! Depth-preserving derivation transformers: weakening, EA2, inversion, the
//! unit equivalences, and contraction.
//!
//! Each transformer is a structural recursion over the derivation tree. The
//! conclusion is rewritten, witness positions are re-addressed through the
//! rewrite, and premise subtrees are either reused verbatim (when untouched)
//! or transformed recursively. Where a rewrite can invalidate a witness
//! (essence cores, candidate pairs), it is recomputed or repaired by a small
//! bounded search; every produced node passes the local checker, so a failed
//! repair surfaces as an error instead of a bogus derivation.

use thiserror::Error;

use crate::bunch::{
    graft_tracking, leaf_positions, mk_add, mk_mult, positions, replace_at, sub_at,
    translate_through, Bunch, LayerKind, Position, Sequent, Step,
};
use crate::formula::Formula;
use crate::lbiz::{
    check_step, partial_group_position, resolve_principal, Derivation, RuleId, StepWitness,
};
use crate::relations::{exposing_core, is_candidate_pair, mult_siblings, CandidatePair};

#[derive(Debug, Clone, Error)]
pub enum TransformError {
    #[error("invalid position for this transformation")]
    InvalidPosition,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("transformation produced an unchecked step: {0}")]
    Rebuild(String),
}

type TResult = Result<Derivation, TransformError>;

fn shape(msg: impl Into<String>) -> TransformError {
    TransformError::ShapeMismatch(msg.into())
}

fn lost() -> TransformError {
    TransformError::InvalidPosition
}

/// Builds a node and gates it through the local checker.
pub(crate) fn finish(
    rule: RuleId,
    conclusion: Sequent,
    witness: StepWitness,
    premises: Vec<Derivation>,
) -> TResult {
    let d = Derivation { rule, conclusion, witness, premises };
    check_step(&d, &[]).map_err(|e| TransformError::Rebuild(e.reason))?;
    Ok(d)
}

/// Closes a sequent with an axiom if one applies.
pub fn try_axiom(seq: &Sequent) -> Option<Derivation> {
    if let Some((pos, _)) =
        leaf_positions(&seq.antecedent).into_iter().find(|(_, f)| matches!(f, Formula::Bot))
    {
        return Some(Derivation::axiom(RuleId::BotL, seq.clone(), StepWitness::at(pos)));
    }
    match &seq.consequent {
        Formula::Top => Some(Derivation::axiom(RuleId::TopR, seq.clone(), StepWitness::default())),
        Formula::Atom(_) | Formula::MTop => exposing_core(&seq.antecedent, &seq.consequent)
            .map(|core| {
                let rule =
                    if matches!(seq.consequent, Formula::MTop) { RuleId::MTopR } else { RuleId::Id };
                Derivation::axiom(
                    rule,
                    seq.clone(),
                    StepWitness { essence_core: Some(core), ..Default::default() },
                )
            }),
        _ => None,
    }
}

/// Position of the direct child of the occurrence at `site` whose value is
/// `value` (or `site` itself when the whole occurrence matches).
pub(crate) fn component_site(tree: &Bunch, site: &Position, value: &Bunch) -> Option<Position> {
    let layer = sub_at(tree, site).ok()?;
    if layer == *value {
        return Some(site.clone());
    }
    let idx = layer.children().iter().position(|c| c == value)?;
    Some(site.compose(&Position::root().child(idx)))
}

/// The principal-rewrite replacements of the one-formula left rules, one
/// per premise.
pub(crate) fn left_rule_replacements(d: &Derivation) -> Result<Vec<Bunch>, TransformError> {
    let leaf = sub_at(&d.conclusion.antecedent, &d.witness.position).map_err(|_| lost())?;
    match (&leaf, d.rule) {
        (Bunch::Leaf(Formula::And(l, r)), RuleId::AndL) => {
            Ok(vec![mk_add(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])])
        }
        (Bunch::Leaf(Formula::Star(l, r)), RuleId::StarL) => {
            Ok(vec![mk_mult(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])])
        }
        (Bunch::Leaf(Formula::Or(l, r)), RuleId::OrL) => {
            Ok(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])
        }
        _ => Err(shape("principal does not match the rule")),
    }
}

/// The root-extension performed by `ImpR`/`WandR` reading backward.
fn right_rule_extension(d: &Derivation) -> Result<(Bunch, LayerKind), TransformError> {
    match (&d.conclusion.consequent, d.rule) {
        (Formula::Imp(l, _), RuleId::ImpR) => Ok((Bunch::Leaf((**l).clone()), LayerKind::Add)),
        (Formula::Wand(l, _), RuleId::WandR) => Ok((Bunch::Leaf((**l).clone()), LayerKind::Mult)),
        _ => Err(shape("consequent does not match the rule")),
    }
}

/// Translates conclusion positions into the premise antecedent of an
/// `ImpR`/`WandR` node.
pub(crate) fn through_extension(
    d: &Derivation,
    tracked: &[&Position],
) -> Result<Vec<Position>, TransformError> {
    let (ext, kind) = right_rule_extension(d)?;
    let (_, _, tr) =
        graft_tracking(&d.conclusion.antecedent, &Position::root(), &ext, kind, tracked)
            .map_err(|_| lost())?;
    tr.into_iter().map(|o| o.ok_or(lost())).collect()
}

/// The geometry of an `->L`/`--*L` node: principal, root position, premise-2
/// graft site and value. For `--*L` with a sibling group the "site" is the
/// group position and the grafted value is `(Re_j, G)`.
pub(crate) struct ImplGeometry {
    pub(crate) phi: Formula,
    /// position whose occurrence gains the additive sibling in premise 2
    pub(crate) site: Position,
    /// the added additive sibling
    pub(crate) added: Bunch,
}

pub(crate) fn impl_geometry(d: &Derivation) -> Result<ImplGeometry, TransformError> {
    let phi = resolve_principal(d).ok_or_else(|| shape("unresolvable implication principal"))?;
    let g = match &phi {
        Formula::Imp(_, g) | Formula::Wand(_, g) => Bunch::Leaf((**g).clone()),
        _ => unreachable!(),
    };
    match (d.rule, &d.witness.gamma_prime, &d.witness.candidate) {
        (RuleId::ImpL, _, _) | (RuleId::WandL, None, None) => {
            Ok(ImplGeometry { phi, site: d.witness.position.clone(), added: g })
        }
        (RuleId::WandL, Some(gp), Some((_, re_j))) => {
            let group = partial_group_position(&d.conclusion.antecedent, &d.witness.position, gp)
                .ok_or_else(|| shape("sibling group does not match the layer"))?;
            Ok(ImplGeometry { phi, site: group, added: mk_mult(vec![re_j.clone(), g]) })
        }
        _ => Err(shape("inconsistent implication witness")),
    }
}

/// Translates conclusion positions into premise 2 of an `->L`/`--*L` node:
/// premise 2 is the conclusion with `added` grafted additively at `site`.
pub(crate) fn into_premise2(
    d: &Derivation,
    geo: &ImplGeometry,
    tracked: &[&Position],
) -> Result<Vec<Position>, TransformError> {
    let (_, _, tr) = graft_tracking(
        &d.conclusion.antecedent,
        &geo.site,
        &geo.added,
        LayerKind::Add,
        tracked,
    )
    .map_err(|_| lost())?;
    tr.into_iter().map(|o| o.ok_or(lost())).collect()
}

/// Rebuilds an `->L`/`--*L` witness against a rewritten conclusion: the root
/// moved to `rho2`, the core is recomputed, the sibling group is re-read
/// from the new layer when it changed.
pub(crate) fn rebuilt_impl_witness(
    d: &Derivation,
    new_ant: &Bunch,
    rho2: Position,
    phi: &Formula,
    group_changed: bool,
) -> Result<StepWitness, TransformError> {
    let root2 = sub_at(new_ant, &rho2).map_err(|_| lost())?;
    let core2 = exposing_core(&root2, phi)
        .ok_or_else(|| shape("rewrite destroyed the essence root"))?;
    let gamma_prime = match &d.witness.gamma_prime {
        None => None,
        Some(gp) if !group_changed => Some(gp.clone()),
        Some(_) => {
            Some(mult_siblings(new_ant, &rho2).ok_or_else(|| shape("sibling group vanished"))?)
        }
    };
    Ok(StepWitness {
        position: rho2,
        essence_core: Some(core2),
        candidate: d.witness.candidate.clone(),
        gamma_prime,
    })
}

// ---------------------------------------------------------------------------
// Weakening and EA2 (the graft engine)
// ---------------------------------------------------------------------------

/// Admissible weakening: rewrites a derivation of `Γ(Γ1) |- F` into one of
/// `Γ(Γ1; Γ2) |- F` without increasing the depth.
pub fn weaken_derivation(d: &Derivation, pos: &Position, g2: &Bunch) -> TResult {
    graft_transform(d, pos, g2, LayerKind::Add)
}

/// Admissible EA2: rewrites a derivation of `Γ(Γ1) |- F` into one of
/// `Γ(Γ1, (emp; pad)) |- F` (plain `Γ1, emp` when `pad` is `None`) without
/// increasing the depth.
pub fn ea2_derivation(d: &Derivation, pos: &Position, pad: Option<&Bunch>) -> TResult {
    let extra = match pad {
        None => Bunch::mtop(),
        Some(p) => mk_add(vec![Bunch::mtop(), p.clone()]),
    };
    graft_transform(d, pos, &extra, LayerKind::Mult)
}

fn graft_transform(d: &Derivation, pos: &Position, extra: &Bunch, kind: LayerKind) -> TResult {
    let ant = &d.conclusion.antecedent;
    let goal = &d.conclusion.consequent;
    let (new_ant, _, _) =
        graft_tracking(ant, pos, extra, kind, &[]).map_err(|_| TransformError::InvalidPosition)?;
    let new_seq = Sequent::new(new_ant.clone(), goal.clone());

    if let Some(ax) = try_axiom(&new_seq) {
        return Ok(ax);
    }

    let track = |p: &Position| -> Result<Position, TransformError> {
        let (_, _, tr) = graft_tracking(ant, pos, extra, kind, &[p]).map_err(|_| lost())?;
        tr.into_iter().next().flatten().ok_or_else(|| shape("witness position lost in graft"))
    };

    match d.rule {
        RuleId::Id | RuleId::MTopR | RuleId::TopR | RuleId::BotL => {
            Err(shape("graft destroyed an axiom"))
        }
        RuleId::AndR => {
            let ps = d
                .premises
                .iter()
                .map(|p| graft_transform(p, pos, extra, kind))
                .collect::<Result<Vec<_>, _>>()?;
            finish(RuleId::AndR, new_seq, StepWitness::default(), ps)
        }
        RuleId::OrR(i) => {
            let p = graft_transform(&d.premises[0], pos, extra, kind)?;
            finish(RuleId::OrR(i), new_seq, StepWitness::default(), vec![p])
        }
        RuleId::ImpR | RuleId::WandR => {
            let ppos = through_extension(d, &[pos])?.pop().unwrap();
            let p = graft_transform(&d.premises[0], &ppos, extra, kind)?;
            finish(d.rule, new_seq, StepWitness::default(), vec![p])
        }
        RuleId::AndL | RuleId::StarL | RuleId::OrL => {
            let repls = left_rule_replacements(d)?;
            let mut ps = Vec::with_capacity(repls.len());
            for (prem, repl) in d.premises.iter().zip(&repls) {
                let ppos = translate_through(ant, &d.witness.position, Some(repl), pos)
                    .map_err(|_| lost())?
                    .ok_or_else(|| shape("graft position lost in premise"))?;
                ps.push(graft_transform(prem, &ppos, extra, kind)?);
            }
            let wpos = track(&d.witness.position)?;
            finish(d.rule, new_seq, StepWitness::at(wpos), ps)
        }
        RuleId::ImpL | RuleId::WandL => {
            let geo = impl_geometry(d)?;
            let rho = &d.witness.position;
            let pos_in_p2 = into_premise2(d, &geo, &[pos])?.pop().unwrap();
            let p2 = graft_transform(&d.premises[1], &pos_in_p2, extra, kind)?;
            let rho2 = track(rho)?;
            let group_changed = geo.site.contains(pos) && !rho.contains(pos);
            let witness = rebuilt_impl_witness(d, &new_ant, rho2, &geo.phi, group_changed)?;

            // premise 1 and the candidate
            if rho.contains(pos) {
                // inside the essence root: premise 1 (for ->L the root
                // itself, for --*L the unrelated Re_i) follows suit
                let p1 = if d.rule == RuleId::ImpL {
                    let rel = Position::relativize(rho, pos).unwrap();
                    graft_transform(&d.premises[0], &rel, extra, kind)?
                } else {
                    d.premises[0].clone()
                };
                return finish(d.rule, new_seq, witness, vec![p1, p2]);
            }
            if d.rule == RuleId::ImpL || d.witness.candidate.is_none() {
                return finish(d.rule, new_seq, witness, vec![d.premises[0].clone(), p2]);
            }
            // --*L with a candidate: the pair may need to follow the graft
            let (re_i, re_j) = d.witness.candidate.clone().unwrap();
            let gp2 = witness.gamma_prime.clone().unwrap();
            let pair_ok = |a: &Bunch, b: &Bunch| {
                is_candidate_pair(&CandidatePair::new(a.clone(), b.clone()).canonical(), &gp2)
            };
            if pair_ok(&re_i, &re_j) {
                return finish(d.rule, new_seq, witness, vec![d.premises[0].clone(), p2]);
            }
            for q in positions(&re_i) {
                let Ok((cand, _, _)) = graft_tracking(&re_i, &q, extra, kind, &[]) else {
                    continue;
                };
                if pair_ok(&cand, &re_j) {
                    let p1 = graft_transform(&d.premises[0], &q, extra, kind)?;
                    let w =
                        StepWitness { candidate: Some((cand, re_j.clone())), ..witness.clone() };
                    return finish(d.rule, new_seq, w, vec![p1, p2]);
                }
            }
            for q in positions(&re_j) {
                let Ok((cand, _, _)) = graft_tracking(&re_j, &q, extra, kind, &[]) else {
                    continue;
                };
                if pair_ok(&re_i, &cand) {
                    // Re_j also occurs in premise 2; pad that copy as well
                    let p2ant = &p2.conclusion.antecedent;
                    let site2 = into_premise2(d, &geo, &[&geo.site])?.pop().unwrap();
                    let lc = &geo.added;
                    let lc_site = component_site(p2ant, &site2, lc)
                        .ok_or_else(|| shape("lost the Re_j copy in premise 2"))?;
                    let rej_site = component_site(p2ant, &lc_site, &re_j)
                        .ok_or_else(|| shape("lost the Re_j copy in premise 2"))?;
                    let p2b = graft_transform(&p2, &rej_site.compose(&q), extra, kind)?;
                    let w = StepWitness { candidate: Some((re_i.clone(), cand)), ..witness };
                    return finish(d.rule, new_seq, w, vec![d.premises[0].clone(), p2b]);
                }
            }
            Err(shape("could not repair the --*L candidate after the graft"))
        }
        RuleId::StarR => {
            let Some((re_i, re_j)) = d.witness.candidate.clone() else {
                return Err(shape("missing *R candidate"));
            };
            let pair_ok = |a: &Bunch, b: &Bunch| {
                is_candidate_pair(&CandidatePair::new(a.clone(), b.clone()).canonical(), &new_ant)
            };
            if pair_ok(&re_i, &re_j) {
                return finish(RuleId::StarR, new_seq, d.witness.clone(), d.premises.to_vec());
            }
            for q in positions(&re_i) {
                let Ok((cand, _, _)) = graft_tracking(&re_i, &q, extra, kind, &[]) else {
                    continue;
                };
                if pair_ok(&cand, &re_j) {
                    let p1 = graft_transform(&d.premises[0], &q, extra, kind)?;
                    return finish(
                        RuleId::StarR,
                        new_seq,
                        StepWitness { candidate: Some((cand, re_j)), ..Default::default() },
                        vec![p1, d.premises[1].clone()],
                    );
                }
            }
            for q in positions(&re_j) {
                let Ok((cand, _, _)) = graft_tracking(&re_j, &q, extra, kind, &[]) else {
                    continue;
                };
                if pair_ok(&re_i, &cand) {
                    let p2 = graft_transform(&d.premises[1], &q, extra, kind)?;
                    return finish(
                        RuleId::StarR,
                        new_seq,
                        StepWitness { candidate: Some((re_i, cand)), ..Default::default() },
                        vec![d.premises[0].clone(), p2],
                    );
                }
            }
            Err(shape("could not repair the *R candidate after the graft"))
        }
    }
}

// ---------------------------------------------------------------------------
// Inversion
// ---------------------------------------------------------------------------

/// The invertible shapes of the inversion lemma.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InversionKind {
    /// `Γ(F /\ G) |- H  =>  Γ(F; G) |- H`
    AndL,
    /// `Γ(F \/ G) |- H  =>  Γ(F) |- H` and `Γ(G) |- H`
    OrL,
    /// `Γ(F * G) |- H  =>  Γ(F, G) |- H`
    StarL,
    /// `Γ(Γ1; top) |- H  =>  Γ(Γ1) |- H`
    TopErase,
    /// `Γ(Γ1, emp) |- H  =>  Γ(Γ1) |- H`
    MTopErase,
    /// `Γ |- F /\ G  =>  Γ |- F` and `Γ |- G`
    AndR,
    /// `Γ |- F -> G  =>  Γ; F |- G`
    ImpR,
    /// `Γ |- F --* G  =>  Γ, F |- G`
    WandR,
}

impl InversionKind {
    pub fn outputs(self) -> usize {
        match self {
            InversionKind::OrL | InversionKind::AndR => 2,
            _ => 1,
        }
    }

    pub fn from_name(s: &str) -> Option<InversionKind> {
        Some(match s {
            "and-l" => InversionKind::AndL,
            "or-l" => InversionKind::OrL,
            "star-l" => InversionKind::StarL,
            "top-erase" => InversionKind::TopErase,
            "emp-erase" => InversionKind::MTopErase,
            "and-r" => InversionKind::AndR,
            "imp-r" => InversionKind::ImpR,
            "wand-r" => InversionKind::WandR,
            _ => return None,
        })
    }
}

/// Depth-preserving inversion. For antecedent shapes, `pos` addresses the
/// principal leaf (the unit leaf for the erasure shapes); for the consequent
/// shapes it is ignored. Returns one derivation per output of the shape.
pub fn invert_derivation(
    d: &Derivation,
    kind: InversionKind,
    pos: &Position,
) -> Result<Vec<Derivation>, TransformError> {
    match kind {
        InversionKind::AndR | InversionKind::ImpR | InversionKind::WandR => {
            invert_consequent(d, kind)
        }
        _ => {
            let ant = &d.conclusion.antecedent;
            let goal = &d.conclusion.consequent;
            let mut out = Vec::with_capacity(kind.outputs());
            for k in 0..kind.outputs() {
                let new_ant = inversion_result(ant, kind, pos, k)?;
                out.push(invert_antecedent_one(
                    d,
                    kind,
                    pos,
                    k,
                    &Sequent::new(new_ant, goal.clone()),
                )?);
            }
            Ok(out)
        }
    }
}

/// The replacement an antecedent inversion applies at `pos` for output `k`
/// (`None` = deletion).
fn inversion_replacement(
    ant: &Bunch,
    kind: InversionKind,
    pos: &Position,
    k: usize,
) -> Result<Option<Bunch>, TransformError> {
    let leaf = sub_at(ant, pos).map_err(|_| lost())?;
    match (kind, &leaf) {
        (InversionKind::AndL, Bunch::Leaf(Formula::And(l, r))) => {
            Ok(Some(mk_add(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])))
        }
        (InversionKind::StarL, Bunch::Leaf(Formula::Star(l, r))) => {
            Ok(Some(mk_mult(vec![Bunch::Leaf((**l).clone()), Bunch::Leaf((**r).clone())])))
        }
        (InversionKind::OrL, Bunch::Leaf(Formula::Or(l, r))) => {
            Ok(Some(Bunch::Leaf(if k == 0 { (**l).clone() } else { (**r).clone() })))
        }
        (InversionKind::TopErase, Bunch::Leaf(Formula::Top))
        | (InversionKind::MTopErase, Bunch::Leaf(Formula::MTop)) => {
            let want = if kind == InversionKind::TopErase { LayerKind::Add } else { LayerKind::Mult };
            let parent_ok = match pos.steps.split_last() {
                Some((Step::Child(_), prefix)) => {
                    sub_at(ant, &Position { steps: prefix.to_vec() })
                        .map(|p| p.kind() == Some(want))
                        .unwrap_or(false)
                }
                _ => false,
            };
            if !parent_ok {
                return Err(shape("unit erasure needs the matching layer kind"));
            }
            Ok(None)
        }
        _ => Err(shape("position does not hold the inverted shape")),
    }
}

fn inversion_result(
    ant: &Bunch,
    kind: InversionKind,
    pos: &Position,
    k: usize,
) -> Result<Bunch, TransformError> {
    let repl = inversion_replacement(ant, kind, pos, k)?;
    replace_at(ant, pos, repl.as_ref()).map_err(|_| lost())
}

/// Positions in `b` where the inverted shape occurs (used for candidate
/// repairs, where the mirrored occurrence must be searched for).
fn inversion_sites(b: &Bunch, kind: InversionKind) -> Vec<Position> {
    leaf_positions(b)
        .into_iter()
        .filter(|(_, f)| match kind {
            InversionKind::AndL => matches!(f, Formula::And(_, _)),
            InversionKind::StarL => matches!(f, Formula::Star(_, _)),
            InversionKind::OrL => matches!(f, Formula::Or(_, _)),
            InversionKind::TopErase => matches!(f, Formula::Top),
            InversionKind::MTopErase => matches!(f, Formula::MTop),
            _ => false,
        })
        .map(|(p, _)| p)
        .collect()
}

/// Inverts a derivation at a position of its own antecedent, producing the
/// `k`-th output.
fn invert_at(d: &Derivation, kind: InversionKind, pos: &Position, k: usize) -> TResult {
    let new_ant = inversion_result(&d.conclusion.antecedent, kind, pos, k)?;
    invert_antecedent_one(d, kind, pos, k, &Sequent::new(new_ant, d.conclusion.consequent.clone()))
}

fn invert_antecedent_one(
    d: &Derivation,
    kind: InversionKind,
    pos: &Position,
    k: usize,
    new_seq: &Sequent,
) -> TResult {
    let ant = &d.conclusion.antecedent;
    let new_ant = &new_seq.antecedent;
    let repl = inversion_replacement(ant, kind, pos, k)?;

    // principal case: this node already performs the inversion
    let principal_here = match (kind, d.rule) {
        (InversionKind::AndL, RuleId::AndL)
        | (InversionKind::StarL, RuleId::StarL)
        | (InversionKind::OrL, RuleId::OrL) => d.witness.position == *pos,
        _ => false,
    };
    if principal_here {
        return Ok(d.premises[k.min(d.premises.len() - 1)].clone());
    }

    if let Some(ax) = try_axiom(new_seq) {
        return Ok(ax);
    }

    let track_req = |p: &Position| -> Result<Position, TransformError> {
        translate_through(ant, pos, repl.as_ref(), p)
            .map_err(|_| lost())?
            .ok_or_else(|| shape("witness position lost in inversion"))
    };

    match d.rule {
        RuleId::Id | RuleId::MTopR | RuleId::TopR | RuleId::BotL => {
            Err(shape("inversion destroyed an axiom"))
        }
        RuleId::AndR => {
            let ps = d
                .premises
                .iter()
                .map(|p| invert_at(p, kind, pos, k))
                .collect::<Result<Vec<_>, _>>()?;
            finish(RuleId::AndR, new_seq.clone(), StepWitness::default(), ps)
        }
        RuleId::OrR(i) => {
            let p = invert_at(&d.premises[0], kind, pos, k)?;
            finish(RuleId::OrR(i), new_seq.clone(), StepWitness::default(), vec![p])
        }
        RuleId::ImpR | RuleId::WandR => {
            let ppos = through_extension(d, &[pos])?.pop().unwrap();
            let p = invert_at(&d.premises[0], kind, &ppos, k)?;
            finish(d.rule, new_seq.clone(), StepWitness::default(), vec![p])
        }
        RuleId::AndL | RuleId::StarL | RuleId::OrL => {
            let repls = left_rule_replacements(d)?;
            let mut ps = Vec::with_capacity(d.premises.len());
            for (prem, own_repl) in d.premises.iter().zip(&repls) {
                let ppos = translate_through(ant, &d.witness.position, Some(own_repl), pos)
                    .map_err(|_| lost())?
                    .ok_or_else(|| shape("inverted position lost in premise"))?;
                ps.push(invert_at(prem, kind, &ppos, k)?);
            }
            let wpos = track_req(&d.witness.position)?;
            finish(d.rule, new_seq.clone(), StepWitness::at(wpos), ps)
        }
        RuleId::ImpL | RuleId::WandL => {
            let geo = impl_geometry(d)?;
            let rho = &d.witness.position;
            let pos_in_p2 = into_premise2(d, &geo, &[pos])?.pop().unwrap();
            let p2 = invert_at(&d.premises[1], kind, &pos_in_p2, k)?;
            let rho2 = track_req(rho)?;
            let group_changed = geo.site.contains(pos) && !rho.contains(pos);
            let witness = rebuilt_impl_witness(d, new_ant, rho2, &geo.phi, group_changed)?;
            if rho.contains(pos) {
                let p1 = if d.rule == RuleId::ImpL {
                    let rel = Position::relativize(rho, pos).unwrap();
                    invert_at(&d.premises[0], kind, &rel, k)?
                } else {
                    d.premises[0].clone()
                };
                return finish(d.rule, new_seq.clone(), witness, vec![p1, p2]);
            }
            if d.rule == RuleId::ImpL || d.witness.candidate.is_none() {
                return finish(d.rule, new_seq.clone(), witness, vec![d.premises[0].clone(), p2]);
            }
            // --*L candidate repair, mirroring the inversion into the pair
            let (re_i, re_j) = d.witness.candidate.clone().unwrap();
            let gp2 = witness.gamma_prime.clone().unwrap();
            let pair_ok = |a: &Bunch, b: &Bunch| {
                is_candidate_pair(&CandidatePair::new(a.clone(), b.clone()).canonical(), &gp2)
            };
            if pair_ok(&re_i, &re_j) {
                return finish(d.rule, new_seq.clone(), witness, vec![d.premises[0].clone(), p2]);
            }
            for q in inversion_sites(&re_i, kind) {
                let Ok(cand) = inversion_result(&re_i, kind, &q, k) else { continue };
                if !pair_ok(&cand, &re_j) {
                    continue;
                }
                let Ok(p1) = invert_at(&d.premises[0], kind, &q, k) else { continue };
                let w = StepWitness { candidate: Some((cand, re_j.clone())), ..witness.clone() };
                return finish(d.rule, new_seq.clone(), w, vec![p1, p2]);
            }
            for q in inversion_sites(&re_j, kind) {
                let Ok(cand) = inversion_result(&re_j, kind, &q, k) else { continue };
                if !pair_ok(&re_i, &cand) {
                    continue;
                }
                let p2ant = &p2.conclusion.antecedent;
                let site2 = into_premise2(d, &geo, &[&geo.site])?.pop().unwrap();
                let Some(lc_site) = component_site(p2ant, &site2, &geo.added) else { continue };
                let Some(rej_site) = component_site(p2ant, &lc_site, &re_j) else { continue };
                let Ok(p2b) = invert_at(&p2, kind, &rej_site.compose(&q), k) else { continue };
                let w = StepWitness { candidate: Some((re_i.clone(), cand)), ..witness.clone() };
                return finish(d.rule, new_seq.clone(), w, vec![d.premises[0].clone(), p2b]);
            }
            Err(shape("could not repair the --*L candidate after inversion"))
        }
        RuleId::StarR => {
            let Some((re_i, re_j)) = d.witness.candidate.clone() else {
                return Err(shape("missing *R candidate"));
            };
            let pair_ok = |a: &Bunch, b: &Bunch| {
                is_candidate_pair(&CandidatePair::new(a.clone(), b.clone()).canonical(), new_ant)
            };
            if pair_ok(&re_i, &re_j) {
                return finish(
                    RuleId::StarR,
                    new_seq.clone(),
                    d.witness.clone(),
                    d.premises.to_vec(),
                );
            }
            for q in inversion_sites(&re_i, kind) {
                let Ok(cand) = inversion_result(&re_i, kind, &q, k) else { continue };
                if !pair_ok(&cand, &re_j) {
                    continue;
                }
                let Ok(p1) = invert_at(&d.premises[0], kind, &q, k) else { continue };
                return finish(
                    RuleId::StarR,
                    new_seq.clone(),
                    StepWitness { candidate: Some((cand, re_j.clone())), ..Default::default() },
                    vec![p1, d.premises[1].clone()],
                );
            }
            for q in inversion_sites(&re_j, kind) {
                let Ok(cand) = inversion_result(&re_j, kind, &q, k) else { continue };
                if !pair_ok(&re_i, &cand) {
                    continue;
                }
                let Ok(p2) = invert_at(&d.premises[1], kind, &q, k) else { continue };
                return finish(
                    RuleId::StarR,
                    new_seq.clone(),
                    StepWitness { candidate: Some((re_i.clone(), cand)), ..Default::default() },
                    vec![d.premises[0].clone(), p2],
                );
            }
            Err(shape("could not repair the *R candidate after inversion"))
        }
    }
}

/// Consequent-shape inversions.
fn invert_consequent(
    d: &Derivation,
    kind: InversionKind,
) -> Result<Vec<Derivation>, TransformError> {
    let goal = &d.conclusion.consequent;
    let ant = &d.conclusion.antecedent;
    let targets: Vec<Sequent> = match (kind, goal) {
        (InversionKind::AndR, Formula::And(l, r)) => vec![
            Sequent::new(ant.clone(), (**l).clone()),
            Sequent::new(ant.clone(), (**r).clone()),
        ],
        (InversionKind::ImpR, Formula::Imp(l, r)) => vec![Sequent::new(
            mk_add(vec![ant.clone(), Bunch::Leaf((**l).clone())]),
            (**r).clone(),
        )],
        (InversionKind::WandR, Formula::Wand(l, r)) => vec![Sequent::new(
            mk_mult(vec![ant.clone(), Bunch::Leaf((**l).clone())]),
            (**r).clone(),
        )],
        _ => return Err(shape("consequent does not have the inverted shape")),
    };
    targets
        .iter()
        .enumerate()
        .map(|(k, t)| invert_consequent_one(d, kind, k, t))
        .collect()
}

fn invert_consequent_one(
    d: &Derivation,
    kind: InversionKind,
    k: usize,
    target: &Sequent,
) -> TResult {
    // principal case
    match (kind, d.rule) {
        (InversionKind::AndR, RuleId::AndR)
        | (InversionKind::ImpR, RuleId::ImpR)
        | (InversionKind::WandR, RuleId::WandR) => {
            return Ok(d.premises[k.min(d.premises.len() - 1)].clone());
        }
        _ => {}
    }
    if let Some(ax) = try_axiom(target) {
        return Ok(ax);
    }
    let ant = &d.conclusion.antecedent;
    let old_goal = &d.conclusion.consequent;

    // how the target antecedent extends the old one (identity for AndR)
    let extend = |a: &Bunch| -> Bunch {
        match (kind, old_goal) {
            (InversionKind::ImpR, Formula::Imp(l, _)) => {
                mk_add(vec![a.clone(), Bunch::Leaf((**l).clone())])
            }
            (InversionKind::WandR, Formula::Wand(l, _)) => {
                mk_mult(vec![a.clone(), Bunch::Leaf((**l).clone())])
            }
            _ => a.clone(),
        }
    };
    // a conclusion-antecedent position, re-addressed in the target
    let ext_kind = match kind {
        InversionKind::ImpR => Some(LayerKind::Add),
        InversionKind::WandR => Some(LayerKind::Mult),
        _ => None,
    };
    let track = |p: &Position| -> Result<Position, TransformError> {
        match (ext_kind, old_goal) {
            (Some(kd), Formula::Imp(l, _) | Formula::Wand(l, _)) => {
                let ext = Bunch::Leaf((**l).clone());
                let (_, _, tr) = graft_tracking(ant, &Position::root(), &ext, kd, &[p])
                    .map_err(|_| lost())?;
                tr.into_iter().next().flatten().ok_or_else(|| lost())
            }
            _ => Ok(p.clone()),
        }
    };

    match d.rule {
        RuleId::BotL | RuleId::TopR | RuleId::Id | RuleId::MTopR => {
            Err(shape("inversion of an axiom that does not survive"))
        }
        RuleId::AndL | RuleId::StarL | RuleId::OrL => {
            let mut ps = Vec::with_capacity(d.premises.len());
            for prem in &d.premises {
                let t = Sequent::new(
                    extend(&prem.conclusion.antecedent),
                    target.consequent.clone(),
                );
                ps.push(invert_consequent_one(prem, kind, k, &t)?);
            }
            let wpos = track(&d.witness.position)?;
            finish(d.rule, target.clone(), StepWitness::at(wpos), ps)
        }
        RuleId::ImpL | RuleId::WandL => {
            let geo = impl_geometry(d)?;
            let t2 = Sequent::new(
                extend(&d.premises[1].conclusion.antecedent),
                target.consequent.clone(),
            );
            let p2 = invert_consequent_one(&d.premises[1], kind, k, &t2)?;
            let rho2 = track(&d.witness.position)?;
            let witness = rebuilt_impl_witness(d, &target.antecedent, rho2, &geo.phi, false)?;
            // the untouched sibling group is still a subset of the (possibly
            // larger) new layer, and the candidate did not change
            finish(d.rule, target.clone(), witness, vec![d.premises[0].clone(), p2])
        }
        RuleId::StarR => Err(shape("a *R node cannot conclude the inverted consequent")),
        _ => Err(shape(format!(
            "rule {} cannot conclude the inverted consequent",
            d.rule.name()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Unit equivalences
// ---------------------------------------------------------------------------

/// The four unit-equivalence directions. `AddTop`/`AddMTop` insert the unit
/// next to the occurrence at `pos`; the erasure directions expect `pos` to
/// address the unit leaf.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EqAntDirection {
    AddTop,
    RemoveTop,
    AddMTop,
    RemoveMTop,
}

impl EqAntDirection {
    pub fn from_name(s: &str) -> Option<EqAntDirection> {
        Some(match s {
            "add-top" => EqAntDirection::AddTop,
            "remove-top" => EqAntDirection::RemoveTop,
            "add-emp" => EqAntDirection::AddMTop,
            "remove-emp" => EqAntDirection::RemoveMTop,
            _ => return None,
        })
    }
}

pub fn eqant_derivation(d: &Derivation, dir: EqAntDirection, pos: &Position) -> TResult {
    match dir {
        EqAntDirection::AddTop => weaken_derivation(d, pos, &Bunch::Leaf(Formula::Top)),
        EqAntDirection::AddMTop => ea2_derivation(d, pos, None),
        EqAntDirection::RemoveTop => {
            invert_derivation(d, InversionKind::TopErase, pos).map(|mut v| v.pop().unwrap())
        }
        EqAntDirection::RemoveMTop => {
            invert_derivation(d, InversionKind::MTopErase, pos).map(|mut v| v.pop().unwrap())
        }
    }
}

// ---------------------------------------------------------------------------
// Contraction
// ---------------------------------------------------------------------------

/// Admissible contraction: given a derivation of `Γ(Γa; Γa) |- F` and two
/// disjoint selections of one additive layer holding AC-equal values,
/// rewrites it into a derivation with the `drop` selection deleted, without
/// increasing the depth.
pub fn contract_derivation(d: &Derivation, keep: &Position, drop: &Position) -> TResult {
    let ant = &d.conclusion.antecedent;
    let a = sub_at(ant, keep).map_err(|_| lost())?;
    let b = sub_at(ant, drop).map_err(|_| lost())?;
    if a != b {
        return Err(shape("selected siblings are not AC-equal"));
    }
    if !same_layer_disjoint(keep, drop) {
        return Err(shape("selections must be disjoint parts of one additive layer"));
    }
    contract_rec(d, keep, drop)
}

/// Both positions address disjoint parts of the same (additive) layer.
fn same_layer_disjoint(a: &Position, b: &Position) -> bool {
    let parts = |p: &Position| -> Option<(Vec<Step>, Vec<usize>)> {
        let (last, prefix) = p.steps.split_last()?;
        match last {
            Step::Child(i) => Some((prefix.to_vec(), vec![*i])),
            Step::Select(s) => Some((prefix.to_vec(), s.clone())),
            Step::SelectM(_) => None,
        }
    };
    match (parts(a), parts(b)) {
        (Some((pa, ia)), Some((pb, ib))) => pa == pb && ia.iter().all(|i| !ib.contains(i)),
        _ => false,
    }
}

fn contract_rec(d: &Derivation, keep: &Position, drop: &Position) -> TResult {
    let ant = &d.conclusion.antecedent;
    let goal = &d.conclusion.consequent;
    let new_ant = replace_at(ant, drop, None).map_err(|_| lost())?;
    let new_seq = Sequent::new(new_ant.clone(), goal.clone());

    if let Some(ax) = try_axiom(&new_seq) {
        return Ok(ax);
    }

    let track = |p: &Position| -> Result<Position, TransformError> {
        translate_through(ant, drop, None, p)
            .map_err(|_| lost())?
            .ok_or_else(|| shape("witness position lost in contraction"))
    };

    match d.rule {
        RuleId::Id | RuleId::MTopR | RuleId::TopR | RuleId::BotL => {
            Err(shape("contraction destroyed an axiom"))
        }
        RuleId::AndR => {
            let ps = d
                .premises
                .iter()
                .map(|p| contract_rec(p, keep, drop))
                .collect::<Result<Vec<_>, _>>()?;
            finish(RuleId::AndR, new_seq, StepWitness::default(), ps)
        }
        RuleId::OrR(i) => {
            let p = contract_rec(&d.premises[0], keep, drop)?;
            finish(RuleId::OrR(i), new_seq, StepWitness::default(), vec![p])
        }
        RuleId::ImpR | RuleId::WandR => {
            let mut tr = through_extension(d, &[keep, drop])?;
            let d2 = tr.pop().unwrap();
            let k2 = tr.pop().unwrap();
            let p = contract_rec(&d.premises[0], &k2, &d2)?;
            finish(d.rule, new_seq, StepWitness::default(), vec![p])
        }
        RuleId::AndL | RuleId::StarL | RuleId::OrL => {
            let p_pos = &d.witness.position;
            if drop.contains(p_pos) {
                return contract_leaf_rule_in_dropped_copy(d, keep, drop, &new_seq);
            }
            let repls = left_rule_replacements(d)?;
            let mut ps = Vec::with_capacity(d.premises.len());
            for (prem, own_repl) in d.premises.iter().zip(&repls) {
                let keep2 = translate_through(ant, p_pos, Some(own_repl), keep)
                    .map_err(|_| lost())?
                    .ok_or(lost())?;
                let drop2 = translate_through(ant, p_pos, Some(own_repl), drop)
                    .map_err(|_| lost())?
                    .ok_or(lost())?;
                ps.push(contract_rec(prem, &keep2, &drop2)?);
            }
            let wpos = track(p_pos)?;
            finish(d.rule, new_seq, StepWitness::at(wpos), ps)
        }
        RuleId::ImpL | RuleId::WandL => contract_impl(d, keep, drop, &new_seq),
        RuleId::StarR => contract_star_r(d, keep, drop, &new_seq),
    }
}

/// The principal of a one-formula left rule lives inside the dropped copy:
/// invert the mirrored occurrence in the kept copy so the copies agree
/// again, contract, and reapply the rule at the kept copy.
fn contract_leaf_rule_in_dropped_copy(
    d: &Derivation,
    keep: &Position,
    drop: &Position,
    new_seq: &Sequent,
) -> TResult {
    let ant = &d.conclusion.antecedent;
    let p_pos = &d.witness.position;
    let inv_kind = match d.rule {
        RuleId::AndL => InversionKind::AndL,
        RuleId::StarL => InversionKind::StarL,
        RuleId::OrL => InversionKind::OrL,
        _ => unreachable!(),
    };
    let rel = Position::relativize(drop, p_pos).unwrap();
    let mirror = keep.compose(&rel);
    let mut branches = Vec::with_capacity(d.premises.len());
    for (k, prem) in d.premises.iter().enumerate() {
        let own_repl = inversion_replacement(ant, inv_kind, p_pos, k)?
            .ok_or_else(|| shape("left rule with a deleting replacement"))?;
        let in_prem = |p: &Position| -> Result<Position, TransformError> {
            translate_through(ant, p_pos, Some(&own_repl), p)
                .map_err(|_| lost())?
                .ok_or(lost())
        };
        let mirror_in_prem = in_prem(&mirror)?;
        let inv = invert_at(prem, inv_kind, &mirror_in_prem, k)?;
        // re-address the copies in the inverted premise
        let prem_ant = &prem.conclusion.antecedent;
        let inv_repl = inversion_replacement(prem_ant, inv_kind, &mirror_in_prem, k)?;
        let re_addr = |p: &Position| -> Result<Position, TransformError> {
            let q = in_prem(p)?;
            translate_through(prem_ant, &mirror_in_prem, inv_repl.as_ref(), &q)
                .map_err(|_| lost())?
                .ok_or(lost())
        };
        let keep2 = re_addr(keep)?;
        let drop2 = re_addr(drop)?;
        branches.push(contract_rec(&inv, &keep2, &drop2)?);
    }
    // the reapplied rule acts at the kept copy's mirror, re-addressed
    // through the deletion of the dropped copy
    let new_p_pos = translate_through(ant, drop, None, &mirror)
        .map_err(|_| lost())?
        .ok_or(lost())?;
    finish(d.rule, new_seq.clone(), StepWitness::at(new_p_pos), branches)
}

fn contract_impl(d: &Derivation, keep: &Position, drop: &Position, new_seq: &Sequent) -> TResult {
    let ant = &d.conclusion.antecedent;
    let rho = &d.witness.position;
    let geo = impl_geometry(d)?;

    if drop.contains(&geo.site) {
        return contract_impl_in_dropped_copy(d, keep, drop, new_seq, &geo);
    }

    // a root partially overlapping the contraction layer is first enlarged
    // to the full layer (the prover's maximal-root move; premise 2 does not
    // change, premise 1 is weakened by the missing components)
    let overlap = (rho.contains(keep) != rho.contains(drop))
        || (!rho.contains(keep) && partial_layer_overlap(rho, keep, drop));
    if overlap && d.rule == RuleId::ImpL {
        let widened = widen_impl_root(d, &geo)?;
        return contract_rec(&widened, keep, drop);
    }
    if overlap {
        return Err(shape("contraction pair straddles a --*L root"));
    }

    let (keep2, drop2) = {
        let tr = into_premise2(d, &geo, &[keep, drop])?;
        (tr[0].clone(), tr[1].clone())
    };
    let p2 = contract_rec(&d.premises[1], &keep2, &drop2)?;
    let p1 = if rho.contains(keep) && rho.contains(drop) && d.rule == RuleId::ImpL {
        let rk = Position::relativize(rho, keep).unwrap();
        let rd = Position::relativize(rho, drop).unwrap();
        contract_rec(&d.premises[0], &rk, &rd)?
    } else {
        d.premises[0].clone()
    };

    let rho2 = translate_through(ant, drop, None, rho)
        .map_err(|_| lost())?
        .ok_or_else(|| shape("essence root lost in contraction"))?;
    let group_changed = geo.site.contains(keep) && !rho.contains(keep);
    let witness = rebuilt_impl_witness(d, &new_seq.antecedent, rho2, &geo.phi, group_changed)?;

    // --*L: the candidate may already fit the contracted group, or the
    // duplicate sits inside one pair component and is contracted there
    if d.rule == RuleId::WandL {
        if let (Some((re_i, re_j)), Some(gp2)) =
            (d.witness.candidate.clone(), witness.gamma_prime.clone())
        {
            let pair_ok = |a: &Bunch, b: &Bunch| {
                is_candidate_pair(&CandidatePair::new(a.clone(), b.clone()).canonical(), &gp2)
            };
            if pair_ok(&re_i, &re_j) {
                return finish(d.rule, new_seq.clone(), witness, vec![p1, p2]);
            }
            let value = sub_at(ant, keep).map_err(|_| lost())?;
            for (idx, re) in [&re_i, &re_j].into_iter().enumerate() {
                for layer_pos in positions(re) {
                    let Ok(layer) = sub_at(re, &layer_pos) else { continue };
                    if !matches!(layer, Bunch::Add(_)) {
                        continue;
                    }
                    let Some((ka, dr)) = find_pair_in_layer(&layer, &layer_pos, &value) else {
                        continue;
                    };
                    let Ok(contracted_re) = replace_at(re, &dr, None) else { continue };
                    let (a, b) = if idx == 0 {
                        (contracted_re.clone(), re_j.clone())
                    } else {
                        (re_i.clone(), contracted_re)
                    };
                    if !pair_ok(&a, &b) {
                        continue;
                    }
                    if idx == 0 {
                        let Ok(p1c) = contract_rec(&p1, &ka, &dr) else { continue };
                        let w = StepWitness { candidate: Some((a, b)), ..witness.clone() };
                        if let Ok(n) = finish(d.rule, new_seq.clone(), w, vec![p1c, p2.clone()]) {
                            return Ok(n);
                        }
                    }
                    // contracting inside Re_j would also have to be mirrored
                    // at its copy in premise 2; not needed by the proof
                }
            }
            return Err(shape("could not rebuild --*L after contraction"));
        }
    }
    finish(d.rule, new_seq.clone(), witness, vec![p1, p2])
}

/// True if `rho` is a selection of the same layer as the pair, overlapping
/// it only partially.
fn partial_layer_overlap(rho: &Position, keep: &Position, drop: &Position) -> bool {
    let layer = |p: &Position| p.steps.split_last().map(|(_, pre)| pre.to_vec());
    layer(rho).is_some()
        && layer(rho) == layer(keep)
        && layer(rho) == layer(drop)
        && (rho.contains(keep) || rho.contains(drop))
}

/// Rewrites an `->L` node to use the full additive layer as its essence
/// root: premise 1 is weakened by the missing components, premise 2 and the
/// conclusion are unchanged.
fn widen_impl_root(d: &Derivation, geo: &ImplGeometry) -> TResult {
    let ant = &d.conclusion.antecedent;
    let rho = &d.witness.position;
    let (last, prefix) = rho.steps.split_last().ok_or_else(|| shape("root is already maximal"))?;
    let layer_pos = Position { steps: prefix.to_vec() };
    let layer = sub_at(ant, &layer_pos).map_err(|_| lost())?;
    if layer.kind() != Some(LayerKind::Add) {
        return Err(shape("cannot widen a root that is not part of an additive layer"));
    }
    let selected: Vec<usize> = match last {
        Step::Child(i) => vec![*i],
        Step::Select(s) => s.clone(),
        Step::SelectM(_) => return Err(shape("cannot widen a multiplicative selection")),
    };
    let missing: Vec<Bunch> = layer
        .children()
        .iter()
        .enumerate()
        .filter(|(j, _)| !selected.contains(j))
        .map(|(_, c)| c.clone())
        .collect();
    if missing.is_empty() {
        return Err(shape("root is already the full layer"));
    }
    let missing_b = mk_add_or_single(missing);
    let p1 = weaken_derivation(&d.premises[0], &Position::root(), &missing_b)?;
    let core = exposing_core(&layer, &geo.phi)
        .ok_or_else(|| shape("widened root does not expose the principal"))?;
    finish(
        RuleId::ImpL,
        d.conclusion.clone(),
        StepWitness { position: layer_pos, essence_core: Some(core), ..Default::default() },
        vec![p1, d.premises[1].clone()],
    )
}

fn mk_add_or_single(mut parts: Vec<Bunch>) -> Bunch {
    if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        mk_add(parts)
    }
}

/// The whole rule action happens inside the dropped copy: the premise-2
/// rewrite is an additive graft, so weaken the kept copy's mirror the same
/// way, contract the (now equal) copies, and reapply the rule at the mirror.
fn contract_impl_in_dropped_copy(
    d: &Derivation,
    keep: &Position,
    drop: &Position,
    new_seq: &Sequent,
    geo: &ImplGeometry,
) -> TResult {
    let ant = &d.conclusion.antecedent;
    let rel_site = Position::relativize(drop, &geo.site).unwrap();
    let mirror_site = keep.compose(&rel_site);

    let tr = into_premise2(d, geo, &[keep, drop, &mirror_site])?;
    let (keep_p2, drop_p2, mirror_p2) = (tr[0].clone(), tr[1].clone(), tr[2].clone());
    let p2w = weaken_derivation(&d.premises[1], &mirror_p2, &geo.added)?;

    // after the weakening the copies agree; re-address them through it
    let p2ant = &d.premises[1].conclusion.antecedent;
    let re_addr = |p: &Position| -> Result<Position, TransformError> {
        let (_, _, tr) =
            graft_tracking(p2ant, &mirror_p2, &geo.added, LayerKind::Add, &[p])
                .map_err(|_| lost())?;
        tr.into_iter().next().flatten().ok_or(lost())
    };
    let keep_w = re_addr(&keep_p2)?;
    let drop_w = re_addr(&drop_p2)?;
    let contracted = contract_rec(&p2w, &keep_w, &drop_w)?;

    // reapply at the mirror, re-addressed through the deletion
    let rel_rho = Position::relativize(drop, &d.witness.position).unwrap();
    let mirror_rho = keep.compose(&rel_rho);
    let rho2 = translate_through(ant, drop, None, &mirror_rho)
        .map_err(|_| lost())?
        .ok_or(lost())?;
    let witness = rebuilt_impl_witness(d, &new_seq.antecedent, rho2, &geo.phi, true)?;
    finish(d.rule, new_seq.clone(), witness, vec![d.premises[0].clone(), contracted])
}

/// Contraction through `*R`: the pair either survives against the contracted
/// antecedent, or the duplicated material sits inside one premise and is
/// contracted there.
fn contract_star_r(
    d: &Derivation,
    keep: &Position,
    _drop: &Position,
    new_seq: &Sequent,
) -> TResult {
    let ant = &d.conclusion.antecedent;
    let new_ant = &new_seq.antecedent;
    let Some((re_i, re_j)) = d.witness.candidate.clone() else {
        return Err(shape("missing *R candidate"));
    };
    let value = sub_at(ant, keep).map_err(|_| lost())?;
    let pair_ok = |a: &Bunch, b: &Bunch| {
        is_candidate_pair(&CandidatePair::new(a.clone(), b.clone()).canonical(), new_ant)
    };
    if pair_ok(&re_i, &re_j) {
        return finish(RuleId::StarR, new_seq.clone(), d.witness.clone(), d.premises.to_vec());
    }
    for (idx, re) in [&re_i, &re_j].into_iter().enumerate() {
        for layer_pos in positions(re) {
            let Ok(layer) = sub_at(re, &layer_pos) else { continue };
            if !matches!(layer, Bunch::Add(_)) {
                continue;
            }
            let Some((ka, dr)) = find_pair_in_layer(&layer, &layer_pos, &value) else { continue };
            let Ok(contracted_re) = replace_at(re, &dr, None) else { continue };
            let (a, b) = if idx == 0 {
                (contracted_re.clone(), re_j.clone())
            } else {
                (re_i.clone(), contracted_re)
            };
            if !pair_ok(&a, &b) {
                continue;
            }
            let Ok(contracted) = contract_rec(&d.premises[idx], &ka, &dr) else { continue };
            let (p1, p2) = if idx == 0 {
                (contracted, d.premises[1].clone())
            } else {
                (d.premises[0].clone(), contracted)
            };
            return finish(
                RuleId::StarR,
                new_seq.clone(),
                StepWitness { candidate: Some((a, b)), ..Default::default() },
                vec![p1, p2],
            );
        }
    }
    Err(shape("could not rebuild *R after contraction"))
}

/// Two disjoint selections of `layer` (at `layer_pos`) both holding `value`.
pub(crate) fn find_pair_in_layer(
    layer: &Bunch,
    layer_pos: &Position,
    value: &Bunch,
) -> Option<(Position, Position)> {
    let cs = layer.children();
    let comps: Vec<Bunch> = match value {
        Bunch::Add(xs) => xs.clone(),
        other => vec![other.clone()],
    };
    let mut used: Vec<usize> = Vec::new();
    let pick = |comps: &[Bunch], used: &mut Vec<usize>| -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(comps.len());
        for w in comps {
            let idx = cs.iter().enumerate().find_map(|(j, c)| {
                if !used.contains(&j) && c == w {
                    Some(j)
                } else {
                    None
                }
            })?;
            used.push(idx);
            out.push(idx);
        }
        Some(out)
    };
    let first = pick(&comps, &mut used)?;
    let second = pick(&comps, &mut used)?;
    let mk = |mut idxs: Vec<usize>| -> Position {
        idxs.sort_unstable();
        if idxs.len() == 1 {
            layer_pos.clone().child(idxs[0])
        } else {
            layer_pos.clone().select(idxs)
        }
    };
    Some((mk(first), mk(second)))
}
