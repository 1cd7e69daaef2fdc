//! AC-canonical bunches, occurrence positions, and sequents.
//!
//! A bunch is the antecedent tree of a BI sequent, built from formulas with
//! the additive connective `;` and the multiplicative connective `,`, both
//! fully associative and commutative. Canonical form flattens nested layers
//! of the same connective and sorts children under a fixed total order, so
//! equality up to AC is structural equality.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::formula::{print_formula, Formula, ParseError, Parser, Token};

/// An AC-canonical bunch.
///
/// Invariants (enforced by the smart constructors and `normalize`):
/// * no `Add` child is itself `Add`, no `Mult` child is itself `Mult`;
/// * every layer has at least two children;
/// * children are sorted under the canonical order.
///
/// Duplicate children are kept: multiplicity is semantically significant.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Bunch {
    Leaf(Formula),
    Add(Vec<Bunch>),
    Mult(Vec<Bunch>),
}

/// Equality up to associativity and commutativity. On canonical bunches this
/// is structural identity.
pub fn ac_equal(a: &Bunch, b: &Bunch) -> bool {
    a == b
}

/// An uncanonicalized bunch tree, as produced by a parser or built by hand.
#[derive(Clone, Debug)]
pub enum RawBunch {
    Leaf(Formula),
    Semi(Vec<RawBunch>),
    Comma(Vec<RawBunch>),
}

/// Flattens, collapses single-child layers, and sorts. Idempotent.
pub fn normalize(raw: &RawBunch) -> Bunch {
    match raw {
        RawBunch::Leaf(f) => Bunch::Leaf(f.clone()),
        RawBunch::Semi(items) => mk_add(items.iter().map(normalize).collect()),
        RawBunch::Comma(items) => mk_mult(items.iter().map(normalize).collect()),
    }
}

/// Builds a canonical additive layer from already-canonical parts.
/// A single part collapses to itself; an empty list is not allowed.
pub fn mk_add(parts: Vec<Bunch>) -> Bunch {
    mk_layer(parts, LayerKind::Add)
}

/// Builds a canonical multiplicative layer from already-canonical parts.
pub fn mk_mult(parts: Vec<Bunch>) -> Bunch {
    mk_layer(parts, LayerKind::Mult)
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum LayerKind {
    Add,
    Mult,
}

fn mk_layer(parts: Vec<Bunch>, kind: LayerKind) -> Bunch {
    assert!(!parts.is_empty(), "bunch layers cannot be empty");
    let mut out: Vec<Bunch> = Vec::with_capacity(parts.len());
    for p in parts {
        match (kind, p) {
            (LayerKind::Add, Bunch::Add(cs)) => out.extend(cs),
            (LayerKind::Mult, Bunch::Mult(cs)) => out.extend(cs),
            (_, other) => out.push(other),
        }
    }
    if out.len() == 1 {
        return out.pop().unwrap();
    }
    out.sort();
    match kind {
        LayerKind::Add => Bunch::Add(out),
        LayerKind::Mult => Bunch::Mult(out),
    }
}

impl Bunch {
    pub fn leaf(f: Formula) -> Bunch {
        Bunch::Leaf(f)
    }

    pub fn atom(name: &str) -> Bunch {
        Bunch::Leaf(Formula::atom(name))
    }

    pub fn mtop() -> Bunch {
        Bunch::Leaf(Formula::MTop)
    }

    pub fn kind(&self) -> Option<LayerKind> {
        match self {
            Bunch::Leaf(_) => None,
            Bunch::Add(_) => Some(LayerKind::Add),
            Bunch::Mult(_) => Some(LayerKind::Mult),
        }
    }

    pub fn children(&self) -> &[Bunch] {
        match self {
            Bunch::Leaf(_) => &[],
            Bunch::Add(cs) | Bunch::Mult(cs) => cs,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Bunch::Leaf(_) => 1,
            Bunch::Add(cs) | Bunch::Mult(cs) => cs.iter().map(Bunch::leaf_count).sum(),
        }
    }

    /// Multiset of formula leaves, sorted.
    pub fn leaves(&self) -> Vec<Formula> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out.sort();
        out
    }

    fn collect_leaves(&self, out: &mut Vec<Formula>) {
        match self {
            Bunch::Leaf(f) => out.push(f.clone()),
            Bunch::Add(cs) | Bunch::Mult(cs) => {
                for c in cs {
                    c.collect_leaves(out);
                }
            }
        }
    }

    pub fn contains_leaf(&self, f: &Formula) -> bool {
        match self {
            Bunch::Leaf(g) => g == f,
            Bunch::Add(cs) | Bunch::Mult(cs) => cs.iter().any(|c| c.contains_leaf(f)),
        }
    }

    /// Checks the canonical-form invariants by traversal.
    pub fn is_canonical(&self) -> bool {
        match self {
            Bunch::Leaf(_) => true,
            Bunch::Add(cs) => {
                cs.len() >= 2
                    && cs.windows(2).all(|w| w[0] <= w[1])
                    && cs.iter().all(|c| !matches!(c, Bunch::Add(_)) && c.is_canonical())
            }
            Bunch::Mult(cs) => {
                cs.len() >= 2
                    && cs.windows(2).all(|w| w[0] <= w[1])
                    && cs.iter().all(|c| !matches!(c, Bunch::Mult(_)) && c.is_canonical())
            }
        }
    }
}

fn kind_rank(b: &Bunch) -> u8 {
    match b {
        Bunch::Leaf(_) => 0,
        Bunch::Add(_) => 1,
        Bunch::Mult(_) => 2,
    }
}

impl Ord for Bunch {
    /// Total order: by kind, then leaves by rendered formula text, then
    /// layers lexicographically over their (already sorted) children.
    fn cmp(&self, other: &Self) -> Ordering {
        kind_rank(self).cmp(&kind_rank(other)).then_with(|| match (self, other) {
            (Bunch::Leaf(a), Bunch::Leaf(b)) => print_formula(a).cmp(&print_formula(b)),
            (Bunch::Add(a), Bunch::Add(b)) | (Bunch::Mult(a), Bunch::Mult(b)) => a.cmp(b),
            _ => unreachable!(),
        })
    }
}

impl PartialOrd for Bunch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Bunch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_bunch(self))
    }
}

impl fmt::Debug for Bunch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_bunch(self))
    }
}

/// Canonical text rendering: `;`/`,` layers with parentheses around nested
/// layers, formula leaves bare.
pub fn print_bunch(b: &Bunch) -> String {
    let mut s = String::new();
    write_bunch(&mut s, b, false);
    s
}

fn write_bunch(out: &mut String, b: &Bunch, nested: bool) {
    match b {
        Bunch::Leaf(f) => out.push_str(&print_formula(f)),
        Bunch::Add(cs) | Bunch::Mult(cs) => {
            let sep = if matches!(b, Bunch::Add(_)) { "; " } else { ", " };
            if nested {
                out.push('(');
            }
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                write_bunch(out, c, true);
            }
            if nested {
                out.push(')');
            }
        }
    }
}

/// A sequent `antecedent |- consequent`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Sequent {
    pub antecedent: Bunch,
    pub consequent: Formula,
}

impl Sequent {
    pub fn new(antecedent: Bunch, consequent: Formula) -> Sequent {
        Sequent { antecedent, consequent }
    }
}

impl fmt::Display for Sequent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} |- {}", print_bunch(&self.antecedent), print_formula(&self.consequent))
    }
}

impl fmt::Debug for Sequent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Parses `<bunch> |- <formula>`; the antecedent is normalized.
pub fn parse_sequent(text: &str) -> Result<Sequent, ParseError> {
    let mut p = Parser::new(text);
    let ant = parse_bunch_level(&mut p)?;
    let off = p.offset();
    match p.next_token()? {
        Some(Token::Turnstile) => {}
        _ => return Err(ParseError::new_at(off, "expected `|-`")),
    }
    let consequent = p.formula()?;
    p.expect_end()?;
    Ok(Sequent { antecedent: ant, consequent })
}

/// Parses a bunch on its own (used for witness fields in derivation files).
pub fn parse_bunch(text: &str) -> Result<Bunch, ParseError> {
    let mut p = Parser::new(text);
    let b = parse_bunch_level(&mut p)?;
    p.expect_end()?;
    Ok(b)
}

impl ParseError {
    pub(crate) fn new_at(offset: usize, message: impl Into<String>) -> ParseError {
        ParseError { offset, message: message.into() }
    }
}

/// One level of `;`- or `,`-separated items. Mixing the two separators at a
/// single level without parentheses is rejected.
fn parse_bunch_level(p: &mut Parser) -> Result<Bunch, ParseError> {
    let mut items = vec![parse_bunch_item(p)?];
    let mut sep: Option<Token> = None;
    loop {
        let off = p.offset();
        match p.peek()? {
            Some(t @ (Token::Semi | Token::Comma)) => {
                match &sep {
                    None => sep = Some(t.clone()),
                    Some(prev) if *prev == t => {}
                    Some(_) => {
                        return Err(ParseError::new_at(
                            off,
                            "cannot mix `;` and `,` at one level; parenthesize",
                        ))
                    }
                }
                p.next_token()?;
                items.push(parse_bunch_item(p)?);
            }
            _ => break,
        }
    }
    Ok(match sep {
        None => items.pop().unwrap(),
        Some(Token::Semi) => mk_add(items),
        Some(Token::Comma) => mk_mult(items),
        Some(_) => unreachable!(),
    })
}

/// A bunch item: either a parenthesized sub-bunch or a formula. A
/// parenthesized group that contains `;`/`,` is a sub-bunch and cannot be
/// used as a formula operand.
fn parse_bunch_item(p: &mut Parser) -> Result<Bunch, ParseError> {
    let off = p.offset();
    if matches!(p.peek()?, Some(Token::LParen)) {
        // Look ahead: parse the group, then decide by its shape.
        p.next_token()?;
        let inner = parse_bunch_level(p)?;
        let off2 = p.offset();
        match p.next_token()? {
            Some(Token::RParen) => {}
            _ => return Err(ParseError::new_at(off2, "expected `)`")),
        }
        match inner {
            Bunch::Leaf(f) => {
                // The parens wrapped a formula: binary connectives may follow.
                let full = p.formula_continue(f, off)?;
                Ok(Bunch::Leaf(full))
            }
            layered => {
                if matches!(p.peek()?, Some(Token::Op(_))) {
                    let off3 = p.offset();
                    return Err(ParseError::new_at(
                        off3,
                        "a `;`/`,` group cannot be a formula operand",
                    ));
                }
                Ok(layered)
            }
        }
    } else {
        Ok(Bunch::Leaf(p.formula()?))
    }
}

impl Parser<'_> {
    /// Continues formula parsing after an already-parsed primary.
    ///
    /// Re-parses from `start` with the primary substituted; used when a
    /// parenthesized group turned out to be a formula rather than a bunch.
    fn formula_continue(&mut self, primary: Formula, _start: usize) -> Result<Formula, ParseError> {
        // If no operator follows, the primary stands alone.
        if !matches!(self.peek()?, Some(Token::Op(_))) {
            return Ok(primary);
        }
        self.formula_with_first(primary)
    }
}

/// One step of a position path.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Step {
    /// Descend into the i-th child (canonical order) of the current layer.
    Child(usize),
    /// Select a proper sub-multiset (at least two, not all) of the children
    /// of the current additive layer. Always the final step.
    Select(Vec<usize>),
    /// Select a proper sub-multiset of the children of the current
    /// multiplicative layer. Always the final step. Not produced by
    /// [`positions`]; it exists so that rewrites of whole `,`-groups (cut
    /// and weakening replay) stay addressable.
    SelectM(Vec<usize>),
}

impl Step {
    fn selection(&self) -> Option<(LayerKind, &[usize])> {
        match self {
            Step::Child(_) => None,
            Step::Select(s) => Some((LayerKind::Add, s)),
            Step::SelectM(s) => Some((LayerKind::Mult, s)),
        }
    }
}

/// A path identifying one sub-bunch occurrence, including partial additive
/// selections (a hole covering several components of one `;`-layer).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Position {
    pub steps: Vec<Step>,
}

impl Default for Position {
    fn default() -> Position {
        Position::root()
    }
}

impl Position {
    pub fn root() -> Position {
        Position { steps: Vec::new() }
    }

    pub fn is_root(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn child(mut self, i: usize) -> Position {
        self.steps.push(Step::Child(i));
        self
    }

    pub fn select(mut self, mut idxs: Vec<usize>) -> Position {
        idxs.sort_unstable();
        self.steps.push(Step::Select(idxs));
        self
    }

    pub fn select_mult(mut self, mut idxs: Vec<usize>) -> Position {
        idxs.sort_unstable();
        self.steps.push(Step::SelectM(idxs));
        self
    }

    /// Concatenation; `self` must not end in a selection.
    pub fn join(&self, rel: &Position) -> Position {
        debug_assert!(!matches!(self.steps.last(), Some(Step::Select(_))) || rel.is_root());
        let mut steps = self.steps.clone();
        steps.extend(rel.steps.iter().cloned());
        Position { steps }
    }

    /// The position of `inner` relative to the occurrence at `base`
    /// (`sub_at(b, base)` viewed as its own bunch). `None` when `inner` is
    /// not inside `base`. Selections compose by index rank: a selection of a
    /// sorted layer preserves the relative order of the chosen children.
    pub fn relativize(base: &Position, inner: &Position) -> Option<Position> {
        if !base.contains(inner) {
            return None;
        }
        match base.steps.split_last() {
            Some((Step::Select(sel), prefix)) | Some((Step::SelectM(sel), prefix)) => {
                let rest = &inner.steps[prefix.len()..];
                match rest.split_first() {
                    None => Some(Position::root()),
                    Some((Step::Child(i), deeper)) => {
                        let rank = sel.iter().position(|x| x == i)?;
                        let mut steps = vec![Step::Child(rank)];
                        steps.extend_from_slice(deeper);
                        Some(Position { steps })
                    }
                    Some((Step::Select(t), _)) | Some((Step::SelectM(t), _)) => {
                        let additive = matches!(rest[0], Step::Select(_));
                        let ranks: Option<Vec<usize>> =
                            t.iter().map(|i| sel.iter().position(|x| x == i)).collect();
                        let ranks = ranks?;
                        if ranks.len() == sel.len() {
                            return Some(Position::root());
                        }
                        Some(if additive {
                            Position::root().select(ranks)
                        } else {
                            Position::root().select_mult(ranks)
                        })
                    }
                }
            }
            _ => Some(Position { steps: inner.steps[base.steps.len()..].to_vec() }),
        }
    }

    /// Inverse of [`Position::relativize`]: re-anchors a position relative
    /// to the occurrence at `self` back into the surrounding bunch.
    pub fn compose(&self, rel: &Position) -> Position {
        if rel.is_root() {
            return self.clone();
        }
        match self.steps.split_last() {
            Some((Step::Select(sel), prefix)) | Some((Step::SelectM(sel), prefix)) => {
                let mut steps = prefix.to_vec();
                match rel.steps.split_first() {
                    Some((Step::Child(k), deeper)) => {
                        steps.push(Step::Child(sel[*k]));
                        steps.extend_from_slice(deeper);
                    }
                    Some((Step::Select(t), _)) => {
                        steps.push(Step::Select(t.iter().map(|k| sel[*k]).collect()));
                    }
                    Some((Step::SelectM(t), _)) => {
                        steps.push(Step::SelectM(t.iter().map(|k| sel[*k]).collect()));
                    }
                    None => unreachable!(),
                }
                Position { steps }
            }
            _ => self.join(rel),
        }
    }

    /// True if `other` lies inside the occurrence denoted by `self`.
    pub fn contains(&self, other: &Position) -> bool {
        if self.steps.len() > other.steps.len() {
            return false;
        }
        let (head, _) = other.steps.split_at(self.steps.len());
        if self.steps.is_empty() {
            return true;
        }
        let n = self.steps.len();
        if self.steps[..n - 1] != head[..n - 1] {
            return false;
        }
        let covers = |sel: &[usize], step: &Step| match step {
            Step::Child(i) => sel.contains(i),
            Step::Select(t) | Step::SelectM(t) => t.iter().all(|i| sel.contains(i)),
        };
        match (&self.steps[n - 1], &head[n - 1]) {
            (a, b) if a == b => true,
            (Step::Select(s), step) => {
                // a selection covers deeper paths through its members and
                // smaller selections of the same layer (only at the last step)
                if self.steps.len() == other.steps.len() || matches!(step, Step::Child(_)) {
                    covers(s, step)
                } else {
                    matches!(step, Step::Child(i) if s.contains(i))
                }
            }
            (Step::SelectM(s), step) => {
                if self.steps.len() == other.steps.len() || matches!(step, Step::Child(_)) {
                    covers(s, step)
                } else {
                    matches!(step, Step::Child(i) if s.contains(i))
                }
            }
            _ => false,
        }
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@")?;
        if self.steps.is_empty() {
            return write!(f, "root");
        }
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            match s {
                Step::Child(c) => write!(f, "{c}")?,
                Step::Select(sel) | Step::SelectM(sel) => {
                    write!(f, "{}", if matches!(s, Step::Select(_)) { "s" } else { "m" })?;
                    for (j, x) in sel.iter().enumerate() {
                        if j > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{x}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BunchError {
    #[error("invalid position for this bunch")]
    InvalidPosition,
    #[error("deleting the entire bunch is not allowed")]
    EmptyResult,
}

/// The sub-bunch occurrence at `pos`. A partial selection yields the
/// additive layer of the selected children.
pub fn sub_at(b: &Bunch, pos: &Position) -> Result<Bunch, BunchError> {
    let mut cur = b;
    for (k, step) in pos.steps.iter().enumerate() {
        match step {
            Step::Child(i) => {
                cur = cur.children().get(*i).ok_or(BunchError::InvalidPosition)?;
            }
            Step::Select(_) | Step::SelectM(_) => {
                let (kind, sel) = step.selection().unwrap();
                if k + 1 != pos.steps.len() || cur.kind() != Some(kind) {
                    return Err(BunchError::InvalidPosition);
                }
                let cs = cur.children();
                if sel.len() < 2 || sel.len() >= cs.len() {
                    return Err(BunchError::InvalidPosition);
                }
                let mut parts = Vec::with_capacity(sel.len());
                for i in sel {
                    parts.push(cs.get(*i).ok_or(BunchError::InvalidPosition)?.clone());
                }
                return Ok(mk_layer(parts, kind));
            }
        }
    }
    Ok(cur.clone())
}

/// Replaces the occurrence at `pos` with `sub`, or deletes it when `sub` is
/// `None`, collapsing layers as needed. The result is canonical.
pub fn replace_at(b: &Bunch, pos: &Position, sub: Option<&Bunch>) -> Result<Bunch, BunchError> {
    replace_rec(b, &pos.steps, sub)?.ok_or(BunchError::EmptyResult)
}

fn replace_rec(b: &Bunch, steps: &[Step], sub: Option<&Bunch>) -> Result<Option<Bunch>, BunchError> {
    let Some((step, rest)) = steps.split_first() else {
        return Ok(sub.cloned());
    };
    match step {
        Step::Child(i) => {
            let cs = b.children();
            if *i >= cs.len() {
                return Err(BunchError::InvalidPosition);
            }
            let new_child = replace_rec(&cs[*i], rest, sub)?;
            let mut parts: Vec<Bunch> = Vec::with_capacity(cs.len());
            for (j, c) in cs.iter().enumerate() {
                if j == *i {
                    if let Some(nc) = &new_child {
                        parts.push(nc.clone());
                    }
                } else {
                    parts.push(c.clone());
                }
            }
            if parts.is_empty() {
                return Ok(None);
            }
            Ok(Some(match b.kind() {
                Some(LayerKind::Add) => mk_add(parts),
                Some(LayerKind::Mult) => mk_mult(parts),
                None => unreachable!(),
            }))
        }
        Step::Select(_) | Step::SelectM(_) => {
            let (kind, sel) = step.selection().unwrap();
            if !rest.is_empty() || b.kind() != Some(kind) {
                return Err(BunchError::InvalidPosition);
            }
            let cs = b.children();
            if sel.len() < 2 || sel.len() >= cs.len() || sel.iter().any(|i| *i >= cs.len()) {
                return Err(BunchError::InvalidPosition);
            }
            let mut parts: Vec<Bunch> = Vec::new();
            for (j, c) in cs.iter().enumerate() {
                if !sel.contains(&j) {
                    parts.push(c.clone());
                }
            }
            if let Some(s) = sub {
                parts.push(s.clone());
            }
            if parts.is_empty() {
                return Ok(None);
            }
            Ok(Some(mk_layer(parts, kind)))
        }
    }
}

/// Enumerates every sub-bunch occurrence of `b` in a deterministic order:
/// the root, then for each layer its children (recursively), then the
/// partial additive selections of each `;`-layer.
pub fn positions(b: &Bunch) -> Vec<Position> {
    let mut out = Vec::new();
    walk_positions(b, Position::root(), &mut out);
    out
}

fn walk_positions(b: &Bunch, here: Position, out: &mut Vec<Position>) {
    out.push(here.clone());
    let cs = b.children();
    for (i, c) in cs.iter().enumerate() {
        walk_positions(c, here.clone().child(i), out);
    }
    if matches!(b, Bunch::Add(_)) && cs.len() >= 3 {
        // proper sub-multisets of size 2..n-1, in bitmask order
        let n = cs.len();
        for mask in 1u32..(1 << n) - 1 {
            let k = mask.count_ones() as usize;
            if k < 2 || k >= n {
                continue;
            }
            let sel: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            out.push(here.clone().select(sel));
        }
    }
}

/// Positions of all formula leaves, paired with the formulas.
pub fn leaf_positions(b: &Bunch) -> Vec<(Position, Formula)> {
    let mut out = Vec::new();
    fn walk(b: &Bunch, here: Position, out: &mut Vec<(Position, Formula)>) {
        match b {
            Bunch::Leaf(f) => out.push((here, f.clone())),
            Bunch::Add(cs) | Bunch::Mult(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    walk(c, here.clone().child(i), out);
                }
            }
        }
    }
    walk(b, Position::root(), &mut out);
    out
}

// ---------------------------------------------------------------------------
// Position translation through rewriting.
//
// Rewrites reshuffle layers (sorting, flattening, collapsing), so a position
// into the old tree must be re-addressed in the new one. Translation is
// value-directed: equal siblings are interchangeable, so any slot holding the
// right value is a correct answer.
// ---------------------------------------------------------------------------

/// Translates `pi` through `replace_at(b, rho, sub)`.
///
/// Returns the position in the rewritten bunch denoting the same occurrence,
/// or `None` when the occurrence was consumed by the rewrite (it lay inside
/// the replaced part) or is no longer expressible as a single occurrence.
/// When `pi` contains `rho`, the translated position addresses the rewritten
/// occurrence (same place, new value inside).
pub fn translate_through(
    b: &Bunch,
    rho: &Position,
    sub: Option<&Bunch>,
    pi: &Position,
) -> Result<Option<Position>, BunchError> {
    let (_, tr) = tr_rec(b, &rho.steps, sub, &pi.steps)?;
    Ok(tr.map(|steps| Position { steps }))
}

/// Re-sorted index of `value` among `parts` (first match), used after a
/// layer rebuild. `skip` marks indices already claimed.
fn find_value(parts: &[Bunch], value: &Bunch, skip: &mut Vec<usize>) -> Option<usize> {
    for (i, p) in parts.iter().enumerate() {
        if !skip.contains(&i) && p == value {
            skip.push(i);
            return Some(i);
        }
    }
    None
}

/// Core of translation: returns the rewritten subtree (None = deleted) and
/// the translated steps relative to it.
fn tr_rec(
    b: &Bunch,
    rho: &[Step],
    sub: Option<&Bunch>,
    pi: &[Step],
) -> Result<(Option<Bunch>, Option<Vec<Step>>), BunchError> {
    if rho.is_empty() {
        // Whole subtree replaced. The tracked occurrence survives only if it
        // is exactly this subtree.
        let new = sub.cloned();
        let tr = if pi.is_empty() && new.is_some() { Some(Vec::new()) } else { None };
        return Ok((new, tr));
    }
    if pi.is_empty() {
        let new = replace_rec(b, rho, sub)?;
        let tr = new.as_ref().map(|_| Vec::new());
        return Ok((new, tr));
    }
    let cs = b.children();
    if cs.is_empty() {
        return Err(BunchError::InvalidPosition);
    }
    let kind = b.kind().unwrap();
    match (&rho[0], &pi[0]) {
        (Step::Child(ri), Step::Child(pi0)) if ri == pi0 => {
            let (child, sub_tr) = tr_rec(&cs[*ri], &rho[1..], sub, &pi[1..])?;
            let new = rebuild_layer(cs, *ri, child.as_ref(), kind);
            let Some(new) = new else { return Ok((None, None)) };
            let Some(sub_tr) = sub_tr else { return Ok((Some(new), None)) };
            let tr = reanchor(&new, child.as_ref().unwrap(), sub_tr, kind);
            Ok((Some(new), tr))
        }
        (Step::Child(ri), Step::Child(pi0)) => {
            let child = replace_rec(&cs[*ri], &rho[1..], sub)?;
            let new = rebuild_layer(cs, *ri, child.as_ref(), kind);
            let Some(new) = new else { return Ok((None, None)) };
            // Locate the untouched sibling by value in the rebuilt layer.
            let value = &cs[*pi0];
            match &new {
                Bunch::Leaf(_) => {
                    // layer collapsed to the tracked sibling itself
                    if new == *value {
                        Ok((Some(new), Some(pi[1..].to_vec())))
                    } else {
                        Ok((Some(new), None))
                    }
                }
                layer if layer.kind() == Some(kind) => {
                    let mut skip = Vec::new();
                    match find_value(layer.children(), value, &mut skip) {
                        Some(idx) => {
                            let mut steps = vec![Step::Child(idx)];
                            steps.extend_from_slice(&pi[1..]);
                            Ok((Some(new), Some(steps)))
                        }
                        None => Ok((Some(new), None)),
                    }
                }
                collapsed => {
                    // collapsed to a single child (deletion left one sibling)
                    if collapsed == value {
                        Ok((Some(new), Some(pi[1..].to_vec())))
                    } else {
                        Ok((Some(new), None))
                    }
                }
            }
        }
        (Step::Child(ri), psel_step) if psel_step.selection().is_some() => {
            let (pkind, psel) = psel_step.selection().unwrap();
            if pi.len() != 1 || kind != pkind {
                return Err(BunchError::InvalidPosition);
            }
            let child = replace_rec(&cs[*ri], &rho[1..], sub)?;
            let new = rebuild_layer(cs, *ri, child.as_ref(), kind);
            let Some(new) = new else { return Ok((None, None)) };
            // Wanted values: untouched members keep their value; a selected
            // modified member contributes its rewritten value (or vanishes).
            let mut wanted: Vec<Bunch> = Vec::new();
            for i in psel {
                if i == ri {
                    match &child {
                        None => {}
                        Some(c) if c.kind() == Some(kind) => {
                            wanted.extend(c.children().iter().cloned())
                        }
                        Some(c) => wanted.push(c.clone()),
                    }
                } else {
                    wanted.push(cs[*i].clone());
                }
            }
            if wanted.is_empty() {
                return Ok((Some(new), None));
            }
            let tr = select_values(&new, &wanted, kind);
            Ok((Some(new), tr))
        }
        (rsel_step, Step::Child(pi0)) if rsel_step.selection().is_some() => {
            let (rkind, rsel) = rsel_step.selection().unwrap();
            if rho.len() != 1 || kind != rkind {
                return Err(BunchError::InvalidPosition);
            }
            if rsel.contains(pi0) {
                let new = replace_rec(b, rho, sub)?;
                return Ok((new, None));
            }
            let new = replace_rec(b, rho, sub)?;
            let Some(new) = new else { return Ok((None, None)) };
            let value = &cs[*pi0];
            match &new {
                layer if layer.kind() == Some(kind) => {
                    let mut skip = Vec::new();
                    match find_value(layer.children(), value, &mut skip) {
                        Some(idx) => {
                            let mut steps = vec![Step::Child(idx)];
                            steps.extend_from_slice(&pi[1..]);
                            Ok((Some(new), Some(steps)))
                        }
                        None => Ok((Some(new), None)),
                    }
                }
                collapsed => {
                    if collapsed == value {
                        Ok((Some(new), Some(pi[1..].to_vec())))
                    } else {
                        Ok((Some(new), None))
                    }
                }
            }
        }
        (rsel_step, psel_step) => {
            let (rkind, rsel) =
                rsel_step.selection().ok_or(BunchError::InvalidPosition)?;
            let (pkind, psel) =
                psel_step.selection().ok_or(BunchError::InvalidPosition)?;
            if rho.len() != 1 || pi.len() != 1 || kind != rkind || kind != pkind {
                return Err(BunchError::InvalidPosition);
            }
            let survivors: Vec<&usize> = psel.iter().filter(|i| !rsel.contains(i)).collect();
            if survivors.is_empty() {
                let new = replace_rec(b, rho, sub)?;
                return Ok((new, None));
            }
            let new = replace_rec(b, rho, sub)?;
            let Some(new) = new else { return Ok((None, None)) };
            let wanted: Vec<Bunch> = survivors.iter().map(|i| cs[**i].clone()).collect();
            let tr = select_values(&new, &wanted, kind);
            Ok((Some(new), tr))
        }
    }
}

/// Rebuilds a layer after child `i` was rewritten to `child` (None = gone).
fn rebuild_layer(cs: &[Bunch], i: usize, child: Option<&Bunch>, kind: LayerKind) -> Option<Bunch> {
    let mut parts: Vec<Bunch> = Vec::with_capacity(cs.len());
    for (j, c) in cs.iter().enumerate() {
        if j == i {
            if let Some(nc) = child {
                parts.push(nc.clone());
            }
        } else {
            parts.push(c.clone());
        }
    }
    if parts.is_empty() {
        return None;
    }
    Some(match kind {
        LayerKind::Add => mk_add(parts),
        LayerKind::Mult => mk_mult(parts),
    })
}

/// Re-anchors a translated sub-path after the modified child was merged back
/// into a rebuilt layer (it may have flattened into it or the layer may have
/// collapsed onto it).
fn reanchor(new: &Bunch, child: &Bunch, sub_tr: Vec<Step>, kind: LayerKind) -> Option<Vec<Step>> {
    if new == child {
        // layer collapsed onto the rewritten child
        return Some(sub_tr);
    }
    if new.kind() != Some(kind) {
        return None;
    }
    let layer = new.children();
    if child.kind() == Some(kind) {
        // flattened: the child's components are spread through the layer
        let comps = child.children();
        match sub_tr.split_first() {
            None => select_values(new, comps, kind),
            Some((Step::Child(j), rest)) => {
                let mut skip = Vec::new();
                let idx = find_value(layer, &comps[*j], &mut skip)?;
                let mut steps = vec![Step::Child(idx)];
                steps.extend_from_slice(rest);
                Some(steps)
            }
            Some((sel_step, _)) => {
                let (_, sel) = sel_step.selection()?;
                let wanted: Vec<Bunch> = sel.iter().map(|j| comps[*j].clone()).collect();
                select_values(new, &wanted, kind)
            }
        }
    } else {
        // the child sits whole in the rebuilt layer
        let mut skip = Vec::new();
        let idx = find_value(layer, child, &mut skip)?;
        let mut steps = vec![Step::Child(idx)];
        steps.extend(sub_tr);
        Some(steps)
    }
}

/// Expresses a multiset of child values of `layer` as a position step:
/// a single child, a proper selection, or the whole layer (root).
fn select_values(layer: &Bunch, wanted: &[Bunch], kind: LayerKind) -> Option<Vec<Step>> {
    let cs = layer.children();
    let mut skip = Vec::new();
    let mut idxs = Vec::with_capacity(wanted.len());
    for w in wanted {
        idxs.push(find_value(cs, w, &mut skip)?);
    }
    idxs.sort_unstable();
    if idxs.len() == cs.len() {
        return Some(Vec::new());
    }
    if idxs.len() == 1 {
        return Some(vec![Step::Child(idxs[0])]);
    }
    Some(vec![match kind {
        LayerKind::Add => Step::Select(idxs),
        LayerKind::Mult => Step::SelectM(idxs),
    }])
}

/// Weakening graft: rewrites the occurrence `X` at `pos` to `X; extra`.
/// Returns the new bunch and the position of the original occurrence inside
/// it (the layer gained `extra` as an additive sibling).
pub fn graft_add(
    b: &Bunch,
    pos: &Position,
    extra: &Bunch,
) -> Result<(Bunch, Position), BunchError> {
    let x = sub_at(b, pos)?;
    let grafted = mk_add(vec![x.clone(), extra.clone()]);
    let new = replace_at(b, pos, Some(&grafted))?;
    let tracked = track_into_graft(b, pos, &grafted, &x)?;
    Ok((new, tracked))
}

/// Padding graft: rewrites the occurrence `X` at `pos` to `X, extra`.
pub fn graft_mult(
    b: &Bunch,
    pos: &Position,
    extra: &Bunch,
) -> Result<(Bunch, Position), BunchError> {
    let x = sub_at(b, pos)?;
    let grafted = mk_mult(vec![x.clone(), extra.clone()]);
    let new = replace_at(b, pos, Some(&grafted))?;
    let tracked = track_into_graft(b, pos, &grafted, &x)?;
    Ok((new, tracked))
}

/// A graft together with position tracking: rewrites the occurrence `X` at
/// `pos` to `X; extra` (or `X, extra`), returning the new bunch, the
/// position of `X` inside it, and the translations of `tracked` positions.
/// Tracked positions inside `pos` are re-anchored through the graft site.
pub fn graft_tracking(
    b: &Bunch,
    pos: &Position,
    extra: &Bunch,
    kind: LayerKind,
    tracked: &[&Position],
) -> Result<(Bunch, Position, Vec<Option<Position>>), BunchError> {
    let x = sub_at(b, pos)?;
    let grafted = match kind {
        LayerKind::Add => mk_add(vec![x.clone(), extra.clone()]),
        LayerKind::Mult => mk_mult(vec![x.clone(), extra.clone()]),
    };
    let new = replace_at(b, pos, Some(&grafted))?;
    let site = track_into_graft(b, pos, &grafted, &x)?;
    let mut out = Vec::with_capacity(tracked.len());
    for pi in tracked {
        if pos.contains(pi) {
            let rel = Position::relativize(pos, pi).unwrap();
            out.push(Some(site.compose(&rel)));
        } else {
            out.push(translate_through(b, pos, Some(&grafted), pi)?);
        }
    }
    Ok((new, site, out))
}

/// Position of `inner` (a component of `grafted`) after `replace_at(b, pos,
/// grafted)`, accounting for flattening at the graft site.
fn track_into_graft(
    b: &Bunch,
    pos: &Position,
    grafted: &Bunch,
    inner: &Bunch,
) -> Result<Position, BunchError> {
    // Position of the graft itself in the new tree.
    let graft_pos = translate_through(b, pos, Some(grafted), pos)?
        .ok_or(BunchError::InvalidPosition)?;
    let new = replace_at(b, pos, Some(grafted))?;
    let site = sub_at(&new, &graft_pos)?;
    // Find `inner` within the graft site.
    if site == *inner {
        return Ok(graft_pos);
    }
    let cs = site.children();
    let wanted: Vec<Bunch> = if inner.kind() == site.kind() {
        inner.children().to_vec()
    } else {
        vec![inner.clone()]
    };
    let mut skip = Vec::new();
    let mut idxs = Vec::new();
    for w in &wanted {
        idxs.push(find_value(cs, w, &mut skip).ok_or(BunchError::InvalidPosition)?);
    }
    idxs.sort_unstable();
    if let Some((kind, sel)) = graft_pos.steps.last().and_then(Step::selection) {
        // graft site itself is a selection: compose selections at that layer
        let mapped: Vec<usize> = idxs.iter().map(|i| sel[*i]).collect();
        let p = Position { steps: graft_pos.steps[..graft_pos.steps.len() - 1].to_vec() };
        if mapped.len() == 1 {
            return Ok(p.child(mapped[0]));
        }
        return Ok(match kind {
            LayerKind::Add => p.select(mapped),
            LayerKind::Mult => p.select_mult(mapped),
        });
    }
    if idxs.len() == 1 {
        Ok(graft_pos.child(idxs[0]))
    } else if idxs.len() == cs.len() {
        Ok(graft_pos)
    } else if matches!(site, Bunch::Add(_)) {
        Ok(graft_pos.select(idxs))
    } else {
        Ok(graft_pos.select_mult(idxs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;

    fn b(s: &str) -> Bunch {
        parse_bunch(s).unwrap()
    }

    #[test]
    fn normalize_flattens_and_sorts() {
        assert_eq!(b("p; (q; r)"), b("(p; q); r"));
        assert_eq!(b("(p, q), r"), b("p, (q, r)"));
        assert_eq!(b("q; p"), b("p; q"));
        assert_eq!(b("p, (q; r)"), b("(r; q), p"));
        assert_ne!(b("p, q"), b("p; q"));
        assert!(b("p; (q, (r; s)); t").is_canonical());
    }

    #[test]
    fn duplicates_are_kept() {
        let pp = b("p; p");
        assert_eq!(pp.children().len(), 2);
        assert_ne!(pp, b("p"));
    }

    #[test]
    fn sequent_parsing() {
        let s = parse_sequent("p, q |- p * q").unwrap();
        assert_eq!(s.antecedent, b("p, q"));
        assert_eq!(s.consequent, parse_formula("p * q").unwrap());
        assert!(parse_sequent("p ; q , r |- p").is_err());
        let s2 = parse_sequent("(emp; p1), (emp; p1 -> p2) |- p2").unwrap();
        assert_eq!(s2.antecedent.children().len(), 2);
        // formula parens still work as operands
        let s3 = parse_sequent("(p -> q) /\\ r, s |- p").unwrap();
        assert_eq!(s3.antecedent, b("s, ((p -> q) /\\ r)"));
    }

    #[test]
    fn positions_of_small_bunches() {
        assert_eq!(positions(&b("p")).len(), 1);
        let two = positions(&b("p; q"));
        assert_eq!(two.len(), 3); // root, p, q
        let three = positions(&b("p; q; r"));
        // root, 3 children, 3 two-element selections
        assert_eq!(three.len(), 7);
        let mult = positions(&b("p, q, r"));
        assert_eq!(mult.len(), 4); // no selections on `,`-layers
    }

    #[test]
    fn replace_and_delete() {
        let base = b("p; q");
        let qpos = positions(&base)
            .into_iter()
            .find(|p| sub_at(&base, p).unwrap() == b("q"))
            .unwrap();
        assert_eq!(replace_at(&base, &qpos, Some(&b("r"))).unwrap(), b("p; r"));

        let base2 = b("p, (emp; q)");
        let pos = positions(&base2)
            .into_iter()
            .find(|p| sub_at(&base2, p).unwrap() == b("emp; q"))
            .unwrap();
        assert_eq!(replace_at(&base2, &pos, None).unwrap(), b("p"));

        let base3 = b("p; q; r");
        let sel = positions(&base3)
            .into_iter()
            .find(|p| sub_at(&base3, p).unwrap() == b("p; q"))
            .unwrap();
        assert_eq!(replace_at(&base3, &sel, Some(&b("s"))).unwrap(), b("r; s"));
        assert!(replace_at(&base3, &Position::root(), None).is_err());
    }

    #[test]
    fn replace_identity() {
        for s in ["p", "p; q", "p, (q; r)", "(p, q); r; s", "p, p, (q; q)"] {
            let base = b(s);
            for pos in positions(&base) {
                let sub = sub_at(&base, &pos).unwrap();
                assert_eq!(replace_at(&base, &pos, Some(&sub)).unwrap(), base, "at {pos:?} in {s}");
            }
        }
    }

    #[test]
    fn graft_tracks_position() {
        let base = b("p, q");
        let ppos = positions(&base)
            .into_iter()
            .find(|p| sub_at(&base, p).unwrap() == b("p"))
            .unwrap();
        let (new, tracked) = graft_add(&base, &ppos, &b("r")).unwrap();
        assert_eq!(new, b("(p; r), q"));
        assert_eq!(sub_at(&new, &tracked).unwrap(), b("p"));

        // grafting into an additive parent flattens
        let base2 = b("p; q");
        let ppos2 = positions(&base2)
            .into_iter()
            .find(|p| sub_at(&base2, p).unwrap() == b("p"))
            .unwrap();
        let (new2, tracked2) = graft_add(&base2, &ppos2, &b("r")).unwrap();
        assert_eq!(new2, b("p; q; r"));
        assert_eq!(sub_at(&new2, &tracked2).unwrap(), b("p"));

        let (new3, tracked3) = graft_mult(&base2, &Position::root(), &b("emp; s")).unwrap();
        assert_eq!(new3, b("(p; q), (emp; s)"));
        assert_eq!(sub_at(&new3, &tracked3).unwrap(), b("p; q"));
    }

    #[test]
    fn translate_disjoint_positions() {
        let base = b("p; q; r");
        let rpos = positions(&base)
            .into_iter()
            .find(|p| sub_at(&base, p).unwrap() == b("r"))
            .unwrap();
        let qpos = positions(&base)
            .into_iter()
            .find(|p| sub_at(&base, p).unwrap() == b("q"))
            .unwrap();
        // delete r; q must still be addressable
        let tq = translate_through(&base, &rpos, None, &qpos).unwrap().unwrap();
        let new = replace_at(&base, &rpos, None).unwrap();
        assert_eq!(sub_at(&new, &tq).unwrap(), b("q"));
        // replace r with a big additive chunk; selection {p,q} must survive
        let sel = positions(&base)
            .into_iter()
            .find(|p| sub_at(&base, p).unwrap() == b("p; q"))
            .unwrap();
        let tsel = translate_through(&base, &rpos, Some(&b("x; y")), &sel).unwrap().unwrap();
        let new2 = replace_at(&base, &rpos, Some(&b("x; y"))).unwrap();
        assert_eq!(sub_at(&new2, &tsel).unwrap(), b("p; q"));
    }

    #[test]
    fn position_containment() {
        let base = b("p; q; r");
        let all = positions(&base);
        let root = Position::root();
        for p in &all {
            assert!(root.contains(p));
        }
        let sel_pq = all.iter().find(|p| sub_at(&base, p).unwrap() == b("p; q")).unwrap();
        let ppos = all.iter().find(|p| sub_at(&base, p).unwrap() == b("p")).unwrap();
        let rpos = all.iter().find(|p| sub_at(&base, p).unwrap() == b("r")).unwrap();
        assert!(sel_pq.contains(ppos));
        assert!(!sel_pq.contains(rpos));
        assert!(!ppos.contains(sel_pq));
    }
}
