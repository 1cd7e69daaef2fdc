//! Corpus generation, the cross-calculus equivalence harness, and the
//! property suites for the admissibility transformers and cut elimination.
//!
//! Corpus runs are data-parallel per sequent. With the `parallel` feature
//! (the default) they run on a rayon pool — capped by the `BUNCHKIT_THREADS`
//! environment variable — and fall back to a plain sequential loop without
//! it. Reports are assembled in input order either way, so a fixed seed
//! yields byte-identical output.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bunch::{
    leaf_positions, mk_add, mk_mult, positions, sub_at, Bunch, LayerKind, Position, RawBunch,
    Sequent,
};
use crate::formula::Formula;
use crate::lbi::{lbi_check_derivation, lbi_prove, LbiResult};
use crate::lbiz::{
    check_derivation, derivation_depth, prove, Budget, Derivation, ProveResult, RefutationMode,
    RuleId, StepWitness,
};
use crate::relations::is_candidate_pair;

use super::cut::{
    cut_node, eliminate_cuts_traced, from_cut_free, is_cut_free, CutDerivation,
};
use super::transform::{
    contract_derivation, ea2_derivation, invert_derivation, try_axiom, weaken_derivation,
    InversionKind,
};

/// Parameters of the random sequent sampler.
#[derive(Clone, Copy, Debug)]
pub struct SampleParams {
    pub max_formula_size: usize,
    pub atoms: usize,
    pub count: usize,
}

/// Deterministic random sequents: same seed, same list. Formulas cover all
/// connectives; antecedents are random bunches of one to four leaves.
pub fn sample_sequents(seed: u64, params: &SampleParams) -> Vec<Sequent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..params.count).map(|_| random_sequent(&mut rng, params)).collect()
}

fn random_atom(rng: &mut ChaCha8Rng, params: &SampleParams) -> Formula {
    let i = rng.gen_range(0..params.atoms.max(1));
    Formula::atom(&format!("p{}", i + 1))
}

fn random_formula(rng: &mut ChaCha8Rng, params: &SampleParams, budget: usize) -> Formula {
    if budget <= 1 {
        return match rng.gen_range(0..6) {
            0 => Formula::Top,
            1 => Formula::MTop,
            2 => Formula::Bot,
            _ => random_atom(rng, params),
        };
    }
    match rng.gen_range(0..8) {
        0 => random_atom(rng, params),
        1 => Formula::MTop,
        k => {
            let left = rng.gen_range(1..budget.max(2));
            let l = random_formula(rng, params, left);
            let r = random_formula(rng, params, budget - left);
            match k {
                2 => Formula::and(l, r),
                3 => Formula::or(l, r),
                4 => Formula::imp(l, r),
                5 => Formula::star(l, r),
                _ => Formula::wand(l, r),
            }
        }
    }
}

fn random_bunch(rng: &mut ChaCha8Rng, params: &SampleParams, leaves: usize) -> RawBunch {
    if leaves <= 1 {
        return RawBunch::Leaf(random_formula(rng, params, params.max_formula_size));
    }
    let split = rng.gen_range(1..leaves);
    let l = random_bunch(rng, params, split);
    let r = random_bunch(rng, params, leaves - split);
    if rng.gen_bool(0.5) {
        RawBunch::Semi(vec![l, r])
    } else {
        RawBunch::Comma(vec![l, r])
    }
}

fn random_sequent(rng: &mut ChaCha8Rng, params: &SampleParams) -> Sequent {
    let leaves = rng.gen_range(1..=4);
    let ant = crate::bunch::normalize(&random_bunch(rng, params, leaves));
    let goal = random_formula(rng, params, params.max_formula_size);
    Sequent::new(ant, goal)
}

/// Maps `items` in order, in parallel when the feature is enabled.
fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = thread_pool();
        pool.install(|| items.into_par_iter().map(f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Sequential twin of [`map_ordered`], kept unconditionally so the two code
/// paths can be compared (see the corpus benchmark).
pub fn map_ordered_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("BUNCHKIT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder.build().expect("rayon pool")
}

/// A per-sequent verdict.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Verdict {
    Proved,
    Refuted,
    RefutedPruned,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Proved => "proved",
            Verdict::Refuted => "refuted",
            Verdict::RefutedPruned => "refuted_pruned",
            Verdict::Unknown => "unknown",
        }
    }

    pub fn settled(self) -> bool {
        !matches!(self, Verdict::Unknown)
    }
}

fn lbiz_verdict(r: &ProveResult) -> Verdict {
    match r {
        ProveResult::Proved(_) => Verdict::Proved,
        ProveResult::Refuted(RefutationMode::Exhausted) => Verdict::Refuted,
        ProveResult::Refuted(RefutationMode::ExhaustedWithPruning) => Verdict::RefutedPruned,
        ProveResult::Unknown => Verdict::Unknown,
    }
}

#[derive(Clone, Debug)]
pub struct EquivalenceRow {
    pub sequent: String,
    pub lbiz: Verdict,
    pub lbi: Verdict,
    pub lbiz_depth: Option<usize>,
}

#[derive(Debug, Default)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    /// settled verdicts that contradict each other
    pub disagreements: usize,
}

impl EquivalenceReport {
    pub fn settled_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        let settled = self.rows.iter().filter(|r| r.lbiz.settled()).count();
        settled as f64 / self.rows.len() as f64
    }

    /// One JSON document per row, in corpus order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let mut v = serde_json::json!({
                "sequent": row.sequent,
                "lbiz": row.lbiz.as_str(),
                "lbi": row.lbi.as_str(),
            });
            if let Some(d) = row.lbiz_depth {
                v["lbiz_depth"] = serde_json::json!(d);
            }
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

/// Runs both provers over the corpus and tabulates the verdicts. An LBI
/// `Unknown` against anything is recorded, not failed; a settled
/// contradiction counts as a disagreement.
pub fn run_equivalence(
    corpus: &[Sequent],
    lbiz_budget: Budget,
    lbi_budget: Budget,
) -> EquivalenceReport {
    let rows = map_ordered(corpus.to_vec(), |seq| equivalence_row(&seq, lbiz_budget, lbi_budget));
    let disagreements = rows
        .iter()
        .filter(|r| {
            (matches!(r.lbiz, Verdict::Refuted | Verdict::RefutedPruned)
                && r.lbi == Verdict::Proved)
        })
        .count();
    EquivalenceReport { rows, disagreements }
}

/// Sequential variant with identical output, for the benchmark comparison.
pub fn run_equivalence_seq(
    corpus: &[Sequent],
    lbiz_budget: Budget,
    lbi_budget: Budget,
) -> EquivalenceReport {
    let rows =
        map_ordered_seq(corpus.to_vec(), |seq| equivalence_row(&seq, lbiz_budget, lbi_budget));
    let disagreements = rows
        .iter()
        .filter(|r| {
            matches!(r.lbiz, Verdict::Refuted | Verdict::RefutedPruned)
                && r.lbi == Verdict::Proved
        })
        .count();
    EquivalenceReport { rows, disagreements }
}

fn equivalence_row(seq: &Sequent, lbiz_budget: Budget, lbi_budget: Budget) -> EquivalenceRow {
    let z = prove(seq, lbiz_budget);
    let depth = match &z {
        ProveResult::Proved(d) => Some(derivation_depth(d)),
        _ => None,
    };
    let lbi = match lbi_prove(seq, lbi_budget, &[]) {
        LbiResult::Proved(_) => Verdict::Proved,
        LbiResult::Unknown => Verdict::Unknown,
    };
    EquivalenceRow {
        sequent: seq.to_string(),
        lbiz: lbiz_verdict(&z),
        lbi,
        lbiz_depth: depth,
    }
}

/// A pool of checked LBIZ derivations: proofs found by the prover over the
/// sampled corpus, extended by forward composition (`*R`, `∧R`, `∨R`) and
/// transformer-built variants to reduce prover bias.
pub fn derivable_corpus(seed: u64, want: usize, budget: Budget) -> Vec<Derivation> {
    let params = SampleParams { max_formula_size: 5, atoms: 3, count: want * 6 };
    let sequents = sample_sequents(seed, &params);
    let proved: Vec<Derivation> = map_ordered(sequents, |s| match prove(&s, budget) {
        ProveResult::Proved(d) => Some(*d),
        _ => None,
    })
    .into_iter()
    .flatten()
    .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut pool: Vec<Derivation> = proved;
    let mut i = 0;
    while pool.len() < want && i < want * 4 && !pool.is_empty() {
        i += 1;
        let a = pool[rng.gen_range(0..pool.len())].clone();
        match rng.gen_range(0..4) {
            0 => {
                // A |- F and B |- G compose into A, B |- F * G
                let b = pool[rng.gen_range(0..pool.len())].clone();
                let ant = mk_mult(vec![
                    a.conclusion.antecedent.clone(),
                    b.conclusion.antecedent.clone(),
                ]);
                let goal = Formula::star(
                    a.conclusion.consequent.clone(),
                    b.conclusion.consequent.clone(),
                );
                let node = Derivation {
                    rule: RuleId::StarR,
                    conclusion: Sequent::new(ant, goal),
                    witness: StepWitness {
                        candidate: Some((
                            a.conclusion.antecedent.clone(),
                            b.conclusion.antecedent.clone(),
                        )),
                        ..Default::default()
                    },
                    premises: vec![a, b],
                };
                if check_derivation(&node).is_ok() {
                    pool.push(node);
                }
            }
            1 => {
                // A |- F extends to A |- F /\ top
                let top = Derivation::axiom(
                    RuleId::TopR,
                    Sequent::new(a.conclusion.antecedent.clone(), Formula::Top),
                    StepWitness::default(),
                );
                let goal = Formula::and(a.conclusion.consequent.clone(), Formula::Top);
                let node = Derivation {
                    rule: RuleId::AndR,
                    conclusion: Sequent::new(a.conclusion.antecedent.clone(), goal),
                    witness: StepWitness::default(),
                    premises: vec![a, top],
                };
                if check_derivation(&node).is_ok() {
                    pool.push(node);
                }
            }
            2 => {
                // A |- F extends to A |- F \/ G
                let g = random_formula(
                    &mut rng,
                    &SampleParams { max_formula_size: 3, atoms: 3, count: 0 },
                    3,
                );
                let goal = Formula::or(a.conclusion.consequent.clone(), g);
                let node = Derivation {
                    rule: RuleId::OrR(1),
                    conclusion: Sequent::new(a.conclusion.antecedent.clone(), goal),
                    witness: StepWitness::default(),
                    premises: vec![a],
                };
                if check_derivation(&node).is_ok() {
                    pool.push(node);
                }
            }
            _ => {
                // a weakened or padded variant
                let ps = positions(&a.conclusion.antecedent);
                let pos = ps[rng.gen_range(0..ps.len())].clone();
                let extra = Bunch::Leaf(random_atom(
                    &mut rng,
                    &SampleParams { max_formula_size: 1, atoms: 3, count: 0 },
                ));
                let out = if rng.gen_bool(0.5) {
                    weaken_derivation(&a, &pos, &extra)
                } else {
                    ea2_derivation(&a, &pos, Some(&extra))
                };
                if let Ok(d) = out {
                    if check_derivation(&d).is_ok() {
                        pool.push(d);
                    }
                }
            }
        }
    }
    pool.truncate(want);
    pool
}

#[derive(Debug, Default)]
pub struct AdmissibilityReport {
    pub derivations: usize,
    pub invocations: usize,
    pub failures: Vec<String>,
    pub depth_violations: usize,
}

/// Applies every applicable transformer invocation to each derivation and
/// checks the outputs and the depth bound.
pub fn run_admissibility(seed: u64, count: usize, budget: Budget) -> AdmissibilityReport {
    let pool = derivable_corpus(seed, count, budget);
    let results = map_ordered(pool.clone(), |d| check_one_derivation(&d));
    let mut report = AdmissibilityReport { derivations: pool.len(), ..Default::default() };
    for (inv, fails, depth_bad) in results {
        report.invocations += inv;
        report.failures.extend(fails);
        report.depth_violations += depth_bad;
    }
    report
}

fn check_one_derivation(d: &Derivation) -> (usize, Vec<String>, usize) {
    let mut invocations = 0usize;
    let mut failures = Vec::new();
    let mut depth_bad = 0usize;
    let base_depth = derivation_depth(d);
    let ant = &d.conclusion.antecedent;
    let extra = Bunch::atom("w9");

    let mut take = |label: String, out: Result<Derivation, super::transform::TransformError>| {
        invocations += 1;
        match out {
            Ok(t) => {
                if let Err(e) = check_derivation(&t) {
                    failures.push(format!("{label}: output fails the checker: {e}"));
                }
                if derivation_depth(&t) > base_depth {
                    depth_bad += 1;
                    failures.push(format!("{label}: depth increased"));
                }
            }
            Err(e) => failures.push(format!("{label}: {e}")),
        }
    };

    for pos in positions(ant) {
        take(
            format!("weaken {} at {pos:?}", d.conclusion),
            weaken_derivation(d, &pos, &extra),
        );
        take(format!("ea2 {} at {pos:?}", d.conclusion), ea2_derivation(d, &pos, Some(&extra)));
    }
    // inversions at applicable sites
    for (pos, f) in leaf_positions(ant) {
        let kind = match f {
            Formula::And(_, _) => Some(InversionKind::AndL),
            Formula::Or(_, _) => Some(InversionKind::OrL),
            Formula::Star(_, _) => Some(InversionKind::StarL),
            Formula::Top => Some(InversionKind::TopErase),
            Formula::MTop => Some(InversionKind::MTopErase),
            _ => None,
        };
        let Some(kind) = kind else { continue };
        if matches!(kind, InversionKind::TopErase | InversionKind::MTopErase)
            && !erasable(ant, &pos, kind)
        {
            continue;
        }
        invocations += 1;
        match invert_derivation(d, kind, &pos) {
            Ok(outs) => {
                for t in outs {
                    if let Err(e) = check_derivation(&t) {
                        failures
                            .push(format!("invert {kind:?} {}: checker: {e}", d.conclusion));
                    }
                    if derivation_depth(&t) > base_depth {
                        depth_bad += 1;
                        failures.push(format!("invert {kind:?} {}: depth", d.conclusion));
                    }
                }
            }
            Err(e) => failures.push(format!("invert {kind:?} {}: {e}", d.conclusion)),
        }
    }
    for kind in [InversionKind::AndR, InversionKind::ImpR, InversionKind::WandR] {
        let applies = matches!(
            (kind, &d.conclusion.consequent),
            (InversionKind::AndR, Formula::And(_, _))
                | (InversionKind::ImpR, Formula::Imp(_, _))
                | (InversionKind::WandR, Formula::Wand(_, _))
        );
        if !applies {
            continue;
        }
        invocations += 1;
        match invert_derivation(d, kind, &Position::root()) {
            Ok(outs) => {
                for t in outs {
                    if let Err(e) = check_derivation(&t) {
                        failures.push(format!("invert {kind:?} {}: checker: {e}", d.conclusion));
                    }
                    if derivation_depth(&t) > base_depth {
                        depth_bad += 1;
                        failures.push(format!("invert {kind:?} {}: depth", d.conclusion));
                    }
                }
            }
            Err(e) => failures.push(format!("invert {kind:?} {}: {e}", d.conclusion)),
        }
    }
    // contraction at duplicated additive siblings
    for (keep, drop) in contraction_sites(ant) {
        take(
            format!("contract {} at {keep:?}/{drop:?}", d.conclusion),
            contract_derivation(d, &keep, &drop),
        );
    }
    (invocations, failures, depth_bad)
}

fn erasable(ant: &Bunch, pos: &Position, kind: InversionKind) -> bool {
    use crate::bunch::Step;
    let want = if kind == InversionKind::TopErase { LayerKind::Add } else { LayerKind::Mult };
    match pos.steps.split_last() {
        Some((Step::Child(_), prefix)) => {
            sub_at(ant, &Position { steps: prefix.to_vec() })
                .map(|p| p.kind() == Some(want))
                .unwrap_or(false)
        }
        _ => false,
    }
}

/// Child-level duplicate pairs in every additive layer.
fn contraction_sites(ant: &Bunch) -> Vec<(Position, Position)> {
    let mut out = Vec::new();
    for pos in positions(ant) {
        let Ok(layer) = sub_at(ant, &pos) else { continue };
        let Bunch::Add(cs) = &layer else { continue };
        if !matches!(pos.steps.last(), None | Some(crate::bunch::Step::Child(_))) {
            continue;
        }
        for i in 0..cs.len() {
            for j in (i + 1)..cs.len() {
                if cs[i] == cs[j] {
                    out.push((pos.clone().child(i), pos.clone().child(j)));
                }
            }
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct CutelimReport {
    pub attempted: usize,
    pub eliminated: usize,
    pub failures: Vec<String>,
    pub measure_violations: usize,
}

/// Builds cut-bearing derivations by composing corpus derivations through
/// `Cut` (cutting into a weakened-in copy of the left conclusion's
/// consequent), eliminates the cuts, and verifies the outputs.
pub fn run_cutelim(seed: u64, count: usize, budget: Budget) -> CutelimReport {
    let pool = derivable_corpus(seed, count.max(32), budget);
    if pool.is_empty() {
        return CutelimReport::default();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc07);
    let mut cases: Vec<CutDerivation> = Vec::new();
    let mut guard = 0;
    while cases.len() < count && guard < count * 20 {
        guard += 1;
        let left = &pool[rng.gen_range(0..pool.len())];
        let right = &pool[rng.gen_range(0..pool.len())];
        let f = left.conclusion.consequent.clone();
        // give the right derivation an F leaf by weakening one in
        let ps = positions(&right.conclusion.antecedent);
        let at = ps[rng.gen_range(0..ps.len())].clone();
        let Ok(weakened) = weaken_derivation(right, &at, &Bunch::Leaf(f.clone())) else {
            continue;
        };
        let Some(fpos) = leaf_positions(&weakened.conclusion.antecedent)
            .into_iter()
            .find(|(_, g)| *g == f)
            .map(|(p, _)| p)
        else {
            continue;
        };
        match cut_node(from_cut_free(left), from_cut_free(&weakened), &fpos) {
            Ok(node) => cases.push(node),
            Err(_) => continue,
        }
    }

    let results = map_ordered(cases, |case| {
        let conclusion = case.conclusion.clone();
        match eliminate_cuts_traced(&case) {
            Ok((out, trace)) => {
                let mut errs = Vec::new();
                if out.conclusion != conclusion {
                    errs.push(format!("conclusion changed: {} -> {}", conclusion, out.conclusion));
                }
                if let Err(e) = check_derivation(&out) {
                    errs.push(format!("output fails the checker: {e}"));
                }
                if !is_cut_free(&from_cut_free(&out)) {
                    errs.push("output still contains a cut".into());
                }
                (true, errs, trace.violations())
            }
            Err(e) => (false, vec![format!("elimination failed on {conclusion}: {e}")], 0),
        }
    });

    let mut report = CutelimReport::default();
    for (ok, errs, viols) in results {
        report.attempted += 1;
        if ok && errs.is_empty() {
            report.eliminated += 1;
        }
        report.failures.extend(errs);
        report.measure_violations += viols;
    }
    report
}

#[derive(Debug, Default)]
pub struct SoundnessReport {
    pub calls: usize,
    pub proved: usize,
    pub checker_failures: Vec<String>,
}

/// Random prove calls against both calculi; every `Proved` result must pass
/// the matching checker.
pub fn run_soundness(seed: u64, calls: usize) -> SoundnessReport {
    let params = SampleParams { max_formula_size: 4, atoms: 3, count: calls };
    let sequents = sample_sequents(seed, &params);
    let lbiz_budget = Budget { max_depth: 10, max_nodes: 4_000 };
    let lbi_budget = Budget { max_depth: 6, max_nodes: 1_500 };
    let results = map_ordered(sequents.into_iter().enumerate().collect::<Vec<_>>(), move |(i, s)| {
        if i % 2 == 0 {
            match prove(&s, lbiz_budget) {
                ProveResult::Proved(d) => match check_derivation(&d) {
                    Ok(()) => (true, None),
                    Err(e) => (true, Some(format!("lbiz {s}: {e}"))),
                },
                _ => (false, None),
            }
        } else {
            match lbi_prove(&s, lbi_budget, &[]) {
                LbiResult::Proved(d) => match lbi_check_derivation(&d) {
                    Ok(()) => (true, None),
                    Err(e) => (true, Some(format!("lbi {s}: {e}"))),
                },
                LbiResult::Unknown => (false, None),
            }
        }
    });
    let mut report = SoundnessReport { calls, ..Default::default() };
    for (proved, err) in results {
        if proved {
            report.proved += 1;
        }
        report.checker_failures.extend(err);
    }
    report
}

/// Exercised by tests: a forward-checked `*R` composition helper.
pub fn compose_star(a: &Derivation, b: &Derivation) -> Option<Derivation> {
    let ant = mk_mult(vec![a.conclusion.antecedent.clone(), b.conclusion.antecedent.clone()]);
    let goal = Formula::star(a.conclusion.consequent.clone(), b.conclusion.consequent.clone());
    let pair = (a.conclusion.antecedent.clone(), b.conclusion.antecedent.clone());
    if !is_candidate_pair(
        &crate::relations::CandidatePair::new(pair.0.clone(), pair.1.clone()).canonical(),
        &ant,
    ) {
        return None;
    }
    let node = Derivation {
        rule: RuleId::StarR,
        conclusion: Sequent::new(ant, goal),
        witness: StepWitness { candidate: Some(pair), ..Default::default() },
        premises: vec![a.clone(), b.clone()],
    };
    check_derivation(&node).ok()?;
    Some(node)
}

/// Used by the sampler tests: every connective appears somewhere.
pub fn connective_coverage(sequents: &[Sequent]) -> [bool; 8] {
    let mut seen = [false; 8];
    let mut mark = |f: &Formula| {
        let mut stack = vec![f.clone()];
        while let Some(g) = stack.pop() {
            match g {
                Formula::Atom(_) => seen[0] = true,
                Formula::Top => seen[1] = true,
                Formula::Bot => seen[2] = true,
                Formula::MTop => seen[3] = true,
                Formula::And(a, b) => {
                    seen[4] = true;
                    stack.push(*a);
                    stack.push(*b);
                }
                Formula::Or(a, b) => {
                    seen[5] = true;
                    stack.push(*a);
                    stack.push(*b);
                }
                Formula::Imp(a, b) => {
                    seen[6] = true;
                    stack.push(*a);
                    stack.push(*b);
                }
                Formula::Star(a, b) | Formula::Wand(a, b) => {
                    seen[7] = true;
                    stack.push(*a);
                    stack.push(*b);
                }
            }
        }
    };
    for s in sequents {
        mark(&s.consequent);
        for f in s.antecedent.leaves() {
            mark(&f);
        }
    }
    seen
}

/// Trivial use of [`try_axiom`] kept close to the suites that rely on it.
pub fn axiom_closes(s: &Sequent) -> bool {
    try_axiom(s).is_some()
}

/// The default budgets of the equivalence acceptance run.
pub fn equivalence_budgets() -> (Budget, Budget) {
    (Budget { max_depth: 14, max_nodes: 20_000 }, Budget { max_depth: 7, max_nodes: 4_000 })
}
