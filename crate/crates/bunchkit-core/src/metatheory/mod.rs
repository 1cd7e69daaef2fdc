//! Executable metatheory for LBIZ: the admissible structural rules as
//! derivation transformers (weakening, EA2, the unit equivalences,
//! inversion, contraction), cut measures and cut elimination for LBIZ
//! extended with `Cut`, plus corpus generation and the cross-calculus
//! equivalence harness.
//!
//! Every transformer takes a checked derivation and returns a checked
//! derivation of the transformed sequent without increasing the derivation
//! depth; the proofs these functions implement are exercised as assertions
//! rather than trusted on paper.

mod corpus;
mod cut;
mod transform;

pub use corpus::{
    axiom_closes, compose_star, connective_coverage, derivable_corpus, equivalence_budgets,
    run_admissibility, run_cutelim, run_equivalence, run_equivalence_seq, run_soundness,
    sample_sequents, AdmissibilityReport, CutelimReport, EquivalenceReport, EquivalenceRow,
    SampleParams, SoundnessReport, Verdict,
};
pub use cut::{
    check_cut_derivation, cut_depth, cut_derivation_from_json, cut_derivation_to_json, cut_node,
    cut_measures, eliminate_cuts, eliminate_cuts_traced, from_cut_free, is_cut_free,
    CutDerivation, CutMeasures, CutRule, CutTrace,
};
pub use transform::{
    contract_derivation, ea2_derivation, eqant_derivation, invert_derivation, try_axiom,
    weaken_derivation, EqAntDirection, InversionKind, TransformError,
};
