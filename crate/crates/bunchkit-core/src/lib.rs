//! bunchkit: proof search, proof checking, and proof transformation for
//! propositional BI (the logic of bunched implications).
//!
//! The crate implements two sequent calculi over bunched antecedents:
//!
//! * [`lbi`] — the reference calculus with explicit structural rules
//!   (weakening, contraction, the bidirectional unit equivalences) and `Cut`;
//! * [`lbiz`] — a calculus with no structural rules at all, where their
//!   effect is absorbed into the logical rules through *essences* (padding
//!   with the multiplicative unit) and *candidates* (resource splits up to
//!   weakening).
//!
//! On top of the calculi, [`metatheory`] turns the admissibility results
//! (weakening, EA2, the unit equivalences, inversion, contraction) into
//! executable derivation transformers, and implements cut elimination for
//! LBIZ extended with `Cut`.
//!
//! All antecedents are kept in an AC-canonical form ([`bunch::Bunch`]), so
//! equality up to associativity and commutativity of the structural
//! connectives is plain structural equality.

pub mod bunch;
pub mod formula;
pub mod lbi;
pub mod lbiz;
pub mod metatheory;
pub mod relations;

pub use bunch::{Bunch, Position, Sequent};
pub use formula::Formula;
