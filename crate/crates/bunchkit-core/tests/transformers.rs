//! Transformer behavior on the small worked examples plus a randomized
//! depth-preservation sweep.

use bunchkit_core::bunch::{parse_bunch, parse_sequent, positions, sub_at, Bunch, Position};
use bunchkit_core::lbiz::{check_derivation, derivation_depth, prove, Budget, ProveResult};
use bunchkit_core::metatheory::{
    contract_derivation, ea2_derivation, eqant_derivation, invert_derivation, sample_sequents,
    weaken_derivation, EqAntDirection, InversionKind, SampleParams,
};

fn b(s: &str) -> Bunch {
    parse_bunch(s).unwrap()
}

fn proved(s: &str) -> bunchkit_core::lbiz::Derivation {
    match prove(&parse_sequent(s).unwrap(), Budget::default()) {
        ProveResult::Proved(d) => *d,
        other => panic!("expected proof of {s}, got {other:?}"),
    }
}

/// First position in `hay` holding the given value.
fn pos_of(hay: &Bunch, needle: &str) -> Position {
    let want = b(needle);
    positions(hay)
        .into_iter()
        .find(|p| sub_at(hay, p).ok().as_ref() == Some(&want))
        .unwrap_or_else(|| panic!("no occurrence of {needle} in {hay}"))
}

#[test]
fn weakening_axiom_absorbs() {
    let d = proved("p |- p");
    let out = weaken_derivation(&d, &Position::root(), &b("q")).unwrap();
    assert_eq!(out.conclusion, parse_sequent("p; q |- p").unwrap());
    assert_eq!(derivation_depth(&out), 1);
    check_derivation(&out).unwrap();
}

#[test]
fn weakening_inside_an_essence() {
    // weakening inside the essence root of an ->L step
    let d = proved("p1; ((emp; q), (p1 -> p2)) |- p2");
    let ant = d.conclusion.antecedent.clone();
    let pos = pos_of(&ant, "p1");
    let out = weaken_derivation(&d, &pos, &b("r")).unwrap();
    check_derivation(&out).unwrap();
    assert!(derivation_depth(&out) <= derivation_depth(&d));
    assert_eq!(
        out.conclusion,
        parse_sequent("(p1; r); ((emp; q), (p1 -> p2)) |- p2").unwrap()
    );
}

#[test]
fn ea2_axiom_absorbs() {
    let d = proved("p |- p");
    let out = ea2_derivation(&d, &Position::root(), Some(&b("q"))).unwrap();
    assert_eq!(out.conclusion, parse_sequent("p, (emp; q) |- p").unwrap());
    assert_eq!(derivation_depth(&out), 1);
    check_derivation(&out).unwrap();

    let out2 = ea2_derivation(&d, &Position::root(), None).unwrap();
    assert_eq!(out2.conclusion, parse_sequent("p, emp |- p").unwrap());
    assert_eq!(derivation_depth(&out2), 1);
}

#[test]
fn inversion_of_and_r() {
    let d = proved("p /\\ q |- q /\\ p");
    let outs = invert_derivation(&d, InversionKind::AndR, &Position::root()).unwrap();
    assert_eq!(outs.len(), 2);
    assert_eq!(outs[0].conclusion, parse_sequent("p /\\ q |- q").unwrap());
    assert_eq!(outs[1].conclusion, parse_sequent("p /\\ q |- p").unwrap());
    for o in &outs {
        check_derivation(o).unwrap();
        assert!(derivation_depth(o) <= derivation_depth(&d));
    }
}

#[test]
fn inversion_unit_erasures() {
    let d = proved("p, emp |- p");
    let pos = pos_of(&d.conclusion.antecedent, "emp");
    let outs = invert_derivation(&d, InversionKind::MTopErase, &pos).unwrap();
    assert_eq!(outs[0].conclusion, parse_sequent("p |- p").unwrap());
    check_derivation(&outs[0]).unwrap();

    let d2 = proved("p; top |- p");
    let pos2 = pos_of(&d2.conclusion.antecedent, "top");
    let outs2 = invert_derivation(&d2, InversionKind::TopErase, &pos2).unwrap();
    assert_eq!(outs2[0].conclusion, parse_sequent("p |- p").unwrap());
}

#[test]
fn inversion_of_imp_r() {
    let d = proved("p |- q -> q");
    let outs = invert_derivation(&d, InversionKind::ImpR, &Position::root()).unwrap();
    assert_eq!(outs[0].conclusion, parse_sequent("p; q |- q").unwrap());
    check_derivation(&outs[0]).unwrap();
}

#[test]
fn eqant_all_directions() {
    let d = proved("p; top |- p");
    let pos = pos_of(&d.conclusion.antecedent, "top");
    let out = eqant_derivation(&d, EqAntDirection::RemoveTop, &pos).unwrap();
    assert_eq!(out.conclusion, parse_sequent("p |- p").unwrap());

    let d2 = proved("p |- p");
    let out2 = eqant_derivation(&d2, EqAntDirection::AddTop, &Position::root()).unwrap();
    assert_eq!(out2.conclusion, parse_sequent("p; top |- p").unwrap());
    let out3 = eqant_derivation(&d2, EqAntDirection::AddMTop, &Position::root()).unwrap();
    assert_eq!(out3.conclusion, parse_sequent("p, emp |- p").unwrap());
    let pos4 = pos_of(&out3.conclusion.antecedent, "emp");
    let out4 = eqant_derivation(&out3, EqAntDirection::RemoveMTop, &pos4).unwrap();
    assert_eq!(out4.conclusion, parse_sequent("p |- p").unwrap());
}

#[test]
fn contraction_of_axiom() {
    let d = proved("p; p |- p");
    let ant = d.conclusion.antecedent.clone();
    let keep = Position::root().child(0);
    let drop = Position::root().child(1);
    assert_eq!(sub_at(&ant, &keep).unwrap(), b("p"));
    let out = contract_derivation(&d, &keep, &drop).unwrap();
    assert_eq!(out.conclusion, parse_sequent("p |- p").unwrap());
    assert_eq!(derivation_depth(&out), 1);
}

#[test]
fn contraction_of_observation_redex() {
    let m = "(emp; p1), (emp; p1 -> p2)";
    let doubled = format!("({m}); ({m}) |- p2");
    let d = proved(&doubled);
    let keep = Position::root().child(0);
    let drop = Position::root().child(1);
    assert_eq!(sub_at(&d.conclusion.antecedent, &keep).unwrap(), b(m));
    let out = contract_derivation(&d, &keep, &drop).unwrap();
    assert_eq!(out.conclusion, parse_sequent(&format!("{m} |- p2")).unwrap());
    check_derivation(&out).unwrap();
    assert!(derivation_depth(&out) <= derivation_depth(&d));
}

#[test]
fn randomized_depth_preservation() {
    let params = SampleParams { max_formula_size: 4, atoms: 2, count: 120 };
    let mut checked = 0usize;
    for seq in sample_sequents(11, &params) {
        let ProveResult::Proved(d) = prove(&seq, Budget { max_depth: 10, max_nodes: 20_000 })
        else {
            continue;
        };
        let base_depth = derivation_depth(&d);
        let ant = &d.conclusion.antecedent;
        for pos in positions(ant) {
            let w = weaken_derivation(&d, &pos, &b("w")).unwrap_or_else(|e| {
                panic!("weaken failed on {} at {pos:?}: {e}", d.conclusion)
            });
            check_derivation(&w).unwrap();
            assert!(derivation_depth(&w) <= base_depth);

            let e = ea2_derivation(&d, &pos, Some(&b("w"))).unwrap_or_else(|e| {
                panic!("ea2 failed on {} at {pos:?}: {e}", d.conclusion)
            });
            check_derivation(&e).unwrap();
            assert!(derivation_depth(&e) <= base_depth);
            checked += 1;
        }
    }
    assert!(checked > 50, "too few proved samples: {checked}");
}
