use bunchkit_core::bunch::parse_sequent;
use bunchkit_core::lbi::{lbi_prove_capped, LbiCaps};
use bunchkit_core::lbiz::Budget;
use std::time::Instant;

fn main() {
    let goal = parse_sequent("(emp; p1), (emp; p1 -> p2) |- p2").unwrap();
    for cap in [8, 9] {
        for nodes in [100_000, 300_000] {
            let t = Instant::now();
            let r = lbi_prove_capped(
                &goal,
                Budget { max_depth: 16, max_nodes: nodes },
                &[],
                LbiCaps { max_struct_growth: cap },
            );
            println!("cap={cap} nodes={nodes}: proved={} in {:?}", r.is_proved(), t.elapsed());
        }
    }
}
