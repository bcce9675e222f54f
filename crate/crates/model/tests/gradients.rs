use std::time::Instant;

use kgdelta_model::gradcheck::{check_block, run_suite, suite_table, Block};

#[test]
fn every_block_matches_finite_differences() {
    let start = Instant::now();
    let results = run_suite(&Block::ALL, 0..20).unwrap();
    println!("{}", suite_table(&results, 1e-3));
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    for r in &results {
        assert_eq!(r.seeds, 20);
        assert!(r.checked > 0, "{} checked nothing", r.block.name());
        assert!(r.skipped * 10 <= r.checked + r.skipped, "{} skipped too many kinks", r.block.name());
        assert!(r.passed(1e-3), "{} max rel error {} (seed {})", r.block.name(), r.max_rel_error, r.worst_seed);
    }
}

#[test]
fn block_checks_are_deterministic() {
    for block in [Block::Rgcn, Block::PointerSoftmax] {
        let a = check_block(block, 3).unwrap();
        let b = check_block(block, 3).unwrap();
        assert_eq!(a.max_rel_error.to_bits(), b.max_rel_error.to_bits());
    }
}
