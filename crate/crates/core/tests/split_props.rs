mod common;

use dta_core::data::{cold_start_split, random_split};
use rand::Rng;

#[test]
fn cold_start_invariants_on_random_grids() {
    let mut rng = common::rng(0x5b1);
    for case in 0..500 {
        let records = common::random_grid(&mut rng, 30);
        let rho = rng.gen_range(0.05..0.95);
        let seed: u64 = rng.gen();
        let a = cold_start_split(&records, rho, seed).unwrap();
        common::split_invariants(&records, &a, rho).unwrap_or_else(|e| panic!("case {case}: {e}"));
        assert_eq!(a, cold_start_split(&records, rho, seed).unwrap(), "case {case} not reproducible");
    }
}

#[test]
fn input_order_does_not_matter() {
    let mut rng = common::rng(9);
    let records = common::random_grid(&mut rng, 12);
    let mut reversed = records.clone();
    reversed.reverse();
    assert_eq!(cold_start_split(&records, 0.3, 4).unwrap(), cold_start_split(&reversed, 0.3, 4).unwrap());
}

#[test]
fn random_split_partitions() {
    let mut rng = common::rng(10);
    for _ in 0..100 {
        let records = common::random_grid(&mut rng, 10);
        let n = records.len();
        let s = random_split(&records, (0.8, 0.1, 0.1), rng.gen()).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        for (part, f) in [(&s.train, 0.8), (&s.val, 0.1), (&s.test, 0.1)] {
            assert!((part.len() as f64 - f * n as f64).abs() <= 1.0 + 1e-9, "{} vs {}", part.len(), f * n as f64);
        }
    }
}
