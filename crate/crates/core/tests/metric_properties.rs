use alqa_core::metrics::{f2, f2_from_counts};
use proptest::prelude::*;

#[test]
fn hand_values_from_counts() {
    // P = 0.5, R = 1
    assert!((f2_from_counts(2, 2, 0, 0).unwrap().f2 - 0.8333333333).abs() <= 1e-9);
    // P = 1, R = 0.5
    assert!((f2_from_counts(2, 0, 2, 0).unwrap().f2 - 0.5555555556).abs() <= 1e-9);
    assert!((f2_from_counts(7, 0, 0, 3).unwrap().f2 - 1.0).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn recall_dominates(a in 0.01f64..1.0, b in 0.01f64..1.0) {
        prop_assume!(b > a);
        prop_assert!(f2(a, b) > f2(b, a));
    }
}
