//! Central finite-difference checks for every autodiff operation.

use advshap::autodiff::check::{check_case, op_suite};

#[test]
fn every_op_matches_finite_differences() {
    for (i, case) in op_suite().iter().enumerate() {
        let worst = check_case(case, 50, 7919 + i as u64, 1e-5).unwrap();
        assert!(worst < 1e-4, "{}: relative error {worst:e}", case.name);
    }
}
