//! Finite-difference gradient checks for every differentiable operation.

mod common;

#[test]
fn every_op_matches_central_finite_differences() {
    let reports = common::gradchecks::run_all();
    assert!(reports.len() >= 25, "checklist shrank: {}", reports.len());
    for r in &reports {
        println!("gradcheck {:<24} {:>4} elements, max rel err {:.3e}", r.name, r.checked, r.max_rel_err);
    }
}
