mod common;

use common::gradcheck::check_pretraining_gradients;

#[test]
fn pretraining_gradients_match_finite_differences() {
    let r = check_pretraining_gradients();
    println!("checked {} entries, worst relative error {:.3e} at {}", r.checked, r.worst, r.detail);
    assert!(r.min_residual > 1e-3, "residual {} too close to the kink", r.min_residual);
    assert!(r.worst <= 1e-3, "{}", r.detail);
}
