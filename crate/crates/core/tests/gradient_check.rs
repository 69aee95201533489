mod common;

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..20 {
        let err = common::gradient_check(seed);
        assert!(err < 1e-4, "network {seed}: max relative error {err:e}");
    }
}
