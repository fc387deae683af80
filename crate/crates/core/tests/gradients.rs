mod common;

const TOLERANCE: f64 = 1e-3;

#[test]
fn every_operator_matches_central_differences() {
    for seed in [0, 1] {
        for (name, err) in common::gradient_suite(seed) {
            assert!(
                err < TOLERANCE,
                "{name}: relative error {err:e} (seed {seed})"
            );
        }
    }
}
