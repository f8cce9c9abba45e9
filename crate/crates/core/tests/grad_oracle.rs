use uvhead::checks::{grad_check, GRAD_TOLERANCE};

#[test]
fn full_loss_gradient_matches_finite_differences() {
    for outcome in grad_check(11, 24).unwrap() {
        for g in &outcome.groups {
            println!(
                "{} {:?}: checked {} excluded {} max rel err {:.3e} max |g| {:.3e}",
                outcome.mode, g.kind, g.checked, g.excluded, g.max_rel_error, g.max_abs_gradient
            );
        }
        assert!(outcome.passed(), "{outcome:?}");
    }
    const { assert!(GRAD_TOLERANCE <= 1e-4) };
}
