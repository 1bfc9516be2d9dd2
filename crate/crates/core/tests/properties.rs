mod common;

use proptest::prelude::*;

use common::props::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reduction_matches_explicit_operators((entries, inputs, picks) in reduction_input()) {
        reduction_case(entries, inputs, picks)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn dilation_reproduces_the_direct_behavior((entries, a, b, k) in dilation_input()) {
        dilation_case(entries, a, b, k)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn random_sdps_obey_duality((entries, n, m) in duality_input()) {
        duality_case(entries, n, m)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn higher_levels_never_loosen_random_chsh_functionals(coeffs in monotone_input()) {
        monotone_case(coeffs)?;
    }
}

#[test]
fn library_dilations_satisfy_fact1() {
    assert!(library_residual() <= 1e-10);
}

#[test]
fn levels_are_nested_on_named_objectives() {
    for (name, chain) in named_level_chains() {
        assert!(is_nonincreasing(&chain), "{name}: {chain:?}");
    }
}

#[test]
fn sequential_constraints_only_tighten() {
    assert!(sequential_flags_tighten());
}

#[test]
fn quantum_values_lie_below_certified_bounds() {
    assert!(witness_below_bound());
}

#[test]
fn simulated_behaviors_are_feasible_when_pinned() {
    assert!(pinned_behaviors_feasible());
}
