mod support;

use proptest::prelude::*;
use support::{exact_cases, exact_invariants, spin_cases, spin_invariants, CASES};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn collective_spin_invariants(case in spin_cases()) {
        spin_invariants(&case)?;
    }

    #[test]
    fn cavity_passage_invariants(case in exact_cases()) {
        exact_invariants(&case)?;
    }
}
