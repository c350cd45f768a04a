use flowgate::diagnostics::{allocator_suite, difficulty_suite, router_suite, GRADCHECK_TOLERANCE};

#[test]
fn difficulty_gradients_match_finite_differences() {
    for seed in 0..10 {
        let e = difficulty_suite(seed).unwrap();
        assert!(e <= GRADCHECK_TOLERANCE, "seed {seed}: {e:e}");
    }
}

#[test]
fn allocator_gradients_match_finite_differences() {
    for seed in 0..10 {
        let e = allocator_suite(seed).unwrap();
        assert!(e <= GRADCHECK_TOLERANCE, "seed {seed}: {e:e}");
    }
}

#[test]
fn router_gradients_match_finite_differences() {
    for seed in 0..10 {
        let e = router_suite(seed).unwrap();
        assert!(e <= GRADCHECK_TOLERANCE, "seed {seed}: {e:e}");
    }
}
