mod common;

use common::{max_gradient_error, random_case, reference_forward, small_arch};
use dpcombine::lstm::{forward, Activation, Architecture, ForwardCache, Mode};

#[test]
fn forward_matches_reference_implementation() {
    for seed in 0..20 {
        let case = random_case(small_arch(), seed);
        let arch = small_arch();
        let mut cache = ForwardCache::new(&arch);
        let fast = forward(
            &case.params,
            &case.window,
            Mode::Masked(&case.mask),
            &mut cache,
        )
        .unwrap();
        let slow = reference_forward(&arch, case.params.values(), &case.window, &case.mask);
        assert!((fast - slow).abs() < 1e-12, "seed {seed}: {fast} vs {slow}");

        let ones = vec![1.0; case.mask.len()];
        let eval = case.params.predict(&case.window).unwrap();
        let slow = reference_forward(&arch, case.params.values(), &case.window, &ones);
        assert!((eval - slow).abs() < 1e-12);
    }
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 100..125 {
        let err = max_gradient_error(&random_case(small_arch(), seed));
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn backward_matches_finite_differences_for_other_heads_and_shapes() {
    let heads = [
        [Activation::Identity, Activation::Identity],
        [Activation::Sigmoid, Activation::Identity],
        [Activation::Tanh, Activation::Tanh],
    ];
    for (k, head) in heads.into_iter().enumerate() {
        let arch = Architecture {
            lag: 3 + k,
            hidden1: 2 + k,
            hidden2: 5 - k,
            dropout: 0.3,
            head,
        };
        let err = max_gradient_error(&random_case(arch, 7 + k as u64));
        assert!(err < 1e-4, "{head:?}: relative error {err:e}");
    }
}
