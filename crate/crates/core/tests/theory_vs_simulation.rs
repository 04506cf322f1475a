use compact_core::compress::CompressorSpec;
use compact_core::experiment::{check_bounds, standard_bound_suite, BoundCase, CheckStatus};
use compact_core::process::ProcessSpec;
use compact_core::theory::{self, BoundParams};

#[test]
fn bounds_hold_on_a_slice_of_the_standard_grid() {
    for case in standard_bound_suite(9, 300) {
        let out = check_bounds(&case).unwrap();
        assert!(out.passed(), "{out:#?}");
    }
}

#[test]
fn aggressive_sparsifier_is_flagged_not_failed() {
    let case = BoundCase {
        process: ProcessSpec {
            lipschitz: 0.7,
            sigma_a_sq: 100.0,
            ..ProcessSpec::standard(600)
        },
        codec: CompressorSpec::TopK { keep_fraction: 0.01 },
        warmup: 1,
        window: 50,
    };
    let out = check_bounds(&case).unwrap();
    assert_eq!(out.feedback.status, CheckStatus::UnstableByTheory);
    assert!(out.feedback.delta_hat < theory::stability_threshold(0.7));
    assert!(out.passed());
}

#[test]
fn feedback_bound_beats_naive_when_drift_is_small() {
    for l in [0.3, 0.5, 0.7] {
        let p = BoundParams {
            delta: 0.9,
            lipschitz: l,
            sigma_a_sq: 100.0,
            sigma_delta_sq: 1.0,
        };
        let r = theory::bound_ratio(&p).unwrap();
        assert!(r.value < 1.0);
        let direct = theory::v_residual(&p).unwrap() / theory::v_naive(&p).unwrap();
        assert!((r.value - direct).abs() <= 1e-12 * direct);
    }
}
