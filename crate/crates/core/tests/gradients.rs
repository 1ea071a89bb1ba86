use rdn_core::gradcheck::{self, TOLERANCE};
use rdn_core::OpKind;

#[test]
fn every_op_and_composite_within_tolerance() {
    let report = gradcheck::run_suite(7, None).unwrap();
    for r in &report.results {
        println!("{:<40} max rel err {:.3e}  checked {:>5}  skipped {}", r.name, r.max_rel_error, r.checked, r.skipped);
    }
    assert!(report.passed(), "tolerance {TOLERANCE}");
    assert!(report.results.iter().any(|r| r.name.starts_with("rdn composite")));
}

#[test]
fn corrupted_backward_is_caught_and_named() {
    for kind in [OpKind::Relu, OpKind::PixelShuffle] {
        let report = gradcheck::run_suite(7, Some(kind)).unwrap();
        assert!(!report.passed());
        assert!(report.failures().any(|r| r.name.starts_with(kind.name())), "{kind:?}");
    }
}
