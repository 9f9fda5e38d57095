use lmnet::net::LAYER_NAMES;
use lmnet_oracle::gradcheck;

const TOLERANCE: f64 = 1e-3;

#[test]
fn conv_backward_matches_finite_differences() {
    let worst = gradcheck::conv_error(11);
    assert!(worst < TOLERANCE, "worst relative error {worst}");
}

#[test]
fn pool_relu_dropout_backward_match_finite_differences() {
    let worst = gradcheck::pool_relu_dropout_error(12);
    assert!(worst < TOLERANCE, "worst relative error {worst}");
}

#[test]
fn network_gradients_match_finite_differences() {
    for (relu, seed) in [(true, 21), (false, 22)] {
        let check = gradcheck::network(relu, seed).unwrap();
        let (ours, reference) = check.loss;
        assert!(
            (ours - reference).abs() <= 1e-4 * reference.abs(),
            "loss {ours} vs reference {reference}"
        );
        for (name, e) in LAYER_NAMES.iter().zip(&check.layer_errors) {
            println!("{name:>10}: max relative error {e:.2e}");
        }
        println!("{} perturbations skipped at kinks", check.skipped);
        assert!(
            check.worst() < TOLERANCE,
            "objectness relu {relu}: worst relative error {}",
            check.worst()
        );
    }
}
