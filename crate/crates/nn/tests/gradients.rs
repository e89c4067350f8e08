use topo_nn::gradcheck::{check_model, layer_cases, rel_error};
use topo_nn::{loss_and_grad, LossKind};

#[test]
fn every_layer_type_matches_finite_differences() {
    let mut failures = Vec::new();
    for seed in [11, 12] {
        for (name, mut model, x) in layer_cases(seed).unwrap() {
            for c in check_model(&mut model, &x, seed, 1e-6).unwrap() {
                if !(c.rel_error <= 1e-4) {
                    failures.push(format!("{name}: {} rel err {:.3e}", c.label, c.rel_error));
                }
            }
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn loss_gradients_match_finite_differences() {
    let pred = [0.2f64, 0.7, 0.45, 0.9, 0.05];
    let target = [0.0f64, 1.0, 1.0, 0.3, 0.0];
    for kind in [LossKind::Bce, LossKind::Mse] {
        let (_, g) = loss_and_grad(kind, &pred, &target).unwrap();
        let h = 1e-7;
        let num: Vec<f64> = (0..pred.len())
            .map(|i| {
                let mut p = pred;
                p[i] += h;
                let lp = loss_and_grad(kind, &p, &target).unwrap().0;
                p[i] -= 2.0 * h;
                let lm = loss_and_grad(kind, &p, &target).unwrap().0;
                (lp - lm) / (2.0 * h)
            })
            .collect();
        assert!(rel_error(&g, &num) < 1e-6, "{kind:?}");
    }
}
