use depref::gradcheck::{model_check, run_checks, suite, Check, TOLERANCE};
use depref_tensor::gradcheck::GradCase;
use depref_tensor::{Tape, Tensor};

#[test]
fn full_suite_passes() {
    let results = run_checks(&suite(7));
    assert!(results.len() >= 20);
    for r in &results {
        assert!(r.passed(), "{} failed: {:?}", r.name, r.outcome);
    }
}

#[test]
fn model_loss_passes_for_several_seeds() {
    for seed in 0..5 {
        let r = &run_checks(&[model_check(seed, 1e-4)])[0];
        assert!(r.passed(), "seed {seed}: {:?}", r.outcome);
    }
}

#[test]
fn broken_backward_rule_is_flagged() {
    // Elementwise square whose backward rule drops the factor 2.
    let broken = GradCase {
        name: "bad_square",
        inputs: vec![Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap()],
        f: Box::new(|t: &mut Tape<f64>, v| {
            let x = t.value(v[0]);
            let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|a| a * a).collect())?;
            let y = t.custom(
                "bad_square",
                &[v[0]],
                value,
                Box::new(|inputs, _out, g| {
                    vec![inputs[0].data().iter().zip(g).map(|(a, g)| a * g).collect()]
                }),
            );
            Ok(t.sum(y))
        }),
    };
    let results = run_checks(&[Check::from_case(broken, 1e-3)]);
    assert_eq!(results[0].name, "bad_square");
    assert!(!results[0].passed());
    assert!(results[0].outcome.as_ref().unwrap() > &TOLERANCE);
}

#[test]
fn empty_suite_reports_nothing() {
    assert!(run_checks(&[]).is_empty());
}
