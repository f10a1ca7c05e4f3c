use super::*;
use crate::distributions::{gumbel_softmax_log_density, CategoricalParams, SimplexSample};
use crate::estimators::{EstimatorKind, EstimatorSettings, LatentKind};
use crate::graph::{sigmoid, Tensor};

fn gs_density(probs: &[f64], tau: f64) -> impl Fn(&[f64]) -> f64 {
    let params = CategoricalParams::from_probs(probs).unwrap();
    move |y: &[f64]| {
        let s = SimplexSample {
            y: Tensor::vector(y.to_vec()),
            temperature: tau,
        };
        gumbel_softmax_log_density(&s, &params, tau).map_or(0.0, f64::exp)
    }
}

#[test]
fn constant_cost_has_zero_gradient() {
    let tb = EnumerationTestbed::new(
        "const",
        LatentKind::Categorical { k: 3 },
        vec![0.1, 0.5, -0.2],
        TestbedCost::Constant { value: 4.0 },
    )
    .unwrap();
    assert!(tb.exact_expected_gradient().unwrap().data().iter().all(|v| v.abs() < 1e-15));
    assert!((tb.expected_value().unwrap() - 4.0).abs() < 1e-14);
}

#[test]
fn two_class_indicator_gradient_is_sigmoid_slope() {
    let tb = EnumerationTestbed::new(
        "ind",
        LatentKind::Categorical { k: 2 },
        vec![0.0, 0.0],
        TestbedCost::Linear { c: vec![1.0, 0.0] },
    )
    .unwrap();
    let g = tb.exact_expected_gradient().unwrap();
    assert!((g.data()[0] - 0.25).abs() < 1e-15);
    assert!((g.data()[1] + 0.25).abs() < 1e-15);
}

#[test]
fn eight_bit_table_gradient_matches_finite_differences() {
    let tb = EnumerationTestbed::bernoulli_table(8, 42).unwrap();
    assert_eq!(tb.outcome_count().unwrap(), 256);
    assert!((tb.total_probability().unwrap() - 1.0).abs() < 1e-12);
    let exact = tb.exact_expected_gradient().unwrap();
    let fd = finite_difference(|x| tb.expected_value_at(x), &tb.logits, 1e-5).unwrap();
    for (a, b) in exact.data().iter().zip(&fd) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }
}

#[test]
fn enumeration_agrees_with_plain_sum() {
    // independent evaluation: Σ_o Π_i p_i^{o_i} (1-p_i)^{1-o_i} f(o)
    let tb = EnumerationTestbed::bernoulli_centered_quadratic();
    let outcomes = tb.outcomes().unwrap();
    let p: Vec<f64> = tb.logits.iter().map(|a| sigmoid(*a)).collect();
    let mut e = 0.0;
    for o in 0..outcomes.shape()[0] {
        let z = outcomes.row(o);
        let w: f64 = z.iter().zip(&p).map(|(zi, pi)| if *zi == 1.0 { *pi } else { 1.0 - pi }).product();
        e += w * tb.cost.value(z);
    }
    assert!((tb.expected_value().unwrap() - e).abs() < 1e-14);

    let tb = EnumerationTestbed::categorical_quadratic();
    let probs = CategoricalParams::from_logits(&tb.logits).unwrap().probs();
    let outcomes = tb.outcomes().unwrap();
    let e: f64 = (0..4).map(|i| probs[i] * tb.cost.value(outcomes.row(i))).sum();
    assert!((tb.expected_value().unwrap() - e).abs() < 1e-14);
}

#[test]
fn grouped_categorical_outcomes_are_one_hot_per_group() {
    let tb = EnumerationTestbed::new(
        "groups",
        LatentKind::Categorical { k: 3 },
        vec![0.0; 6],
        TestbedCost::Constant { value: 0.0 },
    )
    .unwrap();
    let o = tb.outcomes().unwrap();
    assert_eq!(o.shape(), &[9, 6]);
    for r in 0..9 {
        let row = o.row(r);
        assert_eq!(row[..3].iter().sum::<f64>(), 1.0);
        assert_eq!(row[3..].iter().sum::<f64>(), 1.0);
    }
    assert!((tb.total_probability().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn outcome_space_limit() {
    let err = EnumerationTestbed::new(
        "big",
        LatentKind::Bernoulli,
        vec![0.0; 13],
        TestbedCost::Constant { value: 0.0 },
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::OutcomeSpaceTooLarge(8192)));
}

#[test]
fn table_cost_interpolates_its_corners() {
    let tb = EnumerationTestbed::bernoulli_table(3, 1).unwrap();
    let TestbedCost::Table { values } = &tb.cost else { panic!() };
    let outcomes = tb.outcomes().unwrap();
    let mut g = crate::graph::Graph::new();
    let z = g.constant(outcomes.clone());
    let f = crate::estimators::CostFunction::build(&tb.cost, &mut g, z).unwrap();
    for (o, v) in values.iter().enumerate() {
        assert!((g.value(f).data()[o] - v).abs() < 1e-15);
        assert!((tb.cost.value(outcomes.row(o)) - v).abs() < 1e-15);
    }
    // and off the corners the graph and plain evaluations agree
    let pt = Tensor::matrix(1, 3, vec![0.2, 0.7, 0.4]).unwrap();
    let zp = g.constant(pt.clone());
    let fp = crate::estimators::CostFunction::build(&tb.cost, &mut g, zp).unwrap();
    assert!((g.value(fp).data()[0] - tb.cost.value(pt.data())).abs() < 1e-14);
}

#[test]
fn finite_difference_of_quadratic_is_exact() {
    let fd = finite_difference(|x| Ok(3.0 * x[0] * x[0] - x[1]), &[0.7, 2.0], 1e-5).unwrap();
    assert!((fd[0] - 4.2).abs() < 1e-9);
    assert!((fd[1] + 1.0).abs() < 1e-9);
    assert!(finite_difference(|_| Ok(f64::NAN), &[0.0], 1e-5).is_err());
    assert!(finite_difference(|x| Ok(x[0]), &[0.0], 0.0).is_err());
}

#[test]
fn uniform_density_on_segment_integrates_to_one() {
    let v = simplex_quadrature(|_| 1.0, 2, 2000).unwrap();
    assert!((v - 1.0).abs() < 1e-10);
    // the triangle has area 1/2
    let v = simplex_quadrature(|_| 1.0, 3, 300).unwrap();
    assert!((v - 0.5).abs() < 1e-8, "{v}");
}

#[test]
fn gumbel_softmax_density_normalizes() {
    for tau in [0.7, 1.0, 2.0] {
        let v = simplex_quadrature(gs_density(&[0.5, 0.5], tau), 2, 4000).unwrap();
        assert!((v - 1.0).abs() < 1e-4, "tau {tau}: {v}");
    }
    let v = simplex_quadrature(gs_density(&[0.2, 0.3, 0.5], 0.7), 3, 300).unwrap();
    assert!((v - 1.0).abs() < 1e-3, "{v}");
}

#[test]
fn doubling_resolution_barely_moves_the_segment_integral() {
    let d = gs_density(&[0.3, 0.7], 1.0);
    let a = simplex_quadrature(&d, 2, 2000).unwrap();
    let b = simplex_quadrature(&d, 2, 4000).unwrap();
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn quadrature_rejects_unsupported_k() {
    assert!(simplex_quadrature(|_| 1.0, 4, 100).is_err());
    assert!(simplex_quadrature(|_| 1.0, 1, 100).is_err());
}

#[test]
fn bonferroni_threshold_grows_with_coordinates() {
    assert!((bonferroni_critical(1) - 3.0).abs() < 1e-9);
    assert!(bonferroni_critical(4) > bonferroni_critical(2));
}

#[test]
fn pairwise_sum_matches_naive_on_exact_values() {
    let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
    assert_eq!(pairwise_sum(&xs), 499_500.0);
    assert_eq!(pairwise_sum(&[]), 0.0);
}

#[test]
fn audits_are_reproducible_and_serializable() {
    let tb = EnumerationTestbed::categorical_indicator();
    let s = EstimatorSettings::new(EstimatorKind::Sf).with_normalization(false);
    let a = audit_estimator(&s, &tb, &AuditOptions::new(2000, 5)).unwrap();
    let b = audit_estimator(&s, &tb, &AuditOptions::new(2000, 5)).unwrap();
    assert_eq!(a, b);
    assert!(a.se.iter().all(|s| *s > 0.0));
    let json = a.to_json().unwrap();
    for key in ["estimator", "testbed", "\"n\"", "mean", "se", "exact", "\"z\"", "var"] {
        assert!(json.contains(key), "{key}");
    }
    assert!(audit_estimator(&s, &tb, &AuditOptions::new(999, 5)).is_err());
}

#[test]
fn straight_through_is_exact_on_linear_categorical_cost() {
    // softmax-backward straight-through reproduces J^T c, the exact gradient
    let tb = EnumerationTestbed::categorical_linear();
    let s = EstimatorSettings::new(EstimatorKind::St);
    let a = audit_estimator(&s, &tb, &AuditOptions::new(1000, 1)).unwrap();
    assert!(a.var.iter().all(|v| *v < 1e-25), "{a:?}");
    assert!(a.unbiased());
}

#[test]
fn exact_gradient_is_seed_independent() {
    let a = EnumerationTestbed::bernoulli_table(5, 3).unwrap();
    let g1 = a.exact_expected_gradient().unwrap();
    let g2 = a.exact_expected_gradient().unwrap();
    assert_eq!(g1, g2);
}
