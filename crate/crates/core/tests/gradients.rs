use pepr_core::nn::Task;
use pepr_core::train::{
    analytic_gradients, check_gradients, composite_loss, gradient_check, miniature_model, Composite, Fixture,
    GradCheckConfig, Method,
};

#[test]
fn every_composite_matches_central_differences() {
    let cfg = GradCheckConfig::default();
    for composite in Composite::all() {
        let report = gradient_check(composite, &cfg).unwrap();
        for g in &report.groups {
            println!(
                "{:<32} {:<14} n={:<3} max_rel={:.2e} rel_ok={:.3} max_abs_other={:.2e}",
                report.composite, g.group, g.checked, g.max_rel_error, g.rel_pass_fraction, g.max_abs_error_outside_rel
            );
        }
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn miniature_models_stay_under_a_thousand_parameters() {
    for task in [Task::Segmentation, Task::Detection] {
        let m = miniature_model(Composite::Objective { method: Method::Pepr, task }, 0).unwrap();
        assert!(m.store.num_values() <= 1000, "{}", m.store.num_values());
    }
}

#[test]
fn linear_probe_is_exact() {
    // Truncation error vanishes for a quadratic, so a larger step only
    // reduces rounding noise.
    let cfg = GradCheckConfig {
        step: 1e-2,
        ..Default::default()
    };
    let report = gradient_check(Composite::LinearProbe, &cfg).unwrap();
    assert!(report.groups[0].max_rel_error < 1e-8, "{report:?}");
}

#[test]
fn corrupted_gradient_is_reported() {
    let composite = Composite::Objective {
        method: Method::Pepr,
        task: Task::Segmentation,
    };
    let mut model = miniature_model(composite, 3).unwrap();
    let fixture = Fixture::new(&model.config, 4);
    let mut analytic = analytic_gradients(&model, &fixture, composite).unwrap();
    for g in analytic.iter_mut().flatten() {
        *g *= 1.01;
    }
    let cfg = GradCheckConfig::default();
    let reports = check_gradients(
        &mut model,
        &["rgb_encoder", "predictor"],
        &analytic,
        |m| composite_loss(m, &fixture, composite),
        &cfg,
    )
    .unwrap();
    assert!(reports.iter().all(|r| !r.passed));
}
