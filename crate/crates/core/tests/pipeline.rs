use proptest::prelude::*;

use sparsepp::fit::{fit_model, FitOptions, PenaltyKind};
use sparsepp::geometry::Window;
use sparsepp::model::{CovariateField, Interaction, ModelSpec};
use sparsepp::quadrature::build_scheme;
use sparsepp::selection::Criterion;
use sparsepp::simulate::{sample_poisson, sample_replicate, SimConfig};
use sparsepp::solver::{fit_at_tau, kkt_residual, tau_max, PenaltyPlan, SolverOptions};

fn linear_model(beta: &[f64]) -> ModelSpec {
    let covs = vec![
        CovariateField::x("x"),
        CovariateField::y("y"),
        CovariateField::product("xy", CovariateField::x("x"), CovariateField::y("y")),
    ];
    ModelSpec::with_intercept(Window::unit(), covs, Interaction::None).unwrap().with_coefficients(beta).unwrap()
}

#[test]
fn adaptive_lasso_drops_noise_terms() {
    let truth = linear_model(&[5.5, 1.5, 0.0, 0.0]);
    let p = sample_poisson(&SimConfig::new(truth.clone(), 4)).unwrap();
    for criterion in [Criterion::Cbic, Criterion::Ceric] {
        let opts = FitOptions { dummy_grid: (64, 64), criterion, ..Default::default() };
        let fit = fit_model(&p, &truth, &opts).unwrap();
        assert_ne!(fit.selected[1], 0.0);
        assert_eq!(fit.selected[3], 0.0, "{criterion}: {:?}", fit.selected);
        assert!(fit.diagnostics.kkt_selected < 1e-6);
        assert!(fit.diagnostics.a_n.unwrap() < fit.diagnostics.b_n.unwrap());
    }
}

#[test]
fn strauss_fit_recovers_repulsion_sign() {
    let truth = ModelSpec::with_intercept(Window::unit(), vec![], Interaction::strauss(0.06).unwrap())
        .unwrap()
        .with_coefficients(&[250f64.ln(), -1.0])
        .unwrap();
    let x = sample_replicate(&truth, 8, 0, 100_000, 0).unwrap();
    let fit = fit_model(&x, &truth, &FitOptions { penalty: PenaltyKind::None, dummy_grid: (64, 64), ..Default::default() })
        .unwrap();
    assert!(fit.selected[1] < -0.3, "{:?}", fit.selected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_tau_fits_satisfy_kkt(seed in 0u64..1000, frac in 0.0..1.0f64, lasso in any::<bool>()) {
        let truth = linear_model(&[5.0, 0.8, -0.5, 0.0]);
        let p = sample_poisson(&SimConfig::new(truth.clone(), seed)).unwrap();
        let s = build_scheme(&p, &truth, (24, 24)).unwrap();
        let mask = truth.penalty_mask();
        let plan = if lasso { PenaltyPlan::lasso(mask) } else { PenaltyPlan::adaptive_from_scheme(&s, mask, 1.0).unwrap() };
        let tau = frac * tau_max(&s, &plan).unwrap();
        let pt = fit_at_tau(&s, &plan, tau, None, &SolverOptions::default()).unwrap();
        prop_assert!(pt.converged);
        prop_assert!(kkt_residual(&s, &plan, tau, &pt.coefficients).unwrap() < 1e-6);
    }
}
