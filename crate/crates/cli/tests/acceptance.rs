//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. `ACCEPTANCE_ONLY=3,7` runs a subset.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;

use sparsepp::fit::PenaltyKind;
use sparsepp::geometry::{Point, Window};
use sparsepp::model::{CovariateField, Interaction, ModelSpec};
use sparsepp::quadrature::{build_scheme, QuadratureScheme};
use sparsepp::selection::{cbic, ceric, criterion_table, dof_count, dof_sandwich, DofMode};
use sparsepp::simulate::{
    campbell_check, gnz_check, rng_for, sample_poisson, sample_replicate, SimConfig, DEFAULT_BURN_IN,
};
use sparsepp::solver::{fit_path, fit_unpenalized, kkt_residual, PenaltyPlan, SolverOptions};
use sparsepp::study::{run_study, SinusoidField, StudyConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn homogeneous(w: Window, rho: f64) -> ModelSpec {
    ModelSpec::with_intercept(w, vec![], Interaction::None).unwrap().with_coefficients(&[rho.ln()]).unwrap()
}

/// Berman-Turner log-likelihood evaluated straight from the scheme arrays.
fn loglik(s: &QuadratureScheme, theta: &[f64]) -> f64 {
    let z = s.design();
    (0..s.len())
        .map(|i| {
            let eta: f64 = (0..theta.len()).map(|j| z[(i, j)] * theta[j]).sum();
            s.weights()[i] * (s.responses()[i] * eta - eta.exp())
        })
        .sum()
}

fn closed_form_mle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let windows = [Window::unit(), Window::new(-1.0, 2.0, 0.0, 0.5).unwrap(), Window::new(0.0, 3.0, 0.0, 3.0).unwrap()];
    for (k, w) in windows.iter().enumerate() {
        for seed in 0..4u64 {
            let rho = 20.0 + 60.0 * seed as f64;
            let p = sample_poisson(&SimConfig::new(homogeneous(*w, rho), 100 * k as u64 + seed)).unwrap();
            let m = ModelSpec::with_intercept(*w, vec![], Interaction::None).unwrap();
            let s = build_scheme(&p, &m, (32, 32)).unwrap();
            let b0 = fit_unpenalized(&s).unwrap()[0];
            worst = worst.max((b0 - (p.len() as f64 / w.area()).ln()).abs());
        }
    }
    let t = start.elapsed();
    outcome(worst <= 1e-6 && t < Duration::from_secs(1), format!("max |b0 - log(N/|D|)| = {worst:.2e}, {t:.2?}"))
}

fn gradient_correctness() -> Outcome {
    let w = Window::unit();
    let field = SinusoidField::new(4, 0, 4, 0.2, 0.6).rasterize(&w, 64).unwrap();
    let covs = vec![CovariateField::x("x"), CovariateField::y("y"), CovariateField::raster("z", field)];
    let m = ModelSpec::with_intercept(w, covs, Interaction::None).unwrap().with_coefficients(&[5.0, 0.5, -0.5, 0.3]).unwrap();
    let p = sample_poisson(&SimConfig::new(m.clone(), 1)).unwrap();
    let s = build_scheme(&p, &m, (48, 48)).unwrap();
    let mut rng = rng_for(77, 0);
    let h = 1e-5;
    let (mut worst_grad, mut worst_eig, mut worst_sym): (f64, f64, f64) = (0.0, f64::INFINITY, 0.0);
    for _ in 0..20 {
        let theta: Vec<f64> = (0..4).map(|j| if j == 0 { rng.gen_range(3.0..6.0) } else { rng.gen_range(-2.0..2.0) }).collect();
        let (g, hess) = s.gradient_and_hessian(&theta).unwrap();
        let fd: Vec<f64> = (0..4)
            .map(|j| {
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[j] += h;
                dn[j] -= h;
                (loglik(&s, &up) - loglik(&s, &dn)) / (2.0 * h)
            })
            .collect();
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        for j in 0..4 {
            worst_grad = worst_grad.max((g[j] - fd[j]).abs() / scale);
        }
        let trace = hess.trace();
        worst_sym = worst_sym.max((&hess - hess.transpose()).amax() / trace);
        let min_eig = hess.clone().symmetric_eigen().eigenvalues.min();
        worst_eig = worst_eig.min(min_eig / trace);
    }
    outcome(
        worst_grad <= 1e-6 && worst_sym <= 1e-12 && worst_eig >= -1e-10,
        format!("max rel gradient error {worst_grad:.2e}, asymmetry {worst_sym:.1e}, min eig/trace {worst_eig:.2e}"),
    )
}

fn quadrature_invariant() -> Outcome {
    let mut rng = rng_for(3, 0);
    let mut worst: f64 = 0.0;
    for k in 0..100u64 {
        let x0 = rng.gen_range(-10.0..10.0);
        let y0 = rng.gen_range(-10.0..10.0);
        let w = Window::new(x0, x0 + rng.gen_range(0.2..5.0), y0, y0 + rng.gen_range(0.2..5.0)).unwrap();
        let rho = rng.gen_range(1.0..200.0) / w.area().max(1.0);
        let p = sample_poisson(&SimConfig::new(homogeneous(w, rho), k)).unwrap();
        let interaction = if rng.gen_bool(0.5) {
            Interaction::strauss(rng.gen_range(0.01..0.09) * w.width().min(w.height())).unwrap()
        } else {
            Interaction::None
        };
        let m = ModelSpec::with_intercept(w, vec![CovariateField::x("x")], interaction).unwrap();
        let grid = (rng.gen_range(1..80), rng.gen_range(1..80));
        let s = build_scheme(&p, &m, grid).unwrap();
        worst = worst.max(s.weight_sum_error());
    }
    outcome(worst <= 1e-10, format!("max relative weight-sum error {worst:.2e} over 100 configurations"))
}

/// Maximises the penalized objective over a shrinking 31x31 grid.
fn grid_search(s: &QuadratureScheme, n: f64, tau: f64, v: f64, centre: [f64; 2]) -> [f64; 2] {
    let q = |b: [f64; 2]| loglik(s, &b) / n - tau * v * b[1].abs();
    let (mut c, mut half) = (centre, 2.0);
    for _ in 0..9 {
        let mut best = (f64::NEG_INFINITY, c);
        for i in -15..=15 {
            for j in -15..=15 {
                let b = [c[0] + half * i as f64 / 15.0, c[1] + half * j as f64 / 15.0];
                let val = q(b);
                if val > best.0 {
                    best = (val, b);
                }
            }
        }
        c = best.1;
        half /= 5.0;
    }
    c
}

fn path_correctness() -> Outcome {
    let start = Instant::now();
    let w = Window::unit();
    let m = ModelSpec::with_intercept(w, vec![CovariateField::x("x")], Interaction::None)
        .unwrap()
        .with_coefficients(&[5.0, 0.8])
        .unwrap();
    let p = sample_poisson(&SimConfig::new(m.clone(), 11)).unwrap();
    let s = build_scheme(&p, &m, (32, 32)).unwrap();
    let n = s.n_data() as f64;
    let mut worst: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    let mut zero_at_max = true;
    let plans = [PenaltyPlan::lasso(&[false, true]), PenaltyPlan::adaptive_from_scheme(&s, &[false, true], 1.0).unwrap()];
    for plan in &plans {
        let path = fit_path(&s, plan, &SolverOptions { n_tau: 25, ..Default::default() }).unwrap();
        zero_at_max &= path.coefficients[0][1] == 0.0;
        for k in 0..path.len() {
            if !path.converged[k] {
                continue;
            }
            let b = &path.coefficients[k];
            let g = grid_search(&s, n, path.taus[k], plan.multipliers()[1], [(n / s.domain().area()).ln(), 0.0]);
            worst = worst.max((g[0] - b[0]).abs()).max((g[1] - b[1]).abs());
            worst_kkt = worst_kkt.max(kkt_residual(&s, plan, path.taus[k], b).unwrap());
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 5e-3 && zero_at_max && worst_kkt < 1e-6 && within(t, 30),
        format!("max |path - grid search| {worst:.2e}, zero at tau_max {zero_at_max}, max KKT {worst_kkt:.1e}, {t:.2?}"),
    )
}

fn campbell() -> Outcome {
    let start = Instant::now();
    let m = homogeneous(Window::unit(), 100.0);
    let one = campbell_check(&m, &|_| 1.0, 2000, 5).unwrap();
    let x = campbell_check(&m, &|u: Point| u.x, 2000, 6).unwrap();
    let t = start.elapsed();
    let pass = one.passes(3.0)
        && x.passes(3.0)
        && (one.rhs - 100.0).abs() < 1e-6
        && (x.rhs - 50.0).abs() < 1e-6
        && within(t, 30);
    outcome(
        pass,
        format!(
            "h=1: lhs {:.3} rhs {:.3} z {:.2}; h=x: lhs {:.3} rhs {:.3} z {:.2}; {t:.2?}",
            one.lhs, one.rhs, one.z, x.lhs, x.rhs, x.z
        ),
    )
}

fn gnz() -> Outcome {
    let start = Instant::now();
    let r = 0.05;
    let m = ModelSpec::with_intercept(Window::unit(), vec![], Interaction::strauss(r).unwrap())
        .unwrap()
        .with_coefficients(&[100f64.ln(), -0.7])
        .unwrap();
    let one = gnz_check(&m, &|_, _, _| 1.0, 500, 21, DEFAULT_BURN_IN, 256).unwrap();
    let s1 = gnz_check(&m, &|u, idx, ex| idx.count_within(u, r, ex) as f64, 500, 22, DEFAULT_BURN_IN, 256).unwrap();
    let t = start.elapsed();
    outcome(
        one.passes(3.0) && s1.passes(3.0) && within(t, 300),
        format!(
            "h=1: lhs {:.3} rhs {:.3} z {:.2}; h=s1: lhs {:.3} rhs {:.3} z {:.2}; {t:.2?}",
            one.lhs, one.rhs, one.z, s1.lhs, s1.rhs, s1.z
        ),
    )
}

const SPARSITY_DESIGN: &str = "
[model]
coefficients = [1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
target_count = 400

[covariates]
seed = 2024
components = 4
min_wavelength = 0.2
max_wavelength = 0.6
cells_per_unit = 64

[penalty]
method = \"adaptive\"
gamma = 1.0
ntau = 100
dummy_per_unit = 64
";

fn sparsity() -> Outcome {
    let start = Instant::now();
    let text = format!(
        "seed = 7\nreplicates = 100\ncriterion = \"cbic\"\n{SPARSITY_DESIGN}compare_plain = true\n\n[ladder]\nwindows = [[0, 1, 0, 1]]\n"
    );
    let rep = run_study(&StudyConfig::from_toml(&text).unwrap()).unwrap();
    let t = start.elapsed();
    let a = rep.row(0, PenaltyKind::Adaptive, "cbic").unwrap();
    let l = rep.row(0, PenaltyKind::Lasso, "cbic").unwrap();
    let (ae, af, le) = (a.exact_support.unwrap_or(0.0), a.fpr.unwrap_or(1.0), l.exact_support.unwrap_or(0.0));
    outcome(
        ae >= 0.75 && af <= 0.10 && ae >= le && a.failures == 0 && within(t, 600),
        format!(
            "adaptive exact {ae:.2} fpr {af:.3} tpr {:.3}; lasso exact {le:.2} fpr {:.3}; mean N {:.1}; {t:.2?}",
            a.tpr.unwrap_or(f64::NAN),
            l.fpr.unwrap_or(f64::NAN),
            a.mean_n
        ),
    )
}

fn consistency() -> Outcome {
    let start = Instant::now();
    let text = format!(
        "seed = 8\nreplicates = 50\ncriterion = \"cbic\"\n{SPARSITY_DESIGN}compare_plain = false\n\n\
         [ladder]\nwindows = [[0, 1, 0, 1], [0, 2, 0, 2], [0, 4, 0, 4]]\n"
    );
    let rep = run_study(&StudyConfig::from_toml(&text).unwrap()).unwrap();
    let t = start.elapsed();
    let rows: Vec<_> = (0..3).map(|i| rep.row(i, PenaltyKind::Adaptive, "cbic").unwrap()).collect();
    let err: Vec<f64> = rows.iter().map(|r| r.median_error).collect();
    let scaled: Vec<f64> = rows.iter().map(|r| r.median_error_sqrt_mu).collect();
    let decreasing = err.windows(2).all(|w| w[1] < w[0]);
    let ratio = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    outcome(
        decreasing && ratio < 2.0 && failures == 0 && within(t, 1200),
        format!("median error {err:.4?}, median error*sqrt(N) {scaled:.3?} (ratio {ratio:.2}), {t:.2?}"),
    )
}

fn gibbs_fit() -> Outcome {
    let start = Instant::now();
    let m = ModelSpec::with_intercept(Window::unit(), vec![], Interaction::strauss(0.05).unwrap())
        .unwrap()
        .with_coefficients(&[200f64.ln(), -0.5])
        .unwrap();
    let psi: Vec<f64> = (0..100u64)
        .map(|r| {
            let x = sample_replicate(&m, 31, r, DEFAULT_BURN_IN, 0).unwrap();
            let s = build_scheme(&x, &m, (128, 128)).unwrap();
            fit_unpenalized(&s).unwrap()[1]
        })
        .collect();
    let t = start.elapsed();
    let n = psi.len() as f64;
    let mean = psi.iter().sum::<f64>() / n;
    let sd = (psi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    outcome(
        (mean + 0.5).abs() <= 3.0 * se && within(t, 900),
        format!("mean psi {mean:.4}, MC SE {se:.4}, |z| {:.2}, {t:.2?}", (mean + 0.5).abs() / se),
    )
}

fn criteria_arithmetic() -> Outcome {
    let w = Window::unit();
    let m = ModelSpec::with_intercept(w, vec![CovariateField::x("x"), CovariateField::y("y")], Interaction::None)
        .unwrap()
        .with_coefficients(&[5.5, 1.0, 0.0])
        .unwrap();
    let p = sample_poisson(&SimConfig::new(m.clone(), 2)).unwrap();
    let s = build_scheme(&p, &m, (40, 40)).unwrap();
    let plan = PenaltyPlan::adaptive_from_scheme(&s, &[false, true, true], 1.0).unwrap();
    let path = fit_path(&s, &plan, &SolverOptions { n_tau: 40, ..Default::default() }).unwrap();
    let table = criterion_table(&path, &s, &DofMode::Count).unwrap();
    let (n, area) = (s.n_data() as f64, s.domain().area());
    let mut worst: f64 = 0.0;
    let mut worst_dof: f64 = 0.0;
    for (k, r) in table.records.iter().enumerate() {
        let d = path.coefficients[k].iter().filter(|b| **b != 0.0).count() as f64;
        let l = loglik(&s, &path.coefficients[k]);
        let b = -2.0 * l + n.ln() * d;
        worst = worst.max((b - r.cbic).abs() / b.abs().max(1.0));
        worst = worst.max((cbic(r.loglik, r.dof, s.n_data()) - r.cbic).abs() / b.abs().max(1.0));
        if r.tau > 0.0 {
            let e = -2.0 * l + (n / (area * r.tau)).ln() * d;
            worst = worst.max((e - r.ceric.unwrap()).abs() / e.abs().max(1.0));
            let lib = ceric(r.loglik, r.dof, s.n_data(), area, r.tau).unwrap();
            worst = worst.max((lib - e).abs() / e.abs().max(1.0));
        }
        let (_, h) = s.gradient_and_hessian(&path.coefficients[k]).unwrap();
        let sandwich = dof_sandwich(&s, &path.coefficients[k], &h).unwrap();
        worst_dof = worst_dof.max((sandwich - dof_count(&path.coefficients[k])).abs());
    }
    outcome(
        worst <= 1e-10 && worst_dof <= 1e-8,
        format!("max relative criterion mismatch {worst:.1e}, max |sandwich - count| {worst_dof:.1e}"),
    )
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("sparsepp-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("study.toml");
    let text = format!(
        "seed = 99\nreplicates = 12\nalpha = [0.6, 0.7]\ncriterion = \"cbic\"\n{SPARSITY_DESIGN}compare_plain = true\n\n\
         [ladder]\nwindows = [[0, 1, 0, 1], [0, 1.5, 0, 1.5]]\n"
    );
    std::fs::write(&cfg, text).unwrap();
    let runs: Vec<Vec<Vec<u8>>> = ["1", "4"]
        .iter()
        .enumerate()
        .map(|(i, threads)| {
            let out = dir.join(format!("run{i}"));
            let o = Command::new(env!("CARGO_BIN_EXE_sparsepp"))
                .env("RAYON_NUM_THREADS", threads)
                .args(["study", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .output()
                .unwrap();
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            let mut files: Vec<Vec<u8>> = ["study_summary.csv", "study_replicates.csv", "study_log.txt"]
                .iter()
                .map(|f| std::fs::read(out.join(f)).unwrap())
                .collect();
            files.push(o.stdout);
            files
        })
        .collect();
    let _ = std::fs::remove_dir_all(&dir);
    let identical = runs[0] == runs[1];
    outcome(identical, format!("two runs (1 and 4 worker threads), {} report bytes, identical {identical}", runs[0][1].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("closed-form MLE", closed_form_mle),
        ("gradient correctness", gradient_correctness),
        ("quadrature invariant", quadrature_invariant),
        ("path correctness", path_correctness),
        ("Campbell identity", campbell),
        ("GNZ identity", gnz),
        ("sparsity study", sparsity),
        ("consistency scaling", consistency),
        ("Gibbs fitting", gibbs_fit),
        ("criteria arithmetic", criteria_arithmetic),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    // cargo passes harness flags such as --list; there is nothing to list
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = f();
        println!("criterion {id:>2} {:<22} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
