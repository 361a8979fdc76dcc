//! Replicated simulation study over an increasing sequence of windows.
//!
//! Each rung of the ladder simulates the true model, fits the selected
//! estimator(s) and records estimation error and support recovery. Replicates
//! run in parallel and are merged by index, so reports are byte-identical for
//! a fixed configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fit::{fit_scheme, FitOptions, PenaltyKind};
use crate::geometry::{Point, Window};
use crate::io::read_raster;
use crate::model::{CovariateField, Interaction, ModelSpec, Raster};
use crate::numeric::{fmt_f64, median, KahanSum};
use crate::quadrature::build_scheme;
use crate::selection::Criterion;
use crate::simulate::{grid_integral, rng_for, sample_replicate, DEFAULT_BURN_IN};
use crate::solver::{fit_at_tau, SolverOptions};

/// Resolution of the midpoint rule used for expected counts.
const MASS_GRID: usize = 512;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub replicates: usize,
    #[serde(default = "default_criterion")]
    pub criterion: String,
    /// Exponents for the fixed tuning rule `tau = N^-alpha`.
    #[serde(default)]
    pub alpha: Vec<f64>,
    pub model: ModelSection,
    #[serde(default)]
    pub covariates: CovariateSection,
    pub ladder: LadderSection,
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// One coefficient per covariate, zeros marking noise covariates.
    pub coefficients: Vec<f64>,
    pub intercept: Option<f64>,
    /// Expected count on the first rung; sets the intercept when `intercept` is absent.
    pub target_count: Option<f64>,
    pub interaction_range: Option<f64>,
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateSection {
    /// Raster files, one per coefficient. Synthetic fields are used when empty.
    pub files: Vec<PathBuf>,
    pub seed: u64,
    pub components: usize,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
    pub cells_per_unit: usize,
}

impl Default for CovariateSection {
    fn default() -> Self {
        CovariateSection {
            files: Vec::new(),
            seed: 0,
            components: 4,
            min_wavelength: 0.2,
            max_wavelength: 0.6,
            cells_per_unit: 64,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    /// `[xmin, xmax, ymin, ymax]` per rung.
    pub windows: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub method: String,
    pub gamma: f64,
    pub ntau: usize,
    pub tau_min_ratio: f64,
    /// Also fit the plain lasso when the primary method is adaptive.
    pub compare_plain: bool,
    /// Dummy grid cells per unit length along each axis.
    pub dummy_per_unit: usize,
}

impl Default for PenaltySection {
    fn default() -> Self {
        PenaltySection {
            method: "adaptive".into(),
            gamma: 1.0,
            ntau: 100,
            tau_min_ratio: 1e-4,
            compare_plain: true,
            dummy_per_unit: 64,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub burn_in: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { burn_in: DEFAULT_BURN_IN }
    }
}

fn default_criterion() -> String {
    "cbic".into()
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative raster paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in &mut cfg.covariates.files {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn criterion(&self) -> Result<Criterion> {
        self.criterion.parse()
    }

    pub fn penalty_kind(&self) -> Result<PenaltyKind> {
        match self.penalty.method.parse()? {
            PenaltyKind::None => Err(Error::Config("a study needs a penalized method".into())),
            k => Ok(k),
        }
    }

    pub fn windows(&self) -> Result<Vec<Window>> {
        self.ladder.windows.iter().map(|w| Window::new(w[0], w[1], w[2], w[3])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.replicates == 0 {
            return bad("replicates must be positive");
        }
        self.criterion()?;
        self.penalty_kind()?;
        let m = &self.model;
        if m.coefficients.is_empty() {
            return bad("model.coefficients must list at least one covariate");
        }
        if m.coefficients.iter().any(|b| !b.is_finite()) {
            return bad("model.coefficients must be finite");
        }
        match (m.intercept, m.target_count) {
            (Some(_), Some(_)) | (None, None) => return bad("give exactly one of model.intercept and model.target_count"),
            (None, Some(t)) if !(t > 0.0 && t.is_finite()) => return bad("model.target_count must be positive"),
            _ => {}
        }
        match (m.interaction_range, m.psi) {
            (Some(r), Some(_)) if !(r > 0.0 && r.is_finite()) => return bad("model.interaction_range must be positive"),
            (Some(_), None) | (None, Some(_)) => return bad("model.interaction_range and model.psi go together"),
            _ => {}
        }
        let c = &self.covariates;
        if !c.files.is_empty() && c.files.len() != m.coefficients.len() {
            return bad("covariates.files needs one raster per coefficient");
        }
        if c.files.is_empty()
            && (c.components == 0
                || c.cells_per_unit == 0
                || !(c.min_wavelength > 0.0 && c.min_wavelength <= c.max_wavelength && c.max_wavelength.is_finite()))
        {
            return bad("synthetic covariates need components > 0, cells_per_unit > 0 and 0 < min_wavelength <= max_wavelength");
        }
        let windows = self.windows()?;
        if windows.is_empty() {
            return bad("ladder.windows must list at least one window");
        }
        if windows.windows(2).any(|w| w[1].area() <= w[0].area()) {
            return bad("ladder windows must strictly increase in area");
        }
        let p = &self.penalty;
        if !(p.gamma > 0.0 && p.gamma.is_finite()) {
            return bad("penalty.gamma must be positive");
        }
        if p.ntau < 2 || !(p.tau_min_ratio > 0.0 && p.tau_min_ratio < 1.0) || p.dummy_per_unit == 0 {
            return bad("penalty needs ntau >= 2, 0 < tau_min_ratio < 1 and dummy_per_unit > 0");
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad("alpha values must be positive");
        }
        Ok(())
    }
}

/// A smooth random field: a sum of plane waves with seeded amplitude,
/// direction, wavelength and phase.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidField {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl SinusoidField {
    pub fn new(seed: u64, index: u64, components: usize, min_wavelength: f64, max_wavelength: f64) -> Self {
        let mut rng = rng_for(seed, index);
        let waves = (0..components)
            .map(|_| {
                let amp: f64 = rng.gen_range(0.5..1.5);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let wavelength = if max_wavelength > min_wavelength {
                    rng.gen_range(min_wavelength..max_wavelength)
                } else {
                    min_wavelength
                };
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                (amp, k * angle.cos(), k * angle.sin(), phase)
            })
            .collect();
        SinusoidField { waves }
    }

    pub fn value(&self, u: Point) -> f64 {
        self.waves.iter().map(|(a, kx, ky, ph)| a * (kx * u.x + ky * u.y + ph).cos()).sum()
    }

    /// Cell-centre raster over `w`, standardized to mean 0 and variance 1.
    pub fn rasterize(&self, w: &Window, cells_per_unit: usize) -> Result<Raster> {
        let ncols = ((w.width() * cells_per_unit as f64).round() as usize).max(1);
        let nrows = ((w.height() * cells_per_unit as f64).round() as usize).max(1);
        let (dx, dy) = (w.width() / ncols as f64, w.height() / nrows as f64);
        let mut values = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            let y = w.ymax() - (i as f64 + 0.5) * dy;
            for j in 0..ncols {
                values.push(self.value(Point::new(w.xmin() + (j as f64 + 0.5) * dx, y)));
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().copied().collect::<KahanSum>().value() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).collect::<KahanSum>().value() / n;
        if !(var > 0.0) {
            return Err(Error::Config("synthetic covariate is constant on the window".into()));
        }
        let sd = var.sqrt();
        for v in &mut values {
            *v = (*v - mean) / sd;
        }
        Raster::new(nrows, ncols, *w, values)
    }
}

/// The true model on one rung of the ladder.
#[derive(Debug, Clone)]
pub struct Rung {
    pub window: Window,
    pub model: ModelSpec,
    /// Integral of the trend over the window.
    pub trend_mass: f64,
}

fn covariates_on(cfg: &StudyConfig, w: &Window, files: &[Raster]) -> Result<Vec<CovariateField>> {
    let c = &cfg.covariates;
    (0..cfg.model.coefficients.len())
        .map(|k| {
            let name = format!("z{}", k + 1);
            if files.is_empty() {
                let f = SinusoidField::new(c.seed, k as u64, c.components, c.min_wavelength, c.max_wavelength);
                Ok(CovariateField::raster(name, f.rasterize(w, c.cells_per_unit)?))
            } else {
                Ok(CovariateField::raster(name, files[k].clone()))
            }
        })
        .collect()
}

fn trend_mass(m: &ModelSpec) -> Result<f64> {
    let mass = grid_integral(m.window(), MASS_GRID, |u| m.trend_eta(u).exp());
    if mass.is_finite() {
        Ok(mass)
    } else {
        Err(Error::NonFinite("trend integral overflows".into()))
    }
}

/// Builds the true model on every rung. With a target count the intercept
/// is solved on the first rung and kept fixed.
pub fn build_rungs(cfg: &StudyConfig) -> Result<Vec<Rung>> {
    cfg.validate()?;
    let files: Vec<Raster> = cfg.covariates.files.iter().map(|f| read_raster(f)).collect::<Result<_>>()?;
    let interaction = match cfg.model.interaction_range {
        Some(r) => Interaction::strauss(r)?,
        None => Interaction::None,
    };
    let mut intercept = cfg.model.intercept;
    let mut rungs = Vec::new();
    for w in cfg.windows()? {
        let mut m = ModelSpec::with_intercept(w, covariates_on(cfg, &w, &files)?, interaction)?;
        let mut theta = vec![0.0];
        theta.extend(&cfg.model.coefficients);
        theta.extend(cfg.model.psi);
        m.set_coefficients(&theta)?;
        let b0 = match intercept {
            Some(b) => b,
            None => {
                let b = cfg.model.target_count.unwrap().ln() - trend_mass(&m)?.ln();
                intercept = Some(b);
                b
            }
        };
        theta[0] = b0;
        m.set_coefficients(&theta)?;
        let trend_mass = trend_mass(&m)?;
        rungs.push(Rung { window: w, model: m, trend_mass });
    }
    Ok(rungs)
}

/// Result of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub rung: usize,
    pub replicate: usize,
    pub method: PenaltyKind,
    pub selector: String,
    pub n: usize,
    pub outcome: std::result::Result<Estimate, (String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub tau: f64,
    pub coefficients: Vec<f64>,
    pub error: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub exact: bool,
}

impl Estimate {
    fn new(tau: f64, coefficients: Vec<f64>, truth: &[f64], mask: &[bool]) -> Self {
        let error = coefficients.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).collect::<KahanSum>().value().sqrt();
        let (mut tp, mut fp, mut exact) = (0, 0, true);
        for j in (0..truth.len()).filter(|&j| mask[j]) {
            let selected = coefficients[j] != 0.0;
            let active = truth[j] != 0.0;
            tp += usize::from(selected && active);
            fp += usize::from(selected && !active);
            exact &= selected == active;
        }
        Estimate { tau, coefficients, error, true_positives: tp, false_positives: fp, exact }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rung: usize,
    pub window: Window,
    pub trend_mass: f64,
    pub method: PenaltyKind,
    pub selector: String,
    pub replicates: usize,
    pub failures: usize,
    pub mean_n: f64,
    pub median_error: f64,
    /// Median of `error * sqrt(N)`.
    pub median_error_sqrt_mu: f64,
    /// Median of `error * sqrt(N / q)` with `q` the number of coefficients.
    pub median_error_sqrt_mu_over_p: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub exact_support: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub names: Vec<String>,
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
    /// One line per failed estimator run.
    pub log: Vec<String>,
}

fn run_replicate(cfg: &StudyConfig, rung_index: usize, rung: &Rung, r: usize) -> Vec<ReplicateRecord> {
    let primary = cfg.penalty_kind().expect("validated");
    let criterion = cfg.criterion().expect("validated");
    let mut methods = vec![primary];
    if primary == PenaltyKind::Adaptive && cfg.penalty.compare_plain {
        methods.push(PenaltyKind::Lasso);
    }
    let mut selectors = vec![criterion.to_string()];
    selectors.extend(cfg.alpha.iter().map(|a| format!("alpha={a}")));

    let m = &rung.model;
    let truth = m.coefficients();
    let mask = m.penalty_mask().to_vec();
    let stream = ((rung_index as u64) << 32) | r as u64;
    let w = rung.window;
    let grid = (
        ((w.width() * cfg.penalty.dummy_per_unit as f64).round() as usize).max(1),
        ((w.height() * cfg.penalty.dummy_per_unit as f64).round() as usize).max(1),
    );
    let opts = FitOptions {
        gamma: cfg.penalty.gamma,
        solver: SolverOptions { n_tau: cfg.penalty.ntau, tau_min_ratio: cfg.penalty.tau_min_ratio, ..Default::default() },
        dummy_grid: grid,
        criterion,
        ..Default::default()
    };

    let record = |method, selector: &str, n, outcome| ReplicateRecord {
        rung: rung_index,
        replicate: r,
        method,
        selector: selector.to_string(),
        n,
        outcome,
    };
    let fail_all = |n, e: &Error| {
        methods
            .iter()
            .flat_map(|k| selectors.iter().map(move |s| (*k, s)))
            .map(|(k, s)| record(k, s, n, Err((e.code().to_string(), e.to_string()))))
            .collect::<Vec<_>>()
    };

    let pattern = match sample_replicate(m, cfg.seed, stream, cfg.simulation.burn_in, 0) {
        Ok(p) => p,
        Err(e) => return fail_all(0, &e),
    };
    let n = pattern.len();
    let scheme = match build_scheme(&pattern, m, grid) {
        Ok(s) => s,
        Err(e) => return fail_all(n, &e),
    };

    let mut out = Vec::new();
    for &method in &methods {
        let fit = fit_scheme(scheme.clone(), &mask, &FitOptions { penalty: method, ..opts.clone() });
        let fit = match fit {
            Ok(f) => f,
            Err(e) => {
                out.extend(selectors.iter().map(|s| record(method, s, n, Err((e.code().to_string(), e.to_string())))));
                continue;
            }
        };
        out.push(record(
            method,
            &selectors[0],
            n,
            Ok(Estimate::new(fit.selected_tau, fit.selected.clone(), &truth, &mask)),
        ));
        let (Some(path), Some(plan)) = (fit.path.as_ref(), fit.plan.as_ref()) else {
            for sel in &selectors[1..] {
                out.push(record(method, sel, n, Ok(Estimate::new(0.0, fit.selected.clone(), &truth, &mask))));
            }
            continue;
        };
        for (a, sel) in cfg.alpha.iter().zip(&selectors[1..]) {
            let tau = (n.max(1) as f64).powf(-a);
            // warm start from the last path point that is still at least as penalized
            let warm = (0..path.len()).rev().find(|&k| path.taus[k] >= tau && path.converged[k]);
            let res = fit_at_tau(&fit.scheme, plan, tau, warm.map(|k| path.coefficients[k].as_slice()), &opts.solver)
                .and_then(|pt| if pt.converged { Ok(pt) } else { Err(Error::Diverged { iterations: pt.iterations }) });
            out.push(record(
                method,
                sel,
                n,
                res.map(|pt| Estimate::new(tau, pt.coefficients, &truth, &mask))
                    .map_err(|e| (e.code().to_string(), e.to_string())),
            ));
        }
    }
    out
}

fn summarize(rung_index: usize, rung: &Rung, q: usize, records: &[&ReplicateRecord]) -> SummaryRow {
    let first = records[0];
    let ok: Vec<(usize, &Estimate)> =
        records.iter().filter_map(|r| r.outcome.as_ref().ok().map(|e| (r.n, e))).collect();
    let truth = rung.model.coefficients();
    let mask = rung.model.penalty_mask();
    let n_active = (0..q).filter(|&j| mask[j] && truth[j] != 0.0).count();
    let n_noise = (0..q).filter(|&j| mask[j] && truth[j] == 0.0).count();
    let mean_of = |f: &dyn Fn(usize, &Estimate) -> f64| -> Option<f64> {
        if ok.is_empty() {
            None
        } else {
            Some(ok.iter().map(|(n, e)| f(*n, e)).collect::<KahanSum>().value() / ok.len() as f64)
        }
    };
    let med = |f: &dyn Fn(usize, &Estimate) -> f64| -> f64 {
        let v: Vec<f64> = ok.iter().map(|(n, e)| f(*n, e)).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            median(&v)
        }
    };
    SummaryRow {
        rung: rung_index,
        window: rung.window,
        trend_mass: rung.trend_mass,
        method: first.method,
        selector: first.selector.clone(),
        replicates: records.len(),
        failures: records.len() - ok.len(),
        mean_n: records.iter().map(|r| r.n as f64).collect::<KahanSum>().value() / records.len() as f64,
        median_error: med(&|_, e| e.error),
        median_error_sqrt_mu: med(&|n, e| e.error * (n as f64).sqrt()),
        median_error_sqrt_mu_over_p: med(&|n, e| e.error * (n as f64 / q as f64).sqrt()),
        tpr: if n_active == 0 { None } else { mean_of(&|_, e| e.true_positives as f64 / n_active as f64) },
        fpr: if n_noise == 0 { None } else { mean_of(&|_, e| e.false_positives as f64 / n_noise as f64) },
        exact_support: mean_of(&|_, e| f64::from(u8::from(e.exact))),
    }
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let rungs = build_rungs(cfg)?;
    let names = rungs[0].model.coefficient_names();
    let q = names.len();
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for (i, rung) in rungs.iter().enumerate() {
        let per_rep: Vec<Vec<ReplicateRecord>> =
            (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, i, rung, r)).collect();
        let rung_records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
        let mut keys: Vec<(PenaltyKind, String)> = Vec::new();
        for r in &rung_records {
            if !keys.iter().any(|(m, s)| *m == r.method && *s == r.selector) {
                keys.push((r.method, r.selector.clone()));
            }
        }
        for (m, s) in keys {
            let group: Vec<&ReplicateRecord> =
                rung_records.iter().filter(|r| r.method == m && r.selector == s).collect();
            summary.push(summarize(i, rung, q, &group));
        }
        records.extend(rung_records);
    }
    let log = records
        .iter()
        .filter_map(|r| {
            r.outcome.as_ref().err().map(|(code, msg)| {
                format!("rung={} replicate={} method={} selector={}: {code}: {msg}", r.rung, r.replicate, r.method, r.selector)
            })
        })
        .collect();
    Ok(StudyReport { names, records, summary, log })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

impl StudyReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "rung,xmin,xmax,ymin,ymax,area,trend_mass,method,selector,replicates,failures,mean_n,\
             median_error,median_error_sqrt_mu,median_error_sqrt_mu_over_p,tpr,fpr,exact_support\n",
        );
        for s in &self.summary {
            let w = s.window;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.rung,
                fmt_f64(w.xmin()),
                fmt_f64(w.xmax()),
                fmt_f64(w.ymin()),
                fmt_f64(w.ymax()),
                fmt_f64(w.area()),
                fmt_f64(s.trend_mass),
                s.method,
                s.selector,
                s.replicates,
                s.failures,
                fmt_f64(s.mean_n),
                fmt_f64(s.median_error),
                fmt_f64(s.median_error_sqrt_mu),
                fmt_f64(s.median_error_sqrt_mu_over_p),
                opt(s.tpr),
                opt(s.fpr),
                opt(s.exact_support),
            );
        }
        out
    }

    pub fn replicates_csv(&self) -> String {
        let mut out = String::from("rung,replicate,method,selector,status,n,tau,error,true_positives,false_positives,exact");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{},{},", r.rung, r.replicate, r.method, r.selector);
            match &r.outcome {
                Ok(e) => {
                    let _ = write!(
                        out,
                        "ok,{},{},{},{},{},{}",
                        r.n,
                        fmt_f64(e.tau),
                        fmt_f64(e.error),
                        e.true_positives,
                        e.false_positives,
                        u8::from(e.exact)
                    );
                    for b in &e.coefficients {
                        out.push(',');
                        out.push_str(&fmt_f64(*b));
                    }
                }
                Err((code, _)) => {
                    let _ = write!(out, "{code},{},NA,NA,NA,NA,NA", r.n);
                    for _ in &self.names {
                        out.push_str(",NA");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn row(&self, rung: usize, method: PenaltyKind, selector: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.rung == rung && s.method == method && s.selector == selector)
    }
}
