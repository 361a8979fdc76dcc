//! Composite BIC / ERIC tuning-parameter selection along a path.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureScheme;
use crate::solver::PathFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Cbic,
    Ceric,
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cbic" => Ok(Criterion::Cbic),
            "ceric" => Ok(Criterion::Ceric),
            other => Err(Error::Config(format!("unknown criterion '{other}'"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Cbic => "cbic",
            Criterion::Ceric => "ceric",
        })
    }
}

/// How the effective number of parameters `d(tau)` is computed.
#[derive(Debug, Clone, PartialEq)]
pub enum DofMode {
    /// Number of nonzero coefficients.
    Count,
    /// `trace(H Sigma)` with `Sigma = H^-1 V H^-1` on the active set and a
    /// user-supplied score covariance `V` (full `q x q`).
    Sandwich(DMatrix<f64>),
}

pub fn dof_count(beta: &[f64]) -> f64 {
    beta.iter().filter(|b| **b != 0.0).count() as f64
}

/// `trace(H_A Sigma_A)` on the active set `A` of `beta`.
pub fn dof_sandwich(s: &QuadratureScheme, beta: &[f64], v: &DMatrix<f64>) -> Result<f64> {
    let q = s.n_coefficients();
    if v.nrows() != q || v.ncols() != q {
        return Err(Error::Dimension { expected: q, got: v.nrows() });
    }
    let active: Vec<usize> = (0..q).filter(|&j| beta[j] != 0.0).collect();
    if active.is_empty() {
        return Ok(0.0);
    }
    let (_, h) = s.gradient_and_hessian(beta)?;
    let k = active.len();
    let ha = DMatrix::from_fn(k, k, |a, b| h[(active[a], active[b])]);
    let va = DMatrix::from_fn(k, k, |a, b| v[(active[a], active[b])]);
    let hinv = ha.clone().try_inverse().ok_or(Error::SingularActiveHessian)?;
    if hinv.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularActiveHessian);
    }
    let sigma = &hinv * va * &hinv;
    Ok((ha * sigma).trace())
}

/// `-2 l + log(N) d`.
pub fn cbic(loglik: f64, dof: f64, n: usize) -> f64 {
    -2.0 * loglik + (n as f64).ln() * dof
}

/// `-2 l + log(N / (|D| tau)) d`.
pub fn ceric(loglik: f64, dof: f64, n: usize, area: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::ZeroTau);
    }
    Ok(-2.0 * loglik + (n as f64 / (area * tau)).ln() * dof)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionRecord {
    pub tau: f64,
    pub loglik: f64,
    pub dof: f64,
    pub cbic: f64,
    /// Absent at `tau = 0`.
    pub ceric: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionTable {
    pub records: Vec<CriterionRecord>,
    pub n: usize,
    pub area: f64,
    pub best_cbic: Option<usize>,
    pub best_ceric: Option<usize>,
}

impl CriterionTable {
    pub fn best(&self, c: Criterion) -> Option<usize> {
        match c {
            Criterion::Cbic => self.best_cbic,
            Criterion::Ceric => self.best_ceric,
        }
    }

    /// True when `d(tau)` never increases with `tau` over the converged points.
    pub fn dof_monotone(&self) -> bool {
        let pts: Vec<&CriterionRecord> = self.records.iter().filter(|r| r.converged).collect();
        pts.windows(2).all(|w| {
            let (a, b) = if w[0].tau >= w[1].tau { (w[0], w[1]) } else { (w[1], w[0]) };
            a.dof <= b.dof + 1e-12
        })
    }
}

/// Index of the smallest value; ties go to the earlier entry, i.e. the larger
/// `tau` on a decreasing path.
fn argmin(values: impl Iterator<Item = (usize, f64)>, taus: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if !v.is_finite() {
            continue;
        }
        best = match best {
            None => Some((i, v)),
            Some((j, b)) if v < b || (v == b && taus[i] > taus[j]) => Some((i, v)),
            keep => keep,
        };
    }
    best.map(|(i, _)| i)
}

/// Criteria at every path point, with `N` the number of data points and
/// `area` the fitting-domain area.
pub fn criterion_table(path: &PathFit, scheme: &QuadratureScheme, mode: &DofMode) -> Result<CriterionTable> {
    let n = scheme.n_data();
    let area = scheme.domain().area();
    let mut records = Vec::with_capacity(path.len());
    for k in 0..path.len() {
        let beta = &path.coefficients[k];
        let converged = path.converged[k];
        let dof = if !converged {
            f64::NAN
        } else {
            match mode {
                DofMode::Count => dof_count(beta),
                DofMode::Sandwich(v) => dof_sandwich(scheme, beta, v)?,
            }
        };
        let l = path.loglik[k];
        let tau = path.taus[k];
        records.push(CriterionRecord {
            tau,
            loglik: l,
            dof,
            cbic: cbic(l, dof, n),
            ceric: ceric(l, dof, n, area, tau).ok(),
            converged,
        });
    }
    let taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    let best_cbic = argmin(records.iter().enumerate().filter(|(_, r)| r.converged).map(|(i, r)| (i, r.cbic)), &taus);
    let best_ceric = argmin(
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.converged)
            .filter_map(|(i, r)| r.ceric.map(|c| (i, c))),
        &taus,
    );
    Ok(CriterionTable { records, n, area, best_cbic, best_ceric })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub tau: f64,
    pub coefficients: Vec<f64>,
    pub value: f64,
}

pub fn select_from_table(path: &PathFit, table: &CriterionTable, criterion: Criterion) -> Result<Selection> {
    let index = table.best(criterion).ok_or(Error::NoConvergedPoint)?;
    let r = &table.records[index];
    Ok(Selection {
        index,
        tau: path.taus[index],
        coefficients: path.coefficients[index].clone(),
        value: match criterion {
            Criterion::Cbic => r.cbic,
            Criterion::Ceric => r.ceric.unwrap_or(f64::NAN),
        },
    })
}

/// Path point minimising the criterion (count degrees of freedom).
pub fn select(path: &PathFit, scheme: &QuadratureScheme, criterion: Criterion) -> Result<Selection> {
    let table = criterion_table(path, scheme, &DofMode::Count)?;
    select_from_table(path, &table, criterion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, PointPattern, Window};
    use crate::model::{CovariateField, Interaction, ModelSpec};
    use crate::quadrature::build_scheme;
    use crate::solver::{fit_path, PenaltyPlan, SolverOptions};
    use proptest::prelude::*;

    #[test]
    fn count_dof() {
        assert_eq!(dof_count(&[4.6, 0.0, 0.0, 1.2]), 2.0);
    }

    #[test]
    fn criterion_arithmetic() {
        let v = cbic(-50.0, 3.0, 100);
        assert!((v - (100.0 + 3.0 * 100f64.ln())).abs() < 1e-12);
        assert!((v - 113.8155).abs() < 1e-4);
        assert_eq!(cbic(-50.0, 0.0, 100), 100.0);
        let e = ceric(-50.0, 3.0, 100, 1.0, 0.1).unwrap();
        assert!((e - 120.7233).abs() < 1e-4);
        assert_eq!(ceric(-50.0, 3.0, 100, 1.0, 100.0).unwrap(), 100.0);
        assert_eq!(ceric(-50.0, 3.0, 100, 1.0, 0.0), Err(Error::ZeroTau));
    }

    proptest! {
        #[test]
        fn criteria_are_affine_in_dof(l in -1e4..1e4f64, d in 0.0..30.0f64, n in 1usize..10_000, area in 0.01..100.0f64, tau in 1e-6..10.0f64) {
            let b = cbic(l, d, n);
            let e = ceric(l, d, n, area, tau).unwrap();
            prop_assert!((b - (-2.0 * l + (n as f64).ln() * d)).abs() <= 1e-10 * b.abs().max(1.0));
            prop_assert!(((e - b) - d * (1.0 / (area * tau)).ln()).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    fn small_problem() -> (QuadratureScheme, PathFit) {
        let w = Window::unit();
        let pts: Vec<Point> = (1..=150)
            .map(|i| Point::new((i as f64 * 0.754_877_7).fract(), (i as f64 * 0.569_840_3).fract().powf(0.7)))
            .collect();
        let p = PointPattern::new(pts, w).unwrap();
        let m = ModelSpec::with_intercept(w, vec![CovariateField::x("x"), CovariateField::y("y")], Interaction::None)
            .unwrap();
        let s = build_scheme(&p, &m, (16, 16)).unwrap();
        let plan = PenaltyPlan::lasso(&[false, true, true]);
        let fit = fit_path(&s, &plan, &SolverOptions { n_tau: 20, ..Default::default() }).unwrap();
        (s, fit)
    }

    #[test]
    fn sandwich_with_hessian_equals_count() {
        let (s, fit) = small_problem();
        for beta in &fit.coefficients {
            let (_, h) = s.gradient_and_hessian(beta).unwrap();
            let d = dof_sandwich(&s, beta, &h).unwrap();
            assert!((d - dof_count(beta)).abs() < 1e-8);
        }
        // tau_max with only the intercept unpenalized
        assert_eq!(dof_count(&fit.coefficients[0]), 1.0);
    }

    #[test]
    fn table_and_selection() {
        let (s, fit) = small_problem();
        let t = criterion_table(&fit, &s, &DofMode::Count).unwrap();
        assert_eq!(t.records.len(), fit.len());
        assert!(t.records.last().unwrap().ceric.is_none());
        let sel = select(&fit, &s, Criterion::Cbic).unwrap();
        let min = t.records.iter().map(|r| r.cbic).fold(f64::INFINITY, f64::min);
        assert_eq!(sel.value, min);
        let sel = select(&fit, &s, Criterion::Ceric).unwrap();
        assert!(sel.tau > 0.0);
    }

    #[test]
    fn selection_ignores_unconverged_points() {
        let (s, fit) = small_problem();
        let base = select(&fit, &s, Criterion::Cbic).unwrap();
        let mut extended = fit.clone();
        extended.taus.push(0.0);
        extended.coefficients.push(vec![0.0, 0.0, 0.0]);
        extended.loglik.push(1e9);
        extended.kkt.push(1.0);
        extended.converged.push(false);
        extended.active.push(0);
        extended.iterations.push(0);
        extended.errors.push(None);
        let again = select(&extended, &s, Criterion::Cbic).unwrap();
        assert_eq!(base, again);
    }

    #[test]
    fn ties_prefer_larger_tau() {
        let taus = [0.5, 0.25];
        assert_eq!(argmin([(0, 3.0), (1, 3.0)].into_iter(), &taus), Some(0));
        assert_eq!(argmin([(0, 3.0)].into_iter(), &taus), Some(0));
        assert_eq!(argmin(std::iter::empty(), &taus), None);
    }
}
