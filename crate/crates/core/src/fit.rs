//! End-to-end fitting: quadrature, pilot fit, penalty plan, path and selection.

use crate::error::{Error, Result};
use crate::geometry::PointPattern;
use crate::model::ModelSpec;
use crate::quadrature::{build_scheme, QuadratureScheme, DEFAULT_DUMMY_GRID};
use crate::selection::{criterion_table, select_from_table, Criterion, CriterionTable, DofMode};
use crate::solver::{fit_path, fit_unpenalized, kkt_residual, tuning_extremes, PathFit, PenaltyPlan, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    None,
    Lasso,
    Adaptive,
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PenaltyKind::None),
            "lasso" => Ok(PenaltyKind::Lasso),
            "adaptive" => Ok(PenaltyKind::Adaptive),
            other => Err(Error::Config(format!("unknown penalty '{other}'"))),
        }
    }
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PenaltyKind::None => "none",
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::Adaptive => "adaptive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub penalty: PenaltyKind,
    pub gamma: f64,
    pub solver: SolverOptions,
    pub dummy_grid: (usize, usize),
    pub criterion: Criterion,
    pub dof: DofMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            penalty: PenaltyKind::Adaptive,
            gamma: 1.0,
            solver: SolverOptions::default(),
            dummy_grid: DEFAULT_DUMMY_GRID,
            criterion: Criterion::Cbic,
            dof: DofMode::Count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub weight_sum_error: f64,
    /// Fewer than four dummy nodes per data node.
    pub sparse_dummies: bool,
    /// Largest realised `tau * v_j` over the selected nonzero penalized coefficients.
    pub a_n: Option<f64>,
    /// Smallest realised `tau * v_j` over the selected zero penalized coefficients.
    pub b_n: Option<f64>,
    pub kkt_selected: f64,
    pub dof_monotone: Option<bool>,
    pub pilot_ridge: Option<f64>,
    pub failed_path_points: usize,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub scheme: QuadratureScheme,
    pub unpenalized: Option<Vec<f64>>,
    pub plan: Option<PenaltyPlan>,
    pub path: Option<PathFit>,
    pub table: Option<CriterionTable>,
    pub selected_index: Option<usize>,
    pub selected_tau: f64,
    pub selected: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl FitOutcome {
    pub fn names(&self) -> &[String] {
        self.scheme.coefficient_names()
    }
}

/// Builds the scheme for `m` and fits it to `p` according to `opts`.
pub fn fit_model(p: &PointPattern, m: &ModelSpec, opts: &FitOptions) -> Result<FitOutcome> {
    let scheme = build_scheme(p, m, opts.dummy_grid)?;
    fit_scheme(scheme, m.penalty_mask(), opts)
}

pub fn fit_scheme(scheme: QuadratureScheme, mask: &[bool], opts: &FitOptions) -> Result<FitOutcome> {
    let weight_sum_error = scheme.weight_sum_error();
    let sparse_dummies = scheme.n_dummy() < 4 * scheme.n_data();
    let mut diagnostics = Diagnostics {
        weight_sum_error,
        sparse_dummies,
        a_n: None,
        b_n: None,
        kkt_selected: f64::NAN,
        dof_monotone: None,
        pilot_ridge: None,
        failed_path_points: 0,
    };

    // nothing to penalize: every method reduces to the unpenalized fit
    if opts.penalty == PenaltyKind::None || !mask.iter().any(|m| *m) {
        let beta = fit_unpenalized(&scheme)?;
        let plan = PenaltyPlan::from_multipliers(vec![0.0; beta.len()])?;
        diagnostics.kkt_selected = kkt_residual(&scheme, &plan, 0.0, &beta)?;
        return Ok(FitOutcome {
            scheme,
            unpenalized: Some(beta.clone()),
            plan: None,
            path: None,
            table: None,
            selected_index: None,
            selected_tau: 0.0,
            selected: beta,
            diagnostics,
        });
    }

    let (plan, unpenalized) = match opts.penalty {
        PenaltyKind::Adaptive => {
            let plan = PenaltyPlan::adaptive_from_scheme(&scheme, mask, opts.gamma)?;
            let pilot = plan.pilot().map(|b| b.to_vec());
            diagnostics.pilot_ridge = plan.pilot_ridge();
            (plan, pilot.filter(|_| diagnostics.pilot_ridge.is_none()))
        }
        _ => (PenaltyPlan::lasso(mask), fit_unpenalized(&scheme).ok()),
    };
    let path = fit_path(&scheme, &plan, &opts.solver)?;
    let table = criterion_table(&path, &scheme, &opts.dof)?;
    let sel = select_from_table(&path, &table, opts.criterion)?;
    let support: Vec<bool> = sel.coefficients.iter().map(|b| *b != 0.0).collect();
    let (a_n, b_n) = tuning_extremes(sel.tau, &plan, &support);
    diagnostics.a_n = a_n;
    diagnostics.b_n = b_n;
    diagnostics.kkt_selected = path.kkt[sel.index];
    diagnostics.dof_monotone = Some(table.dof_monotone());
    diagnostics.failed_path_points = path.converged.iter().filter(|c| !**c).count();
    Ok(FitOutcome {
        scheme,
        unpenalized,
        plan: Some(plan),
        selected_index: Some(sel.index),
        selected_tau: sel.tau,
        selected: sel.coefficients,
        path: Some(path),
        table: Some(table),
        diagnostics,
    })
}
