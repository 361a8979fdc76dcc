//! Penalized quadrature-likelihood maximisation.
//!
//! The objective along the path is
//!
//! ```text
//! Q(beta) = l(beta) / mu - tau * sum_j v_j |beta_j|
//! ```
//!
//! where `l` is the quadrature log-likelihood, `mu` the observed number of
//! data points and `v_j` the per-coefficient multipliers of a [`PenaltyPlan`].
//! Each `tau` is solved by proximal Newton steps (a quadratic expansion of `l`
//! at the current iterate) whose penalized subproblem is solved by cyclic
//! coordinate descent with soft thresholding.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numeric::{dot, soft_threshold};
use crate::quadrature::QuadratureScheme;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub n_tau: usize,
    pub tau_min_ratio: f64,
    /// Coordinate descent stops when no coefficient moves by more than this.
    pub inner_tol: f64,
    /// Outer iterations stop once the KKT residual falls below this.
    pub outer_tol: f64,
    pub max_inner_sweeps: usize,
    pub max_outer: usize,
    /// A path point counts as converged when its KKT residual is below this.
    pub converged_kkt: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            n_tau: 100,
            tau_min_ratio: 1e-4,
            inner_tol: 1e-9,
            outer_tol: 1e-9,
            max_inner_sweeps: 100,
            max_outer: 25,
            converged_kkt: 1e-6,
        }
    }
}

pub const NEWTON_MAX_ITER: usize = 50;

/// Per-coefficient penalty multipliers `v_j` (zero means unpenalized).
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyPlan {
    multipliers: Vec<f64>,
    gamma: Option<f64>,
    pilot: Option<Vec<f64>>,
    pilot_ridge: Option<f64>,
}

impl PenaltyPlan {
    pub fn from_multipliers(multipliers: Vec<f64>) -> Result<Self> {
        if multipliers.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidPenalty("multipliers must be finite and nonnegative".into()));
        }
        Ok(PenaltyPlan { multipliers, gamma: None, pilot: None, pilot_ridge: None })
    }

    /// Plain lasso: `v_j = 1` on masked coefficients.
    pub fn lasso(mask: &[bool]) -> Self {
        PenaltyPlan {
            multipliers: mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            gamma: None,
            pilot: None,
            pilot_ridge: None,
        }
    }

    /// Adaptive lasso: `v_j = 1 / |pilot_j|^gamma` on masked coefficients.
    pub fn adaptive(mask: &[bool], pilot: &[f64], gamma: f64) -> Result<Self> {
        if mask.len() != pilot.len() {
            return Err(Error::Dimension { expected: mask.len(), got: pilot.len() });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidPenalty(format!("gamma must be positive, got {gamma}")));
        }
        let mut multipliers = Vec::with_capacity(mask.len());
        for (j, (&m, &b)) in mask.iter().zip(pilot).enumerate() {
            if !m {
                multipliers.push(0.0);
                continue;
            }
            if b == 0.0 {
                return Err(Error::ZeroPilot(j));
            }
            let v = b.abs().powf(-gamma);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("adaptive weight for coefficient {j}")));
            }
            multipliers.push(v);
        }
        Ok(PenaltyPlan { multipliers, gamma: Some(gamma), pilot: Some(pilot.to_vec()), pilot_ridge: None })
    }

    /// Adaptive plan with the unpenalized fit as pilot. A rank-deficient design
    /// falls back to a ridge-stabilised pilot, recorded in [`PenaltyPlan::pilot_ridge`].
    pub fn adaptive_from_scheme(s: &QuadratureScheme, mask: &[bool], gamma: f64) -> Result<Self> {
        let (pilot, ridge) = match fit_unpenalized(s) {
            Ok(b) => (b, None),
            Err(Error::Singular) => {
                let theta0 = initial_guess(s);
                let (_, h) = s.gradient_and_hessian(&theta0)?;
                let ridge = 1e-6 * h.trace() / s.n_coefficients() as f64;
                let all: Vec<usize> = (0..s.n_coefficients()).collect();
                (newton_fit(s, &all, theta0, ridge)?, Some(ridge))
            }
            Err(e) => return Err(e),
        };
        let mut plan = Self::adaptive(mask, &pilot, gamma)?;
        plan.pilot_ridge = ridge;
        Ok(plan)
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }
    pub fn pilot(&self) -> Option<&[f64]> {
        self.pilot.as_deref()
    }
    pub fn pilot_ridge(&self) -> Option<f64> {
        self.pilot_ridge
    }

    pub fn is_penalized(&self, j: usize) -> bool {
        self.multipliers[j] > 0.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut p = self.clone();
        for v in &mut p.multipliers {
            *v *= c;
        }
        p
    }

    fn check(&self, q: usize) -> Result<()> {
        if self.multipliers.len() != q {
            return Err(Error::Dimension { expected: q, got: self.multipliers.len() });
        }
        Ok(())
    }
}

/// Largest and smallest realised tuning parameters `tau * v_j` over the
/// penalized coefficients inside and outside `support`.
pub fn tuning_extremes(tau: f64, plan: &PenaltyPlan, support: &[bool]) -> (Option<f64>, Option<f64>) {
    let mut a: Option<f64> = None;
    let mut b: Option<f64> = None;
    for (j, &v) in plan.multipliers().iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        let t = tau * v;
        if support[j] {
            a = Some(a.map_or(t, |x| x.max(t)));
        } else {
            b = Some(b.map_or(t, |x| x.min(t)));
        }
    }
    (a, b)
}

/// Regularisation path with coefficients on the original covariate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFit {
    pub names: Vec<String>,
    pub taus: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub loglik: Vec<f64>,
    pub kkt: Vec<f64>,
    pub converged: Vec<bool>,
    pub active: Vec<usize>,
    pub iterations: Vec<usize>,
    pub errors: Vec<Option<String>>,
    pub mu_hat: f64,
    pub tau_max: f64,
    pub multipliers: Vec<f64>,
}

impl PathFit {
    pub fn len(&self) -> usize {
        self.taus.len()
    }
    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

/// A single solved value of `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub tau: f64,
    pub coefficients: Vec<f64>,
    pub loglik: f64,
    pub kkt: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn mu_hat(s: &QuadratureScheme) -> Result<f64> {
    if s.n_data() == 0 {
        return Err(Error::InvalidModel("no data points inside the fitting domain".into()));
    }
    Ok(s.n_data() as f64)
}

fn constant_columns(s: &QuadratureScheme) -> Vec<(usize, f64)> {
    let d = s.design();
    (0..d.ncols())
        .filter_map(|j| {
            let c = d.column(j);
            let first = c[0];
            (first != 0.0 && c.iter().all(|v| *v == first)).then_some((j, first))
        })
        .collect()
}

/// Starting point: intercept at `log(N / |D|)` when the design has a constant column.
fn initial_guess(s: &QuadratureScheme) -> Vec<f64> {
    let mut theta = vec![0.0; s.n_coefficients()];
    if s.n_data() > 0 && !s.is_empty() {
        if let Some(&(j, c)) = constant_columns(s).first() {
            theta[j] = (s.n_data() as f64 / s.weight_sum()).ln() / c;
        }
    }
    theta
}

/// Rejects designs whose Hessian restricted to `free` is numerically singular.
fn check_rank(h: &DMatrix<f64>, free: &[usize]) -> Result<()> {
    let k = free.len();
    let diag: Vec<f64> = free.iter().map(|&j| h[(j, j)]).collect();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Singular);
    }
    let scaled = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])] / (diag[a] * diag[b]).sqrt());
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12) {
        return Err(Error::Singular);
    }
    Ok(())
}

/// Newton–Raphson with step halving on `l(theta) - ridge/2 |theta_free|^2`,
/// moving only the coordinates in `free`.
fn newton_fit(s: &QuadratureScheme, free: &[usize], mut theta: Vec<f64>, ridge: f64) -> Result<Vec<f64>> {
    if free.is_empty() {
        return Ok(theta);
    }
    let objective = |t: &[f64]| -> Result<f64> {
        let pen: f64 = free.iter().map(|&j| t[j] * t[j]).sum::<f64>() * 0.5 * ridge;
        Ok(s.approx_loglik(t)? - pen)
    };
    let k = free.len();
    let mut current = objective(&theta)?;
    for iter in 0..NEWTON_MAX_ITER {
        let (g_full, h_full) = s.gradient_and_hessian(&theta)?;
        if iter == 0 && ridge == 0.0 {
            check_rank(&h_full, free)?;
        }
        let g = DVector::from_fn(k, |a, _| g_full[free[a]] - ridge * theta[free[a]]);
        let gmax = g.amax();
        if gmax < 1e-8 * current.abs().max(1.0) {
            return Ok(theta);
        }
        let h = DMatrix::from_fn(k, k, |a, b| {
            h_full[(free[a], free[b])] + if a == b { ridge } else { 0.0 }
        });
        let step = h.cholesky().ok_or(Error::Singular)?.solve(&g);
        let mut t = 1.0;
        loop {
            let mut cand = theta.clone();
            for (a, &j) in free.iter().enumerate() {
                cand[j] += t * step[a];
            }
            match objective(&cand) {
                Ok(v) if v >= current - 1e-12 * current.abs().max(1.0) => {
                    theta = cand;
                    current = v;
                    break;
                }
                _ => {}
            }
            t *= 0.5;
            if t < 1e-12 {
                // no ascent possible from here: accept if the gradient is already tiny
                if gmax < 1e-6 * current.abs().max(1.0) {
                    return Ok(theta);
                }
                return Err(Error::Diverged { iterations: iter + 1 });
            }
        }
    }
    let g = s.gradient(&theta)?;
    let gmax = free.iter().map(|&j| (g[j] - ridge * theta[j]).abs()).fold(0.0, f64::max);
    if gmax < 1e-8 * current.abs().max(1.0) {
        Ok(theta)
    } else {
        Err(Error::Diverged { iterations: NEWTON_MAX_ITER })
    }
}

/// Maximiser of the quadrature log-likelihood (the tau = 0 estimator).
pub fn fit_unpenalized(s: &QuadratureScheme) -> Result<Vec<f64>> {
    if s.n_data() == 0 {
        return Err(Error::Diverged { iterations: 0 });
    }
    let all: Vec<usize> = (0..s.n_coefficients()).collect();
    newton_fit(s, &all, initial_guess(s), 0.0)
}

/// Maximiser over the unpenalized coefficients with every penalized one at 0.
fn restricted_optimum(s: &QuadratureScheme, plan: &PenaltyPlan) -> Result<Vec<f64>> {
    let free: Vec<usize> = (0..s.n_coefficients()).filter(|&j| !plan.is_penalized(j)).collect();
    let mut theta = initial_guess(s);
    for j in 0..theta.len() {
        if plan.is_penalized(j) {
            theta[j] = 0.0;
        }
    }
    newton_fit(s, &free, theta, 0.0)
}

fn tau_max_at(s: &QuadratureScheme, plan: &PenaltyPlan, restricted: &[f64], mu: f64) -> Result<f64> {
    let g = s.gradient(restricted)?;
    Ok((0..g.len())
        .filter(|&j| plan.is_penalized(j))
        .map(|j| (g[j] / mu).abs() / plan.multipliers()[j])
        .fold(0.0, f64::max))
}

/// Smallest `tau` at which every penalized coefficient is zero.
pub fn tau_max(s: &QuadratureScheme, plan: &PenaltyPlan) -> Result<f64> {
    plan.check(s.n_coefficients())?;
    if !(0..s.n_coefficients()).any(|j| plan.is_penalized(j)) {
        return Err(Error::NoPenalizedCoefficients);
    }
    let mu = mu_hat(s)?;
    let restricted = restricted_optimum(s, plan)?;
    tau_max_at(s, plan, &restricted, mu)
}

/// Largest violation of the subgradient optimality conditions of `Q` at `beta`.
pub fn kkt_residual(s: &QuadratureScheme, plan: &PenaltyPlan, tau: f64, beta: &[f64]) -> Result<f64> {
    plan.check(s.n_coefficients())?;
    let mu = mu_hat(s)?;
    let g = s.gradient(beta)?;
    Ok(kkt_from_gradient(&g, beta, plan.multipliers(), tau, mu))
}

fn kkt_from_gradient(g: &DVector<f64>, beta: &[f64], v: &[f64], tau: f64, mu: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..beta.len() {
        let gj = g[j] / mu;
        let t = tau * v[j];
        let r = if beta[j] != 0.0 {
            (gj - t * beta[j].signum()).abs()
        } else {
            (gj.abs() - t).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Reparametrisation used inside the solver: penalized columns centred (when
/// an unpenalized constant column can absorb the shift) and scaled to unit
/// weighted standard deviation.
struct Standardized {
    design: DMatrix<f64>,
    weights: Vec<f64>,
    wy: Vec<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
    intercept: Option<(usize, f64)>,
    penalty: Vec<f64>,
    mu: f64,
}

impl Standardized {
    fn new(s: &QuadratureScheme, plan: &PenaltyPlan, mu: f64) -> Self {
        let q = s.n_coefficients();
        let w = s.weights();
        let wsum: f64 = w.iter().sum();
        let intercept = constant_columns(s).into_iter().find(|&(j, _)| !plan.is_penalized(j));
        let mut design = s.design().clone();
        let mut center = vec![0.0; q];
        let mut scale = vec![1.0; q];
        for j in 0..q {
            if !plan.is_penalized(j) {
                continue;
            }
            let col = s.design().column(j);
            let m = if intercept.is_some() {
                col.iter().zip(w).map(|(z, w)| z * w).sum::<f64>() / wsum
            } else {
                0.0
            };
            let var = col.iter().zip(w).map(|(z, w)| w * (z - m) * (z - m)).sum::<f64>() / wsum;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                center[j] = m;
                scale[j] = sd;
                for v in design.column_mut(j).iter_mut() {
                    *v = (*v - m) / sd;
                }
            }
        }
        let penalty = (0..q).map(|j| plan.multipliers()[j] / scale[j]).collect();
        let wy = w.iter().zip(s.responses()).map(|(w, y)| w * y).collect();
        Standardized { design, weights: w.to_vec(), wy, center, scale, intercept, penalty, mu }
    }

    fn to_std(&self, theta: &[f64]) -> Vec<f64> {
        let mut t: Vec<f64> = theta.iter().zip(&self.scale).map(|(b, s)| b * s).collect();
        if let Some((c0, c)) = self.intercept {
            let shift: f64 = (0..theta.len()).map(|j| theta[j] * self.center[j]).sum();
            t[c0] = theta[c0] + shift / c;
        }
        t
    }

    fn from_std(&self, t: &[f64]) -> Vec<f64> {
        let mut theta: Vec<f64> = t.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        if let Some((c0, c)) = self.intercept {
            let shift: f64 = (0..t.len()).map(|j| theta[j] * self.center[j]).sum();
            theta[c0] = t[c0] - shift / c;
        }
        theta
    }

    /// Gradient on the original scale from the standardized one.
    fn original_gradient(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut out = g.clone();
        for j in 0..g.len() {
            out[j] = g[j] * self.scale[j];
            if let Some((c0, c)) = self.intercept {
                if j != c0 {
                    out[j] += self.center[j] * g[c0] / c;
                }
            }
        }
        out
    }

    /// Returns `(l, mu_i)` at standardized coefficients `t`.
    fn evaluate(&self, t: &[f64]) -> Option<(f64, Vec<f64>)> {
        let eta = &self.design * DVector::from_column_slice(t);
        let mut l = 0.0;
        let mut mu = Vec::with_capacity(eta.len());
        for i in 0..eta.len() {
            let m = self.weights[i] * eta[i].exp();
            l += self.wy[i] * eta[i] - m;
            mu.push(m);
        }
        l.is_finite().then_some((l, mu))
    }

    fn objective(&self, l: f64, t: &[f64], tau: f64) -> f64 {
        let pen: f64 = t.iter().zip(&self.penalty).map(|(b, v)| v * b.abs()).sum();
        l / self.mu - tau * pen
    }

    fn column(&self, j: usize) -> &[f64] {
        let n = self.design.nrows();
        &self.design.as_slice()[j * n..(j + 1) * n]
    }

    fn gradient_hessian(&self, mu: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let q = self.design.ncols();
        let resid: Vec<f64> = self.wy.iter().zip(mu).map(|(a, b)| a - b).collect();
        let g = DVector::from_fn(q, |j, _| dot(self.column(j), &resid));
        let mut h = DMatrix::zeros(q, q);
        let mut scratch = vec![0.0; mu.len()];
        for j in 0..q {
            for (s, (z, m)) in scratch.iter_mut().zip(self.column(j).iter().zip(mu)) {
                *s = z * m;
            }
            for k in j..q {
                let v = dot(self.column(k), &scratch);
                h[(j, k)] = v;
                h[(k, j)] = v;
            }
        }
        (g, h)
    }
}

/// Maximises `b.beta - beta^T A beta / 2 - tau sum v_j |beta_j|` by cyclic
/// coordinate descent starting from `beta`. Sweeps the full coordinate set,
/// then iterates on the active set until it settles, then re-checks with a
/// full sweep.
fn coordinate_descent(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    penalty: &[f64],
    tau: f64,
    beta: &mut [f64],
    opts: &SolverOptions,
) -> usize {
    let q = beta.len();
    // r = b - A beta
    let mut r = b - a * DVector::from_column_slice(beta);
    let update = |j: usize, beta: &mut [f64], r: &mut DVector<f64>| -> f64 {
        let ajj = a[(j, j)];
        if ajj <= 0.0 {
            return 0.0;
        }
        let z = r[j] + ajj * beta[j];
        let new = soft_threshold(z, tau * penalty[j]) / ajj;
        let delta = new - beta[j];
        if delta != 0.0 {
            beta[j] = new;
            for k in 0..q {
                r[k] -= a[(k, j)] * delta;
            }
        }
        delta.abs()
    };
    let mut sweeps = 0;
    while sweeps < opts.max_inner_sweeps {
        let mut change: f64 = 0.0;
        for j in 0..q {
            change = change.max(update(j, beta, &mut r));
        }
        sweeps += 1;
        if change < opts.inner_tol {
            break;
        }
        let active: Vec<usize> = (0..q).filter(|&j| beta[j] != 0.0 || penalty[j] == 0.0).collect();
        while sweeps < opts.max_inner_sweeps {
            let mut change: f64 = 0.0;
            for &j in &active {
                change = change.max(update(j, beta, &mut r));
            }
            sweeps += 1;
            if change < opts.inner_tol {
                break;
            }
        }
    }
    sweeps
}

/// Solves one value of `tau` from the standardized warm start `t`.
fn solve_tau(st: &Standardized, tau: f64, t: &mut Vec<f64>, opts: &SolverOptions) -> Result<(f64, f64, usize)> {
    let q = t.len();
    let (mut l, mut mu) = st.evaluate(t).ok_or_else(|| Error::NonFinite("warm start".into()))?;
    let mut q_cur = st.objective(l, t, tau);
    let mut kkt = f64::INFINITY;
    for outer in 0..opts.max_outer {
        let (g, h) = st.gradient_hessian(&mu);
        let theta = st.from_std(t);
        kkt = kkt_from_gradient(&st.original_gradient(&g), &theta, &scaled_back(st), tau, st.mu);
        if kkt < opts.outer_tol {
            return Ok((l, kkt, outer));
        }
        let a = &h / st.mu;
        let b = &g / st.mu + &a * DVector::from_column_slice(t);
        let mut cand = t.clone();
        let newton = if tau == 0.0 { a.clone().cholesky().map(|c| c.solve(&b)) } else { None };
        if let Some(x) = newton {
            cand.copy_from_slice(x.as_slice());
        } else {
            coordinate_descent(&a, &b, &st.penalty, tau, &mut cand, opts);
        }
        // step halving keeps Q nondecreasing
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-10 {
            let trial: Vec<f64> = (0..q).map(|j| t[j] + step * (cand[j] - t[j])).collect();
            if let Some((l_new, mu_new)) = st.evaluate(&trial) {
                let q_new = st.objective(l_new, &trial, tau);
                if q_new >= q_cur - 1e-15 * q_cur.abs().max(1.0) {
                    *t = trial;
                    l = l_new;
                    mu = mu_new;
                    q_cur = q_new;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (g, _) = st.gradient_hessian(&mu);
    let theta = st.from_std(t);
    kkt = kkt.min(kkt_from_gradient(&st.original_gradient(&g), &theta, &scaled_back(st), tau, st.mu));
    Ok((l, kkt, opts.max_outer))
}

fn scaled_back(st: &Standardized) -> Vec<f64> {
    st.penalty.iter().zip(&st.scale).map(|(p, s)| p * s).collect()
}

/// Solves the penalized problem at a single `tau`, warm-started from
/// `warm` (original scale) or from the restricted optimum.
pub fn fit_at_tau(
    s: &QuadratureScheme,
    plan: &PenaltyPlan,
    tau: f64,
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<PathPoint> {
    plan.check(s.n_coefficients())?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidPenalty(format!("tau must be nonnegative, got {tau}")));
    }
    let mu = mu_hat(s)?;
    let st = Standardized::new(s, plan, mu);
    let start = match warm {
        Some(w) => w.to_vec(),
        None => restricted_optimum(s, plan)?,
    };
    let mut t = st.to_std(&start);
    let (l, kkt, iterations) = solve_tau(&st, tau, &mut t, opts)?;
    let coefficients = st.from_std(&t);
    Ok(PathPoint { tau, coefficients, loglik: l, kkt, converged: kkt < opts.converged_kkt, iterations })
}

/// Geometric grid of `n_tau - 1` values from `tau_max` down to
/// `tau_min_ratio * tau_max`, followed by an exact `tau = 0`.
pub fn tau_grid(tau_max: f64, n_tau: usize, tau_min_ratio: f64) -> Vec<f64> {
    if tau_max <= 0.0 {
        return vec![0.0];
    }
    let k = n_tau - 1;
    let mut out: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                tau_max
            } else {
                tau_max * tau_min_ratio.powf(i as f64 / (k - 1) as f64)
            }
        })
        .collect();
    out.push(0.0);
    out
}

/// Solves the whole regularisation path with warm starts.
pub fn fit_path(s: &QuadratureScheme, plan: &PenaltyPlan, opts: &SolverOptions) -> Result<PathFit> {
    plan.check(s.n_coefficients())?;
    if opts.n_tau < 2 {
        return Err(Error::Config("the path needs at least two tau values".into()));
    }
    if !(opts.tau_min_ratio > 0.0 && opts.tau_min_ratio < 1.0) {
        return Err(Error::Config(format!("tau_min_ratio must lie in (0, 1), got {}", opts.tau_min_ratio)));
    }
    if !(0..s.n_coefficients()).any(|j| plan.is_penalized(j)) {
        return Err(Error::NoPenalizedCoefficients);
    }
    let mu = mu_hat(s)?;
    let restricted = restricted_optimum(s, plan)?;
    let tmax = tau_max_at(s, plan, &restricted, mu)?;
    let taus = tau_grid(tmax, opts.n_tau, opts.tau_min_ratio);
    let st = Standardized::new(s, plan, mu);

    let n = taus.len();
    let mut fit = PathFit {
        names: s.coefficient_names().to_vec(),
        taus: taus.clone(),
        coefficients: Vec::with_capacity(n),
        loglik: Vec::with_capacity(n),
        kkt: Vec::with_capacity(n),
        converged: Vec::with_capacity(n),
        active: Vec::with_capacity(n),
        iterations: Vec::with_capacity(n),
        errors: Vec::with_capacity(n),
        mu_hat: mu,
        tau_max: tmax,
        multipliers: plan.multipliers().to_vec(),
    };

    let mut warm = st.to_std(&restricted);
    for (k, &tau) in taus.iter().enumerate() {
        let mut t = warm.clone();
        let outcome = if k == 0 {
            // the restricted optimum is the exact solution at tau_max
            let l = s.approx_loglik(&restricted);
            let kkt = kkt_residual(s, plan, tau, &restricted);
            l.and_then(|l| kkt.map(|kkt| (l, kkt, 0)))
        } else {
            solve_tau(&st, tau, &mut t, opts)
        };
        match outcome {
            Ok((l, kkt, it)) => {
                let coef = if k == 0 { restricted.clone() } else { st.from_std(&t) };
                fit.active.push(coef.iter().filter(|b| **b != 0.0).count());
                fit.coefficients.push(coef);
                fit.loglik.push(l);
                fit.kkt.push(kkt);
                fit.converged.push(kkt < opts.converged_kkt);
                fit.iterations.push(it);
                fit.errors.push(None);
                if k > 0 {
                    warm = t;
                }
            }
            Err(e) => {
                fit.coefficients.push(vec![f64::NAN; s.n_coefficients()]);
                fit.loglik.push(f64::NAN);
                fit.kkt.push(f64::NAN);
                fit.converged.push(false);
                fit.active.push(0);
                fit.iterations.push(0);
                fit.errors.push(Some(format!("{}: {}", e.code(), e)));
            }
        }
    }
    Ok(fit)
}
