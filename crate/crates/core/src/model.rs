//! Log-linear intensity and Strauss conditional-intensity models.
//!
//! A model is `exp(beta . z(u) + psi * s(u, x))` where `z` collects the
//! covariate fields and `s` is the number of points of `x` within distance
//! `R` of `u` (only present for Strauss models).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{cell_index, neighbors_within, Point, PointPattern, Window};

/// Piecewise-constant grid of covariate values. Row 0 is the top (max y) row.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    nrows: usize,
    ncols: usize,
    extent: Window,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(nrows: usize, ncols: usize, extent: Window, values: Vec<f64>) -> Result<Self> {
        if nrows == 0 || ncols == 0 {
            return Err(Error::InvalidRaster("empty grid".into()));
        }
        if values.len() != nrows * ncols {
            return Err(Error::InvalidRaster(format!(
                "expected {} values, got {}",
                nrows * ncols,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRaster(format!(
                "non-finite value at row {}, column {}",
                k / ncols,
                k % ncols
            )));
        }
        Ok(Raster { nrows, ncols, extent, values })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn extent(&self) -> &Window {
        &self.extent
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    /// Value of the cell containing `u`. Points on interior cell edges resolve
    /// to the cell with the larger row/column index.
    pub fn lookup(&self, u: Point) -> Result<f64> {
        if !self.extent.contains(&u) {
            return Err(Error::OutOfExtent { x: u.x, y: u.y });
        }
        Ok(self.lookup_unchecked(u))
    }

    #[inline]
    fn lookup_unchecked(&self, u: Point) -> f64 {
        let col = cell_index(u.x - self.extent.xmin(), self.extent.width(), self.ncols);
        let row = cell_index(self.extent.ymax() - u.y, self.extent.height(), self.nrows);
        self.values[row * self.ncols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateKind {
    Constant(f64),
    CoordX,
    CoordY,
    Raster(Arc<Raster>),
    Product(Arc<CovariateField>, Arc<CovariateField>),
}

/// A named spatial covariate `z_i(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateField {
    name: String,
    kind: CovariateKind,
}

impl CovariateField {
    pub fn new(name: impl Into<String>, kind: CovariateKind) -> Self {
        CovariateField { name: name.into(), kind }
    }

    pub fn intercept() -> Self {
        Self::new("intercept", CovariateKind::Constant(1.0))
    }
    pub fn x(name: impl Into<String>) -> Self {
        Self::new(name, CovariateKind::CoordX)
    }
    pub fn y(name: impl Into<String>) -> Self {
        Self::new(name, CovariateKind::CoordY)
    }
    pub fn raster(name: impl Into<String>, raster: Raster) -> Self {
        Self::new(name, CovariateKind::Raster(Arc::new(raster)))
    }
    pub fn product(name: impl Into<String>, a: CovariateField, b: CovariateField) -> Self {
        Self::new(name, CovariateKind::Product(Arc::new(a), Arc::new(b)))
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn kind(&self) -> &CovariateKind {
        &self.kind
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, CovariateKind::Constant(_))
    }

    pub fn eval(&self, u: Point) -> Result<f64> {
        Ok(match &self.kind {
            CovariateKind::Constant(c) => *c,
            CovariateKind::CoordX => u.x,
            CovariateKind::CoordY => u.y,
            CovariateKind::Raster(r) => r.lookup(u)?,
            CovariateKind::Product(a, b) => a.eval(u)? * b.eval(u)?,
        })
    }

    /// Evaluation for points already known to be inside every raster extent.
    #[inline]
    pub(crate) fn eval_unchecked(&self, u: Point) -> f64 {
        match &self.kind {
            CovariateKind::Constant(c) => *c,
            CovariateKind::CoordX => u.x,
            CovariateKind::CoordY => u.y,
            CovariateKind::Raster(r) => r.lookup_unchecked(u),
            CovariateKind::Product(a, b) => a.eval_unchecked(u) * b.eval_unchecked(u),
        }
    }

    fn collect_rasters<'a>(&'a self, out: &mut Vec<&'a Raster>) {
        match &self.kind {
            CovariateKind::Raster(r) => out.push(r),
            CovariateKind::Product(a, b) => {
                a.collect_rasters(out);
                b.collect_rasters(out);
            }
            _ => {}
        }
    }

    fn check_covers(&self, w: &Window) -> Result<()> {
        match &self.kind {
            CovariateKind::Raster(r) if !r.extent().contains_window(w) => Err(Error::InvalidModel(
                format!("raster covariate '{}' does not cover the window", self.name),
            )),
            CovariateKind::Product(a, b) => {
                a.check_covers(w)?;
                b.check_covers(w)
            }
            _ => Ok(()),
        }
    }
}

/// Raster lookup for a raster-backed field.
pub fn raster_lookup(f: &CovariateField, u: Point) -> Result<f64> {
    match f.kind() {
        CovariateKind::Raster(r) => r.lookup(u),
        _ => Err(Error::InvalidModel(format!("'{}' is not a raster field", f.name()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interaction {
    None,
    Strauss { range: f64 },
}

impl Interaction {
    pub fn strauss(range: f64) -> Result<Self> {
        if range > 0.0 && range.is_finite() {
            Ok(Interaction::Strauss { range })
        } else {
            Err(Error::InvalidModel(format!("Strauss range must be positive, got {range}")))
        }
    }

    pub fn range(&self) -> Option<f64> {
        match self {
            Interaction::None => None,
            Interaction::Strauss { range } => Some(*range),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityBound {
    Bounded(f64),
    Unbounded,
}

impl StabilityBound {
    pub fn value(&self) -> Option<f64> {
        match self {
            StabilityBound::Bounded(v) => Some(*v),
            StabilityBound::Unbounded => None,
        }
    }
}

pub const DEFAULT_STABILITY_GRID: usize = 256;

/// Covariates, interaction and coefficients of a log-linear model.
///
/// Coefficient vectors are laid out as `[beta_1, .., beta_p, psi]`, with `psi`
/// present only for Strauss models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    window: Window,
    covariates: Vec<CovariateField>,
    interaction: Interaction,
    beta: Vec<f64>,
    psi: Option<f64>,
    penalty_mask: Vec<bool>,
}

impl ModelSpec {
    /// Coefficients start at zero. Constant fields and the interaction are
    /// left unpenalized; every other covariate is penalized.
    pub fn new(window: Window, covariates: Vec<CovariateField>, interaction: Interaction) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::InvalidModel("at least one covariate is required".into()));
        }
        if let Interaction::Strauss { range } = interaction {
            if !(range > 0.0 && range.is_finite()) {
                return Err(Error::InvalidModel(format!("Strauss range must be positive, got {range}")));
            }
        }
        for c in &covariates {
            c.check_covers(&window)?;
        }
        let mut mask: Vec<bool> = covariates.iter().map(|c| !c.is_constant()).collect();
        let psi = match interaction {
            Interaction::None => None,
            Interaction::Strauss { .. } => {
                mask.push(false);
                Some(0.0)
            }
        };
        Ok(ModelSpec {
            window,
            beta: vec![0.0; covariates.len()],
            covariates,
            interaction,
            psi,
            penalty_mask: mask,
        })
    }

    /// Same as [`ModelSpec::new`] with the constant intercept field prepended.
    pub fn with_intercept(window: Window, mut covariates: Vec<CovariateField>, interaction: Interaction) -> Result<Self> {
        covariates.insert(0, CovariateField::intercept());
        Self::new(window, covariates, interaction)
    }

    /// Sets the full coefficient vector `[beta.., psi]`.
    pub fn with_coefficients(mut self, theta: &[f64]) -> Result<Self> {
        self.set_coefficients(theta)?;
        Ok(self)
    }

    pub fn set_coefficients(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_coefficients() {
            return Err(Error::Dimension { expected: self.n_coefficients(), got: theta.len() });
        }
        if theta.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("coefficient is NaN".into()));
        }
        let p = self.covariates.len();
        self.beta.copy_from_slice(&theta[..p]);
        if self.psi.is_some() {
            self.psi = Some(theta[p]);
        }
        Ok(())
    }

    pub fn with_penalty_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n_coefficients() {
            return Err(Error::Dimension { expected: self.n_coefficients(), got: mask.len() });
        }
        self.penalty_mask = mask;
        Ok(self)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }
    pub fn covariates(&self) -> &[CovariateField] {
        &self.covariates
    }
    pub fn interaction(&self) -> Interaction {
        self.interaction
    }
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
    pub fn psi(&self) -> Option<f64> {
        self.psi
    }
    pub fn penalty_mask(&self) -> &[bool] {
        &self.penalty_mask
    }

    pub fn n_coefficients(&self) -> usize {
        self.covariates.len() + usize::from(self.psi.is_some())
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = self.beta.clone();
        out.extend(self.psi);
        out
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.covariates.iter().map(|c| c.name().to_string()).collect();
        if self.psi.is_some() {
            out.push("psi".to_string());
        }
        out
    }

    /// Same covariates and interaction on a different window.
    pub fn on_window(&self, window: Window) -> Result<Self> {
        for c in &self.covariates {
            c.check_covers(&window)?;
        }
        let mut m = self.clone();
        m.window = window;
        Ok(m)
    }

    fn check_inside(&self, u: Point) -> Result<()> {
        if self.window.contains(&u) {
            Ok(())
        } else {
            Err(Error::OutOfWindow { x: u.x, y: u.y })
        }
    }

    /// `beta . z(u)` for `u` inside the window.
    #[inline]
    pub(crate) fn trend_eta(&self, u: Point) -> f64 {
        self.covariates
            .iter()
            .zip(&self.beta)
            .map(|(c, b)| if *b == 0.0 { 0.0 } else { b * c.eval_unchecked(u) })
            .sum()
    }

    /// `lambda(u, x)` given the Strauss statistic `s` (ignored without interaction).
    #[inline]
    pub(crate) fn intensity_with_count(&self, u: Point, s: usize) -> f64 {
        let mut eta = self.trend_eta(u);
        if let Some(psi) = self.psi {
            if s > 0 {
                eta += psi * s as f64;
            }
        }
        eta.exp()
    }

    /// Writes `z(u)` followed by `s` into `out` (length `n_coefficients`).
    #[inline]
    pub(crate) fn fill_design(&self, u: Point, s: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.covariates) {
            *o = c.eval_unchecked(u);
        }
        if self.psi.is_some() {
            out[self.covariates.len()] = s as f64;
        }
    }

    fn strauss_count(&self, u: Point, x: Option<&PointPattern>) -> Result<usize> {
        match self.interaction {
            Interaction::None => Ok(0),
            Interaction::Strauss { range } => {
                let x = x.ok_or(Error::MissingPattern)?;
                Ok(neighbors_within(x, u, range, Some(u)))
            }
        }
    }

    /// Design vector `z(u)` or `(z(u), s(u, x))`. When `u` is itself a point of
    /// `x` it is left out of the neighbour count.
    pub fn design_vector(&self, u: Point, x: Option<&PointPattern>) -> Result<Vec<f64>> {
        self.check_inside(u)?;
        let s = self.strauss_count(u, x)?;
        let mut out = vec![0.0; self.n_coefficients()];
        self.fill_design(u, s, &mut out);
        Ok(out)
    }

    /// `rho(u)` for Poisson models, the Papangelou conditional intensity
    /// `lambda(u, x)` for Strauss models.
    pub fn intensity(&self, u: Point, x: Option<&PointPattern>) -> Result<f64> {
        let z = self.design_vector(u, x)?;
        let theta = self.coefficients();
        let eta: f64 = z.iter().zip(&theta).map(|(a, b)| a * b).sum();
        Ok(eta.exp())
    }

    /// Maximum of the trend `exp(beta . z(u))` over an inclusive
    /// `resolution x resolution` lattice spanning the window and the centres
    /// of every raster cell inside it. This bounds the
    /// conditional intensity whenever `psi <= 0`.
    pub fn local_stability_bound(&self, resolution: usize) -> StabilityBound {
        if matches!(self.psi, Some(psi) if psi > 0.0) {
            return StabilityBound::Unbounded;
        }
        let n = resolution.max(2);
        let w = &self.window;
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {
            let y = w.ymin() + w.height() * j as f64 / (n - 1) as f64;
            for i in 0..n {
                let x = w.xmin() + w.width() * i as f64 / (n - 1) as f64;
                best = best.max(self.trend_eta(Point::new(x, y)));
            }
        }
        let mut rasters = Vec::new();
        for c in &self.covariates {
            c.collect_rasters(&mut rasters);
        }
        for r in rasters {
            let e = r.extent();
            let (dx, dy) = (e.width() / r.ncols() as f64, e.height() / r.nrows() as f64);
            for i in 0..r.nrows() {
                let y = e.ymax() - (i as f64 + 0.5) * dy;
                for j in 0..r.ncols() {
                    let u = Point::new(e.xmin() + (j as f64 + 0.5) * dx, y);
                    if w.contains(&u) {
                        best = best.max(self.trend_eta(u));
                    }
                }
            }
        }
        let v = best.exp();
        if v.is_finite() {
            StabilityBound::Bounded(v)
        } else {
            StabilityBound::Unbounded
        }
    }
}
