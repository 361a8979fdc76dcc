//! Berman–Turner quadrature: the likelihood integral is discretised over data
//! and dummy nodes so that fitting becomes a weighted Poisson regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, Point, PointPattern, Window};
use crate::model::{Interaction, ModelSpec};
use crate::numeric::{dot, KahanSum};

pub const DEFAULT_DUMMY_GRID: (usize, usize) = (32, 32);

/// Data nodes followed by dummy nodes, with counting weights, pseudo-responses
/// and the design rows of the model at each node.
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    nodes: Vec<Point>,
    weights: Vec<f64>,
    responses: Vec<f64>,
    is_data: Vec<bool>,
    design: DMatrix<f64>,
    domain: Window,
    n_data: usize,
    grid: (usize, usize),
    names: Vec<String>,
}

impl QuadratureScheme {
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }
    pub fn is_data(&self) -> &[bool] {
        &self.is_data
    }
    /// `(N + M) x q` design matrix.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }
    /// The integration domain: the window, or the window eroded by the interaction range.
    pub fn domain(&self) -> &Window {
        &self.domain
    }
    pub fn n_data(&self) -> usize {
        self.n_data
    }
    pub fn n_dummy(&self) -> usize {
        self.nodes.len() - self.n_data
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn n_coefficients(&self) -> usize {
        self.design.ncols()
    }
    pub fn dummy_grid(&self) -> (usize, usize) {
        self.grid
    }
    pub fn coefficient_names(&self) -> &[String] {
        &self.names
    }

    pub fn weight_sum(&self) -> f64 {
        let mut s = KahanSum::default();
        for w in &self.weights {
            s.add(*w);
        }
        s.value()
    }

    /// Relative deviation of the weight total from the domain area.
    pub fn weight_sum_error(&self) -> f64 {
        (self.weight_sum() - self.domain.area()).abs() / self.domain.area()
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_coefficients() {
            return Err(Error::Dimension { expected: self.n_coefficients(), got: theta.len() });
        }
        Ok(())
    }

    /// Linear predictor `eta_i = theta . z_i` at every node.
    pub fn linear_predictor(&self, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(theta)?;
        Ok(&self.design * DVector::from_column_slice(theta))
    }

    pub(crate) fn loglik_from_eta(&self, eta: &DVector<f64>) -> Result<f64> {
        let mut s = 0.0;
        for i in 0..self.nodes.len() {
            let w = self.weights[i];
            let e = eta[i];
            s += w * (self.responses[i] * e - e.exp());
        }
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::NonFinite("quadrature log-likelihood".into()))
        }
    }

    /// `sum_i w_i (y_i eta_i - exp(eta_i))`.
    pub fn approx_loglik(&self, theta: &[f64]) -> Result<f64> {
        let eta = self.linear_predictor(theta)?;
        self.loglik_from_eta(&eta)
    }

    /// Gradient of the quadrature log-likelihood and `H = sum_i w_i exp(eta_i) z_i z_i^T`,
    /// the negated Hessian.
    pub fn gradient_and_hessian(&self, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let eta = self.linear_predictor(theta)?;
        let mu: Vec<f64> = eta.iter().zip(&self.weights).map(|(e, w)| w * e.exp()).collect();
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("fitted intensity overflow".into()));
        }
        Ok((self.gradient_from_mu(&mu), self.hessian_from_mu(&mu)))
    }

    pub fn gradient(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let eta = self.linear_predictor(theta)?;
        let mu: Vec<f64> = eta.iter().zip(&self.weights).map(|(e, w)| w * e.exp()).collect();
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("fitted intensity overflow".into()));
        }
        Ok(self.gradient_from_mu(&mu))
    }

    /// `mu_i = w_i exp(eta_i)`.
    fn column(&self, j: usize) -> &[f64] {
        let n = self.nodes.len();
        &self.design.as_slice()[j * n..(j + 1) * n]
    }

    pub(crate) fn gradient_from_mu(&self, mu: &[f64]) -> DVector<f64> {
        let resid: Vec<f64> = (0..self.nodes.len())
            .map(|i| self.weights[i] * self.responses[i] - mu[i])
            .collect();
        DVector::from_fn(self.n_coefficients(), |j, _| dot(self.column(j), &resid))
    }

    pub(crate) fn hessian_from_mu(&self, mu: &[f64]) -> DMatrix<f64> {
        let q = self.n_coefficients();
        let mut h = DMatrix::zeros(q, q);
        let mut scratch = vec![0.0; self.nodes.len()];
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
        h
    }
}

/// Builds the Berman–Turner scheme for fitting `m` to `p`.
///
/// Dummy nodes sit at the centres of an `nx x ny` tiling of the domain; each
/// node in a tile holding `k` nodes gets weight `tile_area / k`. For Strauss
/// models the domain is the window eroded by the range, and the interaction
/// column at a data node counts its neighbours in `p` without itself.
pub fn build_scheme(p: &PointPattern, m: &ModelSpec, dummy_grid: (usize, usize)) -> Result<QuadratureScheme> {
    let (nx, ny) = dummy_grid;
    if nx == 0 || ny == 0 {
        return Err(Error::Config(format!("dummy grid must be positive, got {nx}x{ny}")));
    }
    let window = *m.window();
    if !window.contains_window(p.window()) && p.points().iter().any(|u| !window.contains(u)) {
        return Err(Error::InvalidModel("pattern extends beyond the model window".into()));
    }
    let domain = match m.interaction() {
        Interaction::None => window,
        Interaction::Strauss { range } => window.erode(range)?,
    };

    let data: Vec<usize> = (0..p.len()).filter(|&i| domain.contains(&p.points()[i])).collect();
    let dummies = domain.tile_centers(nx, ny);
    let n_data = data.len();
    let n = n_data + dummies.len();

    let mut nodes = Vec::with_capacity(n);
    nodes.extend(data.iter().map(|&i| p.points()[i]));
    nodes.extend_from_slice(&dummies);

    let mut counts = vec![0usize; nx * ny];
    let tiles: Vec<usize> = nodes.iter().map(|u| domain.tile_of(u, nx, ny)).collect();
    for &t in &tiles {
        counts[t] += 1;
    }
    let tile_area = (domain.width() / nx as f64) * (domain.height() / ny as f64);
    let weights: Vec<f64> = tiles.iter().map(|&t| tile_area / counts[t] as f64).collect();
    let responses: Vec<f64> = (0..n).map(|i| if i < n_data { 1.0 / weights[i] } else { 0.0 }).collect();
    let is_data: Vec<bool> = (0..n).map(|i| i < n_data).collect();

    let q = m.n_coefficients();
    let index = m
        .interaction()
        .range()
        .map(|r| NeighborIndex::from_pattern(p, r));
    let mut design = DMatrix::zeros(n, q);
    let mut row = vec![0.0; q];
    for (i, u) in nodes.iter().enumerate() {
        let s = match (&index, m.interaction()) {
            (Some(idx), Interaction::Strauss { range }) => {
                let exclude = if i < n_data { Some(data[i]) } else { None };
                idx.count_within(*u, range, exclude)
            }
            _ => 0,
        };
        m.fill_design(*u, s, &mut row);
        for (j, v) in row.iter().enumerate() {
            design[(i, j)] = *v;
        }
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix".into()));
    }

    Ok(QuadratureScheme {
        nodes,
        weights,
        responses,
        is_data,
        design,
        domain,
        n_data,
        grid: (nx, ny),
        names: m.coefficient_names(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovariateField;

    fn intercept_model(w: Window) -> ModelSpec {
        ModelSpec::with_intercept(w, vec![], Interaction::None).unwrap()
    }

    #[test]
    fn empty_pattern_weights() {
        let w = Window::unit();
        let s = build_scheme(&PointPattern::empty(w), &intercept_model(w), (2, 2)).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.n_data(), 0);
        assert!(s.weights().iter().all(|&v| v == 0.25));
        assert!(s.responses().iter().all(|&v| v == 0.0));
        assert_eq!(s.weight_sum(), 1.0);
    }

    #[test]
    fn one_point_counting_rule() {
        // hand count: the point shares tile [0,0.5]^2 with that tile's dummy
        let w = Window::unit();
        let p = PointPattern::new(vec![Point::new(0.1, 0.1)], w).unwrap();
        let s = build_scheme(&p, &intercept_model(w), (2, 2)).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.is_data()[0]);
        assert_eq!(s.weights()[0], 0.125);
        assert_eq!(s.responses()[0], 8.0);
        // dummy of tile 0 is node 1
        assert_eq!(s.nodes()[1], Point::new(0.25, 0.25));
        assert_eq!(s.weights()[1], 0.125);
        assert_eq!(&s.weights()[2..], &[0.25, 0.25, 0.25]);
        assert!((s.weight_sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn strauss_domain_is_eroded() {
        let w = Window::unit();
        let m = ModelSpec::with_intercept(w, vec![], Interaction::strauss(0.1).unwrap()).unwrap();
        let p = PointPattern::new(vec![Point::new(0.05, 0.5), Point::new(0.12, 0.5)], w).unwrap();
        let s = build_scheme(&p, &m, (8, 8)).unwrap();
        assert_eq!(*s.domain(), w.erode(0.1).unwrap());
        assert!((s.weight_sum() - 0.64).abs() < 1e-12);
        // the excluded boundary point still counts as a neighbour
        assert_eq!(s.n_data(), 1);
        assert_eq!(s.design()[(0, 1)], 1.0);
        let big = ModelSpec::with_intercept(w, vec![], Interaction::strauss(0.5).unwrap()).unwrap();
        assert!(matches!(build_scheme(&p, &big, (2, 2)), Err(Error::EmptyErosion { .. })));
    }

    #[test]
    fn strauss_column_leaves_data_point_out() {
        let w = Window::unit();
        let m = ModelSpec::with_intercept(w, vec![], Interaction::strauss(0.1).unwrap()).unwrap();
        let p = PointPattern::new(vec![Point::new(0.5, 0.5), Point::new(0.55, 0.5)], w).unwrap();
        let s = build_scheme(&p, &m, (1, 1)).unwrap();
        assert_eq!(s.design()[(0, 1)], 1.0);
        assert_eq!(s.design()[(1, 1)], 1.0);
        // the single dummy at the centre sees both points
        assert_eq!(s.design()[(2, 1)], 2.0);
    }

    #[test]
    fn loglik_examples() {
        let w = Window::unit();
        let s = build_scheme(&PointPattern::empty(w), &intercept_model(w), (4, 4)).unwrap();
        assert!((s.approx_loglik(&[0.0]).unwrap() + 1.0).abs() < 1e-14);
        let (g, h) = s.gradient_and_hessian(&[0.0]).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-14);
        assert!((h[(0, 0)] - 1.0).abs() < 1e-14);

        let pts: Vec<Point> = (0..100)
            .map(|i| Point::new((i % 10) as f64 / 10.0 + 0.031, (i / 10) as f64 / 10.0 + 0.047))
            .collect();
        let p = PointPattern::new(pts, w).unwrap();
        let s = build_scheme(&p, &intercept_model(w), (32, 32)).unwrap();
        let v = s.approx_loglik(&[100f64.ln()]).unwrap();
        assert!((v - (100.0 * 100f64.ln() - 100.0)).abs() < 1e-9);
        assert!((v - 360.517).abs() < 1e-3);
        assert!(s.approx_loglik(&[0.0, 1.0]).is_err());
        assert!(matches!(s.approx_loglik(&[1e6]), Err(Error::NonFinite(_))));
    }

    /// Exact Poisson log-likelihood for `exp(a + b x + c y)` on a rectangle.
    fn exact_affine_loglik(p: &PointPattern, w: &Window, t: &[f64; 3]) -> f64 {
        let int1 = |b: f64, lo: f64, hi: f64| {
            if b.abs() < 1e-12 {
                hi - lo
            } else {
                ((b * hi).exp() - (b * lo).exp()) / b
            }
        };
        let integral = t[0].exp() * int1(t[1], w.xmin(), w.xmax()) * int1(t[2], w.ymin(), w.ymax());
        let sum: f64 = p.points().iter().map(|u| t[0] + t[1] * u.x + t[2] * u.y).sum();
        sum - integral
    }

    #[test]
    fn refinement_converges_to_exact_loglik() {
        let w = Window::new(0.0, 2.0, 0.0, 1.0).unwrap();
        let pts: Vec<Point> = (0..57)
            .map(|i| {
                let f = i as f64;
                Point::new((f * 0.618_033_988_7).fract() * 2.0, (f * 0.414_213_562_3 + 0.1).fract())
            })
            .collect();
        let p = PointPattern::new(pts, w).unwrap();
        let m = ModelSpec::with_intercept(w, vec![CovariateField::x("x"), CovariateField::y("y")], Interaction::None)
            .unwrap();
        let theta = [3.0, 0.8, -1.3];
        let exact = exact_affine_loglik(&p, &w, &theta);
        let errs: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&n| {
                let s = build_scheme(&p, &m, (n, n)).unwrap();
                (s.approx_loglik(&theta).unwrap() - exact).abs()
            })
            .collect();
        for k in 1..errs.len() {
            assert!(errs[k] <= 0.5 * errs[k - 1], "errors {errs:?}");
        }
    }
}
