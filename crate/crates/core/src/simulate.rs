//! Poisson and Strauss samplers, and Monte-Carlo checks of the Campbell and
//! Georgii–Nguyen–Zessin identities.
//!
//! All randomness comes from `ChaCha8Rng` seeded with `seed_from_u64(seed)`;
//! replicate `r` of a study uses stream `r + 1` of that generator, so results
//! are reproducible independently of how replicates are scheduled.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, Point, PointPattern, Window};
use crate::model::{Interaction, ModelSpec, StabilityBound, DEFAULT_STABILITY_GRID};
use crate::numeric::{mean_sd, KahanSum};

pub const DEFAULT_BURN_IN: usize = 100_000;
pub const DEFAULT_SWEEPS: usize = 10_000;
pub const CAMPBELL_GRID: usize = 512;

/// Generator for replicate stream `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub window: Window,
    pub seed: u64,
    pub burn_in: usize,
    pub sweeps: usize,
}

impl SimConfig {
    pub fn new(model: ModelSpec, seed: u64) -> Self {
        SimConfig { window: *model.window(), model, seed, burn_in: DEFAULT_BURN_IN, sweeps: DEFAULT_SWEEPS }
    }

    fn model_on_window(&self) -> Result<ModelSpec> {
        if !self.model.window().contains_window(&self.window) {
            return Err(Error::InvalidModel("simulation window exceeds the model window".into()));
        }
        self.model.on_window(self.window)
    }
}

fn trend_bound(m: &ModelSpec) -> Result<f64> {
    let mut trend = m.clone();
    let mut theta = m.coefficients();
    if m.psi().is_some() {
        *theta.last_mut().unwrap() = 0.0;
    }
    trend.set_coefficients(&theta)?;
    match trend.local_stability_bound(DEFAULT_STABILITY_GRID) {
        StabilityBound::Bounded(v) => Ok(v),
        StabilityBound::Unbounded => Err(Error::Unbounded),
    }
}

/// Inhomogeneous Poisson draw of the trend of `m` by thinning a homogeneous
/// process at the trend's lattice maximum.
fn poisson_trend<R: Rng>(m: &ModelSpec, rng: &mut R) -> Result<PointPattern> {
    let w = *m.window();
    let bound = trend_bound(m)?;
    if bound <= 1e-30 {
        return Ok(PointPattern::empty(w));
    }
    let mean = bound * w.area();
    let n = Poisson::new(mean)
        .map_err(|e| Error::NonFinite(format!("Poisson mean {mean}: {e}")))?
        .sample(rng) as usize;
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let u = Point::new(w.xmin() + w.width() * rng.gen::<f64>(), w.ymin() + w.height() * rng.gen::<f64>());
        let keep = m.trend_eta(u).exp() / bound;
        if rng.gen::<f64>() < keep {
            pts.push(u);
        }
    }
    // continuous coordinates: ties have probability zero, but stay safe
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a == b);
    PointPattern::new(pts, w)
}

pub fn sample_poisson_with<R: Rng>(m: &ModelSpec, rng: &mut R) -> Result<PointPattern> {
    if m.interaction() != Interaction::None {
        return Err(Error::InvalidModel("Poisson sampling needs a model without interaction".into()));
    }
    poisson_trend(m, rng)
}

pub fn sample_poisson(c: &SimConfig) -> Result<PointPattern> {
    let m = c.model_on_window()?;
    sample_poisson_with(&m, &mut rng_for(c.seed, 0))
}

/// Point set with a bucket grid that supports insertion and removal.
struct DynamicPattern {
    points: Vec<Point>,
    cell_of: Vec<usize>,
    slot_of: Vec<usize>,
    cells: Vec<Vec<usize>>,
    window: Window,
    cell: f64,
    nx: usize,
    ny: usize,
}

impl DynamicPattern {
    fn new(window: Window, cell: f64) -> Self {
        let cell = cell.max(window.width().max(window.height()) / 1024.0);
        let nx = ((window.width() / cell).ceil() as usize).max(1);
        let ny = ((window.height() / cell).ceil() as usize).max(1);
        DynamicPattern {
            points: Vec::new(),
            cell_of: Vec::new(),
            slot_of: Vec::new(),
            cells: vec![Vec::new(); nx * ny],
            window,
            cell,
            nx,
            ny,
        }
    }

    fn bucket(&self, u: &Point) -> usize {
        let i = (((u.x - self.window.xmin()) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let j = (((u.y - self.window.ymin()) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        j * self.nx + i
    }

    fn insert(&mut self, u: Point) {
        let b = self.bucket(&u);
        let idx = self.points.len();
        self.points.push(u);
        self.cell_of.push(b);
        self.slot_of.push(self.cells[b].len());
        self.cells[b].push(idx);
    }

    fn remove(&mut self, idx: usize) {
        let b = self.cell_of[idx];
        let slot = self.slot_of[idx];
        self.cells[b].swap_remove(slot);
        if slot < self.cells[b].len() {
            let moved = self.cells[b][slot];
            self.slot_of[moved] = slot;
        }
        let last = self.points.len() - 1;
        if idx != last {
            self.points.swap(idx, last);
            self.cell_of.swap(idx, last);
            self.slot_of.swap(idx, last);
            let lb = self.cell_of[idx];
            let ls = self.slot_of[idx];
            self.cells[lb][ls] = idx;
        }
        self.points.pop();
        self.cell_of.pop();
        self.slot_of.pop();
    }

    fn count_within(&self, u: Point, r: f64) -> usize {
        let r2 = r * r;
        let reach = (r / self.cell).ceil() as isize;
        let ci = ((u.x - self.window.xmin()) / self.cell).floor() as isize;
        let cj = ((u.y - self.window.ymin()) / self.cell).floor() as isize;
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let mut n = 0;
        for j in (cj - reach).max(0)..=(cj + reach).min(ny - 1) {
            for i in (ci - reach).max(0)..=(ci + reach).min(nx - 1) {
                for &k in &self.cells[(j * nx + i) as usize] {
                    if self.points[k].dist2(&u) <= r2 {
                        n += 1;
                    }
                }
            }
        }
        n
    }
}

/// Birth–death Metropolis–Hastings run for a Strauss model on its window
/// with an empty outside (free boundary).
pub fn sample_strauss_with<R: Rng>(m: &ModelSpec, burn_in: usize, sweeps: usize, rng: &mut R) -> Result<PointPattern> {
    let psi = m.psi().unwrap_or(0.0);
    if psi > 0.0 {
        return Err(Error::UnstableModel { psi });
    }
    let range = m.interaction().range();
    let w = *m.window();
    let area = w.area();
    let start = poisson_trend(m, rng)?;
    let mut x = DynamicPattern::new(w, range.unwrap_or(w.width().max(w.height())));
    for u in start.points() {
        x.insert(*u);
    }
    let s_at = |x: &DynamicPattern, u: Point| range.map_or(0, |r| x.count_within(u, r));
    for _ in 0..burn_in + sweeps {
        if rng.gen::<f64>() < 0.5 {
            let u = Point::new(w.xmin() + w.width() * rng.gen::<f64>(), w.ymin() + w.height() * rng.gen::<f64>());
            let lambda = m.intensity_with_count(u, s_at(&x, u));
            let ratio = lambda * area / (x.points.len() + 1) as f64;
            if rng.gen::<f64>() < ratio {
                x.insert(u);
            }
        } else {
            let n = x.points.len();
            if n == 0 {
                continue;
            }
            let idx = rng.gen_range(0..n);
            let v = x.points[idx];
            // v is within distance 0 of itself
            let s = s_at(&x, v).saturating_sub(usize::from(range.is_some()));
            let lambda = m.intensity_with_count(v, s);
            let ratio = n as f64 / (lambda * area);
            if rng.gen::<f64>() < ratio {
                x.remove(idx);
            }
        }
    }
    let mut pts = x.points;
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a == b);
    PointPattern::new(pts, w)
}

pub fn sample_strauss(c: &SimConfig) -> Result<PointPattern> {
    let m = c.model_on_window()?;
    sample_strauss_with(&m, c.burn_in, c.sweeps, &mut rng_for(c.seed, 0))
}

/// Draws replicate `r` (stream `r + 1`) of the model: Poisson thinning
/// without interaction, birth–death otherwise.
pub fn sample_replicate(m: &ModelSpec, seed: u64, r: u64, burn_in: usize, sweeps: usize) -> Result<PointPattern> {
    let mut rng = rng_for(seed, r + 1);
    match m.interaction() {
        Interaction::None => sample_poisson_with(m, &mut rng),
        Interaction::Strauss { .. } => sample_strauss_with(m, burn_in, sweeps, &mut rng),
    }
}

/// Outcome of a Monte-Carlo identity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub z: f64,
    pub replicates: usize,
}

impl IdentityCheck {
    pub fn passes(&self, z_max: f64) -> bool {
        self.z.abs() < z_max
    }
}

fn z_score(diff_mean: f64, sd: f64, n: usize) -> f64 {
    let se = sd / (n as f64).sqrt();
    if se > 0.0 {
        diff_mean / se
    } else if diff_mean == 0.0 {
        0.0
    } else {
        diff_mean.signum() * f64::INFINITY
    }
}

/// Midpoint-rule integral of `f` over an `n x n` grid of `w`.
pub fn grid_integral(w: &Window, n: usize, f: impl Fn(Point) -> f64) -> f64 {
    let cell = w.area() / (n * n) as f64;
    let mut s = KahanSum::default();
    for u in w.tile_centers(n, n) {
        s.add(f(u) * cell);
    }
    s.value()
}

/// Campbell identity `E sum_{u in X} h(u) = int h rho` for a Poisson model.
pub fn campbell_check(
    m: &ModelSpec,
    h: &(dyn Fn(Point) -> f64 + Sync),
    replicates: usize,
    seed: u64,
) -> Result<IdentityCheck> {
    if m.interaction() != Interaction::None {
        return Err(Error::InvalidModel("the Campbell check needs a Poisson model".into()));
    }
    let rhs = grid_integral(m.window(), CAMPBELL_GRID, |u| h(u) * m.trend_eta(u).exp());
    let sums: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let x = sample_replicate(m, seed, r, 0, 0)?;
            Ok(x.points().iter().map(|u| h(*u)).collect::<KahanSum>().value())
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, sd) = mean_sd(&sums);
    Ok(IdentityCheck { lhs: mean, rhs, z: z_score(mean - rhs, sd, replicates), replicates })
}

/// Test function `h(u, x)` for the GNZ check. `exclude` names the index of a
/// point of `x` to be treated as absent.
pub type GnzFunction<'a> = dyn Fn(Point, &NeighborIndex, Option<usize>) -> f64 + Sync + 'a;

/// GNZ identity `E sum_{u in X cap D} h(u, X \ u) = E int_D h(u, X) lambda(u, X) du`
/// with `D` the window eroded by the interaction range. Returns the means of
/// both sides and the z-score of their paired difference.
pub fn gnz_check(
    m: &ModelSpec,
    h: &GnzFunction<'_>,
    replicates: usize,
    seed: u64,
    burn_in: usize,
    grid: usize,
) -> Result<IdentityCheck> {
    if let Some(psi) = m.psi() {
        if psi > 0.0 {
            return Err(Error::UnstableModel { psi });
        }
    }
    let range = m.interaction().range();
    let domain = m.window().erode(range.unwrap_or(0.0))?;
    let pairs: Vec<(f64, f64)> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let x = sample_replicate(m, seed, r, burn_in, 0)?;
            let idx = NeighborIndex::from_pattern(&x, range.unwrap_or(m.window().width()));
            let lhs = x
                .points()
                .iter()
                .enumerate()
                .filter(|(_, u)| domain.contains(u))
                .map(|(i, u)| h(*u, &idx, Some(i)))
                .collect::<KahanSum>()
                .value();
            let rhs = grid_integral(&domain, grid, |u| {
                let s = range.map_or(0, |r| idx.count_within(u, r, None));
                h(u, &idx, None) * m.intensity_with_count(u, s)
            });
            Ok((lhs, rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (dm, dsd) = mean_sd(&diff);
    Ok(IdentityCheck { lhs: mean_sd(&lhs).0, rhs: mean_sd(&rhs).0, z: z_score(dm, dsd, replicates), replicates })
}
