//! Rectangular windows, planar point patterns and neighbour queries.

use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    fn key(&self) -> (u64, u64) {
        // +0.0 and -0.0 are the same location
        ((self.x + 0.0).to_bits(), (self.y + 0.0).to_bits())
    }
}

/// Closed axis-aligned rectangle `[xmin, xmax] x [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Window {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let finite = [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(Error::InvalidWindow(format!(
                "[{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(Window { xmin, xmax, ymin, ymax })
    }

    pub fn unit() -> Self {
        Window { xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 }
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }
    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    #[inline]
    pub fn contains(&self, u: &Point) -> bool {
        u.x >= self.xmin && u.x <= self.xmax && u.y >= self.ymin && u.y <= self.ymax
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        other.xmin >= self.xmin
            && other.xmax <= self.xmax
            && other.ymin >= self.ymin
            && other.ymax <= self.ymax
    }

    /// Shrinks every side by `r`.
    pub fn erode(&self, r: f64) -> Result<Window> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidWindow(format!("erosion range {r}")));
        }
        if r == 0.0 {
            return Ok(*self);
        }
        let w = Window {
            xmin: self.xmin + r,
            xmax: self.xmax - r,
            ymin: self.ymin + r,
            ymax: self.ymax - r,
        };
        if w.xmin >= w.xmax || w.ymin >= w.ymax {
            return Err(Error::EmptyErosion { range: r });
        }
        Ok(w)
    }

    /// Centres of an `nx x ny` lattice of equal tiles, row by row from the bottom.
    pub fn tile_centers(&self, nx: usize, ny: usize) -> Vec<Point> {
        let dx = self.width() / nx as f64;
        let dy = self.height() / ny as f64;
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = self.ymin + (j as f64 + 0.5) * dy;
            for i in 0..nx {
                out.push(Point::new(self.xmin + (i as f64 + 0.5) * dx, y));
            }
        }
        out
    }

    /// Index of the tile containing `u` in an `nx x ny` tiling, with the same
    /// ordering as [`Window::tile_centers`]. Points on interior tile edges go to
    /// the tile with the larger index; the outer boundary is clamped.
    #[inline]
    pub fn tile_of(&self, u: &Point, nx: usize, ny: usize) -> usize {
        let i = cell_index(u.x - self.xmin, self.width(), nx);
        let j = cell_index(u.y - self.ymin, self.height(), ny);
        j * nx + i
    }
}

#[inline]
pub(crate) fn cell_index(offset: f64, extent: f64, n: usize) -> usize {
    let k = (offset / extent * n as f64).floor();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

/// A finite simple point configuration observed in a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    points: Vec<Point>,
    window: Window,
}

impl PointPattern {
    /// Rejects points outside the window and repeated locations.
    pub fn new(points: Vec<Point>, window: Window) -> Result<Self> {
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if !p.x.is_finite() || !p.y.is_finite() || !window.contains(p) {
                return Err(Error::OutOfWindow { x: p.x, y: p.y });
            }
            if !seen.insert(p.key()) {
                return Err(Error::DuplicatePoint { x: p.x, y: p.y });
            }
        }
        Ok(PointPattern { points, window })
    }

    pub fn empty(window: Window) -> Self {
        PointPattern { points: Vec::new(), window }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count_in(&self, b: &Window) -> usize {
        self.points.iter().filter(|p| b.contains(p)).count()
    }

    /// Points of the pattern lying inside `b`, carried over to a new pattern on `b`.
    pub fn restrict(&self, b: &Window) -> PointPattern {
        PointPattern {
            points: self.points.iter().copied().filter(|p| b.contains(p)).collect(),
            window: *b,
        }
    }
}

/// Number of points of `p` inside `b` (closed boundaries).
pub fn count_in(p: &PointPattern, b: &Window) -> usize {
    p.count_in(b)
}

/// Number of points `v` of `p` with `|v - u| <= r`. A point equal to
/// `exclude` is not counted.
pub fn neighbors_within(p: &PointPattern, u: Point, r: f64, exclude: Option<Point>) -> usize {
    let r2 = r * r;
    let skip = exclude.map(|e| e.key());
    p.points
        .iter()
        .filter(|v| v.dist2(&u) <= r2 && Some(v.key()) != skip)
        .count()
}

/// Uniform bucket grid over a fixed set of points for radius queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Point>,
    xmin: f64,
    ymin: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    // CSR layout: bucket b holds order[start[b]..start[b + 1]]
    start: Vec<usize>,
    order: Vec<usize>,
}

impl NeighborIndex {
    /// Builds an index over `points` inside `window` with bucket side `cell`.
    pub fn new(points: &[Point], window: &Window, cell: f64) -> Self {
        let cell = if cell > 0.0 && cell.is_finite() {
            cell.max(window.width().max(window.height()) / 4096.0)
        } else {
            window.width().max(window.height())
        };
        let nx = ((window.width() / cell).ceil() as usize).max(1);
        let ny = ((window.height() / cell).ceil() as usize).max(1);
        let mut counts = vec![0usize; nx * ny + 1];
        let buckets: Vec<usize> = points
            .iter()
            .map(|p| bucket(p, window.xmin, window.ymin, cell, nx, ny))
            .collect();
        for &b in &buckets {
            counts[b + 1] += 1;
        }
        for b in 0..nx * ny {
            counts[b + 1] += counts[b];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &b) in buckets.iter().enumerate() {
            order[fill[b]] = i;
            fill[b] += 1;
        }
        NeighborIndex {
            points: points.to_vec(),
            xmin: window.xmin,
            ymin: window.ymin,
            cell,
            nx,
            ny,
            start: counts,
            order,
        }
    }

    pub fn from_pattern(p: &PointPattern, cell: f64) -> Self {
        Self::new(p.points(), p.window(), cell)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Counts indexed points within distance `r` of `u`, skipping the point
    /// with index `exclude`.
    pub fn count_within(&self, u: Point, r: f64, exclude: Option<usize>) -> usize {
        let mut n = 0;
        self.for_each_within(u, r, |i| {
            if Some(i) != exclude {
                n += 1;
            }
        });
        n
    }

    pub fn for_each_within(&self, u: Point, r: f64, mut f: impl FnMut(usize)) {
        let r2 = r * r;
        let reach = (r / self.cell).ceil() as isize;
        let ci = ((u.x - self.xmin) / self.cell).floor() as isize;
        let cj = ((u.y - self.ymin) / self.cell).floor() as isize;
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let i0 = (ci - reach).max(0);
        let i1 = (ci + reach).min(nx - 1);
        let j0 = (cj - reach).max(0);
        let j1 = (cj + reach).min(ny - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let b = (j * nx + i) as usize;
                for &k in &self.order[self.start[b]..self.start[b + 1]] {
                    if self.points[k].dist2(&u) <= r2 {
                        f(k);
                    }
                }
            }
        }
    }
}

#[inline]
fn bucket(p: &Point, xmin: f64, ymin: f64, cell: f64, nx: usize, ny: usize) -> usize {
    let i = (((p.x - xmin) / cell).floor().max(0.0) as usize).min(nx - 1);
    let j = (((p.y - ymin) / cell).floor().max(0.0) as usize).min(ny - 1);
    j * nx + i
}
