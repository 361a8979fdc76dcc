//! Text formats: point CSV, raster CSV, quadrature dumps, path and criteria tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointPattern, Window};
use crate::model::Raster;
use crate::numeric::fmt_f64;
use crate::quadrature::QuadratureScheme;
use crate::selection::CriterionTable;
use crate::solver::PathFit;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: '{}' is not a number", s.trim())))
}

/// Parses `x,y` CSV text; the window always comes from the caller.
pub fn parse_points(text: &str, window: Window) -> Result<PointPattern> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == "x,y" => {}
        _ => return Err(Error::Parse("points file must start with the header 'x,y'".into())),
    }
    let mut pts = Vec::new();
    for (i, l) in lines {
        let mut f = l.split(',');
        let (Some(x), Some(y), None) = (f.next(), f.next(), f.next()) else {
            return Err(Error::Parse(format!("line {}: expected two fields", i + 1)));
        };
        pts.push(Point::new(parse_f64(x, i + 1)?, parse_f64(y, i + 1)?));
    }
    PointPattern::new(pts, window)
}

pub fn read_points(path: &Path, window: Window) -> Result<PointPattern> {
    parse_points(&read(path)?, window)
}

pub fn format_points(p: &PointPattern) -> String {
    let mut out = String::from("x,y\n");
    for u in p.points() {
        let _ = writeln!(out, "{},{}", fmt_f64(u.x), fmt_f64(u.y));
    }
    out
}

/// Parses the raster format: `key=value` lines for `nrows`, `ncols`, `xmin`,
/// `xmax`, `ymin`, `ymax`, then `nrows` rows of `ncols` comma-separated values
/// starting from the top row.
pub fn parse_raster(text: &str) -> Result<Raster> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let mut meta = std::collections::BTreeMap::new();
    while let Some((i, l)) = lines.peek().copied() {
        let Some((k, v)) = l.split_once('=') else { break };
        meta.insert(k.trim().to_string(), (v.trim().to_string(), i + 1));
        lines.next();
    }
    let get = |k: &str| -> Result<&(String, usize)> {
        meta.get(k).ok_or_else(|| Error::Parse(format!("raster header is missing '{k}'")))
    };
    let int = |k: &str| -> Result<usize> {
        let (v, line) = get(k)?;
        v.parse::<usize>().map_err(|_| Error::Parse(format!("line {line}: '{k}' must be a positive integer")))
    };
    let float = |k: &str| -> Result<f64> {
        let (v, line) = get(k)?;
        parse_f64(v, *line)
    };
    let (nrows, ncols) = (int("nrows")?, int("ncols")?);
    let extent = Window::new(float("xmin")?, float("xmax")?, float("ymin")?, float("ymax")?)?;
    let mut values = Vec::with_capacity(nrows * ncols);
    let mut rows = 0;
    for (i, l) in lines {
        let row: Vec<f64> = l.split(',').map(|v| parse_f64(v, i + 1)).collect::<Result<_>>()?;
        if row.len() != ncols {
            return Err(Error::Parse(format!("line {}: expected {ncols} values, got {}", i + 1, row.len())));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != nrows {
        return Err(Error::Parse(format!("expected {nrows} raster rows, got {rows}")));
    }
    Raster::new(nrows, ncols, extent, values)
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    parse_raster(&read(path)?)
}

pub fn format_raster(r: &Raster) -> String {
    let e = r.extent();
    let mut out = format!(
        "nrows={}\nncols={}\nxmin={}\nxmax={}\nymin={}\nymax={}\n",
        r.nrows(),
        r.ncols(),
        fmt_f64(e.xmin()),
        fmt_f64(e.xmax()),
        fmt_f64(e.ymin()),
        fmt_f64(e.ymax())
    );
    for row in r.values().chunks(r.ncols()) {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Square matrix CSV (one row per line), used for a user-supplied score covariance.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| l.split(',').map(|v| parse_f64(v, i + 1)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse("matrix file must hold a square matrix".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&read(path)?)
}

/// One row per node: location, weight, pseudo-response, data flag and design row.
pub fn format_scheme(s: &QuadratureScheme) -> String {
    let d = s.domain();
    let mut out = format!(
        "# domain={},{},{},{}\n# dummy_grid={}x{}\n# n_data={}\n# weight_sum={}\n",
        fmt_f64(d.xmin()),
        fmt_f64(d.xmax()),
        fmt_f64(d.ymin()),
        fmt_f64(d.ymax()),
        s.dummy_grid().0,
        s.dummy_grid().1,
        s.n_data(),
        fmt_f64(s.weight_sum()),
    );
    out.push_str("x,y,weight,response,is_data");
    for n in s.coefficient_names() {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for i in 0..s.len() {
        let u = s.nodes()[i];
        let _ = write!(
            out,
            "{},{},{},{},{}",
            fmt_f64(u.x),
            fmt_f64(u.y),
            fmt_f64(s.weights()[i]),
            fmt_f64(s.responses()[i]),
            u8::from(s.is_data()[i])
        );
        for j in 0..s.n_coefficients() {
            out.push(',');
            out.push_str(&fmt_f64(s.design()[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Tidy `tau,coefficient,value` rows for plotting coefficient paths.
pub fn format_path(p: &PathFit) -> String {
    let mut out = String::from("index,tau,coefficient,value\n");
    for k in 0..p.len() {
        for (name, v) in p.names.iter().zip(&p.coefficients[k]) {
            let _ = writeln!(out, "{k},{},{name},{}", fmt_f64(p.taus[k]), fmt_f64(*v));
        }
    }
    out
}

pub fn format_criteria(t: &CriterionTable) -> String {
    let mut out = String::from("tau,loglik,dof,cbic,ceric,converged\n");
    for r in &t.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.tau),
            fmt_f64(r.loglik),
            fmt_f64(r.dof),
            fmt_f64(r.cbic),
            r.ceric.map_or("NA".to_string(), fmt_f64),
            u8::from(r.converged)
        );
    }
    out
}
