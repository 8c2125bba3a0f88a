//! Sample grids and inequality reports with JSON/CSV export.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Shortest round-trip decimal form.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(";")
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Tensor grid over `t`, `x` and `xi` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub ts: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub xis: Vec<Vec<f64>>,
}

impl Grid {
    /// One-dimensional grid: `nt` times in `[t0, t1]`, `nx` points in `[x0, x1]`, fixed `xi`.
    pub fn line(t: (f64, f64, usize), x: (f64, f64, usize), xi: f64) -> Self {
        Grid {
            ts: linspace(t.0, t.1, t.2),
            xs: linspace(x.0, x.1, x.2).into_iter().map(|v| vec![v]).collect(),
            xis: vec![vec![xi]],
        }
    }

    pub fn describe(&self) -> String {
        let span = |v: &[f64]| match (v.first(), v.last()) {
            (Some(a), Some(b)) => format!("[{a}, {b}]"),
            _ => "[]".into(),
        };
        let x0: Vec<f64> = self.xs.iter().map(|x| x[0]).collect();
        format!(
            "t {} x{} x {} x{} xi x{}",
            span(&self.ts),
            self.ts.len(),
            span(&x0),
            self.xs.len(),
            self.xis.len()
        )
    }

    pub fn space_points(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::with_capacity(self.xs.len() * self.xis.len());
        for x in &self.xs {
            for xi in &self.xis {
                out.push((x.clone(), xi.clone()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

impl BoundPoint {
    /// Point for `lhs >= rhs`.
    pub fn new(t: f64, x: &[f64], xi: &[f64], lhs: f64, rhs: f64) -> Self {
        BoundPoint {
            t,
            x: x.to_vec(),
            xi: xi.to_vec(),
            lhs,
            rhs,
            margin: lhs - rhs,
        }
    }
}

/// Outcome of checking one inequality `lhs >= rhs` over a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub id: String,
    pub grid: String,
    pub tolerance: f64,
    pub worst_margin: f64,
    pub fitted_constant: f64,
    pub violating_points: Vec<BoundPoint>,
    #[serde(skip)]
    pub points: Vec<BoundPoint>,
}

impl BoundReport {
    pub fn from_points(
        id: impl Into<String>,
        grid: impl Into<String>,
        tolerance: f64,
        fitted_constant: f64,
        points: Vec<BoundPoint>,
    ) -> Self {
        let worst_margin = points
            .iter()
            .map(|p| p.margin)
            .fold(f64::INFINITY, |a, b| if b.is_nan() { f64::NEG_INFINITY } else { a.min(b) });
        let violating_points = points
            .iter()
            .filter(|p| !(p.margin >= -tolerance))
            .cloned()
            .collect();
        BoundReport {
            id: id.into(),
            grid: grid.into(),
            tolerance,
            worst_margin,
            fitted_constant,
            violating_points,
            points,
        }
    }

    pub fn passed(&self) -> bool {
        self.violating_points.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn csv_header() -> [&'static str; 7] {
        ["id", "t", "x", "xi", "lhs", "rhs", "margin"]
    }

    pub fn csv_rows(&self, only_violations: bool) -> Vec<Vec<String>> {
        let pts = if only_violations {
            &self.violating_points
        } else {
            &self.points
        };
        pts.iter()
            .map(|p| {
                vec![
                    self.id.clone(),
                    fmt_num(p.t),
                    fmt_vec(&p.x),
                    fmt_vec(&p.xi),
                    fmt_num(p.lhs),
                    fmt_num(p.rhs),
                    fmt_num(p.margin),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_table(w, &Self::csv_header(), &self.csv_rows(false))
    }
}

pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(header).map_err(io)?;
    for r in rows {
        out.write_record(r).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_collects_violations() {
        let pts = vec![
            BoundPoint::new(0.0, &[0.1], &[1.0], 1.0, 0.5),
            BoundPoint::new(0.1, &[0.1], &[1.0], 0.5, 1.0),
        ];
        let r = BoundReport::from_points("demo", "g", 1e-12, 0.5, pts);
        assert_eq!(r.worst_margin, -0.5);
        assert_eq!(r.violating_points.len(), 1);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "id,t,x,xi,lhs,rhs,margin");
        assert_eq!(text.lines().nth(2).unwrap(), "demo,0.1,0.1,1,0.5,1,-0.5");
    }

    #[test]
    fn shortest_round_trip() {
        assert_eq!(fmt_num(0.1), "0.1");
        assert_eq!(fmt_num(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
