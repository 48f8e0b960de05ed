//! SVG scatter plot of 2-D embeddings with class centers overlaid.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::export::{read_centers_csv, read_embeddings_csv};

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 6;
const MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let (lo, hi) = if lo > hi {
            (-1.0, 1.0)
        } else if lo == hi {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        };
        let pad = MARGIN * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn unit(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    fn tick(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (TICKS - 1) as f64
    }

    fn decimals(&self) -> usize {
        let step = (self.hi - self.lo) / (TICKS - 1) as f64;
        (2.0 - step.log10().floor()).clamp(0.0, 8.0) as usize
    }
}

fn check_2d(what: &str, cols: usize) -> Result<()> {
    if cols != 2 {
        return Err(Error::InvalidArgument(format!(
            "scatter plots need 2-D embeddings, {what} has {cols} dimensions"
        )));
    }
    Ok(())
}

/// Renders the plot to an SVG string. Output depends only on the inputs.
pub fn scatter_svg(
    points: ArrayView2<'_, f64>,
    labels: &[usize],
    centers: ArrayView2<'_, f64>,
) -> Result<String> {
    check_2d("embedding", points.ncols())?;
    if centers.nrows() > 0 {
        check_2d("centers", centers.ncols())?;
    }
    if points.nrows() != labels.len() {
        return Err(Error::shape(
            "points vs labels",
            points.nrows(),
            labels.len(),
        ));
    }
    let all = || points.outer_iter().chain(centers.outer_iter());
    let xr = Range::of(all().map(|r| r[0]));
    let yr = Range::of(all().map(|r| r[1]));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + xr.unit(x) * pw;
    let sy = |y: f64| TOP + (1.0 - yr.unit(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<rect class="frame" x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    let (xd, yd) = (xr.decimals(), yr.decimals());
    let _ = writeln!(
        s,
        r#"<g class="axes" font-family="sans-serif" font-size="11">"#
    );
    for i in 0..TICKS {
        let (xv, yv) = (xr.tick(i), yr.tick(i));
        let (px, py) = (sx(xv), sy(yv));
        let base = TOP + ph;
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{base:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            base + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{xv:.xd$}</text>"#,
            base + 18.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT:.2}" y2="{py:.2}" stroke="black"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.yd$}</text>"#,
            LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="points">"#);
    for (p, &y) in points.outer_iter().zip(labels) {
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="1.5" fill="{}"/>"#,
            sx(p[0]),
            sy(p[1]),
            PALETTE[y % PALETTE.len()]
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="centers">"#);
    for (j, c) in centers.outer_iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<circle class="center" cx="{:.2}" cy="{:.2}" r="7" fill="none" stroke="{}" stroke-width="2.5"/>"#,
            sx(c[0]),
            sy(c[1]),
            PALETTE[j % PALETTE.len()]
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads an embeddings CSV and its centers CSV and writes the SVG to `out`.
pub fn render_scatter(embedding_csv: &Path, centers_csv: &Path, out: &Path) -> Result<()> {
    let table = read_embeddings_csv(embedding_csv)?;
    check_2d("embedding", table.coords.ncols())?;
    let centers = read_centers_csv(centers_csv)?;
    let svg = scatter_svg(table.coords.view(), &table.labels, centers.view())?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
