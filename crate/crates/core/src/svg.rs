//! Minimal SVG figures bound to CSV tables: histograms, scatter plots with
//! categorical colouring, probability heatmaps and grouped bar charts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FigureKind {
    Histogram { bin_width: f64 },
    Scatter,
    /// `x` and `y` hold integer column and row indices; `color` holds values
    /// in [0, 1].
    Heatmap,
    /// `x` holds category labels, `y` bar heights, `color` an optional group.
    Bars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub kind: FigureKind,
    pub title: String,
    /// Bound table file, relative to the output directory.
    pub table: String,
    pub x: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub x_label: String,
    pub y_label: String,
    pub file: String,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick positions covering [lo, hi].
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).abs().max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if a == b { (a - 0.5, b + 0.5) } else { (a, b) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

struct Doc(String);

impl Doc {
    fn new(spec: &FigureSpec, n: usize) -> Self {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            escape(&spec.title)
        );
        let _ = writeln!(
            s,
            r#"<text class="count" x="{:.2}" y="24" text-anchor="end">n = {n}</text>"#,
            W - 10.0
        );
        Doc(s)
    }

    fn axes(&mut self, f: &Frame, spec: &FigureSpec, x_ticks: bool) {
        let s = &mut self.0;
        let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none">"#);
        let _ = writeln!(s, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/>"#);
        let _ = writeln!(s, r#"<line x1="{l}" y1="{b}" x2="{l}" y2="{t}"/>"#);
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<g class="ticks" text-anchor="middle">"#);
        if x_ticks {
            for v in ticks(f.x0, f.x1) {
                let x = f.px(v);
                let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, b + 5.0);
                let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}">{}</text>"#, b + 18.0, tick_label(v));
            }
        }
        for v in ticks(f.y0, f.y1) {
            let y = f.py(v);
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{l}" y2="{y:.2}" stroke="black"/>"#, l - 5.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                l - 8.0,
                y + 4.0,
                tick_label(v)
            );
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            H - 15.0,
            escape(&spec.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (t + b) / 2.0,
            (t + b) / 2.0,
            escape(&spec.y_label)
        );
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        let s = &mut self.0;
        let _ = writeln!(s, r#"<g class="legend">"#);
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 10.0 + 20.0 * i as f64;
            let x = W - RIGHT + 15.0;
            let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/>"#);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 18.0, y + 10.0, escape(label));
        }
        let _ = writeln!(s, "</g>");
    }

    fn finish(mut self) -> String {
        self.0.push_str("</svg>\n");
        self.0
    }
}

fn finite(values: &[f64]) -> Result<(f64, f64)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Figure("non-finite value in bound column".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Distinct labels in order of first appearance.
fn categories<'a>(labels: &[&'a str]) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for l in labels {
        if !out.contains(l) {
            out.push(l);
        }
    }
    out
}

fn need<'a>(field: &'a Option<String>, what: &str) -> Result<&'a str> {
    field
        .as_deref()
        .ok_or_else(|| Error::Figure(format!("figure needs a {what} column")))
}

fn histogram(spec: &FigureSpec, table: &Table, bin_width: f64) -> Result<String> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Figure("bin width must be > 0".into()));
    }
    let xs = table.numbers(&spec.x)?;
    let (lo, hi) = finite(&xs)?;
    let first = (lo / bin_width).floor() as i64;
    let last = (hi / bin_width).floor() as i64;
    let mut counts = vec![0usize; (last - first + 1) as usize];
    for x in &xs {
        counts[((x / bin_width).floor() as i64 - first) as usize] += 1;
    }
    let top = *counts.iter().max().unwrap_or(&1) as f64;
    let f = Frame::new(
        first as f64 * bin_width,
        (last + 1) as f64 * bin_width,
        0.0,
        top * 1.05,
    );
    let mut doc = Doc::new(spec, xs.len());
    doc.axes(&f, spec, true);
    let _ = writeln!(doc.0, r#"<g class="bars" fill="{}" stroke="white">"#, PALETTE[0]);
    for (i, &c) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        let a = (first + i as i64) as f64 * bin_width;
        let (x0, x1) = (f.px(a), f.px(a + bin_width));
        let (y0, y1) = (f.py(c as f64), f.py(0.0));
        let _ = writeln!(
            doc.0,
            r#"<rect class="bar" data-count="{c}" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#,
            x1 - x0,
            y1 - y0
        );
    }
    let _ = writeln!(doc.0, "</g>");
    Ok(doc.finish())
}

fn scatter(spec: &FigureSpec, table: &Table) -> Result<String> {
    let xs = table.numbers(&spec.x)?;
    let ys = table.numbers(need(&spec.y, "y")?)?;
    let classes: Vec<&str> = match &spec.color {
        Some(c) => table.strings(c)?,
        None => vec![""; xs.len()],
    };
    let (x0, x1) = finite(&xs)?;
    let (y0, y1) = finite(&ys)?;
    let f = Frame::new(x0, x1, y0, y1);
    let cats = categories(&classes);
    let mut doc = Doc::new(spec, xs.len());
    doc.axes(&f, spec, true);
    for (k, cat) in cats.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(doc.0, r#"<g class="series" data-class="{}" fill="{color}">"#, escape(cat));
        for i in (0..xs.len()).filter(|&i| classes[i] == *cat) {
            let _ = writeln!(doc.0, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, f.px(xs[i]), f.py(ys[i]));
        }
        let _ = writeln!(doc.0, "</g>");
    }
    if spec.color.is_some() {
        let entries: Vec<(String, &str)> = cats
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let n = classes.iter().filter(|l| *l == c).count();
                (format!("{c} ({n})"), PALETTE[k % PALETTE.len()])
            })
            .collect();
        doc.legend(&entries);
    }
    Ok(doc.finish())
}

/// Linear blend from dark blue at 0 to light yellow at 1.
fn ramp(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(40.0, 250.0), lerp(30.0, 230.0), lerp(120.0, 60.0))
}

fn heatmap(spec: &FigureSpec, table: &Table) -> Result<String> {
    let index = |name: &str| -> Result<Vec<usize>> {
        table
            .numbers(name)?
            .into_iter()
            .map(|v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Figure(format!("column {name:?} must hold grid indices")))
                }
            })
            .collect()
    };
    let cols = index(&spec.x)?;
    let rows = index(need(&spec.y, "y")?)?;
    let vals = table.numbers(need(&spec.color, "value")?)?;
    finite(&vals)?;
    let nc = cols.iter().max().map_or(0, |m| m + 1);
    let nr = rows.iter().max().map_or(0, |m| m + 1);
    let f = Frame::new(0.0, nc as f64, 0.0, nr as f64);
    let mut doc = Doc::new(spec, vals.len());
    doc.axes(&f, spec, true);
    let _ = writeln!(doc.0, r#"<g class="cells">"#);
    for i in 0..vals.len() {
        let (x0, x1) = (f.px(cols[i] as f64), f.px(cols[i] as f64 + 1.0));
        let (y0, y1) = (f.py(rows[i] as f64 + 1.0), f.py(rows[i] as f64));
        let _ = writeln!(
            doc.0,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x1 - x0,
            y1 - y0,
            ramp(vals[i])
        );
    }
    let _ = writeln!(doc.0, "</g>");
    // Colour bar, 0 at the bottom and 1 at the top.
    let (bx, bt, bb) = (W - RIGHT + 25.0, TOP + 20.0, H - BOTTOM - 20.0);
    let _ = writeln!(doc.0, r#"<g class="colorbar">"#);
    let steps = 20;
    for k in 0..steps {
        let v = (k as f64 + 0.5) / steps as f64;
        let y = bb - (k + 1) as f64 * (bb - bt) / steps as f64;
        let _ = writeln!(
            doc.0,
            r#"<rect x="{bx}" y="{y:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            (bb - bt) / steps as f64,
            ramp(v)
        );
    }
    let _ = writeln!(doc.0, r#"<text class="scale-min" x="{}" y="{:.2}">0</text>"#, bx + 22.0, bb + 4.0);
    let _ = writeln!(doc.0, r#"<text class="scale-max" x="{}" y="{:.2}">1</text>"#, bx + 22.0, bt + 4.0);
    let _ = writeln!(doc.0, "</g>");
    Ok(doc.finish())
}

fn bars(spec: &FigureSpec, table: &Table) -> Result<String> {
    let labels = table.strings(&spec.x)?;
    let ys = table.numbers(need(&spec.y, "y")?)?;
    let groups: Vec<&str> = match &spec.color {
        Some(c) => table.strings(c)?,
        None => vec![""; ys.len()],
    };
    let (lo, hi) = finite(&ys)?;
    let cats = categories(&labels);
    let gcats = categories(&groups);
    let f = Frame::new(0.0, cats.len() as f64, lo.min(0.0), hi.max(0.0) * 1.05);
    let mut doc = Doc::new(spec, ys.len());
    doc.axes(&f, spec, false);
    let slot = 0.8 / gcats.len() as f64;
    let _ = writeln!(doc.0, r#"<g class="bars">"#);
    for i in 0..ys.len() {
        let c = cats.iter().position(|l| *l == labels[i]).unwrap_or(0);
        let g = gcats.iter().position(|l| *l == groups[i]).unwrap_or(0);
        let a = c as f64 + 0.1 + g as f64 * slot;
        let (x0, x1) = (f.px(a), f.px(a + slot));
        let (ya, yb) = (f.py(ys[i].max(0.0)), f.py(ys[i].min(0.0)));
        let _ = writeln!(
            doc.0,
            r#"<rect class="bar" x="{x0:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x1 - x0,
            yb - ya,
            PALETTE[g % PALETTE.len()]
        );
    }
    let _ = writeln!(doc.0, "</g>");
    let _ = writeln!(doc.0, r#"<g class="categories" text-anchor="middle">"#);
    for (c, l) in cats.iter().enumerate() {
        let _ = writeln!(
            doc.0,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            f.px(c as f64 + 0.5),
            H - BOTTOM + 18.0,
            escape(&l.parse::<f64>().map(tick_label).unwrap_or_else(|_| l.to_string()))
        );
    }
    let _ = writeln!(doc.0, "</g>");
    if spec.color.is_some() {
        let entries: Vec<(String, &str)> = gcats
            .iter()
            .enumerate()
            .map(|(k, g)| (g.to_string(), PALETTE[k % PALETTE.len()]))
            .collect();
        doc.legend(&entries);
    }
    Ok(doc.finish())
}

/// Renders `spec` from `table`. An empty table is an error.
pub fn emit_figure(spec: &FigureSpec, table: &Table) -> Result<String> {
    if table.is_empty() {
        return Err(Error::Figure(format!("table {} is empty", spec.table)));
    }
    match &spec.kind {
        FigureKind::Histogram { bin_width } => histogram(spec, table, *bin_width),
        FigureKind::Scatter => scatter(spec, table),
        FigureKind::Heatmap => heatmap(spec, table),
        FigureKind::Bars => bars(spec, table),
    }
}
