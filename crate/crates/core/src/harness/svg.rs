//! Minimal SVG charts: log-log line plots with bands and box plots.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub(crate) fn color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-scaled axis spanning whole decades around the data.
#[derive(Debug, Clone, Copy)]
struct LogAxis {
    lo: f64,
    hi: f64,
    px0: f64,
    px1: f64,
}

impl LogAxis {
    fn new(min: f64, max: f64, px0: f64, px1: f64) -> Self {
        let lo = min.log10().floor();
        let mut hi = max.log10().ceil();
        if hi <= lo {
            hi = lo + 1.0;
        }
        Self { lo, hi, px0, px1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.px0 + (v.log10() - self.lo) / (self.hi - self.lo) * (self.px1 - self.px0)
    }

    fn decades(&self) -> impl Iterator<Item = i32> {
        (self.lo as i32)..=(self.hi as i32)
    }
}

pub(crate) struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    pub color: &'a str,
}

pub(crate) struct Band<'a> {
    pub lo: f64,
    pub hi: f64,
    pub color: &'a str,
}

fn header(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title)).unwrap();
}

fn frame(out: &mut String, xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    writeln!(out, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 20.0, escape(xlabel)).unwrap();
    writeln!(
        out,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    )
    .unwrap();
}

/// Log-log chart of `series` with vertical `bands` shaded along x.
pub(crate) fn loglog_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series<'_>], bands: &[Band<'_>]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| *x > 0.0 && *y > 0.0);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for &(x, y) in pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (1.0, 10.0, 1.0, 10.0);
    }
    let xa = LogAxis::new(xmin, xmax, LEFT, W - RIGHT);
    let ya = LogAxis::new(ymin, ymax, H - BOTTOM, TOP);
    let mut out = String::new();
    header(&mut out, title);
    for b in bands {
        let (a, z) = (xa.map(b.lo.max(10f64.powf(xa.lo))), xa.map(b.hi.min(10f64.powf(xa.hi))));
        if z > a {
            writeln!(
                out,
                r#"<rect x="{a:.2}" y="{TOP}" width="{:.2}" height="{}" fill="{}" fill-opacity="0.15"/>"#,
                z - a,
                H - BOTTOM - TOP,
                b.color
            )
            .unwrap();
        }
    }
    for d in xa.decades() {
        let x = xa.map(10f64.powi(d));
        writeln!(out, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##, H - BOTTOM).unwrap();
        writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{d}</text>"#, H - BOTTOM + 16.0).unwrap();
    }
    for d in ya.decades() {
        let y = ya.map(10f64.powi(d));
        writeln!(out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, W - RIGHT).unwrap();
        writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
    }
    frame(&mut out, xlabel, ylabel);
    for (k, s) in series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", xa.map(x), ya.map(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
            path.join(" "),
            s.color
        )
        .unwrap();
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = W - RIGHT + 12.0;
        writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/>"#, lx + 24.0, s.color).unwrap();
        writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(s.label)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

pub(crate) struct BoxStat<'a> {
    pub label: &'a str,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Box plots on a log y axis, one per entry, left to right.
pub(crate) fn box_chart(title: &str, ylabel: &str, boxes: &[BoxStat<'_>]) -> String {
    let pos = boxes.iter().flat_map(|b| [b.min, b.max]).filter(|v| *v > 0.0 && v.is_finite());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in pos {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        (lo, hi) = (1.0, 10.0);
    }
    let ya = LogAxis::new(lo, hi, H - BOTTOM, TOP);
    let clamp = |v: f64| ya.map(v.max(10f64.powf(ya.lo)));
    let mut out = String::new();
    header(&mut out, title);
    for d in ya.decades() {
        let y = ya.map(10f64.powi(d));
        writeln!(out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, W - RIGHT).unwrap();
        writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
    }
    frame(&mut out, "", ylabel);
    let slot = (W - RIGHT - LEFT) / boxes.len().max(1) as f64;
    for (k, b) in boxes.iter().enumerate() {
        let cx = LEFT + slot * (k as f64 + 0.5);
        let half = (slot * 0.3).min(24.0);
        let c = color(k);
        writeln!(out, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#, clamp(b.min), clamp(b.max)).unwrap();
        writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.3" stroke="{c}"/>"#,
            cx - half,
            clamp(b.q3),
            2.0 * half,
            (clamp(b.q1) - clamp(b.q3)).max(0.5)
        )
        .unwrap();
        let my = clamp(b.median);
        writeln!(out, r#"<line x1="{:.2}" y1="{my:.2}" x2="{:.2}" y2="{my:.2}" stroke="black" stroke-width="2"/>"#, cx - half, cx + half).unwrap();
        writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, escape(b.label)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}
