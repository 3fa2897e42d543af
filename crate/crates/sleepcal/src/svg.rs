//! Self-contained SVG plots: reliability diagrams, 2-D heatmaps and overlaid
//! 1-D histograms.

use std::fmt::Write;

use sleepcal_core::analysis::{Histogram1D, Histogram2D};
use sleepcal_core::ReliabilityBins;

const W: f64 = 480.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1) = (f.px(f.x.0), f.px(f.x.1));
    let (y0, y1) = (f.py(f.y.0), f.py(f.y.1));
    let _ = writeln!(out, r#"<path d="M{x0:.2} {y1:.2} V{y0:.2} H{x1:.2}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.px(xv),
            y0 + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Per-bin accuracy bars with the confidence gap and the identity diagonal.
pub fn reliability_diagram(bins: &ReliabilityBins, title: &str) -> String {
    let f = Frame {
        x: (0.0, 1.0),
        y: (0.0, 1.0),
    };
    let mut out = String::new();
    open(&mut out, title);
    for b in &bins.bins {
        if b.count == 0 {
            continue;
        }
        let (x0, x1) = (f.px(b.low), f.px(b.high));
        let top = f.py(b.accuracy);
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white"/>"##,
            x1 - x0,
            f.py(0.0) - top
        );
        let (lo, hi) = if b.accuracy < b.confidence {
            (b.accuracy, b.confidence)
        } else {
            (b.confidence, b.accuracy)
        };
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#d62728" fill-opacity="0.4"/>"##,
            f.py(hi),
            x1 - x0,
            f.py(lo) - f.py(hi)
        );
    }
    let _ = writeln!(
        out,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="4 3"/>"##,
        f.px(0.0),
        f.py(0.0),
        f.px(1.0),
        f.py(1.0)
    );
    axes(&mut out, &f, "confidence", "accuracy");
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}">ECE {:.4}</text>"#,
        f.px(0.05),
        f.py(0.92),
        bins.ece()
    );
    out.push_str("</svg>\n");
    out
}

/// Counts as a white-to-blue heatmap with the diagonal in red.
pub fn heatmap(h: &Histogram2D, title: &str, xlabel: &str, ylabel: &str) -> String {
    let (xe, ye) = (&h.x_edges, &h.y_edges);
    let f = Frame {
        x: (xe[0], xe[xe.len() - 1]),
        y: (ye[0], ye[ye.len() - 1]),
    };
    let max = h.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut out = String::new();
    open(&mut out, title);
    for (i, row) in h.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            // log scale so sparse off-diagonal cells stay visible
            let t = (1.0 + c as f64).ln() / (1.0 + max).ln();
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let (x0, x1) = (f.px(xe[i]), f.px(xe[i + 1]));
            let (y0, y1) = (f.py(ye[j]), f.py(ye[j + 1]));
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},255)"/>"#,
                x1 - x0,
                y0 - y1
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="red"/>"#,
        f.px(f.x.0),
        f.py(f.y.0),
        f.px(f.x.1),
        f.py(f.y.1)
    );
    axes(&mut out, &f, xlabel, ylabel);
    out.push_str("</svg>\n");
    out
}

/// Step outlines of several histograms on shared axes, normalised to
/// fractions so series of different sizes compare.
pub fn overlaid_histograms(series: &[(&str, &Histogram1D)], title: &str, xlabel: &str) -> String {
    let lo = series.iter().map(|(_, h)| h.edges[0]).fold(f64::INFINITY, f64::min);
    let hi = series
        .iter()
        .map(|(_, h)| h.edges[h.edges.len() - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let ymax = series
        .iter()
        .flat_map(|(_, h)| {
            let n = h.total().max(1) as f64;
            h.counts.iter().map(move |&c| c as f64 / n)
        })
        .fold(0.0, f64::max)
        .max(1e-12);
    let f = Frame {
        x: (lo, hi),
        y: (0.0, ymax),
    };
    let mut out = String::new();
    open(&mut out, title);
    for (k, (name, h)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let n = h.total().max(1) as f64;
        let mut d = format!("M{:.2} {:.2}", f.px(h.edges[0]), f.py(0.0));
        for (i, &c) in h.counts.iter().enumerate() {
            let y = f.py(c as f64 / n);
            let _ = write!(d, " V{y:.2} H{:.2}", f.px(h.edges[i + 1]));
        }
        let _ = write!(d, " V{:.2}", f.py(0.0));
        let _ = writeln!(
            out,
            r#"<path d="{d}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            W - RIGHT - 110.0,
            TOP + 16.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    axes(&mut out, &f, xlabel, "fraction");
    out.push_str("</svg>\n");
    out
}
