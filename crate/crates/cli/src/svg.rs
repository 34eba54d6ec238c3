//! Minimal SVG figures. Output is plain text with fixed-precision numbers,
//! so equal inputs give byte-equal files.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub markers: bool,
}

#[derive(Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference lines with labels.
    pub hlines: Vec<(f64, String)>,
    /// Vertical tick marks with labels, e.g. symmetry points.
    pub vticks: Vec<(f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn line_chart(c: &Chart) -> String {
    let mut out = String::new();
    header(&mut out, &c.title);
    let (x0, x1) = range(c.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(
        c.series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(c.hlines.iter().map(|h| h.0)),
    );
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    for k in 0..=4 {
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#, px(x), H - MARGIN + 16.0, x);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#, MARGIN - 4.0, py(y) + 4.0, y);
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(&c.x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&c.y_label)
    );
    for (x, label) in &c.vticks {
        let _ = writeln!(
            out,
            r##"<line x1="{0:.1}" y1="{MARGIN}" x2="{0:.1}" y2="{1:.1}" stroke="#bbb"/><text x="{0:.1}" y="{2:.1}" text-anchor="middle">{3}</text>"##,
            px(*x),
            H - MARGIN,
            MARGIN - 6.0,
            escape(label)
        );
    }
    for (y, label) in &c.hlines {
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#555" stroke-dasharray="6 4"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{4}</text>"##,
            py(*y),
            W - MARGIN,
            W - MARGIN - 4.0,
            py(*y) - 4.0,
            escape(label)
        );
    }
    for (k, s) in c.series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if s.markers {
            for p in &pts {
                let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
                let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{colour}"/>"#);
            }
        } else if !pts.is_empty() {
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, pts.join(" "));
        }
        if !s.label.is_empty() {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" fill="{colour}">{}</text>"#,
                MARGIN + 8.0,
                MARGIN + 16.0 * (k + 1) as f64,
                escape(&s.label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Blue-white-red colour for `t` in `[-1, 1]`.
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// White-to-dark colour for `t` in `[0, 1]`.
fn sequential(t: f64) -> String {
    let v = (255.0 * (1.0 - t.clamp(0.0, 1.0))).round() as u8;
    format!("#{v:02x}{v:02x}ff")
}

/// `nx x ny` cells, `values[i + nx * j]`, symmetric colour scale about 0.
pub fn heatmap(title: &str, nx: usize, ny: usize, values: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let side = (H - 2.0 * MARGIN).min(W - 2.0 * MARGIN);
    let (cw, ch) = (side / nx.max(1) as f64, side / ny.max(1) as f64);
    let left = (W - side) / 2.0;
    for j in 0..ny {
        for i in 0..nx {
            let v = values.get(i + nx * j).copied().unwrap_or(0.0);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                left + i as f64 * cw,
                H - MARGIN - (j + 1) as f64 * ch,
                cw,
                ch,
                diverging(v / scale)
            );
        }
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">max |value| = {:.6e}</text>"#, W / 2.0, H - 20.0, scale);
    out.push_str("</svg>\n");
    out
}

/// Nonnegative nodal values drawn as squares of side `h` at `coords`.
pub fn node_map(title: &str, coords: &[[f64; 2]], h: f64, values: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let (x0, x1) = range(coords.iter().map(|c| c[0]));
    let (y0, y1) = range(coords.iter().map(|c| c[1]));
    let span = (x1 - x0).max(y1 - y0) + h;
    let side = H - 2.0 * MARGIN;
    let s = side / span;
    let left = (W - side) / 2.0;
    let peak = values.iter().fold(0.0_f64, |m, v| m.max(*v)).max(f64::MIN_POSITIVE);
    for (c, v) in coords.iter().zip(values) {
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            left + (c[0] - x0) * s,
            H - MARGIN - (c[1] - y0 + h) * s,
            h * s,
            h * s,
            sequential(v / peak)
        );
    }
    out.push_str("</svg>\n");
    out
}
