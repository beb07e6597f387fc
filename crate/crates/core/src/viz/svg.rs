use std::fmt::Write as _;

use super::{GenderTag, Projection};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const PLOT_LEFT: f64 = 40.0;
const PLOT_RIGHT: f64 = 640.0;
const PLOT_TOP: f64 = 40.0;
const PLOT_BOTTOM: f64 = 560.0;

fn color(tag: GenderTag) -> &'static str {
    match tag {
        GenderTag::MaleForm => "#1f77b4",
        GenderTag::FemaleForm => "#d62728",
        GenderTag::Adjective => "#2ca02c",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi - lo <= 0.0 {
        return 0.5 * (out_lo + out_hi);
    }
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

/// Scatter plot with one colour per tag, text labels and a legend.
/// Output depends only on the projection, so equal inputs give equal bytes.
pub fn render_svg(p: &Projection, title: &str) -> String {
    let xs = p.points.iter().map(|pt| pt.x);
    let ys = p.points.iter().map(|pt| pt.y);
    let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{PLOT_LEFT}" y="24" font-size="16">{}</text>"#, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{PLOT_LEFT}" y="{PLOT_TOP}" width="{}" height="{}" fill="none" stroke="#cccccc"/>"##,
        PLOT_RIGHT - PLOT_LEFT,
        PLOT_BOTTOM - PLOT_TOP
    );
    let pad = 20.0;
    for pt in &p.points {
        let cx = scale(pt.x, xmin, xmax, PLOT_LEFT + pad, PLOT_RIGHT - pad);
        // SVG y grows downwards
        let cy = scale(pt.y, ymin, ymax, PLOT_BOTTOM - pad, PLOT_TOP + pad);
        let _ = writeln!(
            out,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{}" class="{}"/>"#,
            color(pt.tag),
            pt.tag.as_str()
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12">{}</text>"#,
            cx + 7.0,
            cy + 4.0,
            escape(&pt.label)
        );
    }
    let legend = [
        (GenderTag::MaleForm, "male form"),
        (GenderTag::FemaleForm, "female form"),
        (GenderTag::Adjective, "adjective"),
    ];
    for (k, (tag, name)) in legend.iter().enumerate() {
        let y = PLOT_TOP + 20.0 + 24.0 * k as f64;
        let _ = writeln!(out, r#"<circle cx="665" cy="{y}" r="6" fill="{}"/>"#, color(*tag));
        let _ = writeln!(out, r#"<text x="678" y="{}" font-size="13">{name}</text>"#, y + 4.0);
    }
    out.push_str("</svg>\n");
    out
}
