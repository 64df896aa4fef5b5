//! Minimal SVG scatter plots of decision cost against forecast error.

use std::fmt::Write as _;

use crate::report::Report;

const W: f64 = 420.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn panel(out: &mut String, x0: f64, title: &str, points: &[(String, f64, f64)]) {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.1, p.2)).unzip();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.08).max(1e-6);
        (lo - pad, hi + pad)
    };
    let (xl, xh) = range(&xs);
    let (yl, yh) = range(&ys);
    let px = |x: f64| x0 + PAD + (x - xl) / (xh - xl) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - yl) / (yh - yl) * (H - 2.0 * PAD);
    writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x0 + PAD,
        PAD,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    )
    .unwrap();
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#, x0 + W / 2.0, PAD - 16.0).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"#, x0 + W / 2.0, H - 12.0, title.split(" vs ").nth(1).unwrap_or("")).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" transform="rotate(-90 {} {})" text-anchor="middle">cost (€/day)</text>"#,
        x0 + 14.0,
        H / 2.0,
        x0 + 14.0,
        H / 2.0
    )
    .unwrap();
    for (label, v) in [(format!("{xl:.3}"), xl), (format!("{xh:.3}"), xh)] {
        writeln!(out, r#"<text x="{}" y="{}" font-size="9" text-anchor="middle">{label}</text>"#, px(v), H - PAD + 12.0).unwrap();
    }
    for (label, v) in [(format!("{yl:.3}"), yl), (format!("{yh:.3}"), yh)] {
        writeln!(out, r#"<text x="{}" y="{}" font-size="9" text-anchor="end">{label}</text>"#, x0 + PAD - 3.0, py(v) + 3.0).unwrap();
    }
    for (name, x, y) in points {
        writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##, px(*x), py(*y)).unwrap();
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="8">{name}</text>"#, px(*x) + 4.0, py(*y) - 4.0).unwrap();
    }
}

/// Two panels: cost against MAE and cost against MSE, one point per row.
pub fn scatter(report: &Report) -> String {
    let pts = |f: fn(&crate::ReportRow) -> Option<f64>| -> Vec<(String, f64, f64)> {
        report
            .rows
            .iter()
            .filter_map(|r| Some((r.name.clone(), f(r)?, r.cost_mean?)))
            .collect()
    };
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif">"#,
        2.0 * W
    )
    .unwrap();
    let mae = pts(|r| r.mae_mean);
    if !mae.is_empty() {
        panel(&mut out, 0.0, "cost vs MAE (kW)", &mae);
        panel(&mut out, W, "cost vs MSE (kW²)", &pts(|r| r.mse_mean));
    }
    out.push_str("</svg>\n");
    out
}
