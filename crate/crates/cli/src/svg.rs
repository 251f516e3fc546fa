//! Self-contained SVG line plot for budget sweeps.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;

const COMPLIANCE_COLOR: &str = "#1f77b4";
const SUCCESS_COLOR: &str = "#d62728";

pub struct Series {
    pub gammas: Vec<f64>,
    pub compliance: Vec<Option<f64>>,
    pub success: Vec<Option<f64>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Compliance and success rates against `log10 gamma`; points without a
/// value are skipped.
pub fn sweep_plot(title: &str, s: &Series) -> String {
    let logs: Vec<f64> = s.gammas.iter().map(|g| g.log10()).collect();
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let x_of = |l: f64| {
        if hi > lo {
            LEFT + pw * (l - lo) / (hi - lo)
        } else {
            LEFT + pw / 2.0
        }
    };
    let y_of = |r: f64| TOP + ph * (1.0 - r);

    let mut out = String::new();
    let w = &mut out;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    for k in 0..=4 {
        let r = k as f64 / 4.0;
        let y = y_of(r);
        writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            WIDTH - RIGHT
        )
        .unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{r:.2}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
    }
    for (g, &l) in s.gammas.iter().zip(&logs) {
        let x = x_of(l);
        writeln!(
            w,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#888888"/>"##,
            TOP + ph,
            TOP + ph + 5.0
        )
        .unwrap();
        writeln!(w, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{g:e}</text>"#, TOP + ph + 19.0).unwrap();
    }
    writeln!(
        w,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444444"/>"##
    )
    .unwrap();
    writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">gamma (log scale)</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0).unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">rate</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    )
    .unwrap();

    for (values, color, label, row) in [
        (&s.compliance, COMPLIANCE_COLOR, "compliance", 0),
        (&s.success, SUCCESS_COLOR, "success", 1),
    ] {
        let pts: Vec<(f64, f64)> = logs
            .iter()
            .zip(values.iter())
            .filter_map(|(&l, v)| v.map(|r| (x_of(l), y_of(r))))
            .collect();
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            writeln!(
                w,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.join(" ")
            )
            .unwrap();
        }
        for (x, y) in &pts {
            writeln!(w, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{color}"/>"#).unwrap();
        }
        let ly = TOP + 14.0 + 16.0 * row as f64;
        let lx = WIDTH - RIGHT - 110.0;
        writeln!(
            w,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        )
        .unwrap();
        writeln!(w, r#"<text x="{}" y="{}">{label}</text>"#, lx + 24.0, ly + 4.0).unwrap();
    }
    out.push_str("</svg>\n");
    out
}
