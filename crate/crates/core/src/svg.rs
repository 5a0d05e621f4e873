//! Minimal self-contained SVG line charts for proportion curves.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    /// Lower and upper band at each point, drawn shaded.
    pub band: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Emitted as an XML comment at the top of the document.
    pub note: Option<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e5 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl Chart {
    /// Renders with the y axis fixed to `[0, 1]`.
    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let (mut x_min, mut x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if !x_min.is_finite() {
            (x_min, x_max) = (0.0, 1.0);
        }
        if x_max <= x_min {
            x_max = x_min + 1.0;
        }
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
        let sy = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * plot_h;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        if let Some(note) = &self.note {
            let _ = writeln!(out, "<!-- {} -->", note.replace("--", "-"));
        }
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            escape(&self.title)
        );

        for k in 0..=4 {
            let y = k as f64 / 4.0;
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{py:.2}" x2="{x2:.2}" y2="{py:.2}" stroke="#dddddd"/><text x="{tx}" y="{ty:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{y:.2}</text>"##,
                py = sy(y),
                x2 = LEFT + plot_w,
                tx = LEFT - 6.0,
                ty = sy(y) + 4.0
            );
        }
        for k in 0..=4 {
            let x = x_min + (x_max - x_min) * k as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{px:.2}" y="{ty:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"#,
                px = sx(x),
                ty = TOP + plot_h + 18.0,
                label = fmt_tick(x)
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        for (idx, s) in self.series.iter().enumerate() {
            if let Some(band) = &s.band {
                let mut pts: Vec<String> = s
                    .points
                    .iter()
                    .zip(band)
                    .map(|((x, _), (_, hi))| format!("{:.2},{:.2}", sx(*x), sy(*hi)))
                    .collect();
                pts.extend(
                    s.points
                        .iter()
                        .zip(band)
                        .rev()
                        .map(|((x, _), (lo, _))| format!("{:.2},{:.2}", sx(*x), sy(*lo))),
                );
                let _ = writeln!(
                    out,
                    r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.join(" "),
                    s.color
                );
            }
            let line: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                line.join(" "),
                s.color
            );
            for (x, y) in &s.points {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#, sx(*x), sy(*y), s.color);
            }
            let ly = TOP + 14.0 + idx as f64 * 18.0;
            let lx = LEFT + plot_w + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
                lx + 18.0,
                s.color,
                lx + 24.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}
