//! Minimal static line charts. Output depends only on the data, so identical
//! inputs give byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 540.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#c0392b", "#2471a3", "#7f8c8d", "#27ae60", "#8e44ad", "#d68910", "#17a589", "#2c3e50",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: usize,
    pub style: Style,
    pub points: Vec<(f64, f64)>,
}

/// Shaded region between `lo` and `hi` at each x.
#[derive(Debug, Clone)]
pub struct Band {
    pub color: usize,
    pub opacity: f64,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
}

struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Scale { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl Chart {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let mut add = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
            }
        };
        for s in &self.series {
            for &(x, y) in &s.points {
                add(x, y);
            }
        }
        for band in &self.bands {
            for &(x, lo, hi) in &band.points {
                add(x, lo);
                add(x, hi);
            }
        }
        if b.0 > b.1 {
            (0.0, 1.0, 0.0, 1.0)
        } else {
            b
        }
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pad = (y1 - y0).abs() * 0.05;
        let xs = Scale::new(x0, x1, LEFT, WIDTH - RIGHT);
        let ys = Scale::new(y0 - pad, y1 + pad, HEIGHT - BOTTOM, TOP);
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(w, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&self.title));

        // axes and ticks
        let (px0, px1) = (LEFT, WIDTH - RIGHT);
        let (py0, py1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(w, r#"<path d="M{px0:.2} {py1:.2} V{py0:.2} H{px1:.2}" stroke="black" fill="none"/>"#);
        for i in 0..=4 {
            let xv = xs.lo + (xs.hi - xs.lo) * i as f64 / 4.0;
            let px = xs.map(xv);
            let _ = writeln!(w, r#"<line x1="{px:.2}" y1="{py0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, py0 + 5.0);
            let _ = writeln!(w, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, py0 + 18.0, tick_label(xv));
            let yv = ys.lo + (ys.hi - ys.lo) * i as f64 / 4.0;
            let py = ys.map(yv);
            let _ = writeln!(w, r#"<line x1="{:.2}" y1="{py:.2}" x2="{px0:.2}" y2="{py:.2}" stroke="black"/>"#, px0 - 5.0);
            let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, px0 - 8.0, py + 4.0, tick_label(yv));
        }
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (px0 + px1) / 2.0, HEIGHT - 10.0, escape(&self.x_label));
        let _ = writeln!(
            w,
            r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (py0 + py1) / 2.0,
            escape(&self.y_label)
        );

        for band in &self.bands {
            if band.points.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (i, &(x, _, hi)) in band.points.iter().enumerate() {
                let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, xs.map(x), ys.map(hi));
            }
            for &(x, lo, _) in band.points.iter().rev() {
                let _ = write!(d, "L{:.2} {:.2} ", xs.map(x), ys.map(lo));
            }
            let _ = writeln!(
                w,
                r#"<path d="{}Z" fill="{}" fill-opacity="{:.2}" stroke="none"/>"#,
                d,
                color(band.color),
                band.opacity
            );
        }

        for s in &self.series {
            let c = color(s.color);
            match s.style {
                Style::Points => {
                    for &(x, y) in &s.points {
                        let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="none" stroke="{c}"/>"#, xs.map(x), ys.map(y));
                    }
                }
                Style::Line | Style::Dashed => {
                    if s.points.is_empty() {
                        continue;
                    }
                    let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", xs.map(x), ys.map(y))).collect();
                    let dash = if s.style == Style::Dashed { r#" stroke-dasharray="5 3""# } else { "" };
                    let _ = writeln!(
                        w,
                        r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.3"{dash}/>"#,
                        pts.join(" ")
                    );
                }
            }
        }

        // legend, one entry per distinct label
        let mut seen = Vec::new();
        for s in &self.series {
            if s.label.is_empty() || seen.contains(&&s.label) {
                continue;
            }
            seen.push(&s.label);
            let y = TOP + 16.0 * seen.len() as f64;
            let x = WIDTH - RIGHT + 15.0;
            let _ = writeln!(w, r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#, y - 4.0, x + 18.0, y - 4.0, color(s.color));
            let _ = writeln!(w, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 24.0, escape(&s.label));
        }
        out.push_str("</svg>\n");
        out
    }
}
