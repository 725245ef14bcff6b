//! Minimal self-contained SVG line and scatter plots.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
}

pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    x: (f64, f64),
    y: (f64, f64),
    body: String,
    legend: Vec<(String, String)>,
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Viridis-like ramp for `t` in `[0, 1]`.
pub fn ramp(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let f = t * (STOPS.len() - 1) as f64;
    let i = (f.floor() as usize).min(STOPS.len() - 2);
    let a = f - i as f64;
    let (p, q) = (STOPS[i], STOPS[i + 1]);
    let mix = |u: f64, v: f64| (u + a * (v - u)).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(p.0, q.0),
        mix(p.1, q.1),
        mix(p.2, q.2)
    )
}

impl Plot {
    /// Axis ranges cover all `extent` points with a small margin.
    pub fn new(title: &str, x_label: &str, y_label: &str, extent: &[(f64, f64)]) -> Self {
        let fin = extent.iter().filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in fin {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x: padded(x0, x1),
            y: padded(y0, y1),
            body: String::new(),
            legend: Vec::new(),
        }
    }

    /// Same scale on both axes; the shorter range is widened.
    pub fn equal_aspect(mut self) -> Self {
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let sx = (self.x.1 - self.x.0) / pw;
        let sy = (self.y.1 - self.y.0) / ph;
        let s = sx.max(sy);
        let cx = 0.5 * (self.x.0 + self.x.1);
        let cy = 0.5 * (self.y.0 + self.y.1);
        self.x = (cx - 0.5 * s * pw, cx + 0.5 * s * pw);
        self.y = (cy - 0.5 * s * ph, cy + 0.5 * s * ph);
        self
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    pub fn line(&mut self, s: &Series) {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        if pts.is_empty() {
            return;
        }
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            s.color,
            pts.join(" ")
        );
        self.legend.push((s.label.clone(), s.color.clone()));
    }

    pub fn dot(&mut self, x: f64, y: f64, r: f64, color: &str) {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}"/>"#,
                self.px(x),
                self.py(y)
            );
        }
    }

    /// Dashed axis-aligned rectangle in data coordinates.
    pub fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: &str) {
        let (a, b) = (self.px(x0), self.py(y1));
        let _ = writeln!(
            self.body,
            r#"<rect x="{a:.2}" y="{b:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{color}" stroke-dasharray="6 4"/>"#,
            self.px(x1) - a,
            self.py(y0) - b
        );
    }

    pub fn label(&mut self, text: &str, color: &str) {
        self.legend.push((text.into(), color.into()));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            s,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            r - l,
            b - t
        );

        let step = nice_step(self.x.1 - self.x.0);
        let mut v = (self.x.0 / step).ceil() * step;
        while v <= self.x.1 {
            let x = self.px(v);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{t}" x2="{x:.2}" y2="{b}" stroke="#ddd"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                b + 16.0,
                tick(v, step)
            );
            v += step;
        }
        let step = nice_step(self.y.1 - self.y.0);
        let mut v = (self.y.0 / step).ceil() * step;
        while v <= self.y.1 {
            let y = self.py(v);
            let _ = writeln!(
                s,
                r##"<line x1="{l}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#ddd"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                l - 6.0,
                y + 4.0,
                tick(v, step)
            );
            v += step;
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            (t + b) / 2.0,
            escape(&self.y_label)
        );
        s.push_str(&self.body);
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let y = t + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="12" height="4" fill="{color}"/>"#,
                r - 150.0,
                y - 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y}">{}</text>"#,
                r - 132.0,
                escape(label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64, step: f64) -> String {
    let digits = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    let v = if v.abs() < step * 1e-9 { 0.0 } else { v };
    format!("{v:.digits$}")
}
