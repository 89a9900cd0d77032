//! Minimal deterministic SVG plotting: linear axes, polylines, rectangles,
//! and a polar chart for envelopes.

use std::fmt::Write;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A chart with data coordinates mapped onto a fixed pixel box.
pub struct Figure {
    width: f64,
    height: f64,
    margin: f64,
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

/// Range covering `values` with a little padding; a unit range when empty
/// or degenerate.
pub fn padded_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Figure {
    pub fn new(width: f64, height: f64, x: (f64, f64), y: (f64, f64)) -> Self {
        Self {
            width,
            height,
            margin: 50.0,
            x,
            y,
            body: String::new(),
        }
    }

    /// Same scale on both axes, widening whichever range is narrower.
    pub fn equal_aspect(width: f64, height: f64, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut f = Self::new(width, height, x, y);
        let pw = width - 2.0 * f.margin;
        let ph = height - 2.0 * f.margin;
        let sx = (x.1 - x.0) / pw;
        let sy = (y.1 - y.0) / ph;
        let s = sx.max(sy);
        let cx = 0.5 * (x.0 + x.1);
        let cy = 0.5 * (y.0 + y.1);
        f.x = (cx - 0.5 * s * pw, cx + 0.5 * s * pw);
        f.y = (cy - 0.5 * s * ph, cy + 0.5 * s * ph);
        f
    }

    fn px(&self, v: f64) -> f64 {
        self.margin + (v - self.x.0) / (self.x.1 - self.x.0) * (self.width - 2.0 * self.margin)
    }

    fn py(&self, v: f64) -> f64 {
        self.height - self.margin - (v - self.y.0) / (self.y.1 - self.y.0) * (self.height - 2.0 * self.margin)
    }

    pub fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let (l, r) = (self.margin, self.width - self.margin);
        let (t, b) = (self.margin, self.height - self.margin);
        let _ = writeln!(
            self.body,
            r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        for k in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * k as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * k as f64 / 4.0;
            let (xp, yp) = (self.px(fx), self.py(fy));
            let _ = writeln!(
                self.body,
                r#"<line x1="{xp:.1}" y1="{b:.1}" x2="{xp:.1}" y2="{:.1}" stroke="black"/><text x="{xp:.1}" y="{:.1}" font-size="10" text-anchor="middle">{fx:.2}</text>"#,
                b + 4.0,
                b + 16.0
            );
            let _ = writeln!(
                self.body,
                r#"<line x1="{:.1}" y1="{yp:.1}" x2="{l:.1}" y2="{yp:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{fy:.2}</text>"#,
                l - 4.0,
                l - 6.0,
                yp + 3.0
            );
        }
        let _ = writeln!(
            self.body,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            0.5 * (l + r),
            self.height - 12.0,
            esc(xlabel)
        );
        let _ = writeln!(
            self.body,
            r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            0.5 * (t + b),
            0.5 * (t + b),
            esc(ylabel)
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        if pts.is_empty() {
            return;
        }
        let mut d = String::new();
        for (x, y) in pts {
            let _ = write!(d, "{:.2},{:.2} ", self.px(*x), self.py(*y));
        }
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>"#,
            d.trim_end()
        );
    }

    /// Axis-aligned rectangle centred at `(cx, cy)` in data units.
    pub fn rect(&mut self, cx: f64, cy: f64, hw: f64, hh: f64, color: &str) {
        let (x0, x1) = (self.px(cx - hw), self.px(cx + hw));
        let (y0, y1) = (self.py(cy + hh), self.py(cy - hh));
        let _ = writeln!(
            self.body,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>"#,
            x1 - x0,
            y1 - y0
        );
    }

    pub fn text(&mut self, x: f64, y: f64, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            self.px(x),
            self.py(y) + 3.0,
            esc(s)
        );
    }

    pub fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = self.margin + 14.0 * i as f64 + 10.0;
            let x = self.width - self.margin - 120.0;
            let _ = writeln!(
                self.body,
                r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
                x + 16.0,
                x + 20.0,
                y + 3.0,
                esc(label)
            );
        }
    }

    pub fn finish(self, title: &str, provenance: &str) -> String {
        svg_document(self.width, self.height, title, provenance, &self.body)
    }
}

fn svg_document(width: f64, height: f64, title: &str, provenance: &str, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <!-- {} -->\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n{body}</svg>\n",
        esc(provenance),
        width / 2.0,
        esc(title)
    )
}

/// Polar chart: each series is a closed curve of `(direction_deg, radius)`.
/// 0° points right (+x), 90° up (+y).
pub fn polar_chart(title: &str, provenance: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let size = 520.0;
    let c = size / 2.0;
    let r_px = c - 60.0;
    let r_max = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.1))
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let mut body = String::new();
    for k in 1..=4 {
        let r = r_px * k as f64 / 4.0;
        let _ = writeln!(
            body,
            r#"<circle cx="{c}" cy="{c}" r="{r:.1}" fill="none" stroke="lightgray"/><text x="{:.1}" y="{:.1}" font-size="9">{:.0}</text>"#,
            c + 3.0,
            c - r - 2.0,
            r_max * k as f64 / 4.0
        );
    }
    for k in 0..8 {
        let a = (k as f64 * 45.0).to_radians();
        let (x, y) = (c + r_px * a.cos(), c - r_px * a.sin());
        let _ = writeln!(
            body,
            r#"<line x1="{c}" y1="{c}" x2="{x:.1}" y2="{y:.1}" stroke="lightgray"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}°</text>"#,
            c + (r_px + 18.0) * a.cos(),
            c - (r_px + 18.0) * a.sin() + 3.0,
            k * 45
        );
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !sorted.is_empty() {
            let mut d = String::new();
            for (deg, r) in &sorted {
                let a = deg.to_radians();
                let rr = r_px * r / r_max;
                let _ = write!(d, "{:.2},{:.2} ", c + rr * a.cos(), c - rr * a.sin());
            }
            let _ = writeln!(
                body,
                r#"<polygon points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.trim_end()
            );
        }
        let y = 40.0 + 14.0 * i as f64;
        let _ = writeln!(
            body,
            r#"<line x1="12" y1="{y:.1}" x2="28" y2="{y:.1}" stroke="{color}" stroke-width="2"/><text x="32" y="{:.1}" font-size="10">{}</text>"#,
            y + 3.0,
            esc(label)
        );
    }
    svg_document(size, size, title, provenance, &body)
}
