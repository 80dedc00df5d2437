//! Minimal SVG emitter: disks as circles colored by stage, periodic orbits
//! as polylines, limit-set samples as dots.

use std::fmt::Write;

pub struct SvgCanvas {
    body: String,
    min: (f64, f64),
    max: (f64, f64),
}

const STAGE_COLORS: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

impl SvgCanvas {
    pub fn new() -> Self {
        Self {
            body: String::new(),
            min: (f64::INFINITY, f64::INFINITY),
            max: (f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, x: f64, y: f64, pad: f64) {
        self.min.0 = self.min.0.min(x - pad);
        self.min.1 = self.min.1.min(y - pad);
        self.max.0 = self.max.0.max(x + pad);
        self.max.1 = self.max.1.max(y + pad);
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, stage: usize, filled: bool) {
        self.grow(x, y, r);
        let color = STAGE_COLORS[(stage.max(1) - 1) % STAGE_COLORS.len()];
        let fill = if filled { color } else { "none" };
        writeln!(
            self.body,
            r#"<circle cx="{x:.6}" cy="{y:.6}" r="{r:.6}" stroke="{color}" stroke-width="0.002" fill="{fill}" fill-opacity="0.5"/>"#
        )
        .unwrap();
    }

    pub fn dot(&mut self, x: f64, y: f64) {
        self.grow(x, y, 0.005);
        writeln!(
            self.body,
            r##"<circle cx="{x:.6}" cy="{y:.6}" r="0.003" fill="#000000"/>"##
        )
        .unwrap();
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stage: usize) {
        if points.is_empty() {
            return;
        }
        for &(x, y) in points {
            self.grow(x, y, 0.01);
        }
        let color = STAGE_COLORS[(stage.max(1) - 1) % STAGE_COLORS.len()];
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.6},{y:.6}")).collect();
        writeln!(
            self.body,
            r#"<polyline points="{}" stroke="{color}" stroke-width="0.0015" stroke-dasharray="0.01,0.005" fill="none"/>"#,
            pts.join(" ")
        )
        .unwrap();
    }

    pub fn render(mut self) -> String {
        if !self.min.0.is_finite() {
            self.min = (-1.0, -1.0);
            self.max = (1.0, 1.0);
        }
        let (w, h) = (self.max.0 - self.min.0, self.max.1 - self.min.1);
        // coordinate axes for orientation
        let axes = format!(
            r##"<line x1="{x0}" y1="0" x2="{x1}" y2="0" stroke="#999" stroke-width="0.001"/>
<line x1="0" y1="{y0}" x2="0" y2="{y1}" stroke="#999" stroke-width="0.001"/>"##,
            x0 = self.min.0,
            x1 = self.max.0,
            y0 = self.min.1,
            y1 = self.max.1
        );
        format!(
            concat!(
                r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="800" height="800">"#,
                "\n<g transform=\"scale(1,-1)\">\n{}{}</g>\n</svg>\n"
            ),
            self.min.0, -self.max.1, w, h, axes, self.body
        )
    }
}
