//! CSV tables and SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::RunError;

/// Shortest round-trip scientific form, so reruns are byte-identical.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem; written as `<name>.csv`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path) -> Result<String, RunError> {
        let file = format!("{}.csv", self.name);
        let mut w = csv::Writer::from_path(dir.join(&file)).map_err(|e| RunError::Io(e.to_string()))?;
        w.write_record(&self.header).map_err(|e| RunError::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| RunError::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(file)
    }
}

/// One series against one axis pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
    pub log_y: bool,
}

impl Plot {
    pub fn new(name: &str, x_label: &str, y_label: &str, points: Vec<(f64, f64)>) -> Self {
        Plot { name: name.into(), x_label: x_label.into(), y_label: y_label.into(), points, log_y: false }
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    pub fn render(&self) -> String {
        let (w, h, m) = (640.0, 400.0, 60.0);
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && ty(*y).is_finite())
            .map(|&(x, y)| (x, ty(y)))
            .collect();
        let span = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo <= 1e-300 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
        let (y0, y1) = span(&mut pts.iter().map(|p| p.1));
        let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
            h - m,
            w - m
        );
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, path.join(" "));
        for &(x, y) in pts.iter().take(64) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="steelblue"/>"#, sx(x), sy(y));
        }
        let ylab = if self.log_y { format!("log10 {}", self.y_label) } else { self.y_label.clone() };
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 15.0, self.x_label);
        let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">{ylab}</text>"#, h / 2.0, h / 2.0);
        let _ = writeln!(s, r#"<text x="{m}" y="{}">{}</text>"#, h - m + 15.0, num(x0));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, w - m, h - m + 15.0, num(x1));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, m - 4.0, h - m, num(y0));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, m - 4.0, m + 4.0, num(y1));
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, dir: &Path) -> Result<String, RunError> {
        let file = format!("{}.svg", self.name);
        std::fs::write(dir.join(&file), self.render())?;
        Ok(file)
    }
}
