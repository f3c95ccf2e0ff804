//! Tabular output (CSV, JSON lines) and static SVG plots.

use std::io::{self, Write};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let mut buf = ryu::Buffer::new();
    buf.format(v).to_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv_field(&self) -> String {
        match self {
            Cell::Num(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json_value(&self) -> serde_json::Value {
        use serde_json::Value;
        match self {
            Cell::Num(v) => serde_json::Number::from_f64(*v)
                .map(Value::Number)
                .unwrap_or_else(|| Value::String(fmt_f64(*v))),
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::JsonLines => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write<W: Write>(&self, out: W, format: Format) -> io::Result<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::JsonLines => self.write_json_lines(out),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv_field))?;
        }
        w.flush()
    }

    pub fn write_json_lines<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in &self.rows {
            let obj: serde_json::Map<String, serde_json::Value> = self
                .columns
                .iter()
                .cloned()
                .zip(row.iter().map(Cell::json_value))
                .collect();
            serde_json::to_writer(&mut out, &obj)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One named polyline of a plot.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Gray horizontal reference line (the Carnot efficiency).
    pub h_line: Option<f64>,
    /// Gray vertical reference line (the critical coupling).
    pub v_line: Option<f64>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

impl Plot {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if let Some(h) = self.h_line {
            y0 = y0.min(h);
            y1 = y1.max(h);
        }
        if let Some(v) = self.v_line {
            x0 = x0.min(v);
            x1 = x1.max(v);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        (x0, x1, y0 - pad, y1 + pad)
    }

    pub fn write_svg<W: Write>(&self, mut out: W) -> io::Result<()> {
        let (w, h) = (640.0, 420.0);
        let (ml, mr, mt, mb) = (70.0, 150.0, 30.0, 50.0);
        let (x0, x1, y0, y1) = self.bounds();
        let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
        let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
        writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#)?;
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
        writeln!(
            out,
            r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - ml - mr,
            h - mt - mb
        )?;
        if let Some(v) = self.h_line {
            writeln!(
                out,
                r#"<line x1="{}" y1="{y:.3}" x2="{}" y2="{y:.3}" stroke="gray" stroke-width="1.5"/>"#,
                ml,
                w - mr,
                y = sy(v)
            )?;
        }
        if let Some(v) = self.v_line {
            writeln!(
                out,
                r#"<line x1="{x:.3}" y1="{}" x2="{x:.3}" y2="{}" stroke="gray" stroke-width="1.5"/>"#,
                mt,
                h - mb,
                x = sx(v)
            )?;
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.3},{:.3}", sx(x), sy(y)))
                .collect();
            writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            )?;
            writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
                w - mr + 8.0,
                mt + 16.0 * (i + 1) as f64,
                escape(&s.label)
            )?;
        }
        for (val, anchor_x, anchor_y, is_x) in [(x0, sx(x0), h - mb + 16.0, true), (x1, sx(x1), h - mb + 16.0, true), (y0, ml - 6.0, sy(y0), false), (y1, ml - 6.0, sy(y1), false)] {
            let anchor = if is_x { "middle" } else { "end" };
            writeln!(
                out,
                r#"<text x="{anchor_x:.3}" y="{anchor_y:.3}" font-size="11" text-anchor="{anchor}">{}</text>"#,
                format_tick(val)
            )?;
        }
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
            ml + 0.5 * (w - ml - mr),
            h - 12.0,
            escape(&self.x_label)
        )?;
        writeln!(
            out,
            r#"<text x="16" y="{y}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
            escape(&self.y_label),
            y = mt + 0.5 * (h - mt - mb)
        )?;
        writeln!(
            out,
            r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
            ml + 0.5 * (w - ml - mr),
            escape(&self.title)
        )?;
        writeln!(out, "</svg>")
    }
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, -1.0, 0.1, 1e-5, 1.0 / 11.0, 6.02e23, -3.5e-300, f64::MAX] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(400.0), "400.0");
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(["a", "b"]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n");
        let mut buf = Vec::new();
        t.write_json_lines(&mut buf).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn json_lines_keys_follow_columns() {
        let mut t = Table::new(["x", "tag", "missing"]);
        t.push(vec![Cell::Num(0.5), "ok".into(), Cell::Empty]);
        let mut buf = Vec::new();
        t.write_json_lines(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"x\":0.5,\"tag\":\"ok\",\"missing\":null}\n");
    }

    #[test]
    fn svg_contains_reference_lines() {
        let plot = Plot {
            title: "t".into(),
            x_label: "g2".into(),
            y_label: "eta".into(),
            series: vec![Series { label: "a<b".into(), points: vec![(0.9, 0.05), (1.1, 0.09)] }],
            h_line: Some(1.0 / 11.0),
            v_line: Some(1.0),
        };
        let mut buf = Vec::new();
        plot.write_svg(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.matches("stroke=\"gray\"").count(), 2);
        assert!(s.contains("a&lt;b"));
        assert!(s.trim_end().ends_with("</svg>"));
    }
}
