use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const CURVES_SVG: &str = "curves.svg";
pub const CSV_HEADER: &str = "checkpoint,metric,alpha,reference,value";

/// One line of `metrics.csv`. Metrics without a threshold leave `alpha`
/// empty.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub checkpoint: String,
    pub metric: String,
    pub alpha: Option<f64>,
    pub reference: String,
    pub value: f64,
}

/// A labelled polyline of the sparsification plot.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// Formats like C's `%.6g`.
pub fn fmt_sig6(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let alpha = r.alpha.map(fmt_sig6).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{alpha},{},{}",
            csv_field(&r.checkpoint),
            csv_field(&r.metric),
            csv_field(&r.reference),
            fmt_sig6(r.value)
        );
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot of the curves on `[0, 1] x [0, 1]`.
pub fn curves_svg(title: &str, curves: &[Curve]) -> String {
    let (w, h) = (560.0, 360.0);
    let (left, right, top, bottom) = (50.0, 170.0, 30.0, 40.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + x.clamp(0.0, 1.0) * pw;
    let sy = |y: f64| top + (1.0 - y.clamp(0.0, 1.0)) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18">{}</text>"#, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let t = k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, sx(t), h - bottom + 14.0, fmt_sig6(t));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 4.0, sy(t) + 4.0, fmt_sig6(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">fraction removed</text>"#, left + pw / 2.0, h - 8.0);
    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let dash = if i / PALETTE.len() % 2 == 1 { r#" stroke-dasharray="4 3""# } else { "" };
        let points: Vec<String> = c
            .xs
            .iter()
            .zip(&c.ys)
            .map(|(&x, &y)| format!("{},{}", fmt_sig6(sx(x)), fmt_sig6(sy(y))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}"{dash} stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 * i as f64 + 6.0;
        let lx = w - right + 10.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}"{dash} stroke-width="1.5"/>"#, lx + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 20.0, ly + 4.0, xml_escape(&c.label));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `metrics.csv` and `curves.svg` into `out_dir`, creating it.
pub fn report(rows: &[MetricRow], curves: &[Curve], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join(METRICS_CSV);
    fs::write(&csv, metrics_csv(rows)).map_err(|e| Error::io(&csv, e))?;
    let svg = out_dir.join(CURVES_SVG);
    fs::write(&svg, curves_svg("sparsification (PCK of kept points)", curves)).map_err(|e| Error::io(&svg, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        let cases = [
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (0.000012345678, "1.23457e-05"),
            (999999.5, "1e+06"),
            (-2.5, "-2.5"),
            (0.0, "0"),
        ];
        for (v, s) in cases {
            assert_eq!(fmt_sig6(v), s, "{v}");
        }
    }

    #[test]
    fn csv_layout() {
        let rows = [MetricRow {
            checkpoint: "final".into(),
            metric: "dense_pck_argmax".into(),
            alpha: Some(0.1),
            reference: "image".into(),
            value: 0.5,
        }];
        assert_eq!(metrics_csv(&rows), "checkpoint,metric,alpha,reference,value\nfinal,dense_pck_argmax,0.1,image,0.5\n");
    }
}
