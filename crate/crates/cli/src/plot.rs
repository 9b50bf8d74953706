//! Minimal SVG line plots from CSV text.

use std::collections::BTreeMap;
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    /// Columns whose values split rows into separate lines.
    pub group: Vec<String>,
}

impl PlotSpec {
    pub fn new(x: &str, y: &str) -> Self {
        Self {
            x: x.to_string(),
            y: y.to_string(),
            group: Vec::new(),
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, String> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| format!("no column `{name}`"))
}

/// Renders `spec.y` against `spec.x`, one polyline per group. Groups are
/// ordered by key, so the output depends only on the CSV contents.
pub fn plot_csv(text: &str, spec: &PlotSpec) -> Result<String, String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let xi = column(&headers, &spec.x)?;
    let yi = column(&headers, &spec.y)?;
    let gi = spec
        .group
        .iter()
        .map(|g| column(&headers, g))
        .collect::<Result<Vec<_>, _>>()?;
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize, name: &str| -> Result<f64, String> {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| format!("row {}: column `{name}` is not a number", n + 2))
        };
        let (x, y) = (num(xi, &spec.x)?, num(yi, &spec.y)?);
        let key = gi
            .iter()
            .map(|&i| rec.get(i).unwrap_or(""))
            .collect::<Vec<_>>()
            .join(" ");
        series.entry(key).or_default().push((x, y));
    }

    let pts = series
        .values()
        .flatten()
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    writeln!(
        s,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for (v, anchor, x, y) in [
        (x0, "start", l, b + 16.0),
        (x1, "end", r, b + 16.0),
        (y0, "end", l - 4.0, b),
        (y1, "end", l - 4.0, t + 4.0),
    ] {
        writeln!(
            s,
            r#"<text x="{x}" y="{y}" font-size="11" text-anchor="{anchor}">{}</text>"#,
            fmt_tick(v)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(&spec.x)
    )
    .unwrap();
    writeln!(s, r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(&spec.y)).unwrap();
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let d: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !d.is_empty() {
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.join(" ")
            )
            .unwrap();
        }
        if !name.is_empty() {
            let ly = t + 14.0 * k as f64;
            writeln!(
                s,
                r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#,
                r + 4.0 - 120.0,
                escape(name)
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{:.2}", v)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_become_polylines() {
        let csv = "mode,seed,update,r\na,0,0,1\na,0,1,2\nb,0,0,0\nb,0,1,4\n";
        let spec = PlotSpec {
            group: vec!["mode".into(), "seed".into()],
            ..PlotSpec::new("update", "r")
        };
        let svg = plot_csv(csv, &spec).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">a 0</text>") && svg.contains(">b 0</text>"));
        // y range [0, 4]: b's last point sits on the top margin
        assert!(svg.contains(&format!("{:.2},{:.2}", W - MARGIN, MARGIN)));
        assert_eq!(plot_csv(csv, &spec).unwrap(), svg);
    }

    #[test]
    fn errors_name_the_column() {
        let csv = "update,r\n0,x\n";
        assert!(plot_csv(csv, &PlotSpec::new("update", "missing"))
            .unwrap_err()
            .contains("missing"));
        assert!(plot_csv(csv, &PlotSpec::new("update", "r"))
            .unwrap_err()
            .contains("row 2"));
        let empty = plot_csv("update,r\n", &PlotSpec::new("update", "r")).unwrap();
        assert!(empty.ends_with("</svg>\n"));
    }
}
