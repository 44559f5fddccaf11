//! CSV tables, SVG charts and atomic artifact writing.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Formats with 12 significant digits in scientific notation.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.11e}")
}

/// One output file held in memory until all computation succeeded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            contents: contents.into(),
        }
    }
}

/// Headered CSV with a fixed column order.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn into_artifact(self, name: &str) -> Artifact {
        Artifact::new(name, self.to_csv())
    }
}

/// Writes every artifact into `dir` through a temporary file and rename.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(a.contents.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(dir.join(&a.name)).map_err(|e| e.error)?;
    }
    Ok(())
}

/// Named series of `(x, y)` points.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        let pad = if y0 == 0.0 { 1.0 } else { y0.abs() * 0.1 };
        y0 -= pad;
        y1 += pad;
    }
    (x0, x1, y0, y1)
}

fn frame(title: &str, x_label: &str, ranges: (f64, f64, f64, f64)) -> String {
    let (x0, x1, y0, y1) = ranges;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let px = PAD + f * (W - 2.0 * PAD);
        let py = H - PAD - f * (H - 2.0 * PAD);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - PAD + 16.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 4.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    s
}

fn legend(s: &mut String, labels: &[&str]) {
    for (k, l) in labels.iter().enumerate() {
        let y = PAD + 14.0 + 14.0 * k as f64;
        let c = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{c}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - PAD - 110.0,
            W - PAD - 90.0,
            W - PAD - 86.0,
            y + 4.0,
            escape(l)
        );
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained SVG line chart.
pub fn line_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let r = bounds(series);
    let (x0, x1, y0, y1) = r;
    let mut s = frame(title, x_label, r);
    for (k, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| {
                let px = PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
                let py = H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[k % PALETTE.len()],
            pts.join(" ")
        );
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    legend(&mut s, &labels);
    s.push_str("</svg>\n");
    s
}

/// Common bin edges and per-series counts.
pub fn histogram(samples: &[&[f64]], bins: usize) -> (Vec<f64>, Vec<Vec<usize>>) {
    let bins = bins.max(1);
    let all = samples.iter().flat_map(|s| s.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
    let counts = samples
        .iter()
        .map(|s| {
            let mut c = vec![0usize; bins];
            for &x in s.iter() {
                let k = (((x - lo) / width) as usize).min(bins - 1);
                c[k] += 1;
            }
            c
        })
        .collect();
    (edges, counts)
}

/// Overlaid step histograms as an SVG chart.
pub fn histogram_chart(title: &str, x_label: &str, edges: &[f64], labels: &[&str], counts: &[Vec<usize>]) -> String {
    let series: Vec<Series> = labels
        .iter()
        .zip(counts)
        .map(|(l, c)| {
            let mut pts = Vec::with_capacity(2 * c.len() + 2);
            pts.push((edges[0], 0.0));
            for (k, &n) in c.iter().enumerate() {
                pts.push((edges[k], n as f64));
                pts.push((edges[k + 1], n as f64));
            }
            pts.push((*edges.last().unwrap(), 0.0));
            Series {
                label: l.to_string(),
                points: pts,
            }
        })
        .collect();
    line_chart(title, x_label, &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(num(0.0), "0");
        assert_eq!(num(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(num(-12345.678901234), "-1.23456789012e4");
        let back: f64 = num(0.955).parse().unwrap();
        assert_eq!(back, 0.955);
    }

    #[test]
    fn csv_quotes_and_orders() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["x,y".into(), num(2.0)]);
        assert_eq!(t.to_csv(), "a,b\n\"x,y\",2.00000000000e0\n");
    }

    #[test]
    fn histogram_counts_everything() {
        let a = [0.0, 0.1, 0.2, 1.0];
        let b = [0.5];
        let (edges, counts) = histogram(&[&a, &b], 4);
        assert_eq!(edges.len(), 5);
        assert_eq!(counts[0].iter().sum::<usize>(), 4);
        assert_eq!(counts[0][3], 1);
        assert_eq!(counts[1], vec![0, 0, 1, 0]);
    }

    #[test]
    fn atomic_write_replaces_files() {
        let dir = tempfile::tempdir().unwrap();
        write_artifacts(dir.path(), &[Artifact::new("a.csv", "1\n")]).unwrap();
        write_artifacts(dir.path(), &[Artifact::new("a.csv", "2\n")]).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("a.csv")).unwrap(), "2\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn chart_is_deterministic_svg() {
        let s = vec![Series {
            label: "sd".into(),
            points: vec![(0.0, 0.0), (1.0, 2.0)],
        }];
        let a = line_chart("t", "x", &s);
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a, line_chart("t", "x", &s));
    }
}
