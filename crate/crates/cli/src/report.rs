//! CSV tables with `#` header comments and minimal self-contained SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

pub struct Csv {
    text: String,
}

impl Csv {
    /// `units` is one `(column, unit)` note per column group.
    pub fn new(command: &str, config_hash: &str, units: &[(&str, &str)], columns: &[String]) -> Self {
        let mut text = format!("# barrier-iqc {command}\n# config-sha256: {config_hash}\n");
        for (col, unit) in units {
            let _ = writeln!(text, "# unit {col}: {unit}");
        }
        text.push_str(&columns.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let fields: Vec<String> = fields.into_iter().collect();
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_file(path, &self.text)
    }
}

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Shaded band between `lower` and `upper` with a centre line.
pub struct Band {
    pub label: String,
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub centre: Vec<f64>,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit<'a>(xs: impl Iterator<Item = &'a f64> + Clone, ys: impl Iterator<Item = &'a f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = &'a f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self { x: range(&mut xs.clone()), y: range(&mut ys.clone()) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn open(title: &str, frame: &Frame, xlabel: &str, ylabel: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        (LEFT + W - RIGHT) / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(s, "<rect x=\"{x0}\" y=\"{y0}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", x1 - x0, y1 - y0);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = frame.x.0 + t * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + t * (frame.y.1 - frame.y.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(s, "<line x1=\"{px:.2}\" y1=\"{y1}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"black\"/>", y1 + 4.0);
        let _ = writeln!(s, "<text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>", y1 + 16.0, tick(xv));
        let _ = writeln!(s, "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{x0}\" y2=\"{py:.2}\" stroke=\"black\"/>", x0 - 4.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", x0 - 6.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>",
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
    s
}

fn legend(s: &mut String, k: usize, label: &str) {
    let y = TOP + 14.0 + 16.0 * k as f64;
    let x = W - RIGHT + 10.0;
    let colour = PALETTE[k % PALETTE.len()];
    let _ = writeln!(s, "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{colour}\" stroke-width=\"2\"/>", x + 18.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", x + 22.0, y + 4.0, escape(label));
}

fn polyline(frame: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect::<Vec<_>>().join(" ")
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let frame = Frame::fit(xs.iter(), ys.iter());
    let mut s = open(title, &frame, xlabel, ylabel);
    if frame.y.0 < 0.0 && frame.y.1 > 0.0 {
        let y = frame.py(0.0);
        let _ = writeln!(s, "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>", W - RIGHT);
    }
    for (k, ser) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts = polyline(&frame, ser.points.iter().copied());
        let _ = writeln!(s, "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>");
        for &(x, y) in ser.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{colour}\"/>", frame.px(x), frame.py(y));
        }
        legend(&mut s, k, &ser.label);
    }
    s.push_str("</svg>\n");
    s
}

pub fn band_plot(title: &str, xlabel: &str, ylabel: &str, bands: &[Band]) -> String {
    let xs: Vec<f64> = bands.iter().flat_map(|b| b.x.iter().copied()).collect();
    let ys: Vec<f64> = bands.iter().flat_map(|b| b.lower.iter().chain(&b.upper).copied()).collect();
    let frame = Frame::fit(xs.iter(), ys.iter());
    let mut s = open(title, &frame, xlabel, ylabel);
    for (k, band) in bands.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let upper = polyline(&frame, band.x.iter().copied().zip(band.upper.iter().copied()));
        let lower = polyline(&frame, band.x.iter().copied().zip(band.lower.iter().copied()).rev());
        let _ = writeln!(s, "<polygon points=\"{upper} {lower}\" fill=\"{colour}\" fill-opacity=\"0.25\" stroke=\"none\"/>");
        let centre = polyline(&frame, band.x.iter().copied().zip(band.centre.iter().copied()));
        let _ = writeln!(s, "<polyline points=\"{centre}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>");
        legend(&mut s, k, &band.label);
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_comment_header() {
        let mut csv = Csv::new("test", "abc", &[("t", "samples")], &["t".into(), "y".into()]);
        csv.row([num(0.0), num(1.5)]);
        assert_eq!(csv.text, "# barrier-iqc test\n# config-sha256: abc\n# unit t: samples\nt,y\n0,1.5\n");
    }

    #[test]
    fn plots_are_self_contained() {
        let svg = line_plot("a<b", "x", "y", &[Series { label: "s".into(), points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, -1.0)] }]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(!svg.contains("href") && !svg.contains("NaN") && svg.contains("a&lt;b"));
        let band = Band { label: "b".into(), x: vec![0.0, 1.0], lower: vec![0.0, 0.0], upper: vec![0.0, 0.0], centre: vec![0.0, 0.0] };
        assert!(band_plot("t", "k", "y", &[band]).contains("<polygon"));
    }
}
