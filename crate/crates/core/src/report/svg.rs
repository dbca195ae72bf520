use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Histogram2D, Marginal1d, CONTOUR_METHOD};
use crate::error::{Error, Result};
use crate::eval::{ece, CoverageCurve, ReliabilityBins};
use crate::predict::PredictiveSummary;

pub const MAX_SVG_BYTES: usize = 2 * 1024 * 1024;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 62.0;
const RIGHT: f64 = 18.0;
const TOP: f64 = 34.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 4] = ["#000000", "#c0392b", "#2471a3", "#1e8449"];

/// An SVG document and the CSV holding every plotted series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Figure {
    pub svg: String,
    pub csv: String,
}

impl Figure {
    /// Writes `path` and a `.csv` sidecar next to it; returns the sidecar path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        if self.svg.len() > MAX_SVG_BYTES {
            return Err(Error::invalid(format!(
                "figure {} is {} bytes, above the {MAX_SVG_BYTES} byte limit",
                path.display(),
                self.svg.len()
            )));
        }
        std::fs::write(path, &self.svg).map_err(|e| Error::io(path, e))?;
        let sidecar = path.with_extension("csv");
        std::fs::write(&sidecar, &self.csv).map_err(|e| Error::io(&sidecar, e))?;
        Ok(sidecar)
    }
}

/// Pixel coordinate with two decimals and no negative zero.
fn px(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let step = nice_step(hi - lo, 5);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), step)
}

struct Plot {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
    /// Replaces the numeric x ticks when set.
    x_ticks: Option<Vec<(f64, String)>>,
}

impl Plot {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Plot {
            x: widen(x),
            y: widen(y),
            body: String::new(),
            x_ticks: None,
        }
    }

    fn sx(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn sy(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, attrs: &str) {
        let (a, b) = (self.sx(x0.min(x1)), self.sx(x0.max(x1)));
        let (c, d) = (self.sy(y0.max(y1)), self.sy(y0.min(y1)));
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" {attrs}/>"#,
            px(a),
            px(c),
            px(b - a),
            px(d - c)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], attrs: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{},{}", px(self.sx(x)), px(self.sy(y))))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" {attrs}/>"#,
            coords.join(" ")
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, attrs: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{r}" {attrs}/>"#,
            px(self.sx(x)),
            px(self.sy(y))
        );
    }

    fn finish(self, title: &str, xlabel: &str, ylabel: &str, desc: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, "<title>{}</title>", escape(title));
        if !desc.is_empty() {
            let _ = writeln!(s, "<desc>{}</desc>", escape(desc));
        }
        let _ = writeln!(s, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
        let (x0, x1) = (self.sx(self.x.0), self.sx(self.x.1));
        let (y0, y1) = (self.sy(self.y.0), self.sy(self.y.1));
        let _ = writeln!(s, r##"<g id="axes" stroke="#000000" stroke-width="1" fill="none">"##);
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}"/>"#,
            px(x0),
            px(y1),
            px(x1 - x0),
            px(y0 - y1)
        );
        let (xt, xstep) = ticks(self.x.0, self.x.1);
        let xt: Vec<(f64, String)> = match &self.x_ticks {
            Some(custom) => custom.clone(),
            None => xt.iter().map(|&t| (t, tick_label(t, xstep))).collect(),
        };
        for &(t, _) in &xt {
            let x = px(self.sx(t));
            let _ = writeln!(s, r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}"/>"#, px(y0), px(y0 + 4.0));
        }
        let (yt, ystep) = ticks(self.y.0, self.y.1);
        for &t in &yt {
            let y = px(self.sy(t));
            let _ = writeln!(s, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}"/>"#, px(x0 - 4.0), px(x0));
        }
        s.push_str("</g>\n<g id=\"labels\" fill=\"#000000\">\n");
        for (t, label) in &xt {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                px(self.sx(*t)),
                px(y0 + 16.0),
                escape(label)
            );
        }
        for &t in &yt {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                px(x0 - 7.0),
                px(self.sy(t) + 4.0),
                tick_label(t, ystep)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            px(WIDTH / 2.0),
            escape(title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            px((x0 + x1) / 2.0),
            px(HEIGHT - 12.0),
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
            px((y0 + y1) / 2.0),
            escape(ylabel)
        );
        s.push_str("</g>\n");
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

/// Legend in the top-left corner, or the bottom-left when `bottom` is set.
fn legend(body: &mut String, names: &[&str], bottom: bool) {
    for (i, name) in names.iter().enumerate() {
        let y = if bottom {
            HEIGHT - BOTTOM - 12.0 - 15.0 * (names.len() - 1 - i) as f64
        } else {
            TOP + 14.0 + 15.0 * i as f64
        };
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            px(LEFT + 10.0),
            px(y),
            px(LEFT + 28.0),
            px(y),
            px(LEFT + 32.0),
            px(y + 4.0),
            escape(name)
        );
    }
}

/// Prior density (gray) over the posterior histogram (black).
pub fn render_marginal_1d(m: &Marginal1d) -> Result<Figure> {
    let lo = m.edges[0].min(m.prior_x[0]);
    let hi = m.edges[m.edges.len() - 1].max(m.prior_x[m.prior_x.len() - 1]);
    let top = m.density.iter().chain(&m.prior_y).copied().fold(0.0, f64::max) * 1.05;
    let mut plot = Plot::new((lo, hi), (0.0, top));
    plot.body.push_str("<g id=\"posterior\" fill=\"#000000\" fill-opacity=\"0.75\">\n");
    for (e, &d) in m.edges.windows(2).zip(&m.density) {
        if d > 0.0 {
            plot.rect(e[0], 0.0, e[1], d, "");
        }
    }
    plot.body.push_str("</g>\n<g id=\"prior\">\n");
    let pts: Vec<(f64, f64)> = m.prior_x.iter().copied().zip(m.prior_y.iter().copied()).collect();
    plot.polyline(&pts, r##"stroke="#999999" stroke-width="2""##);
    plot.body.push_str("</g>\n");

    let mut csv = String::from("series,x_lo,x_hi,density\n");
    for (e, d) in m.edges.windows(2).zip(&m.density) {
        let _ = writeln!(csv, "posterior,{},{},{}", e[0], e[1], d);
    }
    for (x, y) in m.prior_x.iter().zip(&m.prior_y) {
        let _ = writeln!(csv, "prior,{x},{x},{y}");
    }
    let title = format!("{} (prior std {})", m.name, m.prior_std);
    Ok(Figure {
        svg: plot.finish(&title, &m.name, "density", ""),
        csv,
    })
}

/// Bins of `h` that belong to each credible region, as a boolean mask per level.
fn region_masks(h: &Histogram2D) -> Vec<Vec<bool>> {
    h.levels
        .iter()
        .map(|l| h.counts.iter().map(|&c| c > 0 && c >= l.count_threshold).collect())
        .collect()
}

/// Shaded 2-D histogram with staircase contours along bin edges.
pub fn render_marginal_2d(h: &Histogram2D) -> Result<Figure> {
    let (nx, ny) = (h.nx(), h.ny());
    let mut plot = Plot::new((h.x_edges[0], h.x_edges[nx]), (h.y_edges[0], h.y_edges[ny]));
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    plot.body.push_str("<g id=\"density\">\n");
    for iy in 0..ny {
        for ix in 0..nx {
            let c = h.count(ix, iy);
            if c == 0 {
                continue;
            }
            let shade = 255 - (200.0 * c as f64 / max).round() as u8;
            let attrs = format!(r##"fill="#{shade:02x}{shade:02x}{shade:02x}""##);
            plot.rect(h.x_edges[ix], h.y_edges[iy], h.x_edges[ix + 1], h.y_edges[iy + 1], &attrs);
        }
    }
    plot.body.push_str("</g>\n");

    let masks = region_masks(h);
    let inside = |mask: &[bool], ix: isize, iy: isize| {
        ix >= 0 && iy >= 0 && (ix as usize) < nx && (iy as usize) < ny && mask[iy as usize * nx + ix as usize]
    };
    for (level, mask) in h.levels.iter().zip(&masks) {
        let mut d = String::new();
        let mut seg = |x0: f64, y0: f64, x1: f64, y1: f64| {
            let _ = write!(
                d,
                "M{} {}L{} {}",
                px(plot.sx(x0)),
                px(plot.sy(y0)),
                px(plot.sx(x1)),
                px(plot.sy(y1))
            );
        };
        for iy in 0..ny as isize {
            for ix in 0..nx as isize {
                if !inside(mask, ix, iy) {
                    continue;
                }
                let (xl, xr) = (h.x_edges[ix as usize], h.x_edges[ix as usize + 1]);
                let (yb, yt) = (h.y_edges[iy as usize], h.y_edges[iy as usize + 1]);
                if !inside(mask, ix - 1, iy) {
                    seg(xl, yb, xl, yt);
                }
                if !inside(mask, ix + 1, iy) {
                    seg(xr, yb, xr, yt);
                }
                if !inside(mask, ix, iy - 1) {
                    seg(xl, yb, xr, yb);
                }
                if !inside(mask, ix, iy + 1) {
                    seg(xl, yt, xr, yt);
                }
            }
        }
        let _ = writeln!(
            plot.body,
            r##"<path id="credible-{}" d="{d}" fill="none" stroke="#000000" stroke-width="1.2"/>"##,
            (level.mass * 1000.0).round() as u32
        );
    }

    let mut csv = String::from("ix,iy,x_lo,x_hi,y_lo,y_hi,count,region\n");
    for iy in 0..ny {
        for ix in 0..nx {
            let c = h.count(ix, iy);
            if c == 0 {
                continue;
            }
            let region = h
                .levels
                .iter()
                .zip(&masks)
                .find(|(_, m)| m[iy * nx + ix])
                .map(|(l, _)| l.mass.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                csv,
                "{ix},{iy},{},{},{},{},{c},{region}",
                h.x_edges[ix],
                h.x_edges[ix + 1],
                h.y_edges[iy],
                h.y_edges[iy + 1]
            );
        }
    }
    let masses: Vec<String> = h.levels.iter().map(|l| format!("{}", l.mass)).collect();
    let title = format!("{} vs {}", h.x_name, h.y_name);
    let desc = format!("credible regions {}: {CONTOUR_METHOD}", masses.join(", "));
    Ok(Figure {
        svg: plot.finish(&title, &h.x_name, &h.y_name, &desc),
        csv,
    })
}

/// Mean class probabilities with ±1 std bars for one example. The predicted
/// class carries the element id `pred` and the true class the id `truth`.
pub fn render_entry(
    row_id: usize,
    summary: &PredictiveSummary,
    label: usize,
    class_names: Option<&[String]>,
) -> Result<Figure> {
    let c = summary.mean_probs.len();
    if c == 0 || summary.std_probs.len() != c {
        return Err(Error::invalid("predictive summary has no class probabilities"));
    }
    if label >= c {
        return Err(Error::invalid(format!("label {label} outside [0, {c})")));
    }
    let name = |k: usize| match class_names {
        Some(names) if k < names.len() => names[k].clone(),
        _ => format!("class {k}"),
    };
    let mut plot = Plot::new((-0.5, c as f64 - 0.5), (0.0, 1.0));
    plot.x_ticks = Some((0..c).map(|k| (k as f64, name(k))).collect());
    plot.body.push_str("<g id=\"bars\">\n");
    for k in 0..c {
        let m = summary.mean_probs[k];
        let fill = if k == summary.predicted { "#333333" } else { "#aaaaaa" };
        plot.rect(k as f64 - 0.3, 0.0, k as f64 + 0.3, m, &format!(r#"fill="{fill}""#));
    }
    plot.body.push_str("</g>\n<g id=\"error-bars\" stroke=\"#000000\" stroke-width=\"1.5\">\n");
    for k in 0..c {
        let m = summary.mean_probs[k];
        let s = summary.std_probs[k];
        let (lo, hi) = ((m - s).max(0.0), (m + s).min(1.0));
        plot.polyline(&[(k as f64, lo), (k as f64, hi)], "");
        plot.polyline(&[(k as f64 - 0.08, lo), (k as f64 + 0.08, lo)], "");
        plot.polyline(&[(k as f64 - 0.08, hi), (k as f64 + 0.08, hi)], "");
    }
    plot.body.push_str("</g>\n");
    // markers: filled diamond over the predicted class, open triangle under the truth
    let p = summary.predicted as f64;
    let (x, y) = (plot.sx(p), plot.sy(summary.mean_probs[summary.predicted].min(1.0)) - 10.0);
    let _ = writeln!(
        plot.body,
        r##"<path id="pred" d="M{} {}L{} {}L{} {}L{} {}Z" fill="#c0392b"/>"##,
        px(x),
        px(y - 5.0),
        px(x + 5.0),
        px(y),
        px(x),
        px(y + 5.0),
        px(x - 5.0),
        px(y)
    );
    let (x, y) = (plot.sx(label as f64), plot.sy(0.0) + 26.0);
    let _ = writeln!(
        plot.body,
        r##"<path id="truth" d="M{} {}L{} {}L{} {}Z" fill="none" stroke="#2471a3" stroke-width="1.5"/>"##,
        px(x),
        px(y - 6.0),
        px(x + 6.0),
        px(y + 5.0),
        px(x - 6.0),
        px(y + 5.0)
    );
    let mut csv = String::from("class,name,mean,std,predicted,truth\n");
    for k in 0..c {
        let _ = writeln!(
            csv,
            "{k},{},{},{},{},{}",
            name(k).replace(',', ";"),
            summary.mean_probs[k],
            summary.std_probs[k],
            u8::from(k == summary.predicted),
            u8::from(k == label)
        );
    }
    let names: Vec<String> = (0..c).map(name).collect();
    let title = format!("row {row_id}: predicted {}, true {}", name(summary.predicted), name(label));
    let desc = format!("classes: {}; bars are mean probability with ±1 std across draws", names.join(" | "));
    Ok(Figure {
        svg: plot.finish(&title, "", "probability", &desc),
        csv,
    })
}

/// Accuracy against mean confidence per occupied bin, one line per series.
pub fn render_reliability(series: &[(&str, &ReliabilityBins)]) -> Result<Figure> {
    if series.is_empty() {
        return Err(Error::invalid("reliability figure needs at least one series"));
    }
    let mut plot = Plot::new((0.0, 1.0), (0.0, 1.0));
    plot.polyline(&[(0.0, 0.0), (1.0, 1.0)], r##"stroke="#999999" stroke-dasharray="4 3""##);
    let mut csv = String::from("series,bin_lo,bin_hi,count,mean_confidence,accuracy\n");
    let mut names = Vec::new();
    for (i, (name, bins)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = bins
            .bins
            .iter()
            .filter_map(|b| Some((b.mean_confidence?, b.accuracy?)))
            .collect();
        let _ = writeln!(plot.body, r#"<g id="series-{i}">"#);
        plot.polyline(&pts, &format!(r#"stroke="{color}" stroke-width="1.5""#));
        for &(x, y) in &pts {
            plot.circle(x, y, 3.0, &format!(r#"fill="{color}""#));
        }
        plot.body.push_str("</g>\n");
        for b in &bins.bins {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                name,
                b.lo,
                b.hi,
                b.count,
                opt(b.mean_confidence),
                opt(b.accuracy)
            );
        }
        let e = ece(bins).map(|e| format!(" (ECE {e:.3})")).unwrap_or_default();
        names.push(format!("{name}{e}"));
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    legend(&mut plot.body, &refs, false);
    let n_bins = series[0].1.n_bins;
    Ok(Figure {
        svg: plot.finish(
            "Reliability diagram",
            "mean confidence",
            "accuracy",
            &format!("{n_bins} equal-width bins; confidence is the largest mean class probability"),
        ),
        csv,
    })
}

/// Selective accuracy against coverage, one curve per series.
pub fn render_coverage(series: &[(&str, &CoverageCurve)]) -> Result<Figure> {
    if series.is_empty() {
        return Err(Error::invalid("coverage figure needs at least one series"));
    }
    let mut lo = 1.0f64;
    for (name, curve) in series {
        let defined: Vec<f64> = curve.points.iter().filter_map(|p| p.selective_accuracy).collect();
        if defined.is_empty() {
            return Err(Error::invalid(format!("coverage curve `{name}` has no answered points")));
        }
        lo = defined.iter().copied().fold(lo, f64::min);
    }
    let ylo = ((lo - 0.05).max(0.0) * 10.0).floor() / 10.0;
    let mut plot = Plot::new((0.0, 1.0), (ylo, 1.0));
    let mut csv = String::from("series,threshold,coverage,n_answered,selective_accuracy\n");
    for (i, (name, curve)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = curve
            .points
            .iter()
            .filter_map(|p| Some((p.coverage, p.selective_accuracy?)))
            .collect();
        let _ = writeln!(plot.body, r#"<g id="series-{i}">"#);
        plot.polyline(&pts, &format!(r#"stroke="{color}" stroke-width="1.5""#));
        for &(x, y) in &pts {
            plot.circle(x, y, 2.0, &format!(r#"fill="{color}""#));
        }
        plot.body.push_str("</g>\n");
        for p in &curve.points {
            let acc = p.selective_accuracy.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{name},{},{},{},{acc}", p.threshold, p.coverage, p.n_answered);
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.0).collect();
    legend(&mut plot.body, &names, true);
    Ok(Figure {
        svg: plot.finish(
            "Accuracy vs coverage",
            "coverage",
            "selective accuracy",
            "answer when confidence >= threshold; thresholds are the distinct confidences",
        ),
        csv,
    })
}
