//! Minimal SVG diagnostics: loss curves, consistent fraction, similarity heatmap.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::log::TrainLog;
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        PAD + (x - self.x0) / span * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        H - PAD - (y - self.y0) / span * (H - 2.0 * PAD)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        W / 2.0
    )
}

fn axes(out: &mut String, f: &Frame, xlabel: &str) {
    let (l, r, t, b) = (PAD, W - PAD, PAD, H - PAD);
    let _ = writeln!(out, "<path d=\"M{l} {t} L{l} {b} L{r} {b}\" stroke=\"black\" fill=\"none\"/>");
    for (v, y) in [(f.y0, b), (f.y1, t)] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{v:.3}</text>",
            l - 4.0,
            y + 4.0
        );
    }
    for (v, x) in [(f.x0, l), (f.x1, r)] {
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{v}</text>",
            b + 16.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{xlabel}</text>",
        W / 2.0,
        H - 12.0
    );
}

fn series(out: &mut String, f: &Frame, xs: &[f64], ys: &[f64], color: &str, label: &str, slot: usize) {
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| y.is_finite())
        .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    if pts.len() > 1 {
        let _ = writeln!(
            out,
            "<polyline class=\"series\" points=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
    }
    for p in &pts {
        let (x, y) = p.split_once(',').expect("formatted pair");
        let _ = writeln!(out, "<circle class=\"point\" cx=\"{x}\" cy=\"{y}\" r=\"2\" fill=\"{color}\"/>");
    }
    let ly = PAD + 14.0 * slot as f64;
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{ly}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{label}</text>",
        W - PAD - 60.0
    );
}

fn epochs(log: &TrainLog) -> Vec<f64> {
    log.records.iter().map(|r| r.epoch as f64).collect()
}

fn x_frame(xs: &[f64], y0: f64, y1: f64) -> Frame {
    Frame {
        x0: xs.first().copied().unwrap_or(0.0),
        x1: xs.last().copied().unwrap_or(1.0),
        y0,
        y1,
    }
}

pub fn loss_curve_svg(log: &TrainLog) -> String {
    let xs = epochs(log);
    let cols: [(&str, &str, Vec<f64>); 4] = [
        ("total", "black", log.records.iter().map(|r| r.total).collect()),
        ("ce", "#1f77b4", log.records.iter().map(|r| r.l_ce).collect()),
        ("sl", "#2ca02c", log.records.iter().map(|r| r.l_sl).collect()),
        ("cr", "#d62728", log.records.iter().map(|r| r.l_cr).collect()),
    ];
    let finite = cols.iter().flat_map(|c| c.2.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi) } else { (0.0, 1.0) };
    let f = x_frame(&xs, lo, hi);
    let mut out = header("training losses");
    axes(&mut out, &f, "epoch");
    for (slot, (label, color, ys)) in cols.iter().enumerate() {
        series(&mut out, &f, &xs, ys, color, label, slot);
    }
    out.push_str("</svg>\n");
    out
}

pub fn fraction_svg(log: &TrainLog) -> String {
    let xs = epochs(log);
    let f = x_frame(&xs, 0.0, 1.0);
    let mut out = header("consistent-point fraction");
    axes(&mut out, &f, "epoch");
    series(&mut out, &f, &xs, &log.consistent_fractions(), "#1f77b4", "fraction", 0);
    out.push_str("</svg>\n");
    out
}

/// One cell per matrix entry, shaded from white (minimum) to dark blue (maximum).
pub fn heatmap_svg(m: &Array2<f64>) -> String {
    let (rows, cols) = m.dim();
    let (lo, hi) = m.iter().filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let side = (H - 2.0 * PAD).min(W - 2.0 * PAD);
    let cw = side / cols.max(1) as f64;
    let ch = side / rows.max(1) as f64;
    let x0 = (W - side) / 2.0;
    let mut out = header("prototype similarity");
    for i in 0..rows {
        for j in 0..cols {
            let v = m[[i, j]];
            let t = if v.is_finite() { (v - lo) / span } else { 0.0 };
            let shade = |full: f64, dark: f64| (full + (dark - full) * t).round() as u8;
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{:.2}\" y=\"{:.2}\" width=\"{cw:.3}\" height=\"{ch:.3}\" fill=\"rgb({},{},{})\"/>",
                x0 + j as f64 * cw,
                PAD + i as f64 * ch,
                shade(255.0, 8.0),
                shade(255.0, 48.0),
                shade(255.0, 107.0)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

pub const LOSS_PLOT: &str = "loss_curve.svg";
pub const FRACTION_PLOT: &str = "consistent_fraction.svg";
pub const HEATMAP_PLOT: &str = "prototype_similarity.svg";

/// Writes the diagnostic plots into `outdir` and returns their paths.
pub fn report_plots(log: &TrainLog, similarity: Option<&Array2<f64>>, outdir: &Path) -> Result<Vec<PathBuf>> {
    if log.is_empty() {
        return Err(Error::data("training log is empty"));
    }
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut files = vec![
        (outdir.join(LOSS_PLOT), loss_curve_svg(log)),
        (outdir.join(FRACTION_PLOT), fraction_svg(log)),
    ];
    if let Some(m) = similarity {
        files.push((outdir.join(HEATMAP_PLOT), heatmap_svg(m)));
    }
    for (path, svg) in &files {
        std::fs::write(path, svg).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
