//! Coverage and error summaries, the results CSV, and static SVG plots.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Method, TrialResult};
use crate::error::{Error, Result};

/// Quantile with linear interpolation between order statistics of `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot statistics; whiskers reach the most extreme values within 1.5 IQR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
    let fence = 1.5 * (q3 - q1);
    let inside = |x: &&f64| **x >= q1 - fence && **x <= q3 + fence;
    Some(BoxStats {
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[sorted.len() - 1],
        whisker_lo: *sorted.iter().find(inside).unwrap_or(&q1),
        whisker_hi: *sorted.iter().rev().find(inside).unwrap_or(&q3),
        outliers: sorted.iter().filter(|x| !inside(x)).copied().collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub coverage: f64,
    pub mean_error: f64,
    pub sd_error: f64,
    pub mean_ci_width: f64,
    pub error: BoxStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub truth: f64,
    pub methods: Vec<MethodSummary>,
}

impl Summary {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

pub fn summarize(results: &[TrialResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::NoData("no trial results".into()));
    }
    let mut methods: Vec<Method> = results.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let methods = methods
        .into_iter()
        .map(|method| {
            let rows: Vec<&TrialResult> = results.iter().filter(|r| r.method == method).collect();
            let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
            let (mean_error, sd_error) = crate::estimator::mean_sd(&errors);
            let n = rows.len();
            MethodSummary {
                method,
                n,
                coverage: rows.iter().filter(|r| r.covered).count() as f64 / n as f64,
                mean_error,
                sd_error,
                mean_ci_width: rows.iter().map(|r| r.ci_hi - r.ci_lo).sum::<f64>() / n as f64,
                error: box_stats(&errors).expect("non-empty"),
            }
        })
        .collect();
    Ok(Summary {
        truth: results[0].truth,
        methods,
    })
}

pub fn write_results<W: Write>(results: &[TrialResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in results {
        out.serialize(r).map_err(|e| Error::Input(format!("results: {e}")))?;
    }
    out.flush().map_err(|e| Error::Input(format!("results: {e}")))
}

pub fn read_results<R: Read>(reader: R, name: &str) -> Result<Vec<TrialResult>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| Error::parse(name, k + 2, e.to_string())))
        .collect()
}

pub fn write_results_file(results: &[TrialResult], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_results(results, std::io::BufWriter::new(file))
}

pub fn read_results_file(path: &Path) -> Result<Vec<TrialResult>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_results(file, &path.display().to_string())
}

/// One plot cell: a labelled summary.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub label: String,
    pub summary: Summary,
}

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 40.0;

fn color(method: Method) -> &'static str {
    match method {
        Method::Oasis => "#4c72b0",
        Method::Cb => "#dd8452",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Grid of error box plots, one panel per cell with a box per method.
/// Quartiles are also written as `data-*` attributes on each box.
pub fn results_svg(panels: &[Panel], columns: usize) -> Result<String> {
    if panels.is_empty() {
        return Err(Error::NoData("no panels to plot".into()));
    }
    let columns = columns.clamp(1, panels.len());
    let rows = panels.len().div_ceil(columns);
    let mut svg = svg_open(columns as f64 * PANEL_W, rows as f64 * PANEL_H);
    for (k, panel) in panels.iter().enumerate() {
        let x0 = (k % columns) as f64 * PANEL_W;
        let y0 = (k / columns) as f64 * PANEL_H;
        let stats: Vec<&MethodSummary> = panel.summary.methods.iter().collect();
        let lo = stats.iter().map(|m| m.error.min).fold(0.0, f64::min);
        let hi = stats.iter().map(|m| m.error.max).fold(0.0, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (top, bottom) = (y0 + 30.0, y0 + PANEL_H - 30.0);
        let y = |v: f64| bottom - (v - lo) / span * (bottom - top);
        let left = x0 + MARGIN;
        let width = PANEL_W - MARGIN - 10.0;

        let _ = writeln!(svg, "<g class=\"panel\" data-label=\"{}\">", escape(&panel.label));
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", left + width / 2.0, y0 + 18.0, escape(&panel.label));
        let _ = writeln!(svg, "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>");
        for v in [lo, 0.0, hi] {
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.3}</text>",
                left - 3.0,
                y(v) + 4.0
            );
        }
        let _ = writeln!(
            svg,
            "<line x1=\"{left}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"gray\" stroke-dasharray=\"3,3\"/>",
            y(0.0),
            left + width
        );
        let slot = width / stats.len() as f64;
        for (b, m) in stats.iter().enumerate() {
            let cx = left + slot * (b as f64 + 0.5);
            let half = slot * 0.25;
            let s = &m.error;
            let c = color(m.method);
            let _ = writeln!(
                svg,
                "<g class=\"box\" data-method=\"{}\" data-q1=\"{}\" data-median=\"{}\" data-q3=\"{}\">",
                m.method.as_str(),
                s.q1,
                s.median,
                s.q3
            );
            let _ = writeln!(svg, "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>", y(s.whisker_hi), y(s.q3));
            let _ = writeln!(svg, "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>", y(s.q1), y(s.whisker_lo));
            let _ = writeln!(
                svg,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{c}\" fill-opacity=\"0.6\" stroke=\"black\"/>",
                cx - half,
                y(s.q3),
                2.0 * half,
                (y(s.q1) - y(s.q3)).max(0.5)
            );
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{2}\" x2=\"{}\" y2=\"{2}\" stroke=\"black\" stroke-width=\"2\"/>",
                cx - half,
                cx + half,
                y(s.median)
            );
            for &o in &s.outliers {
                let _ = writeln!(svg, "<circle cx=\"{cx}\" cy=\"{}\" r=\"2\" fill=\"none\" stroke=\"{c}\"/>", y(o));
            }
            let _ = writeln!(svg, "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{}</text>", bottom + 16.0, m.method.as_str());
            svg.push_str("</g>\n");
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Bar chart of coverage per cell and method, with the nominal level marked.
pub fn coverage_svg(panels: &[Panel], nominal: f64) -> Result<String> {
    if panels.is_empty() {
        return Err(Error::NoData("no panels to plot".into()));
    }
    let bar = 18.0;
    let group = bar * 2.0 + 24.0;
    let width = MARGIN + group * panels.len() as f64 + 20.0;
    let height = 240.0;
    let (top, bottom) = (20.0, height - 50.0);
    let y = |v: f64| bottom - v * (bottom - top);
    let mut svg = svg_open(width, height);
    let _ = writeln!(svg, "<line x1=\"{MARGIN}\" y1=\"{top}\" x2=\"{MARGIN}\" y2=\"{bottom}\" stroke=\"black\"/>");
    for v in [0.0, 0.5, 1.0] {
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.1}</text>", MARGIN - 3.0, y(v) + 4.0);
    }
    for (k, panel) in panels.iter().enumerate() {
        let gx = MARGIN + 10.0 + k as f64 * group;
        for (b, m) in panel.summary.methods.iter().enumerate() {
            let x = gx + b as f64 * bar;
            let _ = writeln!(
                svg,
                "<rect class=\"bar\" data-method=\"{}\" data-coverage=\"{}\" x=\"{x}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                m.method.as_str(),
                m.coverage,
                y(m.coverage),
                bar - 2.0,
                bottom - y(m.coverage),
                color(m.method)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            gx + bar,
            bottom + 16.0,
            escape(&panel.label)
        );
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"red\" stroke-dasharray=\"4,2\"/>",
        y(nominal),
        width - 10.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
