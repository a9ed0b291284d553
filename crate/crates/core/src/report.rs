//! Trajectory tables, grouped statistics and static SVG plots.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::criterion::{EpochRecord, PhaseSegmentation, StopDecision, Trajectory};
use crate::error::{Error, Result};
use crate::spectra::Spectrum;

pub const CSV_HEADER: &str = "epoch,alpha,x_min,n_tail,d_tilde,d_star,indicator,r_exp,p_value,heavy_tailed,phase";

/// An input that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub epoch: u64,
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub schema: String,
    pub model_label: String,
    pub records: usize,
    pub segmentation: Option<PhaseSegmentation>,
    pub stop_decision: StopDecision,
    pub failures: Vec<EntryFailure>,
}

/// CSV table of a trajectory. The phase column is empty without a
/// segmentation.
pub fn trajectory_csv(trajectory: &Trajectory, segmentation: Option<&PhaseSegmentation>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in trajectory.records() {
        let phase = segmentation
            .map(|s| s.phase_of(r.epoch).to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.alpha,
            r.x_min,
            r.n_tail,
            r.d_tilde,
            r.d_star,
            r.indicator,
            r.r_exp,
            r.p_value,
            r.heavy_tailed,
            phase
        );
    }
    out
}

/// A parsed CSV row: the record and its phase, if any.
pub type CsvRow = (EpochRecord, Option<u8>);

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(Error::LineFormat {
                line: 1,
                message: "missing trajectory header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let bad = |message: String| Error::LineFormat { line: line_no, message };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 11 {
            return Err(bad(format!("expected 11 columns, found {}", cells.len())));
        }
        let float = |i: usize| {
            cells[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad number {:?}", cells[i])))
        };
        let record = EpochRecord {
            epoch: cells[0].parse().map_err(|_| bad(format!("bad epoch {:?}", cells[0])))?,
            alpha: float(1)?,
            x_min: float(2)?,
            n_tail: cells[3]
                .parse()
                .map_err(|_| bad(format!("bad n_tail {:?}", cells[3])))?,
            d_tilde: float(4)?,
            d_star: float(5)?,
            indicator: float(6)?,
            r_exp: float(7)?,
            p_value: float(8)?,
            heavy_tailed: cells[9].parse().map_err(|_| bad(format!("bad flag {:?}", cells[9])))?,
        };
        let phase = match cells[10] {
            "" => None,
            p => Some(p.parse().map_err(|_| bad(format!("bad phase {p:?}")))?),
        };
        rows.push((record, phase));
    }
    Ok(rows)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>.csv` and `<prefix>.json`; returns both paths.
pub fn write_trajectory(
    trajectory: &Trajectory,
    segmentation: Option<&PhaseSegmentation>,
    decision: &StopDecision,
    failures: &[EntryFailure],
    path_prefix: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    let prefix = path_prefix.as_ref();
    let csv_path = with_suffix(prefix, ".csv");
    let json_path = with_suffix(prefix, ".json");
    fs::write(&csv_path, trajectory_csv(trajectory, segmentation)).map_err(|e| Error::Io(e).at_path(&csv_path))?;
    let summary = TrajectorySummary {
        schema: crate::SCHEMA.into(),
        model_label: trajectory.model_label.clone(),
        records: trajectory.len(),
        segmentation: segmentation.cloned(),
        stop_decision: decision.clone(),
        failures: failures.to_vec(),
    };
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(&json_path, json).map_err(|e| Error::Io(e).at_path(&json_path))?;
    Ok((csv_path, json_path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub first_epoch: u64,
    pub last_epoch: u64,
    pub count: usize,
    pub alpha_mean: f64,
    pub alpha_std: f64,
    pub x_min_mean: f64,
    pub x_min_std: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Population mean and std of alpha and x_min over consecutive groups of
/// `group_size` records; the last group may be shorter.
pub fn grouped_stats(trajectory: &Trajectory, group_size: usize) -> Result<Vec<GroupStats>> {
    if group_size == 0 {
        return Err(Error::InvalidConfig("group size must be at least 1".into()));
    }
    Ok(trajectory
        .records()
        .chunks(group_size)
        .map(|g| {
            let (alpha_mean, alpha_std) = mean_std(g.iter().map(|r| r.alpha));
            let (x_min_mean, x_min_std) = mean_std(g.iter().map(|r| r.x_min));
            GroupStats {
                first_epoch: g[0].epoch,
                last_epoch: g[g.len() - 1].epoch,
                count: g.len(),
                alpha_mean,
                alpha_std,
                x_min_mean,
                x_min_std,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlotKind {
    /// Linear axes, one polyline per series.
    Trajectory,
    /// One bar per point `(bin_left, count)`; bins share the width of the
    /// first gap.
    Histogram,
    /// log₁₀ axes; with a fit, the power-law tail `(alpha, x_min)` is drawn
    /// as a straight line from `x_min` through the first series.
    EsdLogLog { fit: Option<(f64, f64)> },
}

pub const SVG_WIDTH: f64 = 640.0;
pub const SVG_HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Coordinates are rounded to 1/100 px and printed shortest round-trip.
fn px(v: f64) -> f64 {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Affine map from data space to pixels, used by the renderer and by
/// callers that need to relate SVG coordinates back to data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub log: bool,
}

impl Frame {
    fn axis(&self, v: f64) -> f64 {
        if self.log {
            v.log10()
        } else {
            v
        }
    }

    pub fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        let w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        (
            MARGIN_LEFT + (self.axis(x) - x0) / (x1 - x0) * w,
            SVG_HEIGHT - MARGIN_BOTTOM - (self.axis(y) - y0) / (y1 - y0) * h,
        )
    }

    fn tick_label(&self, v: f64) -> String {
        if self.log {
            format!("1e{}", v)
        } else {
            let r = (v * 1e6).round() / 1e6;
            format!("{}", if r == 0.0 { 0.0 } else { r })
        }
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
        (lo - pad, hi + pad)
    }
}

/// The frame `render_svg` uses for `series` and `kind`.
pub fn plot_frame(series: &[Series], kind: PlotKind) -> Result<Frame> {
    let log = matches!(kind, PlotKind::EsdLogLog { .. });
    let mut pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(x, y)| x.is_finite() && y.is_finite() && (!log || (x > 0.0 && y > 0.0)))
        .map(|(x, y)| if log { (x.log10(), y.log10()) } else { (x, y) })
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    if kind == PlotKind::Histogram {
        let width = histogram_width(&series[0].points);
        let right = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + width;
        pts.push((right, 0.0));
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        (
            pts.iter().map(f).fold(f64::INFINITY, f64::min),
            pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (x0, x1) = fold(|p| p.0);
    let (y0, y1) = fold(|p| p.1);
    Ok(Frame {
        x_range: padded(x0, x1),
        y_range: padded(y0, y1),
        log,
    })
}

fn histogram_width(points: &[(f64, f64)]) -> f64 {
    match points {
        [a, b, ..] if b.0 > a.0 => b.0 - a.0,
        _ => 1.0,
    }
}

/// Renders a standalone SVG document.
pub fn render_svg(series: &[Series], kind: PlotKind, title: &str, x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidInput("plot needs at least one nonempty series".into()));
    }
    let frame = plot_frame(series, kind)?;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        SVG_WIDTH / 2.0,
        escape(title)
    );

    let (left, bottom) = (MARGIN_LEFT, SVG_HEIGHT - MARGIN_BOTTOM);
    let (right, top) = (SVG_WIDTH - MARGIN_RIGHT, MARGIN_TOP);
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let xv = frame.x_range.0 + f * (frame.x_range.1 - frame.x_range.0);
        let yv = frame.y_range.0 + f * (frame.y_range.1 - frame.y_range.0);
        let tx = px(left + f * (right - left));
        let ty = px(bottom - f * (bottom - top));
        let _ = writeln!(
            svg,
            r#"<text x="{tx}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            bottom + 15.0,
            frame.tick_label(px_tick(xv))
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ty}" text-anchor="end" font-size="10">{}</text>"#,
            left - 5.0,
            frame.tick_label(px_tick(yv))
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        (left + right) / 2.0,
        SVG_HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    );

    match kind {
        PlotKind::Histogram => {
            let s = &series[0];
            let width = histogram_width(&s.points);
            let base_y = frame.y_range.0.max(0.0);
            for &(left_edge, count) in &s.points {
                let (x_a, y_a) = frame.to_px(left_edge, count);
                let (x_b, y_b) = frame.to_px(left_edge + width, base_y);
                let _ = writeln!(
                    svg,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                    px(x_a),
                    px(y_a.min(y_b)),
                    px(x_b - x_a),
                    px((y_b - y_a).abs()),
                    COLORS[0]
                );
            }
        }
        _ => {
            for (k, s) in series.iter().enumerate() {
                let coords: Vec<String> = s
                    .points
                    .iter()
                    .filter(|&&(x, y)| x.is_finite() && y.is_finite() && (!frame.log || (x > 0.0 && y > 0.0)))
                    .map(|&(x, y)| {
                        let (a, b) = frame.to_px(x, y);
                        format!("{},{}", px(a), px(b))
                    })
                    .collect();
                if coords.is_empty() {
                    continue;
                }
                let _ = writeln!(
                    svg,
                    r#"<polyline class="series" data-label="{}" fill="none" stroke="{}" points="{}"/>"#,
                    escape(&s.label),
                    COLORS[k % COLORS.len()],
                    coords.join(" ")
                );
            }
            if let PlotKind::EsdLogLog {
                fit: Some((alpha, x_min)),
            } = kind
            {
                if let Some(line) = fit_line(&series[0], alpha, x_min) {
                    let (a, b) = frame.to_px(line.0 .0, line.0 .1);
                    let (c, d) = frame.to_px(line.1 .0, line.1 .1);
                    let _ = writeln!(
                        svg,
                        r#"<line class="fit" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-dasharray="4 3"/>"#,
                        px(a),
                        px(b),
                        px(c),
                        px(d)
                    );
                }
            }
        }
    }
    for (k, s) in series.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" fill="{}">{}</text>"#,
            right - 150.0,
            top + 12.0 * (k as f64 + 1.0),
            COLORS[k % COLORS.len()],
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn px_tick(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Endpoints of the fitted survival line `S(x_min)·(x/x_min)^(1−α)` over the
/// series' x range above `x_min`, where `S(x_min)` is read off the series.
fn fit_line(s: &Series, alpha: f64, x_min: f64) -> Option<((f64, f64), (f64, f64))> {
    let start = s
        .points
        .iter()
        .filter(|p| p.0 >= x_min && p.1 > 0.0)
        .fold(None, |best: Option<(f64, f64)>, &p| match best {
            Some(b) if b.0 <= p.0 => Some(b),
            _ => Some(p),
        })?;
    let x_max = s.points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let scale = start.1 * (start.0 / x_min).powf(alpha - 1.0);
    let at = |x: f64| scale * (x / x_min).powf(1.0 - alpha);
    Some(((x_min, at(x_min)), (x_max, at(x_max))))
}

/// Empirical survival curve `(λ, fraction of eigenvalues ≥ λ)` over the
/// positive eigenvalues.
pub fn survival_series(spectrum: &Spectrum) -> Series {
    let ev = spectrum.eigenvalues();
    let n = ev.len() as f64;
    let points = ev
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (v, (ev.len() - i) as f64 / n))
        .collect();
    Series::new("ESD survival", points)
}

pub fn render_plot(
    series: &[Series],
    kind: PlotKind,
    title: &str,
    axis_labels: (&str, &str),
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let svg = render_svg(series, kind, title, axis_labels.0, axis_labels.1)?;
    fs::write(path, svg).map_err(|e| Error::Io(e).at_path(path))
}
