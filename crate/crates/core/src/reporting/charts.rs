//! Bar charts, histograms and training curves rendered straight to PNG.

use std::collections::BTreeMap;
use std::path::Path;

use super::canvas::{nice_step, Canvas, Color, BLACK, BLUE, GRID, ORANGE, WHITE};
use crate::dataset::{ClassLabel, IntensityHistogram};
use crate::error::{Error, Result};
use crate::training::TrainingHistory;

/// Plot rectangle inside a figure.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Frame {
    fn bottom(&self) -> i64 {
        self.y + self.h - 1
    }

    /// Pixel row for `v` on a `[0, max]` axis.
    fn y_of(&self, v: f64, max: f64) -> i64 {
        self.bottom() - ((v / max) * (self.h - 1) as f64).round() as i64
    }
}

fn fmt_tick(v: f64) -> String {
    if v.fract().abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').to_string()
    }
}

/// Axes, horizontal grid lines and y tick labels for `[0, max]`.
fn axes(c: &mut Canvas, f: Frame, max: f64, x_label: &str, y_label: &str, title: &str) {
    let step = nice_step(max, 5);
    let mut t = 0.0;
    while t <= max + 1e-9 {
        let y = f.y_of(t, max);
        c.line(f.x, y, f.x + f.w - 1, y, GRID);
        let label = fmt_tick(t);
        c.text(f.x - 6 - Canvas::text_width(&label, 1), y - 4, &label, BLACK, 1);
        t += step;
    }
    c.line(f.x, f.y, f.x, f.bottom(), BLACK);
    c.line(f.x, f.bottom(), f.x + f.w - 1, f.bottom(), BLACK);
    c.text(f.x + (f.w - Canvas::text_width(x_label, 1)) / 2, f.bottom() + 24, x_label, BLACK, 1);
    c.text_vertical(f.x - 56, f.y + (f.h + Canvas::text_width(y_label, 1)) / 2, y_label, BLACK);
    c.text(f.x + (f.w - Canvas::text_width(title, 1)) / 2, f.y - 18, title, BLACK, 1);
}

/// Bar heights in pixels for a plot of height `plot_h`, scaled so the
/// tallest bar fills the axis maximum.
pub fn bar_heights(values: &[usize], axis_max: f64, plot_h: i64) -> Vec<i64> {
    values
        .iter()
        .map(|&v| ((v as f64 / axis_max) * (plot_h - 1) as f64).round() as i64)
        .collect()
}

fn axis_max(max: f64) -> f64 {
    if max <= 0.0 {
        return 1.0;
    }
    let step = nice_step(max, 5);
    (max / step).ceil() * step
}

pub const CLASS_COLORS: [Color; 2] = [BLUE, ORANGE];

pub fn render_class_distribution(counts: &BTreeMap<ClassLabel, usize>, out: &Path) -> Result<()> {
    let values: Vec<usize> = ClassLabel::ALL.iter().map(|c| counts.get(c).copied().unwrap_or(0)).collect();
    let mut c = Canvas::new(480, 360, WHITE);
    let f = Frame { x: 80, y: 40, w: 370, h: 260 };
    let max = axis_max(values.iter().copied().max().unwrap_or(0) as f64);
    axes(&mut c, f, max, "class", "images", "Images per class");
    let heights = bar_heights(&values, max, f.h);
    let slot = f.w / values.len() as i64;
    let bar_w = slot / 2;
    for (i, (&v, &h)) in values.iter().zip(&heights).enumerate() {
        let x = f.x + i as i64 * slot + (slot - bar_w) / 2;
        c.fill_rect(x, f.bottom() - h, bar_w, h, CLASS_COLORS[i]);
        let label = v.to_string();
        c.text(x + (bar_w - Canvas::text_width(&label, 1)) / 2, f.bottom() - h - 12, &label, BLACK, 1);
        let name = ClassLabel::ALL[i].as_str();
        c.text(x + (bar_w - Canvas::text_width(name, 1)) / 2, f.bottom() + 8, name, BLACK, 1);
    }
    c.save_png(out)
}

fn histogram_panel(c: &mut Canvas, f: Frame, hist: &IntensityHistogram, color: Color) {
    let total = hist.total() as f64;
    let peak = hist.bins.iter().copied().max().unwrap_or(0) as f64 / total;
    let max = axis_max(peak);
    let title = format!("{} (n={})", hist.class_label, hist.n_images);
    axes(c, f, max, "pixel intensity", "fraction", &title);
    for (v, &count) in hist.bins.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let x = f.x + 1 + v as i64;
        let top = f.y_of(count as f64 / total, max);
        c.line(x, f.bottom() - 1, x, top.min(f.bottom() - 1), color);
    }
    for tick in [0, 64, 128, 192, 255] {
        let label = tick.to_string();
        c.text(f.x + 1 + tick - Canvas::text_width(&label, 1) / 2, f.bottom() + 8, &label, BLACK, 1);
    }
}

/// Two panels (healthy left, unhealthy right) of normalised grey-level frequencies.
pub fn render_intensity_histograms(healthy: &IntensityHistogram, unhealthy: &IntensityHistogram, out: &Path) -> Result<()> {
    for h in [healthy, unhealthy] {
        if h.bins.len() != 256 {
            return Err(Error::Input(format!("histogram has {} bins, expected 256", h.bins.len())));
        }
        if h.total() == 0 {
            return Err(Error::Input(format!("{} histogram is empty", h.class_label)));
        }
    }
    let mut c = Canvas::new(2 * PANEL_W, 340, WHITE);
    histogram_panel(&mut c, Frame { x: 80, y: 40, w: 258, h: 240 }, healthy, CLASS_COLORS[0]);
    histogram_panel(&mut c, Frame { x: PANEL_W as i64 + 80, y: 40, w: 258, h: 240 }, unhealthy, CLASS_COLORS[1]);
    c.save_png(out)
}

pub const PANEL_W: u32 = 380;

fn series(c: &mut Canvas, f: Frame, values: &[f64], max: f64, color: Color) {
    let n = values.len();
    let x_of = |i: usize| {
        if n == 1 {
            f.x + f.w / 2
        } else {
            f.x + ((i as f64 / (n - 1) as f64) * (f.w - 1) as f64).round() as i64
        }
    };
    for i in 0..n {
        let (x, y) = (x_of(i), f.y_of(values[i].clamp(0.0, max), max));
        c.fill_rect(x - 1, y - 1, 3, 3, color);
        if i + 1 < n {
            c.line(x, y, x_of(i + 1), f.y_of(values[i + 1].clamp(0.0, max), max), color);
        }
    }
}

/// Epoch tick positions: 1..n, thinned to about ten labels.
pub fn epoch_ticks(n: usize) -> Vec<usize> {
    let step = n.div_ceil(10).max(1);
    let mut t: Vec<usize> = (1..=n).step_by(step).collect();
    if t.last() != Some(&n) {
        t.push(n);
    }
    t
}

fn curve_panel(c: &mut Canvas, f: Frame, train: &[f64], val: &[f64], max: f64, y_label: &str, title: &str) {
    axes(c, f, max, "epoch", y_label, title);
    let n = train.len();
    for e in epoch_ticks(n) {
        let x = if n == 1 { f.x + f.w / 2 } else { f.x + (((e - 1) as f64 / (n - 1) as f64) * (f.w - 1) as f64).round() as i64 };
        let label = e.to_string();
        c.line(x, f.bottom(), x, f.bottom() + 3, BLACK);
        c.text(x - Canvas::text_width(&label, 1) / 2, f.bottom() + 8, &label, BLACK, 1);
    }
    series(c, f, train, max, BLUE);
    series(c, f, val, max, ORANGE);
    c.fill_rect(f.x + f.w - 90, f.y + 6, 10, 8, BLUE);
    c.text(f.x + f.w - 76, f.y + 6, "train", BLACK, 1);
    c.fill_rect(f.x + f.w - 90, f.y + 20, 10, 8, ORANGE);
    c.text(f.x + f.w - 76, f.y + 20, "val", BLACK, 1);
}

/// Loss (left) and accuracy (right) per epoch, train vs validation.
pub fn render_training_curves(history: &TrainingHistory, out: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::Input("training history is empty".into()));
    }
    let loss_max = axis_max(history.train_loss.iter().chain(&history.val_loss).copied().fold(0.0, f64::max));
    let mut c = Canvas::new(2 * 420, 340, WHITE);
    curve_panel(&mut c, Frame { x: 80, y: 40, w: 310, h: 240 }, &history.train_loss, &history.val_loss, loss_max, "loss", "Loss");
    curve_panel(
        &mut c,
        Frame { x: 500, y: 40, w: 310, h: 240 },
        &history.train_accuracy,
        &history.val_accuracy,
        1.0,
        "accuracy",
        "Accuracy",
    );
    c.save_png(out)
}
