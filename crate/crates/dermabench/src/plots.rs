//! Confusion-matrix heatmaps and training curves.
//!
//! Each figure is first described by a plain layout value (labels, cell
//! text, series, markers), which tests can inspect, and then rasterized to
//! PNG.

use std::path::Path;
use std::sync::Once;

use dermabench_core::{ClassLabel, ConfusionMatrix, NUM_CLASSES};
use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

use crate::error::IoContext;
use crate::trainer::EpochRecord;
use crate::{Error, Result};

const FONT: &str = "sans-serif";
static FONT_BYTES: &[u8] = include_bytes!("../assets/DejaVuSans.ttf");
static REGISTER: Once = Once::new();

fn ensure_font() {
    REGISTER.call_once(|| {
        if register_font(FONT, FontStyle::Normal, FONT_BYTES).is_err() {
            log::warn!("bundled font failed to load; plot text may be missing");
        }
    });
}

/// Surfaces an unwritable destination as an I/O error before drawing.
fn check_writable(path: &Path) -> Result<()> {
    std::fs::File::create(path).at(path).map(drop)
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionLayout {
    pub title: String,
    /// Class names along the rows (true labels), in code order.
    pub row_labels: Vec<String>,
    /// Class names along the columns (predicted labels), in code order.
    pub column_labels: Vec<String>,
    /// Text drawn in each cell.
    pub annotations: [[String; NUM_CLASSES]; NUM_CLASSES],
    /// Cell shade in [0, 1], the count divided by its row total.
    pub intensity: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

pub fn confusion_layout(cm: &ConfusionMatrix, title: &str) -> ConfusionLayout {
    let names: Vec<String> = ClassLabel::ALL.iter().map(|c| c.name().to_string()).collect();
    let support = cm.support();
    let annotations = std::array::from_fn(|r| std::array::from_fn(|c| cm.counts[r][c].to_string()));
    let intensity = std::array::from_fn(|r| {
        std::array::from_fn(|c| {
            if support[r] == 0 {
                0.0
            } else {
                cm.counts[r][c] as f64 / support[r] as f64
            }
        })
    });
    ConfusionLayout {
        title: title.to_string(),
        row_labels: names.clone(),
        column_labels: names,
        annotations,
        intensity,
    }
}

fn shade(v: f64) -> RGBColor {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    RGBColor(lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

pub fn render_confusion(layout: &ConfusionLayout, path: &Path) -> Result<()> {
    ensure_font();
    check_writable(path)?;
    let (w, h) = (1100u32, 900u32);
    {
        let root = BitMapBackend::new(path, (w, h)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let (left, top, cell) = (260i32, 80i32, 90i32);
        let grid = cell * NUM_CLASSES as i32;
        let text = |size: u32| (FONT, size).into_font().color(&BLACK);
        root.draw(&Text::new(layout.title.clone(), (left, 25), text(24))).map_err(plot_err)?;
        for r in 0..NUM_CLASSES {
            for c in 0..NUM_CLASSES {
                let x0 = left + c as i32 * cell;
                let y0 = top + r as i32 * cell;
                let v = layout.intensity[r][c];
                root.draw(&Rectangle::new([(x0, y0), (x0 + cell, y0 + cell)], shade(v).filled()))
                    .map_err(plot_err)?;
                root.draw(&Rectangle::new([(x0, y0), (x0 + cell, y0 + cell)], BLACK.stroke_width(1)))
                    .map_err(plot_err)?;
                let colour = if v > 0.5 { WHITE } else { BLACK };
                let style = (FONT, 20).into_font().color(&colour).pos(plotters::style::text_anchor::Pos::new(
                    plotters::style::text_anchor::HPos::Center,
                    plotters::style::text_anchor::VPos::Center,
                ));
                root.draw(&Text::new(layout.annotations[r][c].clone(), (x0 + cell / 2, y0 + cell / 2), style))
                    .map_err(plot_err)?;
            }
            root.draw(&Text::new(
                layout.row_labels[r].clone(),
                (10, top + r as i32 * cell + cell / 2 - 8),
                text(15),
            ))
            .map_err(plot_err)?;
        }
        for (c, label) in layout.column_labels.iter().enumerate() {
            let style = (FONT, 15)
                .into_font()
                .transform(FontTransform::Rotate90)
                .color(&BLACK);
            root.draw(&Text::new(label.clone(), (left + c as i32 * cell + cell / 2 + 8, top + grid + 10), style))
                .map_err(plot_err)?;
        }
        root.draw(&Text::new("predicted", (left + grid + 20, top + grid + 10), text(16)))
            .map_err(plot_err)?;
        root.draw(&Text::new("true", (10, top - 30), text(16))).map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(())
}

/// Writes a labelled 7×7 heatmap of `cm` to `path` (PNG).
pub fn emit_confusion_plot(cm: &ConfusionMatrix, title: &str, path: &Path) -> Result<()> {
    render_confusion(&confusion_layout(cm, title), path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
    pub y_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvesLayout {
    /// Inclusive epoch range on the x axis.
    pub x_range: (usize, usize),
    /// Loss panel, then accuracy panel.
    pub panels: [Panel; 2],
    /// Epoch with the lowest validation loss (first on ties).
    pub best_epoch: usize,
}

pub fn curves_layout(history: &[EpochRecord]) -> Result<CurvesLayout> {
    let first = history.first().ok_or_else(|| Error::Plot("no epochs to plot".into()))?;
    let last = history.last().expect("non-empty");
    let mut best = first;
    for r in history {
        if r.validation_loss < best.validation_loss {
            best = r;
        }
    }
    let series = |name: &str, f: fn(&EpochRecord) -> f64| Series {
        name: name.to_string(),
        points: history.iter().map(|r| (r.epoch, f(r))).collect(),
    };
    let loss_max = history
        .iter()
        .flat_map(|r| [r.train_loss, r.validation_loss])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    Ok(CurvesLayout {
        x_range: (first.epoch, last.epoch),
        panels: [
            Panel {
                title: "loss".into(),
                series: vec![series("train", |r| r.train_loss), series("validation", |r| r.validation_loss)],
                y_range: (0.0, (loss_max * 1.1).max(1e-3)),
            },
            Panel {
                title: "accuracy".into(),
                series: vec![
                    series("train", |r| r.train_accuracy),
                    series("validation", |r| r.validation_accuracy),
                ],
                y_range: (0.0, 1.0),
            },
        ],
        best_epoch: best.epoch,
    })
}

pub fn render_curves(layout: &CurvesLayout, path: &Path) -> Result<()> {
    ensure_font();
    check_writable(path)?;
    let root = BitMapBackend::new(path, (1400, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let areas = root.split_evenly((1, 2));
    let (x0, x1) = layout.x_range;
    // a single epoch still needs a non-degenerate axis
    let x_hi = if x1 > x0 { x1 as f64 } else { x0 as f64 + 1.0 };
    let colours = [RGBColor(31, 119, 180), RGBColor(255, 127, 14)];
    for (area, panel) in areas.iter().zip(&layout.panels) {
        let mut chart = ChartBuilder::on(area)
            .caption(&panel.title, (FONT, 24))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(55)
            .build_cartesian_2d(x0 as f64..x_hi, panel.y_range.0..panel.y_range.1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("epoch")
            .x_label_formatter(&|v| format!("{}", v.round() as i64))
            .label_style((FONT, 14))
            .draw()
            .map_err(plot_err)?;
        for (s, colour) in panel.series.iter().zip(colours) {
            let pts: Vec<(f64, f64)> = s.points.iter().map(|&(e, v)| (e as f64, v)).collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), colour.stroke_width(2)))
                .map_err(plot_err)?
                .label(s.name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], colour.stroke_width(2)));
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, colour.filled())))
                .map_err(plot_err)?;
        }
        let b = layout.best_epoch as f64;
        chart
            .draw_series(std::iter::once(PathElement::new(
                vec![(b, panel.y_range.0), (b, panel.y_range.1)],
                RED.stroke_width(1),
            )))
            .map_err(plot_err)?
            .label(format!("best epoch {}", layout.best_epoch))
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED.stroke_width(1)));
        chart
            .configure_series_labels()
            .label_font((FONT, 14))
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Writes loss and accuracy curves (train and validation, best epoch
/// marked) to `path` (PNG).
pub fn emit_curves(history: &[EpochRecord], path: &Path) -> Result<()> {
    render_curves(&curves_layout(history)?, path)
}
