//! SVG figures and the CSV behind them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::config::OverheadModel;
use super::experiments::{CONVERGENCE_EXPERIMENT, NMSE_EXPERIMENT, RATE_EXPERIMENT};
use super::metrics::{write_csv, Method, MetricsRow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Figure {
    /// NMSE against estimation SNR, one line per (method, ρ).
    NmseVsSnr,
    /// Effective rate against ρ, one line per method.
    RateVsRho,
    /// Rate against training step, one line per method.
    Convergence,
}

impl Figure {
    pub const ALL: [Figure; 3] = [Figure::NmseVsSnr, Figure::RateVsRho, Figure::Convergence];

    pub fn file_name(self) -> &'static str {
        match self {
            Figure::NmseVsSnr => "nmse_vs_snr.svg",
            Figure::RateVsRho => "effective_rate_vs_rho.svg",
            Figure::Convergence => "convergence.svg",
        }
    }

    pub fn experiment_name(self) -> &'static str {
        match self {
            Figure::NmseVsSnr => NMSE_EXPERIMENT,
            Figure::RateVsRho => RATE_EXPERIMENT,
            Figure::Convergence => CONVERGENCE_EXPERIMENT,
        }
    }
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn series(rows: &[MetricsRow], figure: Figure) -> Series {
    let mut out: Series = BTreeMap::new();
    for r in rows.iter().filter(|r| r.experiment == figure.experiment_name()) {
        let point = match figure {
            Figure::NmseVsSnr => r.snr_db.zip(r.nmse).map(|(x, y)| (format!("{} rho={}", r.method, r.rho.unwrap_or(0.0)), x, y)),
            Figure::RateVsRho => match r.method {
                Method::Dedt | Method::Rcdt => r.rho.zip(r.effective_rate).map(|(x, y)| (r.method.to_string(), x, y)),
                _ => None,
            },
            Figure::Convergence => r.step.zip(r.raw_rate).map(|(x, y)| (r.method.to_string(), x as f64, y)),
        };
        if let Some((name, x, y)) = point {
            out.entry(name).or_default().push((x, y));
        }
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

/// Horizontal reference levels drawn on the rate figure.
fn references(rows: &[MetricsRow]) -> Vec<(String, f64)> {
    rows.iter()
        .filter(|r| r.experiment == RATE_EXPERIMENT && matches!(r.method, Method::Pcdt | Method::Ao | Method::Random | Method::DmPpo | Method::RcPpo))
        .filter_map(|r| r.effective_rate.map(|y| (r.method.to_string(), y)))
        .collect()
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn draw(path: &Path, figure: Figure, data: &Series, refs: &[(String, f64)], caption: &str) -> Result<()> {
    let err = |e: &dyn std::fmt::Display| Error::format(path, e.to_string());
    let xs = data.values().flatten().map(|p| p.0);
    let (x0, x1) = bounds(xs);
    let ys = data.values().flatten().map(|p| p.1).chain(refs.iter().map(|r| r.1));
    let (y0, y1) = bounds(ys);
    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 18))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(&e))?;
    let (xl, yl) = match figure {
        Figure::NmseVsSnr => ("SNR (dB)", "NMSE"),
        Figure::RateVsRho => ("mask ratio", "effective rate (bit/s/Hz)"),
        Figure::Convergence => ("update", "rate (bit/s/Hz)"),
    };
    chart
        .configure_mesh()
        .x_desc(xl)
        .y_desc(yl)
        .draw()
        .map_err(|e| err(&e))?;
    let lines = data.iter().map(|(n, p)| (n.clone(), p.clone()));
    let flat = refs.iter().map(|(n, y)| (n.clone(), vec![(x0, *y), (x1, *y)]));
    for (i, (name, pts)) in lines.chain(flat).enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Writes the requested figures and `metrics.csv` into `out_dir`. Returns
/// the figure paths in request order.
pub fn emit_plots(rows: &[MetricsRow], out_dir: &Path, figures: &[Figure], overhead: &OverheadModel, elements: usize) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::NothingToPlot("no metrics rows".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(figures.len());
    for &figure in figures {
        let data = series(rows, figure);
        if data.is_empty() {
            return Err(Error::NothingToPlot(format!("no `{}` rows for {}", figure.experiment_name(), figure.file_name())));
        }
        let refs = if figure == Figure::RateVsRho { references(rows) } else { Vec::new() };
        let caption = match figure {
            Figure::NmseVsSnr => "Imputation NMSE".to_string(),
            Figure::RateVsRho => format!("Effective rate ({})", overhead.caption(elements)),
            Figure::Convergence => "Rate during training".to_string(),
        };
        let path = out_dir.join(figure.file_name());
        draw(&path, figure, &data, &refs, &caption)?;
        paths.push(path);
    }
    write_csv(&out_dir.join("metrics.csv"), rows)?;
    Ok(paths)
}
