use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;

use ctf_core::eval::STRESS_HEADER;
use ctf_core::trainer::train::log_header;

use crate::args::PlotArgs;
use crate::manifest::RunRecorder;
use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Default axes for the CSV schemas this tool writes.
fn default_axes(header: &[String]) -> Option<(&'static str, &'static str)> {
    let joined = header.join(",");
    if joined == STRESS_HEADER.join(",") {
        Some(("noise_level", "e_theta"))
    } else if joined == log_header() || joined == "iteration,total" {
        Some(("iteration", "total"))
    } else {
        None
    }
}

/// A run directory stands for the first known CSV inside it.
fn resolve(path: &Path) -> Result<PathBuf> {
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    ["stress.csv", "train_log.csv"]
        .iter()
        .map(|f| path.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| anyhow!("{} contains neither stress.csv nor train_log.csv", path.display()))
}

pub fn read_series(path: &Path, x: Option<&str>, y: Option<&str>) -> Result<Series> {
    let file = resolve(path)?;
    let mut reader = csv::Reader::from_path(&file).with_context(|| format!("reading {}", file.display()))?;
    let header: Vec<String> = reader
        .headers()
        .with_context(|| format!("reading header of {}", file.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    let defaults = default_axes(&header);
    let pick = |given: Option<&str>, default: Option<&'static str>, axis: &str| -> Result<usize> {
        let name = given.or(default).ok_or_else(|| {
            anyhow!(
                "{}: unrecognized columns [{}]; pass --{axis} to choose one",
                file.display(),
                header.join(", ")
            )
        })?;
        header.iter().position(|h| h == name).ok_or_else(|| {
            anyhow!(
                "{}: no column {name:?} for the {axis} axis (columns: {})",
                file.display(),
                header.join(", ")
            )
        })
    };
    let xi = pick(x, defaults.map(|d| d.0), "x")?;
    let yi = pick(y, defaults.map(|d| d.1), "y")?;
    let mut points = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", file.display(), k + 1))?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| anyhow!("{}: row {} column {:?} is not a number", file.display(), k + 1, header[i]))
        };
        points.push((num(xi)?, num(yi)?));
    }
    Ok(Series {
        label: path.with_extension("").display().to_string(),
        points,
    })
}

pub fn write_merged_csv(path: &Path, series: &[Series]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["series", "x", "y"])?;
    for s in series {
        for (x, y) in &s.points {
            w.write_record([s.label.as_str(), &x.to_string(), &y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn draw(path: &Path, series: &[Series], x_label: &str, y_label: &str) -> Result<()> {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| if hi > lo { (hi - lo) * 0.05 } else { 0.5 };
    let (px, py) = (pad(x0, x1), pad(y0, y1));

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
    for (k, s) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Returns the merged CSV path.
pub fn plot(args: &PlotArgs, rec: &mut RunRecorder) -> Result<PathBuf> {
    if args.runs.is_empty() {
        return Err(UsageError("plot needs at least one --runs input".into()).into());
    }
    let series: Vec<Series> = args
        .runs
        .iter()
        .map(|p| read_series(p, args.x.as_deref(), args.y.as_deref()))
        .collect::<Result<_>>()?;
    for p in &args.runs {
        rec.input(p);
    }
    let merged = args.out.with_extension("csv");
    if merged == args.out {
        bail!("--out must not be a .csv file; the merged CSV is written next to the chart");
    }
    rec.output(&args.out).output(&merged);
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_merged_csv(&merged, &series)?;
    let first = resolve(&args.runs[0])?;
    let header: Vec<String> = csv::Reader::from_path(&first)?
        .headers()?
        .iter()
        .map(str::to_string)
        .collect();
    let defaults = default_axes(&header);
    let x_label = args.x.as_deref().or(defaults.map(|d| d.0)).unwrap_or("x");
    let y_label = args.y.as_deref().or(defaults.map(|d| d.1)).unwrap_or("y");
    draw(&args.out, &series, x_label, y_label)?;
    Ok(merged)
}
