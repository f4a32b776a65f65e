use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::flops::{log_log_slope, training_step_flops};
use super::throughput::measure_throughput;
use crate::error::{Error, Result};
use crate::model::{ConvVariant, ModelConfig};

pub const DEFAULT_GRID: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];
/// Lower edge of the long-sequence regime used for the second slope fit.
pub const LONG_SEQUENCE: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub variant: ConvVariant,
    pub n: usize,
    /// Training-step FLOPs.
    pub flops: u64,
    pub examples_per_sec: Option<f64>,
    pub batch: usize,
    pub reps: usize,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingOptions {
    pub batch: usize,
    pub reps: usize,
    pub memory_budget: u64,
}

/// Log-log slopes of one variant over the whole grid and over `n ≥ 1024`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Slopes {
    pub flops: Option<f64>,
    pub flops_long: Option<f64>,
    /// Seconds per example against `n`, feasible points only.
    pub time: Option<f64>,
    pub time_long: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub records: Vec<BenchmarkRecord>,
    pub slopes: BTreeMap<ConvVariant, Slopes>,
}

/// One record per `(variant, n)`. Each variant uses `base` with its variant
/// swapped in. Without `timing` only FLOPs are filled in.
pub fn scaling_report(
    variants: &[ConvVariant],
    grid: &[usize],
    base: &ModelConfig,
    timing: Option<&TimingOptions>,
) -> Result<ScalingReport> {
    if variants.is_empty() || grid.is_empty() {
        return Err(Error::Config(
            "benchmark needs at least one variant and one length".into(),
        ));
    }
    let mut records = Vec::new();
    for &variant in variants {
        let cfg = ModelConfig {
            variant,
            ..base.clone()
        };
        for &n in grid {
            let flops = training_step_flops(&cfg, n)?;
            let (eps, feasible) = match timing {
                Some(t) => {
                    let r = measure_throughput(&cfg, n, t.batch, t.reps, t.memory_budget)?;
                    match r {
                        Some(r) => log::info!("{variant} n={n}: {:.3} examples/s", r.examples_per_sec),
                        None => log::warn!("{variant} n={n}: over the memory budget, marked infeasible"),
                    }
                    (r.map(|r| r.examples_per_sec), r.is_some())
                }
                None => (None, true),
            };
            records.push(BenchmarkRecord {
                variant,
                n,
                flops,
                examples_per_sec: eps,
                batch: timing.map_or(0, |t| t.batch),
                reps: timing.map_or(0, |t| t.reps),
                feasible,
            });
        }
    }
    let slopes = variants.iter().map(|&v| (v, fit(&records, v))).collect();
    Ok(ScalingReport { records, slopes })
}

fn fit(records: &[BenchmarkRecord], v: ConvVariant) -> Slopes {
    let rows: Vec<&BenchmarkRecord> = records.iter().filter(|r| r.variant == v).collect();
    let pts = |long: bool, f: &dyn Fn(&BenchmarkRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| !long || r.n >= LONG_SEQUENCE)
            .filter_map(|r| f(r).map(|y| (r.n as f64, y)))
            .collect()
    };
    let flops = |r: &BenchmarkRecord| Some(r.flops as f64);
    let secs = |r: &BenchmarkRecord| r.examples_per_sec.map(|e| 1.0 / e);
    Slopes {
        flops: log_log_slope(&pts(false, &flops)),
        flops_long: log_log_slope(&pts(true, &flops)),
        time: log_log_slope(&pts(false, &secs)),
        time_long: log_log_slope(&pts(true, &secs)),
    }
}

impl ScalingReport {
    pub const CSV_HEADER: &'static str = "variant,n,flops,examples_per_sec,batch,reps,feasible";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            let eps = r.examples_per_sec.map(|e| format!("{e:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{eps},{},{},{}",
                r.variant, r.n, r.flops, r.batch, r.reps, r.feasible
            );
        }
        out
    }

    pub fn any_feasible(&self) -> bool {
        self.records.iter().any(|r| r.feasible)
    }

    /// Writes `scaling.csv`, `slopes.json`, `flops.svg` and, when timings
    /// exist, `speed.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("scaling.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let slopes = dir.join("slopes.json");
        let named: BTreeMap<&str, Slopes> = self.slopes.iter().map(|(v, s)| (v.name(), *s)).collect();
        std::fs::write(&slopes, serde_json::to_string_pretty(&named)?).map_err(|e| Error::io(&slopes, e))?;
        self.plot(
            &dir.join("flops.svg"),
            "Training-step FLOPs vs sequence length",
            "FLOPs",
            |r| Some(r.flops as f64),
        )?;
        self.plot(
            &dir.join("speed.svg"),
            "Examples per second vs sequence length",
            "examples/sec",
            |r| r.examples_per_sec,
        )
    }

    fn plot(&self, path: &Path, title: &str, y_label: &str, y: impl Fn(&BenchmarkRecord) -> Option<f64>) -> Result<()> {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter_map(|r| y(r).map(|v| (r.n as f64, v)))
            .filter(|p| p.1 > 0.0)
            .collect();
        let bounds = |f: fn(&(f64, f64)) -> f64| {
            let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            (lo / 1.5, hi * 1.5)
        };
        let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
            let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
            root.fill(&WHITE)?;
            if pts.is_empty() {
                root.titled(&format!("{title} (no data)"), ("sans-serif", 22))?;
                return Ok(root.present()?);
            }
            let (x0, x1) = bounds(|p| p.0);
            let (y0, y1) = bounds(|p| p.1);
            let mut chart = ChartBuilder::on(&root)
                .caption(title, ("sans-serif", 22))
                .margin(16)
                .x_label_area_size(44)
                .y_label_area_size(72)
                .build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale())?;
            chart
                .configure_mesh()
                .x_desc("sequence length")
                .y_desc(y_label)
                .draw()?;
            for (i, v) in self.slopes.keys().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                let series: Vec<(f64, f64)> = self
                    .records
                    .iter()
                    .filter(|r| r.variant == *v)
                    .filter_map(|r| y(r).map(|val| (r.n as f64, val)))
                    .filter(|p| p.1 > 0.0)
                    .collect();
                chart
                    .draw_series(LineSeries::new(series, color.stroke_width(2)))?
                    .label(v.name())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            }
            chart
                .configure_series_labels()
                .border_style(BLACK)
                .background_style(WHITE)
                .draw()?;
            Ok(root.present()?)
        };
        draw().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
    }
}
