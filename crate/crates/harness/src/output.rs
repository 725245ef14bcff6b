//! Artifact writer: per-run CSV logs, a versioned summary JSON and SVG plots.
//! Output depends only on the report, so identical runs give identical bytes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use vpc_core::simulator::RunLog;

use crate::config::{ScenarioConfig, ScenarioKind};
use crate::metrics::Metrics;
use crate::predict::PredictReport;
use crate::scenarios::{RunRecord, ScenarioReport, SweepCell};
use crate::svg::{ramp, Plot, Series, PALETTE};

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 26] = [
    "t",
    "p_x",
    "p_y",
    "p_z",
    "v_x",
    "v_y",
    "v_z",
    "q_w",
    "q_x",
    "q_y",
    "q_z",
    "u",
    "v",
    "d",
    "d_ref",
    "c",
    "omega_x",
    "omega_y",
    "omega_z",
    "solve_ms",
    "kkt",
    "sqp_iters",
    "status",
    "max_slack",
    "visible",
    "inputs_in_box",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Serialize)]
struct RunEntry<'a> {
    name: &'a str,
    csv: String,
    metrics: &'a Metrics,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    scenario: ScenarioKind,
    seed: u64,
    config: &'a ScenarioConfig,
    runs: Vec<RunEntry<'a>>,
    sweep: Option<&'a [SweepCell]>,
    predict: Option<&'a PredictReport>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    std::fs::write(path, bytes).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_run_csv(log: &RunLog, path: &Path) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(CSV_COLUMNS).map_err(csv_err(path))?;
    for r in &log.rows {
        let (p, v, q) = (r.plant.p_w, r.plant.v_w, r.plant.q_wb.coords());
        let w_b = r.input.omega_b;
        let status = serde_json::to_value(r.status).ok();
        let status = status
            .as_ref()
            .and_then(|s| s.as_str())
            .unwrap_or("unknown");
        let nums = [
            r.t, p.x, p.y, p.z, v.x, v.y, v.z, q[0], q[1], q[2], q[3], r.s_c.u, r.s_c.v, r.d,
            r.d_ref, r.input.c, w_b.x, w_b.y, w_b.z, r.solve_ms, r.kkt,
        ];
        let mut rec: Vec<String> = nums.iter().map(|x| x.to_string()).collect();
        rec.push(r.sqp_iters.to_string());
        rec.push(status.into());
        rec.push(r.max_slack.to_string());
        rec.push((r.visible as u8).to_string());
        rec.push((r.inputs_in_box as u8).to_string());
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_plots(cfg: &ScenarioConfig, runs: &[RunRecord]) -> Vec<(&'static str, String)> {
    let color = |i: usize| PALETTE[i % PALETTE.len()].to_string();
    let path = |r: &RunRecord| -> Vec<(f64, f64)> {
        let mut v: Vec<_> = r
            .log
            .rows
            .iter()
            .map(|row| (row.plant.p_w.x, row.plant.p_w.y))
            .collect();
        v.push((r.log.final_plant.p_w.x, r.log.final_plant.p_w.y));
        v
    };

    let mut extent: Vec<(f64, f64)> = runs.iter().flat_map(path).collect();
    extent.push((cfg.landmark[0], cfg.landmark[1]));
    let mut xy = Plot::new("Path (top view)", "x (m)", "y (m)", &extent).equal_aspect();
    for (i, r) in runs.iter().enumerate() {
        xy.line(&Series {
            label: r.name.clone(),
            points: path(r),
            color: color(i),
        });
    }
    xy.dot(cfg.landmark[0], cfg.landmark[1], 5.0, "#000");
    xy.label("landmark", "#000");

    let alt_series: Vec<Vec<(f64, f64)>> = runs
        .iter()
        .map(|r| {
            r.log
                .rows
                .iter()
                .map(|row| (row.t, row.plant.p_w.z))
                .collect()
        })
        .collect();
    let extent: Vec<_> = alt_series.iter().flatten().copied().collect();
    let mut alt = Plot::new("Altitude", "t (s)", "z (m)", &extent);
    for (i, (r, pts)) in runs.iter().zip(alt_series).enumerate() {
        alt.line(&Series {
            label: r.name.clone(),
            points: pts,
            color: color(i),
        });
    }

    let b = &cfg.bounds;
    let feats: Vec<(f64, f64, f64)> = runs
        .iter()
        .flat_map(|r| r.log.rows.iter().map(|row| (row.s_c.u, row.s_c.v, row.d)))
        .collect();
    let mut extent: Vec<(f64, f64)> = feats.iter().map(|f| (f.0, -f.1)).collect();
    extent.extend([(b.s_min[0], -b.s_min[1]), (b.s_max[0], -b.s_max[1])]);
    let (dmin, dmax) = feats
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
            (lo.min(f.2), hi.max(f.2))
        });
    let mut img = Plot::new("Feature in the image", "u", "-v", &extent).equal_aspect();
    img.rect(b.s_min[0], -b.s_max[1], b.s_max[0], -b.s_min[1], "#d62728");
    for &(u, v, d) in &feats {
        let t = if dmax > dmin {
            (d - dmin) / (dmax - dmin)
        } else {
            0.0
        };
        img.dot(u, -v, 2.0, &ramp(t));
    }
    if dmin.is_finite() {
        img.label(&format!("d = {dmin:.2} m"), &ramp(0.0));
        img.label(&format!("d = {dmax:.2} m"), &ramp(1.0));
    }
    img.label("visibility bound", "#d62728");

    vec![
        ("xy_path.svg", xy.render()),
        ("altitude.svg", alt.render()),
        ("image_features.svg", img.render()),
    ]
}

fn sweep_outputs(cells: &[SweepCell]) -> Vec<(&'static str, String)> {
    let mut table = String::from("speed,perception,trials,successes,rate,max_abs_image\n");
    for c in cells {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.speed, c.perception, c.trials, c.successes, c.rate, c.max_abs_image
        ));
    }
    let line = |p: bool| -> Vec<(f64, f64)> {
        cells
            .iter()
            .filter(|c| c.perception == p)
            .map(|c| (c.speed, 100.0 * c.rate))
            .collect()
    };
    let mut extent: Vec<_> = cells.iter().map(|c| (c.speed, 0.0)).collect();
    extent.push((extent.first().map_or(0.0, |e| e.0), 100.0));
    let mut plot = Plot::new(
        "Success rate",
        "maximum reference speed (m/s)",
        "success (%)",
        &extent,
    );
    for (i, (p, label)) in [(true, "with perception"), (false, "without perception")]
        .into_iter()
        .enumerate()
    {
        let pts = line(p);
        for &(x, y) in &pts {
            plot.dot(x, y, 3.5, PALETTE[i]);
        }
        plot.line(&Series {
            label: label.into(),
            points: pts,
            color: PALETTE[i].into(),
        });
    }
    vec![("sweep.csv", table), ("success_rates.svg", plot.render())]
}

fn predict_outputs(r: &PredictReport) -> Vec<(&'static str, String)> {
    let mut table = String::from("t,bearing_error,homogeneous_error,discrepancy\n");
    for i in 0..r.times.len() {
        table.push_str(&format!(
            "{},{},{},{}\n",
            r.times[i], r.bearing_error[i], r.homogeneous_error[i], r.discrepancy[i]
        ));
    }
    let log = |v: &[f64]| -> Vec<(f64, f64)> {
        r.times
            .iter()
            .zip(v)
            .filter(|(_, e)| **e > 0.0)
            .map(|(t, e)| (*t, e.log10()))
            .collect()
    };
    let series = [
        ("bearing model", log(&r.bearing_error)),
        ("homogeneous model", log(&r.homogeneous_error)),
        ("model discrepancy", log(&r.discrepancy)),
    ];
    let extent: Vec<_> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let mut plot = Plot::new(
        "Open-loop prediction error",
        "t (s)",
        "log10 image error",
        &extent,
    );
    for (i, (label, pts)) in series.into_iter().enumerate() {
        plot.line(&Series {
            label: label.into(),
            points: pts,
            color: PALETTE[i].into(),
        });
    }
    vec![
        ("predict.csv", table),
        ("prediction_error.svg", plot.render()),
    ]
}

/// Writes every artifact of `report` into `dir` and returns the paths in
/// write order.
pub fn emit(report: &ScenarioReport, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for r in &report.runs {
        let name = format!("{}.csv", r.name);
        let path = dir.join(&name);
        write_run_csv(&r.log, &path)?;
        written.push(path);
        entries.push(RunEntry {
            name: &r.name,
            csv: name,
            metrics: &r.metrics,
        });
    }

    let mut extra = Vec::new();
    if !report.runs.is_empty() {
        extra.extend(run_plots(&report.config, &report.runs));
    }
    if let Some(cells) = &report.sweep {
        extra.extend(sweep_outputs(cells));
    }
    if let Some(p) = &report.predict {
        extra.extend(predict_outputs(p));
    }
    for (name, text) in extra {
        let path = dir.join(name);
        write_file(&path, text.as_bytes())?;
        written.push(path);
    }

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        scenario: report.config.scenario,
        seed: report.config.seed,
        config: &report.config,
        runs: entries,
        sweep: report.sweep.as_deref(),
        predict: report.predict.as_ref(),
    };
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Short human-readable digest of a report, one line per run or cell.
pub fn digest(report: &ScenarioReport) -> String {
    let mut s = String::new();
    for r in &report.runs {
        let m = &r.metrics;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        s.push_str(&format!(
            "{:<12} {:<12} rms_d {:.3} m  alt_dev {:.3} m  margin {:.3}  final_d_err {}  final_img_err {}\n",
            r.name,
            m.outcome,
            m.rms_distance_error,
            m.max_altitude_deviation,
            m.min_border_margin,
            fmt(m.final_distance_error),
            fmt(m.final_image_error),
        ));
    }
    if let Some(cells) = &report.sweep {
        for c in cells {
            s.push_str(&format!(
                "speed {:>5.1}  perception {:<5}  success {:>3}/{:<3} ({:.0} %)\n",
                c.speed,
                c.perception,
                c.successes,
                c.trials,
                100.0 * c.rate
            ));
        }
    }
    if let Some(p) = &report.predict {
        s.push_str(&format!(
            "prediction  max error bearing {:.3e}  homogeneous {:.3e}  discrepancy {:.3e}\n",
            p.max_bearing_error, p.max_homogeneous_error, p.max_discrepancy
        ));
    }
    s
}
