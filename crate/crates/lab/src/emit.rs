//! Output artifacts: aggregated CSV, SVG curve plots with a +/- one
//! standard deviation band, and the retained raw per-seed series.
//!
//! Aggregation is a deterministic reduce over results sorted by
//! (sweep index, seed index); the standard deviation is the population
//! form (`n` in the denominator), so a single replication reports 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::runner::RunResult;
use crate::{HarnessError, Result};

pub const CSV_HEADER: &str = "t,metric,mean,std,n,algorithm,eta,env,sweep_key,sweep_value";

/// Metric names in output order.
pub const METRICS: [&str; 5] = ["value_error", "w_norm", "theta_norm", "rbar", "drift"];

fn metric_value(row: &crate::runner::RunRow, metric: &str) -> f64 {
    match metric {
        "value_error" => row.value_error,
        "w_norm" => row.w_norm,
        "theta_norm" => row.theta_norm,
        "rbar" => row.rbar,
        "drift" => row.drift,
        _ => f64::NAN,
    }
}

fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x}")
    }
}

/// One aggregated record (a parsed CSV line).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: u64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: u64,
    pub algorithm: String,
    pub eta: f64,
    pub env: String,
    pub sweep_key: String,
    pub sweep_value: String,
}

/// Aggregate results into CSV records: for every (sweep point, metric,
/// logged step), the mean and population standard deviation over the seeds
/// that have a row at that step.
pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    // group by sweep point, preserving numeric order
    let mut by_sweep: BTreeMap<usize, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        by_sweep.entry(r.sweep_index).or_default().push(r);
    }
    let mut out = Vec::new();
    for (_, mut group) in by_sweep {
        group.sort_by_key(|r| r.seed_index);
        let proto = group[0];
        for metric in METRICS {
            // collect values per time step across seeds
            let mut per_t: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in &group {
                for row in &r.rows {
                    per_t.entry(row.t).or_default().push(metric_value(row, metric));
                }
            }
            for (t, values) in per_t {
                let n = values.len() as u64;
                let mean = values.iter().sum::<f64>() / n as f64;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / n as f64;
                out.push(AggregateRow {
                    t,
                    metric: metric.to_string(),
                    mean,
                    std: var.sqrt(),
                    n,
                    algorithm: proto.algorithm.clone(),
                    eta: proto.eta,
                    env: proto.env.clone(),
                    sweep_key: proto.sweep_key.clone(),
                    sweep_value: proto.sweep_value.clone(),
                });
            }
        }
    }
    out
}

/// Render aggregated records with the fixed schema.
pub fn to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.metric,
            format_float(r.mean),
            format_float(r.std),
            r.n,
            r.algorithm,
            format_float(r.eta),
            r.env,
            r.sweep_key,
            r.sweep_value
        );
    }
    out
}

fn parse_float(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        other => other
            .parse()
            .map_err(|e| HarnessError::Runtime(format!("bad float {other:?}: {e}"))),
    }
}

/// Parse CSV produced by [`to_csv`] back into records.
pub fn from_csv(text: &str) -> Result<Vec<AggregateRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Runtime("empty CSV".into()))?;
    if header != CSV_HEADER {
        return Err(HarnessError::Runtime(format!("unexpected CSV header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 10 {
            return Err(HarnessError::Runtime(format!(
                "line {}: expected 10 fields, got {}",
                i + 2,
                parts.len()
            )));
        }
        out.push(AggregateRow {
            t: parts[0]
                .parse()
                .map_err(|e| HarnessError::Runtime(format!("bad t: {e}")))?,
            metric: parts[1].to_string(),
            mean: parse_float(parts[2])?,
            std: parse_float(parts[3])?,
            n: parts[4]
                .parse()
                .map_err(|e| HarnessError::Runtime(format!("bad n: {e}")))?,
            algorithm: parts[5].to_string(),
            eta: parse_float(parts[6])?,
            env: parts[7].to_string(),
            sweep_key: parts[8].to_string(),
            sweep_value: parts[9].to_string(),
        });
    }
    Ok(out)
}

/// Raw series of one run (`t,value_error,w_norm,theta_norm,rbar,drift`).
pub fn raw_to_csv(result: &RunResult) -> String {
    let mut out = String::from("t,value_error,w_norm,theta_norm,rbar,drift\n");
    for row in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.t,
            format_float(row.value_error),
            format_float(row.w_norm),
            format_float(row.theta_norm),
            format_float(row.rbar),
            format_float(row.drift)
        );
    }
    let _ = writeln!(out, "# termination={} t={}", result.termination.name(), result.termination_t);
    out
}

/// Parse a raw per-run CSV back into rows (the bundled reader).
pub fn raw_from_csv(text: &str) -> Result<Vec<crate::runner::RunRow>> {
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(HarnessError::Runtime("malformed raw row".into()));
        }
        rows.push(crate::runner::RunRow {
            t: parts[0]
                .parse()
                .map_err(|e| HarnessError::Runtime(format!("bad t: {e}")))?,
            value_error: parse_float(parts[1])?,
            w_norm: parse_float(parts[2])?,
            theta_norm: parse_float(parts[3])?,
            rbar: parse_float(parts[4])?,
            drift: parse_float(parts[5])?,
        });
    }
    Ok(rows)
}

/// File stem shared by all artifacts of one config.
pub fn artifact_stem(results: &[RunResult]) -> String {
    let proto = &results[0];
    format!("{}_{}_{}", proto.env, proto.algorithm, proto.fingerprint)
}

/// Keep only the selected metrics (empty selection keeps everything).
pub fn filter_metrics(rows: Vec<AggregateRow>, metrics: &[String]) -> Vec<AggregateRow> {
    if metrics.is_empty() {
        return rows;
    }
    rows.into_iter()
        .filter(|r| metrics.iter().any(|m| m == &r.metric))
        .collect()
}

/// Write the aggregated CSV, the SVG plot and the raw per-seed series under
/// `out_dir`. Returns the CSV path.
pub fn write_artifacts(
    results: &[RunResult],
    out_dir: &Path,
    metrics: &[String],
) -> Result<PathBuf> {
    if results.is_empty() {
        return Err(HarnessError::Runtime("no results to emit".into()));
    }
    fs::create_dir_all(out_dir)?;
    let stem = artifact_stem(results);
    let rows = filter_metrics(aggregate(results), metrics);
    let csv_path = out_dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, to_csv(&rows))?;
    let svg_path = out_dir.join(format!("{stem}.svg"));
    fs::write(&svg_path, to_svg(&rows, "value_error"))?;

    let raw_dir = out_dir.join("raw").join(&results[0].fingerprint);
    fs::create_dir_all(&raw_dir)?;
    for r in results {
        let path = raw_dir.join(format!("run_{}_{}.csv", r.sweep_index, r.seed_index));
        fs::write(path, raw_to_csv(r))?;
    }
    Ok(csv_path)
}

/// Re-aggregate previously written raw series (used by `lab emit`).
pub fn reaggregate_raw_dir(dir: &Path) -> Result<Vec<(String, Vec<crate::runner::RunRow>)>> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
        .collect();
    entries.sort();
    for path in entries {
        let text = fs::read_to_string(&path)?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("run")
            .to_string();
        out.push((name, raw_from_csv(&text)?));
    }
    Ok(out)
}

/// Minimal deterministic SVG line plot: one curve per sweep value for the
/// chosen metric, with a shaded band of one standard deviation, log-scale
/// ordinate when the data spans more than three decades.
pub fn to_svg(rows: &[AggregateRow], metric: &str) -> String {
    let (width, height, margin) = (720.0, 420.0, 50.0);
    let mut sweeps: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        if !sweeps.contains(&r.sweep_value) {
            sweeps.push(r.sweep_value.clone());
        }
    }
    let series: Vec<(String, Vec<&AggregateRow>)> = sweeps
        .iter()
        .map(|sv| {
            (
                sv.clone(),
                rows.iter()
                    .filter(|r| r.metric == metric && &r.sweep_value == sv)
                    .collect(),
            )
        })
        .collect();

    let mut t_max: f64 = 1.0;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in &series {
        for p in pts {
            if !p.mean.is_finite() {
                continue;
            }
            t_max = t_max.max(p.t as f64);
            y_min = y_min.min(p.mean);
            y_max = y_max.max(p.mean + p.std);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    let log_scale = y_min > 0.0 && y_max / y_min.max(1e-300) > 1e3;
    let (lo, hi) = if log_scale {
        (y_min.log10(), y_max.log10())
    } else {
        (y_min.min(0.0), y_max.max(1e-12))
    };
    let span = (hi - lo).max(1e-12);
    let sx = |t: f64| margin + (width - 2.0 * margin) * t / t_max;
    let sy = |y: f64| {
        let v = if log_scale { y.max(1e-300).log10() } else { y };
        height - margin - (height - 2.0 * margin) * ((v - lo) / span).clamp(0.0, 1.0)
    };

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"{width}\" height=\"{height}\" \
         fill=\"white\"/>\n"
    );
    let _ = write!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">t</text>\n\
         <text x=\"8\" y=\"{}\" font-size=\"12\">{metric}{}</text>\n",
        width - margin + 8.0,
        height - margin + 4.0,
        margin - 8.0,
        if log_scale { " (log10)" } else { "" }
    );
    for (idx, (sv, pts)) in series.iter().enumerate() {
        let color = palette[idx % palette.len()];
        let finite: Vec<&&AggregateRow> = pts.iter().filter(|p| p.mean.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        // band polygon: mean + std forward, mean - std backward
        let mut band = String::new();
        for p in &finite {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.t as f64), sy(p.mean + p.std));
        }
        for p in finite.iter().rev() {
            let lo_v = if log_scale {
                (p.mean - p.std).max(p.mean * 1e-3)
            } else {
                p.mean - p.std
            };
            let _ = write!(band, "{:.2},{:.2} ", sx(p.t as f64), sy(lo_v));
        }
        let _ = write!(
            svg,
            "<polygon points=\"{}\" fill=\"{color}\" opacity=\"0.15\"/>\n",
            band.trim_end()
        );
        let mut line = String::new();
        for p in &finite {
            let _ = write!(line, "{:.2},{:.2} ", sx(p.t as f64), sy(p.mean));
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            line.trim_end()
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}={}</text>\n",
            width - margin - 120.0,
            margin + 16.0 * (idx as f64 + 1.0),
            finite[0].sweep_key,
            sv
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{RunRow, Termination};

    fn fake_result(seed: u64, values: &[f64]) -> RunResult {
        RunResult {
            env: "kolter".into(),
            algorithm: "alg1_q_eval".into(),
            fingerprint: "deadbeefdeadbeef".into(),
            sweep_index: 0,
            sweep_key: "eta".into(),
            sweep_value: "0.01".into(),
            eta: 0.01,
            seed_index: seed,
            rows: values
                .iter()
                .enumerate()
                .map(|(t, &v)| RunRow {
                    t: t as u64,
                    value_error: v,
                    w_norm: v * 2.0,
                    theta_norm: v * 3.0,
                    rbar: 0.0,
                    drift: 0.1,
                })
                .collect(),
            final_w: vec![0.0],
            final_rbar: 0.0,
            termination: Termination::Completed,
            termination_t: values.len() as u64 - 1,
            max_value_error: values.iter().cloned().fold(0.0, f64::max),
            max_drift_violation: f64::NEG_INFINITY,
            crossings: vec![],
        }
    }

    #[test]
    fn single_run_has_zero_std() {
        let rows = aggregate(&[fake_result(0, &[1.0, 2.0])]);
        assert!(rows.iter().all(|r| r.std == 0.0 && r.n == 1));
    }

    #[test]
    fn mean_and_std_over_replications() {
        let rows = aggregate(&[fake_result(0, &[1.0]), fake_result(1, &[3.0])]);
        let value = rows
            .iter()
            .find(|r| r.metric == "value_error" && r.t == 0)
            .unwrap();
        assert_eq!(value.n, 2);
        assert!((value.mean - 2.0).abs() < 1e-15);
        assert!((value.std - 1.0).abs() < 1e-15); // population std
    }

    #[test]
    fn csv_round_trip() {
        let rows = aggregate(&[fake_result(0, &[1.0, 2.0]), fake_result(1, &[2.0, 4.0])]);
        let text = to_csv(&rows);
        assert!(text.starts_with(CSV_HEADER));
        let parsed = from_csv(&text).unwrap();
        assert_eq!(parsed.len(), rows.len());
        for (a, b) in rows.iter().zip(&parsed) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.metric, b.metric);
            assert!((a.mean - b.mean).abs() < 1e-15);
            assert!((a.std - b.std).abs() < 1e-15);
        }
    }

    #[test]
    fn raw_round_trip() {
        let r = fake_result(0, &[1.0, 2.5, 0.5]);
        let text = raw_to_csv(&r);
        let rows = raw_from_csv(&text).unwrap();
        assert_eq!(rows, r.rows);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let rows = aggregate(&[fake_result(0, &[1.0, 10.0, 100.0, 10000.0])]);
        let svg = to_svg(&rows, "value_error");
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("log10")); // spans > 3 decades
    }
}
