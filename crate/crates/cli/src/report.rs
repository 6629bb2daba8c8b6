//! CSV, JSON and SVG report writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::pipeline::RunRecord;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Every JSON report carries the resolved config and its hash.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub command: &'a str,
    pub config_sha256: String,
    pub config: &'a ExperimentConfig,
    pub result: T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig, result: T) -> Self {
        Self {
            command,
            config_sha256: config_hash(config),
            config,
            result,
        }
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: String,
    pub detector: String,
    /// A run seed, or `mean` / `std` for aggregate rows.
    pub seed: String,
    pub fpr95: f64,
    pub auroc: f64,
    pub id_acc: f64,
    pub ece: f64,
}

pub fn rows_for(record: &RunRecord) -> Vec<MetricRow> {
    record
        .metrics
        .detectors
        .iter()
        .map(|d| MetricRow {
            method: record.method.clone(),
            detector: d.detector.clone(),
            seed: record.seed.to_string(),
            fpr95: d.fpr95,
            auroc: d.auroc,
            id_acc: record.metrics.id_acc,
            ece: record.metrics.ece,
        })
        .collect()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean` and `std` rows per (method, detector), in first-seen order.
pub fn aggregate(rows: &[MetricRow]) -> Vec<MetricRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.detector.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::with_capacity(order.len() * 2);
    for key in order {
        let g = &groups[&key];
        let col = |f: fn(&MetricRow) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (fm, fs) = col(|r| r.fpr95);
        let (am, as_) = col(|r| r.auroc);
        let (im, is) = col(|r| r.id_acc);
        let (em, es) = col(|r| r.ece);
        for (seed, f, a, i, e) in [("mean", fm, am, im, em), ("std", fs, as_, is, es)] {
            out.push(MetricRow {
                method: key.0.clone(),
                detector: key.1.clone(),
                seed: seed.into(),
                fpr95: f,
                auroc: a,
                id_acc: i,
                ece: e,
            });
        }
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Grouped bar chart of mean FPR95: one group per detector, one bar per method.
pub fn bar_chart_svg(aggregates: &[MetricRow]) -> String {
    let means: Vec<&MetricRow> = aggregates.iter().filter(|r| r.seed == "mean").collect();
    let mut methods: Vec<&str> = Vec::new();
    let mut detectors: Vec<&str> = Vec::new();
    for r in &means {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !detectors.contains(&r.detector.as_str()) {
            detectors.push(&r.detector);
        }
    }
    const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];
    let (bar_w, gap, plot_h, left, top) = (18.0, 24.0, 200.0, 50.0, 30.0);
    let group_w = bar_w * methods.len() as f64 + gap;
    let width = left + group_w * detectors.len() as f64 + 20.0;
    let height = top + plot_h + 60.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    s += &format!("<text x=\"{left}\" y=\"15\">mean FPR95 (lower is better)</text>\n");
    s += &format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + plot_h,
        width - 10.0,
        top + plot_h
    );
    for tick in [0.0, 0.5, 1.0] {
        let y = top + plot_h * (1.0 - tick);
        s += &format!("<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{tick}</text>\n", left - 4.0);
    }
    for (gi, det) in detectors.iter().enumerate() {
        let gx = left + gap / 2.0 + group_w * gi as f64;
        for (mi, method) in methods.iter().enumerate() {
            if let Some(r) = means.iter().find(|r| r.method == *method && r.detector == *det) {
                let h = plot_h * r.fpr95.clamp(0.0, 1.0);
                s += &format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{bar_w}\" height=\"{h}\" fill=\"{}\"/>\n",
                    gx + bar_w * mi as f64,
                    top + plot_h - h,
                    PALETTE[mi % PALETTE.len()]
                );
            }
        }
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{det}</text>\n",
            gx + bar_w * methods.len() as f64 / 2.0,
            top + plot_h + 14.0
        );
    }
    for (mi, method) in methods.iter().enumerate() {
        let y = top + plot_h + 32.0;
        let x = left + 90.0 * mi as f64;
        s += &format!(
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{method}</text>\n",
            y - 9.0,
            PALETTE[mi % PALETTE.len()],
            x + 14.0,
            y
        );
    }
    s += "</svg>\n";
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: &str, fpr: f64) -> MetricRow {
        MetricRow {
            method: method.into(),
            detector: "glmcm".into(),
            seed: seed.into(),
            fpr95: fpr,
            auroc: 0.5,
            id_acc: 0.9,
            ece: 0.1,
        }
    }

    #[test]
    fn single_seed_has_zero_std() {
        let agg = aggregate(&[row("sct", "0", 0.3)]);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].fpr95, 0.3);
        assert_eq!(agg[1].seed, "std");
        assert_eq!(agg[1].fpr95, 0.0);
        assert_eq!(agg[1].ece, 0.0);
    }

    #[test]
    fn two_methods_give_two_rows_each() {
        let rows = [row("a", "0", 0.2), row("a", "1", 0.4), row("b", "0", 0.1), row("b", "1", 0.1)];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 4);
        assert!((agg[0].fpr95 - 0.3).abs() < 1e-15);
        assert!((agg[1].fpr95 - 0.02f64.sqrt()).abs() < 1e-15);
        assert!(bar_chart_svg(&agg).starts_with("<svg"));
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
