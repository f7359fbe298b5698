//! Report data model and serialization: per-item metric rows, per-type and
//! overall aggregates, and the documented CSV layouts (2-decimal fixed point;
//! JSON keeps full precision).

use crate::bench::EditType;
use crate::error::{Error, Result};
use crate::five_acc::AccuracyReport;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// All metrics the evaluator can produce, in documented CSV column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    StructureDistance,
    Psnr,
    /// Perceptual feature distance outside the mask (the LPIPS slot; the
    /// backbone is whatever feature provider is configured).
    Lpips,
    Mse,
    Ssim,
    Clipsim,
    ClipsimEdit,
    Niqe,
    MotionFidelity,
    TimePerFrame,
}

impl MetricKind {
    pub const ALL: [MetricKind; 10] = [
        MetricKind::StructureDistance,
        MetricKind::Psnr,
        MetricKind::Lpips,
        MetricKind::Mse,
        MetricKind::Ssim,
        MetricKind::Clipsim,
        MetricKind::ClipsimEdit,
        MetricKind::Niqe,
        MetricKind::MotionFidelity,
        MetricKind::TimePerFrame,
    ];

    /// Everything except wall-clock runtime, which is opt-in because it is
    /// the one non-deterministic output.
    pub fn default_set() -> Vec<MetricKind> {
        MetricKind::ALL
            .into_iter()
            .filter(|m| *m != MetricKind::TimePerFrame)
            .collect()
    }

    pub fn id(&self) -> &'static str {
        match self {
            MetricKind::StructureDistance => "structure_distance",
            MetricKind::Psnr => "psnr",
            MetricKind::Lpips => "lpips",
            MetricKind::Mse => "mse",
            MetricKind::Ssim => "ssim",
            MetricKind::Clipsim => "clipsim",
            MetricKind::ClipsimEdit => "clipsim_edit",
            MetricKind::Niqe => "niqe",
            MetricKind::MotionFidelity => "motion_fidelity",
            MetricKind::TimePerFrame => "time_per_frame",
        }
    }

    pub fn parse(text: &str) -> Result<MetricKind> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.id() == text)
            .ok_or_else(|| Error::Config(format!("unknown metric {text:?}")))
    }

    pub fn parse_list(text: &str) -> Result<Vec<MetricKind>> {
        if text == "all" {
            return Ok(MetricKind::ALL.to_vec());
        }
        if text == "default" {
            return Ok(MetricKind::default_set());
        }
        text.split(',')
            .map(|t| MetricKind::parse(t.trim()))
            .collect()
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// A computed metric or the reason it is missing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MetricValue {
    Ok { value: f64 },
    Unavailable { reason: String },
}

impl MetricValue {
    pub fn ok(&self) -> Option<f64> {
        match self {
            MetricValue::Ok { value } => Some(*value),
            MetricValue::Unavailable { .. } => None,
        }
    }
}

/// Metrics of one evaluated edit record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub edit_id: String,
    pub edit_type: EditType,
    pub metrics: BTreeMap<MetricKind, MetricValue>,
}

/// Aggregated metric table plus run identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub method: String,
    pub config_hash: String,
    pub provider_id: String,
    pub stride: usize,
    pub requested: Vec<MetricKind>,
    pub items: Vec<ItemMetrics>,
    pub per_type: BTreeMap<EditType, BTreeMap<MetricKind, MetricValue>>,
    pub overall: BTreeMap<MetricKind, MetricValue>,
    /// Notes such as a fitted-on-the-fly NIQE model.
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Mean of available per-item values; unavailable if none are.
fn mean_metric(values: &[&MetricValue]) -> MetricValue {
    let present: Vec<f64> = values.iter().filter_map(|v| v.ok()).collect();
    if present.is_empty() {
        let reason = values
            .iter()
            .find_map(|v| match v {
                MetricValue::Unavailable { reason } => Some(reason.clone()),
                MetricValue::Ok { .. } => None,
            })
            .unwrap_or_else(|| "no items".into());
        return MetricValue::Unavailable { reason };
    }
    MetricValue::Ok {
        value: present.iter().sum::<f64>() / present.len() as f64,
    }
}

/// Fold per-item rows into per-type means and an unweighted overall mean
/// across the edit types present.
pub fn aggregate_items(
    items: &[ItemMetrics],
    requested: &[MetricKind],
) -> (
    BTreeMap<EditType, BTreeMap<MetricKind, MetricValue>>,
    BTreeMap<MetricKind, MetricValue>,
) {
    let mut by_type: BTreeMap<EditType, Vec<&ItemMetrics>> = BTreeMap::new();
    for item in items {
        by_type.entry(item.edit_type).or_default().push(item);
    }
    let mut per_type = BTreeMap::new();
    for (ty, rows) in &by_type {
        let mut table = BTreeMap::new();
        for metric in requested {
            let vals: Vec<&MetricValue> = rows
                .iter()
                .filter_map(|r| r.metrics.get(metric))
                .collect();
            table.insert(*metric, mean_metric(&vals));
        }
        per_type.insert(*ty, table);
    }
    let mut overall = BTreeMap::new();
    for metric in requested {
        let vals: Vec<&MetricValue> = per_type
            .values()
            .filter_map(|t| t.get(metric))
            .collect();
        overall.insert(*metric, mean_metric(&vals));
    }
    (per_type, overall)
}

fn push_metric_cells(
    line: &mut String,
    table: &BTreeMap<MetricKind, MetricValue>,
    requested: &[MetricKind],
) {
    for metric in requested {
        match table.get(metric).and_then(|v| v.ok()) {
            Some(v) => {
                let _ = write!(line, ",{v:.2}");
            }
            None => line.push(','),
        }
    }
}

impl RunReport {
    /// CSV with one row per edit type plus an `overall` row. Header:
    /// `method,edit_type,n_items,<metric columns in documented order>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,edit_type,n_items");
        for metric in &self.requested {
            out.push(',');
            out.push_str(metric.id());
        }
        out.push('\n');
        for (ty, table) in &self.per_type {
            let n = self.items.iter().filter(|i| i.edit_type == *ty).count();
            let mut line = format!("{},{},{}", self.method, ty.id(), n);
            push_metric_cells(&mut line, table, &self.requested);
            out.push_str(&line);
            out.push('\n');
        }
        let mut line = format!("{},overall,{}", self.method, self.items.len());
        push_metric_cells(&mut line, &self.overall, &self.requested);
        out.push_str(&line);
        out.push('\n');
        out
    }
}

/// CSV mirroring the FiVE-Acc table: per-type rows then overall, columns
/// `method,edit_type,n_items,five_yn,five_mc,five_union,five_inter,five_acc`.
pub fn accuracy_csv(method: &str, report: &AccuracyReport) -> String {
    let mut out = String::from("method,edit_type,n_items,five_yn,five_mc,five_union,five_inter,five_acc\n");
    for (ty, row) in &report.per_type {
        let n = report
            .items
            .iter()
            .filter(|i| i.edit_type == *ty && i.judgment.is_some())
            .count();
        let _ = writeln!(
            out,
            "{method},{},{n},{:.2},{:.2},{:.2},{:.2},{:.2}",
            ty.id(),
            row.yn,
            row.mc,
            row.union,
            row.inter,
            row.five_acc
        );
    }
    let _ = writeln!(
        out,
        "{method},overall,{},{:.2},{:.2},{:.2},{:.2},{:.2}",
        report.valid_items,
        report.overall.yn,
        report.overall.mc,
        report.overall.union,
        report.overall.inter,
        report.overall.five_acc
    );
    out
}
