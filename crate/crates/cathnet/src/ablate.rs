//! Ablation tables over one configuration axis.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use cathnet_core::prioritizer::{DetectionKpi, SegmentationKpi, Strategy, TaskWeighting};

use crate::config::RunConfig;
use crate::report::pct;
use crate::trainer::{train, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Strategy,
    TaskWeight,
    KpiMetric,
    BackboneScale,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Strategy => "strategy",
            Axis::TaskWeight => "task_weight",
            Axis::KpiMetric => "kpi_metric",
            Axis::BackboneScale => "backbone_scale",
        }
    }
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Axis::Strategy, Axis::TaskWeight, Axis::KpiMetric, Axis::BackboneScale]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown axis {s:?}; expected strategy, task_weight, kpi_metric or backbone_scale"))
    }
}

/// One row of an ablation table.
pub struct Variant {
    pub label: String,
    pub config: RunConfig,
}

/// The variants of `axis`, each derived from `base`.
pub fn variants(base: &RunConfig, axis: Axis) -> Vec<Variant> {
    let with = |label: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut config = base.clone();
        f(&mut config);
        Variant { label: label.into(), config }
    };
    match axis {
        Axis::Strategy => {
            let mut rows = vec![
                with("Soft Assignment", &|c| c.prioritization.strategy = Strategy::Soft),
                with("Hard Assignment (delta > 0.5)", &|c| {
                    c.prioritization.strategy = Strategy::HardThreshold;
                    c.prioritization.threshold_eta = 0.5;
                }),
            ];
            for rho in [0.3, 0.5, 0.7] {
                rows.push(with(&format!("{:.0}% Hard Samples", rho * 100.0), &|c| {
                    c.prioritization.strategy = Strategy::FixedFraction;
                    c.prioritization.retention_rho = rho;
                }));
            }
            rows.push(with("TopK Soft Assignment", &|c| c.prioritization.strategy = Strategy::TopkSoft));
            rows.push(with("TopK Hard Assignment", &|c| c.prioritization.strategy = Strategy::TopkHard));
            rows
        }
        Axis::TaskWeight => {
            let mut rows: Vec<Variant> =
                [(1.0, 1.0), (2.0, 1.0), (5.0, 1.0), (10.0, 1.0), (1.0, 2.0), (1.0, 5.0), (1.0, 10.0)]
                    .into_iter()
                    .map(|(kd, ks)| {
                        with(&format!("kappa_d=={kd}, kappa_s=={ks}"), &|c| {
                            c.prioritization.task_weighting = TaskWeighting::Fixed { kpi_d: kd, kpi_s: ks }
                        })
                    })
                    .collect();
            rows.push(with("Dynamic (1/kappa)", &|c| c.prioritization.task_weighting = TaskWeighting::Dynamic));
            rows
        }
        Axis::KpiMetric => [
            ("MAE", "IoU", DetectionKpi::Mae, SegmentationKpi::Iou),
            ("MAE", "Dice", DetectionKpi::Mae, SegmentationKpi::Dice),
            ("RMSE", "IoU", DetectionKpi::Rmse, SegmentationKpi::Iou),
            ("RMSE", "Dice", DetectionKpi::Rmse, SegmentationKpi::Dice),
            ("Focal Loss", "CE", DetectionKpi::FocalLoss, SegmentationKpi::CrossEntropy),
        ]
        .into_iter()
        .map(|(ld, ls, d, s)| {
            with(&format!("{ld} / {ls}"), &|c| {
                c.prioritization.kpi_metric_d = d;
                c.prioritization.kpi_metric_s = s;
            })
        })
        .collect(),
        Axis::BackboneScale => [(0.5, "x0.5"), (1.0, "x1"), (2.0, "x2")]
            .into_iter()
            .map(|(f, label)| {
                with(label, &|c| {
                    c.model.base_channels = ((base.model.base_channels as f64 * f).round() as usize).max(1);
                    c.model.latent_dim = ((base.model.latent_dim as f64 * f).round() as usize).max(1);
                })
            })
            .collect(),
    }
}

/// Scores of one variant across seeds; `Err` holds the failure message.
pub struct Row {
    pub label: String,
    pub per_seed: Result<Vec<(u64, f64, f64, f64)>, String>,
}

impl Row {
    fn means(&self) -> Option<(f64, f64, f64)> {
        let runs = self.per_seed.as_ref().ok()?;
        let n = runs.len() as f64;
        let m = |f: fn(&(u64, f64, f64, f64)) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Some((m(|r| r.1), m(|r| r.2), m(|r| r.3)))
    }
}

pub fn run_variant(v: &Variant, seeds: &[u64], out_root: &Path) -> Row {
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let mut cfg = v.config.clone();
        cfg.seed = seed;
        let slug: String = v.label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        cfg.output_dir = out_root.join(format!("{slug}_seed{seed}"));
        match train(cfg, None) {
            Ok(o) => per_seed.push((seed, o.report.ap, o.report.mean_j, o.report.mean_kpi)),
            Err(e) => {
                log::error!("ablation variant {:?} seed {seed} failed: {e}", v.label);
                return Row { label: v.label.clone(), per_seed: Err(e.to_string()) };
            }
        }
    }
    Row { label: v.label.clone(), per_seed: Ok(per_seed) }
}

/// Run every variant of `axis`, write `ablation_<axis>.csv` and
/// `ablation_<axis>.txt` into the base output directory, and return the
/// human-readable table.
pub fn ablate(base: &RunConfig, axis: Axis) -> Result<String, TrainError> {
    let out = base.output_dir.clone();
    fs::create_dir_all(&out).map_err(|source| TrainError::Io { path: out.clone(), source })?;
    let rows: Vec<Row> = variants(base, axis)
        .iter()
        .map(|v| run_variant(v, &base.ablation.seeds, &out.join(format!("ablation_{}", axis.name()))))
        .collect();
    let (csv, table) = render(axis, &rows);
    let write = |name: String, body: &str| {
        let p = out.join(name);
        fs::write(&p, body).map_err(|source| TrainError::Io { path: p, source })
    };
    write(format!("ablation_{}.csv", axis.name()), &csv)?;
    write(format!("ablation_{}.txt", axis.name()), &table)?;
    Ok(table)
}

/// CSV and aligned text renderings of the table.
pub fn render(axis: Axis, rows: &[Row]) -> (String, String) {
    let mut csv = csv::Writer::from_writer(Vec::new());
    let header =
        ["variant", "ap", "mean_j", "mean_kpi", "status", "seeds", "per_seed_ap", "per_seed_j", "per_seed_kpi"];
    csv.write_record(header).expect("in-memory write");
    let mut table = format!(
        "Ablation over {}\n{:<32} {:>8} {:>8} {:>9}  per-seed mean KPI\n",
        axis.name(),
        "variant",
        "AP",
        "mean J",
        "mean KPI"
    );
    for r in rows {
        let record: Vec<String> = match (&r.per_seed, r.means()) {
            (Ok(runs), Some((ap, j, kpi))) => {
                let join = |f: fn(&(u64, f64, f64, f64)) -> f64| {
                    runs.iter().map(|x| format!("{:.2}", pct(f(x)))).collect::<Vec<_>>().join(";")
                };
                let _ = writeln!(
                    table,
                    "{:<32} {:>8.2} {:>8.2} {:>9.2}  {}",
                    r.label,
                    pct(ap),
                    pct(j),
                    pct(kpi),
                    join(|x| x.3)
                );
                vec![
                    r.label.clone(),
                    format!("{:.2}", pct(ap)),
                    format!("{:.2}", pct(j)),
                    format!("{:.2}", pct(kpi)),
                    "ok".into(),
                    runs.iter().map(|x| x.0.to_string()).collect::<Vec<_>>().join(";"),
                    join(|x| x.1),
                    join(|x| x.2),
                    join(|x| x.3),
                ]
            }
            (per_seed, _) => {
                let msg = per_seed.as_ref().err().cloned().unwrap_or_else(|| "no runs".into());
                let _ = writeln!(table, "{:<32} {:>8} {:>8} {:>9}  {}", r.label, "failed", "-", "-", msg);
                let mut rec = vec![String::new(); header.len()];
                rec[0] = r.label.clone();
                rec[4] = format!("failed: {msg}");
                rec
            }
        };
        csv.write_record(&record).expect("in-memory write");
    }
    let csv = String::from_utf8(csv.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    (csv, table)
}
