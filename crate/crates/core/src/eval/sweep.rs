//! Balancing-level sweep: one averaged report row per level.

use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fairness::{composite, MetricWeights};
use super::FairnessReport;
use crate::conditioning::BalancingLevel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: u8,
    pub seed_count: usize,
    pub density: f64,
    pub correlation: f64,
    pub dcr_distance: f64,
    pub dcr_closeness: f64,
    pub auc: f64,
    pub dpr: f64,
    pub eor: f64,
    pub composite: f64,
}

pub const SWEEP_HEADER: &str = "level,seed_count,density,correlation,dcr_distance,dcr_closeness,auc,dpr,eor,composite";

/// Runs `run(level, seed)` for every pair on `jobs` threads and averages
/// over seeds. Errors carry the level that produced them.
pub fn tradeoff_sweep<F>(
    levels: &[BalancingLevel],
    seeds: &[u64],
    weights: &MetricWeights,
    jobs: usize,
    run: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(BalancingLevel, u64) -> Result<FairnessReport> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let tasks: Vec<(BalancingLevel, u64)> = levels
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let reports: Vec<Result<FairnessReport>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(l, s)| {
                run(l, s).map_err(|e| Error::AtLevel {
                    level: l.get(),
                    source: Box::new(e),
                })
            })
            .collect()
    });
    let reports: Vec<FairnessReport> = reports.into_iter().collect::<Result<_>>()?;
    Ok(levels
        .iter()
        .zip(reports.chunks(seeds.len()))
        .map(|(l, chunk)| {
            let n = chunk.len() as f64;
            let mean = |f: fn(&FairnessReport) -> f64| chunk.iter().map(f).sum::<f64>() / n;
            let (auc, dpr, eor) = (mean(|r| r.auc), mean(|r| r.dpr), mean(|r| r.eor));
            SweepRow {
                level: l.get(),
                seed_count: chunk.len(),
                density: mean(|r| r.density),
                correlation: mean(|r| r.correlation),
                dcr_distance: mean(|r| r.dcr_distance),
                dcr_closeness: mean(|r| r.dcr_closeness),
                auc,
                dpr,
                eor,
                composite: composite(auc, dpr, eor, weights),
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.level,
            r.seed_count,
            r.density,
            r.correlation,
            r.dcr_distance,
            r.dcr_closeness,
            r.auc,
            r.dpr,
            r.eor,
            r.composite
        )
        .unwrap();
    }
    s
}

/// Line chart of AUC, DPR, EOR and the composite score against level.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let x_of = |level: f64| pad + (w - 2.0 * pad) * level / 10.0;
    let y_of = |v: f64| h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{pad} {top} V{bottom} H{right}" fill="none" stroke="black"/>"#,
        top = pad,
        bottom = h - pad,
        right = w - pad
    )
    .unwrap();
    for level in 0..=10 {
        let x = x_of(level as f64);
        writeln!(s, r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{level}</text>"#, h - pad + 16.0).unwrap();
    }
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{tick}</text>"#, pad - 6.0, y + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">balancing level</text>"#, w / 2.0, h - 12.0).unwrap();
    let series: [(&str, &str, fn(&SweepRow) -> f64); 4] = [
        ("auc", "#1f77b4", |r| r.auc),
        ("dpr", "#d62728", |r| r.dpr),
        ("eor", "#2ca02c", |r| r.eor),
        ("composite", "#000000", |r| r.composite),
    ];
    for (i, (name, color, get)) in series.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", x_of(f64::from(r.level)), y_of(get(r))))
            .collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = pad + 14.0 * i as f64;
        writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{color}">{name}</text>"#,
            w - pad - 60.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
