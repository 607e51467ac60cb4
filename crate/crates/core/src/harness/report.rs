use std::fmt::Write as _;
use std::path::Path;

use super::{Cell, Mode};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};

pub const METRIC_COLUMNS: [&str; 8] = ["volume", "views", "steps", "noise", "mode", "slice", "psnr", "ssim"];

/// Per-slice rows followed by a `mean` row.
pub(crate) fn metric_rows(cell: &Cell, rep: &MetricReport) -> Vec<Vec<String>> {
    let head = [
        cell.volume.to_string(),
        cell.views.to_string(),
        cell.steps.to_string(),
        cell.noise.to_string(),
        cell.mode.name().to_string(),
    ];
    let row = |slice: String, p: f64, s: f64| {
        let mut r = head.to_vec();
        r.extend([slice, format!("{p:.6}"), format!("{s:.6}")]);
        r
    };
    let mut out: Vec<Vec<String>> = rep
        .psnr
        .iter()
        .zip(&rep.ssim)
        .enumerate()
        .map(|(k, (&p, &s))| row(k.to_string(), p, s))
        .collect();
    out.push(row("mean".into(), rep.mean_psnr(), rep.mean_ssim()));
    out
}

/// Volume-averaged scores of one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeScore {
    pub psnr: f64,
    pub ssim: f64,
    pub volumes: usize,
}

/// One (noise, steps, views) line of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub noise: f64,
    pub steps: usize,
    pub views: usize,
    pub unimodal: Option<ModeScore>,
    pub crossmodal: Option<ModeScore>,
    pub failed: usize,
}

fn round_to(x: f64, precision: usize) -> f64 {
    let k = 10f64.powi(precision as i32);
    (x * k).round() / k
}

impl ReportRow {
    /// Cross minus uni of the values as printed at `precision`.
    pub fn delta(&self, precision: usize) -> Option<(f64, f64)> {
        let (u, c) = (self.unimodal?, self.crossmodal?);
        Some((
            round_to(round_to(c.psnr, precision) - round_to(u.psnr, precision), precision),
            round_to(round_to(c.ssim, precision) - round_to(u.ssim, precision), precision),
        ))
    }

    fn note(&self) -> String {
        let mut parts = Vec::new();
        if self.unimodal.is_none() {
            parts.push("unimodal missing".to_string());
        }
        if self.crossmodal.is_none() {
            parts.push("crossmodal missing".to_string());
        }
        if self.failed > 0 {
            parts.push(format!("{} failed", self.failed));
        }
        parts.join("; ")
    }

    fn cells(&self, p: usize) -> Vec<String> {
        let score = |s: Option<ModeScore>, f: fn(&ModeScore) -> f64| s.map_or("-".to_string(), |s| format!("{:.p$}", f(&s)));
        let delta = self.delta(p);
        vec![
            self.noise.to_string(),
            self.steps.to_string(),
            self.views.to_string(),
            score(self.unimodal, |s| s.psnr),
            score(self.crossmodal, |s| s.psnr),
            delta.map_or("-".into(), |d| format!("{:+.p$}", d.0)),
            score(self.unimodal, |s| s.ssim),
            score(self.crossmodal, |s| s.ssim),
            delta.map_or("-".into(), |d| format!("{:+.p$}", d.1)),
            self.note(),
        ]
    }
}

const TABLE_COLUMNS: [&str; 10] = [
    "noise",
    "steps",
    "views",
    "psnr_unimodal",
    "psnr_crossmodal",
    "delta_psnr",
    "ssim_unimodal",
    "ssim_crossmodal",
    "delta_ssim",
    "note",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    /// Averages the `mean` rows of a metrics file over volumes.
    pub fn from_metric_rows(rows: &[csv::StringRecord], failed: &[Cell], path: &Path) -> Result<Self> {
        struct Acc {
            key: (f64, usize, usize),
            uni: Vec<(f64, f64)>,
            cross: Vec<(f64, f64)>,
            failed: usize,
        }
        let bad = |r: &csv::StringRecord| Error::format(path, format!("malformed metrics row `{}`", r.iter().collect::<Vec<_>>().join(",")));
        let mut accs: Vec<Acc> = Vec::new();
        fn slot(accs: &mut Vec<Acc>, key: (f64, usize, usize)) -> usize {
            match accs.iter().position(|a| a.key == key) {
                Some(i) => i,
                None => {
                    accs.push(Acc {
                        key,
                        uni: Vec::new(),
                        cross: Vec::new(),
                        failed: 0,
                    });
                    accs.len() - 1
                }
            }
        }
        let mut entries = Vec::new();
        for r in rows {
            if r.len() != METRIC_COLUMNS.len() {
                return Err(bad(r));
            }
            if &r[5] != "mean" {
                continue;
            }
            let key = (
                r[3].parse::<f64>().map_err(|_| bad(r))?,
                r[2].parse::<usize>().map_err(|_| bad(r))?,
                r[1].parse::<usize>().map_err(|_| bad(r))?,
            );
            let mode = Mode::parse(&r[4]).ok_or_else(|| bad(r))?;
            let p: f64 = r[6].parse().map_err(|_| bad(r))?;
            let s: f64 = r[7].parse().map_err(|_| bad(r))?;
            entries.push((key, mode, p, s));
        }
        for (key, mode, p, s) in entries {
            let i = slot(&mut accs, key);
            match mode {
                Mode::Unimodal => accs[i].uni.push((p, s)),
                Mode::Crossmodal => accs[i].cross.push((p, s)),
            }
        }
        for c in failed {
            let i = slot(&mut accs, (c.noise, c.steps, c.views));
            accs[i].failed += 1;
        }
        let score = |v: &[(f64, f64)]| {
            (!v.is_empty()).then(|| ModeScore {
                psnr: metrics::mean(&v.iter().map(|x| x.0).collect::<Vec<_>>()),
                ssim: metrics::mean(&v.iter().map(|x| x.1).collect::<Vec<_>>()),
                volumes: v.len(),
            })
        };
        let mut rows: Vec<ReportRow> = accs
            .iter()
            .map(|a| ReportRow {
                noise: a.key.0,
                steps: a.key.1,
                views: a.key.2,
                unimodal: score(&a.uni),
                crossmodal: score(&a.cross),
                failed: a.failed,
            })
            .collect();
        rows.sort_by(|a, b| {
            a.noise
                .total_cmp(&b.noise)
                .then(a.steps.cmp(&b.steps))
                .then(a.views.cmp(&b.views))
        });
        Ok(Self { rows })
    }

    pub fn to_csv(&self, precision: usize) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(TABLE_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.cells(precision)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii table")
    }

    pub fn to_markdown(&self, precision: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", TABLE_COLUMNS.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(TABLE_COLUMNS.len()));
        for r in &self.rows {
            let _ = writeln!(s, "| {} |", r.cells(precision).join(" | "));
        }
        s
    }
}
