//! Merging run directories into a preset × architecture summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{MetricRow, METRICS_FILE, TEACHER_ROW};
use crate::error::{Error, Result};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

/// Mean accuracy and AUC per (preset, arch), pooled over every fold of
/// every merged run.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub presets: Vec<String>,
    pub archs: Vec<String>,
    /// `cells[p][a]`: `(mean accuracy, mean auc, folds)`.
    pub cells: Vec<Vec<Option<(f64, f64, usize)>>>,
}

fn parse_metrics(path: &Path, text: &str) -> Result<Vec<MetricRow>> {
    let bad = |line: usize, why: &str| Error::InvalidArgument(format!("{}:{line}: {why}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some("preset,arch,fold,accuracy,auc") {
        return Err(bad(1, "unexpected header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 2, "expected 5 fields"));
            }
            Ok(MetricRow {
                preset: f[0].to_string(),
                arch: f[1].to_string(),
                fold: f[2].parse().map_err(|_| bad(i + 2, "bad fold"))?,
                accuracy: f[3].parse().map_err(|_| bad(i + 2, "bad accuracy"))?,
                auc: f[4].parse().map_err(|_| bad(i + 2, "bad auc"))?,
            })
        })
        .collect()
}

fn preset_order(name: &str) -> usize {
    ["base", "base_kd", "base_ul", "base_kd_ul", "fig2_same_size", TEACHER_ROW]
        .iter()
        .position(|p| *p == name)
        .unwrap_or(usize::MAX)
}

impl Comparison {
    pub fn from_rows(rows: &[MetricRow]) -> Self {
        let mut sums: BTreeMap<(String, String), (f64, f64, usize)> = BTreeMap::new();
        for r in rows {
            let e = sums.entry((r.preset.clone(), r.arch.clone())).or_default();
            e.0 += r.accuracy;
            e.1 += r.auc;
            e.2 += 1;
        }
        let mut presets: Vec<String> = sums.keys().map(|(p, _)| p.clone()).collect();
        presets.dedup();
        presets.sort_by(|a, b| preset_order(a).cmp(&preset_order(b)).then(a.cmp(b)));
        let mut archs: Vec<String> = sums.keys().map(|(_, a)| a.clone()).collect();
        archs.sort();
        archs.dedup();
        let cells = presets
            .iter()
            .map(|p| {
                archs
                    .iter()
                    .map(|a| {
                        sums.get(&(p.clone(), a.clone())).map(|&(acc, auc, n)| (acc / n as f64, auc / n as f64, n))
                    })
                    .collect()
            })
            .collect();
        Self { presets, archs, cells }
    }

    /// Row index of the best mean accuracy and best mean AUC in column `a`.
    /// Ties go to the earlier row.
    pub fn column_best(&self, a: usize) -> (Option<usize>, Option<usize>) {
        let best = |key: fn(&(f64, f64, usize)) -> f64| {
            let mut best: Option<(usize, f64)> = None;
            for (p, row) in self.cells.iter().enumerate() {
                if let Some(c) = &row[a] {
                    if best.is_none_or(|(_, v)| key(c) > v) {
                        best = Some((p, key(c)));
                    }
                }
            }
            best.map(|(p, _)| p)
        };
        (best(|c| c.0), best(|c| c.1))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("preset,arch,folds,mean_accuracy,mean_auc,best_accuracy,best_auc\n");
        for a in 0..self.archs.len() {
            let (ba, bu) = self.column_best(a);
            for (p, row) in self.cells.iter().enumerate() {
                if let Some((acc, auc, n)) = row[a] {
                    let _ = writeln!(
                        s,
                        "{},{},{n},{acc},{auc},{},{}",
                        self.presets[p],
                        self.archs[a],
                        u8::from(ba == Some(p)),
                        u8::from(bu == Some(p))
                    );
                }
            }
        }
        s
    }

    /// Aligned table with one `accuracy / auc` cell (percent) per preset and
    /// architecture; `*` marks the column maximum.
    pub fn to_text(&self) -> String {
        let best: Vec<_> = (0..self.archs.len()).map(|a| self.column_best(a)).collect();
        let cell = |p: usize, a: usize| match self.cells[p][a] {
            None => "-".to_string(),
            Some((acc, auc, _)) => {
                let mark = |b: Option<usize>| if b == Some(p) { "*" } else { " " };
                format!("{:6.2}{} / {:6.2}{}", acc * 100.0, mark(best[a].0), auc * 100.0, mark(best[a].1))
            }
        };
        let mut grid =
            vec![std::iter::once("preset \\ arch".to_string()).chain(self.archs.iter().cloned()).collect::<Vec<_>>()];
        for p in 0..self.presets.len() {
            grid.push(
                std::iter::once(self.presets[p].clone()).chain((0..self.archs.len()).map(|a| cell(p, a))).collect(),
            );
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for row in &grid {
            let line: Vec<String> = row.iter().zip(&widths).map(|(v, &w)| format!("{v:<w$}")).collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        s.push_str("cells: mean accuracy % / mean AUC %; * marks the column maximum\n");
        s
    }
}

/// Reads `metrics.csv` from every run directory, merges them and writes
/// `summary.csv` and `summary.txt` into `out_dir`. Every missing metrics
/// file is reported in a single error.
pub fn cmd_compare(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Comparison> {
    if run_dirs.is_empty() {
        return Err(Error::Empty("run directories to compare"));
    }
    let missing: Vec<String> = run_dirs
        .iter()
        .map(|d| d.join(METRICS_FILE))
        .filter(|p| !p.is_file())
        .map(|p| format!("missing run file {}", p.display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(missing));
    }
    let mut rows = Vec::new();
    for dir in run_dirs {
        let path = dir.join(METRICS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        rows.extend(parse_metrics(&path, &text)?);
    }
    if rows.is_empty() {
        return Err(Error::Empty("metric rows"));
    }
    let cmp = Comparison::from_rows(&rows);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, body) in [(SUMMARY_CSV, cmp.to_csv()), (SUMMARY_TXT, cmp.to_text())] {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(cmp)
}
