use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ModelConfig;
use crate::metrics::{mean, two_sample_z};

use super::sweep::CellReport;

pub const REPORT_FORMAT: &str = "xmf-report-v1";

/// Two-sample Z-test of per-seed test macro-F1 between two cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub z: Option<f64>,
    pub p: Option<f64>,
    /// Why `z`/`p` are absent, when they are.
    pub note: Option<String>,
}

impl Comparison {
    pub fn of(a: &CellReport, b: &CellReport) -> Self {
        let (fa, fb) = (a.f1_scores(), b.f1_scores());
        let (z, p, note) = match two_sample_z(&fa, &fb) {
            Ok((z, p)) => (Some(z), Some(p), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        Self {
            a: a.label.clone(),
            b: b.label.clone(),
            mean_a: mean(&fa),
            mean_b: mean(&fb),
            z,
            p,
            note,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub command: String,
    pub version: String,
    /// The config the command was invoked with.
    pub config: ModelConfig,
    pub config_hash: String,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    pub selected_seed: Option<u64>,
    pub cells: Vec<CellReport>,
    pub comparisons: Vec<Comparison>,
}

impl RunReport {
    pub fn new(command: &str, config: &ModelConfig, split_seed: u64, test_fraction: f64, seeds: &[u64]) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            config_hash: config.config_hash(),
            split_seed,
            test_fraction,
            seeds: seeds.to_vec(),
            selected_seed: None,
            cells: Vec::new(),
            comparisons: Vec::new(),
        }
    }

    /// Adds a comparison of every other cell against the cell labelled
    /// `baseline`.
    pub fn compare_against(&mut self, baseline: &str) -> Result<()> {
        let base = self
            .cells
            .iter()
            .find(|c| c.label == baseline)
            .ok_or_else(|| Error::Usage(format!("no cell labelled {baseline:?}")))?;
        let mut out: Vec<Comparison> = self
            .cells
            .iter()
            .filter(|c| c.label != baseline)
            .map(|c| Comparison::of(c, base))
            .collect();
        self.comparisons.append(&mut out);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Data(format!("unsupported report format {:?}", r.format)));
        }
        Ok(r)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("report.csv"), self.runs_csv())?;
        Ok(())
    }

    /// One line per (cell, seed).
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("cell,mode,modalities,config_hash,seed,accuracy,precision,recall,f1,confusion\n");
        for c in &self.cells {
            for r in &c.runs {
                let cm: Vec<String> = r.confusion.counts.iter().flatten().map(u64::to_string).collect();
                let _ = writeln!(
                    out,
                    "\"{}\",{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
                    c.label,
                    c.mode,
                    c.modalities,
                    c.config_hash,
                    r.seed,
                    r.accuracy,
                    r.precision,
                    r.recall,
                    r.f1,
                    cm.join(";")
                );
            }
        }
        out
    }

    /// Per-cell F1 box-plot numbers.
    pub fn box_csv(&self) -> String {
        let mut out = String::from("cell,n,min,lower_whisker,q1,median,q3,upper_whisker,max,outliers\n");
        for c in &self.cells {
            let b = &c.f1_box;
            let _ = writeln!(
                out,
                "\"{}\",{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                c.label,
                b.n,
                b.min,
                b.lower_whisker,
                b.q1,
                b.median,
                b.q3,
                b.upper_whisker,
                b.max,
                b.outliers.len()
            );
        }
        out
    }

    /// Aligned text table of mean ± std per cell, then comparisons.
    pub fn render(&self) -> String {
        let header = ["cell", "seeds", "accuracy", "precision", "recall", "macro-F1"];
        let rows: Vec<[String; 6]> = self
            .cells
            .iter()
            .map(|c| {
                let ms = |m: &super::sweep::MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
                [
                    c.label.clone(),
                    c.runs.len().to_string(),
                    ms(&c.accuracy),
                    ms(&c.precision),
                    ms(&c.recall),
                    ms(&c.f1),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let pad = w - c.chars().count();
                if i == 0 {
                    s.push_str(c);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str(&" ".repeat(pad));
                    s.push_str(c);
                }
            }
            s.trim_end().to_string()
        };

        let mut out = format!(
            "{} (config {}, split seed {})\n",
            self.command, self.config_hash, self.split_seed
        );
        out.push_str(&line(&header.map(String::from)));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        if let Some(s) = self.selected_seed {
            let _ = writeln!(out, "selected seed: {s}");
        }
        for c in &self.comparisons {
            match (c.z, c.p) {
                (Some(z), Some(p)) => {
                    let _ = writeln!(
                        out,
                        "{} vs {}: mean F1 {:.4} vs {:.4}, z = {:.3}, p = {:.3e}",
                        c.a, c.b, c.mean_a, c.mean_b, z, p
                    );
                }
                _ => {
                    let _ = writeln!(
                        out,
                        "{} vs {}: mean F1 {:.4} vs {:.4}, no test ({})",
                        c.a,
                        c.b,
                        c.mean_a,
                        c.mean_b,
                        c.note.as_deref().unwrap_or("unavailable")
                    );
                }
            }
        }
        out
    }
}
