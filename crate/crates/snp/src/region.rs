//! Gene regions from a three-column BED file (0-based, half-open).
//!
//! Sites in the variant table carry 1-based positions; [`region_filter`]
//! compares them to interval bounds as plain numbers (`start <= pos < end`),
//! so callers who need strict coordinate conversion should shift the BED
//! intervals by one before loading.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, SnpError};
use crate::table::VariantTable;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    pub chrom: String,
    pub start: u64,
    pub end: u64,
}

/// Intervals grouped by chromosome, sorted, with overlapping or touching
/// intervals merged.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegionSet {
    by_chrom: BTreeMap<String, Vec<(u64, u64)>>,
}

impl RegionSet {
    pub fn new(intervals: impl IntoIterator<Item = Interval>) -> Self {
        let mut by_chrom: BTreeMap<String, Vec<(u64, u64)>> = BTreeMap::new();
        for iv in intervals {
            if iv.start < iv.end {
                by_chrom.entry(iv.chrom).or_default().push((iv.start, iv.end));
            }
        }
        for spans in by_chrom.values_mut() {
            spans.sort_unstable();
            let mut merged: Vec<(u64, u64)> = Vec::with_capacity(spans.len());
            for &(s, e) in spans.iter() {
                match merged.last_mut() {
                    Some(last) if s <= last.1 => last.1 = last.1.max(e),
                    _ => merged.push((s, e)),
                }
            }
            *spans = merged;
        }
        by_chrom.retain(|_, v| !v.is_empty());
        Self { by_chrom }
    }

    pub fn is_empty(&self) -> bool {
        self.by_chrom.is_empty()
    }

    pub fn intervals(&self) -> Vec<Interval> {
        self.by_chrom
            .iter()
            .flat_map(|(c, spans)| {
                spans.iter().map(move |&(start, end)| Interval {
                    chrom: c.clone(),
                    start,
                    end,
                })
            })
            .collect()
    }

    pub fn contains(&self, chrom: &str, pos: u64) -> bool {
        let Some(spans) = self.by_chrom.get(chrom) else {
            return false;
        };
        let i = spans.partition_point(|&(s, _)| s <= pos);
        i > 0 && pos < spans[i - 1].1
    }

    pub fn to_bed(&self) -> String {
        self.intervals()
            .iter()
            .map(|iv| format!("{}\t{}\t{}\n", iv.chrom, iv.start, iv.end))
            .collect()
    }
}

pub fn parse_bed(path: &Path) -> Result<RegionSet> {
    let name = path.display().to_string();
    parse_bed_str(&std::fs::read_to_string(path)?, &name)
}

/// Reads the first three columns; blank, `#`, `track` and `browser` lines
/// are skipped.
pub fn parse_bed_str(text: &str, file: &str) -> Result<RegionSet> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with("track") || t.starts_with("browser") {
            continue;
        }
        let f: Vec<&str> = t.split('\t').collect();
        if f.len() < 3 {
            return Err(SnpError::parse(file, i + 1, "BED line needs chrom, start, end"));
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| SnpError::parse(file, i + 1, format!("bad coordinate {s:?}")))
        };
        let (start, end) = (num(f[1])?, num(f[2])?);
        if end < start {
            return Err(SnpError::parse(file, i + 1, "end before start"));
        }
        out.push(Interval {
            chrom: f[0].to_string(),
            start,
            end,
        });
    }
    Ok(RegionSet::new(out))
}

pub fn region_filter(t: &VariantTable, r: &RegionSet) -> VariantTable {
    let keep: Vec<usize> = t
        .sites
        .iter()
        .enumerate()
        .filter(|(_, s)| r.contains(&s.chrom, s.pos))
        .map(|(i, _)| i)
        .collect();
    t.select_sites(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(c: &str, s: u64, e: u64) -> Interval {
        Interval {
            chrom: c.into(),
            start: s,
            end: e,
        }
    }

    #[test]
    fn merges_overlaps() {
        let r = RegionSet::new([
            iv("1", 10, 20),
            iv("1", 15, 30),
            iv("1", 30, 35),
            iv("2", 5, 6),
            iv("1", 40, 40),
        ]);
        assert_eq!(r.intervals(), vec![iv("1", 10, 35), iv("2", 5, 6)]);
    }

    #[test]
    fn half_open() {
        let r = RegionSet::new([iv("1", 100, 101)]);
        assert!(r.contains("1", 100));
        assert!(!r.contains("1", 101));
        assert!(!r.contains("1", 99));
        assert!(!r.contains("2", 100));
    }

    #[test]
    fn bed_round_trip() {
        let r = parse_bed_str("track name=x\n1\t5\t9\tgeneA\n1\t7\t12\n", "r.bed").unwrap();
        assert_eq!(r.intervals(), vec![iv("1", 5, 12)]);
        assert_eq!(parse_bed_str(&r.to_bed(), "x").unwrap(), r);
    }
}
