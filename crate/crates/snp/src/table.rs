//! Tab-separated variant table.
//!
//! ```text
//! #CHROM  POS  ID   S1   S2   ...
//! 1       100  rs1  0:35 1:40 ...
//! ```
//!
//! Each sample cell is `g:q`: `g` is the non-reference allele count (`0`, `1`,
//! `2`, or `.` for a missing call) and `q` the integer genotype quality.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SnpError};

/// Genotype code for a missing call.
pub const MISSING: u8 = u8::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Site {
    pub chrom: String,
    pub pos: u64,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariantTable {
    pub sample_ids: Vec<String>,
    pub sites: Vec<Site>,
    /// Row-major `sites × samples`; entries in `{0, 1, 2, MISSING}`.
    pub genotypes: Vec<u8>,
    /// Same layout as `genotypes`.
    pub gq: Vec<u32>,
}

impl VariantTable {
    pub fn new(sample_ids: Vec<String>, sites: Vec<Site>, genotypes: Vec<u8>, gq: Vec<u32>) -> Result<Self> {
        let t = Self {
            sample_ids,
            sites,
            genotypes,
            gq,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_sites(), self.n_samples())
    }

    pub fn site_genotypes(&self, s: usize) -> &[u8] {
        let n = self.n_samples();
        &self.genotypes[s * n..(s + 1) * n]
    }

    pub fn site_gq(&self, s: usize) -> &[u32] {
        let n = self.n_samples();
        &self.gq[s * n..(s + 1) * n]
    }

    /// Keeps the sites whose indices are listed (ascending order preserved).
    pub fn select_sites(&self, keep: &[usize]) -> Self {
        let mut out = Self {
            sample_ids: self.sample_ids.clone(),
            sites: Vec::with_capacity(keep.len()),
            genotypes: Vec::with_capacity(keep.len() * self.n_samples()),
            gq: Vec::with_capacity(keep.len() * self.n_samples()),
        };
        for &s in keep {
            out.sites.push(self.sites[s].clone());
            out.genotypes.extend_from_slice(self.site_genotypes(s));
            out.gq.extend_from_slice(self.site_gq(s));
        }
        out
    }

    /// Reorders samples: column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_samples(&self, perm: &[usize]) -> Self {
        let n = self.n_samples();
        let mut out = self.clone();
        for (j, &p) in perm.iter().enumerate() {
            out.sample_ids[j] = self.sample_ids[p].clone();
            for s in 0..self.n_sites() {
                out.genotypes[s * n + j] = self.genotypes[s * n + p];
                out.gq[s * n + j] = self.gq[s * n + p];
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.n_sites() * self.n_samples();
        if self.genotypes.len() != cells || self.gq.len() != cells {
            return Err(SnpError::Data(format!(
                "genotype/GQ matrices hold {}/{} cells, expected {cells}",
                self.genotypes.len(),
                self.gq.len()
            )));
        }
        if let Some(g) = self.genotypes.iter().find(|&&g| g > 2 && g != MISSING) {
            return Err(SnpError::Data(format!("genotype code {g} outside {{0,1,2,missing}}")));
        }
        let mut last: HashMap<&str, u64> = HashMap::new();
        let mut ids = HashSet::new();
        for site in &self.sites {
            if let Some(&prev) = last.get(site.chrom.as_str()) {
                if site.pos == prev {
                    return Err(SnpError::Data(format!("duplicate site {}:{}", site.chrom, site.pos)));
                }
                if site.pos < prev {
                    return Err(SnpError::Data(format!(
                        "positions on {} not increasing at {}",
                        site.chrom, site.pos
                    )));
                }
            }
            last.insert(&site.chrom, site.pos);
            if site.id != "." && !ids.insert(site.id.as_str()) {
                return Err(SnpError::Data(format!("duplicate site id {}", site.id)));
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("#CHROM\tPOS\tID");
        for s in &self.sample_ids {
            out.push('\t');
            out.push_str(s);
        }
        out.push('\n');
        for (i, site) in self.sites.iter().enumerate() {
            let _ = write!(out, "{}\t{}\t{}", site.chrom, site.pos, site.id);
            for (&g, &q) in self.site_genotypes(i).iter().zip(self.site_gq(i)) {
                if g == MISSING {
                    let _ = write!(out, "\t.:{q}");
                } else {
                    let _ = write!(out, "\t{g}:{q}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

pub fn parse_variant_table(path: &Path) -> Result<VariantTable> {
    let name = path.display().to_string();
    parse_variant_str(&std::fs::read_to_string(path)?, &name)
}

/// Parses table text; `file` names the source in error messages.
pub fn parse_variant_str(text: &str, file: &str) -> Result<VariantTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| SnpError::parse(file, 1, "empty file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 3 || cols[..3] != ["#CHROM", "POS", "ID"] {
        return Err(SnpError::parse(file, 1, "header must start with #CHROM, POS, ID"));
    }
    let sample_ids: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let n = sample_ids.len();

    let mut sites = Vec::new();
    let mut genotypes = Vec::new();
    let mut gq = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != n + 3 {
            return Err(SnpError::parse(
                file,
                lineno,
                format!(
                    "expected {} genotype fields, found {}",
                    n,
                    fields.len().saturating_sub(3)
                ),
            ));
        }
        let pos: u64 = fields[1]
            .parse()
            .ok()
            .filter(|&p| p > 0)
            .ok_or_else(|| SnpError::parse(file, lineno, format!("bad position {:?}", fields[1])))?;
        sites.push(Site {
            chrom: fields[0].to_string(),
            pos,
            id: fields[2].to_string(),
        });
        for cell in &fields[3..] {
            let (g, q) = cell
                .split_once(':')
                .ok_or_else(|| SnpError::parse(file, lineno, format!("cell {cell:?} is not g:q")))?;
            let g = match g {
                "0" => 0,
                "1" => 1,
                "2" => 2,
                "." => MISSING,
                other => return Err(SnpError::parse(file, lineno, format!("genotype {other:?}"))),
            };
            let q: u32 = q
                .parse()
                .map_err(|_| SnpError::parse(file, lineno, format!("genotype quality {q:?}")))?;
            genotypes.push(g);
            gq.push(q);
        }
    }
    VariantTable::new(sample_ids, sites, genotypes, gq)
}

/// `samples × sites` matrix over `{0,1,2}`. Missing calls are imputed with
/// the site's most frequent observed genotype (lowest code on ties; 0 when
/// every call is missing).
pub fn encode(t: &VariantTable) -> Vec<Vec<u8>> {
    let n = t.n_samples();
    let modes: Vec<u8> = (0..t.n_sites())
        .map(|s| {
            let mut counts = [0usize; 3];
            for &g in t.site_genotypes(s) {
                if g != MISSING {
                    counts[g as usize] += 1;
                }
            }
            let mut best = 0;
            for k in 1..3 {
                if counts[k] > counts[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    (0..n)
        .map(|j| {
            (0..t.n_sites())
                .map(|s| match t.genotypes[s * n + j] {
                    MISSING => modes[s],
                    g => g,
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "#CHROM\tPOS\tID\tA\tB\tC\n1\t100\trs1\t0:30\t1:25\t.:0\n1\t200\trs2\t2:40\t2:41\t1:20\n";

    #[test]
    fn parses_fixture() {
        let t = parse_variant_str(FIXTURE, "f.tsv").unwrap();
        assert_eq!(t.shape(), (2, 3));
        assert_eq!(t.site_genotypes(0), &[0, 1, MISSING]);
        assert_eq!(t.site_gq(1), &[40, 41, 20]);
        assert_eq!(parse_variant_str(&t.to_tsv(), "g").unwrap(), t);
    }

    #[test]
    fn wrong_field_count_names_line() {
        let bad = "#CHROM\tPOS\tID\tA\tB\tC\n1\t100\trs1\t0:30\t1:25\t0:1\t0:1\n";
        match parse_variant_str(bad, "f.tsv") {
            Err(SnpError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_site_is_data_error() {
        let dup = "#CHROM\tPOS\tID\tA\n1\t100\trs1\t0:30\n1\t100\trs2\t0:30\n";
        assert!(matches!(parse_variant_str(dup, "f"), Err(SnpError::Data(_))));
    }

    #[test]
    fn encoding_imputes_mode() {
        let t = parse_variant_str(FIXTURE, "f").unwrap();
        let x = encode(&t);
        assert_eq!(x, vec![vec![0, 2], vec![1, 2], vec![0, 1]]);
    }
}
