//! Site-level quality filters applied in a fixed order: HWE, mean genotype
//! quality, minor allele frequency, missing rate. A site is logged under the
//! first filter it fails and is not examined further.

use std::fmt;

use crate::hwe::hwe_pvalue;
use crate::table::{VariantTable, MISSING};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Remove when the HWE p-value is below this.
    pub hwe_p: f64,
    /// Remove when mean GQ over called genotypes is below this.
    pub min_mean_gq: f64,
    /// Remove when MAF is below this.
    pub min_maf: f64,
    /// Remove when the missing fraction is above this.
    pub max_missing: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            hwe_p: 0.05,
            min_mean_gq: 20.0,
            min_maf: 0.01,
            max_missing: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    Hwe,
    Gq,
    Maf,
    Missing,
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Hwe => "hwe",
            FilterKind::Gq => "gq",
            FilterKind::Maf => "maf",
            FilterKind::Missing => "missing",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Removal {
    pub site: usize,
    pub id: String,
    pub filter: FilterKind,
    /// The statistic that failed (NaN when it could not be computed).
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteStats {
    pub hwe_p: f64,
    pub mean_gq: f64,
    pub maf: f64,
    pub missing_rate: f64,
}

/// Statistics over called genotypes only. A site with no calls gets NaN for
/// HWE, GQ and MAF.
pub fn site_stats(genotypes: &[u8], gq: &[u32]) -> SiteStats {
    let mut counts = [0u64; 3];
    let mut gq_sum = 0.0;
    for (&g, &q) in genotypes.iter().zip(gq) {
        if g != MISSING {
            counts[g as usize] += 1;
            gq_sum += q as f64;
        }
    }
    let called = counts.iter().sum::<u64>();
    let missing_rate = if genotypes.is_empty() {
        0.0
    } else {
        (genotypes.len() as u64 - called) as f64 / genotypes.len() as f64
    };
    if called == 0 {
        return SiteStats {
            hwe_p: f64::NAN,
            mean_gq: f64::NAN,
            maf: f64::NAN,
            missing_rate,
        };
    }
    let p = (2 * counts[0] + counts[1]) as f64 / (2 * called) as f64;
    SiteStats {
        hwe_p: hwe_pvalue((counts[0], counts[1], counts[2])).unwrap_or(f64::NAN),
        mean_gq: gq_sum / called as f64,
        maf: p.min(1.0 - p),
        missing_rate,
    }
}

/// First failing filter for a site, with its statistic. NaN statistics fail.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn first_failure(s: &SiteStats, th: &Thresholds) -> Option<(FilterKind, f64)> {
    if !(s.hwe_p >= th.hwe_p) {
        Some((FilterKind::Hwe, s.hwe_p))
    } else if !(s.mean_gq >= th.min_mean_gq) {
        Some((FilterKind::Gq, s.mean_gq))
    } else if !(s.maf >= th.min_maf) {
        Some((FilterKind::Maf, s.maf))
    } else if !(s.missing_rate <= th.max_missing) {
        Some((FilterKind::Missing, s.missing_rate))
    } else {
        None
    }
}

/// Returns the surviving sites in their original order plus one log entry
/// per removed site, in site order.
pub fn filter_variants(t: &VariantTable, th: &Thresholds) -> (VariantTable, Vec<Removal>) {
    let mut keep = Vec::new();
    let mut log = Vec::new();
    for s in 0..t.n_sites() {
        let stats = site_stats(t.site_genotypes(s), t.site_gq(s));
        match first_failure(&stats, th) {
            None => keep.push(s),
            Some((filter, value)) => log.push(Removal {
                site: s,
                id: t.sites[s].id.clone(),
                filter,
                value,
            }),
        }
    }
    (t.select_sites(&keep), log)
}

pub fn removal_log_tsv(log: &[Removal]) -> String {
    let mut out = String::from("site\tid\tfilter\tvalue\n");
    for r in log {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.site, r.id, r.filter, r.value));
    }
    out
}
