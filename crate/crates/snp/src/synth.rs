//! Synthetic variant tables for exercising the preprocessing pipeline end to
//! end. Most sites are well-behaved; a known share is built to fail each
//! quality filter, and a few carry a label-dependent allele frequency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SnpError};
use crate::region::{Interval, RegionSet};
use crate::table::{Site, VariantTable, MISSING};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Good,
    /// Label-dependent allele frequency.
    Planted,
    NoHets,
    LowGq,
    Monomorphic,
    HighMissing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_sites: usize,
    pub n_planted: usize,
    /// Share of sites built to fail each of the four filters.
    pub bad_fraction: f64,
    /// Share of sites covered by the generated regions.
    pub region_coverage: f64,
    pub chromosomes: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_sites: 2000,
            n_planted: 20,
            bad_fraction: 0.04,
            region_coverage: 0.7,
            chromosomes: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthVariants {
    pub table: VariantTable,
    pub regions: RegionSet,
    pub kinds: Vec<SiteKind>,
}

fn draw_genotype(rng: &mut ChaCha8Rng, p_alt: f64) -> u8 {
    (rng.random_bool(p_alt) as u8) + (rng.random_bool(p_alt) as u8)
}

/// `labels`, when given, align with `sample_ids` and drive the planted sites.
pub fn synthesize(sample_ids: &[String], labels: Option<&[u8]>, spec: &SynthSpec) -> Result<SynthVariants> {
    let n = sample_ids.len();
    if n == 0 || spec.n_sites == 0 || spec.chromosomes == 0 {
        return Err(SnpError::Data(
            "synthetic table needs samples, sites and chromosomes".into(),
        ));
    }
    if labels.is_some_and(|l| l.len() != n) {
        return Err(SnpError::Data("labels do not align with samples".into()));
    }
    if !(0.0..=0.25).contains(&spec.bad_fraction) || !(0.0..=1.0).contains(&spec.region_coverage) {
        return Err(SnpError::Data("synthetic fractions out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_chrom = spec.n_sites.div_ceil(spec.chromosomes);

    let mut sites = Vec::with_capacity(spec.n_sites);
    let mut kinds = Vec::with_capacity(spec.n_sites);
    let mut genotypes = Vec::with_capacity(spec.n_sites * n);
    let mut gq = Vec::with_capacity(spec.n_sites * n);
    let mut regions = Vec::new();
    let mut pos = 0u64;

    for s in 0..spec.n_sites {
        let chrom = s / per_chrom + 1;
        if s % per_chrom == 0 {
            pos = 0;
        }
        pos += rng.random_range(50..500u64);
        sites.push(Site {
            chrom: chrom.to_string(),
            pos,
            id: format!("snp{s:05}"),
        });
        if rng.random_bool(spec.region_coverage) {
            regions.push(Interval {
                chrom: chrom.to_string(),
                start: pos - rng.random_range(0..40u64),
                end: pos + rng.random_range(1..40u64),
            });
        }

        let kind = if s < spec.n_planted && labels.is_some() {
            SiteKind::Planted
        } else {
            let u: f64 = rng.random();
            let b = spec.bad_fraction;
            if u < b {
                SiteKind::NoHets
            } else if u < 2.0 * b {
                SiteKind::LowGq
            } else if u < 3.0 * b {
                SiteKind::Monomorphic
            } else if u < 4.0 * b {
                SiteKind::HighMissing
            } else {
                SiteKind::Good
            }
        };
        kinds.push(kind);

        let p_alt = rng.random_range(0.1..0.5);
        for j in 0..n {
            let g = match kind {
                SiteKind::Good | SiteKind::LowGq => draw_genotype(&mut rng, p_alt),
                SiteKind::Planted => {
                    let c = labels.map_or(0, |l| l[j]) as f64;
                    draw_genotype(&mut rng, (p_alt + 0.15 * c).min(0.95))
                }
                SiteKind::NoHets => 2 * rng.random_bool(0.5) as u8,
                SiteKind::Monomorphic => 0,
                SiteKind::HighMissing => {
                    if rng.random_bool(0.2) {
                        MISSING
                    } else {
                        draw_genotype(&mut rng, p_alt)
                    }
                }
            };
            let q = match (kind, g) {
                (_, MISSING) => 0,
                (SiteKind::LowGq, _) => rng.random_range(3..15),
                _ => rng.random_range(25..99),
            };
            genotypes.push(g);
            gq.push(q);
        }
    }
    let table = VariantTable::new(sample_ids.to_vec(), sites, genotypes, gq)?;
    Ok(SynthVariants {
        table,
        regions: RegionSet::new(regions),
        kinds,
    })
}
