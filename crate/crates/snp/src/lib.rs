//! Variant-site quality control for SNP genotype tables: Hardy-Weinberg,
//! genotype-quality, minor-allele-frequency and missing-rate filters, gene
//! region restriction, `{0,1,2}` encoding and random-forest feature ranking.

pub mod error;
pub mod filter;
pub mod forest;
pub mod hwe;
pub mod region;
pub mod synth;
pub mod table;

pub use error::{Result, SnpError};
pub use filter::{filter_variants, FilterKind, Removal, Thresholds};
pub use forest::{fit_forest, forest_feature_select, Forest, ForestParams};
pub use hwe::{hwe_chi_square, hwe_pvalue};
pub use region::{parse_bed, region_filter, Interval, RegionSet};
pub use table::{encode, parse_variant_table, Site, VariantTable, MISSING};
