use libm::erfc;

use crate::error::{Result, SnpError};

/// One-degree-of-freedom chi-square statistic for Hardy-Weinberg equilibrium
/// from genotype counts `(hom_ref, het, hom_alt)`. Cells with zero expected
/// count contribute nothing.
pub fn hwe_chi_square(counts: (u64, u64, u64)) -> Result<f64> {
    let (aa, ab, bb) = counts;
    let n = (aa + ab + bb) as f64;
    if n == 0.0 {
        return Err(SnpError::Degenerate("no called genotypes".into()));
    }
    let p = (2 * aa + ab) as f64 / (2.0 * n);
    let q = 1.0 - p;
    let expected = [n * p * p, 2.0 * n * p * q, n * q * q];
    let observed = [aa as f64, ab as f64, bb as f64];
    Ok(observed
        .iter()
        .zip(expected)
        .filter(|(_, e)| *e > 0.0)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum())
}

/// Upper-tail p-value of [`hwe_chi_square`]: `erfc(sqrt(x / 2))`.
pub fn hwe_pvalue(counts: (u64, u64, u64)) -> Result<f64> {
    Ok(chi2_1df_sf(hwe_chi_square(counts)?))
}

pub fn chi2_1df_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_proportions() {
        assert_eq!(hwe_chi_square((25, 50, 25)).unwrap(), 0.0);
        assert_eq!(hwe_pvalue((25, 50, 25)).unwrap(), 1.0);
    }

    #[test]
    fn no_heterozygotes() {
        let x = hwe_chi_square((50, 0, 50)).unwrap();
        assert!((x - 100.0).abs() < 1e-9);
        assert!(hwe_pvalue((50, 0, 50)).unwrap() < 1e-20);
    }

    #[test]
    fn monomorphic() {
        assert_eq!(hwe_pvalue((100, 0, 0)).unwrap(), 1.0);
        assert_eq!(hwe_pvalue((0, 0, 7)).unwrap(), 1.0);
    }

    #[test]
    fn empty_is_degenerate() {
        assert!(matches!(hwe_pvalue((0, 0, 0)), Err(SnpError::Degenerate(_))));
    }

    #[test]
    fn known_tail() {
        // chi-square(1) 95th percentile.
        assert!((chi2_1df_sf(3.841_458_820_694_124) - 0.05).abs() < 1e-9);
    }
}
