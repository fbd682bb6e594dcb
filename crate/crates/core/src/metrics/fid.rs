use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::{expect_header, read_f64, read_u32, write_f64, write_header, write_u32};

/// Eigenvalues below this are a domain error; those between it and zero are
/// clamped to zero.
const PSD_TOLERANCE: f64 = -1e-8;

/// Gaussian feature statistics: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 || cov.nrows() != n || cov.ncols() != n {
            return Err(Error::invalid(format!(
                "statistics need a {n}x{n} covariance, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature statistics must be finite"));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-9 * scale {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        Ok(FeatureStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetric_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < PSD_TOLERANCE {
            return Err(Error::NumericDomain(format!("{what} has eigenvalue {v}")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2(Σ_r Σ_g)^{1/2})`.
///
/// The trace of the product root is taken as `Tr((A Σ_g A)^{1/2})` with
/// `A = Σ_r^{1/2}`, a symmetric matrix with the same spectrum.
pub fn frechet_distance(real: &FeatureStats, generated: &FeatureStats) -> Result<f64> {
    if real.dim() != generated.dim() {
        return Err(Error::invalid(format!(
            "statistic dimensions differ: {} vs {}",
            real.dim(),
            generated.dim()
        )));
    }
    let a = symmetric_sqrt(&real.cov, "real covariance")?;
    // Validates the generated covariance as PSD as well.
    symmetric_sqrt(&generated.cov, "generated covariance")?;
    let inner = &a * &generated.cov * &a;
    let root_trace = symmetric_sqrt(&inner, "covariance product")?.trace();
    let dm = (&real.mean - &generated.mean).norm_squared();
    let d = dm + real.cov.trace() + generated.cov.trace() - 2.0 * root_trace;
    if d < PSD_TOLERANCE {
        return Err(Error::NumericDomain(format!("negative Fréchet distance {d}")));
    }
    Ok(d.max(0.0))
}

pub const FST_MAGIC: &[u8; 4] = b"FST1";
pub const FST_VERSION: u8 = 1;

pub fn write_feature_stats(s: &FeatureStats, mut w: impl Write) -> Result<()> {
    write_header(&mut w, FST_MAGIC, FST_VERSION)?;
    write_u32(&mut w, s.dim() as u32)?;
    for v in s.mean.iter() {
        write_f64(&mut w, *v)?;
    }
    let n = s.dim();
    for r in 0..n {
        for c in 0..n {
            write_f64(&mut w, s.cov[(r, c)])?;
        }
    }
    Ok(())
}

pub fn read_feature_stats(mut r: impl Read) -> Result<FeatureStats> {
    expect_header(&mut r, FST_MAGIC, FST_VERSION, "FST1")?;
    let n = read_u32(&mut r)? as usize;
    if n == 0 || n > 1 << 14 {
        return Err(Error::format("FST1", format!("unreasonable dimension {n}")));
    }
    let mut mean = Vec::with_capacity(n);
    for _ in 0..n {
        mean.push(read_f64(&mut r)?);
    }
    let mut cov = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        cov.push(read_f64(&mut r)?);
    }
    FeatureStats::new(DVector::from_vec(mean), DMatrix::from_row_slice(n, n, &cov))
        .map_err(|e| Error::format("FST1", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(mean: &[f64], cov: DMatrix<f64>) -> FeatureStats {
        FeatureStats::new(DVector::from_column_slice(mean), cov).unwrap()
    }

    fn random_psd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose()
    }

    #[test]
    fn identical_is_zero_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = stats(&[0.1, 0.2, 0.3, 0.4], random_psd(4, &mut rng));
        let b = stats(&[1.0, 0.0, -1.0, 0.5], random_psd(4, &mut rng));
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = stats(&[1.5], DMatrix::from_element(1, 1, 4.0));
        let b = stats(&[-0.5], DMatrix::from_element(1, 1, 0.25));
        let want = 2.0f64.powi(2) + (2.0f64 - 0.5).powi(2);
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn diagonal_closed_form() {
        let a = stats(&[0.0, 1.0, 2.0], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0])));
        let b = stats(&[1.0, 1.0, 0.0], DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.0])));
        let want = 1.0 + 4.0 + (1.0f64 - 2.0).powi(2) + (2.0f64 - 1.0).powi(2) + 9.0;
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn non_psd_rejected() {
        let a = stats(&[0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        let b = stats(&[0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(frechet_distance(&a, &b), Err(Error::NumericDomain(_))));
        assert!(FeatureStats::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
    }

    #[test]
    fn stats_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = stats(&[0.5, -1.0, 2.0], random_psd(3, &mut rng));
        let mut buf = Vec::new();
        write_feature_stats(&s, &mut buf).unwrap();
        assert_eq!(read_feature_stats(buf.as_slice()).unwrap(), s);
        assert!(read_feature_stats(&buf[..10]).is_err());
    }
}
