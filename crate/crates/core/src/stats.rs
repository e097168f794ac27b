//! Small numerical helpers: least squares, quantiles, principal components.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with denominator `n - 1`.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub ssr: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn sigma2(&self) -> f64 {
        self.ssr / (self.n - self.coef.len()).max(1) as f64
    }
}

/// Least squares with conventional standard errors. Rank deficiency is an
/// error naming `what`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, what: &str) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if n < k || k == 0 {
        return Err(Error::SingularDesign(format!(
            "{what}: {n} observations for {k} regressors"
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * scale.max(1e-300)) {
        return Err(Error::SingularDesign(format!("{what}: rank-deficient design")));
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| Error::SingularDesign(what.to_string()))?;
    let resid = y - x * &coef;
    let ssr = resid.norm_squared();
    let dof = n.saturating_sub(k).max(1) as f64;
    let rinv = r
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign(what.to_string()))?;
    let cov = &rinv * rinv.transpose() * (ssr / dof);
    Ok(OlsFit {
        coef: coef.as_slice().to_vec(),
        se: (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        ssr,
        n,
    })
}

/// First principal component of two pooled-standardized variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    pub means: [f64; 2],
    pub sds: [f64; 2],
    /// Unit loading vector, sign fixed so the first loading is non-negative.
    pub loadings: [f64; 2],
    /// Share of standardized variance explained.
    pub explained: f64,
}

impl Pca2 {
    pub fn fit(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() || a.len() < 2 {
            return Err(Error::Degenerate("principal components need two or more rows".into()));
        }
        let sds = [std_dev(a), std_dev(b)];
        if !(sds[0] > 0.0) || !(sds[1] > 0.0) {
            return Err(Error::Degenerate(
                "zero variance in a principal-component input".into(),
            ));
        }
        let means = [mean(a), mean(b)];
        let za: Vec<f64> = a.iter().map(|v| (v - means[0]) / sds[0]).collect();
        let zb: Vec<f64> = b.iter().map(|v| (v - means[1]) / sds[1]).collect();
        let r = za.iter().zip(&zb).map(|(x, y)| x * y).sum::<f64>() / (a.len() as f64 - 1.0);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]));
        let top = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
        let mut l = [eig.eigenvectors[(0, top)], eig.eigenvectors[(1, top)]];
        if l[0] < 0.0 || (l[0] == 0.0 && l[1] < 0.0) {
            l = [-l[0], -l[1]];
        }
        Ok(Self {
            means,
            sds,
            loadings: l,
            explained: eig.eigenvalues[top] / 2.0,
        })
    }

    pub fn score(&self, a: f64, b: f64) -> f64 {
        self.loadings[0] * (a - self.means[0]) / self.sds[0]
            + self.loadings[1] * (b - self.means[1]) / self.sds[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_match_type7() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_column_slice(&[1.0, 3.0, 5.0, 7.0]);
        let fit = ols(&x, &y, "t").unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 1e-12 && (fit.coef[1] - 2.0).abs() < 1e-12);
        assert!(fit.ssr < 1e-20);
    }

    #[test]
    fn ols_standard_error_matches_formula() {
        // Slope-only regression: se = sqrt(s2 / sum x^2).
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [1.1, 1.9, 3.2, 3.9, 5.1];
        let fit = ols(
            &DMatrix::from_column_slice(5, 1, &xs),
            &DVector::from_column_slice(&ys),
            "t",
        )
        .unwrap();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let b = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / sxx;
        let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - b * x).powi(2)).sum();
        assert!((fit.coef[0] - b).abs() < 1e-14);
        assert!((fit.se[0] - (ssr / 4.0 / sxx).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ols_flags_collinearity() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        assert!(matches!(ols(&x, &y, "t"), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn pca_sign_and_degeneracy() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 19.0, 31.0, 40.0];
        let p = Pca2::fit(&a, &b).unwrap();
        assert!(p.loadings[0] > 0.0 && p.loadings[1] > 0.0);
        assert!(p.score(4.0, 40.0) > p.score(1.0, 10.0));
        assert!(matches!(
            Pca2::fit(&a, &[1.0, 1.0, 1.0, 1.0]),
            Err(Error::Degenerate(_))
        ));
    }
}
