//! The Fay-Herriot data model, design-matrix algebra, and the point
//! predictors.
//!
//! For areas `i = 1..m` the two-level model is
//!
//! ```text
//! level 1:  y_i | theta_i ~ N(theta_i, D_i)        (sampling model, D_i known)
//! level 2:  theta_i       ~ N(x_i' beta, A)        (linking model)
//! ```
//!
//! equivalently `y_i = x_i' beta + u_i + e_i`. The marginal covariance
//! `V = diag(A + D_1, ..., A + D_m)` is diagonal and is never
//! materialized; only its diagonal enters the algebra, so everything
//! here is O(m p^2) with p small.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{FhError, Result};
use crate::likelihood::AdjustmentKind;

/// One observed area: identifier, direct estimate `y_i`, known sampling
/// variance `D_i`, and the covariate row `x_i`.
#[derive(Debug, Clone)]
pub struct AreaRecord {
    pub id: String,
    pub y: f64,
    pub d: f64,
    pub x: Vec<f64>,
}

/// An immutable small-area dataset: `m` areas, `p` covariates, a full-rank
/// `m x p` design matrix and strictly positive sampling variances.
#[derive(Debug, Clone)]
pub struct SmallAreaDataset {
    ids: Vec<String>,
    y: Vec<f64>,
    d: Vec<f64>,
    x: DMatrix<f64>,
}

impl SmallAreaDataset {
    pub fn new(records: Vec<AreaRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(FhError::InvalidData("need at least one area".into()));
        }
        let p = records[0].x.len();
        let m = records.len();
        let mut ids = Vec::with_capacity(m);
        let mut y = Vec::with_capacity(m);
        let mut d = Vec::with_capacity(m);
        let mut x = DMatrix::zeros(m, p);
        for (i, rec) in records.into_iter().enumerate() {
            if rec.x.len() != p {
                return Err(FhError::InvalidData(format!(
                    "area '{}' has {} covariates, expected {}",
                    rec.id,
                    rec.x.len(),
                    p
                )));
            }
            for (j, v) in rec.x.iter().enumerate() {
                x[(i, j)] = *v;
            }
            ids.push(rec.id);
            y.push(rec.y);
            d.push(rec.d);
        }
        Self::from_parts(ids, y, d, x)
    }

    /// Build a dataset from columnar parts. Validates m >= 1, p >= 1,
    /// every `D_i > 0`, finite values, and `rank(X) = p`.
    pub fn from_parts(
        ids: Vec<String>,
        y: Vec<f64>,
        d: Vec<f64>,
        x: DMatrix<f64>,
    ) -> Result<Self> {
        let m = y.len();
        let p = x.ncols();
        if m == 0 {
            return Err(FhError::InvalidData("need at least one area".into()));
        }
        if p == 0 {
            return Err(FhError::InvalidData("need at least one covariate".into()));
        }
        if ids.len() != m || d.len() != m || x.nrows() != m {
            return Err(FhError::InvalidData(format!(
                "inconsistent lengths: ids {}, y {}, D {}, X rows {}",
                ids.len(),
                m,
                d.len(),
                x.nrows()
            )));
        }
        for i in 0..m {
            if !y[i].is_finite() {
                return Err(FhError::InvalidData(format!(
                    "area '{}': direct estimate y = {} is not finite",
                    ids[i], y[i]
                )));
            }
            if !(d[i] > 0.0) || !d[i].is_finite() {
                return Err(FhError::InvalidData(format!(
                    "area '{}': sampling variance D = {} must be strictly positive",
                    ids[i], d[i]
                )));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FhError::InvalidData("design matrix has non-finite entries".into()));
        }
        if m < p {
            return Err(FhError::InvalidData(format!(
                "fewer areas (m = {m}) than covariates (p = {p})"
            )));
        }
        check_full_rank(&x)?;
        Ok(Self { ids, y, d, x })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `x_i' v` for a coefficient vector `v`.
    pub fn xdot(&self, i: usize, v: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.p() {
            acc += self.x[(i, j)] * v[j];
        }
        acc
    }

    /// Replace the response vector, keeping the design fixed.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.m() {
            return Err(FhError::InvalidData(format!(
                "replacement y has length {}, expected {}",
                y.len(),
                self.m()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(FhError::InvalidData("replacement y has non-finite entries".into()));
        }
        Ok(Self {
            ids: self.ids.clone(),
            y,
            d: self.d.clone(),
            x: self.x.clone(),
        })
    }

    /// OLS leverage `h_i = x_i'(X'X)^-1 x_i`. The leverages sum to p.
    pub fn leverage(&self, i: usize) -> Result<f64> {
        let chol = self.xtx_cholesky()?;
        Ok(self.leverage_with(&chol, i))
    }

    /// All m leverages with a single factorization of X'X.
    pub fn leverages(&self) -> Result<Vec<f64>> {
        let chol = self.xtx_cholesky()?;
        Ok((0..self.m()).map(|i| self.leverage_with(&chol, i)).collect())
    }

    /// Existence condition for the area-specific YL estimator:
    /// `m > (4 + p) / (1 - h_i)`. False whenever `h_i = 1`.
    pub fn yl_condition_holds(&self, i: usize) -> Result<bool> {
        let h = self.leverage(i)?;
        if h >= 1.0 {
            return Ok(false);
        }
        Ok((self.m() as f64) > (4.0 + self.p() as f64) / (1.0 - h))
    }

    fn xtx_cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        let xtx = self.x.transpose() * &self.x;
        Cholesky::new(xtx).ok_or_else(|| match check_full_rank(&self.x) {
            Err(e) => e,
            Ok(()) => FhError::RankDeficient {
                columns: (0..self.p()).collect(),
                rank: 0,
                p: self.p(),
            },
        })
    }

    fn leverage_with(&self, chol: &Cholesky<f64, Dyn>, i: usize) -> f64 {
        let xi = self.x.row(i).transpose();
        let solved = chol.solve(&xi);
        xi.dot(&solved)
    }
}

/// Verify `rank(X) = p` via a column-pivoted QR; on failure the error
/// names the dependent columns.
fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let p = x.ncols();
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p.min(r.nrows())).map(|j| r[(j, j)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0_f64, f64::max);
    let tol = dmax * (x.nrows().max(p) as f64) * f64::EPSILON;
    let rank = diag.iter().filter(|&&v| v > tol).count();
    if rank == p {
        return Ok(());
    }
    // Map deficient pivot positions back to original column indices.
    let mut idx = DMatrix::<f64>::from_fn(1, p, |_, j| j as f64);
    qr.p().permute_columns(&mut idx);
    let mut columns: Vec<usize> = (rank..p).map(|j| idx[(0, j)] as usize).collect();
    columns.sort_unstable();
    Err(FhError::RankDeficient { columns, rank, p })
}

/// The shrinkage factor `B_i = D_i / (A + D_i)` pulling the direct
/// estimate toward the synthetic regression estimate. Strictly
/// decreasing in A for fixed `D_i`.
pub fn shrinkage_factor(a: f64, d_i: f64) -> f64 {
    d_i / (a + d_i)
}

/// GLS quantities at a fixed model variance `a`, computed without ever
/// forming an m x m matrix:
/// weights `w_i = 1/(a + D_i)`, the information `G = X'V^-1·X` (Cholesky
/// factored), the GLS coefficients, and the residual vector
/// `Py = V^-1 (y - X beta)` with its quadratic form `y'Py`.
pub(crate) struct GlsParts {
    pub w: Vec<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub ln_det_g: f64,
    pub ln_det_v: f64,
    pub beta: DVector<f64>,
    pub py: Vec<f64>,
    pub y_py: f64,
}

pub(crate) fn gls_parts(ds: &SmallAreaDataset, a: f64) -> Result<GlsParts> {
    if !a.is_finite() || a < 0.0 {
        return Err(FhError::Domain(format!(
            "model variance must be finite and nonnegative, got {a}"
        )));
    }
    let m = ds.m();
    let p = ds.p();
    let mut g = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut w = vec![0.0; m];
    let mut ln_det_v = 0.0;
    for i in 0..m {
        let wi = 1.0 / (a + ds.d[i]);
        w[i] = wi;
        ln_det_v += (a + ds.d[i]).ln();
        let yi = ds.y[i];
        for r in 0..p {
            let xr = ds.x[(i, r)];
            b[r] += wi * yi * xr;
            for c in 0..p {
                g[(r, c)] += wi * xr * ds.x[(i, c)];
            }
        }
    }
    let chol = Cholesky::new(g).ok_or(FhError::SingularGls { a })?;
    let l = chol.l_dirty();
    let ln_det_g = 2.0 * (0..p).map(|j| l[(j, j)].ln()).sum::<f64>();
    let beta = chol.solve(&b);
    let mut py = vec![0.0; m];
    let mut y_py = 0.0;
    for i in 0..m {
        let ri = w[i] * (ds.y[i] - ds.xdot(i, &beta));
        py[i] = ri;
        y_py += ds.y[i] * ri;
    }
    Ok(GlsParts {
        w,
        chol,
        ln_det_g,
        ln_det_v,
        beta,
        py,
        y_py,
    })
}

/// GLS coefficient estimate `(X'V^-1·X)^-1 X'V^-1·y` at `V = diag(a + D_i)`.
pub fn gls_beta(ds: &SmallAreaDataset, a: f64) -> Result<DVector<f64>> {
    Ok(gls_parts(ds, a)?.beta)
}

/// A fitted model: the variance estimate and the GLS coefficients at it.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub a_hat: f64,
    pub beta_hat: DVector<f64>,
    pub method: AdjustmentKind,
}

impl ModelFit {
    pub fn new(ds: &SmallAreaDataset, a_hat: f64, method: AdjustmentKind) -> Result<Self> {
        Ok(Self {
            a_hat,
            beta_hat: gls_beta(ds, a_hat)?,
            method,
        })
    }

    /// Synthetic (regression) estimate `x_i' beta_hat`.
    pub fn synthetic(&self, ds: &SmallAreaDataset, i: usize) -> f64 {
        ds.xdot(i, &self.beta_hat)
    }

    /// `B_i` evaluated at the fitted variance.
    pub fn shrinkage(&self, ds: &SmallAreaDataset, i: usize) -> f64 {
        shrinkage_factor(self.a_hat, ds.d()[i])
    }
}

/// Empirical best linear unbiased predictor
/// `(1 - B_i) y_i + B_i x_i' beta_hat` at the fitted variance. Always
/// lies between `y_i` and the synthetic estimate.
pub fn eblup(ds: &SmallAreaDataset, fit: &ModelFit, i: usize) -> f64 {
    let b = fit.shrinkage(ds, i);
    (1.0 - b) * ds.y()[i] + b * fit.synthetic(ds, i)
}
