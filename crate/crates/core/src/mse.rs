//! MSE components of the EBLUP and the assembled uncertainty measures.
//!
//! At a given model variance the per-area components are
//!
//! ```text
//! g1 = A D_i / (A + D_i)                      leading term
//! g2 = B_i^2 x_i'(X'V^-1 X)^-1 x_i            regression uncertainty
//! g3 = 2 B_i^2 / ((A + D_i) tr(V^-2))         variance-estimation uncertainty
//! ```
//!
//! The traditional second-order measure is `g1 + g2 + 2 g3`; the BLUP MSE
//! is `g1 + g2`, which is strictly below `D_i` for every `A > 0`.

use crate::error::{FhError, Result};
use crate::model::{gls_parts, shrinkage_factor, SmallAreaDataset};
use nalgebra::{Cholesky, Dyn};

/// The three MSE components for one area at one model variance.
#[derive(Debug, Clone, Copy)]
pub struct MseComponents {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl MseComponents {
    /// Traditional uncertainty measure `g1 + g2 + 2 g3` (c* = 2).
    pub fn traditional_measure(&self) -> f64 {
        self.g1 + self.g2 + 2.0 * self.g3
    }

    /// BLUP mean squared error `g1 + g2` (c* = 0).
    pub fn blup_mse(&self) -> f64 {
        self.g1 + self.g2
    }

    /// General class member `g1 + g2 + c* g3`.
    pub fn with_c_star(&self, c_star: f64) -> f64 {
        self.g1 + self.g2 + c_star * self.g3
    }
}

/// Per-(dataset, A) context so that computing components for many areas
/// factorizes `X'V^-1 X` once.
pub(crate) struct MseContext {
    a: f64,
    w: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    tr_v2: f64,
}

impl MseContext {
    pub fn new(ds: &SmallAreaDataset, a: f64) -> Result<Self> {
        let parts = gls_parts(ds, a)?;
        let tr_v2 = parts.w.iter().map(|w| w * w).sum();
        Ok(Self {
            a,
            w: parts.w,
            chol: parts.chol,
            tr_v2,
        })
    }

    pub fn x_ginv_x(&self, ds: &SmallAreaDataset, i: usize) -> f64 {
        let xi = ds.x().row(i).transpose();
        xi.dot(&self.chol.solve(&xi))
    }

    pub fn tr_v2(&self) -> f64 {
        self.tr_v2
    }

    pub fn components(&self, ds: &SmallAreaDataset, i: usize) -> MseComponents {
        let d = ds.d()[i];
        let b = shrinkage_factor(self.a, d);
        MseComponents {
            g1: self.a * d * self.w[i],
            g2: b * b * self.x_ginv_x(ds, i),
            g3: 2.0 * b * b * self.w[i] / self.tr_v2,
        }
    }
}

/// Compute `g1`, `g2`, `g3` for area `i` at model variance `a >= 0`.
pub fn mse_components(ds: &SmallAreaDataset, a: f64, i: usize) -> Result<MseComponents> {
    Ok(MseContext::new(ds, a)?.components(ds, i))
}

/// Uncertainty measure `s_i^2 = g1 + g2 + c* g3`. Errors when the
/// requested `c*` makes it nonpositive.
pub fn uncertainty_measure(ds: &SmallAreaDataset, a: f64, i: usize, c_star: f64) -> Result<f64> {
    let comps = mse_components(ds, a, i)?;
    let s2 = comps.with_c_star(c_star);
    if s2 <= 0.0 {
        return Err(FhError::Inadmissible {
            s2,
            c_star,
            lower_bound: -comps.blup_mse() / comps.g3,
        });
    }
    Ok(s2)
}

/// Lower boundary of the admissible `c*` class (the value at which
/// `s_i^2` hits zero):
/// `-(A+D_i)^2 tr(V^-2) / (2 D_i) * { A + B_i x_i'(X'V^-1 X)^-1 x_i }`.
/// Always negative.
pub fn c_star_lower_bound(ds: &SmallAreaDataset, a: f64, i: usize) -> Result<f64> {
    if !(a > 0.0) {
        return Err(FhError::Domain(format!(
            "c* lower bound requires A > 0, got {a}"
        )));
    }
    let ctx = MseContext::new(ds, a)?;
    let d = ds.d()[i];
    let b = shrinkage_factor(a, d);
    let xgx = ctx.x_ginv_x(ds, i);
    Ok(-(a + d) * (a + d) * ctx.tr_v2() / (2.0 * d) * (a + b * xgx))
}

/// Dense reference implementation used by tests: forms V^-1 explicitly.
#[cfg(test)]
fn dense_components(ds: &SmallAreaDataset, a: f64, i: usize) -> MseComponents {
    use nalgebra::DMatrix;
    let m = ds.m();
    let vinv = DMatrix::from_fn(m, m, |r, c| if r == c { 1.0 / (a + ds.d()[r]) } else { 0.0 });
    let g = ds.x().transpose() * &vinv * ds.x();
    let ginv = g.try_inverse().unwrap();
    let xi = ds.x().row(i).transpose();
    let d = ds.d()[i];
    let b = d / (a + d);
    let tr_v2 = (&vinv * &vinv).trace();
    MseComponents {
        g1: a * d / (a + d),
        g2: b * b * (xi.transpose() * ginv * &xi)[(0, 0)],
        g3: 2.0 * b * b / ((a + d) * tr_v2),
    }
}
