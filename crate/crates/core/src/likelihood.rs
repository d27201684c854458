//! Residual log-likelihood of the model variance and the log adjustment
//! factors, with analytic first derivatives.
//!
//! The residual likelihood of `A` is
//!
//! ```text
//! L_RE(A|y) = |X'V^-1 X|^(-1/2) |V|^(-1/2) exp(-y'Py/2),
//! P = V^-1 - V^-1 X (X'V^-1 X)^-1 X'V^-1,
//! ```
//!
//! and an adjusted profile multiplies it by a data-free factor `L~(A)`.
//! Everything here works in log space: the multiplicative forms are never
//! computed directly, since the determinants underflow once m is a few
//! dozen. `residual_loglik` drops the constant `-(m-p)/2 * ln(2 pi)`; all
//! comparisons and derivatives in A are unaffected.

use nalgebra::DMatrix;

use crate::error::{FhError, Result};
use crate::model::{gls_parts, SmallAreaDataset};

/// Which adjustment multiplies the residual likelihood. `None` is plain
/// REML.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustmentKind {
    /// No adjustment: plain residual maximum likelihood.
    None,
    /// Non-area-specific factor `A^((1+z^2)/4)`.
    Nas,
    /// Area-specific factor `A^((1+z^2)/4) (A+D_i)^((7-z^2)/4)` for the
    /// given area index.
    CVariant(usize),
    /// Non-area-specific factor `A^(1/4)`, free of z.
    Remark1,
}

impl std::fmt::Display for AdjustmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AdjustmentKind::None => write!(f, "REML"),
            AdjustmentKind::Nas => write!(f, "NAS"),
            AdjustmentKind::CVariant(i) => write!(f, "C({i})"),
            AdjustmentKind::Remark1 => write!(f, "REMARK1"),
        }
    }
}

/// A log adjustment factor `ln L~(A)` with its derivative. Factors are
/// free of the data `y`; the NAS and C-variant factors depend on the
/// nominal level through `z`, and the C-variant factor additionally on
/// one area's sampling variance.
#[derive(Debug, Clone, Copy)]
pub struct AdjustmentFactor {
    kind: AdjustmentKind,
    z: f64,
    d_i: f64,
}

impl AdjustmentFactor {
    /// Plain REML (log factor identically zero).
    pub fn reml() -> Self {
        Self {
            kind: AdjustmentKind::None,
            z: 0.0,
            d_i: 0.0,
        }
    }

    /// `ln L~(A) = (1+z^2)/4 * ln A`.
    pub fn nas(z: f64) -> Self {
        Self {
            kind: AdjustmentKind::Nas,
            z,
            d_i: 0.0,
        }
    }

    /// `ln L~(A) = (1+z^2)/4 * ln A + (7-z^2)/4 * ln(A + D_i)`.
    pub fn c_variant(ds: &SmallAreaDataset, i: usize, z: f64) -> Result<Self> {
        if i >= ds.m() {
            return Err(FhError::Domain(format!(
                "area index {i} out of range (m = {})",
                ds.m()
            )));
        }
        Ok(Self {
            kind: AdjustmentKind::CVariant(i),
            z,
            d_i: ds.d()[i],
        })
    }

    /// `ln L~(A) = ln(A)/4`, independent of z.
    pub fn remark1() -> Self {
        Self {
            kind: AdjustmentKind::Remark1,
            z: 0.0,
            d_i: 0.0,
        }
    }

    pub fn kind(&self) -> AdjustmentKind {
        self.kind
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// `ln L~(a)`.
    pub fn log_value(&self, a: f64) -> f64 {
        match self.kind {
            AdjustmentKind::None => 0.0,
            AdjustmentKind::Nas => 0.25 * (1.0 + self.z * self.z) * a.ln(),
            AdjustmentKind::CVariant(_) => {
                let z2 = self.z * self.z;
                0.25 * (1.0 + z2) * a.ln() + 0.25 * (7.0 - z2) * (a + self.d_i).ln()
            }
            AdjustmentKind::Remark1 => 0.25 * a.ln(),
        }
    }

    /// `d/dA ln L~(a)`.
    pub fn log_deriv(&self, a: f64) -> f64 {
        match self.kind {
            AdjustmentKind::None => 0.0,
            AdjustmentKind::Nas => 0.25 * (1.0 + self.z * self.z) / a,
            AdjustmentKind::CVariant(_) => {
                let z2 = self.z * self.z;
                0.25 * (1.0 + z2) / a + 0.25 * (7.0 - z2) / (a + self.d_i)
            }
            AdjustmentKind::Remark1 => 0.25 / a,
        }
    }
}

/// Residual log-likelihood
/// `-1/2 [ ln|X'V^-1 X| + ln|V| + y'Py ]` at `V = diag(a + D_i)`, up to
/// the additive constant noted in the module docs. Defined for `a >= 0`
/// since every `D_i > 0`.
pub fn residual_loglik(ds: &SmallAreaDataset, a: f64) -> Result<f64> {
    let parts = gls_parts(ds, a)?;
    Ok(-0.5 * (parts.ln_det_g + parts.ln_det_v + parts.y_py))
}

/// Analytic `d/dA` of `residual_loglik`, via
/// `d ln|V| = tr(V^-1)`, `d ln|X'V^-1 X| = -tr((X'V^-1 X)^-1 X'V^-2 X)`,
/// and `d y'Py = -y'P^2 y`.
pub fn residual_score(ds: &SmallAreaDataset, a: f64) -> Result<f64> {
    let parts = gls_parts(ds, a)?;
    let p = ds.p();
    let mut xv2x = DMatrix::<f64>::zeros(p, p);
    for i in 0..ds.m() {
        let wi2 = parts.w[i] * parts.w[i];
        for r in 0..p {
            for c in 0..p {
                xv2x[(r, c)] += wi2 * ds.x()[(i, r)] * ds.x()[(i, c)];
            }
        }
    }
    let solved = parts.chol.solve(&xv2x);
    let trace: f64 = (0..p).map(|j| solved[(j, j)]).sum();
    let sum_w: f64 = parts.w.iter().sum();
    let y_p2y: f64 = parts.py.iter().map(|r| r * r).sum();
    Ok(0.5 * (trace - sum_w + y_p2y))
}

/// Adjusted log-profile `ln L~(a) + ln L_RE(a|y)`.
pub fn adjusted_profile(ds: &SmallAreaDataset, factor: &AdjustmentFactor, a: f64) -> Result<f64> {
    Ok(factor.log_value(a) + residual_loglik(ds, a)?)
}

/// `d/dA` of the adjusted log-profile.
pub fn adjusted_profile_score(
    ds: &SmallAreaDataset,
    factor: &AdjustmentFactor,
    a: f64,
) -> Result<f64> {
    Ok(factor.log_deriv(a) + residual_score(ds, a)?)
}

/// Left side of the exact second-order pairing equation
/// `(A + D_i) d ln L~/dA + c* - 2 D_i / A`; zero (up to the asymptotic
/// slack) characterizes factor/c* pairs whose interval is second-order
/// correct. See also [`adjustment_equation_residual`] for the structured
/// decomposition that the NAS and C-variant pairings zero exactly.
pub fn score_equation_residual(
    ds: &SmallAreaDataset,
    factor: &AdjustmentFactor,
    a: f64,
    c_star: f64,
    i: usize,
) -> Result<f64> {
    if !(a > 0.0) {
        return Err(FhError::Domain(format!(
            "score equation requires A > 0 (2 D_i/A is singular at A = {a})"
        )));
    }
    let d = ds.d()[i];
    Ok((a + d) * factor.log_deriv(a) + c_star - 2.0 * d / a)
}

/// Residual of the adjustment-factor differential relation
/// `d ln L~/dA - (7 - z^2 - 4 c*) / (4 (A + D_i)) - (1 + z^2) / (4 A)`.
/// Identically zero for the pairings (NAS, c* = (7-z^2)/4),
/// (C-variant(i), c* = 0) and (A^(1/4), c* = 7/4 + z^2 D_i / (4A)).
pub fn adjustment_equation_residual(
    ds: &SmallAreaDataset,
    factor: &AdjustmentFactor,
    a: f64,
    c_star: f64,
    i: usize,
    z: f64,
) -> Result<f64> {
    if !(a > 0.0) {
        return Err(FhError::Domain(format!(
            "adjustment equation requires A > 0, got {a}"
        )));
    }
    let d = ds.d()[i];
    let z2 = z * z;
    Ok(factor.log_deriv(a) - (7.0 - z2 - 4.0 * c_star) / (4.0 * (a + d)) - (1.0 + z2) / (4.0 * a))
}
