//! Confidence interval constructors: Direct, Cox, Traditional, calibrated
//! Traditional (CT), NAS0, the per-area (c)-variant, the branching NAS
//! interval, the z-free Remark-1 variant, and the second-order coverage
//! expansion diagnostic.
//!
//! Every interval has the form `center +/- q * s` where `center` is a
//! predictor of the area mean, `s` an uncertainty measure, and `q` a
//! percentile point. The branching NAS interval uses the NAS0 construction
//! on the branch set `S = { i : g1 + g2 + (7-z^2)/4 g3 < D_i }` (evaluated
//! at the NAS variance estimate) and falls back to the (c)-variant
//! interval elsewhere, which keeps its length strictly below the direct
//! interval's in both branches.

use statrs::distribution::ContinuousCDF;

use crate::error::{FhError, Result};
use crate::estimators::{
    c_variant_existence_holds, estimate_variance, nas_existence_holds, SearchConfig,
    VarianceEstimate,
};
use crate::likelihood::AdjustmentFactor;
use crate::model::{eblup, ModelFit, SmallAreaDataset};
use crate::mse::{c_star_lower_bound, mse_components, MseComponents};

/// A nominal confidence level `1 - alpha` together with the upper
/// `alpha/2` standard normal quantile.
#[derive(Debug, Clone, Copy)]
pub struct NominalLevel {
    alpha: f64,
    z: f64,
}

impl NominalLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(FhError::Domain(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        let target = 1.0 - alpha / 2.0;
        let mut z = statrs::distribution::Normal::standard().inverse_cdf(target);
        // Newton polish so that Phi(z) matches the target to ~1e-15.
        for _ in 0..3 {
            z -= (std_normal_cdf(z) - target) / std_normal_pdf(z);
        }
        Ok(Self { alpha, z })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// The non-area-specific `c* = (7 - z^2)/4`.
    pub fn nas_c_star(&self) -> f64 {
        0.25 * (7.0 - self.z * self.z)
    }
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    statrs::distribution::Normal::standard().cdf(x)
}

/// Interval construction methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntervalMethod {
    Direct,
    CoxRe,
    TRe,
    CtRe,
    Nas0,
    CVariant,
    Nas,
    Remark1,
}

impl IntervalMethod {
    /// Display label matching the usual table headers.
    pub fn label(&self) -> &'static str {
        match self {
            IntervalMethod::Direct => "Direct",
            IntervalMethod::CoxRe => "Cox.Re",
            IntervalMethod::TRe => "T.Re",
            IntervalMethod::CtRe => "CT.Re",
            IntervalMethod::Nas0 => "NAS0",
            IntervalMethod::CVariant => "C",
            IntervalMethod::Nas => "NAS",
            IntervalMethod::Remark1 => "REMARK1",
        }
    }

    pub const ALL: [IntervalMethod; 8] = [
        IntervalMethod::Direct,
        IntervalMethod::CoxRe,
        IntervalMethod::TRe,
        IntervalMethod::CtRe,
        IntervalMethod::Nas0,
        IntervalMethod::CVariant,
        IntervalMethod::Nas,
        IntervalMethod::Remark1,
    ];
}

impl std::fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let token = match self {
            IntervalMethod::Direct => "direct",
            IntervalMethod::CoxRe => "cox",
            IntervalMethod::TRe => "t",
            IntervalMethod::CtRe => "ct",
            IntervalMethod::Nas0 => "nas0",
            IntervalMethod::CVariant => "c",
            IntervalMethod::Nas => "nas",
            IntervalMethod::Remark1 => "remark1",
        };
        write!(f, "{token}")
    }
}

impl std::str::FromStr for IntervalMethod {
    type Err = FhError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(IntervalMethod::Direct),
            "cox" | "cox.re" => Ok(IntervalMethod::CoxRe),
            "t" | "t.re" | "traditional" => Ok(IntervalMethod::TRe),
            "ct" | "ct.re" => Ok(IntervalMethod::CtRe),
            "nas0" => Ok(IntervalMethod::Nas0),
            "c" | "cvariant" => Ok(IntervalMethod::CVariant),
            "nas" => Ok(IntervalMethod::Nas),
            "remark1" => Ok(IntervalMethod::Remark1),
            other => Err(FhError::Domain(format!("unknown interval method '{other}'"))),
        }
    }
}

/// Which branch the composite NAS interval took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NasBranch {
    /// `i` in the branch set S: the NAS0 construction applies.
    Nas0Branch,
    /// Fallback to the per-area (c)-variant interval.
    CBranch,
}

impl std::fmt::Display for NasBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NasBranch::Nas0Branch => write!(f, "NAS0"),
            NasBranch::CBranch => write!(f, "C"),
        }
    }
}

/// One per-area confidence interval.
#[derive(Debug, Clone)]
pub struct IntervalResult {
    pub area_id: String,
    pub method: IntervalMethod,
    pub center: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
    /// Branch indicator, set only by the composite NAS constructor.
    pub branch: Option<NasBranch>,
    /// Variance estimate the interval was evaluated at (0 for Direct).
    pub a_used: f64,
    /// Percentile point actually used (z except for CT).
    pub q_used: f64,
    /// CT only: the calibration root-find failed and fell back to q = z.
    pub ct_fallback: bool,
    /// The factor's existence condition was violated for this dataset.
    pub existence_warning: bool,
}

impl IntervalResult {
    fn new(
        area_id: &str,
        method: IntervalMethod,
        center: f64,
        half_width: f64,
        a_used: f64,
        q_used: f64,
    ) -> Self {
        Self {
            area_id: area_id.to_string(),
            method,
            center,
            half_width,
            lower: center - half_width,
            upper: center + half_width,
            branch: None,
            a_used,
            q_used,
            ct_fallback: false,
            existence_warning: false,
        }
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }
}

/// Direct interval `y_i +/- z sqrt(D_i)`; exact coverage under the model.
pub fn direct_interval(ds: &SmallAreaDataset, i: usize, level: &NominalLevel) -> IntervalResult {
    let hw = level.z() * ds.d()[i].sqrt();
    IntervalResult::new(ds.id(i), IntervalMethod::Direct, ds.y()[i], hw, 0.0, level.z())
}

/// Cox interval `EBLUP +/- z sqrt(g1)` at the (truncated) REML fit.
pub fn cox_interval(
    ds: &SmallAreaDataset,
    fit: &ModelFit,
    i: usize,
    level: &NominalLevel,
) -> Result<IntervalResult> {
    let comps = mse_components(ds, fit.a_hat, i)?;
    let hw = level.z() * comps.g1.sqrt();
    Ok(IntervalResult::new(
        ds.id(i),
        IntervalMethod::CoxRe,
        eblup(ds, fit, i),
        hw,
        fit.a_hat,
        level.z(),
    ))
}

/// Traditional interval `EBLUP +/- z sqrt(g1 + g2 + 2 g3)` at the REML fit.
pub fn traditional_interval(
    ds: &SmallAreaDataset,
    fit: &ModelFit,
    i: usize,
    level: &NominalLevel,
) -> Result<IntervalResult> {
    let comps = mse_components(ds, fit.a_hat, i)?;
    let hw = level.z() * comps.traditional_measure().sqrt();
    Ok(IntervalResult::new(
        ds.id(i),
        IntervalMethod::TRe,
        eblup(ds, fit, i),
        hw,
        fit.a_hat,
        level.z(),
    ))
}

/// Calibrated percentile for the CT interval: the root `q` of
///
/// ```text
/// 2 Phi(q) - 1 + q phi(q) (g3/g1) {2 - 2 D_i / A^} = 1 - alpha
/// ```
///
/// (the coverage expansion at the REML fit with c* = 2), solved by
/// safeguarded bisection on `[z/4, 4z]`. Returns `(z, true)` when the
/// bracket holds no sign change.
fn ct_percentile(
    level: &NominalLevel,
    comps: &MseComponents,
    d_i: f64,
    a_hat: f64,
) -> (f64, bool) {
    let z = level.z();
    let target = 1.0 - level.alpha();
    let ratio = comps.g3 / comps.g1;
    let braces = 2.0 - 2.0 * d_i / a_hat;
    let g = |q: f64| 2.0 * std_normal_cdf(q) - 1.0 + q * std_normal_pdf(q) * ratio * braces - target;
    let (mut lo, mut hi) = (z / 4.0, 4.0 * z);
    let (glo, ghi) = (g(lo), g(hi));
    if glo == 0.0 {
        return (lo, false);
    }
    if ghi == 0.0 {
        return (hi, false);
    }
    if !(glo < 0.0 && ghi > 0.0 || glo > 0.0 && ghi < 0.0) {
        return (z, true);
    }
    let increasing = ghi > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return (mid, false);
        }
        if (gm > 0.0) == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    (0.5 * (lo + hi), false)
}

/// Calibrated traditional interval `EBLUP +/- q* sqrt(g1 + g2 + 2 g3)` at
/// the REML fit, with `q*` from [`ct_percentile`].
pub fn ct_interval(
    ds: &SmallAreaDataset,
    fit: &ModelFit,
    i: usize,
    level: &NominalLevel,
) -> Result<IntervalResult> {
    if !(fit.a_hat > 0.0) {
        return Err(FhError::Domain(format!(
            "CT interval requires a positive variance estimate, got {}",
            fit.a_hat
        )));
    }
    let comps = mse_components(ds, fit.a_hat, i)?;
    let (q, fallback) = ct_percentile(level, &comps, ds.d()[i], fit.a_hat);
    let hw = q * comps.traditional_measure().sqrt();
    let mut out = IntervalResult::new(
        ds.id(i),
        IntervalMethod::CtRe,
        eblup(ds, fit, i),
        hw,
        fit.a_hat,
        q,
    );
    out.ct_fallback = fallback;
    Ok(out)
}

/// NAS0 interval `EBLUP +/- z sqrt(g1 + g2 + (7-z^2)/4 g3)` at the NAS
/// variance estimate. Errors if the measure is inadmissible (possible
/// only when z^2 > 7 and c* falls at or below the admissible bound).
pub fn nas0_interval(
    ds: &SmallAreaDataset,
    nas_est: &VarianceEstimate,
    i: usize,
    level: &NominalLevel,
) -> Result<IntervalResult> {
    let a = nas_est.a_hat;
    let comps = mse_components(ds, a, i)?;
    let c_star = level.nas_c_star();
    let s2 = comps.with_c_star(c_star);
    if s2 <= 0.0 {
        return Err(FhError::Inadmissible {
            s2,
            c_star,
            lower_bound: c_star_lower_bound(ds, a, i)?,
        });
    }
    let fit = nas_est.fit(ds)?;
    let mut out = IntervalResult::new(
        ds.id(i),
        IntervalMethod::Nas0,
        eblup(ds, &fit, i),
        level.z() * s2.sqrt(),
        a,
        level.z(),
    );
    out.existence_warning = !nas_est.existence_ok;
    Ok(out)
}

/// Per-area (c)-variant interval `EBLUP +/- z sqrt(g1 + g2)` at the
/// maximizer of the area's own adjusted likelihood. Its half-width is
/// strictly below the direct interval's since `g1 + g2 < D_i`.
pub fn c_variant_interval(
    ds: &SmallAreaDataset,
    i: usize,
    level: &NominalLevel,
    cfg: &SearchConfig,
) -> Result<IntervalResult> {
    let factor = AdjustmentFactor::c_variant(ds, i, level.z())?;
    let est = estimate_variance(ds, &factor, cfg)?;
    let comps = mse_components(ds, est.a_hat, i)?;
    let fit = est.fit(ds)?;
    let mut out = IntervalResult::new(
        ds.id(i),
        IntervalMethod::CVariant,
        eblup(ds, &fit, i),
        level.z() * comps.blup_mse().sqrt(),
        est.a_hat,
        level.z(),
    );
    out.existence_warning = !est.existence_ok;
    Ok(out)
}

/// Remark-1 variant: EBLUP at the maximizer of `A^(1/4) L_RE` with the
/// A-dependent `c* = 7/4 + z^2 D_i / (4 A^)`.
pub fn remark1_interval(
    ds: &SmallAreaDataset,
    i: usize,
    level: &NominalLevel,
    cfg: &SearchConfig,
) -> Result<IntervalResult> {
    let est = estimate_variance(ds, &AdjustmentFactor::remark1(), cfg)?;
    let a = est.a_hat;
    let comps = mse_components(ds, a, i)?;
    let z2 = level.z() * level.z();
    let c_star = 7.0 / 4.0 + z2 * ds.d()[i] / (4.0 * a);
    let s2 = comps.with_c_star(c_star);
    if s2 <= 0.0 {
        return Err(FhError::Inadmissible {
            s2,
            c_star,
            lower_bound: c_star_lower_bound(ds, a, i)?,
        });
    }
    let fit = est.fit(ds)?;
    let mut out = IntervalResult::new(
        ds.id(i),
        IntervalMethod::Remark1,
        eblup(ds, &fit, i),
        level.z() * s2.sqrt(),
        a,
        level.z(),
    );
    out.existence_warning = !est.existence_ok;
    Ok(out)
}

/// The NAS variance estimate shared by all areas of a dataset.
pub fn nas_estimate(
    ds: &SmallAreaDataset,
    level: &NominalLevel,
    cfg: &SearchConfig,
) -> Result<VarianceEstimate> {
    estimate_variance(ds, &AdjustmentFactor::nas(level.z()), cfg)
}

/// Composite second-order efficient interval: NAS0 on the branch set S
/// (where the NAS0 measure stays below `D_i`), the (c)-variant interval
/// otherwise. One NAS optimization serves every area; the per-area
/// (c)-variant optimization runs only off the branch set.
pub fn nas_interval(
    ds: &SmallAreaDataset,
    i: usize,
    level: &NominalLevel,
    cfg: &SearchConfig,
) -> Result<IntervalResult> {
    let est = nas_estimate(ds, level, cfg)?;
    nas_interval_with(ds, &est, i, level, cfg)
}

/// As [`nas_interval`], reusing a precomputed NAS estimate.
pub fn nas_interval_with(
    ds: &SmallAreaDataset,
    nas_est: &VarianceEstimate,
    i: usize,
    level: &NominalLevel,
    cfg: &SearchConfig,
) -> Result<IntervalResult> {
    let comps = mse_components(ds, nas_est.a_hat, i)?;
    let s2 = comps.with_c_star(level.nas_c_star());
    if s2 < ds.d()[i] {
        let mut out = nas0_interval(ds, nas_est, i, level)?;
        out.method = IntervalMethod::Nas;
        out.branch = Some(NasBranch::Nas0Branch);
        Ok(out)
    } else {
        let mut out = c_variant_interval(ds, i, level, cfg)?;
        out.method = IntervalMethod::Nas;
        out.branch = Some(NasBranch::CBranch);
        Ok(out)
    }
}

/// Second-order predicted coverage from the expansion
///
/// ```text
/// 1 - alpha + z phi(z) (g3/g1) { (A + D_i) d ln L~/dA + c* - 2 D_i / A }
/// ```
///
/// evaluated at a trial `(factor, c*, A)`. The braces are the exact
/// pairing residual; see `likelihood::adjustment_equation_residual` for
/// the structured decomposition the NAS and C-variant pairings zero.
pub fn coverage_expansion_diagnostic(
    ds: &SmallAreaDataset,
    factor: &AdjustmentFactor,
    a: f64,
    i: usize,
    c_star: f64,
    level: &NominalLevel,
) -> Result<f64> {
    if !(a > 0.0) {
        return Err(FhError::Domain(format!(
            "coverage expansion requires A > 0, got {a}"
        )));
    }
    let comps = mse_components(ds, a, i)?;
    let d = ds.d()[i];
    let braces = (a + d) * factor.log_deriv(a) + c_star - 2.0 * d / a;
    let z = level.z();
    Ok(1.0 - level.alpha() + z * std_normal_pdf(z) * (comps.g3 / comps.g1) * braces)
}

/// Hard existence preconditions for interval construction on a dataset;
/// used by front ends that must fail fast rather than warn.
pub fn existence_precondition(
    ds: &SmallAreaDataset,
    method: IntervalMethod,
    level: &NominalLevel,
) -> Result<()> {
    let (m, p) = (ds.m(), ds.p());
    match method {
        IntervalMethod::Nas | IntervalMethod::Nas0 => {
            if !nas_existence_holds(m, p, level.z()) {
                return Err(FhError::ExistenceCondition(format!(
                    "NAS requires m > p + (1+z^2)/2 = {}, got m = {m}",
                    p as f64 + 0.5 * (1.0 + level.z() * level.z())
                )));
            }
        }
        IntervalMethod::CVariant => {
            if !c_variant_existence_holds(m, p) {
                return Err(FhError::ExistenceCondition(format!(
                    "(c)-variant requires m > p + 4 = {}, got m = {m}",
                    p + 4
                )));
            }
        }
        _ => {}
    }
    // The composite NAS interval may fall back to the (c)-variant branch.
    if method == IntervalMethod::Nas && !c_variant_existence_holds(m, p) {
        return Err(FhError::ExistenceCondition(format!(
            "NAS fallback branch requires m > p + 4 = {}, got m = {m}",
            p + 4
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::estimate_variance;
    use crate::likelihood::{adjustment_equation_residual, AdjustmentKind};
    use nalgebra::{DMatrix, DVector};
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn level95() -> NominalLevel {
        NominalLevel::new(0.05).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, m: usize, p: usize) -> SmallAreaDataset {
        let ids = (1..=m).map(|i| i.to_string()).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..4.0)).collect();
        let x = DMatrix::from_fn(m, p, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        SmallAreaDataset::from_parts(ids, y, d, x).unwrap()
    }

    fn reml_fit(ds: &SmallAreaDataset) -> ModelFit {
        estimate_variance(ds, &AdjustmentFactor::reml(), &SearchConfig::default())
            .unwrap()
            .fit(ds)
            .unwrap()
    }

    #[test]
    fn nominal_level_quantile_is_tight() {
        for alpha in [0.5, 0.2, 0.1, 0.05, 0.01, 0.001] {
            let level = NominalLevel::new(alpha).unwrap();
            let err = (std_normal_cdf(level.z()) - (1.0 - alpha / 2.0)).abs();
            assert!(err < 1e-12, "alpha = {alpha}: err = {err}");
        }
        assert!((NominalLevel::new(0.05).unwrap().z() - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn direct_interval_lengths_match_tables() {
        let level = level95();
        let mk = |d: f64| {
            let ds = SmallAreaDataset::from_parts(
                vec!["a".into()],
                vec![0.0],
                vec![d],
                DMatrix::from_element(1, 1, 1.0),
            )
            .unwrap();
            direct_interval(&ds, 0, &level).length()
        };
        assert!((mk(1.0) - 3.9199).abs() < 1e-4);
        assert!(((mk(20.0) * 100.0).round() / 100.0 - 17.53).abs() < 1e-12);
        assert!(((mk(2.0) * 100.0).round() / 100.0 - 5.54).abs() < 1e-12);
    }

    #[test]
    fn cox_interval_shrinkage_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(401);
        let ds = random_dataset(&mut rng, 10, 2);
        let level = level95();
        let i = 4;
        let d = ds.d()[i];
        // At the truncation floor the half-width collapses.
        let fit = ModelFit::new(&ds, 0.01, AdjustmentKind::None).unwrap();
        let iv = cox_interval(&ds, &fit, i, &level).unwrap();
        let expect = level.z() * (0.01 * d / (0.01 + d)).sqrt();
        assert!((iv.half_width - expect).abs() < 1e-12);
        // At A = D_i the half-width is z sqrt(D/2).
        let fit2 = ModelFit::new(&ds, d, AdjustmentKind::None).unwrap();
        let iv2 = cox_interval(&ds, &fit2, i, &level).unwrap();
        assert!((iv2.half_width - level.z() * (d / 2.0).sqrt()).abs() < 1e-12);
        // Always below the direct half-width.
        assert!(iv2.half_width < direct_interval(&ds, i, &level).half_width);
    }

    #[test]
    fn traditional_equals_c_star_two_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(409);
        let ds = random_dataset(&mut rng, 10, 2);
        let level = level95();
        let fit = reml_fit(&ds);
        for i in 0..ds.m() {
            let iv = traditional_interval(&ds, &fit, i, &level).unwrap();
            let s2 = crate::mse::uncertainty_measure(&ds, fit.a_hat, i, 2.0).unwrap();
            assert!((iv.half_width - level.z() * s2.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn traditional_approaches_direct_for_large_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(419);
        let ds = random_dataset(&mut rng, 10, 2);
        let level = level95();
        let fit = ModelFit::new(&ds, 1e9, AdjustmentKind::None).unwrap();
        for i in 0..ds.m() {
            let t = traditional_interval(&ds, &fit, i, &level).unwrap();
            let d = direct_interval(&ds, i, &level);
            assert!((t.half_width - d.half_width).abs() / d.half_width < 1e-4);
        }
    }

    #[test]
    fn ct_percentile_fixed_point_and_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(421);
        let ds = random_dataset(&mut rng, 12, 2);
        let level = level95();
        let i = 3;
        let d = ds.d()[i];
        // A^ = D_i: the braces vanish and q* = z.
        let fit = ModelFit::new(&ds, d, AdjustmentKind::None).unwrap();
        let iv = ct_interval(&ds, &fit, i, &level).unwrap();
        assert!((iv.q_used - level.z()).abs() < 1e-9, "q = {}", iv.q_used);
        assert!(!iv.ct_fallback);
        // Large A^: braces -> 2 > 0, so the calibrated point drops below z.
        let fit_hi = ModelFit::new(&ds, 1e4 * d, AdjustmentKind::None).unwrap();
        let iv_hi = ct_interval(&ds, &fit_hi, i, &level).unwrap();
        assert!(iv_hi.q_used < level.z());
        // Tiny A^ (truncation regime): braces very negative, q* > z.
        let fit_lo = ModelFit::new(&ds, 0.01, AdjustmentKind::None).unwrap();
        let iv_lo = ct_interval(&ds, &fit_lo, i, &level).unwrap();
        assert!(iv_lo.q_used > level.z());
    }

    #[test]
    fn nas0_has_the_stated_c_star_and_length_bound() {
        let level = level95();
        assert!((level.nas_c_star() - 0.7896).abs() < 5e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(431);
        for _ in 0..20 {
            let ds = random_dataset(&mut rng, 12, 2);
            let est = nas_estimate(&ds, &level, &SearchConfig::default()).unwrap();
            for i in 0..ds.m() {
                let iv = nas0_interval(&ds, &est, i, &level).unwrap();
                let bound =
                    level.z() * (ds.d()[i] * (1.0 + 0.5 * (7.0 - level.z() * level.z()))).sqrt();
                assert!(iv.half_width < bound);
            }
        }
    }

    #[test]
    fn c_variant_below_direct_and_area_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(433);
        let level = level95();
        let cfg = SearchConfig::default();
        // Unbalanced: estimates differ across distinct D_i groups.
        let ds = random_dataset(&mut rng, 8, 2);
        let mut a_by_area = Vec::new();
        for i in 0..ds.m() {
            let iv = c_variant_interval(&ds, i, &level, &cfg).unwrap();
            assert!(iv.half_width < direct_interval(&ds, i, &level).half_width);
            a_by_area.push(iv.a_used);
        }
        let spread = a_by_area
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            - a_by_area.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread > 1e-6, "expected area-specific estimates, spread {spread}");
        // Balanced: identical across areas.
        let ids = (1..=10).map(|i| i.to_string()).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = DMatrix::from_fn(10, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        let bal = SmallAreaDataset::from_parts(ids, y, vec![1.0; 10], x).unwrap();
        let a0 = c_variant_interval(&bal, 0, &level, &cfg).unwrap().a_used;
        for i in 1..bal.m() {
            let ai = c_variant_interval(&bal, i, &level, &cfg).unwrap().a_used;
            assert!((ai - a0).abs() < 1e-6);
        }
    }

    #[test]
    fn nas_branch_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(439);
        let level = level95();
        let cfg = SearchConfig::default();
        for _ in 0..20 {
            let ds = random_dataset(&mut rng, 12, 2);
            let est = nas_estimate(&ds, &level, &cfg).unwrap();
            for i in 0..ds.m() {
                let iv = nas_interval_with(&ds, &est, i, &level, &cfg).unwrap();
                let s2 = crate::mse::mse_components(&ds, est.a_hat, i)
                    .unwrap()
                    .with_c_star(level.nas_c_star());
                match iv.branch.unwrap() {
                    NasBranch::Nas0Branch => {
                        assert!(s2 < ds.d()[i]);
                        assert_eq!(iv.a_used, est.a_hat);
                        let sub = nas0_interval(&ds, &est, i, &level).unwrap();
                        assert_eq!(iv.half_width, sub.half_width);
                        assert_eq!(iv.center, sub.center);
                    }
                    NasBranch::CBranch => {
                        assert!(s2 >= ds.d()[i]);
                        let sub = c_variant_interval(&ds, i, &level, &cfg).unwrap();
                        assert_eq!(iv.half_width, sub.half_width);
                        assert_eq!(iv.center, sub.center);
                    }
                }
                // Both branches stay strictly below the direct interval.
                assert!(iv.half_width < direct_interval(&ds, i, &level).half_width);
            }
        }
    }

    #[test]
    fn nas_estimate_shared_across_areas() {
        let mut rng = ChaCha8Rng::seed_from_u64(443);
        let ds = random_dataset(&mut rng, 10, 2);
        let level = level95();
        let cfg = SearchConfig::default();
        let a: Vec<f64> = (0..ds.m())
            .map(|i| nas_interval(&ds, i, &level, &cfg).unwrap().a_used)
            .collect();
        // Areas on the NAS0 branch all report the single shared estimate.
        let shared: Vec<f64> = (0..ds.m())
            .filter(|&i| {
                nas_interval(&ds, i, &level, &cfg).unwrap().branch
                    == Some(NasBranch::Nas0Branch)
            })
            .map(|i| a[i])
            .collect();
        for w in shared.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn intervals_are_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(449);
        let ds = random_dataset(&mut rng, 12, 2);
        let level = level95();
        let cfg = SearchConfig::default();
        let b = DVector::from_column_slice(&[1.7, -2.3]);
        let y2: Vec<f64> = (0..ds.m()).map(|i| ds.y()[i] + ds.xdot(i, &b)).collect();
        let shifted = ds.with_y(y2).unwrap();

        let build = |data: &SmallAreaDataset, i: usize| -> Vec<IntervalResult> {
            let fit = reml_fit(data);
            vec![
                direct_interval(data, i, &level),
                cox_interval(data, &fit, i, &level).unwrap(),
                traditional_interval(data, &fit, i, &level).unwrap(),
                ct_interval(data, &fit, i, &level).unwrap(),
                nas_interval(data, i, &level, &cfg).unwrap(),
                c_variant_interval(data, i, &level, &cfg).unwrap(),
                remark1_interval(data, i, &level, &cfg).unwrap(),
            ]
        };
        for i in [0, 5, 11] {
            let base = build(&ds, i);
            let moved = build(&shifted, i);
            let shift = ds.xdot(i, &b);
            for (a, c) in base.iter().zip(moved.iter()) {
                assert!(
                    (c.center - a.center - shift).abs() < 1e-6 * (1.0 + a.center.abs()),
                    "{}: centers {} vs {}",
                    a.method.label(),
                    a.center,
                    c.center
                );
                assert!(
                    (c.half_width - a.half_width).abs() < 1e-6 * (1.0 + a.half_width),
                    "{}: half-widths {} vs {}",
                    a.method.label(),
                    a.half_width,
                    c.half_width
                );
            }
        }
    }

    #[test]
    fn coverage_expansion_matches_hand_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(457);
        let ds = random_dataset(&mut rng, 10, 2);
        let level = level95();
        let z = level.z();
        let i = 2;
        let d = ds.d()[i];
        for a in [0.4, 1.0, 3.0] {
            let comps = mse_components(&ds, a, i).unwrap();
            // Traditional pairing: REML factor, c* = 2, braces = 2 - 2D/A.
            let got = coverage_expansion_diagnostic(
                &ds,
                &AdjustmentFactor::reml(),
                a,
                i,
                2.0,
                &level,
            )
            .unwrap();
            let expect = 0.95
                + z * std_normal_pdf(z) * (comps.g3 / comps.g1) * (2.0 - 2.0 * d / a);
            assert!((got - expect).abs() < 1e-12);
            // At A = D the traditional correction vanishes exactly.
            let at_d = coverage_expansion_diagnostic(
                &ds,
                &AdjustmentFactor::reml(),
                d,
                i,
                2.0,
                &level,
            )
            .unwrap();
            assert!((at_d - 0.95).abs() < 1e-12);
            // The C-variant pairing zeroes the structured relation for
            // every A; the literal expansion braces equal
            // 2 + (z^2-7) D/(4A), reported as-is.
            let cv = AdjustmentFactor::c_variant(&ds, i, z).unwrap();
            let resid = adjustment_equation_residual(&ds, &cv, a, 0.0, i, z).unwrap();
            assert!(resid.abs() < 1e-12);
            let got_cv =
                coverage_expansion_diagnostic(&ds, &cv, a, i, 0.0, &level).unwrap();
            let braces = 2.0 + (z * z - 7.0) * d / (4.0 * a);
            let expect_cv = 0.95 + z * std_normal_pdf(z) * (comps.g3 / comps.g1) * braces;
            assert!((got_cv - expect_cv).abs() < 1e-12);
        }
        assert!(coverage_expansion_diagnostic(
            &ds,
            &AdjustmentFactor::reml(),
            0.0,
            i,
            2.0,
            &level
        )
        .is_err());
    }

    #[test]
    fn nas0_admissibility_beyond_z2_of_seven() {
        // At alpha = 0.001 the NAS0 c* = (7 - z^2)/4 is negative. With a
        // small enough variance estimate on a small dataset the measure
        // goes nonpositive and the constructor must refuse; at a moderate
        // estimate it stays admissible and proceeds.
        let level = NominalLevel::new(0.001).unwrap();
        assert!(level.z() * level.z() > 7.0);
        assert!(level.nas_c_star() < 0.0);
        let m = 9;
        let ids = (1..=m).map(|i| i.to_string()).collect();
        let ds = SmallAreaDataset::from_parts(
            ids,
            vec![0.5; m],
            vec![1.0; m],
            DMatrix::from_element(m, 1, 1.0),
        )
        .unwrap();
        let fake = |a_hat: f64| VarianceEstimate {
            a_hat,
            method: AdjustmentKind::Nas,
            converged: true,
            truncated: false,
            objective_at_opt: 0.0,
            iterations: 0,
            existence_ok: true,
        };
        let err = nas0_interval(&ds, &fake(1e-4), 0, &level).unwrap_err();
        assert!(matches!(err, FhError::Inadmissible { .. }), "{err}");
        let ok = nas0_interval(&ds, &fake(1.0), 0, &level).unwrap();
        assert!(ok.half_width > 0.0);
    }

    #[test]
    fn cox_half_width_always_below_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(463);
        let level = level95();
        for _ in 0..20 {
            let ds = random_dataset(&mut rng, 10, 2);
            let fit = reml_fit(&ds);
            for i in 0..ds.m() {
                let cox = cox_interval(&ds, &fit, i, &level).unwrap();
                assert!(cox.half_width < direct_interval(&ds, i, &level).half_width);
            }
        }
    }

    #[test]
    fn existence_preconditions_fail_fast_on_tiny_datasets() {
        let mut rng = ChaCha8Rng::seed_from_u64(461);
        let ds = random_dataset(&mut rng, 4, 2);
        let level = level95();
        assert!(existence_precondition(&ds, IntervalMethod::Nas, &level).is_err());
        assert!(existence_precondition(&ds, IntervalMethod::CVariant, &level).is_err());
        assert!(existence_precondition(&ds, IntervalMethod::Direct, &level).is_ok());
        let big = random_dataset(&mut rng, 15, 2);
        assert!(existence_precondition(&big, IntervalMethod::Nas, &level).is_ok());
    }
}
