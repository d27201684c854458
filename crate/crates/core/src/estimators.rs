//! Maximization of (adjusted) residual likelihoods over the model
//! variance, existence predicates, the balanced-case closed form, and
//! Monte Carlo moment diagnostics for the estimators.
//!
//! The search contract is deliberately conservative: existence of an
//! interior maximizer is guaranteed by theory, unimodality is not (except
//! in the balanced case), so the maximizer brackets every local maximum of
//! a coarse log-spaced grid and refines each with golden-section search.

use rand::RngExt;
use rayon::prelude::*;

use crate::error::{FhError, Result};
use crate::likelihood::{adjusted_profile, adjusted_profile_score, AdjustmentFactor, AdjustmentKind};
use crate::model::{gls_beta, ModelFit, SmallAreaDataset};
use crate::streams::replicate_area_rng;

/// Search configuration for the 1-D maximization over A.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Upper search bound; `None` resolves to
    /// `100 * (max_i D_i + sample variance of y)` per dataset.
    pub a_max: Option<f64>,
    /// Absolute bracket tolerance on A.
    pub abs_tol: f64,
    /// Iteration cap for each golden-section refinement.
    pub max_iter: usize,
    /// Number of points in the bracketing grid.
    pub grid_points: usize,
    /// REML estimates below this are truncated up to it (the adjusted
    /// estimators are interior by construction and never truncated).
    pub truncation_floor: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            a_max: None,
            abs_tol: 1e-8,
            max_iter: 200,
            grid_points: 200,
            truncation_floor: 0.01,
        }
    }
}

impl SearchConfig {
    pub fn resolve_a_max(&self, ds: &SmallAreaDataset) -> f64 {
        self.a_max.unwrap_or_else(|| default_a_max(ds))
    }
}

/// Default upper bound for the variance search.
pub fn default_a_max(ds: &SmallAreaDataset) -> f64 {
    let max_d = ds.d().iter().cloned().fold(0.0_f64, f64::max);
    let m = ds.m() as f64;
    let mean = ds.y().iter().sum::<f64>() / m;
    let var = if ds.m() > 1 {
        ds.y().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    100.0 * (max_d + var)
}

/// An estimate of the model variance A.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    pub a_hat: f64,
    pub method: AdjustmentKind,
    pub converged: bool,
    /// True only for REML when the unadjusted maximizer fell below the
    /// truncation floor and was pulled up to it.
    pub truncated: bool,
    /// Adjusted log-profile value at the returned `a_hat` (for a
    /// truncated REML estimate this is the value at the floor).
    pub objective_at_opt: f64,
    pub iterations: usize,
    /// Whether the factor's existence condition held for this dataset;
    /// a violation is a warning, not a hard error.
    pub existence_ok: bool,
}

impl VarianceEstimate {
    /// GLS refit of the coefficients at this estimate.
    pub fn fit(&self, ds: &SmallAreaDataset) -> Result<ModelFit> {
        ModelFit::new(ds, self.a_hat, self.method)
    }
}

/// Existence condition for the NAS estimator: `m > p + (1 + z^2)/2`.
pub fn nas_existence_holds(m: usize, p: usize, z: f64) -> bool {
    (m as f64) > p as f64 + 0.5 * (1.0 + z * z)
}

/// Existence condition for the per-area (c)-variant estimator: `m > p + 4`.
pub fn c_variant_existence_holds(m: usize, p: usize) -> bool {
    m > p + 4
}

fn existence_ok(ds: &SmallAreaDataset, factor: &AdjustmentFactor) -> bool {
    match factor.kind() {
        AdjustmentKind::None => true,
        AdjustmentKind::Nas => nas_existence_holds(ds.m(), ds.p(), factor.z()),
        AdjustmentKind::CVariant(_) => c_variant_existence_holds(ds.m(), ds.p()),
        // A^(1/4) is the z = 0 member of the NAS family.
        AdjustmentKind::Remark1 => nas_existence_holds(ds.m(), ds.p(), 0.0),
    }
}

struct Golden {
    x: f64,
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Golden-section maximization on [lo, hi]. On plateaus ties break toward
/// the smaller abscissa, so the result is deterministic.
fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Golden {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iterations = 0;
    while hi - lo > tol && iterations < max_iter {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        iterations += 1;
    }
    let (x, value) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    Golden {
        x,
        value,
        iterations,
        converged: hi - lo <= tol,
    }
}

/// Derivative polish around a golden-section result. Comparison-based
/// search stalls at ~sqrt(machine eps) from the maximizer because the
/// objective is flat there; the analytic adjusted score still crosses
/// zero cleanly, so bisecting it recovers full precision. Returns `None`
/// when the score does not change sign around `x` (boundary maxima).
fn polish_with_score(
    ds: &SmallAreaDataset,
    factor: &AdjustmentFactor,
    x: f64,
    lo_bound: f64,
    hi_bound: f64,
    tol: f64,
) -> Option<f64> {
    let score = |a: f64| adjusted_profile_score(ds, factor, a).ok();
    let delta = (1e-4 * (1.0 + x.abs())).max(100.0 * tol);
    let mut lo = (x - delta).max(lo_bound);
    let mut hi = (x + delta).min(hi_bound);
    if !(hi > lo) {
        return None;
    }
    let slo = score(lo)?;
    let shi = score(hi)?;
    if !(slo > 0.0 && shi < 0.0) {
        return None;
    }
    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        match score(mid)? {
            s if s > 0.0 => lo = mid,
            _ => hi = mid,
        }
        if hi - lo < 1e-6 * tol {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Maximize the adjusted log-profile for `factor` over (0, A_max] (over
/// [0, A_max] for plain REML) and return the estimate.
///
/// REML maximizers below the truncation floor are returned at the floor
/// with `truncated = true`; the adjusted factors vanish at A = 0 in
/// likelihood scale, so their maximizers are interior and never truncated.
pub fn estimate_variance(
    ds: &SmallAreaDataset,
    factor: &AdjustmentFactor,
    cfg: &SearchConfig,
) -> Result<VarianceEstimate> {
    let a_max = cfg.resolve_a_max(ds);
    if !(a_max > 0.0) || !a_max.is_finite() {
        return Err(FhError::Domain(format!("invalid search bound A_max = {a_max}")));
    }
    let is_reml = factor.kind() == AdjustmentKind::None;
    let n = cfg.grid_points.max(8);

    let eval = |a: f64| -> f64 {
        match adjusted_profile(ds, factor, a) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };

    // Log-spaced bracketing grid, with A = 0 prepended for REML where the
    // objective is defined at the boundary.
    let a_lo = a_max * 1e-14;
    let ratio = (a_max / a_lo).ln() / (n - 1) as f64;
    let mut grid: Vec<f64> = Vec::with_capacity(n + 1);
    if is_reml {
        grid.push(0.0);
    }
    for k in 0..n {
        grid.push(a_lo * (ratio * k as f64).exp());
    }
    let values: Vec<f64> = grid.iter().map(|&a| eval(a)).collect();
    if values.iter().all(|v| !v.is_finite()) {
        return Err(FhError::SingularGls { a: a_max });
    }

    // Refine every grid-local maximum; keep the best (ties -> smallest A).
    let last = grid.len() - 1;
    let mut best: Option<Golden> = None;
    for i in 0..grid.len() {
        let left_ok = i == 0 || values[i] >= values[i - 1];
        let right_ok = i == last || values[i] >= values[i + 1];
        if !(left_ok && right_ok) || !values[i].is_finite() {
            continue;
        }
        let lo = if i == 0 { grid[0] } else { grid[i - 1] };
        let hi = if i == last { grid[last] } else { grid[i + 1] };
        let refined = if hi > lo {
            golden_section_max(eval, lo, hi, cfg.abs_tol, cfg.max_iter)
        } else {
            Golden {
                x: grid[i],
                value: values[i],
                iterations: 0,
                converged: true,
            }
        };
        best = match best {
            None => Some(refined),
            Some(cur) => {
                if refined.value > cur.value
                    || (refined.value == cur.value && refined.x < cur.x)
                {
                    Some(refined)
                } else {
                    Some(cur)
                }
            }
        };
    }
    let winner = best.ok_or(FhError::SingularGls { a: a_max })?;
    if !winner.converged {
        return Err(FhError::NoConvergence {
            max_iter: cfg.max_iter,
            lo: (winner.x - cfg.abs_tol).max(0.0),
            hi: winner.x + cfg.abs_tol,
        });
    }

    let mut a_hat = winner.x;
    let mut objective_at_opt = winner.value;
    if let Some(polished) = polish_with_score(ds, factor, a_hat, 0.0, a_max, cfg.abs_tol) {
        let value = eval(polished);
        if value >= winner.value - 1e-9 * (1.0 + winner.value.abs()) {
            a_hat = polished;
            objective_at_opt = value.max(winner.value);
        }
    }
    let mut truncated = false;
    if is_reml && a_hat < cfg.truncation_floor {
        a_hat = cfg.truncation_floor;
        truncated = true;
        objective_at_opt = eval(a_hat);
    }
    Ok(VarianceEstimate {
        a_hat,
        method: factor.kind(),
        converged: winner.converged,
        truncated,
        objective_at_opt,
        iterations: winner.iterations,
        existence_ok: existence_ok(ds, factor),
    })
}

/// Residual sum of squares `y'My` with `M = I - X(X'X)^-1 X'`.
pub fn residual_sum_of_squares(ds: &SmallAreaDataset) -> Result<f64> {
    // OLS residuals, computed through the GLS path with equal weights,
    // which is exact because all D_i are rescaled identically.
    let beta = ols_beta(ds)?;
    Ok((0..ds.m())
        .map(|i| {
            let r = ds.y()[i] - ds.xdot(i, &beta);
            r * r
        })
        .sum())
}

fn ols_beta(ds: &SmallAreaDataset) -> Result<nalgebra::DVector<f64>> {
    // A -> per-area D_i all equal 1 corresponds to OLS; reuse gls_beta on
    // a unit-variance clone of the design.
    let unit = SmallAreaDataset::from_parts(
        ds.ids().to_vec(),
        ds.y().to_vec(),
        vec![1.0; ds.m()],
        ds.x().clone(),
    )?;
    gls_beta(&unit, 0.0)
}

/// Unique positive root of the balanced-case NAS estimating equation
/// `-2 {m - p - (1+z^2)/2} A^2 + 2 {y'My - (m - p - 1 - z^2) D} A + (1+z^2) D^2 = 0`,
/// solved by the numerically stable quadratic formula. Requires
/// `m > p + (1+z^2)/2`.
pub fn balanced_nas_root(y_my: f64, m: usize, p: usize, d: f64, z: f64) -> Result<f64> {
    if !nas_existence_holds(m, p, z) {
        return Err(FhError::Domain(format!(
            "balanced NAS root requires m > p + (1+z^2)/2, got m = {m}, p = {p}, z = {z}"
        )));
    }
    let z2 = z * z;
    let qa = -2.0 * (m as f64 - p as f64 - 0.5 * (1.0 + z2));
    let qb = 2.0 * (y_my - (m as f64 - p as f64 - 1.0 - z2) * d);
    let qc = (1.0 + z2) * d * d;
    // qa < 0 and qc > 0, so the roots straddle zero; take the positive one.
    let disc = qb * qb - 4.0 * qa * qc;
    debug_assert!(disc > 0.0);
    let sq = disc.sqrt();
    let q = -0.5 * (qb + qb.signum() * sq);
    let r1 = q / qa;
    let r2 = qc / q;
    let root = if r1 > 0.0 { r1 } else { r2 };
    debug_assert!(root > 0.0);
    Ok(root)
}

/// Closed-form NAS estimate in the balanced case (all `D_i` equal); the
/// oracle for `estimate_variance` with the NAS factor.
pub fn balanced_nas_closed_form(ds: &SmallAreaDataset, z: f64) -> Result<f64> {
    let d0 = ds.d()[0];
    if ds
        .d()
        .iter()
        .any(|&d| (d - d0).abs() > 1e-12 * d0.max(1.0))
    {
        return Err(FhError::Domain(
            "balanced closed form requires all sampling variances equal".into(),
        ));
    }
    let y_my = residual_sum_of_squares(ds)?;
    balanced_nas_root(y_my, ds.m(), ds.p(), d0, z)
}

/// Monte Carlo moment diagnostics for a variance estimator, against the
/// large-m predictions `E[A^ - A] ~ (2/tr V^-2) d ln L~/dA` and
/// `E[(A^ - A)^2] ~ 2/tr V^-2`.
#[derive(Debug, Clone)]
pub struct MomentDiagnostics {
    pub n_reps: usize,
    /// Mean of `A^ - A_true` and its Monte Carlo standard error.
    pub bias: f64,
    pub bias_se: f64,
    /// Sample variance of `A^` and its Monte Carlo standard error.
    pub variance: f64,
    pub variance_se: f64,
    /// Mean of `(A^ - A_true)^2` and its Monte Carlo standard error.
    pub second_moment: f64,
    pub second_moment_se: f64,
    /// `(2/tr V^-2) d ln L~/dA` at `A_true`.
    pub predicted_bias: f64,
    /// `2/tr V^-2` at `A_true`.
    pub predicted_dispersion: f64,
}

/// Simulate the model at the dataset's design with coefficients fixed at
/// the GLS fit for `a_true`, re-estimate A per replicate, and summarize
/// the deviations. Results are a deterministic function of
/// `(seed, n_reps)` regardless of thread count: each (replicate, area)
/// pair draws from its own counter-derived RNG stream.
pub fn moment_diagnostics(
    ds: &SmallAreaDataset,
    factor: &AdjustmentFactor,
    a_true: f64,
    n_reps: usize,
    seed: u64,
    cfg: &SearchConfig,
) -> Result<MomentDiagnostics> {
    if n_reps < 2 {
        return Err(FhError::Domain("need at least 2 replicates".into()));
    }
    let beta = gls_beta(ds, a_true)?;
    let xb: Vec<f64> = (0..ds.m()).map(|i| ds.xdot(i, &beta)).collect();
    let sqrt_a = a_true.sqrt();

    let a_hats: Result<Vec<f64>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut y = vec![0.0; ds.m()];
            for i in 0..ds.m() {
                let mut rng = replicate_area_rng(seed, rep as u64, i as u64);
                let n1: f64 = rng.sample(rand_distr::StandardNormal);
                let n2: f64 = rng.sample(rand_distr::StandardNormal);
                let theta = xb[i] + sqrt_a * n1;
                y[i] = theta + ds.d()[i].sqrt() * n2;
            }
            let sim = ds.with_y(y)?;
            Ok(estimate_variance(&sim, factor, cfg)?.a_hat)
        })
        .collect();
    let a_hats = a_hats?;

    let n = n_reps as f64;
    let devs: Vec<f64> = a_hats.iter().map(|a| a - a_true).collect();
    let bias = devs.iter().sum::<f64>() / n;
    let var_dev = devs.iter().map(|d| (d - bias) * (d - bias)).sum::<f64>() / (n - 1.0);
    let bias_se = (var_dev / n).sqrt();

    let mean_a = a_hats.iter().sum::<f64>() / n;
    let variance = a_hats
        .iter()
        .map(|a| (a - mean_a) * (a - mean_a))
        .sum::<f64>()
        / (n - 1.0);
    let m4 = a_hats
        .iter()
        .map(|a| (a - mean_a).powi(4))
        .sum::<f64>()
        / n;
    let variance_se = ((m4 - variance * variance).max(0.0) / n).sqrt();

    let sq: Vec<f64> = devs.iter().map(|d| d * d).collect();
    let second_moment = sq.iter().sum::<f64>() / n;
    let var_sq = sq
        .iter()
        .map(|s| (s - second_moment) * (s - second_moment))
        .sum::<f64>()
        / (n - 1.0);
    let second_moment_se = (var_sq / n).sqrt();

    let tr_v2: f64 = ds.d().iter().map(|d| (a_true + d).powi(-2)).sum();
    Ok(MomentDiagnostics {
        n_reps,
        bias,
        bias_se,
        variance,
        variance_se,
        second_moment,
        second_moment_se,
        predicted_bias: 2.0 / tr_v2 * factor.log_deriv(a_true),
        predicted_dispersion: 2.0 / tr_v2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const Z95: f64 = 1.959963984540054;

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

    fn balanced_dataset(rng: &mut ChaCha8Rng, m: usize, d: f64, spread: f64) -> SmallAreaDataset {
        let ids = (1..=m).map(|i| i.to_string()).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-spread..spread)).collect();
        let x = DMatrix::from_fn(m, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        SmallAreaDataset::from_parts(ids, y, vec![d; m], x).unwrap()
    }

    /// Exhaustive grid-plus-refinement oracle, independent of the
    /// production bracketing logic.
    fn grid_oracle(ds: &SmallAreaDataset, factor: &AdjustmentFactor, a_max: f64) -> f64 {
        let n = 100_000;
        let lo = a_max * 1e-12;
        let ratio = (a_max / lo).ln() / (n - 1) as f64;
        let mut best_i = 0;
        let mut best_v = f64::NEG_INFINITY;
        let mut xs = Vec::with_capacity(n);
        for k in 0..n {
            let a = lo * (ratio * k as f64).exp();
            xs.push(a);
            let v = adjusted_profile(ds, factor, a).unwrap_or(f64::NEG_INFINITY);
            if v > best_v {
                best_v = v;
                best_i = k;
            }
        }
        let bl = xs[best_i.saturating_sub(1)];
        let bh = xs[(best_i + 1).min(n - 1)];
        // Ternary refinement on the winning bracket.
        let (mut lo, mut hi) = (bl, bh);
        for _ in 0..300 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            let f1 = adjusted_profile(ds, factor, m1).unwrap();
            let f2 = adjusted_profile(ds, factor, m2).unwrap();
            if f1 >= f2 {
                hi = m2;
            } else {
                lo = m1;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn existence_predicates() {
        assert!(nas_existence_holds(15, 2, Z95)); // 15 > 4.4208
        assert!(!nas_existence_holds(4, 2, Z95));
        assert!(nas_existence_holds(3, 2, 0.0)); // m > p + 0.5
        assert!(!nas_existence_holds(2, 2, 0.0));
        assert!(c_variant_existence_holds(15, 2));
        assert!(!c_variant_existence_holds(6, 2));
        assert!(c_variant_existence_holds(7, 2)); // strict inequality
    }

    #[test]
    fn balanced_nas_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(307);
        for _ in 0..10 {
            let ds = balanced_dataset(&mut rng, 15, 1.0, 3.0);
            let closed = balanced_nas_closed_form(&ds, Z95).unwrap();
            let cfg = SearchConfig {
                abs_tol: 1e-10,
                ..SearchConfig::default()
            };
            let est = estimate_variance(&ds, &AdjustmentFactor::nas(Z95), &cfg).unwrap();
            assert!(
                (est.a_hat - closed).abs() < 1e-8,
                "numeric {} vs closed {}",
                est.a_hat,
                closed
            );
            assert!(est.a_hat > 0.0);
            assert!(!est.truncated);
        }
    }

    #[test]
    fn depressed_quadratic_root() {
        // Middle coefficient zero: y'My = (m - p - 1 - z^2) D.
        let (m, p, d, z) = (15usize, 2usize, 1.0, Z95);
        let z2 = z * z;
        let y_my = (m as f64 - p as f64 - 1.0 - z2) * d;
        let root = balanced_nas_root(y_my, m, p, d, z).unwrap();
        let expect = ((1.0 + z2) * d * d / (2.0 * (m as f64 - p as f64 - 0.5 * (1.0 + z2)))).sqrt();
        assert!((root - expect).abs() < 1e-12);
    }

    #[test]
    fn closed_form_rejects_unbalanced_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(317);
        let ds = random_dataset(&mut rng, 10, 2);
        assert!(balanced_nas_closed_form(&ds, Z95).is_err());
    }

    #[test]
    fn quadratic_root_positive_whenever_condition_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(311);
        for _ in 0..200 {
            let m = rng.random_range(5..50);
            let p = rng.random_range(1..3);
            let z = rng.random_range(0.5..2.5);
            if !nas_existence_holds(m, p, z) {
                continue;
            }
            let d = rng.random_range(0.1..10.0);
            let y_my = rng.random_range(0.0..50.0);
            let root = balanced_nas_root(y_my, m, p, d, z).unwrap();
            assert!(root > 0.0);
        }
    }

    #[test]
    fn nas_root_monotone_in_residual_sum() {
        let (m, p, d, z) = (15usize, 2usize, 1.0, Z95);
        let mut prev = 0.0;
        for k in 0..40 {
            let y_my = 0.5 + k as f64;
            let root = balanced_nas_root(y_my, m, p, d, z).unwrap();
            assert!(root >= prev);
            prev = root;
        }
    }

    #[test]
    fn matches_grid_oracle_on_unbalanced_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(313);
        let ds = random_dataset(&mut rng, 8, 2);
        let a_max = default_a_max(&ds);
        let factors = [
            AdjustmentFactor::reml(),
            AdjustmentFactor::nas(Z95),
            AdjustmentFactor::c_variant(&ds, 3, Z95).unwrap(),
            AdjustmentFactor::remark1(),
        ];
        for factor in &factors {
            let est = estimate_variance(&ds, factor, &SearchConfig::default()).unwrap();
            let oracle = grid_oracle(&ds, factor, a_max);
            let scale = 1.0 + est.a_hat.abs();
            assert!(
                (est.a_hat - oracle).abs() <= 1e-6 * scale,
                "{:?}: {} vs oracle {}",
                factor.kind(),
                est.a_hat,
                oracle
            );
        }
    }

    #[test]
    fn reml_truncates_to_floor() {
        // Data with essentially no between-area variance pushes the REML
        // maximizer to the boundary.
        let m = 15;
        let ids = (1..=m).map(|i| i.to_string()).collect();
        let y: Vec<f64> = (0..m).map(|i| 1e-4 * i as f64).collect();
        let ds = SmallAreaDataset::from_parts(
            ids,
            y,
            vec![1.0; m],
            DMatrix::from_element(m, 1, 1.0),
        )
        .unwrap();
        let est = estimate_variance(&ds, &AdjustmentFactor::reml(), &SearchConfig::default())
            .unwrap();
        assert!(est.truncated);
        assert_eq!(est.a_hat, 0.01);
        // The NAS estimate on the same data stays interior and positive.
        let nas = estimate_variance(&ds, &AdjustmentFactor::nas(Z95), &SearchConfig::default())
            .unwrap();
        assert!(nas.a_hat > 0.0);
        assert!(!nas.truncated);
    }

    #[test]
    fn existence_flag_reports_violations() {
        let mut rng = ChaCha8Rng::seed_from_u64(331);
        let ds = random_dataset(&mut rng, 5, 2); // m = 5 < p + 4 + 1
        let est = estimate_variance(
            &ds,
            &AdjustmentFactor::c_variant(&ds, 0, Z95).unwrap(),
            &SearchConfig::default(),
        )
        .unwrap();
        assert!(!est.existence_ok);
        let ds2 = random_dataset(&mut rng, 15, 2);
        let est2 = estimate_variance(
            &ds2,
            &AdjustmentFactor::c_variant(&ds2, 0, Z95).unwrap(),
            &SearchConfig::default(),
        )
        .unwrap();
        assert!(est2.existence_ok);
    }

    #[test]
    fn moment_diagnostics_match_theory_smoke() {
        // Small but meaningful check; the acceptance suite runs the full
        // m = 200 version.
        let mut rng = ChaCha8Rng::seed_from_u64(337);
        let ds = balanced_dataset(&mut rng, 60, 1.0, 2.0);
        let diag = moment_diagnostics(
            &ds,
            &AdjustmentFactor::nas(Z95),
            1.0,
            400,
            9001,
            &SearchConfig::default(),
        )
        .unwrap();
        assert!(
            (diag.bias - diag.predicted_bias).abs() < 4.0 * diag.bias_se,
            "bias {} vs predicted {} (se {})",
            diag.bias,
            diag.predicted_bias,
            diag.bias_se
        );
        assert!(
            (diag.variance - diag.predicted_dispersion).abs() < 4.0 * diag.variance_se,
            "variance {} vs predicted {} (se {})",
            diag.variance,
            diag.predicted_dispersion,
            diag.variance_se
        );
    }

    #[test]
    fn moment_diagnostics_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(349);
        let ds = balanced_dataset(&mut rng, 20, 1.0, 2.0);
        let run = || {
            moment_diagnostics(
                &ds,
                &AdjustmentFactor::nas(Z95),
                1.0,
                50,
                7,
                &SearchConfig::default(),
            )
            .unwrap()
        };
        let d1 = run();
        let d2 = run();
        assert_eq!(d1.bias.to_bits(), d2.bias.to_bits());
        assert_eq!(d1.variance.to_bits(), d2.variance.to_bits());
    }
}
