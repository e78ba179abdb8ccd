//! Finite-size-scaling analysis.
//!
//! Each system size contributes one minimum of its error-vs-activity curve.
//! Minimum location and height are regressed against size on log-log axes:
//!
//! ```text
//! x_min ~ L^(-1/nu)        y_min ~ L^(-gamma/nu)
//! ```
//!
//! so `nu = -1/s1` and `gamma = -s2 * nu` for fitted slopes `s1`, `s2`.
//! Uncertainties use first-order propagation and treat the two regressions
//! as independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveMinimum {
    pub x_min: f64,
    pub y_min: f64,
    /// Discrete argmin sits at an end of the curve.
    pub boundary_flag: bool,
    /// Points used by the parabola; 1 when the discrete minimum was kept.
    pub fit_window: usize,
    /// Index of the discrete argmin in the curve.
    pub argmin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaPoint {
    pub features: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub boundary_flag: bool,
    pub fit_window: usize,
    /// Standard error of the measured `y` at the discrete minimum, if known.
    pub y_stderr: Option<f64>,
}

impl MinimaPoint {
    pub fn new(features: usize, m: CurveMinimum, y_stderr: Option<f64>) -> Self {
        Self {
            features,
            x_min: m.x_min,
            y_min: m.y_min,
            boundary_flag: m.boundary_flag,
            fit_window: m.fit_window,
            y_stderr,
        }
    }
}

fn discrete_argmin(curve: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, p) in curve.iter().enumerate() {
        if p.1 < curve[best].1 {
            best = i;
        }
    }
    best
}

fn check_curve(curve: &[(f64, f64)]) -> Result<()> {
    if curve.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: curve.len(),
        });
    }
    if curve.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Domain("curve contains non-finite values".into()));
    }
    if curve.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Domain("curve must be sorted by x".into()));
    }
    Ok(())
}

/// Raw discrete minimum without refinement.
pub fn find_discrete_minimum(curve: &[(f64, f64)]) -> Result<CurveMinimum> {
    check_curve(curve)?;
    let i = discrete_argmin(curve);
    Ok(CurveMinimum {
        x_min: curve[i].0,
        y_min: curve[i].1,
        boundary_flag: i == 0 || i == curve.len() - 1,
        fit_window: 1,
        argmin: i,
    })
}

/// Least-squares `y = a x^2 + b x + c`, returned as `(a, b, c)`.
/// `x` is centred and scaled internally for conditioning.
fn fit_quadratic(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = points.len() as f64;
    let mid = points.iter().map(|p| p.0).sum::<f64>() / n;
    let scale = points
        .iter()
        .map(|p| (p.0 - mid).abs())
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return None;
    }
    // normal equations in t = (x - mid) / scale
    let mut m = [[0.0f64; 4]; 3];
    for &(x, y) in points {
        let t = (x - mid) / scale;
        let basis = [t * t, t, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += basis[r] * basis[c];
            }
            m[r][3] += basis[r] * y;
        }
    }
    let [qa, qb, qc] = solve3(m)?;
    // back to x: a t^2 + b t + c with t = (x - mid)/scale
    let a = qa / (scale * scale);
    let b = qb / scale - 2.0 * a * mid;
    let c = qc - qb * mid / scale + a * mid * mid;
    Some((a, b, c))
}

fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Locates the minimum of a curve sorted by `x`.
///
/// An interior discrete argmin is refined by a least-squares parabola over
/// `window` points centred on it (shrunk symmetrically when the curve is too
/// short on one side). The discrete point is kept when the parabola has no
/// upward curvature or its vertex leaves the window.
pub fn find_minimum(curve: &[(f64, f64)], window: usize) -> Result<CurveMinimum> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!(
            "minimum window must be odd and >= 3, got {window}"
        )));
    }
    let discrete = find_discrete_minimum(curve)?;
    if discrete.boundary_flag {
        return Ok(discrete);
    }
    let i = discrete.argmin;
    let half = (window / 2).min(i).min(curve.len() - 1 - i);
    let span = &curve[i - half..=i + half];
    let Some((a, b, c)) = fit_quadratic(span) else {
        return Ok(discrete);
    };
    if a <= 0.0 {
        return Ok(discrete);
    }
    let x0 = -b / (2.0 * a);
    let (lo, hi) = (span[0].0, span[span.len() - 1].0);
    if !(x0 >= lo && x0 <= hi) {
        return Ok(discrete);
    }
    Ok(CurveMinimum {
        x_min: x0,
        y_min: c - b * b / (4.0 * a),
        boundary_flag: false,
        fit_window: span.len(),
        argmin: i,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub amplitude: f64,
    pub stderr_exponent: f64,
    pub stderr_amplitude: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl PowerLawFit {
    pub fn eval(&self, size: f64) -> f64 {
        self.amplitude * size.powf(self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Height fit weighted by `(y / stderr_y)^2`, the inverse variance of `ln y`.
    Stderr,
}

/// OLS of `ln v` on `ln L`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    let weighted: Vec<(f64, f64, f64)> = points.iter().map(|&(l, v)| (l, v, 1.0)).collect();
    fit_weighted(&weighted)
}

/// Weighted least squares of `ln v` on `ln L`; weights are relative, the
/// residual variance sets the scale of the reported errors.
pub fn fit_power_law_weighted(points: &[(f64, f64)], weights: &[f64]) -> Result<PowerLawFit> {
    if points.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::Domain("weights must be positive and finite".into()));
    }
    let triples: Vec<(f64, f64, f64)> = points
        .iter()
        .zip(weights)
        .map(|(&(l, v), &w)| (l, v, w))
        .collect();
    fit_weighted(&triples)
}

fn fit_weighted(points: &[(f64, f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.0 > 0.0 && p.1 > 0.0 && p.0.is_finite() && p.1.is_finite()))
    {
        return Err(Error::Domain(format!(
            "power-law fit needs positive finite (L, v), got ({}, {})",
            p.0, p.1
        )));
    }
    // canonical order makes the result independent of input order
    let mut logs: Vec<(f64, f64, f64)> = points.iter().map(|&(l, v, w)| (l.ln(), v.ln(), w)).collect();
    logs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));

    let n = logs.len() as f64;
    let wsum: f64 = logs.iter().map(|p| p.2).sum();
    let xbar = logs.iter().map(|p| p.2 * p.0).sum::<f64>() / wsum;
    let ybar = logs.iter().map(|p| p.2 * p.1).sum::<f64>() / wsum;
    let sxx: f64 = logs.iter().map(|p| p.2 * (p.0 - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all sizes are equal; slope is undefined".into()));
    }
    let sxy: f64 = logs.iter().map(|p| p.2 * (p.0 - xbar) * (p.1 - ybar)).sum();
    let syy: f64 = logs.iter().map(|p| p.2 * (p.1 - ybar).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = logs
        .iter()
        .map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    // rescale relative weights so they sum to n
    let sigma2 = ssr / (n - 2.0) * (n / wsum);
    let sxx_n = sxx * n / wsum;
    let stderr_slope = (sigma2 / sxx_n).sqrt();
    let stderr_intercept = (sigma2 * (1.0 / n + xbar * xbar / sxx_n)).sqrt();
    let amplitude = intercept.exp();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ssr / syy };
    Ok(PowerLawFit {
        exponent: slope,
        amplitude,
        stderr_exponent: stderr_slope,
        stderr_amplitude: amplitude * stderr_intercept,
        r_squared,
        n_points: logs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub nu_bar: f64,
    pub nu_stderr: f64,
    pub gamma_bar: f64,
    pub gamma_stderr: f64,
    pub location: PowerLawFit,
    pub height: PowerLawFit,
    pub weighting: Weighting,
    pub warnings: Vec<String>,
}

pub fn extract_exponents(minima: &[MinimaPoint], weighting: Weighting) -> Result<Exponents> {
    let usable: Vec<&MinimaPoint> = minima.iter().filter(|m| !m.boundary_flag).collect();
    if usable.len() < 3 {
        return Err(Error::Boundary {
            usable: usable.len(),
        });
    }
    let loc_pts: Vec<(f64, f64)> = usable.iter().map(|m| (m.features as f64, m.x_min)).collect();
    let height_pts: Vec<(f64, f64)> = usable.iter().map(|m| (m.features as f64, m.y_min)).collect();
    let location = fit_power_law(&loc_pts)?;
    let height = match weighting {
        Weighting::Unweighted => fit_power_law(&height_pts)?,
        Weighting::Stderr => {
            let weights = usable
                .iter()
                .map(|m| match m.y_stderr {
                    Some(se) if se > 0.0 => Ok((m.y_min / se).powi(2)),
                    _ => Err(Error::Domain(format!(
                        "F={} has no positive y_min stderr for weighting",
                        m.features
                    ))),
                })
                .collect::<Result<Vec<f64>>>()?;
            fit_power_law_weighted(&height_pts, &weights)?
        }
    };
    Ok(exponents_from_fits(location, height, weighting))
}

/// Inverts the two scaling relations.
pub fn exponents_from_fits(location: PowerLawFit, height: PowerLawFit, weighting: Weighting) -> Exponents {
    let s1 = location.exponent;
    let s2 = height.exponent;
    let mut warnings = Vec::new();
    if s1 >= 0.0 {
        warnings.push(format!(
            "SignError: location slope {s1} is not negative; minimum location does not shrink with size"
        ));
    }
    let nu_bar = -1.0 / s1;
    let nu_stderr = location.stderr_exponent / (s1 * s1);
    let gamma_bar = -s2 * nu_bar;
    let gamma_stderr = (nu_bar * height.stderr_exponent).hypot(s2 * nu_stderr);
    Exponents {
        nu_bar,
        nu_stderr,
        gamma_bar,
        gamma_stderr,
        location,
        height,
        weighting,
        warnings,
    }
}

/// Extrapolated minimum location (optimal fraction active) at `features`.
pub fn predict_optimal_sparsity(location: &PowerLawFit, features: f64) -> Result<f64> {
    if !(features > 0.0) {
        return Err(Error::Domain(format!("size must be positive, got {features}")));
    }
    Ok(location.eval(features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn parabola(xs: &[f64]) -> Vec<(f64, f64)> {
        xs.iter().map(|&x| (x, (x - 0.3).powi(2) + 0.1)).collect()
    }

    #[test]
    fn exact_parabola_vertex() {
        let m = find_minimum(&parabola(&[0.1, 0.2, 0.25, 0.4, 0.5]), 5).unwrap();
        assert!((m.x_min - 0.3).abs() < 1e-10);
        assert!((m.y_min - 0.1).abs() < 1e-10);
        assert!(!m.boundary_flag);
        assert_eq!(m.fit_window, 5);
    }

    #[test]
    fn increasing_curve_is_boundary() {
        let curve: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 0.1, i as f64)).collect();
        let m = find_minimum(&curve, 5).unwrap();
        assert!(m.boundary_flag);
        assert_eq!((m.x_min, m.y_min), (0.0, 0.0));
        let rev: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 0.1, -(i as f64))).collect();
        assert!(find_minimum(&rev, 3).unwrap().boundary_flag);
    }

    #[test]
    fn window_shrinks_near_edges() {
        let xs: Vec<f64> = (0..8).map(|i| 0.2 + 0.1 * i as f64).collect();
        let m = find_minimum(&parabola(&xs), 5).unwrap();
        // argmin at index 1: only one point on the left
        assert_eq!(m.fit_window, 3);
        assert!((m.x_min - 0.3).abs() < 1e-10);
    }

    #[test]
    fn concave_window_keeps_discrete_point() {
        // interior argmin, but the 5-point least-squares parabola opens downward
        let curve = vec![(0.0, -1.0), (0.1, 0.0), (0.2, -1.005), (0.3, 0.0), (0.4, -1.0)];
        let m = find_minimum(&curve, 5).unwrap();
        assert!(!m.boundary_flag);
        assert_eq!(m.fit_window, 1);
        assert_eq!((m.x_min, m.y_min), (0.2, -1.005));
    }

    #[test]
    fn minimum_input_errors() {
        assert!(matches!(
            find_minimum(&[(0.0, 1.0), (1.0, 0.0)], 3),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(find_minimum(&parabola(&[0.1, 0.2, 0.3]), 4).is_err());
        assert!(find_minimum(&parabola(&[0.3, 0.2, 0.1]), 3).is_err());
    }

    #[test]
    fn noisy_curve_minimum_within_one_spacing() {
        let spacing = 0.05;
        let xs: Vec<f64> = (0..15).map(|i| 0.05 + spacing * i as f64).collect();
        let noise = Normal::new(0.0, 0.002).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = 0.33 + 0.01 * seed as f64;
            let curve: Vec<(f64, f64)> = xs
                .iter()
                .map(|&x| (x, 2.0 * (x - truth).powi(2) + 0.4 + noise.sample(&mut rng)))
                .collect();
            let m = find_minimum(&curve, 5).unwrap();
            assert!((m.x_min - truth).abs() <= spacing, "seed {seed}: {} vs {truth}", m.x_min);
        }
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [16.0, 32.0, 64.0, 128.0]
            .iter()
            .map(|&l: &f64| (l, 2.0 * l.powf(-1.5)))
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.exponent + 1.5).abs() < 1e-10);
        assert!((fit.amplitude - 2.0).abs() < 1e-10);
        assert!(fit.stderr_exponent < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-10);
        assert_eq!(fit.n_points, 4);
    }

    #[test]
    fn constant_power_law() {
        let fit = fit_power_law(&[(2.0, 3.0), (4.0, 3.0), (8.0, 3.0)]).unwrap();
        assert_eq!(fit.exponent, 0.0);
        assert!((fit.amplitude - 3.0).abs() < 1e-12);
        assert_eq!(predict_optimal_sparsity(&fit, 1000.0).unwrap(), fit.amplitude);
    }

    #[test]
    fn power_law_errors() {
        assert!(matches!(
            fit_power_law(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(matches!(
            fit_power_law(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            fit_power_law(&[(-1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn weighted_fit_matches_unweighted_with_equal_weights() {
        let pts = [(16.0, 0.3), (32.0, 0.21), (64.0, 0.16), (128.0, 0.1)];
        let a = fit_power_law(&pts).unwrap();
        let b = fit_power_law_weighted(&pts, &[4.0; 4]).unwrap();
        assert!((a.exponent - b.exponent).abs() < 1e-12);
        assert!((a.stderr_exponent - b.stderr_exponent).abs() < 1e-12);
        assert!(fit_power_law_weighted(&pts, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    fn minima_from(nu: f64, gamma: f64) -> Vec<MinimaPoint> {
        [16usize, 32, 64, 128]
            .iter()
            .map(|&f| MinimaPoint {
                features: f,
                x_min: 0.5 * (f as f64).powf(-1.0 / nu),
                y_min: 0.2 * (f as f64).powf(-gamma / nu),
                boundary_flag: false,
                fit_window: 5,
                y_stderr: Some(0.001),
            })
            .collect()
    }

    #[test]
    fn exponents_invert_scaling_relations() {
        let e = extract_exponents(&minima_from(1.32, 0.0099), Weighting::Unweighted).unwrap();
        assert!((e.nu_bar - 1.32).abs() < 1e-6);
        assert!((e.gamma_bar - 0.0099).abs() < 1e-6);
        assert!(e.warnings.is_empty());
        let w = extract_exponents(&minima_from(1.32, 0.0099), Weighting::Stderr).unwrap();
        assert!((w.gamma_bar - 0.0099).abs() < 1e-6);
    }

    #[test]
    fn unit_slope_gives_unit_nu() {
        let loc = fit_power_law(&[(1.0, 1.0), (2.0, 0.5), (4.0, 0.25)]).unwrap();
        let h = fit_power_law(&[(1.0, 1.0), (2.0, 1.0), (4.0, 1.0)]).unwrap();
        let e = exponents_from_fits(loc, h, Weighting::Unweighted);
        assert!((e.nu_bar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn positive_location_slope_warns() {
        let loc = fit_power_law(&[(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)]).unwrap();
        let h = fit_power_law(&[(1.0, 1.0), (2.0, 1.0), (4.0, 1.0)]).unwrap();
        let e = exponents_from_fits(loc, h, Weighting::Unweighted);
        assert_eq!(e.warnings.len(), 1);
        assert!(e.nu_bar < 0.0);
    }

    #[test]
    fn boundary_minima_are_excluded() {
        let mut m = minima_from(1.0, 0.5);
        m[1].boundary_flag = true;
        m[2].boundary_flag = true;
        assert!(matches!(
            extract_exponents(&m, Weighting::Unweighted),
            Err(Error::Boundary { usable: 2 })
        ));
        m[1].boundary_flag = false;
        m[2].boundary_flag = false;
        m.push(MinimaPoint {
            features: 256,
            x_min: 0.9,
            y_min: 0.9,
            boundary_flag: true,
            fit_window: 1,
            y_stderr: None,
        });
        let e = extract_exponents(&m, Weighting::Unweighted).unwrap();
        assert_eq!(e.location.n_points, 4);
        assert!((e.nu_bar - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prediction() {
        let fit = PowerLawFit {
            exponent: -0.5,
            amplitude: 0.5,
            stderr_exponent: 0.0,
            stderr_amplitude: 0.0,
            r_squared: 1.0,
            n_points: 3,
        };
        assert!((predict_optimal_sparsity(&fit, 4.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(predict_optimal_sparsity(&fit, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn fit_is_scale_covariant(
            vs in proptest::collection::vec(0.01f64..10.0, 5),
            c in 0.001f64..1000.0,
        ) {
            let pts: Vec<(f64, f64)> = vs.iter().enumerate().map(|(i, &v)| (2f64.powi(i as i32 + 3), v)).collect();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(l, v)| (l, v * c)).collect();
            let a = fit_power_law(&pts).unwrap();
            let b = fit_power_law(&scaled).unwrap();
            prop_assert!((a.exponent - b.exponent).abs() <= 1e-12);
            prop_assert!((a.stderr_exponent - b.stderr_exponent).abs() <= 1e-12);
            prop_assert!((a.r_squared - b.r_squared).abs() <= 1e-12);
            prop_assert!((a.amplitude * c - b.amplitude).abs() <= 1e-12 * b.amplitude.max(1.0));
        }

        #[test]
        fn fit_ignores_point_order(
            vs in proptest::collection::vec(0.01f64..10.0, 6),
            rot in 0usize..6,
        ) {
            let pts: Vec<(f64, f64)> = vs.iter().enumerate().map(|(i, &v)| (3.0 + 7.0 * i as f64, v)).collect();
            let mut shuffled = pts.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            prop_assert_eq!(fit_power_law(&pts).unwrap(), fit_power_law(&shuffled).unwrap());
        }

        #[test]
        fn parabola_vertex_recovered(
            x0 in 0.2f64..0.8,
            a in 0.1f64..50.0,
            c in 0.0f64..2.0,
            n in 5usize..12,
        ) {
            let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let curve: Vec<(f64, f64)> = xs.iter().map(|&x| (x, a * (x - x0).powi(2) + c)).collect();
            let m = find_minimum(&curve, 5).unwrap();
            prop_assume!(!m.boundary_flag);
            prop_assert!((m.x_min - x0).abs() <= 1e-10);
            prop_assert!((m.y_min - c).abs() <= 1e-10);
        }

        #[test]
        fn forward_then_extract_is_identity(nu in 0.5f64..3.0, gamma in 0.001f64..2.0) {
            let e = extract_exponents(&minima_from(nu, gamma), Weighting::Unweighted).unwrap();
            prop_assert!((e.nu_bar - nu).abs() <= 1e-8 * nu);
            prop_assert!((e.gamma_bar - gamma).abs() <= 1e-8 * gamma.max(1.0));
        }
    }
}
