//! Pressure function, α-functions, critical moment exponents, regularity
//! classification and lifetime.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{CascadeError, Result};
use crate::stats::linear_fit;
use crate::tree_flow::Flow;
use crate::weight::WeightSpec;

/// Minimum depth for a pressure fit.
pub const MIN_FIT_DEPTH: u32 = 4;
/// One-sided difference step for the derivative at `h = 1`.
pub const DERIVATIVE_STEP: f64 = 1e-4;
/// Width of the boundary band for analytic measures.
pub const ANALYTIC_TOL: f64 = 1e-6;
/// Largest exponent searched by `critical_h`.
pub const H_CAP: f64 = 1e6;

#[derive(Clone, Copy, Debug)]
pub enum Measure<'a> {
    /// The uniform measure, handled in closed form.
    Theta,
    /// A finite-depth flow, handled by regression over levels.
    Empirical(&'a Flow),
}

/// A real number or `+∞`; serialized as a JSON number or the string `"+inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    pub fn value(&self) -> f64 {
        match self {
            Exponent::Finite(x) => *x,
            Exponent::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(x) => write!(f, "{x}"),
            Exponent::Infinite => f.write_str("+inf"),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(x) => s.serialize_f64(*x),
            Exponent::Infinite => s.serialize_str("+inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Regular,
    Boundary,
    Irregular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PressureEstimate {
    pub value: f64,
    /// RMS residual of the level regression; zero for closed forms.
    pub residual: f64,
    pub first_level: u32,
    pub last_level: u32,
}

fn fit_levels(depth: u32) -> std::ops::RangeInclusive<u32> {
    depth.div_ceil(2)..=depth
}

fn check_fit_depth(f: &Flow) -> Result<()> {
    if f.depth() < MIN_FIT_DEPTH {
        return Err(CascadeError::TooShallow {
            depth: f.depth(),
            min: MIN_FIT_DEPTH,
        });
    }
    Ok(())
}

/// `log Σ_{|v|=k} Γ(v)^h` by log-sum-exp over the positive masses.
fn log_level_power_sum(level: &[f64], h: f64) -> f64 {
    let top = level
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|x| h * x.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let s: f64 = level
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|x| (h * x.ln() - top).exp())
        .sum();
    top + s.ln()
}

/// `λ_Γ(h)`: closed form `(1-h) log 2` for θ; for a flow, the least-squares
/// slope of `log Σ_{|v|=k} Γ(v)^h` against `k` over the deepest half of levels.
pub fn pressure(measure: Measure<'_>, h: f64) -> Result<PressureEstimate> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(CascadeError::OutOfRange(format!("pressure at h = {h}")));
    }
    match measure {
        Measure::Theta => Ok(PressureEstimate {
            value: (1.0 - h) * LN_2,
            residual: 0.0,
            first_level: 0,
            last_level: 0,
        }),
        Measure::Empirical(f) => {
            check_fit_depth(f)?;
            let levels = fit_levels(f.depth());
            let (first_level, last_level) = (*levels.start(), *levels.end());
            let (x, y): (Vec<f64>, Vec<f64>) = levels
                .map(|k| (k as f64, log_level_power_sum(f.level(k), h)))
                .unzip();
            let fit = linear_fit(&x, &y)?;
            Ok(PressureEstimate {
                value: fit.slope,
                residual: fit.residual,
                first_level,
                last_level,
            })
        }
    }
}

/// `α_t(h) = λ_Γ(h) + log E[W_t^h]`.
pub fn alpha(measure: Measure<'_>, spec: &WeightSpec, t: f64, h: f64) -> Result<f64> {
    Ok(pressure(measure, h)?.value + spec.log_moment(t, h)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    /// `λ'_Γ(1+)`.
    pub right: f64,
    /// `λ'_Γ(1-)`.
    pub left: f64,
    /// Width of the band inside which the sign is not trusted.
    pub tolerance: f64,
}

/// One-sided derivatives of the pressure at `h = 1`. Exact for θ; for a flow,
/// Richardson-refined one-sided differences with step `DERIVATIVE_STEP`.
pub fn pressure_derivative(measure: Measure<'_>) -> Result<DerivativeEstimate> {
    match measure {
        Measure::Theta => Ok(DerivativeEstimate {
            right: -LN_2,
            left: -LN_2,
            tolerance: ANALYTIC_TOL,
        }),
        Measure::Empirical(f) => {
            check_fit_depth(f)?;
            let p = |h: f64| pressure(measure, h).map(|e| e.value);
            let p1 = p(1.0)?;
            let d = DERIVATIVE_STEP;
            let right_fd = |s: f64| -> Result<f64> { Ok((p(1.0 + s)? - p1) / s) };
            let left_fd = |s: f64| -> Result<f64> { Ok((p1 - p(1.0 - s)?) / s) };
            let right = 2.0 * right_fd(d / 2.0)? - right_fd(d)?;
            let left = 2.0 * left_fd(d / 2.0)? - left_fd(d)?;
            Ok(DerivativeEstimate {
                right,
                left,
                tolerance: ANALYTIC_TOL.max(entropy_slope_se(f)?),
            })
        }
    }
}

/// Standard error of the slope of `Σ_{|v|=k} Γ*(v) log Γ(v)` against `k`;
/// that slope is the derivative of the fitted pressure at `h = 1`.
fn entropy_slope_se(f: &Flow) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = fit_levels(f.depth())
        .map(|k| {
            let level = f.level(k);
            let total: f64 = level.iter().sum();
            let s: f64 = level
                .iter()
                .filter(|&&g| g > 0.0)
                .map(|&g| g / total * g.ln())
                .sum();
            (k as f64, s)
        })
        .unzip();
    Ok(linear_fit(&x, &y)?.slope_se)
}

/// `h_t = sup { h >= 1 : α_t(h) < 0 }`.
pub fn critical_h(measure: Measure<'_>, spec: &WeightSpec, t: f64) -> Result<Exponent> {
    let slope_at_one = pressure_derivative(measure)?.right + spec.w_log_w(t)?;
    if slope_at_one >= 0.0 {
        return Ok(Exponent::Finite(1.0));
    }
    let a = |h: f64| alpha(measure, spec, t, h);
    let mut lo = 1.0;
    let mut hi = 2.0;
    while a(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > H_CAP {
            return Ok(Exponent::Infinite);
        }
    }
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if a(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Exponent::Finite(0.5 * (lo + hi)))
}

/// Sign of `E[W_t log W_t] + λ'_Γ(1±)`, with a tolerance band.
pub fn classify_regularity(
    measure: Measure<'_>,
    spec: &WeightSpec,
    t: f64,
) -> Result<Classification> {
    let d = pressure_derivative(measure)?;
    let e = spec.w_log_w(t)?;
    Ok(if e + d.right < -d.tolerance {
        Classification::Regular
    } else if e + d.left > d.tolerance {
        Classification::Irregular
    } else {
        Classification::Boundary
    })
}

/// `-2 λ'_Γ(1+)`, the lifetime of the Gaussian-driven process.
pub fn lifetime(measure: Measure<'_>) -> Result<f64> {
    Ok(-2.0 * pressure_derivative(measure)?.right)
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub measure: String,
    pub depth: Option<u32>,
    pub spec: WeightSpec,
    pub t: f64,
    pub pressure_samples: Vec<(f64, f64)>,
    pub alpha_samples: Vec<(f64, f64)>,
    pub h_t: Exponent,
    pub lifetime: f64,
    pub classification: Classification,
    /// `λ'_Γ(1+)`.
    pub derivative_estimate: f64,
    pub derivative_tolerance: f64,
    /// Largest pressure fit residual over the sampled exponents.
    pub fit_residual: f64,
    pub estimator: String,
}

pub fn regularity_report(
    measure: Measure<'_>,
    spec: &WeightSpec,
    t: f64,
    hs: &[f64],
) -> Result<RegularityReport> {
    spec.validate()?;
    let mut pressure_samples = Vec::with_capacity(hs.len());
    let mut alpha_samples = Vec::with_capacity(hs.len());
    let mut fit_residual: f64 = 0.0;
    for &h in hs {
        let p = pressure(measure, h)?;
        fit_residual = fit_residual.max(p.residual);
        pressure_samples.push((h, p.value));
        alpha_samples.push((h, p.value + spec.log_moment(t, h)?));
    }
    let d = pressure_derivative(measure)?;
    let (name, depth, estimator) = match measure {
        Measure::Theta => ("theta", None, "closed form"),
        Measure::Empirical(f) => (
            "flow",
            Some(f.depth()),
            "least-squares slope over the deepest half of levels",
        ),
    };
    Ok(RegularityReport {
        measure: name.into(),
        depth,
        spec: *spec,
        t,
        pressure_samples,
        alpha_samples,
        h_t: critical_h(measure, spec, t)?,
        lifetime: -2.0 * d.right,
        classification: classify_regularity(measure, spec, t)?,
        derivative_estimate: d.right,
        derivative_tolerance: d.tolerance,
        fit_residual,
        estimator: estimator.into(),
    })
}

impl RegularityReport {
    /// CSV rows `h,pressure,alpha`.
    pub fn write_curves<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "pressure", "alpha"])?;
        for ((h, p), (_, a)) in self.pressure_samples.iter().zip(&self.alpha_samples) {
            w.write_record([h.to_string(), p.to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{run_replicas, simulate_path_with, PathOptions, Record};
    use crate::tree_flow::VertexId;

    const G: WeightSpec = WeightSpec::Gaussian;

    fn cascade_flow(depth: u32, t: f64, seed: u64) -> Flow {
        let opts = PathOptions {
            record: Record::Final,
            ..PathOptions::default()
        };
        let p =
            simulate_path_with(&Flow::uniform(depth), &G, &[0.0, t], depth, seed, &opts).unwrap();
        p.snapshots()[0].clone()
    }

    #[test]
    fn theta_pressure_closed_form() {
        assert_eq!(pressure(Measure::Theta, 2.0).unwrap().value, -LN_2);
        assert_eq!(pressure(Measure::Theta, 1.0).unwrap().value, 0.0);
        for h in [0.0, 0.5, 1.7, 3.0] {
            assert_eq!(pressure(Measure::Theta, h).unwrap().value, (1.0 - h) * LN_2);
        }
    }

    #[test]
    fn uniform_flow_pressure_matches_theta() {
        let f = Flow::uniform(12);
        for h in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let p = pressure(Measure::Empirical(&f), h).unwrap();
            assert!((p.value - (1.0 - h) * LN_2).abs() < 1e-12);
        }
        let d = pressure_derivative(Measure::Empirical(&f)).unwrap();
        assert!((d.right + LN_2).abs() < 1e-8);
    }

    #[test]
    fn pressure_at_one_vanishes() {
        let f = cascade_flow(12, 0.6, 3);
        assert!(pressure(Measure::Empirical(&f), 1.0).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn single_ray_pressure_is_zero() {
        let f = Flow::point_mass(10, 0b1011001110).unwrap();
        for h in [0.0, 0.5, 1.0, 2.0] {
            assert!(pressure(Measure::Empirical(&f), h).unwrap().value.abs() < 1e-12);
        }
        assert!(lifetime(Measure::Empirical(&f)).unwrap().abs() < 1e-8);
    }

    #[test]
    fn shallow_flows_are_rejected() {
        assert!(matches!(
            pressure(Measure::Empirical(&Flow::uniform(3)), 2.0),
            Err(CascadeError::TooShallow { .. })
        ));
    }

    #[test]
    fn derivative_agrees_with_entropy_slope() {
        // The fitted pressure is smooth in h, with derivative at 1 equal to the
        // slope of the per-level entropy series.
        let f = cascade_flow(12, 0.8, 5);
        let (x, y): (Vec<f64>, Vec<f64>) = fit_levels(12)
            .map(|k| {
                let l = f.level(k);
                let tot: f64 = l.iter().sum();
                (k as f64, l.iter().map(|g| g / tot * g.ln()).sum::<f64>())
            })
            .unzip();
        let exact = linear_fit(&x, &y).unwrap().slope;
        let d = pressure_derivative(Measure::Empirical(&f)).unwrap();
        assert!((d.right - exact).abs() < 1e-6, "{} vs {exact}", d.right);
        assert!((d.left - exact).abs() < 1e-6);
    }

    #[test]
    fn alpha_closed_form_for_theta() {
        for t in [0.0, 0.4, 1.1] {
            for h in [0.5, 1.0, 1.5, 2.5] {
                let want = (1.0 - h) * LN_2 + t * h * (h - 1.0) / 2.0;
                assert!((alpha(Measure::Theta, &G, t, h).unwrap() - want).abs() < 1e-15);
            }
            assert_eq!(alpha(Measure::Theta, &G, t, 1.0).unwrap(), 0.0);
        }
        // At t = 2 log 2 the slope at h = 1 vanishes.
        let t = 2.0 * LN_2;
        let d = 1e-6;
        let slope = alpha(Measure::Theta, &G, t, 1.0 + d).unwrap() / d;
        assert!(slope.abs() < 1e-5);
    }

    #[test]
    fn critical_exponent_for_theta() {
        for t in [0.3, 0.7, 1.2] {
            let h = critical_h(Measure::Theta, &G, t).unwrap().value();
            assert!((h - 2.0 * LN_2 / t).abs() < 1e-9, "t={t}: {h}");
        }
        assert!((critical_h(Measure::Theta, &G, LN_2).unwrap().value() - 2.0).abs() < 1e-9);
        assert_eq!(
            critical_h(Measure::Theta, &G, 0.0).unwrap(),
            Exponent::Infinite
        );
        assert_eq!(
            critical_h(Measure::Theta, &G, 2.0).unwrap(),
            Exponent::Finite(1.0)
        );
    }

    #[test]
    fn critical_exponent_decreases_in_t() {
        let cp = WeightSpec::compound_poisson_default();
        for spec in [G, cp] {
            let hs: Vec<f64> = [0.1, 0.2, 0.4, 0.8, 1.2]
                .iter()
                .map(|&t| critical_h(Measure::Theta, &spec, t).unwrap().value())
                .collect();
            assert!(hs.windows(2).all(|w| w[1] <= w[0]), "{hs:?}");
        }
    }

    #[test]
    fn classification_flips_at_lifetime() {
        let t0 = 2.0 * LN_2;
        let c = |t| classify_regularity(Measure::Theta, &G, t).unwrap();
        assert_eq!(c(1.0), Classification::Regular);
        assert_eq!(c(2.0), Classification::Irregular);
        assert_eq!(c(t0), Classification::Boundary);
        assert_eq!(c(t0 - 1e-3), Classification::Regular);
        assert_eq!(c(t0 + 1e-3), Classification::Irregular);
    }

    #[test]
    fn theta_lifetime() {
        assert!((lifetime(Measure::Theta).unwrap() - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn regular_below_implies_regular_earlier() {
        for spec in [G, WeightSpec::compound_poisson_default()] {
            let ts: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
            let cls: Vec<_> = ts
                .iter()
                .map(|&t| classify_regularity(Measure::Theta, &spec, t).unwrap())
                .collect();
            for (i, c) in cls.iter().enumerate() {
                if *c == Classification::Regular {
                    assert!(cls[..i].iter().all(|c| *c == Classification::Regular));
                }
            }
        }
    }

    #[test]
    fn alpha_is_convex_in_h() {
        let f = cascade_flow(12, 0.5, 8);
        for (m, spec) in [
            (Measure::Theta, G),
            (Measure::Theta, WeightSpec::compound_poisson_default()),
            (Measure::Empirical(&f), G),
        ] {
            let hs: Vec<f64> = (0..=30).map(|i| 0.1 * i as f64).collect();
            let a: Vec<f64> = hs
                .iter()
                .map(|&h| alpha(m, &spec, 0.7, h).unwrap())
                .collect();
            for w in a.windows(3) {
                assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-10);
            }
        }
    }

    #[test]
    fn empirical_lifetime_is_at_most_theta() {
        for seed in 0..4 {
            let f = cascade_flow(12, 0.5, seed);
            let d = pressure_derivative(Measure::Empirical(&f)).unwrap();
            assert!(lifetime(Measure::Empirical(&f)).unwrap() <= 2.0 * LN_2 + d.tolerance);
        }
    }

    #[test]
    fn submeasures_inherit_regularity() {
        let f = cascade_flow(14, 0.5, 2);
        let d = pressure_derivative(Measure::Empirical(&f)).unwrap();
        for v in ["0", "1", "01", "110"] {
            let sub = f.restrict(VertexId::from_path(v).unwrap()).unwrap();
            let ds = pressure_derivative(Measure::Empirical(&sub)).unwrap();
            assert!(
                ds.right <= d.right + d.tolerance + ds.tolerance,
                "{v}: {} vs {}",
                ds.right,
                d.right
            );
        }
    }

    #[test]
    fn regularity_propagates_to_snapshots() {
        let t = 0.5;
        let hits = run_replicas(20, 4, |_, s| {
            let f = cascade_flow(16, t, s);
            [1.1, 1.3, 1.5].iter().all(|&h| {
                let p = pressure(Measure::Empirical(&f), h).unwrap();
                p.value <= (1.0 - h) * LN_2 + G.log_moment(t, h).unwrap() + p.residual
            })
        });
        let rate = hits.iter().filter(|&&b| b).count() as f64 / hits.len() as f64;
        assert!(rate >= 0.95, "{rate}");
    }

    #[test]
    fn report_serializes_infinite_exponent() {
        let r = regularity_report(Measure::Theta, &G, 0.0, &[1.0, 2.0]).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"h_t\":\"+inf\""));
        let mut buf = Vec::new();
        r.write_curves(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("h,pressure,alpha\n1,0,0\n"));
    }
}
