//! The KPZ map `φ_t(h) = h - log_2 E[W_t^h]`, the dimension ODE it induces,
//! and a box-counting estimator for images of coded ray sets.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};
use crate::stats::{linear_fit, LinearFit};
use crate::tree_flow::Flow;
use crate::weight::WeightSpec;

/// The time at which the Gaussian-driven uniform cascade degenerates.
pub fn critical_time() -> f64 {
    2.0 * LN_2
}

pub fn phi(spec: &WeightSpec, t: f64, h: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&h) {
        return Err(CascadeError::OutOfRange(format!("h = {h} outside [0, 1]")));
    }
    Ok(h - spec.log_moment(t, h)? / LN_2)
}

/// `φ_t^{-1}(target)` on `[0, 1]` by bisection; `φ_t` is increasing there for
/// the times at which the map is a bijection.
pub fn phi_inverse(spec: &WeightSpec, t: f64, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(CascadeError::OutOfRange(format!(
            "target {target} outside [0, 1]"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(spec, t, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, Serialize)]
pub struct DimensionPath {
    pub d0: f64,
    pub times: Vec<f64>,
    pub d: Vec<f64>,
}

/// Right-hand side of the dimension ODE.
pub fn kpz_rate(t: f64, d: f64) -> Result<f64> {
    let den = 2.0 * LN_2 - t * (2.0 * d - 1.0);
    if !(den > 1e-12) {
        return Err(CascadeError::DenominatorUnderflow(t));
    }
    Ok(-d * (1.0 - d) / den)
}

/// Fixed-step RK4 for `ḋ = -d(1-d) / (2 log 2 - t(2d - 1))`, `d(0) = d0`.
/// The last step is shortened to land on `t_end`.
pub fn kpz_ode_solve(d0: f64, t_end: f64, step: f64) -> Result<DimensionPath> {
    if !(0.0..=1.0).contains(&d0) {
        return Err(CascadeError::OutOfRange(format!(
            "d0 = {d0} outside [0, 1]"
        )));
    }
    if !(step > 0.0) || !(t_end >= 0.0) || !t_end.is_finite() || step > t_end {
        return Err(CascadeError::OutOfRange(format!(
            "step {step} must be positive and at most t_end = {t_end}"
        )));
    }
    let m = (t_end / step - 1e-9).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(m + 1);
    let mut d = Vec::with_capacity(m + 1);
    let (mut t, mut y) = (0.0, d0);
    times.push(t);
    d.push(y);
    for k in 1..=m {
        let t_next = if k == m { t_end } else { k as f64 * step };
        let h = t_next - t;
        let k1 = kpz_rate(t, y)?;
        let k2 = kpz_rate(t + 0.5 * h, y + 0.5 * h * k1)?;
        let k3 = kpz_rate(t + 0.5 * h, y + 0.5 * h * k2)?;
        let k4 = kpz_rate(t + h, y + h * k3)?;
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = t_next;
        times.push(t);
        d.push(y.clamp(0.0, 1.0));
    }
    Ok(DimensionPath { d0, times, d })
}

/// The root in `[0, 1]` of `c d^2 - (1 + c) d + d0 = 0`, `c = t / (2 log 2)`,
/// i.e. the `d` with `φ_t(d) = d0` for Gaussian weights.
pub fn kpz_closed_form(d0: f64, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d0) {
        return Err(CascadeError::OutOfRange(format!(
            "d0 = {d0} outside [0, 1]"
        )));
    }
    if !(0.0..=critical_time() * (1.0 + 1e-12)).contains(&t) {
        return Err(CascadeError::OutOfRange(format!(
            "t = {t} outside [0, 2 log 2]"
        )));
    }
    let c = t / (2.0 * LN_2);
    // (1 + c)^2 - 4 c d0, written so that it is visibly nonnegative.
    let disc = (1.0 - c) * (1.0 - c) + 4.0 * c * (1.0 - d0);
    if !(disc >= 0.0) {
        return Err(CascadeError::OutOfRange(format!(
            "negative discriminant {disc}"
        )));
    }
    // Rationalized form of ((1 + c) - sqrt(disc)) / (2c), stable as c -> 0.
    Ok(2.0 * d0 / ((1.0 + c) + disc.sqrt()))
}

impl DimensionPath {
    /// CSV rows `t,d_ode,d_closed_form`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "d_ode", "d_closed_form"])?;
        for (&t, &d) in self.times.iter().zip(&self.d) {
            let closed = kpz_closed_form(self.d0, t.min(critical_time()))?;
            w.write_record([t.to_string(), d.to_string(), closed.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ray sets described by a predicate on path bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaySet {
    /// Bits at even positions (1-based, from the root) are forced to 0; dimension 1/2.
    EvenFree,
    /// Every ray; dimension 1.
    Full,
}

impl RaySet {
    pub fn contains(&self, depth: u32, bits: u64) -> bool {
        match self {
            RaySet::Full => true,
            RaySet::EvenFree => (1..=depth / 2).all(|j| (bits >> (depth - 2 * j)) & 1 == 0),
        }
    }

    pub fn dimension(&self) -> f64 {
        match self {
            RaySet::Full => 1.0,
            RaySet::EvenFree => 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScaleCount {
    /// Boxes have side `2^(-scale)`.
    pub scale: u32,
    pub count: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoxDimension {
    pub estimate: f64,
    pub fit: LinearFit,
    pub counts: Vec<ScaleCount>,
}

impl BoxDimension {
    /// CSV rows `scale,count`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scale", "count"])?;
        for c in &self.counts {
            w.write_record([c.scale.to_string(), c.count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Box-counting dimension of the image of `set` under the distribution
/// function of the normalized flow: each depth-n cylinder of the set maps to
/// an interval, and the intervals are covered by dyadic boxes of side
/// `2^(-j)` for each `j` in `scales`.
pub fn box_dimension_estimate(
    snapshot: &Flow,
    set: RaySet,
    scales: &[u32],
) -> Result<BoxDimension> {
    if scales.len() < 3 {
        return Err(CascadeError::InsufficientData(format!(
            "{} scales, need at least 3",
            scales.len()
        )));
    }
    if let Some(&j) = scales.iter().find(|&&j| j == 0 || j > 52) {
        return Err(CascadeError::OutOfRange(format!(
            "scale {j} outside 1..=52"
        )));
    }
    if let Some(v) = snapshot.first_zero() {
        return Err(CascadeError::DegenerateFlow(v));
    }
    let n = snapshot.depth();
    let cdf = snapshot.leaf_cdf();
    let intervals: Vec<(f64, f64)> = (0..1u64 << n)
        .filter(|&b| set.contains(n, b))
        .map(|b| (cdf[b as usize], cdf[b as usize + 1]))
        .collect();
    let counts: Vec<ScaleCount> = scales
        .iter()
        .map(|&j| {
            let size = (j as f64).exp2();
            let mut count = 0u64;
            let mut next_free = 0u64;
            for &(lo, hi) in &intervals {
                let first = ((lo * size).floor() as u64).max(next_free);
                let last = ((hi * size).ceil() as u64).max(1) - 1;
                if last >= first {
                    count += last - first + 1;
                    next_free = last + 1;
                }
            }
            ScaleCount { scale: j, count }
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = counts
        .iter()
        .map(|c| (c.scale as f64 * LN_2, (c.count as f64).ln()))
        .unzip();
    let fit = linear_fit(&x, &y)?;
    Ok(BoxDimension {
        estimate: fit.slope,
        fit,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{simulate_path_with, PathOptions, Record};

    use proptest::prelude::*;

    const G: WeightSpec = WeightSpec::Gaussian;

    proptest! {
        #[test]
        fn phi_inverse_undoes_phi(t in 0.0..1.38f64, h in 0.0..=1.0f64) {
            let back = phi_inverse(&G, t, phi(&G, t, h).unwrap()).unwrap();
            prop_assert!((back - h).abs() < 1e-12);
        }

        #[test]
        fn dimension_path_never_increases(d0 in 0.01..0.99f64, t_end in 0.1..1.38f64) {
            let p = kpz_ode_solve(d0, t_end, 1e-2).unwrap();
            for w in p.d.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn phi_endpoints_and_closed_value() {
        for spec in [G, WeightSpec::compound_poisson_default()] {
            for t in [0.0, 0.5, 1.2] {
                assert!((phi(&spec, t, 1.0).unwrap() - 1.0).abs() < 1e-15);
                assert_eq!(phi(&spec, t, 0.0).unwrap(), 0.0);
            }
        }
        assert!((phi(&G, 2.0 * LN_2, 0.5).unwrap() - 0.75).abs() < 1e-15);
        assert!(phi(&G, 0.3, 1.2).is_err());
    }

    #[test]
    fn phi_is_increasing_bijection() {
        for t in [0.1, 0.7, 1.3] {
            let c = t / (2.0 * LN_2);
            for i in 0..=100 {
                let h = i as f64 / 100.0;
                // φ'(h) = 1 + c (1 - 2h) >= 1 - c > 0.
                assert!(1.0 + c * (1.0 - 2.0 * h) > 0.0);
                let want = h - t * h * (h - 1.0) / (2.0 * LN_2);
                assert!((phi(&G, t, h).unwrap() - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fixed_points_are_constant() {
        for d0 in [0.0, 1.0] {
            let p = kpz_ode_solve(d0, 1.0, 0.01).unwrap();
            assert!(p.d.iter().all(|&d| d == d0));
        }
    }

    #[test]
    fn ode_matches_closed_form() {
        for i in 1..=9 {
            let d0 = i as f64 / 10.0;
            let p = kpz_ode_solve(d0, 0.99 * critical_time(), 1e-3).unwrap();
            for (&t, &d) in p.times.iter().zip(&p.d) {
                assert!((d - kpz_closed_form(d0, t).unwrap()).abs() < 1e-6);
            }
            assert!(p.d.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn endpoint_limit() {
        assert!((kpz_closed_form(0.75, critical_time()).unwrap() - 0.5).abs() < 1e-15);
        let p = kpz_ode_solve(0.75, critical_time(), 1e-4).unwrap();
        assert!((p.d.last().unwrap() - 0.5).abs() < 1e-4);
        assert_eq!(*p.times.last().unwrap(), critical_time());
    }

    #[test]
    fn closed_form_round_trip() {
        for i in 0..=20 {
            for j in 0..=20 {
                let d0 = i as f64 / 20.0;
                let t = j as f64 / 20.0 * critical_time();
                let d = kpz_closed_form(d0, t).unwrap();
                assert!((phi(&G, t, d).unwrap() - d0).abs() < 1e-12);
            }
        }
        assert_eq!(kpz_closed_form(0.3, 0.0).unwrap(), 0.3);
    }

    #[test]
    fn half_dimension_speed_is_autonomous() {
        for t in [0.0, 0.4, 1.0, 1.3] {
            assert!((kpz_rate(t, 0.5).unwrap() + 0.25 / (2.0 * LN_2)).abs() < 1e-15);
        }
    }

    #[test]
    fn ode_input_checks() {
        assert!(kpz_ode_solve(0.5, 0.1, 0.2).is_err());
        assert!(kpz_ode_solve(1.5, 1.0, 0.1).is_err());
        assert!(matches!(
            kpz_ode_solve(1.0, 2.0, 0.01),
            Err(CascadeError::DenominatorUnderflow(_))
        ));
    }

    #[test]
    fn phi_inverse_round_trip() {
        let q = phi_inverse(&G, 0.5, 0.5).unwrap();
        assert!((phi(&G, 0.5, q).unwrap() - 0.5).abs() < 1e-12);
        assert!((q - kpz_closed_form(0.5, 0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn even_free_membership() {
        assert!(RaySet::EvenFree.contains(4, 0b1010));
        assert!(!RaySet::EvenFree.contains(4, 0b0100));
        assert!(RaySet::EvenFree.contains(3, 0b101));
        let count = (0..1u64 << 10)
            .filter(|&b| RaySet::EvenFree.contains(10, b))
            .count();
        assert_eq!(count, 32);
    }

    #[test]
    fn identity_map_dimensions() {
        let f = Flow::uniform(20);
        let scales: Vec<u32> = (1..=20).collect();
        let e = box_dimension_estimate(&f, RaySet::EvenFree, &scales).unwrap();
        assert!((0.45..=0.55).contains(&e.estimate), "{}", e.estimate);
        for c in &e.counts {
            assert_eq!(c.count, 1 << c.scale.div_ceil(2));
        }
        let full = box_dimension_estimate(&f, RaySet::Full, &scales).unwrap();
        assert!((0.95..=1.0 + 1e-12).contains(&full.estimate));
        assert!(box_dimension_estimate(&f, RaySet::Full, &[1, 2]).is_err());
    }

    #[test]
    fn cascade_image_shrinks_dimension() {
        let opts = PathOptions {
            record: Record::Final,
            ..PathOptions::default()
        };
        let p = simulate_path_with(&Flow::uniform(16), &G, &[0.0, 0.5], 16, 3, &opts).unwrap();
        let scales: Vec<u32> = (2..=16).collect();
        let e = box_dimension_estimate(&p.snapshots()[0], RaySet::EvenFree, &scales).unwrap();
        assert!(e.estimate < 0.5, "{}", e.estimate);
    }
}
