//! Observables of the Gaussian-driven cascade diffusion: overlap, quadratic
//! variation of the log total mass, ancestor covariations, an explosion
//! monitor, and a finite-level Girsanov drift check.

use serde::Serialize;

use crate::cascade::{
    run_replicas, simulate_path_with, subtree_overlap, uniform_grid, CascadePath, PathOptions,
    Record,
};
use crate::error::{CascadeError, Result};
use crate::stats::{mean, std_err};
use crate::tree_flow::{common_ancestor_depth, Flow, VertexId};
use crate::weight::WeightSpec;

/// Fraction of the overlap carried by the deepest level above which the
/// truncation is flagged.
pub const TAIL_FRACTION: f64 = 0.01;

/// `Σ_{1<=|v|<=n} (Γ(v)/Γ(root))^2`.
pub fn overlap(f: &Flow) -> f64 {
    subtree_overlap(f.masses(), VertexId::ROOT)
}

/// Overlap together with the share contributed by the deepest level.
pub fn overlap_with_tail(f: &Flow) -> (f64, f64) {
    let q = overlap(f);
    if f.depth() == 0 || q == 0.0 {
        return (q, 0.0);
    }
    let inv = 1.0 / f.root_mass();
    let deepest: f64 = f.leaves().iter().map(|&x| (x * inv) * (x * inv)).sum();
    (q, deepest / q)
}

#[derive(Clone, Debug, Serialize)]
pub struct OverlapSeries {
    pub times: Vec<f64>,
    pub overlap: Vec<f64>,
    /// Set when the deepest level carries more than `TAIL_FRACTION` of the
    /// overlap at some recorded time.
    pub tail_flag: bool,
}

/// Overlap at every recorded snapshot of `path`.
pub fn overlap_series(path: &CascadePath) -> OverlapSeries {
    let mut tail_flag = false;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (&k, f) in path.recorded_indices().iter().zip(path.snapshots()) {
        let (q, tail) = overlap_with_tail(f);
        tail_flag |= tail > TAIL_FRACTION;
        times.push(path.grid()[k]);
        values.push(q);
    }
    OverlapSeries {
        times,
        overlap: values,
        tail_flag,
    }
}

fn require_gaussian(path: &CascadePath) -> Result<()> {
    match path.spec() {
        Some(s) if s.is_gaussian() => Ok(()),
        _ => Err(CascadeError::NonGaussian),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QvComparison {
    /// `Σ_k (Δ log Γ_{t_k}(root))^2`.
    pub realized: f64,
    /// `Σ_k Q_{t_{k-1}} Δt_k`.
    pub predicted: f64,
    /// `(realized - predicted) / predicted`, zero when both vanish.
    pub rel_err: f64,
}

pub fn realized_vs_predicted_qv(path: &CascadePath) -> Result<QvComparison> {
    require_gaussian(path)?;
    let g = path.grid();
    let r = path.root_mass();
    let q = path.overlap();
    let mut realized = 0.0;
    let mut predicted = 0.0;
    for k in 1..g.len() {
        let d = (r[k] / r[k - 1]).ln();
        realized += d * d;
        predicted += q[k - 1] * (g[k] - g[k - 1]);
    }
    let rel_err = if predicted == 0.0 && realized == 0.0 {
        0.0
    } else {
        (realized - predicted) / predicted
    };
    Ok(QvComparison {
        realized,
        predicted,
        rel_err,
    })
}

/// Rate `|u ∧ v|` of `d⟨log Γ(u), log Γ(v)⟩` for non-ancestral vertices.
pub fn bracket_rate(u: VertexId, v: VertexId) -> Result<u32> {
    if u.is_ancestor_of(&v) || v.is_ancestor_of(&u) {
        return Err(CascadeError::AncestorPair(u, v));
    }
    Ok(common_ancestor_depth(u, v))
}

/// Realized covariation rate of `log Γ(u)` and `log Γ(v)` along the path, with
/// the Itô drift `-(|u| + Q_u)/2` removed from each increment. Both vertices
/// must be tracked by the path.
pub fn empirical_bracket(path: &CascadePath, u: VertexId, v: VertexId) -> Result<f64> {
    bracket_rate(u, v)?;
    require_gaussian(path)?;
    let find = |w: VertexId| {
        path.tracked()
            .iter()
            .find(|s| s.vertex == w)
            .ok_or_else(|| CascadeError::InsufficientData(format!("vertex {w} is not tracked")))
    };
    let (su, sv) = (find(u)?, find(v)?);
    let g = path.grid();
    let horizon = g[g.len() - 1];
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for k in 1..g.len() {
        let dt = g[k] - g[k - 1];
        let du = su.log_mass[k] - su.log_mass[k - 1]
            + 0.5 * (u.depth() as f64 + su.subtree_overlap[k - 1]) * dt;
        let dv = sv.log_mass[k] - sv.log_mass[k - 1]
            + 0.5 * (v.depth() as f64 + sv.subtree_overlap[k - 1]) * dt;
        acc += du * dv;
    }
    Ok(acc / horizon)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExplosionOptions {
    /// Root mass below `mass_ratio · Γ_0(root)` counts as collapsed.
    pub mass_ratio: f64,
    /// Accumulated overlap integral above which a collapse is flagged.
    pub integral_threshold: f64,
}

impl Default for ExplosionOptions {
    fn default() -> Self {
        ExplosionOptions {
            mass_ratio: 1e-6,
            integral_threshold: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExplosionSeries {
    pub times: Vec<f64>,
    /// Trapezoid rule for `∫_0^t Q_s ds`.
    pub integral: Vec<f64>,
    pub flags: Vec<bool>,
}

impl ExplosionSeries {
    pub fn flagged(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }
}

pub fn explosion_monitor(path: &CascadePath, opts: &ExplosionOptions) -> Result<ExplosionSeries> {
    require_gaussian(path)?;
    let g = path.grid();
    let q = path.overlap();
    let r = path.root_mass();
    let mut integral = Vec::with_capacity(g.len());
    let mut acc = 0.0;
    integral.push(0.0);
    for k in 1..g.len() {
        acc += 0.5 * (q[k] + q[k - 1]) * (g[k] - g[k - 1]);
        integral.push(acc);
    }
    let floor = opts.mass_ratio * r[0];
    let flags = integral
        .iter()
        .zip(r)
        .map(|(&i, &m)| m < floor && i > opts.integral_threshold)
        .collect();
    Ok(ExplosionSeries {
        times: g.to_vec(),
        integral,
        flags,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObservableRow {
    pub time: f64,
    pub root_mass: f64,
    pub overlap: f64,
    pub cum_qv: f64,
}

/// Per-grid-time root mass, overlap and running realized QV of `log Γ(root)`.
pub fn path_observables(path: &CascadePath) -> Vec<ObservableRow> {
    let mut cum = 0.0;
    path.grid()
        .iter()
        .enumerate()
        .map(|(k, &time)| {
            if k > 0 {
                let d = (path.root_mass()[k] / path.root_mass()[k - 1]).ln();
                cum += d * d;
            }
            ObservableRow {
                time,
                root_mass: path.root_mass()[k],
                overlap: path.overlap()[k],
                cum_qv: cum,
            }
        })
        .collect()
}

/// CSV rows `time,replica,root_mass,overlap,cum_qv`.
pub fn write_observables_csv<W: std::io::Write>(rows: &[Vec<ObservableRow>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "replica", "root_mass", "overlap", "cum_qv"])?;
    for (r, path_rows) in rows.iter().enumerate() {
        for row in path_rows {
            w.write_record([
                row.time.to_string(),
                r.to_string(),
                row.root_mass.to_string(),
                row.overlap.to_string(),
                row.cum_qv.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const GIRSANOV_MAX_DEPTH: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GirsanovResult {
    /// `E[B_T(v) Γ_T(root)] / E[Γ_T(root)]`.
    pub tilted_mean: f64,
    /// `E[Γ_T(root) ∫_0^T Γ_s(v)/Γ_s(root) ds] / E[Γ_T(root)]`.
    pub predicted_mean: f64,
    /// Replica mean of `Γ_T(root)(B_T(v) - ∫ ...)` over its standard error.
    pub z: f64,
    pub std_err: f64,
    pub replicas: usize,
}

/// Under the measure tilted by `Γ_T(root)`, the driving Brownian motion of `v`
/// acquires drift `Γ_s(v)/Γ_s(root)`. Estimates both sides by Monte Carlo on a
/// uniform grid of `steps` steps. With `drop_drift` the prediction is replaced
/// by zero, which must be rejected.
#[allow(clippy::too_many_arguments)]
pub fn girsanov_check(
    base: &Flow,
    depth: u32,
    t_end: f64,
    v: VertexId,
    replicas: usize,
    steps: usize,
    seed: u64,
    drop_drift: bool,
) -> Result<GirsanovResult> {
    if depth > GIRSANOV_MAX_DEPTH {
        return Err(CascadeError::DepthTooLarge {
            depth,
            max: GIRSANOV_MAX_DEPTH,
        });
    }
    if !base.is_normalized() {
        return Err(CascadeError::Unnormalized(base.root_mass()));
    }
    if v.is_root() || v.depth() > depth {
        return Err(CascadeError::OutOfRange(format!(
            "test vertex {v} must satisfy 1 <= |v| <= {depth}"
        )));
    }
    if replicas < 2 || steps == 0 {
        return Err(CascadeError::InsufficientData(
            "need at least 2 replicas and 1 step".into(),
        ));
    }
    if t_end == 0.0 {
        return Ok(GirsanovResult {
            tilted_mean: 0.0,
            predicted_mean: 0.0,
            z: 0.0,
            std_err: 0.0,
            replicas,
        });
    }
    let grid = uniform_grid(t_end, t_end / steps as f64)?;
    let opts = PathOptions {
        record: Record::Final,
        keep_weights: true,
        track: vec![v],
    };
    let spec = WeightSpec::Gaussian;
    let samples: Vec<Result<(f64, f64, f64)>> = run_replicas(replicas, seed, |_, s| {
        let p = simulate_path_with(base, &spec, &grid, depth, s, &opts)?;
        let last = grid.len() - 1;
        let t = grid[last];
        let b = p.log_weights(last).expect("final weights kept")[v] + 0.5 * t;
        let lv = &p.tracked()[0].log_mass;
        let r = p.root_mass();
        let mut integral = 0.0;
        for k in 1..grid.len() {
            let a = lv[k - 1].exp() / r[k - 1];
            let c = lv[k].exp() / r[k];
            integral += 0.5 * (a + c) * (grid[k] - grid[k - 1]);
        }
        if drop_drift {
            integral = 0.0;
        }
        Ok((r[last], b, integral))
    });
    let samples: Vec<(f64, f64, f64)> = samples.into_iter().collect::<Result<_>>()?;
    let gamma: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let gb: Vec<f64> = samples.iter().map(|s| s.0 * s.1).collect();
    let gi: Vec<f64> = samples.iter().map(|s| s.0 * s.2).collect();
    let d: Vec<f64> = samples.iter().map(|s| s.0 * (s.1 - s.2)).collect();
    let norm = mean(&gamma);
    let se = std_err(&d);
    Ok(GirsanovResult {
        tilted_mean: mean(&gb) / norm,
        predicted_mean: mean(&gi) / norm,
        z: if se > 0.0 { mean(&d) / se } else { 0.0 },
        std_err: se,
        replicas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::simulate_path;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    const G: WeightSpec = WeightSpec::Gaussian;

    #[test]
    fn overlap_of_uniform_flow() {
        for n in 0..=20 {
            let q = overlap(&Flow::uniform(n));
            assert!((q - (1.0 - (-(n as f64)).exp2())).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_of_point_mass_is_depth() {
        for n in 1..=10 {
            assert_eq!(
                overlap(&Flow::point_mass(n, 3 % (1 << n)).unwrap()),
                n as f64
            );
        }
    }

    #[test]
    fn overlap_is_scale_invariant() {
        let f = Flow::from_leaves(vec![0.3, 1.2, 0.1, 2.4, 0.8, 0.8, 0.05, 1.0]).unwrap();
        assert_eq!(overlap(&f.normalize()), overlap(&f));
    }

    #[test]
    fn overlap_is_mean_meeting_depth_of_two_rays() {
        let f = Flow::from_leaves((1..=64).map(|i| ((i * 7) % 13 + 1) as f64).collect()).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
        let meets: Vec<f64> = (0..100_000)
            .map(|_| {
                let a = f.sample_ray(&mut rng).unwrap().vertex();
                let b = f.sample_ray(&mut rng).unwrap().vertex();
                common_ancestor_depth(a, b) as f64
            })
            .collect();
        let (m, se) = (mean(&meets), std_err(&meets));
        assert!(
            (m - overlap(&f)).abs() < 4.0 * se,
            "{m} ± {se} vs {}",
            overlap(&f)
        );
    }

    #[test]
    fn overlap_bounds_and_monotonicity() {
        let p = simulate_path(&Flow::uniform(10), &G, &[0.0, 0.4], 10, 4).unwrap();
        let f = &p.snapshots()[1];
        let level_one: f64 = f.level(1).iter().map(|x| (x / f.root_mass()).powi(2)).sum();
        assert!(overlap(f) >= level_one);
        let qs: Vec<f64> = (0..=10).map(|n| overlap(&f.truncate(n).unwrap())).collect();
        assert!(qs.windows(2).all(|w| w[1] >= w[0]));
        let (_, tail) = overlap_with_tail(f);
        assert!(tail < TAIL_FRACTION);
        assert!(overlap_with_tail(&Flow::point_mass(3, 0).unwrap()).1 > TAIL_FRACTION);
    }

    #[test]
    fn frozen_grid_has_zero_qv() {
        let p = simulate_path(&Flow::uniform(6), &G, &[0.0], 6, 1).unwrap();
        let r = realized_vs_predicted_qv(&p).unwrap();
        assert_eq!((r.realized, r.predicted, r.rel_err), (0.0, 0.0, 0.0));
    }

    #[test]
    fn qv_rejects_jump_weights() {
        let p = simulate_path(
            &Flow::uniform(4),
            &WeightSpec::compound_poisson_default(),
            &[0.0, 0.1],
            4,
            1,
        )
        .unwrap();
        assert!(matches!(
            realized_vs_predicted_qv(&p),
            Err(CascadeError::NonGaussian)
        ));
    }

    #[test]
    fn realized_qv_is_scale_invariant() {
        let grid = uniform_grid(0.2, 0.01).unwrap();
        let f = Flow::from_leaves((1..=32).map(|i| i as f64).collect()).unwrap();
        let a = simulate_path(&f, &G, &grid, 5, 3).unwrap();
        let b = simulate_path(&f.normalize(), &G, &grid, 5, 3).unwrap();
        let (ra, rb) = (
            realized_vs_predicted_qv(&a).unwrap(),
            realized_vs_predicted_qv(&b).unwrap(),
        );
        assert!((ra.realized - rb.realized).abs() <= 1e-12 * ra.realized);
    }

    #[test]
    fn qv_error_shrinks_with_step() {
        let base = Flow::uniform(8);
        let mean_abs = |dt: f64| {
            let grid = uniform_grid(0.3, dt).unwrap();
            let errs = run_replicas(32, 10, |_, s| {
                let p =
                    simulate_path_with(&base, &G, &grid, 8, s, &PathOptions::summary()).unwrap();
                realized_vs_predicted_qv(&p).unwrap().rel_err.abs()
            });
            mean(&errs)
        };
        let (coarse, fine) = (mean_abs(0.01), mean_abs(0.0025));
        assert!(fine < coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn bracket_rate_values() {
        let v = |s: &str| VertexId::from_path(s).unwrap();
        assert_eq!(bracket_rate(v("0"), v("1")).unwrap(), 0);
        assert_eq!(bracket_rate(v("01100"), v("0111")).unwrap(), 3);
        assert!(matches!(
            bracket_rate(v("01"), v("011")),
            Err(CascadeError::AncestorPair(..))
        ));
        assert!(bracket_rate(v("01"), v("01")).is_err());
    }

    #[test]
    fn sibling_bracket_is_near_zero() {
        let (u, v) = (
            VertexId::from_path("0").unwrap(),
            VertexId::from_path("1").unwrap(),
        );
        let grid = uniform_grid(0.5, 1e-3).unwrap();
        let opts = PathOptions {
            record: Record::None,
            keep_weights: false,
            track: vec![u, v],
        };
        let est = run_replicas(16, 3, |_, s| {
            let p = simulate_path_with(&Flow::uniform(8), &G, &grid, 8, s, &opts).unwrap();
            empirical_bracket(&p, u, v).unwrap()
        });
        assert!(mean(&est).abs() < 0.1, "{}", mean(&est));
    }

    #[test]
    fn explosion_integral_is_monotone() {
        let grid = uniform_grid(0.5, 0.01).unwrap();
        let p = simulate_path(&Flow::uniform(8), &G, &grid, 8, 2).unwrap();
        let e = explosion_monitor(&p, &ExplosionOptions::default()).unwrap();
        assert_eq!(e.integral[0], 0.0);
        assert!(e.integral.windows(2).all(|w| w[1] >= w[0]));
        assert!(!e.flagged());
    }

    #[test]
    fn girsanov_trivial_horizon() {
        let v = VertexId::from_path("0").unwrap();
        let r = girsanov_check(&Flow::uniform(3), 3, 0.0, v, 10, 10, 1, false).unwrap();
        assert_eq!((r.tilted_mean, r.predicted_mean, r.z), (0.0, 0.0, 0.0));
        assert!(girsanov_check(&Flow::uniform(5), 5, 0.1, v, 10, 10, 1, false).is_err());
    }

    #[test]
    fn girsanov_drift_matches_and_control_fails() {
        let v = VertexId::from_path("0").unwrap();
        let r = girsanov_check(&Flow::uniform(3), 3, 0.2, v, 20_000, 50, 5, false).unwrap();
        assert!(r.z.abs() <= 4.0, "{r:?}");
        let c = girsanov_check(&Flow::uniform(3), 3, 0.2, v, 20_000, 50, 5, true).unwrap();
        assert!(c.z.abs() > 4.0, "{c:?}");
    }

    #[test]
    fn observables_csv_layout() {
        let p = simulate_path(&Flow::uniform(2), &G, &[0.0, 0.1], 2, 1).unwrap();
        let mut buf = Vec::new();
        write_observables_csv(&[path_observables(&p)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,replica,root_mass,overlap,cum_qv\n0,0,1,0.75,0\n"));
    }
}
