//! The finite-depth cascade constructor `C(Γ; W)` and its evolution along a
//! time grid under vertex weight processes.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CascadeError, Result};
use crate::noise::replica_seed;
use crate::stats::{linear_fit, mean, std_err};
use crate::tree_flow::{sum_up, Flow, TreeArray, VertexId};
use crate::weight::{IncrementLaw, WeightSpec};

pub const DEFAULT_STEP: f64 = 0.01;

/// Default horizon: 90% of the lifetime of the uniform flow.
pub fn default_horizon() -> f64 {
    0.9 * 2.0 * std::f64::consts::LN_2
}

/// `0, step, 2 step, ...` up to and including `t_end` (to within rounding).
pub fn uniform_grid(t_end: f64, step: f64) -> Result<Vec<f64>> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(CascadeError::OutOfRange(format!("t_end = {t_end}")));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(CascadeError::OutOfRange(format!("step = {step}")));
    }
    let m = (t_end / step + 1e-9).floor() as usize;
    Ok((0..=m).map(|k| k as f64 * step).collect())
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    match grid.first() {
        None => return Err(CascadeError::OutOfRange("empty time grid".into())),
        Some(&t0) if t0 != 0.0 => {
            return Err(CascadeError::OutOfRange(format!(
                "grid starts at {t0}, not 0"
            )))
        }
        _ => {}
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) || !w[1].is_finite() {
            return Err(CascadeError::OutOfRange(format!(
                "grid is not increasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Writes into `out` the cascade of the leaf masses `base_leaves` by the
/// per-vertex log-weights `logw`; the root entry of `logw` is ignored.
pub(crate) fn cascade_log_into(
    base_leaves: &[f64],
    logw: &TreeArray<f64>,
    out: &mut TreeArray<f64>,
) {
    let n = logw.depth();
    debug_assert_eq!(out.depth(), n);
    out.as_mut_slice()[0] = 0.0;
    for k in 0..n {
        let w = logw.level(k + 1);
        let (parents, children) = out.parent_and_children_mut(k);
        for (i, &p) in parents.iter().enumerate() {
            children[2 * i] = p + w[2 * i];
            children[2 * i + 1] = p + w[2 * i + 1];
        }
    }
    for (x, &b) in out.level_mut(n).iter_mut().zip(base_leaves) {
        *x = if b == 0.0 { 0.0 } else { b * x.exp() };
    }
    sum_up(out);
}

fn log_weights(weights: &TreeArray<f64>) -> Result<TreeArray<f64>> {
    let mut logw = TreeArray::filled(weights.depth(), 0.0);
    for (i, (&w, l)) in weights
        .as_slice()
        .iter()
        .zip(logw.as_mut_slice())
        .enumerate()
        .skip(1)
    {
        if !(w > 0.0) || !w.is_finite() {
            return Err(CascadeError::NonpositiveWeight {
                vertex: VertexId::from_heap_index(i),
                weight: w,
            });
        }
        *l = w.ln();
    }
    Ok(logw)
}

/// `C(base; W)` at the depth of `base`: leaf masses are multiplied by the
/// product of weights along their root path, internal masses are re-summed.
pub fn cascade_static(base: &Flow, weights: &TreeArray<f64>) -> Result<Flow> {
    if weights.depth() != base.depth() {
        return Err(CascadeError::DepthMismatch(weights.depth(), base.depth()));
    }
    let logw = log_weights(weights)?;
    let mut out = TreeArray::filled(base.depth(), 0.0);
    cascade_log_into(base.leaves(), &logw, &mut out);
    Ok(Flow::from_array_unchecked(out))
}

/// Cascades `current` by the given log-increments `log W_{t,t+s}(v)`.
pub fn compose_log(current: &Flow, log_increments: &TreeArray<f64>) -> Result<Flow> {
    if log_increments.depth() != current.depth() {
        return Err(CascadeError::DepthMismatch(
            log_increments.depth(),
            current.depth(),
        ));
    }
    let mut out = TreeArray::filled(current.depth(), 0.0);
    cascade_log_into(current.leaves(), log_increments, &mut out);
    Ok(Flow::from_array_unchecked(out))
}

/// `C(current; W_{t,t+s})` with increments drawn from the keys
/// `(seed, v, step_index)`. A zero duration returns `current` unchanged.
pub fn compose<L: IncrementLaw + ?Sized>(
    current: &Flow,
    law: &L,
    t: f64,
    s: f64,
    seed: u64,
    step_index: u64,
) -> Result<Flow> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(CascadeError::OutOfRange(format!("duration s = {s}")));
    }
    if s == 0.0 {
        return Ok(current.clone());
    }
    let mut inc = TreeArray::filled(current.depth(), 0.0);
    law.fill_log_increments(t, s, seed, step_index, &mut inc);
    compose_log(current, &inc)
}

/// Which grid times keep a full snapshot.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Record {
    #[default]
    All,
    Indices(Vec<usize>),
    Final,
    None,
}

#[derive(Clone, Debug, Default)]
pub struct PathOptions {
    pub record: Record,
    /// Keep `log X_t(v)` alongside each recorded snapshot.
    pub keep_weights: bool,
    /// Vertices whose log-mass and subtree overlap are logged at every grid time.
    pub track: Vec<VertexId>,
}

impl PathOptions {
    pub fn full() -> Self {
        PathOptions {
            record: Record::All,
            keep_weights: true,
            track: Vec::new(),
        }
    }

    pub fn summary() -> Self {
        PathOptions {
            record: Record::None,
            keep_weights: false,
            track: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackedSeries {
    pub vertex: VertexId,
    /// `log Γ_t(u)` at every grid time.
    pub log_mass: Vec<f64>,
    /// `Σ_{w strictly below u} (Γ_t(w)/Γ_t(u))^2` at every grid time.
    pub subtree_overlap: Vec<f64>,
}

/// One realization of `Γ_t^(n)` along a grid.
#[derive(Clone, Debug)]
pub struct CascadePath {
    depth: u32,
    grid: Vec<f64>,
    seed: u64,
    spec: Option<WeightSpec>,
    recorded: Vec<usize>,
    snapshots: Vec<Flow>,
    weight_states: Option<Vec<TreeArray<f64>>>,
    root_mass: Vec<f64>,
    overlap: Vec<f64>,
    tracked: Vec<TrackedSeries>,
}

impl CascadePath {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> Option<WeightSpec> {
        self.spec
    }

    /// Grid indices that carry a snapshot, ascending.
    pub fn recorded_indices(&self) -> &[usize] {
        &self.recorded
    }

    pub fn snapshots(&self) -> &[Flow] {
        &self.snapshots
    }

    pub fn snapshot(&self, grid_index: usize) -> Option<&Flow> {
        self.slot(grid_index).map(|i| &self.snapshots[i])
    }

    /// `log X_t(v)` per vertex at a recorded grid index, when weights were kept.
    pub fn log_weights(&self, grid_index: usize) -> Option<&TreeArray<f64>> {
        let i = self.slot(grid_index)?;
        self.weight_states.as_ref().map(|w| &w[i])
    }

    pub fn root_mass(&self) -> &[f64] {
        &self.root_mass
    }

    pub fn overlap(&self) -> &[f64] {
        &self.overlap
    }

    pub fn tracked(&self) -> &[TrackedSeries] {
        &self.tracked
    }

    fn slot(&self, grid_index: usize) -> Option<usize> {
        self.recorded.binary_search(&grid_index).ok()
    }

    /// `log W_{t_i,t_j}(v) = log X_{t_j}(v) - log X_{t_i}(v)`.
    pub fn log_increments(&self, i: usize, j: usize) -> Result<TreeArray<f64>> {
        let (a, b) = match (self.log_weights(i), self.log_weights(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(CascadeError::InsufficientData(format!(
                    "weight states at grid indices {i} and {j} were not kept"
                )))
            }
        };
        let mut out = b.clone();
        for (x, &y) in out.as_mut_slice().iter_mut().zip(a.as_slice()) {
            *x -= y;
        }
        Ok(out)
    }

    /// Largest relative gap between each recorded snapshot and the composition
    /// of an earlier recorded snapshot with the path's own increments.
    pub fn composition_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (a, &i) in self.recorded.iter().enumerate() {
            for &j in &self.recorded[a + 1..] {
                let composed = compose_log(self.snapshot(i).unwrap(), &self.log_increments(i, j)?)?;
                let target = self.snapshot(j).unwrap();
                worst = worst.max(max_relative_gap(composed.masses(), target.masses()));
            }
        }
        Ok(worst)
    }
}

/// `max_v |a(v) - b(v)| / |b(v)|`, with exact zeros treated as agreeing.
pub fn max_relative_gap(a: &TreeArray<f64>, b: &TreeArray<f64>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            if x == y {
                0.0
            } else {
                (x - y).abs() / y.abs().max(x.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// `Σ_{w strictly below v} (mass(w) / mass(v))^2`.
pub fn subtree_overlap(mass: &TreeArray<f64>, v: VertexId) -> f64 {
    let m = mass[v];
    if !(m > 0.0) {
        return 0.0;
    }
    let inv = 1.0 / m;
    let mut q = 0.0;
    for j in 1..=(mass.depth() - v.depth()) {
        let start = (v.bits() as usize) << j;
        for &x in &mass.level(v.depth() + j)[start..start + (1usize << j)] {
            let r = x * inv;
            q += r * r;
        }
    }
    q
}

/// `simulate_path_with` using the built-in law, recording every snapshot and
/// weight state.
pub fn simulate_path(
    base: &Flow,
    spec: &WeightSpec,
    grid: &[f64],
    depth: u32,
    seed: u64,
) -> Result<CascadePath> {
    spec.validate()?;
    simulate_path_with(base, spec, grid, depth, seed, &PathOptions::full())
}

/// Evolves `Γ_t^(n)` along `grid`. The increment over `(t_{k-1}, t_k]` at vertex
/// `v` is drawn from the key `(seed, v, k)`.
pub fn simulate_path_with<L: IncrementLaw + ?Sized>(
    base: &Flow,
    law: &L,
    grid: &[f64],
    depth: u32,
    seed: u64,
    opts: &PathOptions,
) -> Result<CascadePath> {
    validate_grid(grid)?;
    if depth > base.depth() {
        return Err(CascadeError::DepthMismatch(depth, base.depth()));
    }
    if let Some(u) = opts.track.iter().find(|u| u.depth() > depth) {
        return Err(CascadeError::OutOfRange(format!(
            "tracked vertex {u} is deeper than {depth}"
        )));
    }
    let base = if depth == base.depth() {
        base.clone()
    } else {
        base.truncate(depth)?
    };
    let m = grid.len();
    let mut wanted = vec![false; m];
    match &opts.record {
        Record::All => wanted.fill(true),
        Record::Indices(ix) => {
            for &i in ix {
                if i >= m {
                    return Err(CascadeError::OutOfRange(format!(
                        "record index {i} beyond grid of {m} points"
                    )));
                }
                wanted[i] = true;
            }
        }
        Record::Final => wanted[m - 1] = true,
        Record::None => {}
    }

    let mut path = CascadePath {
        depth,
        grid: grid.to_vec(),
        seed,
        spec: law.spec(),
        recorded: Vec::new(),
        snapshots: Vec::new(),
        weight_states: opts.keep_weights.then(Vec::new),
        root_mass: Vec::with_capacity(m),
        overlap: Vec::with_capacity(m),
        tracked: opts
            .track
            .iter()
            .map(|&vertex| TrackedSeries {
                vertex,
                log_mass: Vec::with_capacity(m),
                subtree_overlap: Vec::with_capacity(m),
            })
            .collect(),
    };

    let mut logw = TreeArray::filled(depth, 0.0);
    let mut inc = TreeArray::filled(depth, 0.0);
    let mut mass = base.masses().clone();
    for k in 0..m {
        if k > 0 {
            let dt = grid[k] - grid[k - 1];
            law.fill_log_increments(grid[k - 1], dt, seed, k as u64, &mut inc);
            for (x, &d) in logw.as_mut_slice().iter_mut().zip(inc.as_slice()) {
                *x += d;
            }
            cascade_log_into(base.leaves(), &logw, &mut mass);
        }
        path.root_mass.push(mass.as_slice()[0]);
        path.overlap.push(subtree_overlap(&mass, VertexId::ROOT));
        for tr in &mut path.tracked {
            tr.log_mass.push(mass[tr.vertex].ln());
            tr.subtree_overlap.push(subtree_overlap(&mass, tr.vertex));
        }
        if wanted[k] {
            path.recorded.push(k);
            path.snapshots.push(if k == 0 {
                base.clone()
            } else {
                Flow::from_array_unchecked(mass.clone())
            });
            if let Some(ws) = &mut path.weight_states {
                ws.push(logw.clone());
            }
        }
    }
    Ok(path)
}

/// Runs `f(replica, replica_seed)` for every replica on the current rayon
/// pool; the output order is the replica order regardless of scheduling.
pub fn run_replicas<T, F>(replicas: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    (0..replicas)
        .into_par_iter()
        .map(|r| f(r, replica_seed(seed, r as u64)))
        .collect()
}

/// Relative gap between the full cascade restricted below `v` and
/// `X(v) · C(base|v; W|v)`.
pub fn subtree_identity_error(base: &Flow, weights: &TreeArray<f64>, v: VertexId) -> Result<f64> {
    let full = cascade_static(base, weights)?;
    let sub_base = base.restrict(v)?;
    let sub_weights = restrict_array(weights, v);
    let sub = cascade_static(&sub_base, &sub_weights)?;
    let mut x = 1.0;
    let mut u = v;
    while let Some(p) = u.parent() {
        x *= weights[u];
        u = p;
    }
    let mut scaled = sub.masses().clone();
    for m in scaled.as_mut_slice() {
        *m *= x;
    }
    Ok(max_relative_gap(&scaled, full.restrict(v)?.masses()))
}

fn restrict_array(a: &TreeArray<f64>, v: VertexId) -> TreeArray<f64> {
    let sub_depth = a.depth() - v.depth();
    let mut data = Vec::with_capacity((1usize << (sub_depth + 1)) - 1);
    for j in 0..=sub_depth {
        let start = (v.bits() as usize) << j;
        data.extend_from_slice(&a.level(v.depth() + j)[start..start + (1usize << j)]);
    }
    let mut out = TreeArray::from_vec(data).expect("subtree shape");
    // The subtree root carries no weight of its own.
    out.as_mut_slice()[0] = 1.0;
    out
}

/// Largest `|Γ_{t_k}(root) - Γ_{t_{k-1}}(root)|` on uniform grids of each step
/// size, all driven by the same seed.
pub fn continuity_proxy(
    base: &Flow,
    spec: &WeightSpec,
    t_end: f64,
    steps: &[f64],
    depth: u32,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if !spec.is_gaussian() {
        return Err(CascadeError::NonGaussian);
    }
    steps
        .iter()
        .map(|&dt| {
            let grid = uniform_grid(t_end, dt)?;
            let p = simulate_path_with(base, spec, &grid, depth, seed, &PathOptions::summary())?;
            let jump = p
                .root_mass()
                .windows(2)
                .map(|w| (w[1] - w[0]).abs())
                .fold(0.0, f64::max);
            Ok((dt, jump))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow {
    pub n: u32,
    /// Replica mean of `|Γ_t^(n+1)(root) - Γ_t^(n)(root)|^h`.
    pub empirical: f64,
    pub std_err: f64,
    /// `E[W_t^h]^(n+1) Σ_{|v|=n+1} Γ(v)^h`.
    pub shape: f64,
    /// `fitted_c · shape`.
    pub bound: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub t: f64,
    pub h: f64,
    pub replicas: usize,
    pub fitted_c: f64,
    pub rows: Vec<ProbeRow>,
    /// Slope of `log empirical` against `n`.
    pub empirical_slope: Option<f64>,
    /// Slope of `log shape` against `n`.
    pub shape_slope: Option<f64>,
}

/// Successive-level differences of the root mass at time `t`, with all
/// depths driven by the same vertex noise so that refinements are coupled.
pub fn convergence_probe(
    base: &Flow,
    spec: &WeightSpec,
    t: f64,
    depths: &[u32],
    h: f64,
    replicas: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    if !(h > 1.0 && h <= 2.0) {
        return Err(CascadeError::OutOfRange(format!("h = {h} outside (1, 2]")));
    }
    spec.validate()?;
    let deepest = depths
        .iter()
        .copied()
        .max()
        .ok_or_else(|| CascadeError::InsufficientData("no probe depths".into()))?;
    if deepest + 1 > base.depth() {
        return Err(CascadeError::DepthMismatch(deepest + 1, base.depth()));
    }
    if replicas < 2 {
        return Err(CascadeError::InsufficientData(
            "need at least 2 replicas".into(),
        ));
    }
    let n_max = deepest + 1;
    let base = base.truncate(n_max)?;

    // Per replica: the level sums Σ_{|v|=k} Γ(v) X_t(v) for k = 0..=n_max.
    let level_sums: Vec<Vec<f64>> = if t == 0.0 {
        vec![vec![0.0; n_max as usize + 1]; replicas]
    } else {
        run_replicas(replicas, seed, |_, s| {
            let mut cum = TreeArray::filled(n_max, 0.0);
            spec.fill_log_increments(0.0, t, s, 1, &mut cum);
            for k in 0..n_max {
                let (parents, children) = cum.parent_and_children_mut(k);
                for (i, &p) in parents.iter().enumerate() {
                    children[2 * i] += p;
                    children[2 * i + 1] += p;
                }
            }
            (0..=n_max)
                .map(|k| {
                    base.level(k)
                        .iter()
                        .zip(cum.level(k))
                        .map(|(&b, &c)| if b == 0.0 { 0.0 } else { b * c.exp() })
                        .sum()
                })
                .collect()
        })
    };

    let log_mh = spec.log_moment(t, h)?;
    let mut rows = Vec::with_capacity(depths.len());
    for &n in depths {
        let diffs: Vec<f64> = level_sums
            .iter()
            .map(|s| (s[n as usize + 1] - s[n as usize]).abs().powf(h))
            .collect();
        let level_h: f64 = base.level(n + 1).iter().map(|&g| g.powf(h)).sum();
        rows.push(ProbeRow {
            n,
            empirical: mean(&diffs),
            std_err: std_err(&diffs),
            shape: ((n + 1) as f64 * log_mh).exp() * level_h,
            bound: f64::NAN,
            flagged: false,
        });
    }

    let logs: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.empirical > 0.0 && r.shape > 0.0)
        .map(|r| (r.empirical.ln(), r.shape.ln()))
        .collect();
    let fitted_c = if logs.is_empty() {
        0.0
    } else {
        (logs.iter().map(|(e, s)| e - s).sum::<f64>() / logs.len() as f64).exp()
    };
    for r in &mut rows {
        r.bound = fitted_c * r.shape;
        r.flagged = r.empirical - 2.0 * r.std_err > 10.0 * r.bound;
    }

    let slope_of = |pick: &dyn Fn(&ProbeRow) -> f64| -> Option<f64> {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.n as f64, pick(r)))
            .filter(|(_, y)| *y > 0.0)
            .map(|(x, y)| (x, y.ln()))
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_fit(&x, &y).ok().map(|f| f.slope)
    };
    let empirical_slope = slope_of(&|r| r.empirical);
    let shape_slope = slope_of(&|r| r.shape);
    Ok(ConvergenceTable {
        t,
        h,
        replicas,
        fitted_c,
        rows,
        empirical_slope,
        shape_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::VertexNoiseKey;
    use crate::tree_flow::validate_flow;
    use proptest::prelude::*;

    fn weights_from(depth: u32, f: impl Fn(usize) -> f64) -> TreeArray<f64> {
        let mut w = TreeArray::filled(depth, 1.0);
        for (i, x) in w.as_mut_slice().iter_mut().enumerate().skip(1) {
            *x = f(i);
        }
        w
    }

    #[test]
    fn unit_weights_return_base() {
        let base = Flow::uniform(6);
        let out = cascade_static(&base, &TreeArray::filled(6, 1.0)).unwrap();
        assert_eq!(out.masses(), base.masses());
        let base = Flow::from_leaves(vec![0.1, 0.4, 0.2, 0.3]).unwrap();
        let out = cascade_static(&base, &TreeArray::filled(2, 1.0)).unwrap();
        assert_eq!(out.masses(), base.masses());
    }

    #[test]
    fn depth_one_root_mass() {
        let base = Flow::uniform(1);
        let w = TreeArray::from_vec(vec![1.0, 0.3, 2.5]).unwrap();
        let out = cascade_static(&base, &w).unwrap();
        assert!((out.root_mass() - (0.3 + 2.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_weight() {
        let w = TreeArray::from_vec(vec![1.0, 0.0, 2.5]).unwrap();
        assert!(matches!(
            cascade_static(&Flow::uniform(1), &w),
            Err(CascadeError::NonpositiveWeight { .. })
        ));
    }

    #[test]
    fn static_root_mass_is_unbiased() {
        let base = Flow::uniform(5);
        let spec = WeightSpec::Gaussian;
        let roots = run_replicas(100_000, 8, |_, s| {
            let w = weights_from(5, |i| {
                let key = VertexNoiseKey::new(s, VertexId::from_heap_index(i), 0);
                spec.sample_increment(0.0, 0.4, &key).unwrap()
            });
            cascade_static(&base, &w).unwrap().root_mass()
        });
        let (m, se) = (mean(&roots), std_err(&roots));
        assert!((m - 1.0).abs() < 4.0 * se, "{m} ± {se}");
    }

    #[test]
    fn single_grid_point_returns_base() {
        let base = Flow::from_leaves(vec![0.1, 0.4, 0.2, 0.3]).unwrap();
        let p = simulate_path(&base, &WeightSpec::Gaussian, &[0.0], 2, 1).unwrap();
        assert_eq!(p.snapshots().len(), 1);
        assert_eq!(p.snapshots()[0].masses(), base.masses());
    }

    #[test]
    fn snapshots_match_static_cascade_of_current_weights() {
        let base = Flow::uniform(6);
        let grid = uniform_grid(0.5, 0.1).unwrap();
        let p = simulate_path(&base, &WeightSpec::Gaussian, &grid, 6, 3).unwrap();
        for k in 0..grid.len() {
            let lw = p.log_weights(k).unwrap();
            let w = weights_from(6, |i| lw.as_slice()[i].exp());
            let direct = cascade_static(&base, &w).unwrap();
            assert!(max_relative_gap(direct.masses(), p.snapshot(k).unwrap().masses()) < 1e-13);
            assert!(validate_flow(p.snapshot(k).unwrap()).is_valid());
            // Leaf mass is base mass times the path product.
            let snap = p.snapshot(k).unwrap();
            for (b, leaf) in snap.leaves().iter().enumerate() {
                let mut v = VertexId::new(6, b as u64).unwrap();
                let mut log_x = 0.0;
                while let Some(par) = v.parent() {
                    log_x += lw[v];
                    v = par;
                }
                let want = base.leaves()[b] * log_x.exp();
                assert!((leaf - want).abs() <= 1e-12 * want);
            }
        }
    }

    #[test]
    fn same_seed_same_path() {
        let base = Flow::uniform(5);
        let grid = uniform_grid(0.3, 0.05).unwrap();
        let a = simulate_path(&base, &WeightSpec::compound_poisson_default(), &grid, 5, 9).unwrap();
        let b = simulate_path(&base, &WeightSpec::compound_poisson_default(), &grid, 5, 9).unwrap();
        for (x, y) in a.snapshots().iter().zip(b.snapshots()) {
            let same = x
                .masses()
                .as_slice()
                .iter()
                .zip(y.masses().as_slice())
                .all(|(p, q)| p.to_bits() == q.to_bits());
            assert!(same);
        }
    }

    #[test]
    fn shallower_run_reuses_shared_vertex_noise() {
        let grid = uniform_grid(0.2, 0.1).unwrap();
        let deep = simulate_path(&Flow::uniform(6), &WeightSpec::Gaussian, &grid, 6, 4).unwrap();
        let shallow = simulate_path(&Flow::uniform(6), &WeightSpec::Gaussian, &grid, 3, 4).unwrap();
        let a = deep.log_weights(2).unwrap();
        let b = shallow.log_weights(2).unwrap();
        for (v, x) in b.iter() {
            assert_eq!(x.to_bits(), a[v].to_bits());
        }
    }

    #[test]
    fn composition_with_own_increments_is_exact() {
        let base = Flow::uniform(8);
        let grid = uniform_grid(1.0, 0.1).unwrap();
        for spec in [WeightSpec::Gaussian, WeightSpec::compound_poisson_default()] {
            let p = simulate_path(&base, &spec, &grid, 8, 12).unwrap();
            assert!(p.composition_error().unwrap() <= 1e-12);
        }
    }

    #[test]
    fn zero_duration_compose_is_identity() {
        let f = Flow::from_leaves(vec![0.1, 0.4, 0.2, 0.3]).unwrap();
        let g = compose(&f, &WeightSpec::Gaussian, 0.3, 0.0, 1, 1).unwrap();
        assert_eq!(f.masses(), g.masses());
        let g = compose_log(&f, &TreeArray::filled(2, 0.0)).unwrap();
        assert_eq!(f.masses(), g.masses());
    }

    #[test]
    fn subtree_identity_holds() {
        let base = Flow::from_leaves((1..=32).map(|i| i as f64).collect()).unwrap();
        let w = weights_from(5, |i| 0.5 + ((i * 37) % 11) as f64 / 7.0);
        for v in ["0", "1", "01", "110", "10101"] {
            let v = VertexId::from_path(v).unwrap();
            assert!(subtree_identity_error(&base, &w, v).unwrap() < 1e-13);
        }
    }

    #[test]
    fn continuity_proxy_shrinks_with_step() {
        let out = continuity_proxy(
            &Flow::uniform(8),
            &WeightSpec::Gaussian,
            0.5,
            &[0.04, 0.01, 0.0025],
            8,
            2,
        )
        .unwrap();
        assert!(out[0].1 > out[1].1 && out[1].1 > out[2].1, "{out:?}");
        assert!(continuity_proxy(
            &Flow::uniform(4),
            &WeightSpec::compound_poisson_default(),
            0.5,
            &[0.1],
            4,
            2
        )
        .is_err());
    }

    #[test]
    fn probe_at_time_zero_is_exactly_zero() {
        let t = convergence_probe(
            &Flow::uniform(8),
            &WeightSpec::Gaussian,
            0.0,
            &[2, 4, 6],
            1.5,
            10,
            1,
        )
        .unwrap();
        assert!(t.rows.iter().all(|r| r.empirical == 0.0));
        assert!(convergence_probe(
            &Flow::uniform(8),
            &WeightSpec::Gaussian,
            0.5,
            &[2],
            2.5,
            10,
            1
        )
        .is_err());
    }

    #[test]
    fn probe_on_single_ray_reduces_to_scalar_products() {
        let base = Flow::point_mass(6, 0b001011).unwrap();
        let spec = WeightSpec::Gaussian;
        let (t, h, seed) = (0.4, 1.5, 77);
        let table = convergence_probe(&base, &spec, t, &[1, 3, 5], h, 4, seed).unwrap();
        for row in &table.rows {
            let diffs: Vec<f64> = (0..4u64)
                .map(|r| {
                    let s = replica_seed(seed, r);
                    let ray = VertexId::new(6, 0b001011).unwrap();
                    let x = |n: u32| -> f64 {
                        (1..=n)
                            .map(|k| {
                                let key = VertexNoiseKey::new(s, ray.ancestor(k).unwrap(), 1);
                                spec.sample_log_increment(0.0, t, &key).unwrap()
                            })
                            .sum::<f64>()
                            .exp()
                    };
                    (x(row.n + 1) - x(row.n)).abs().powf(h)
                })
                .collect();
            assert!((row.empirical - mean(&diffs)).abs() <= 1e-12 * mean(&diffs));
        }
    }

    #[test]
    fn probe_decay_rate_for_uniform_flow() {
        let (t, h) = (0.5, 1.5);
        let table = convergence_probe(
            &Flow::uniform(13),
            &WeightSpec::Gaussian,
            t,
            &[4, 6, 8, 10, 12],
            h,
            400,
            21,
        )
        .unwrap();
        let alpha = (1.0 - h) * std::f64::consts::LN_2 + t * h * (h - 1.0) / 2.0;
        assert!((table.shape_slope.unwrap() - alpha).abs() < 1e-12);
        assert!(table.empirical_slope.unwrap() <= alpha + 0.05, "{table:?}");
        assert!(table.rows.iter().all(|r| !r.flagged));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn cascades_are_valid_flows(seed in any::<u64>(), depth in 0u32..7, t in 0.01f64..1.5) {
            let p = simulate_path(&Flow::uniform(depth), &WeightSpec::Gaussian, &[0.0, t], depth, seed).unwrap();
            prop_assert!(validate_flow(&p.snapshots()[1]).is_valid());
        }
    }
}
