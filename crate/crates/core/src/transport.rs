//! Wasserstein distance between flows for the boundary ultrametric
//! `d(ξ, η) = 2^(-|ξ ∧ η|)`, resolved at the depth-n cylinders.

use serde::Serialize;

use crate::cascade::CascadePath;
use crate::error::{CascadeError, Result};
use crate::stats::{linear_fit, median, LinearFit};
use crate::tree_flow::{common_ancestor_depth, Flow, TreeArray, VertexId};

/// Largest depth accepted by the LP oracle.
pub const LP_MAX_DEPTH: u32 = 8;
/// Minimum number of snapshots for a Hölder fit.
pub const MIN_SNAPSHOTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TreeFormula,
    LpOracle,
    CouplingBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransportResult {
    pub value: f64,
    pub method: Method,
    /// Additive error ceiling from resolving rays only to depth n.
    pub truncation_bound: f64,
}

fn check_pair(mu: &Flow, nu: &Flow) -> Result<()> {
    if mu.depth() != nu.depth() {
        return Err(CascadeError::DepthMismatch(mu.depth(), nu.depth()));
    }
    for f in [mu, nu] {
        if !f.is_normalized() {
            return Err(CascadeError::Unnormalized(f.root_mass()));
        }
    }
    Ok(())
}

/// Edge weight into a vertex of generation `k` at truncation depth `n`.
#[inline]
fn edge_weight(k: u32, n: u32) -> f64 {
    if k == n {
        (-(n as f64)).exp2()
    } else {
        (-((k + 1) as f64)).exp2()
    }
}

/// `Σ_v w(|v|) |a μ(v) - b ν(v)|` over non-root vertices.
fn tree_formula(mu: &TreeArray<f64>, a: f64, nu: &TreeArray<f64>, b: f64) -> f64 {
    let n = mu.depth();
    (1..=n)
        .map(|k| {
            let s: f64 = mu
                .level(k)
                .iter()
                .zip(nu.level(k))
                .map(|(&x, &y)| (a * x - b * y).abs())
                .sum();
            edge_weight(k, n) * s
        })
        .sum()
}

/// Exact `W_1` between the depth-n cylinder distributions, with cost
/// `2^(-|i ∧ j|)` between distinct cylinders and 0 within a cylinder.
pub fn wasserstein_exact(mu: &Flow, nu: &Flow) -> Result<TransportResult> {
    check_pair(mu, nu)?;
    Ok(TransportResult {
        value: tree_formula(mu.masses(), 1.0, nu.masses(), 1.0),
        method: Method::TreeFormula,
        truncation_bound: (-(mu.depth() as f64)).exp2(),
    })
}

/// The same distance between the normalizations of two unnormalized flows.
pub fn wasserstein_normalized(mu: &Flow, nu: &Flow) -> Result<f64> {
    if mu.depth() != nu.depth() {
        return Err(CascadeError::DepthMismatch(mu.depth(), nu.depth()));
    }
    Ok(tree_formula(
        mu.masses(),
        1.0 / mu.root_mass(),
        nu.masses(),
        1.0 / nu.root_mass(),
    ))
}

/// Solves the leaf-to-leaf transportation problem by min-cost flow.
pub fn wasserstein_lp_oracle(mu: &Flow, nu: &Flow) -> Result<TransportResult> {
    check_pair(mu, nu)?;
    let n = mu.depth();
    if n > LP_MAX_DEPTH {
        return Err(CascadeError::DepthTooLarge {
            depth: n,
            max: LP_MAX_DEPTH,
        });
    }
    let cost = |i: usize, j: usize| -> f64 {
        if i == j {
            0.0
        } else {
            let a = VertexId::new(n, i as u64).expect("leaf index");
            let b = VertexId::new(n, j as u64).expect("leaf index");
            (-(common_ancestor_depth(a, b) as f64)).exp2()
        }
    };
    let value = transportation_cost(mu.leaves(), nu.leaves(), cost);
    Ok(TransportResult {
        value,
        method: Method::LpOracle,
        truncation_bound: (-(n as f64)).exp2(),
    })
}

const AMOUNT_EPS: f64 = 1e-15;

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Successive shortest paths with Johnson potentials on the bipartite
/// transportation network `source -> supplies -> demands -> sink`.
fn transportation_cost(supply: &[f64], demand: &[f64], cost: impl Fn(usize, usize) -> f64) -> f64 {
    let (p, q) = (supply.len(), demand.len());
    let source = p + q;
    let sink = source + 1;
    let nodes = sink + 1;
    let mut edges: Vec<Edge> = Vec::with_capacity(2 * (p * q + p + q));
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let add =
        |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, u: usize, v: usize, cap: f64, c: f64| {
            adj[u].push(edges.len());
            edges.push(Edge {
                to: v,
                cap,
                cost: c,
            });
            adj[v].push(edges.len());
            edges.push(Edge {
                to: u,
                cap: 0.0,
                cost: -c,
            });
        };
    for (i, &s) in supply.iter().enumerate() {
        if s > AMOUNT_EPS {
            add(&mut edges, &mut adj, source, i, s, 0.0);
        }
    }
    for (j, &d) in demand.iter().enumerate() {
        if d > AMOUNT_EPS {
            add(&mut edges, &mut adj, p + j, sink, d, 0.0);
        }
    }
    for i in 0..p {
        for j in 0..q {
            add(&mut edges, &mut adj, i, p + j, f64::INFINITY, cost(i, j));
        }
    }

    let target: f64 = supply.iter().sum::<f64>().min(demand.iter().sum());
    let mut potential = vec![0.0; nodes];
    let mut shipped = 0.0;
    let mut total = 0.0;
    let mut dist = vec![0.0; nodes];
    let mut prev_edge = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    while target - shipped > AMOUNT_EPS {
        dist.fill(f64::INFINITY);
        prev_edge.fill(usize::MAX);
        done.fill(false);
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            for &e in &adj[u] {
                let edge = &edges[e];
                if edge.cap <= AMOUNT_EPS || done[edge.to] {
                    continue;
                }
                let reduced = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                let nd = dist[u] + reduced;
                if nd < dist[edge.to] {
                    dist[edge.to] = nd;
                    prev_edge[edge.to] = e;
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        for v in 0..nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        push = push.min(target - shipped);
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            total += push * edges[e].cost;
            v = edges[e ^ 1].to;
        }
        shipped += push;
    }
    total
}

/// Partial sum to depth n of the cost of the level-by-level coupling:
/// `Σ_k 2^(-k+1) Σ_{|v|=k-1} ν(v) |ν(v_L)/ν(v) - μ(v_L)/μ(v)|`.
pub fn coupling_upper_bound(mu: &Flow, nu: &Flow) -> Result<TransportResult> {
    check_pair(mu, nu)?;
    for f in [mu, nu] {
        if let Some(v) = f.first_zero() {
            return Err(CascadeError::DegenerateFlow(v));
        }
    }
    let n = mu.depth();
    let mut value = 0.0;
    for k in 1..=n {
        let (pm, pn) = (mu.level(k - 1), nu.level(k - 1));
        let (cm, cn) = (mu.level(k), nu.level(k));
        let s: f64 = (0..pm.len())
            .map(|i| pn[i] * (cn[2 * i] / pn[i] - cm[2 * i] / pm[i]).abs())
            .sum();
        value += (-((k - 1) as f64)).exp2() * s;
    }
    Ok(TransportResult {
        value,
        method: Method::CouplingBound,
        truncation_bound: (-(n as f64)).exp2(),
    })
}

/// Distances between snapshot pairs separated by one dyadic lag.
#[derive(Clone, Debug, Serialize)]
pub struct LagDistances {
    pub lag_steps: usize,
    /// Mean time separation of the sampled pairs.
    pub lag: f64,
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LagSummary {
    pub lag: f64,
    pub median_log_distance: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderFit {
    /// `None` when every distance is zero.
    pub fit: Option<LinearFit>,
    pub degenerate: bool,
    pub lags: Vec<LagSummary>,
}

impl HolderFit {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    /// Approximate 95% interval for the slope.
    pub fn confidence_interval(&self) -> Option<(f64, f64)> {
        self.fit
            .map(|f| (f.slope - 1.96 * f.slope_se, f.slope + 1.96 * f.slope_se))
    }
}

/// Normalized-snapshot distances at lags of 1, 2, 4, ... grid steps, using at
/// most `pair_budget` evenly spread pairs per lag.
pub fn lag_distances(path: &CascadePath, pair_budget: usize) -> Result<Vec<LagDistances>> {
    if matches!(path.spec(), Some(s) if !s.is_gaussian()) {
        return Err(CascadeError::NonGaussian);
    }
    let idx = path.recorded_indices();
    let snaps = path.snapshots();
    let m = snaps.len();
    if m < MIN_SNAPSHOTS {
        return Err(CascadeError::InsufficientData(format!(
            "{m} snapshots, need at least {MIN_SNAPSHOTS}"
        )));
    }
    if pair_budget == 0 {
        return Err(CascadeError::OutOfRange(
            "pair budget must be positive".into(),
        ));
    }
    let grid = path.grid();
    let mut out = Vec::new();
    let mut lag = 1;
    while 2 * lag < m {
        let count = m - lag;
        let starts: Vec<usize> = if count <= pair_budget {
            (0..count).collect()
        } else if pair_budget == 1 {
            vec![0]
        } else {
            (0..pair_budget)
                .map(|j| j * (count - 1) / (pair_budget - 1))
                .collect()
        };
        let mut distances = Vec::with_capacity(starts.len());
        let mut span = 0.0;
        for &i in &starts {
            distances.push(wasserstein_normalized(&snaps[i], &snaps[i + lag])?);
            span += grid[idx[i + lag]] - grid[idx[i]];
        }
        out.push(LagDistances {
            lag_steps: lag,
            lag: span / starts.len() as f64,
            distances,
        });
        lag *= 2;
    }
    Ok(out)
}

/// Regresses the median log-distance per lag, pooled over paths, on log lag.
pub fn holder_fit(per_path: &[Vec<LagDistances>]) -> Result<HolderFit> {
    let first = per_path
        .first()
        .ok_or_else(|| CascadeError::InsufficientData("no paths".into()))?;
    let mut lags = Vec::with_capacity(first.len());
    let mut degenerate = true;
    for (l, reference) in first.iter().enumerate() {
        let mut logs = Vec::new();
        let mut span = 0.0;
        for p in per_path {
            let ld = p
                .get(l)
                .filter(|x| x.lag_steps == reference.lag_steps)
                .ok_or_else(|| {
                    CascadeError::InsufficientData("paths have different lag sets".into())
                })?;
            span += ld.lag;
            for &d in &ld.distances {
                if d > 0.0 {
                    degenerate = false;
                }
                logs.push(d.ln());
            }
        }
        lags.push(LagSummary {
            lag: span / per_path.len() as f64,
            median_log_distance: median(&logs),
            pairs: logs.len(),
        });
    }
    if degenerate {
        return Ok(HolderFit {
            fit: None,
            degenerate,
            lags,
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = lags
        .iter()
        .filter(|s| s.median_log_distance.is_finite())
        .map(|s| (s.lag.ln(), s.median_log_distance))
        .unzip();
    Ok(HolderFit {
        fit: Some(linear_fit(&x, &y)?),
        degenerate,
        lags,
    })
}

/// Hölder exponent estimate from a single path.
pub fn holder_exponent(path: &CascadePath, pair_budget: usize) -> Result<HolderFit> {
    holder_fit(&[lag_distances(path, pair_budget)?])
}

/// CSV rows `lag,replica,distance`.
pub fn write_lag_csv<W: std::io::Write>(per_path: &[Vec<LagDistances>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lag", "replica", "distance"])?;
    for (r, p) in per_path.iter().enumerate() {
        for ld in p {
            for d in &ld.distances {
                w.write_record([ld.lag.to_string(), r.to_string(), d.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{simulate_path_with, uniform_grid, PathOptions};
    use crate::weight::{IncrementLaw, WeightSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_flow(depth: u32, rng: &mut Xoshiro256PlusPlus) -> Flow {
        let leaves: Vec<f64> = (0..1usize << depth)
            .map(|_| rng.random::<f64>() + 1e-3)
            .collect();
        Flow::from_leaves(leaves).unwrap().normalize()
    }

    #[test]
    fn identical_flows_are_at_distance_zero() {
        let f = Flow::from_leaves(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(wasserstein_exact(&f, &f).unwrap().value, 0.0);
        assert_eq!(coupling_upper_bound(&f, &f).unwrap().value, 0.0);
        assert!(wasserstein_lp_oracle(&f, &f).unwrap().value.abs() < 1e-15);
    }

    #[test]
    fn opposite_point_masses() {
        for n in 1..=6 {
            let a = Flow::point_mass(n, 0).unwrap();
            let b = Flow::point_mass(n, (1 << n) - 1).unwrap();
            let exact = wasserstein_exact(&a, &b).unwrap();
            assert!((exact.value - 1.0).abs() < 1e-15);
            assert_eq!(exact.truncation_bound, (-(n as f64)).exp2());
            assert!((wasserstein_lp_oracle(&a, &b).unwrap().value - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_two_against_hand_value() {
        let mu = Flow::uniform(2);
        let nu = Flow::point_mass(2, 0).unwrap();
        // 0.25 moves at distance 1/2, 0.5 at distance 1.
        let want = 0.625;
        assert!((wasserstein_exact(&mu, &nu).unwrap().value - want).abs() < 1e-15);
        assert!((wasserstein_lp_oracle(&mu, &nu).unwrap().value - want).abs() < 1e-9);
    }

    #[test]
    fn depth_one_coupling_bound() {
        let mu = Flow::from_leaves(vec![0.3, 0.7]).unwrap();
        let nu = Flow::from_leaves(vec![0.6, 0.4]).unwrap();
        assert!((coupling_upper_bound(&mu, &nu).unwrap().value - 0.3).abs() < 1e-15);
        assert!((wasserstein_lp_oracle(&mu, &nu).unwrap().value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn input_checks() {
        let a = Flow::uniform(2);
        assert!(matches!(
            wasserstein_exact(&a, &Flow::uniform(3)),
            Err(CascadeError::DepthMismatch(2, 3))
        ));
        let big = Flow::from_leaves(vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            wasserstein_exact(&a, &big),
            Err(CascadeError::Unnormalized(_))
        ));
        assert!(matches!(
            wasserstein_lp_oracle(&Flow::uniform(9), &Flow::uniform(9)),
            Err(CascadeError::DepthTooLarge { .. })
        ));
        assert!(matches!(
            coupling_upper_bound(&a, &Flow::point_mass(2, 1).unwrap()),
            Err(CascadeError::DegenerateFlow(_))
        ));
    }

    #[test]
    fn exact_matches_lp_on_random_pairs() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        for n in 1..=5 {
            for _ in 0..20 {
                let (a, b) = (random_flow(n, &mut rng), random_flow(n, &mut rng));
                let e = wasserstein_exact(&a, &b).unwrap().value;
                let l = wasserstein_lp_oracle(&a, &b).unwrap().value;
                let c = coupling_upper_bound(&a, &b).unwrap().value;
                assert!((e - l).abs() < 1e-9, "depth {n}: {e} vs {l}");
                assert!(c >= e - 1e-12);
                let left = (a.mass(VertexId::ROOT.left()) - b.mass(VertexId::ROOT.left())).abs();
                assert!(e >= 0.5 * left - 1e-15);
            }
        }
    }

    #[test]
    fn lp_handles_sparse_supports() {
        let a = Flow::from_leaves(vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Flow::from_leaves(vec![0.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.5, 0.0]).unwrap();
        let e = wasserstein_exact(&a, &b).unwrap().value;
        assert!((e - 1.0).abs() < 1e-15);
        assert!((wasserstein_lp_oracle(&a, &b).unwrap().value - e).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn metric_axioms(seed in any::<u64>(), n in 1u32..7) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let (a, b, c) = (random_flow(n, &mut rng), random_flow(n, &mut rng), random_flow(n, &mut rng));
            let d = |x: &Flow, y: &Flow| wasserstein_exact(x, y).unwrap().value;
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
            prop_assert!(d(&a, &b) >= 0.0);
        }
    }

    struct Frozen;

    impl IncrementLaw for Frozen {
        fn fill_log_increments(&self, _: f64, _: f64, _: u64, _: u64, out: &mut TreeArray<f64>) {
            out.as_mut_slice().fill(0.0);
        }
    }

    #[test]
    fn frozen_path_is_degenerate() {
        let grid = uniform_grid(1.0, 0.02).unwrap();
        let p = simulate_path_with(
            &Flow::uniform(6),
            &Frozen,
            &grid,
            6,
            0,
            &PathOptions::full(),
        )
        .unwrap();
        let fit = holder_exponent(&p, 16).unwrap();
        assert!(fit.degenerate && fit.slope().is_none());
    }

    #[test]
    fn too_few_snapshots() {
        let grid = uniform_grid(0.1, 0.01).unwrap();
        let p = simulate_path_with(
            &Flow::uniform(4),
            &WeightSpec::Gaussian,
            &grid,
            4,
            0,
            &PathOptions::full(),
        )
        .unwrap();
        assert!(matches!(
            holder_exponent(&p, 4),
            Err(CascadeError::InsufficientData(_))
        ));
    }

    #[test]
    fn single_path_slope_is_near_one_half() {
        let grid = uniform_grid(0.5, 1.0 / 256.0).unwrap();
        let p = simulate_path_with(
            &Flow::uniform(10),
            &WeightSpec::Gaussian,
            &grid,
            10,
            5,
            &PathOptions::full(),
        )
        .unwrap();
        let fit = holder_exponent(&p, 64).unwrap();
        let s = fit.slope().unwrap();
        assert!((0.3..0.7).contains(&s), "{s}");
        let mut buf = Vec::new();
        write_lag_csv(&[lag_distances(&p, 4).unwrap()], &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("lag,replica,distance\n"));
    }
}
