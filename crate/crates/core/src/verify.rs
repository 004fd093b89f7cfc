//! Statistical test suites over the cascade process. Every Monte Carlo test
//! that checks a distributional identity has a `_control` twin built on a
//! known-false null; a control passes when it is rejected.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    compose, continuity_proxy, max_relative_gap, run_replicas, simulate_path, simulate_path_with,
    subtree_identity_error, uniform_grid, PathOptions, Record,
};
use crate::error::{CascadeError, Result};
use crate::kpz::{
    box_dimension_estimate, critical_time, kpz_closed_form, kpz_ode_solve, kpz_rate, phi,
    phi_inverse, RaySet,
};
use crate::noise::{derive_seed, keyed_stream, VertexNoiseKey};
use crate::regularity::{
    alpha, classify_regularity, critical_h, lifetime, pressure, pressure_derivative,
    Classification, Measure,
};
use crate::sde::{
    bracket_rate, empirical_bracket, girsanov_check, overlap, realized_vs_predicted_qv,
};
use crate::stats::{ks_p_value, ks_two_sample, mean, std_err};
use crate::transport::{
    coupling_upper_bound, holder_fit, lag_distances, wasserstein_exact, wasserstein_lp_oracle,
};
use crate::tree_flow::{ray_distance, Flow, Ray, TreeArray, VertexId};
use crate::weight::{IncrementLaw, WeightSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// How a statistic is compared with its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    AtMost,
    AtLeast,
    Above,
}

impl Rule {
    pub fn holds(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Rule::AtMost => statistic <= threshold,
            Rule::AtLeast => statistic >= threshold,
            Rule::Above => statistic > threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test_name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub rule: Rule,
    pub replicas: usize,
    pub seed: u64,
    pub verdict: Verdict,
}

impl TestReport {
    /// The verdict follows from `rule` applied to `(statistic, threshold)`,
    /// unless the budget was flagged as unable to decide. NaN never passes.
    pub fn new(
        test_name: &str,
        statistic: f64,
        threshold: f64,
        rule: Rule,
        replicas: usize,
        seed: u64,
        decidable: bool,
    ) -> Self {
        let verdict = if !decidable {
            Verdict::Inconclusive
        } else if rule.holds(statistic, threshold) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        TestReport {
            test_name: test_name.to_string(),
            statistic,
            threshold,
            rule,
            replicas,
            seed,
            verdict,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Weights `exp(B_t)` without the `-t/2` compensator, so `E[W_t] = e^{t/2}`.
struct Uncompensated;

impl IncrementLaw for Uncompensated {
    fn fill_log_increments(
        &self,
        _t: f64,
        s: f64,
        seed: u64,
        step_index: u64,
        out: &mut TreeArray<f64>,
    ) {
        let sd = s.sqrt();
        let data = out.as_mut_slice();
        data[0] = 0.0;
        for (i, x) in data.iter_mut().enumerate().skip(1) {
            let z: f64 = StandardNormal.sample(&mut keyed_stream(seed, i as u64, step_index));
            *x = sd * z;
        }
    }
}

fn check_time(name: &str, t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(CascadeError::OutOfRange(format!("{name} = {t}")));
    }
    Ok(())
}

fn check_replicas(replicas: usize) -> Result<()> {
    if replicas < 2 {
        return Err(CascadeError::InsufficientData(format!(
            "{replicas} replicas, need at least 2"
        )));
    }
    Ok(())
}

/// `Γ_t` at the depth of `base`, from one fresh path.
fn snapshot_at<L: IncrementLaw + ?Sized>(base: &Flow, law: &L, t: f64, seed: u64) -> Result<Flow> {
    if t == 0.0 {
        return Ok(base.clone());
    }
    let opts = PathOptions {
        record: Record::Final,
        ..PathOptions::default()
    };
    let p = simulate_path_with(base, law, &[0.0, t], base.depth(), seed, &opts)?;
    Ok(p.snapshots()[0].clone())
}

fn root_at<L: IncrementLaw + ?Sized>(base: &Flow, law: &L, t: f64, seed: u64) -> Result<f64> {
    if t == 0.0 {
        return Ok(base.root_mass());
    }
    let p = simulate_path_with(
        base,
        law,
        &[0.0, t],
        base.depth(),
        seed,
        &PathOptions::summary(),
    )?;
    Ok(p.root_mass()[1])
}

fn markov_samples(
    base: &Flow,
    spec: &WeightSpec,
    t: f64,
    s: f64,
    composed: f64,
    depth: u32,
    replicas: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_time("t", t)?;
    check_time("s", s)?;
    check_replicas(replicas)?;
    spec.validate()?;
    let base = base.truncate(depth)?;
    let pairs: Result<Vec<(f64, f64)>> = run_replicas(replicas, seed, |_, rs| {
        let direct = root_at(&base, spec, t + s, derive_seed(rs, "direct"))?;
        let mid = snapshot_at(&base, spec, t, derive_seed(rs, "first"))?;
        let two_step = compose(&mid, spec, t, composed, derive_seed(rs, "second"), 1)?.root_mass();
        Ok((direct, two_step))
    })
    .into_iter()
    .collect();
    Ok(pairs?.into_iter().unzip())
}

fn ks_decidable(n: usize, m: usize, p_min: f64) -> bool {
    ks_p_value(1.0, (n * m) as f64 / (n + m) as f64) <= p_min
}

/// Root mass at `t + s` by direct simulation against simulation to `t`
/// followed by composition with fresh increments of duration `s`. Passes when
/// the KS p-value exceeds `ks_p_min`.
#[allow(clippy::too_many_arguments)]
pub fn test_markov_marginal(
    base: &Flow,
    spec: &WeightSpec,
    t: f64,
    s: f64,
    depth: u32,
    replicas: usize,
    seed: u64,
    ks_p_min: f64,
) -> Result<TestReport> {
    let (a, b) = markov_samples(base, spec, t, s, s, depth, replicas, seed)?;
    let ks = ks_two_sample(&a, &b)?;
    Ok(TestReport::new(
        "markov_marginal",
        ks.p_value,
        ks_p_min,
        Rule::Above,
        replicas,
        seed,
        ks_decidable(a.len(), b.len(), ks_p_min),
    ))
}

/// As [`test_markov_marginal`] but composing over `s/2`; passes when the KS
/// test rejects.
#[allow(clippy::too_many_arguments)]
pub fn test_markov_control(
    base: &Flow,
    spec: &WeightSpec,
    t: f64,
    s: f64,
    depth: u32,
    replicas: usize,
    seed: u64,
    ks_p_min: f64,
) -> Result<TestReport> {
    let (a, b) = markov_samples(base, spec, t, s, 0.5 * s, depth, replicas, seed)?;
    let ks = ks_two_sample(&a, &b)?;
    Ok(TestReport::new(
        "markov_marginal_control",
        ks.p_value,
        ks_p_min,
        Rule::AtMost,
        replicas,
        seed,
        ks_decidable(a.len(), b.len(), ks_p_min),
    ))
}

fn with_origin(grid: &[f64]) -> Result<Vec<f64>> {
    let mut g = Vec::with_capacity(grid.len() + 1);
    if grid.first() != Some(&0.0) {
        g.push(0.0);
    }
    g.extend_from_slice(grid);
    for &t in &g {
        check_time("grid time", t)?;
    }
    Ok(g)
}

/// Largest `|mean - target| / SE` over grid times and over the root plus
/// `vertices`. An exact match scores zero even when the SE vanishes.
fn martingale_max_z<L: IncrementLaw + ?Sized>(
    base: &Flow,
    law: &L,
    grid: &[f64],
    depth: u32,
    vertices: &[VertexId],
    replicas: usize,
    seed: u64,
) -> Result<f64> {
    check_replicas(replicas)?;
    let grid = with_origin(grid)?;
    let base = base.truncate(depth)?;
    let opts = PathOptions {
        record: Record::None,
        keep_weights: false,
        track: vertices.to_vec(),
    };
    let runs: Result<Vec<Vec<f64>>> = run_replicas(replicas, seed, |_, rs| {
        let p = simulate_path_with(&base, law, &grid, depth, rs, &opts)?;
        let mut row = p.root_mass().to_vec();
        for tr in p.tracked() {
            row.extend(tr.log_mass.iter().map(|x| x.exp()));
        }
        Ok(row)
    })
    .into_iter()
    .collect();
    let runs = runs?;
    let m = grid.len();
    let mut targets = vec![base.root_mass(); m];
    for &v in vertices {
        targets.extend(std::iter::repeat_n(base.mass(v), m));
    }
    let mut worst: f64 = 0.0;
    let mut column = vec![0.0; replicas];
    for (j, &target) in targets.iter().enumerate() {
        // Time zero is the base itself; tracked values there are exp(ln m).
        if j % m == 0 {
            continue;
        }
        for (c, r) in column.iter_mut().zip(&runs) {
            *c = r[j];
        }
        let diff = mean(&column) - target;
        let se = std_err(&column);
        let z = if diff == 0.0 { 0.0 } else { diff.abs() / se };
        worst = worst.max(z);
    }
    Ok(worst)
}

/// Replica mean of the root mass against its initial value at every grid time;
/// passes when the largest `|z|` is at most `z_max`.
pub fn test_martingale(
    base: &Flow,
    spec: &WeightSpec,
    grid: &[f64],
    depth: u32,
    replicas: usize,
    seed: u64,
    z_max: f64,
) -> Result<TestReport> {
    spec.validate()?;
    let z = martingale_max_z(base, spec, grid, depth, &[], replicas, seed)?;
    Ok(TestReport::new(
        "martingale",
        z,
        z_max,
        Rule::AtMost,
        replicas,
        seed,
        true,
    ))
}

/// The martingale test with `W_t = exp(B_t)`; passes when some `|z|` exceeds
/// `z_max`.
pub fn test_martingale_control(
    base: &Flow,
    grid: &[f64],
    depth: u32,
    replicas: usize,
    seed: u64,
    z_max: f64,
) -> Result<TestReport> {
    let z = martingale_max_z(base, &Uncompensated, grid, depth, &[], replicas, seed)?;
    Ok(TestReport::new(
        "martingale_control",
        z,
        z_max,
        Rule::Above,
        replicas,
        seed,
        true,
    ))
}

/// Replica budgets and depths for the suite. `fast` keeps the whole suite
/// within a few minutes on one core; `full` matches the acceptance runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub markov_depth: u32,
    pub markov_replicas: usize,
    pub martingale_depth: u32,
    pub martingale_replicas: usize,
    pub composition_depth: u32,
    pub composition_step: f64,
    pub holder_depth: u32,
    pub holder_replicas: usize,
    /// Grid step `2^-holder_step_log2`.
    pub holder_step_log2: u32,
    pub holder_pairs: usize,
    pub qv_depth: u32,
    pub qv_replicas: usize,
    pub bracket_depth: u32,
    pub bracket_replicas: usize,
    pub bracket_pairs: usize,
    pub girsanov_replicas: usize,
    pub box_depth: u32,
    pub box_replicas: usize,
    pub transport_pairs: usize,
    pub ray_draws: usize,
    pub moment_draws: usize,
    pub propagation_depth: u32,
    pub propagation_replicas: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget::fast()
    }
}

impl Budget {
    pub fn fast() -> Self {
        Budget {
            markov_depth: 10,
            markov_replicas: 4000,
            martingale_depth: 10,
            martingale_replicas: 4000,
            composition_depth: 10,
            composition_step: 0.05,
            holder_depth: 10,
            holder_replicas: 8,
            holder_step_log2: 9,
            holder_pairs: 64,
            qv_depth: 10,
            qv_replicas: 16,
            bracket_depth: 10,
            bracket_replicas: 64,
            bracket_pairs: 10,
            girsanov_replicas: 20_000,
            box_depth: 18,
            box_replicas: 4,
            transport_pairs: 20,
            ray_draws: 100_000,
            moment_draws: 100_000,
            propagation_depth: 16,
            propagation_replicas: 20,
        }
    }

    pub fn full() -> Self {
        Budget {
            markov_depth: 12,
            markov_replicas: 10_000,
            martingale_depth: 14,
            martingale_replicas: 10_000,
            composition_depth: 12,
            composition_step: 0.01,
            holder_depth: 14,
            holder_replicas: 32,
            holder_step_log2: 10,
            holder_pairs: 64,
            qv_depth: 14,
            qv_replicas: 64,
            bracket_depth: 12,
            bracket_replicas: 64,
            bracket_pairs: 10,
            girsanov_replicas: 20_000,
            box_depth: 20,
            box_replicas: 8,
            transport_pairs: 100,
            ray_draws: 100_000,
            moment_draws: 200_000,
            propagation_depth: 16,
            propagation_replicas: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub tests: Vec<String>,
    pub ks_p_min: f64,
    pub z_max: f64,
    /// Half-width for the Hölder slope around 1/2.
    pub holder_tol: f64,
    /// Bound on the mean absolute relative QV error.
    pub qv_tol: f64,
    /// Multiple of the standard error allowed for bracket rates.
    pub bracket_se: f64,
    /// Tolerance for the box-dimension estimate.
    pub box_tol: f64,
    /// Slack on fitted-pressure comparisons, added to each fit's RMS residual.
    pub fit_tol: f64,
    pub budget: Budget,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 42,
            tests: ALL_TESTS.iter().map(|s| s.to_string()).collect(),
            ks_p_min: 0.01,
            z_max: 4.0,
            holder_tol: 0.1,
            qv_tol: 0.15,
            bracket_se: 3.0,
            box_tol: 0.1,
            fit_tol: 0.02,
            budget: Budget::fast(),
        }
    }
}

impl SuiteConfig {
    /// `default` (alias `fast`) or `full`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" | "fast" => Ok(SuiteConfig::default()),
            "full" => Ok(SuiteConfig {
                budget: Budget::full(),
                ..SuiteConfig::default()
            }),
            other => Err(CascadeError::Config(format!(
                "unknown suite preset '{other}'"
            ))),
        }
    }
}

pub const ALL_TESTS: &[&str] = &[
    "composition",
    "composition_control",
    "subtree_identity",
    "continuity",
    "markov_marginal",
    "markov_marginal_control",
    "martingale",
    "martingale_control",
    "martingale_vertices",
    "weight_moments",
    "weight_semigroup",
    "w_log_w_nonnegative",
    "regularity_analytics",
    "submeasure_inheritance",
    "moment_inheritance",
    "propagation",
    "alpha_convexity",
    "transport_oracle",
    "transport_sandwich",
    "transport_metric",
    "transport_lower_bound",
    "holder",
    "qv",
    "qv_control",
    "qv_scale_invariance",
    "overlap_theta",
    "overlap_growth",
    "bracket",
    "bracket_control",
    "girsanov",
    "girsanov_control",
    "kpz_closed_form",
    "kpz_monotone",
    "kpz_half_rate",
    "phi_bijection",
    "box_dimension",
    "ray_marginals",
    "ultrametric",
    "pushforward_cdf",
];

/// Runs the configured tests in parallel; report order follows `tests`.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<TestReport>> {
    if let Some(bad) = cfg.tests.iter().find(|t| !ALL_TESTS.contains(&t.as_str())) {
        return Err(CascadeError::UnknownTest(bad.clone()));
    }
    cfg.tests
        .par_iter()
        .map(|name| run_test(name, cfg))
        .collect()
}

/// Runs one named test with its seed derived from the suite seed and name.
pub fn run_test(name: &str, cfg: &SuiteConfig) -> Result<TestReport> {
    let seed = derive_seed(cfg.seed, name);
    let b = &cfg.budget;
    let g = WeightSpec::Gaussian;
    match name {
        "composition" | "composition_control" => {
            let base = Flow::uniform(b.composition_depth);
            let grid = uniform_grid(1.2, b.composition_step)?;
            let p = simulate_path(&base, &g, &grid, b.composition_depth, seed)?;
            if name == "composition" {
                let e = p.composition_error()?;
                Ok(TestReport::new(name, e, 1e-12, Rule::AtMost, 1, seed, true))
            } else {
                // Fresh increments in place of the path's own.
                let last = grid.len() - 1;
                let fresh = compose(&base, &g, 0.0, grid[last], derive_seed(seed, "fresh"), 1)?;
                let gap = max_relative_gap(fresh.masses(), p.snapshot(last).unwrap().masses());
                Ok(TestReport::new(
                    name,
                    gap,
                    1e-12,
                    Rule::Above,
                    1,
                    seed,
                    true,
                ))
            }
        }
        "subtree_identity" => {
            let depth = 10;
            let base = random_flow(depth, &mut rng(seed));
            let mut worst: f64 = 0.0;
            let p = simulate_path(&base, &g, &[0.0, 0.8], depth, seed)?;
            let logw = p.log_weights(1).unwrap();
            let mut w = logw.clone();
            for x in w.as_mut_slice() {
                *x = x.exp();
            }
            w.as_mut_slice()[0] = 1.0;
            for k in 0..=4 {
                for bits in 0..(1u64 << k) {
                    let v = VertexId::new(k, bits)?;
                    worst = worst.max(subtree_identity_error(&base, &w, v)?);
                }
            }
            Ok(TestReport::new(
                name,
                worst,
                1e-12,
                Rule::AtMost,
                1,
                seed,
                true,
            ))
        }
        "continuity" => {
            let steps = [0.04, 0.01, 0.0025];
            let reps = 8;
            let ratios: Result<Vec<f64>> = run_replicas(reps, seed, |_, rs| {
                let j = continuity_proxy(&Flow::uniform(10), &g, 0.5, &steps, 10, rs)?;
                Ok(j[2].1 / j[0].1)
            })
            .into_iter()
            .collect();
            Ok(TestReport::new(
                name,
                mean(&ratios?),
                0.5,
                Rule::AtMost,
                reps,
                seed,
                true,
            ))
        }
        "markov_marginal" => test_markov_marginal(
            &Flow::uniform(b.markov_depth),
            &g,
            0.3,
            0.3,
            b.markov_depth,
            b.markov_replicas,
            seed,
            cfg.ks_p_min,
        ),
        "markov_marginal_control" => test_markov_control(
            &Flow::uniform(b.markov_depth),
            &g,
            0.3,
            0.3,
            b.markov_depth,
            b.markov_replicas,
            seed,
            cfg.ks_p_min,
        ),
        "martingale" => test_martingale(
            &Flow::uniform(b.martingale_depth),
            &g,
            &[0.2, 0.5, 0.9],
            b.martingale_depth,
            b.martingale_replicas,
            seed,
            cfg.z_max,
        ),
        "martingale_control" => test_martingale_control(
            &Flow::uniform(b.martingale_depth),
            &[0.2, 0.5, 0.9],
            b.martingale_depth,
            b.martingale_replicas,
            seed,
            cfg.z_max,
        ),
        "martingale_vertices" => {
            let depth = b.martingale_depth.min(10);
            let base = random_flow(depth, &mut rng(seed));
            let vertices: Vec<VertexId> = (1..=3u32)
                .flat_map(|k| (0..(1u64 << k)).map(move |bits| VertexId::new(k, bits).unwrap()))
                .collect();
            let reps = b.martingale_replicas.min(2000);
            let z = martingale_max_z(&base, &g, &[0.2, 0.5, 0.9], depth, &vertices, reps, seed)?;
            Ok(TestReport::new(
                name,
                z,
                cfg.z_max,
                Rule::AtMost,
                reps,
                seed,
                true,
            ))
        }
        "weight_moments" => {
            let specs = [g, WeightSpec::compound_poisson_default()];
            let mut worst: f64 = 0.0;
            for (si, spec) in specs.iter().enumerate() {
                for (ki, &s) in [0.1, 1.0].iter().enumerate() {
                    let draws: Vec<f64> = (0..b.moment_draws)
                        .map(|i| {
                            let key = VertexNoiseKey::new(
                                seed,
                                VertexId::from_heap_index(i + 1),
                                (si * 2 + ki) as u64,
                            );
                            spec.sample_increment(0.0, s, &key)
                        })
                        .collect::<Result<_>>()?;
                    for h in [0.5, 1.0, 1.5, 2.0] {
                        let powered: Vec<f64> = draws.iter().map(|w| w.powf(h)).collect();
                        let target = spec.increment_moment(0.0, s, h)?;
                        worst = worst.max((mean(&powered) - target).abs() / std_err(&powered));
                    }
                }
            }
            Ok(TestReport::new(
                name,
                worst,
                cfg.z_max,
                Rule::AtMost,
                b.moment_draws,
                seed,
                true,
            ))
        }
        "weight_semigroup" => {
            let mut worst: f64 = 0.0;
            for spec in [g, WeightSpec::compound_poisson_default()] {
                for (t, s) in [(0.1, 0.2), (0.5, 1.0), (1.3, 0.05)] {
                    for h in [0.5, 1.0, 1.5, 2.0, 3.0] {
                        let lhs = spec.moment(t + s, h)?;
                        let rhs = spec.moment(t, h)? * spec.increment_moment(t, s, h)?;
                        worst = worst.max((lhs - rhs).abs() / lhs);
                    }
                }
            }
            Ok(TestReport::new(
                name,
                worst,
                1e-12,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "w_log_w_nonnegative" => {
            let mut lowest = f64::INFINITY;
            for spec in [g, WeightSpec::compound_poisson_default()] {
                for k in 0..=40 {
                    lowest = lowest.min(spec.w_log_w(0.1 * k as f64)?);
                }
            }
            Ok(TestReport::new(
                name,
                lowest,
                0.0,
                Rule::AtLeast,
                0,
                seed,
                true,
            ))
        }
        "regularity_analytics" => {
            let ln2 = std::f64::consts::LN_2;
            let mut worst: f64 = 0.0;
            for k in 0..=30 {
                let h = 0.1 * k as f64;
                worst = worst.max((pressure(Measure::Theta, h)?.value - (1.0 - h) * ln2).abs());
            }
            for t in [0.3, 0.7, 1.2] {
                let c = critical_h(Measure::Theta, &g, t)?.value();
                worst = worst.max((c - 2.0 * ln2 / t).abs());
            }
            worst = worst.max((lifetime(Measure::Theta)? - 2.0 * ln2).abs());
            let tc = 2.0 * ln2;
            let flips = [
                (tc - 1e-3, Classification::Regular),
                (tc, Classification::Boundary),
                (tc + 1e-3, Classification::Irregular),
            ];
            for (t, want) in flips {
                if classify_regularity(Measure::Theta, &g, t)? != want {
                    worst = f64::INFINITY;
                }
            }
            Ok(TestReport::new(
                name,
                worst,
                1e-9,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "submeasure_inheritance" => {
            // Finite-depth derivative estimates of single sub-flows scatter well
            // beyond their fit residuals, so the inequality is checked in mean:
            // z-score of the mean excess over replicas and vertices |v| <= 3.
            let depth = 14;
            let reps = 8;
            let excess: Result<Vec<Vec<f64>>> = run_replicas(reps, seed, |_, rs| {
                let f = snapshot_at(&Flow::uniform(depth), &g, 0.5, rs)?;
                let parent = pressure_derivative(Measure::Empirical(&f))?;
                let mut out = Vec::new();
                for k in 1..=3 {
                    for bits in 0..(1u64 << k) {
                        let sub = f.restrict(VertexId::new(k, bits)?)?;
                        let d = pressure_derivative(Measure::Empirical(&sub))?;
                        out.push(d.right - parent.right - cfg.fit_tol);
                    }
                }
                Ok(out)
            })
            .into_iter()
            .collect();
            let excess: Vec<f64> = excess?.concat();
            let z = mean(&excess) / std_err(&excess);
            Ok(TestReport::new(
                name,
                z,
                cfg.z_max,
                Rule::AtMost,
                reps,
                seed,
                true,
            ))
        }
        "moment_inheritance" => {
            let f = snapshot_at(&Flow::uniform(12), &g, 0.3, seed)?;
            let times: Vec<f64> = (0..=30).map(|k| 0.05 * k as f64).collect();
            let mut violations = 0usize;
            for m in [Measure::Theta, Measure::Empirical(&f)] {
                for spec in [g, WeightSpec::compound_poisson_default()] {
                    let mut seen_regular_later = false;
                    for &t in times.iter().rev() {
                        let regular = classify_regularity(m, &spec, t)? == Classification::Regular;
                        if seen_regular_later && !regular {
                            violations += 1;
                        }
                        seen_regular_later |= regular;
                    }
                }
            }
            Ok(TestReport::new(
                name,
                violations as f64,
                0.0,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "propagation" => {
            let depth = b.propagation_depth;
            let reps = b.propagation_replicas;
            let t = 0.5;
            let ok: Result<Vec<bool>> = run_replicas(reps, seed, |_, rs| {
                let f = snapshot_at(&Flow::uniform(depth), &g, t, rs)?;
                for h in [1.1, 1.3, 1.5] {
                    let bound = alpha(Measure::Theta, &g, t, h)?;
                    let e = pressure(Measure::Empirical(&f), h)?;
                    if e.value > bound + cfg.fit_tol + e.residual {
                        return Ok(false);
                    }
                }
                Ok(true)
            })
            .into_iter()
            .collect();
            let ok = ok?;
            let frac = ok.iter().filter(|&&x| x).count() as f64 / reps as f64;
            Ok(TestReport::new(
                name,
                frac,
                0.95,
                Rule::AtLeast,
                reps,
                seed,
                true,
            ))
        }
        "alpha_convexity" => {
            let f = snapshot_at(&Flow::uniform(12), &g, 0.3, seed)?;
            let hs: Vec<f64> = (0..=30).map(|k| 0.1 * k as f64).collect();
            let mut worst: f64 = 0.0;
            for m in [Measure::Theta, Measure::Empirical(&f)] {
                for t in [0.3, 0.7, 1.2] {
                    let a: Vec<f64> = hs
                        .iter()
                        .map(|&h| alpha(m, &g, t, h))
                        .collect::<Result<_>>()?;
                    for w in a.windows(3) {
                        worst = worst.max(-(w[0] - 2.0 * w[1] + w[2]));
                    }
                }
            }
            Ok(TestReport::new(
                name,
                worst,
                1e-9,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "transport_oracle"
        | "transport_sandwich"
        | "transport_metric"
        | "transport_lower_bound" => {
            let stat = transport_stat(name, b.transport_pairs, seed)?;
            let thr = match name {
                "transport_oracle" => 1e-9,
                "transport_metric" => 1e-12,
                _ => 1e-9,
            };
            Ok(TestReport::new(
                name,
                stat,
                thr,
                Rule::AtMost,
                b.transport_pairs,
                seed,
                true,
            ))
        }
        "holder" => {
            let slope = holder_slope(
                b.holder_depth,
                b.holder_step_log2,
                0.5,
                b.holder_replicas,
                b.holder_pairs,
                seed,
            )?;
            Ok(TestReport::new(
                name,
                (slope - 0.5).abs(),
                cfg.holder_tol,
                Rule::AtMost,
                b.holder_replicas,
                seed,
                true,
            ))
        }
        "qv" | "qv_control" => {
            let errs = qv_relative_errors(b.qv_depth, 1e-3, 0.3, b.qv_replicas, seed)?;
            if name == "qv" {
                let e = mean(&errs.iter().map(|e| e.abs()).collect::<Vec<_>>());
                Ok(TestReport::new(
                    name,
                    e,
                    cfg.qv_tol,
                    Rule::AtMost,
                    b.qv_replicas,
                    seed,
                    true,
                ))
            } else {
                // Against a prediction with the overlap rate halved.
                let e = mean(
                    &errs
                        .iter()
                        .map(|e| (2.0 * (1.0 + e) - 1.0).abs())
                        .collect::<Vec<_>>(),
                );
                Ok(TestReport::new(
                    name,
                    e,
                    cfg.qv_tol,
                    Rule::Above,
                    b.qv_replicas,
                    seed,
                    true,
                ))
            }
        }
        "qv_scale_invariance" => {
            let base = random_flow(8, &mut rng(seed));
            let grid = uniform_grid(0.3, 0.01)?;
            let opts = PathOptions::summary();
            let p1 = simulate_path_with(&base, &g, &grid, 8, seed, &opts)?;
            let scaled = Flow::from_leaves(base.leaves().iter().map(|x| 3.0 * x).collect())?;
            let p3 = simulate_path_with(&scaled, &g, &grid, 8, seed, &opts)?;
            let a = realized_vs_predicted_qv(&p1)?.realized;
            let c = realized_vs_predicted_qv(&p3)?.realized;
            Ok(TestReport::new(
                name,
                (a - c).abs() / a,
                1e-12,
                Rule::AtMost,
                1,
                seed,
                true,
            ))
        }
        "overlap_theta" => {
            let mut worst: f64 = 0.0;
            for n in 0..=16 {
                let f = Flow::uniform(n);
                worst = worst.max((overlap(&f) - (1.0 - (-(n as f64)).exp2())).abs());
            }
            let f = random_flow(8, &mut rng(seed));
            let scaled = Flow::from_leaves(f.leaves().iter().map(|x| 7.0 * x).collect())?;
            worst = worst.max((overlap(&scaled) - overlap(&f)).abs());
            Ok(TestReport::new(
                name,
                worst,
                1e-12,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "overlap_growth" => {
            let reps = 64;
            let depth = 10;
            let growth: Result<Vec<f64>> = run_replicas(reps, seed, |_, rs| {
                let p = simulate_path_with(
                    &Flow::uniform(depth),
                    &g,
                    &[0.0, 0.5],
                    depth,
                    rs,
                    &PathOptions::summary(),
                )?;
                Ok(p.overlap()[1] - p.overlap()[0])
            })
            .into_iter()
            .collect();
            let growth = growth?;
            let z = mean(&growth) / std_err(&growth);
            Ok(TestReport::new(
                name,
                z,
                cfg.z_max,
                Rule::AtLeast,
                reps,
                seed,
                true,
            ))
        }
        "bracket" | "bracket_control" => {
            let est = bracket_estimates(
                b.bracket_depth,
                1e-3,
                0.5,
                b.bracket_pairs,
                b.bracket_replicas,
                seed,
            )?;
            if name == "bracket" {
                let z = est.iter().map(|e| e.z(0.0)).fold(0.0, f64::max);
                Ok(TestReport::new(
                    name,
                    z,
                    cfg.bracket_se,
                    Rule::AtMost,
                    b.bracket_replicas,
                    seed,
                    true,
                ))
            } else {
                // Claims a rate one higher than the common-ancestor depth.
                let z = est.iter().map(|e| e.z(1.0)).fold(f64::INFINITY, f64::min);
                Ok(TestReport::new(
                    name,
                    z,
                    cfg.bracket_se,
                    Rule::Above,
                    b.bracket_replicas,
                    seed,
                    true,
                ))
            }
        }
        "girsanov" | "girsanov_control" => {
            let v = VertexId::new(2, 1)?;
            let control = name == "girsanov_control";
            let r = girsanov_check(
                &Flow::uniform(3),
                3,
                0.2,
                v,
                b.girsanov_replicas,
                50,
                seed,
                control,
            )?;
            let rule = if control { Rule::Above } else { Rule::AtMost };
            Ok(TestReport::new(
                name,
                r.z.abs(),
                cfg.z_max,
                rule,
                b.girsanov_replicas,
                seed,
                true,
            ))
        }
        "kpz_closed_form" => {
            let mut worst: f64 = 0.0;
            for k in 1..=9 {
                worst = worst.max(kpz_sup_gap(0.1 * k as f64, critical_time(), 1e-4)?);
            }
            let end = *kpz_ode_solve(0.75, critical_time(), 1e-4)?
                .d
                .last()
                .unwrap();
            worst = worst.max((end - 0.5).abs());
            Ok(TestReport::new(
                name,
                worst,
                1e-4,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "kpz_monotone" => {
            let mut worst: f64 = 0.0;
            for k in 1..=9 {
                let p = kpz_ode_solve(0.1 * k as f64, critical_time(), 1e-3)?;
                for w in p.d.windows(2) {
                    worst = worst.max(w[1] - w[0]);
                }
            }
            Ok(TestReport::new(
                name,
                worst,
                0.0,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "kpz_half_rate" => {
            let want = -0.25 / critical_time();
            let mut worst: f64 = 0.0;
            for k in 0..=13 {
                worst = worst.max((kpz_rate(0.1 * k as f64, 0.5)? - want).abs());
            }
            Ok(TestReport::new(
                name,
                worst,
                1e-15,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "phi_bijection" => {
            let mut worst: f64 = 0.0;
            for t in [0.0, 0.3, 0.7, 1.2, 1.38] {
                worst = worst.max(phi(&g, t, 0.0)?.abs());
                worst = worst.max((phi(&g, t, 1.0)? - 1.0).abs());
                let hs: Vec<f64> = (0..=100).map(|k| 0.01 * k as f64).collect();
                for w in hs.windows(2) {
                    if phi(&g, t, w[1])? <= phi(&g, t, w[0])? {
                        worst = f64::INFINITY;
                    }
                }
                for &h in &hs {
                    worst = worst.max((phi_inverse(&g, t, phi(&g, t, h)?)? - h).abs());
                }
            }
            Ok(TestReport::new(
                name,
                worst,
                1e-12,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        "box_dimension" => {
            let gap = box_dimension_gap(b.box_depth, &[0.0, 0.5], b.box_replicas, seed)?;
            Ok(TestReport::new(
                name,
                gap,
                cfg.box_tol,
                Rule::AtMost,
                b.box_replicas,
                seed,
                true,
            ))
        }
        "ray_marginals" => {
            let depth = 6;
            let f = random_flow(depth, &mut rng(seed));
            let mut counts = TreeArray::filled(depth, 0usize);
            let mut r = rng(derive_seed(seed, "draws"));
            for _ in 0..b.ray_draws {
                let leaf = f.sample_ray(&mut r)?.vertex();
                for k in 0..=depth {
                    counts[leaf.ancestor(k).unwrap()] += 1;
                }
            }
            let n = b.ray_draws as f64;
            let mut worst: f64 = 0.0;
            for (i, &c) in counts.as_slice().iter().enumerate() {
                let p = f.mass(VertexId::from_heap_index(i)) / f.root_mass();
                let se = (p * (1.0 - p) / n).sqrt();
                let diff = c as f64 / n - p;
                if diff != 0.0 {
                    worst = worst.max(diff.abs() / se);
                }
            }
            Ok(TestReport::new(
                name,
                worst,
                cfg.z_max,
                Rule::AtMost,
                b.ray_draws,
                seed,
                true,
            ))
        }
        "ultrametric" => {
            let mut r = rng(seed);
            let depth = 12;
            let mut violations = 0usize;
            for _ in 0..10_000 {
                let mut ray = || Ray::new(depth, r.random_range(0..1u64 << depth));
                let (x, y, z) = (ray()?, ray()?, ray()?);
                if ray_distance(&x, &y)? > ray_distance(&x, &z)?.max(ray_distance(&z, &y)?) {
                    violations += 1;
                }
            }
            Ok(TestReport::new(
                name,
                violations as f64,
                0.0,
                Rule::AtMost,
                10_000,
                seed,
                true,
            ))
        }
        "pushforward_cdf" => {
            let f = random_flow(10, &mut rng(seed));
            let mut worst = f
                .pushforward_cdf(0.0)?
                .abs()
                .max((f.pushforward_cdf(1.0)? - 1.0).abs());
            let mut prev = 0.0;
            for k in 0..=1024 {
                let y = f.pushforward_cdf(k as f64 / 1024.0)?;
                worst = worst.max(prev - y);
                prev = y;
            }
            Ok(TestReport::new(
                name,
                worst,
                1e-12,
                Rule::AtMost,
                0,
                seed,
                true,
            ))
        }
        other => Err(CascadeError::UnknownTest(other.to_string())),
    }
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// A normalized flow with strictly positive leaves drawn uniformly from
/// `[0.05, 1)` before normalization.
pub fn random_flow<R: Rng + ?Sized>(depth: u32, rng: &mut R) -> Flow {
    let leaves: Vec<f64> = (0..1usize << depth)
        .map(|_| rng.random_range(0.05..1.0))
        .collect();
    Flow::from_leaves(leaves)
        .expect("power-of-two leaf count")
        .normalize()
}

/// Transport invariants over random positive flow pairs at depths 2 to 6.
/// Each returns a worst-case violation that should not exceed its threshold.
fn transport_stat(which: &str, pairs: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for depth in 2..=6 {
        for _ in 0..pairs {
            let mu = random_flow(depth, &mut r);
            let nu = random_flow(depth, &mut r);
            let exact = wasserstein_exact(&mu, &nu)?.value;
            match which {
                "transport_oracle" => {
                    worst = worst.max((exact - wasserstein_lp_oracle(&mu, &nu)?.value).abs());
                }
                "transport_sandwich" => {
                    let lp = wasserstein_lp_oracle(&mu, &nu)?.value;
                    let ub = coupling_upper_bound(&mu, &nu)?.value;
                    worst = worst.max(lp - ub).max(exact - ub);
                }
                "transport_metric" => {
                    let rho = random_flow(depth, &mut r);
                    let back = wasserstein_exact(&nu, &mu)?.value;
                    if back != exact {
                        worst = f64::INFINITY;
                    }
                    let via =
                        wasserstein_exact(&mu, &rho)?.value + wasserstein_exact(&rho, &nu)?.value;
                    worst = worst.max(exact - via);
                }
                _ => {
                    let l = VertexId::ROOT.left();
                    let lower = 0.5 * (mu.mass(l) - nu.mass(l)).abs();
                    worst = worst.max(lower - exact);
                }
            }
        }
    }
    Ok(worst)
}

/// Pooled Hölder slope of `t ↦ Γ_t` for θ on `[0, t_end]` with step
/// `2^-step_log2`.
pub fn holder_slope(
    depth: u32,
    step_log2: u32,
    t_end: f64,
    replicas: usize,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let grid = uniform_grid(t_end, (-(step_log2 as f64)).exp2())?;
    let base = Flow::uniform(depth);
    let opts = PathOptions {
        record: Record::All,
        keep_weights: false,
        track: Vec::new(),
    };
    let per_path: Result<Vec<_>> = run_replicas(replicas, seed, |_, rs| {
        let p = simulate_path_with(&base, &WeightSpec::Gaussian, &grid, depth, rs, &opts)?;
        lag_distances(&p, pairs)
    })
    .into_iter()
    .collect();
    holder_fit(&per_path?)?
        .slope()
        .ok_or_else(|| CascadeError::InsufficientData("all distances vanish".into()))
}

/// Per-path relative errors of realized against predicted QV of the log root
/// mass for θ.
pub fn qv_relative_errors(
    depth: u32,
    step: f64,
    t_end: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = uniform_grid(t_end, step)?;
    let base = Flow::uniform(depth);
    run_replicas(replicas, seed, |_, rs| {
        let p = simulate_path_with(
            &base,
            &WeightSpec::Gaussian,
            &grid,
            depth,
            rs,
            &PathOptions::summary(),
        )?;
        Ok(realized_vs_predicted_qv(&p)?.rel_err)
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BracketEstimate {
    pub u: VertexId,
    pub v: VertexId,
    pub rate: u32,
    pub mean: f64,
    pub std_err: f64,
}

impl BracketEstimate {
    /// Distance from `rate + offset` in standard errors.
    pub fn z(&self, offset: f64) -> f64 {
        (self.mean - self.rate as f64 - offset).abs() / self.std_err
    }
}

/// Random non-ancestral pairs with common-ancestor depths spread over
/// `0..max_depth-1`, all at most `max_depth` deep.
pub fn random_pairs(count: usize, max_depth: u32, seed: u64) -> Vec<(VertexId, VertexId)> {
    let mut r = rng(seed);
    let descend = |from: VertexId, to_depth: u32, r: &mut Xoshiro256PlusPlus| {
        let mut w = from;
        while w.depth() < to_depth {
            w = if r.random::<bool>() {
                w.left()
            } else {
                w.right()
            };
        }
        w
    };
    (0..count)
        .map(|_| {
            let k = r.random_range(0..max_depth - 1);
            let a = descend(VertexId::ROOT, k, &mut r);
            let (ul, vr) = (a.left(), a.right());
            let du = r.random_range(k + 1..=max_depth);
            let dv = r.random_range(k + 1..=max_depth);
            (descend(ul, du, &mut r), descend(vr, dv, &mut r))
        })
        .collect()
}

/// Drift-adjusted covariation rates of `log Γ(u)` and `log Γ(v)` for θ,
/// averaged over replicas, for random non-ancestral pairs.
pub fn bracket_estimates(
    depth: u32,
    step: f64,
    t_end: f64,
    pairs: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<BracketEstimate>> {
    check_replicas(replicas)?;
    let pairs = random_pairs(pairs, depth.min(8), derive_seed(seed, "pairs"));
    let mut track: Vec<VertexId> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
    track.sort_by_key(|v| v.heap_index());
    track.dedup();
    let opts = PathOptions {
        record: Record::None,
        keep_weights: false,
        track,
    };
    let grid = uniform_grid(t_end, step)?;
    let base = Flow::uniform(depth);
    let runs: Result<Vec<Vec<f64>>> = run_replicas(replicas, seed, |_, rs| {
        let p = simulate_path_with(&base, &WeightSpec::Gaussian, &grid, depth, rs, &opts)?;
        pairs
            .iter()
            .map(|&(u, v)| empirical_bracket(&p, u, v))
            .collect()
    })
    .into_iter()
    .collect();
    let runs = runs?;
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(u, v))| {
            let xs: Vec<f64> = runs.iter().map(|r| r[i]).collect();
            Ok(BracketEstimate {
                u,
                v,
                rate: bracket_rate(u, v)?,
                mean: mean(&xs),
                std_err: std_err(&xs),
            })
        })
        .collect()
}

/// Box-counting scales used at a given depth: the finest levels saturate
/// against the leaf resolution, so the top four are left out.
pub fn box_scales(depth: u32) -> Vec<u32> {
    (4..=depth.saturating_sub(4).max(6)).collect()
}

/// Largest gap between the replica-mean EVEN_FREE image dimension and
/// `φ_t^{-1}(1/2)` over `times`.
pub fn box_dimension_gap(depth: u32, times: &[f64], replicas: usize, seed: u64) -> Result<f64> {
    let g = WeightSpec::Gaussian;
    let base = Flow::uniform(depth);
    let scales = box_scales(depth);
    let mut worst: f64 = 0.0;
    for &t in times {
        let est: Result<Vec<f64>> =
            run_replicas(replicas, derive_seed(seed, &format!("t={t}")), |_, rs| {
                let f = snapshot_at(&base, &g, t, rs)?;
                Ok(box_dimension_estimate(&f, RaySet::EvenFree, &scales)?.estimate)
            })
            .into_iter()
            .collect();
        let want = phi_inverse(&g, t, RaySet::EvenFree.dimension())?;
        worst = worst.max((mean(&est?) - want).abs());
    }
    Ok(worst)
}

/// Sup-norm gap between the RK4 path and the closed form.
pub fn kpz_sup_gap(d0: f64, t_end: f64, step: f64) -> Result<f64> {
    let p = kpz_ode_solve(d0, t_end, step)?;
    let mut worst: f64 = 0.0;
    for (&t, &d) in p.times.iter().zip(&p.d) {
        worst = worst.max((d - kpz_closed_form(d0, t)?).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn only(names: &[&str]) -> SuiteConfig {
        SuiteConfig {
            tests: names.iter().map(|s| s.to_string()).collect(),
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn verdict_follows_rule() {
        let r = TestReport::new("x", 0.5, 1.0, Rule::AtMost, 1, 0, true);
        assert_eq!(r.verdict, Verdict::Pass);
        let r = TestReport::new("x", 1.0, 1.0, Rule::Above, 1, 0, true);
        assert_eq!(r.verdict, Verdict::Fail);
        let r = TestReport::new("x", f64::NAN, 1.0, Rule::AtMost, 1, 0, true);
        assert_eq!(r.verdict, Verdict::Fail);
        let r = TestReport::new("x", 0.5, 1.0, Rule::AtMost, 1, 0, false);
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn empty_and_unknown_selections() {
        assert!(run_suite(&only(&[])).unwrap().is_empty());
        assert!(matches!(
            run_suite(&only(&["nope"])),
            Err(CascadeError::UnknownTest(_))
        ));
        assert!(SuiteConfig::preset("huge").is_err());
    }

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let cfg: SuiteConfig =
            serde_json::from_str(r#"{"seed": 7, "budget": {"markov_replicas": 10}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.budget.markov_replicas, 10);
        assert_eq!(cfg.budget.markov_depth, Budget::fast().markov_depth);
        assert_eq!(cfg.tests.len(), ALL_TESTS.len());
        let back: SuiteConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<SuiteConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn martingale_at_origin_is_exact() {
        let r = test_martingale(
            &Flow::uniform(6),
            &WeightSpec::Gaussian,
            &[0.0],
            6,
            10,
            1,
            4.0,
        )
        .unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn small_budget_markov_is_inconclusive() {
        let r = test_markov_marginal(
            &Flow::uniform(4),
            &WeightSpec::Gaussian,
            0.3,
            0.3,
            4,
            3,
            1,
            0.01,
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn markov_with_zero_duration_passes() {
        let r = test_markov_marginal(
            &Flow::uniform(6),
            &WeightSpec::Gaussian,
            0.3,
            0.0,
            6,
            500,
            2,
            0.01,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn cheap_tests_pass_and_repeat_exactly() {
        let cfg = only(&[
            "composition",
            "composition_control",
            "subtree_identity",
            "weight_semigroup",
            "w_log_w_nonnegative",
            "regularity_analytics",
            "kpz_half_rate",
            "phi_bijection",
            "ultrametric",
            "pushforward_cdf",
            "overlap_theta",
            "qv_scale_invariance",
        ]);
        let a = run_suite(&cfg).unwrap();
        for r in &a {
            assert!(r.passed(), "{r:?}");
        }
        let b = run_suite(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn random_pairs_are_not_ancestral() {
        for (u, v) in random_pairs(200, 8, 3) {
            assert!(bracket_rate(u, v).is_ok());
            assert!(u.depth() <= 8 && v.depth() <= 8);
        }
    }
}
