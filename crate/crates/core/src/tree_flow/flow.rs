use rand::Rng;
use serde::Serialize;

use super::array::TreeArray;
use super::vertex::{Ray, VertexId, MAX_ADDRESSABLE_DEPTH};
use crate::error::{CascadeError, Result};

/// Relative tolerance of the flow condition.
pub const FLOW_TOL: f64 = 1e-12;

/// Depth limit applied by configuration validation unless overridden.
pub const DEFAULT_MAX_DEPTH: u32 = 26;

/// A finite-depth measure on the tree boundary, given by the mass of every
/// cylinder down to its depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    mass: TreeArray<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    NonPositive { mass: f64 },
    FlowCondition { mass: f64, children_sum: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub vertex: VertexId,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// No flow-condition failures; zero masses are tolerated.
    pub fn conserves_mass(&self) -> bool {
        !self
            .violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::FlowCondition { .. }))
    }
}

/// Recomputes every internal mass from the leaves.
pub(crate) fn sum_up(mass: &mut TreeArray<f64>) {
    for k in (0..mass.depth()).rev() {
        let (parents, children) = mass.parent_and_children_mut(k);
        for (p, pair) in parents.iter_mut().zip(children.chunks_exact(2)) {
            *p = pair[0] + pair[1];
        }
    }
}

/// The uniform ("Lebesgue") flow with `mass(v) = 2^(-|v|)`.
pub fn uniform_flow(depth: u32) -> Flow {
    let mut mass = TreeArray::filled(depth, 0.0);
    for k in 0..=depth {
        let m = (-(k as f64)).exp2();
        mass.level_mut(k).fill(m);
    }
    Flow { mass }
}

/// Lists positivity and flow-condition violations.
pub fn validate_flow(f: &Flow) -> ValidationReport {
    let mut violations = Vec::new();
    let m = &f.mass;
    for (v, &x) in m.iter() {
        if !(x > 0.0) || !x.is_finite() {
            violations.push(Violation {
                vertex: v,
                kind: ViolationKind::NonPositive { mass: x },
            });
        }
        if v.depth() < m.depth() {
            let s = m[v.left()] + m[v.right()];
            if !((x - s).abs() <= FLOW_TOL * x.abs().max(s.abs())) {
                violations.push(Violation {
                    vertex: v,
                    kind: ViolationKind::FlowCondition {
                        mass: x,
                        children_sum: s,
                    },
                });
            }
        }
    }
    ValidationReport { violations }
}

impl Flow {
    pub fn uniform(depth: u32) -> Flow {
        uniform_flow(depth)
    }

    /// Builds a flow from its deepest level; internal masses are summed bottom-up.
    pub fn from_leaves(leaves: Vec<f64>) -> Result<Flow> {
        let n = leaves.len();
        if !n.is_power_of_two() {
            return Err(CascadeError::InvalidFlow(format!(
                "leaf count {n} is not a power of two"
            )));
        }
        let depth = n.trailing_zeros();
        check_depth(depth)?;
        if let Some(i) = leaves.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(CascadeError::InvalidFlow(format!(
                "leaf {} has mass {}",
                VertexId::new_unchecked(depth, i as u64),
                leaves[i]
            )));
        }
        let mut mass = TreeArray::filled(depth, 0.0);
        mass.level_mut(depth).copy_from_slice(&leaves);
        sum_up(&mut mass);
        let flow = Flow { mass };
        flow.check_root()?;
        Ok(flow)
    }

    /// Builds a flow from per-level arrays and rejects it unless every
    /// mass is nonnegative and the flow condition holds.
    pub fn from_levels(levels: Vec<Vec<f64>>) -> Result<Flow> {
        let flow = Flow::from_levels_unchecked(levels)?;
        flow.check_root()?;
        let report = validate_flow(&flow);
        if let Some(bad) = report.violations.iter().find(|v| match v.kind {
            ViolationKind::FlowCondition { .. } => true,
            ViolationKind::NonPositive { mass } => !(mass >= 0.0) || !mass.is_finite(),
        }) {
            return Err(CascadeError::InvalidFlow(format!(
                "violation at {}: {:?}",
                bad.vertex, bad.kind
            )));
        }
        Ok(flow)
    }

    /// Shape checks only; use [`validate_flow`] to inspect the masses.
    pub fn from_levels_unchecked(levels: Vec<Vec<f64>>) -> Result<Flow> {
        if levels.is_empty() {
            return Err(CascadeError::InvalidFlow("no levels".into()));
        }
        let depth = levels.len() as u32 - 1;
        check_depth(depth)?;
        let mut data = Vec::with_capacity((1usize << (depth + 1)) - 1);
        for (k, level) in levels.into_iter().enumerate() {
            if level.len() != 1usize << k {
                return Err(CascadeError::InvalidFlow(format!(
                    "level {k} has {} entries, expected {}",
                    level.len(),
                    1usize << k
                )));
            }
            data.extend(level);
        }
        Ok(Flow {
            mass: TreeArray::from_vec(data).expect("level lengths checked"),
        })
    }

    pub(crate) fn from_array_unchecked(mass: TreeArray<f64>) -> Flow {
        Flow { mass }
    }

    /// Unit mass on the single ray through the depth-`depth` vertex `bits`.
    pub fn point_mass(depth: u32, bits: u64) -> Result<Flow> {
        let v = VertexId::new(depth, bits)?;
        let mut leaves = vec![0.0; 1usize << depth];
        leaves[v.bits() as usize] = 1.0;
        Flow::from_leaves(leaves)
    }

    fn check_root(&self) -> Result<()> {
        let r = self.root_mass();
        if !(r > 0.0 && r.is_finite()) {
            return Err(CascadeError::InvalidFlow(format!("root mass {r}")));
        }
        Ok(())
    }

    #[inline]
    pub fn depth(&self) -> u32 {
        self.mass.depth()
    }

    #[inline]
    pub fn root_mass(&self) -> f64 {
        self.mass.as_slice()[0]
    }

    #[inline]
    pub fn mass(&self, v: VertexId) -> f64 {
        self.mass[v]
    }

    #[inline]
    pub fn level(&self, k: u32) -> &[f64] {
        self.mass.level(k)
    }

    pub fn leaves(&self) -> &[f64] {
        self.mass.leaves()
    }

    pub fn masses(&self) -> &TreeArray<f64> {
        &self.mass
    }

    pub fn levels(&self) -> Vec<Vec<f64>> {
        (0..=self.depth()).map(|k| self.level(k).to_vec()).collect()
    }

    pub fn is_normalized(&self) -> bool {
        (self.root_mass() - 1.0).abs() <= FLOW_TOL
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.mass.as_slice().iter().all(|&x| x > 0.0)
    }

    /// First vertex (in breadth-first order) with nonpositive mass.
    pub fn first_zero(&self) -> Option<VertexId> {
        self.mass
            .as_slice()
            .iter()
            .position(|&x| !(x > 0.0))
            .map(VertexId::from_heap_index)
    }

    /// Rescales to unit root mass.
    pub fn normalize(&self) -> Flow {
        let r = self.root_mass();
        if r == 1.0 {
            return self.clone();
        }
        let inv = 1.0 / r;
        let mut mass = self.mass.clone();
        for x in mass.as_mut_slice() {
            *x *= inv;
        }
        mass.as_mut_slice()[0] = 1.0;
        Flow { mass }
    }

    pub fn truncate(&self, depth: u32) -> Result<Flow> {
        if depth > self.depth() {
            return Err(CascadeError::DepthMismatch(depth, self.depth()));
        }
        Ok(Flow {
            mass: self.mass.truncated(depth),
        })
    }

    /// The restriction to the subtree below `v`, re-rooted at `v`.
    pub fn restrict(&self, v: VertexId) -> Result<Flow> {
        if v.depth() > self.depth() {
            return Err(CascadeError::DepthMismatch(v.depth(), self.depth()));
        }
        let sub_depth = self.depth() - v.depth();
        let mut data = Vec::with_capacity((1usize << (sub_depth + 1)) - 1);
        for j in 0..=sub_depth {
            let width = 1usize << j;
            let start = (v.bits() as usize) << j;
            data.extend_from_slice(&self.level(v.depth() + j)[start..start + width]);
        }
        Ok(Flow {
            mass: TreeArray::from_vec(data).expect("subtree shape"),
        })
    }

    /// Draws a depth-n ray by walking down with probabilities `mass(child) / mass(parent)`.
    pub fn sample_ray<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Ray> {
        let mut v = VertexId::ROOT;
        for _ in 0..self.depth() {
            let m = self.mass(v);
            if !(m > 0.0) {
                return Err(CascadeError::DegenerateFlow(v));
            }
            let left = self.mass(v.left());
            let u: f64 = rng.random::<f64>() * m;
            v = if u < left { v.left() } else { v.right() };
        }
        if !(self.mass(v) > 0.0) {
            return Err(CascadeError::DegenerateFlow(v));
        }
        Ok(Ray::through(v))
    }

    /// Normalized distribution function at the depth-n grid points:
    /// entry `k` is the mass of the first `k` leaves divided by the root mass.
    pub fn leaf_cdf(&self) -> Vec<f64> {
        let inv = 1.0 / self.root_mass();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.leaves().len() + 1);
        out.push(0.0);
        for &x in self.leaves() {
            acc += x;
            out.push(acc * inv);
        }
        *out.last_mut().unwrap() = 1.0;
        out
    }

    /// Mass of `[0, x]` under the pushforward of the normalized flow by binary
    /// expansion. `x` must be a multiple of `2^(-depth)`.
    pub fn pushforward_cdf(&self, x: f64) -> Result<f64> {
        let n = self.depth();
        if !(0.0..=1.0).contains(&x) {
            return Err(CascadeError::OutOfRange(format!("x = {x} outside [0, 1]")));
        }
        let scaled = x * (n as f64).exp2();
        if scaled.fract() != 0.0 {
            return Err(CascadeError::OutOfRange(format!(
                "x = {x} is finer than the depth-{n} resolution"
            )));
        }
        let k = scaled as u64;
        if k == 1u64 << n {
            return Ok(1.0);
        }
        let mut acc = 0.0;
        let mut v = VertexId::ROOT;
        for i in (0..n).rev() {
            if (k >> i) & 1 == 1 {
                acc += self.mass(v.left());
                v = v.right();
            } else {
                v = v.left();
            }
        }
        Ok(acc / self.root_mass())
    }
}

fn check_depth(depth: u32) -> Result<()> {
    if depth > MAX_ADDRESSABLE_DEPTH.min(40) {
        return Err(CascadeError::DepthTooLarge {
            depth,
            max: MAX_ADDRESSABLE_DEPTH.min(40),
        });
    }
    Ok(())
}
