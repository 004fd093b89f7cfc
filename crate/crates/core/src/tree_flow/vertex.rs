use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};

/// Deepest level a bit-path can address.
pub const MAX_ADDRESSABLE_DEPTH: u32 = 62;

/// A vertex of the rooted binary tree, addressed by its generation and the
/// left(0)/right(1) choices taken from the root, most significant bit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId {
    depth: u32,
    bits: u64,
}

impl VertexId {
    pub const ROOT: VertexId = VertexId { depth: 0, bits: 0 };

    pub fn new(depth: u32, bits: u64) -> Result<Self> {
        if depth > MAX_ADDRESSABLE_DEPTH {
            return Err(CascadeError::DepthTooLarge {
                depth,
                max: MAX_ADDRESSABLE_DEPTH,
            });
        }
        if bits >> depth != 0 {
            return Err(CascadeError::OutOfRange(format!(
                "path bits {bits:#b} do not fit in {depth} levels"
            )));
        }
        Ok(VertexId { depth, bits })
    }

    /// Builds a vertex from a string of `0`/`1` characters; the empty string is the root.
    pub fn from_path(path: &str) -> Result<Self> {
        let mut v = VertexId::ROOT;
        for c in path.chars() {
            v = match c {
                '0' => v.left(),
                '1' => v.right(),
                _ => {
                    return Err(CascadeError::OutOfRange(format!(
                        "invalid path character {c:?}"
                    )))
                }
            };
        }
        Ok(v)
    }

    pub(crate) const fn new_unchecked(depth: u32, bits: u64) -> Self {
        VertexId { depth, bits }
    }

    #[inline]
    pub fn depth(&self) -> u32 {
        self.depth
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn is_root(&self) -> bool {
        self.depth == 0
    }

    #[inline]
    pub fn left(&self) -> VertexId {
        VertexId::new_unchecked(self.depth + 1, self.bits << 1)
    }

    #[inline]
    pub fn right(&self) -> VertexId {
        VertexId::new_unchecked(self.depth + 1, (self.bits << 1) | 1)
    }

    pub fn child(&self, bit: u8) -> VertexId {
        if bit == 0 {
            self.left()
        } else {
            self.right()
        }
    }

    pub fn parent(&self) -> Option<VertexId> {
        (self.depth > 0).then(|| VertexId::new_unchecked(self.depth - 1, self.bits >> 1))
    }

    pub fn sibling(&self) -> Option<VertexId> {
        (self.depth > 0).then(|| VertexId::new_unchecked(self.depth, self.bits ^ 1))
    }

    /// The ancestor at generation `depth` (the vertex itself when `depth == self.depth()`).
    pub fn ancestor(&self, depth: u32) -> Option<VertexId> {
        (depth <= self.depth)
            .then(|| VertexId::new_unchecked(depth, self.bits >> (self.depth - depth)))
    }

    /// The direction taken at step `i` (1-based) from the root.
    pub fn step(&self, i: u32) -> u8 {
        assert!(
            i >= 1 && i <= self.depth,
            "step {i} outside 1..={}",
            self.depth
        );
        ((self.bits >> (self.depth - i)) & 1) as u8
    }

    /// True when `self` lies on the root path of `other`, including `self == other`.
    pub fn is_ancestor_of(&self, other: &VertexId) -> bool {
        other.ancestor(self.depth) == Some(*self)
    }

    /// Position of this vertex in breadth-first (heap) order, root at 0.
    #[inline]
    pub fn heap_index(&self) -> usize {
        ((1usize << self.depth) - 1) + self.bits as usize
    }

    pub fn from_heap_index(index: usize) -> VertexId {
        let depth = usize::BITS - 1 - (index + 1).leading_zeros();
        VertexId::new_unchecked(depth, (index + 1 - (1usize << depth)) as u64)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.depth == 0 {
            return write!(f, "root");
        }
        for i in 1..=self.depth {
            write!(f, "{}", self.step(i))?;
        }
        Ok(())
    }
}

/// Generation of the last common ancestor of `u` and `v`.
pub fn common_ancestor_depth(u: VertexId, v: VertexId) -> u32 {
    let m = u.depth.min(v.depth);
    if m == 0 {
        return 0;
    }
    let diff = (u.bits >> (u.depth - m)) ^ (v.bits >> (v.depth - m));
    m - (u64::BITS - diff.leading_zeros())
}

/// A ray truncated at a finite depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ray {
    vertex: VertexId,
}

impl Ray {
    pub fn new(depth: u32, bits: u64) -> Result<Self> {
        Ok(Ray {
            vertex: VertexId::new(depth, bits)?,
        })
    }

    pub fn through(vertex: VertexId) -> Self {
        Ray { vertex }
    }

    pub fn depth(&self) -> u32 {
        self.vertex.depth
    }

    pub fn bits(&self) -> u64 {
        self.vertex.bits
    }

    /// The depth-n vertex the truncated ray passes through.
    pub fn vertex(&self) -> VertexId {
        self.vertex
    }

    pub fn prefix(&self, depth: u32) -> Option<VertexId> {
        self.vertex.ancestor(depth)
    }
}

/// Boundary distance `2^(-|ξ∧η|)`. Identical truncated rays are reported at the
/// truncation resolution `2^(-depth)` rather than zero.
pub fn ray_distance(xi: &Ray, eta: &Ray) -> Result<f64> {
    if xi.depth() != eta.depth() {
        return Err(CascadeError::DepthMismatch(xi.depth(), eta.depth()));
    }
    let k = common_ancestor_depth(xi.vertex, eta.vertex);
    Ok((-(k as f64)).exp2())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(path: &str) -> VertexId {
        VertexId::from_path(path).unwrap()
    }

    #[test]
    fn heap_index_round_trip() {
        for i in 0..1023 {
            assert_eq!(VertexId::from_heap_index(i).heap_index(), i);
        }
        assert_eq!(v("").heap_index(), 0);
        assert_eq!(v("0").heap_index(), 1);
        assert_eq!(v("1").heap_index(), 2);
        assert_eq!(v("00").heap_index(), 3);
    }

    #[test]
    fn parent_child_relations() {
        let x = v("0110");
        assert_eq!(x.parent().unwrap(), v("011"));
        assert_eq!(x.parent().unwrap().depth(), x.depth() - 1);
        assert_eq!(v("011").left(), x);
        assert_eq!(v("011").right(), v("0111"));
        assert_eq!(x.sibling().unwrap(), v("0111"));
        assert!(VertexId::ROOT.parent().is_none());
        assert_eq!(x.ancestor(2).unwrap(), v("01"));
        assert_eq!(x.step(2), 1);
        assert_eq!(x.step(4), 0);
    }

    #[test]
    fn rejects_oversized_bits() {
        assert!(VertexId::new(3, 8).is_err());
        assert!(VertexId::new(3, 7).is_ok());
        assert!(VertexId::new(0, 1).is_err());
    }

    #[test]
    fn common_ancestor_examples() {
        assert_eq!(common_ancestor_depth(VertexId::ROOT, v("0101")), 0);
        assert_eq!(common_ancestor_depth(v("0101"), v("0101")), 4);
        assert_eq!(common_ancestor_depth(v("010"), v("011")), 2);
        assert_eq!(common_ancestor_depth(v("0"), v("1")), 0);
        assert_eq!(common_ancestor_depth(v("01"), v("0111")), 2);
        assert_eq!(common_ancestor_depth(v("011"), v("0100")), 2);
    }

    #[test]
    fn ray_distance_examples() {
        let r = |p: &str| Ray::through(v(p));
        let x = Ray::new(10, 0b1010011010).unwrap();
        assert_eq!(ray_distance(&x, &x).unwrap(), 2f64.powi(-10));
        assert_eq!(ray_distance(&r("0000"), &r("1000")).unwrap(), 1.0);
        assert_eq!(ray_distance(&r("0110"), &r("0111")).unwrap(), 0.125);
        assert!(matches!(
            ray_distance(&r("01"), &r("011")),
            Err(CascadeError::DepthMismatch(2, 3))
        ));
    }

    #[test]
    fn ancestry() {
        assert!(v("01").is_ancestor_of(&v("0110")));
        assert!(v("01").is_ancestor_of(&v("01")));
        assert!(!v("01").is_ancestor_of(&v("0010")));
        assert!(VertexId::ROOT.is_ancestor_of(&v("1")));
    }
}
