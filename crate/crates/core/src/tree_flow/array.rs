use std::ops::{Index, IndexMut, Range};

use super::vertex::VertexId;

#[inline]
pub(crate) fn level_range(level: u32) -> Range<usize> {
    ((1usize << level) - 1)..((1usize << (level + 1)) - 1)
}

/// Per-vertex storage for every vertex with generation `<= depth`, laid out
/// level by level so that level `k` is one contiguous slice of length `2^k`
/// indexed by path bits.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeArray<T> {
    depth: u32,
    data: Vec<T>,
}

impl<T: Clone> TreeArray<T> {
    pub fn filled(depth: u32, value: T) -> Self {
        TreeArray {
            depth,
            data: vec![value; (1usize << (depth + 1)) - 1],
        }
    }
}

impl<T> TreeArray<T> {
    /// Wraps a heap-ordered vector; `None` if its length is not `2^(depth+1) - 1`.
    pub fn from_vec(data: Vec<T>) -> Option<Self> {
        let n = data.len() + 1;
        if !n.is_power_of_two() || n < 2 {
            return None;
        }
        Some(TreeArray {
            depth: n.trailing_zeros() - 1,
            data,
        })
    }

    #[inline]
    pub fn depth(&self) -> u32 {
        self.depth
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn level(&self, k: u32) -> &[T] {
        &self.data[level_range(k)]
    }

    #[inline]
    pub fn level_mut(&mut self, k: u32) -> &mut [T] {
        &mut self.data[level_range(k)]
    }

    /// Mutable parent level `k` together with the child level `k + 1`.
    #[inline]
    pub fn parent_and_children_mut(&mut self, k: u32) -> (&mut [T], &mut [T]) {
        let (head, tail) = self.data.split_at_mut((1usize << (k + 1)) - 1);
        (&mut head[level_range(k)], &mut tail[..(1usize << (k + 1))])
    }

    pub fn leaves(&self) -> &[T] {
        self.level(self.depth)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, v: VertexId) -> Option<&T> {
        (v.depth() <= self.depth).then(|| &self.data[v.heap_index()])
    }

    /// Iterates `(vertex, value)` in breadth-first order.
    pub fn iter(&self) -> impl Iterator<Item = (VertexId, &T)> {
        self.data
            .iter()
            .enumerate()
            .map(|(i, x)| (VertexId::from_heap_index(i), x))
    }

    /// The first `depth + 1` levels.
    pub fn truncated(&self, depth: u32) -> TreeArray<T>
    where
        T: Clone,
    {
        assert!(depth <= self.depth);
        TreeArray {
            depth,
            data: self.data[..(1usize << (depth + 1)) - 1].to_vec(),
        }
    }
}

impl<T> Index<VertexId> for TreeArray<T> {
    type Output = T;

    #[inline]
    fn index(&self, v: VertexId) -> &T {
        &self.data[v.heap_index()]
    }
}

impl<T> IndexMut<VertexId> for TreeArray<T> {
    #[inline]
    fn index_mut(&mut self, v: VertexId) -> &mut T {
        &mut self.data[v.heap_index()]
    }
}
