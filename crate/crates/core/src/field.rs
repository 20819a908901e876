//! Dense time-indexed storage shared by the value, mass and quote fields.

/// Values on `n_times` time slices of `n_nodes` nodes each, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeField {
    n_times: usize,
    n_nodes: usize,
    data: Vec<f64>,
}

impl TimeField {
    pub fn zeros(n_times: usize, n_nodes: usize) -> Self {
        Self {
            n_times,
            n_nodes,
            data: vec![0.0; n_times * n_nodes],
        }
    }

    pub fn filled(n_times: usize, n_nodes: usize, value: f64) -> Self {
        Self {
            n_times,
            n_nodes,
            data: vec![value; n_times * n_nodes],
        }
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_nodes..(t + 1) * self.n_nodes]
    }

    pub fn slice_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.n_nodes..(t + 1) * self.n_nodes]
    }

    /// Mutable view of slice `dst` together with a shared view of slice `src`.
    pub fn pair_mut(&mut self, dst: usize, src: usize) -> (&mut [f64], &[f64]) {
        assert_ne!(dst, src);
        let n = self.n_nodes;
        if dst < src {
            let (lo, hi) = self.data.split_at_mut(src * n);
            (&mut lo[dst * n..(dst + 1) * n], &hi[..n])
        } else {
            let (lo, hi) = self.data.split_at_mut(dst * n);
            (&mut hi[..n], &lo[src * n..(src + 1) * n])
        }
    }

    #[inline]
    pub fn get(&self, t: usize, node: usize) -> f64 {
        self.data[t * self.n_nodes + node]
    }

    #[inline]
    pub fn set(&mut self, t: usize, node: usize, v: f64) {
        self.data[t * self.n_nodes + node] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `sup_{t, node} |self - other|`.
    pub fn sup_distance(&self, other: &TimeField) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(1 - w) * self + w * other`, in place.
    pub fn blend(&mut self, other: &TimeField, w: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = (1.0 - w) * *a + w * b;
        }
    }
}
