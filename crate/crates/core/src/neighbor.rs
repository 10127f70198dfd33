//! Spatial and causal-temporal k-nearest-neighbor indices over a clean stream.
//!
//! Both searches use unweighted Euclidean distance on normalized `(x, y, t)`.
//! Ties are broken by the lower event index; rows with fewer than `k`
//! candidates are padded with the query's own index at distance zero.

use crate::error::{Error, Result};
use crate::event::EventStream;

#[inline]
pub fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dt = a[2] - b[2];
    (dx * dx + dy * dy + dt * dt).sqrt()
}

/// Row-major `N × k` neighbor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    pub k: usize,
    pub spatial_idx: Vec<usize>,
    pub spatial_dist: Vec<f64>,
    pub temporal_idx: Vec<usize>,
}

impl NeighborIndex {
    /// Builds both tables. With `causal = false` the temporal table ignores
    /// the timestamp restriction, which makes it identical to the spatial one.
    pub fn build(stream: &EventStream, k: usize, causal: bool) -> Result<Self> {
        let (spatial_idx, spatial_dist) = knn_spatial(stream, k)?;
        let temporal_idx = if causal {
            knn_temporal_causal(stream, k)?
        } else {
            spatial_idx.clone()
        };
        Ok(Self {
            k,
            spatial_idx,
            spatial_dist,
            temporal_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.spatial_idx.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.spatial_idx.is_empty()
    }

    pub fn spatial_row(&self, n: usize) -> &[usize] {
        &self.spatial_idx[n * self.k..(n + 1) * self.k]
    }

    pub fn spatial_dist_row(&self, n: usize) -> &[f64] {
        &self.spatial_dist[n * self.k..(n + 1) * self.k]
    }

    pub fn temporal_row(&self, n: usize) -> &[usize] {
        &self.temporal_idx[n * self.k..(n + 1) * self.k]
    }
}

fn check(stream: &EventStream, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if stream.len() < 2 {
        return Err(Error::TooFewEvents);
    }
    Ok(())
}

/// Bounded sorted buffer of the `k` best `(dist, idx)` pairs seen so far.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, d: f64, j: usize) {
        if self.items.len() == self.k {
            let (wd, wj) = self.items[self.k - 1];
            if d > wd || (d == wd && j > wj) {
                return;
            }
        }
        // candidates arrive in increasing index order, so ties stay stable
        // by inserting after every entry with an equal distance
        let pos = self.items.partition_point(|&(od, _)| od <= d);
        self.items.insert(pos, (d, j));
        self.items.truncate(self.k);
    }

    fn drain_into(self, n: usize, k: usize, idx: &mut Vec<usize>, dist: &mut Vec<f64>) {
        let filled = self.items.len();
        for (d, j) in self.items {
            idx.push(j);
            dist.push(d);
        }
        for _ in filled..k {
            idx.push(n);
            dist.push(0.0);
        }
    }
}

/// For each event, its `k` nearest other events and their distances.
pub fn knn_spatial(stream: &EventStream, k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    check(stream, k)?;
    let pts = stream.coords();
    let n_ev = pts.len();
    let mut idx = Vec::with_capacity(n_ev * k);
    let mut dist = Vec::with_capacity(n_ev * k);
    for (n, p) in pts.iter().enumerate() {
        let mut top = TopK::new(k);
        for (j, q) in pts.iter().enumerate() {
            if j != n {
                top.offer(dist3(p, q), j);
            }
        }
        top.drain_into(n, k, &mut idx, &mut dist);
    }
    Ok((idx, dist))
}

/// For each event, its `k` nearest events among those with `t_j >= t_n`
/// (excluding itself).
pub fn knn_temporal_causal(stream: &EventStream, k: usize) -> Result<Vec<usize>> {
    check(stream, k)?;
    let pts = stream.coords();
    let n_ev = pts.len();
    let mut idx = Vec::with_capacity(n_ev * k);
    let mut scratch = Vec::with_capacity(k);
    for (n, p) in pts.iter().enumerate() {
        let mut top = TopK::new(k);
        for (j, q) in pts.iter().enumerate() {
            if j != n && q[2] >= p[2] {
                top.offer(dist3(p, q), j);
            }
        }
        scratch.clear();
        top.drain_into(n, k, &mut idx, &mut scratch);
    }
    Ok(idx)
}
