//! Uniform-grid point index for k-nearest-neighbour queries.

/// Buckets points into cubic cells; queries scan rings of cells outward until
/// no closer point can remain.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<[f64; 3]>,
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    /// Point indices per cell, ascending.
    cells: Vec<Vec<u32>>,
}

impl PointIndex {
    /// Cell size targets about two points per cell.
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let ext: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-9)).collect();
        let volume = ext[0] * ext[1] * ext[2];
        let mut cell = (2.0 * volume / points.len().max(1) as f64).cbrt();
        let longest = ext.iter().cloned().fold(0.0, f64::max);
        // degenerate (flat or linear) sets: fall back to the longest side
        cell = cell.max(longest / 256.0).max(1e-9);
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).min(1024));
        let mut index = Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            cells: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        };
        for (i, p) in points.iter().enumerate() {
            let c = index.cell_of(p);
            let flat = index.flat(c);
            index.cells[flat].push(i as u32);
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cell_of(&self, p: &[f64; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let k = ((p[a] - self.origin[a]) / self.cell).floor();
            (k.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// The `k` points closest to `q` as `(index, squared distance)`, nearest
    /// first with ties broken by index. `skip` excludes one point (usually the
    /// query itself).
    pub fn nearest(&self, q: &[f64; 3], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return best;
        }
        let c = self.cell_of(q);
        let max_ring = *self.dims.iter().max().unwrap();
        for ring in 0..=max_ring {
            self.scan_ring(c, ring, |i| {
                if Some(i) == skip {
                    return;
                }
                let p = &self.points[i];
                let d2 = (0..3).map(|a| (p[a] - q[a]) * (p[a] - q[a])).sum::<f64>();
                let pos = best.partition_point(|&(j, e)| e < d2 || (e == d2 && j < i));
                if pos < k {
                    best.insert(pos, (i, d2));
                    best.truncate(k);
                }
            });
            if best.len() == k {
                // everything outside the scanned block is at least `ring` cells away
                let reach = self.inner_reach(q, c, ring);
                if best[k - 1].1 <= reach * reach {
                    break;
                }
            }
        }
        best
    }

    /// Distance from `q` to the outside of the block of cells within `ring` of `c`.
    fn inner_reach(&self, q: &[f64; 3], c: [usize; 3], ring: usize) -> f64 {
        let mut reach = f64::INFINITY;
        for a in 0..3 {
            let lo_cell = c[a] as i64 - ring as i64;
            let hi_cell = c[a] as i64 + ring as i64 + 1;
            if lo_cell > 0 {
                reach = reach.min(q[a] - (self.origin[a] + lo_cell as f64 * self.cell));
            }
            if (hi_cell as usize) < self.dims[a] {
                reach = reach.min(self.origin[a] + hi_cell as f64 * self.cell - q[a]);
            }
        }
        reach.max(0.0)
    }

    fn scan_ring(&self, c: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as i64;
        let range = |a: usize| {
            let lo = (c[a] as i64 - r).max(0);
            let hi = (c[a] as i64 + r).min(self.dims[a] as i64 - 1);
            lo..=hi
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let on_shell = (x - c[0] as i64).abs() == r
                        || (y - c[1] as i64).abs() == r
                        || (z - c[2] as i64).abs() == r;
                    if !on_shell {
                        continue;
                    }
                    let flat = self.flat([x as usize, y as usize, z as usize]);
                    for &i in &self.cells[flat] {
                        f(i as usize);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[[f64; 3]], q: &[f64; 3], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(i, p)| (i, (0..3).map(|a| (p[a] - q[a]).powi(2)).sum()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn flat_grid_neighbours() {
        let pts: Vec<[f64; 3]> = (0..100).map(|i| [(i % 10) as f64, (i / 10) as f64, 0.0]).collect();
        let idx = PointIndex::new(&pts);
        let nn = idx.nearest(&pts[55], 4, Some(55));
        assert!(nn.iter().all(|&(_, d)| d == 1.0));
        assert_eq!(nn.iter().map(|p| p.0).collect::<Vec<_>>(), vec![45, 54, 56, 65]);
    }

    #[test]
    fn empty_and_oversized_queries() {
        assert!(PointIndex::new(&[]).nearest(&[0.0; 3], 3, None).is_empty());
        let idx = PointIndex::new(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert_eq!(idx.nearest(&[5.0, 0.0, 0.0], 5, None).len(), 2);
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in 0u64..500, n in 1usize..300, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<[f64; 3]> = (0..n)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-0.2..0.2), rng.gen_range(0.0..3.0)])
                .collect();
            let idx = PointIndex::new(&pts);
            for _ in 0..10 {
                let q = [rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..4.0)];
                prop_assert_eq!(idx.nearest(&q, k, None), brute(&pts, &q, k, None));
            }
            prop_assert_eq!(idx.nearest(&pts[0], k, Some(0)), brute(&pts, &pts[0], k, Some(0)));
        }
    }
}
