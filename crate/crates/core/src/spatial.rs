//! K-nearest-center queries over the Gaussian centers.
//!
//! [`UniformGridIndex`] buckets centers into cubic cells of fixed size and
//! answers queries with an expanding ring search. Results are exact and
//! agree bit-for-bit with [`brute_force_knn`]: candidates are ranked by
//! squared distance, ties by ascending texel index.

use crate::error::{Error, Result};
use crate::model::{UVAvatar, Vec3};

/// Neighbor returned by a query: texel index and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

#[inline]
fn better(a: &Neighbor, b: &Neighbor) -> bool {
    a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index)
}

/// Bounded sorted candidate list.
struct TopK<'a> {
    k: usize,
    items: &'a mut Vec<Neighbor>,
}

impl TopK<'_> {
    #[inline]
    fn offer(&mut self, n: Neighbor) {
        if self.items.len() == self.k {
            if !better(&n, self.items.last().unwrap()) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.iter().position(|m| better(&n, m)).unwrap_or(self.items.len());
        self.items.insert(pos, n);
    }
}

#[inline]
fn dist2(base: &Vec3, offset: &Vec3, center: &Vec3) -> f64 {
    let d = (base - center) + offset;
    d.dot(&d)
}

/// Uniform grid over Gaussian centers. Cell coordinates are
/// `floor(x / cell_size)`, independent of the point set bounds.
#[derive(Debug, Clone)]
pub struct UniformGridIndex {
    cell_size: f64,
    min_cell: [i64; 3],
    dims: [usize; 3],
    /// CSR layout: entries of cell `c` are `entries[starts[c]..starts[c + 1]]`.
    starts: Vec<u32>,
    entries: Vec<u32>,
    centers: Vec<Vec3>,
}

impl UniformGridIndex {
    pub fn build(centers: &[Vec3], cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
        }
        if centers.is_empty() {
            return Err(Error::invalid("cannot index an empty point set"));
        }
        if let Some(i) = centers.iter().position(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(format!("non-finite center at texel {i}")));
        }
        let coord = |c: &Vec3| -> [i64; 3] {
            [
                (c.x / cell_size).floor() as i64,
                (c.y / cell_size).floor() as i64,
                (c.z / cell_size).floor() as i64,
            ]
        };
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for c in centers {
            let k = coord(c);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
        }
        let dims = [
            (hi[0] - lo[0] + 1) as usize,
            (hi[1] - lo[1] + 1) as usize,
            (hi[2] - lo[2] + 1) as usize,
        ];
        let ncells = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&v| v <= 1 << 26)
            .ok_or_else(|| Error::invalid("cell size too small for the point spread"))?;
        let cell_of = |c: &Vec3| {
            let k = coord(c);
            (((k[2] - lo[2]) as usize * dims[1]) + (k[1] - lo[1]) as usize) * dims[0]
                + (k[0] - lo[0]) as usize
        };
        let mut counts = vec![0u32; ncells + 1];
        for c in centers {
            counts[cell_of(c) + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut entries = vec![0u32; centers.len()];
        // Ascending insertion keeps each bucket sorted by texel index.
        for (i, c) in centers.iter().enumerate() {
            let cell = cell_of(c);
            entries[fill[cell] as usize] = i as u32;
            fill[cell] += 1;
        }
        Ok(UniformGridIndex {
            cell_size,
            min_cell: lo,
            dims,
            starts,
            entries,
            centers: centers.to_vec(),
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }

    /// Number of non-empty cells.
    pub fn occupied_cells(&self) -> usize {
        self.starts.windows(2).filter(|w| w[1] > w[0]).count()
    }

    /// Total number of indexed entries across all cells.
    pub fn indexed_count(&self) -> usize {
        self.entries.len()
    }

    /// Absolute integer cell coordinate holding texel `i`.
    pub fn cell_of(&self, i: usize) -> [i64; 3] {
        let c = &self.centers[i];
        [
            (c.x / self.cell_size).floor() as i64,
            (c.y / self.cell_size).floor() as i64,
            (c.z / self.cell_size).floor() as i64,
        ]
    }

    /// The `k` nearest centers to `x`, ascending by distance.
    pub fn knn(&self, x: &Vec3, k: usize) -> Result<Vec<Neighbor>> {
        let mut out = Vec::with_capacity(k);
        self.knn_into(x, &Vec3::zeros(), k, &mut out)?;
        Ok(out)
    }

    /// Query at `base + offset`, where distances are evaluated as
    /// `|(base − μ) + offset|²`. Renderers pass the ray origin and `t·dir` so
    /// results are exactly invariant to translating scene and camera
    /// together.
    pub fn knn_into(&self, base: &Vec3, offset: &Vec3, k: usize, out: &mut Vec<Neighbor>) -> Result<()> {
        if k == 0 || k > self.centers.len() {
            return Err(Error::invalid(format!(
                "k must be in 1..={}, got {k}",
                self.centers.len()
            )));
        }
        out.clear();
        let x = base + offset;
        let mut c = [0i64; 3];
        for a in 0..3 {
            let raw = (x[a] / self.cell_size).floor();
            let raw = if raw.is_finite() { raw } else { 0.0 };
            c[a] = (raw.clamp(-1e15, 1e15) as i64 - self.min_cell[a]).clamp(0, self.dims[a] as i64 - 1);
        }
        let max_ring = self.dims.iter().copied().max().unwrap() as i64;
        let mut top = TopK { k, items: out };
        let mut r = 0i64;
        loop {
            self.visit_ring(c, r, |idx| {
                let i = idx as usize;
                top.offer(Neighbor {
                    index: i,
                    dist2: dist2(base, offset, &self.centers[i]),
                });
            });
            if r >= max_ring {
                break;
            }
            if top.items.len() == k {
                // Unvisited cells are at least r cells away.
                let bound = (r as f64 * self.cell_size) * (1.0 - 1e-9);
                if top.items[k - 1].dist2 < bound * bound {
                    break;
                }
            }
            r += 1;
        }
        Ok(())
    }

    fn visit_ring(&self, c: [i64; 3], r: i64, mut f: impl FnMut(u32)) {
        let [nx, ny, nz] = [self.dims[0] as i64, self.dims[1] as i64, self.dims[2] as i64];
        let z0 = (c[2] - r).max(0);
        let z1 = (c[2] + r).min(nz - 1);
        let y0 = (c[1] - r).max(0);
        let y1 = (c[1] + r).min(ny - 1);
        for z in z0..=z1 {
            let z_on = (z - c[2]).abs() == r;
            for y in y0..=y1 {
                let on_face = z_on || (y - c[1]).abs() == r;
                let row = ((z * ny + y) * nx) as usize;
                let mut visit_x = |x: i64| {
                    if x < 0 || x >= nx {
                        return;
                    }
                    let cell = row + x as usize;
                    let (s, e) = (self.starts[cell] as usize, self.starts[cell + 1] as usize);
                    for &idx in &self.entries[s..e] {
                        f(idx);
                    }
                };
                if on_face {
                    for x in (c[0] - r).max(0)..=(c[0] + r).min(nx - 1) {
                        visit_x(x);
                    }
                } else {
                    visit_x(c[0] - r);
                    if r > 0 {
                        visit_x(c[0] + r);
                    }
                }
            }
        }
    }
}

/// Builds an index over the avatar's Gaussian centers.
pub fn build_index(avatar: &UVAvatar, cell_size: f64) -> Result<UniformGridIndex> {
    UniformGridIndex::build(&avatar.centers(), cell_size)
}

/// Twice the median nearest-neighbor spacing of the centers (brute force).
pub fn suggested_cell_size(centers: &[Vec3]) -> f64 {
    if centers.len() < 2 {
        return 1.0;
    }
    let mut nn: Vec<f64> = centers
        .iter()
        .enumerate()
        .map(|(i, a)| {
            centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| (a - b).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(|a, b| a.total_cmp(b));
    let med = nn[nn.len() / 2];
    if med > 0.0 {
        2.0 * med
    } else {
        let span = centers
            .iter()
            .flat_map(|c| c.iter().copied())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if span > 0.0 {
            span
        } else {
            1.0
        }
    }
}

/// Exhaustive K-nearest search over `centers`, ranked like [`UniformGridIndex`].
pub fn brute_force_knn_points(centers: &[Vec3], x: &Vec3, k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 || k > centers.len() {
        return Err(Error::invalid(format!(
            "k must be in 1..={}, got {k}",
            centers.len()
        )));
    }
    let zero = Vec3::zeros();
    let mut all: Vec<Neighbor> = centers
        .iter()
        .enumerate()
        .map(|(i, c)| Neighbor {
            index: i,
            dist2: dist2(x, &zero, c),
        })
        .collect();
    all.sort_by(|a, b| a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index)));
    all.truncate(k);
    Ok(all)
}

pub fn brute_force_knn(avatar: &UVAvatar, x: &Vec3, k: usize) -> Result<Vec<usize>> {
    Ok(brute_force_knn_points(&avatar.centers(), x, k)?
        .into_iter()
        .map(|n| n.index)
        .collect())
}

/// Texel indices of the `k` nearest centers, ascending by distance.
pub fn knn_query(index: &UniformGridIndex, x: &Vec3, k: usize) -> Result<Vec<usize>> {
    Ok(index.knn(x, k)?.into_iter().map(|n| n.index).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point() {
        let idx = UniformGridIndex::build(&[Vec3::new(0.3, 0.1, -2.0)], 0.5).unwrap();
        assert_eq!(idx.occupied_cells(), 1);
        assert_eq!(knn_query(&idx, &Vec3::zeros(), 1).unwrap(), vec![0]);
        assert_eq!(
            brute_force_knn_points(idx.centers(), &Vec3::zeros(), 1).unwrap()[0].index,
            0
        );
    }

    #[test]
    fn line_query() {
        let pts = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let idx = UniformGridIndex::build(&pts, 0.7).unwrap();
        assert_eq!(knn_query(&idx, &Vec3::new(0.1, 0.0, 0.0), 2).unwrap(), vec![0, 1]);
        assert_eq!(knn_query(&idx, &Vec3::new(1.9, 0.0, 0.0), 3).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn duplicates_break_ties_by_index() {
        let pts = [Vec3::new(1.0, 1.0, 1.0), Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)];
        let idx = UniformGridIndex::build(&pts, 0.25).unwrap();
        let q = Vec3::new(1.0, 1.0, 1.1);
        assert_eq!(knn_query(&idx, &q, 2).unwrap(), vec![0, 2]);
        let bf = brute_force_knn_points(&pts, &q, 2).unwrap();
        assert_eq!(bf.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn query_at_center_has_zero_distance() {
        let pts = [Vec3::new(0.5, 0.2, 0.1), Vec3::new(-0.5, 0.2, 0.1)];
        let n = brute_force_knn_points(&pts, &pts[1], 1).unwrap();
        assert_eq!((n[0].index, n[0].dist2), (1, 0.0));
    }

    #[test]
    fn k_bounds() {
        let idx = UniformGridIndex::build(&[Vec3::zeros(), Vec3::x()], 1.0).unwrap();
        assert!(idx.knn(&Vec3::zeros(), 3).is_err());
        assert!(idx.knn(&Vec3::zeros(), 0).is_err());
        assert!(UniformGridIndex::build(&[Vec3::zeros()], 0.0).is_err());
        assert!(UniformGridIndex::build(&[Vec3::new(f64::NAN, 0.0, 0.0)], 1.0).is_err());
    }

    #[test]
    fn full_k_returns_everything_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = UniformGridIndex::build(&pts, 0.1).unwrap();
        let q = Vec3::new(5.0, -3.0, 0.5);
        let got = idx.knn(&q, 50).unwrap();
        assert_eq!(got, brute_force_knn_points(&pts, &q, 50).unwrap());
    }

    #[test]
    fn rebuild_moves_only_the_edited_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts: Vec<Vec3> = (0..100)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let a = UniformGridIndex::build(&pts, 0.2).unwrap();
        pts[17] += Vec3::new(0.5, 0.0, 0.0);
        let b = UniformGridIndex::build(&pts, 0.2).unwrap();
        let moved: Vec<usize> = (0..pts.len()).filter(|&i| a.cell_of(i) != b.cell_of(i)).collect();
        assert_eq!(moved, vec![17]);
        assert_eq!(b.indexed_count(), 100);
    }
}
