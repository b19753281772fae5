//! Uniform voxel grid over splat supports.
//!
//! Each splat is registered in every cell touched by the axis-aligned box
//! around its three-sigma ellipse, so a ray that meets the ellipse visits
//! at least one cell listing the splat. Culling is therefore conservative.

use std::cell::RefCell;

use super::PreparedSplat;
use crate::geometry::{Ray, Vec3};

thread_local! {
    // per-splat stamp of the last query that listed it
    static SEEN: RefCell<(Vec<u32>, u32)> = const { RefCell::new((Vec::new(), 0)) };
}

const MAX_CELLS: f64 = 2_097_152.0;

#[derive(Clone, Debug, Default)]
pub struct SplatGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
    splat_count: usize,
}

impl SplatGrid {
    pub fn build(splats: &[PreparedSplat]) -> Self {
        if splats.is_empty() {
            return Self::default();
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut sizes: Vec<f64> = Vec::with_capacity(splats.len());
        for s in splats {
            lo = lo.inf(&(s.center - s.extent));
            hi = hi.sup(&(s.center + s.extent));
            sizes.push(s.extent.max());
        }
        let mid = sizes.len() / 2;
        let median_size = *sizes.select_nth_unstable_by(mid, f64::total_cmp).1;
        let span = (hi - lo).map(|v| v.max(1e-9));
        let cell = median_size
            .max((span.x * span.y * span.z / MAX_CELLS).cbrt())
            .max(span.max() / 4096.0)
            .max(1e-9);
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).ceil() as usize).max(1));
        let n_cells = dims[0] * dims[1] * dims[2];

        let cell_range = |s: &PreparedSplat| {
            let a = ((s.center - s.extent - lo) / cell).map(|v| v.floor() as i64);
            let b = ((s.center + s.extent - lo) / cell).map(|v| v.floor() as i64);
            let clamp = |v: i64, d: usize| v.clamp(0, d as i64 - 1) as usize;
            (
                [clamp(a.x, dims[0]), clamp(a.y, dims[1]), clamp(a.z, dims[2])],
                [clamp(b.x, dims[0]), clamp(b.y, dims[1]), clamp(b.z, dims[2])],
            )
        };
        let index = |x: usize, y: usize, z: usize| (z * dims[1] + y) * dims[0] + x;

        let mut counts = vec![0u32; n_cells + 1];
        for s in splats {
            let (a, b) = cell_range(s);
            for z in a[2]..=b[2] {
                for y in a[1]..=b[1] {
                    for x in a[0]..=b[0] {
                        counts[index(x, y, z) + 1] += 1;
                    }
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut cursor = counts.clone();
        let mut items = vec![0u32; counts[n_cells] as usize];
        for (k, s) in splats.iter().enumerate() {
            let (a, b) = cell_range(s);
            for z in a[2]..=b[2] {
                for y in a[1]..=b[1] {
                    for x in a[0]..=b[0] {
                        let c = index(x, y, z);
                        items[cursor[c] as usize] = k as u32;
                        cursor[c] += 1;
                    }
                }
            }
        }
        Self {
            origin: lo,
            cell,
            dims,
            starts: counts,
            items,
            splat_count: splats.len(),
        }
    }

    /// Collects the indices of splats whose cells the ray crosses, without
    /// duplicates, in traversal order.
    pub fn candidates(&self, ray: &Ray, out: &mut Vec<u32>) {
        out.clear();
        if self.items.is_empty() {
            return;
        }
        SEEN.with(|seen| {
            let (stamps, current) = &mut *seen.borrow_mut();
            if stamps.len() < self.splat_count {
                stamps.resize(self.splat_count, 0);
            }
            *current = current.wrapping_add(1);
            if *current == 0 {
                stamps.fill(0);
                *current = 1;
            }
            self.traverse(ray, |k| {
                let slot = &mut stamps[k as usize];
                if *slot != *current {
                    *slot = *current;
                    out.push(k);
                }
            });
        });
    }

    fn traverse(&self, ray: &Ray, mut visit: impl FnMut(u32)) {
        let size = Vec3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ) * self.cell;
        let (o, d) = (ray.origin - self.origin, ray.direction);

        // slab clip against the grid box
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-300 {
                if o[a] < 0.0 || o[a] > size[a] {
                    return;
                }
            } else {
                let inv = 1.0 / d[a];
                let (mut ta, mut tb) = (-o[a] * inv, (size[a] - o[a]) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
        }
        if t0 > t1 {
            return;
        }

        let p = o + d * t0;
        let mut idx = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let i = ((p[a] / self.cell).floor() as i64).clamp(0, self.dims[a] as i64 - 1);
            idx[a] = i;
            if d[a] > 0.0 {
                step[a] = 1;
                t_max[a] = t0 + ((i + 1) as f64 * self.cell - p[a]) / d[a];
                t_delta[a] = self.cell / d[a];
            } else if d[a] < 0.0 {
                step[a] = -1;
                t_max[a] = t0 + (i as f64 * self.cell - p[a]) / d[a];
                t_delta[a] = -self.cell / d[a];
            }
        }

        loop {
            let c = (idx[2] as usize * self.dims[1] + idx[1] as usize) * self.dims[0]
                + idx[0] as usize;
            let (s, e) = (self.starts[c] as usize, self.starts[c + 1] as usize);
            for &k in &self.items[s..e] {
                visit(k);
            }

            let a = if t_max[0] < t_max[1] {
                if t_max[0] < t_max[2] {
                    0
                } else {
                    2
                }
            } else if t_max[1] < t_max[2] {
                1
            } else {
                2
            };
            if t_max[a] > t1 {
                break;
            }
            idx[a] += step[a];
            if idx[a] < 0 || idx[a] >= self.dims[a] as i64 {
                break;
            }
            t_max[a] += t_delta[a];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::Splat2D;
    use rand::{Rng, SeedableRng};

    #[test]
    fn culling_is_conservative() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let splats: Vec<PreparedSplat> = (0..300)
            .map(|_| {
                let c = Vec3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(2.0..8.0),
                );
                let n = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
                let s = rng.gen_range(0.02..0.3);
                PreparedSplat::new(&Splat2D::oriented(c, &n, &Vec3::x(), [s, s * 0.7], 0.5, 0.05))
            })
            .collect();
        let grid = SplatGrid::build(&splats);
        let mut out = Vec::new();
        for _ in 0..2000 {
            let o = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            let d = Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), 1.0);
            let ray = Ray::new(o, d);
            grid.candidates(&ray, &mut out);
            for (k, s) in splats.iter().enumerate() {
                // the ray meets the plane inside the support ellipse
                let den = ray.direction.dot(&s.normal);
                let t = (s.center - ray.origin).dot(&s.normal) / den;
                let r = ray.at(t) - s.center;
                let (u, v) = (r.dot(&s.lu) / s.scale[0], r.dot(&s.lv) / s.scale[1]);
                let touches = den.abs() > 1e-12 && t >= 0.0 && u * u + v * v <= 9.0;
                if touches {
                    assert!(out.contains(&(k as u32)), "splat {k} missed");
                }
            }
        }
    }

    #[test]
    fn candidates_are_unique() {
        let splats: Vec<PreparedSplat> = (0..50)
            .map(|i| PreparedSplat::new(&Splat2D::oriented(Vec3::new(0.0, 0.0, 1.0 + 0.1 * i as f64), &Vec3::z(), &Vec3::x(), [2.0, 2.0], 0.5, 0.05)))
            .collect();
        let grid = SplatGrid::build(&splats);
        let mut out = Vec::new();
        grid.candidates(&Ray::new(Vec3::new(0.1, 0.2, 0.0), Vec3::z()), &mut out);
        let mut sorted = out.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
        assert_eq!(out.len(), 50);
    }

    #[test]
    fn empty_grid_has_no_candidates() {
        let grid = SplatGrid::build(&[]);
        let mut out = vec![1];
        grid.candidates(&Ray::new(Vec3::zeros(), Vec3::z()), &mut out);
        assert!(out.is_empty());
    }
}
