//! Tri-state voxel occupancy map and cuboid collision queries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Vec3};
use crate::sensors::{DepthImage, PointCloud, NO_RETURN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Unknown,
    Free,
    Occupied,
}

/// How unobserved space counts in a collision query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownAs {
    Free,
    Occupied,
}

pub type VoxelIndex = [i64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: f64,
    origin: Vec3,
    dims: [usize; 3],
    cells: Vec<Cell>,
}

impl VoxelGrid {
    /// All-unknown grid. Panics on a non-positive resolution or empty dims.
    pub fn new(origin: Vec3, dims: [usize; 3], resolution: f64) -> Self {
        assert!(resolution > 0.0, "voxel resolution must be positive");
        assert!(
            dims.iter().all(|d| *d > 0),
            "grid dimensions must be positive"
        );
        Self {
            resolution,
            origin,
            dims,
            cells: vec![Cell::Unknown; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Smallest grid anchored at `bounds.min` that covers `bounds`.
    pub fn covering(bounds: &Aabb, resolution: f64) -> Self {
        let size = bounds.max - bounds.min;
        let dims = [0, 1, 2].map(|i| ((size[i] / resolution - 1e-9).ceil() as usize).max(1));
        Self::new(bounds.min, dims, resolution)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> Aabb {
        let size = Vec3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ) * self.resolution;
        Aabb::new(self.origin, self.origin + size)
    }

    pub fn in_grid(&self, idx: VoxelIndex) -> bool {
        (0..3).all(|i| idx[i] >= 0 && (idx[i] as usize) < self.dims[i])
    }

    fn flat(&self, idx: VoxelIndex) -> usize {
        (idx[2] as usize * self.dims[1] + idx[1] as usize) * self.dims[0] + idx[0] as usize
    }

    /// State of a voxel; anything outside the grid is unknown.
    pub fn get(&self, idx: VoxelIndex) -> Cell {
        if self.in_grid(idx) {
            self.cells[self.flat(idx)]
        } else {
            Cell::Unknown
        }
    }

    pub fn set(&mut self, idx: VoxelIndex, cell: Cell) {
        if self.in_grid(idx) {
            let i = self.flat(idx);
            self.cells[i] = cell;
        }
    }

    pub fn voxel_of(&self, p: &Vec3) -> VoxelIndex {
        [0, 1, 2].map(|i| ((p[i] - self.origin[i]) / self.resolution).floor() as i64)
    }

    pub fn voxel_center(&self, idx: VoxelIndex) -> Vec3 {
        Vec3::new(
            self.origin.x + (idx[0] as f64 + 0.5) * self.resolution,
            self.origin.y + (idx[1] as f64 + 0.5) * self.resolution,
            self.origin.z + (idx[2] as f64 + 0.5) * self.resolution,
        )
    }

    pub fn voxel_aabb(&self, idx: VoxelIndex) -> Aabb {
        let min = Vec3::new(
            self.origin.x + idx[0] as f64 * self.resolution,
            self.origin.y + idx[1] as f64 * self.resolution,
            self.origin.z + idx[2] as f64 * self.resolution,
        );
        Aabb::new(min, min + Vec3::repeat(self.resolution))
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells.iter().filter(|c| **c == cell).count()
    }

    /// Inclusive voxel index range overlapping the interior of a box.
    pub fn overlap_range(&self, b: &Aabb) -> (VoxelIndex, VoxelIndex) {
        let lo = [0, 1, 2].map(|i| ((b.min[i] - self.origin[i]) / self.resolution).floor() as i64);
        let hi =
            [0, 1, 2].map(|i| ((b.max[i] - self.origin[i]) / self.resolution).ceil() as i64 - 1);
        (lo, hi)
    }

    /// Marks the voxel holding each point occupied and carves free space
    /// along the ray from `sensor_origin`. Occupied cells are never cleared.
    /// Points outside the grid only carve free space up to the boundary.
    pub fn integrate_pointcloud(&mut self, cloud: &PointCloud, sensor_origin: &Vec3) {
        for p in &cloud.points {
            self.integrate_ray(sensor_origin, p, true);
        }
    }

    /// Carves free space along each ray without marking an endpoint, for
    /// rays known to be empty up to `ends`.
    pub fn carve_rays(&mut self, ends: &[Vec3], sensor_origin: &Vec3) {
        for p in ends {
            self.integrate_ray(sensor_origin, p, false);
        }
    }

    fn integrate_ray(&mut self, origin: &Vec3, p: &Vec3, hit: bool) {
        let bounds = self.bounds();
        let inside = bounds.contains_point(p) && self.in_grid(self.voxel_of(p));
        let end = if inside {
            *p
        } else {
            match clip_segment(origin, p, &bounds) {
                Some(e) => e,
                None => return,
            }
        };
        let mark = hit && inside;
        let end_voxel = self.voxel_of(p);
        for idx in traverse(self, origin, &end) {
            if mark && idx == end_voxel {
                continue;
            }
            if self.get(idx) == Cell::Unknown {
                self.set(idx, Cell::Free);
            }
        }
        if mark {
            self.set(end_voxel, Cell::Occupied);
        }
    }

    /// Integrates every `stride`-th rendered pixel: returns mark their voxel
    /// occupied, and when `carve_misses` is set, pixels with no return carve
    /// free space out to the camera's maximum range. Skipped pixels are ignored.
    pub fn integrate_depth_image(&mut self, img: &DepthImage, stride: usize, carve_misses: bool) {
        let intr = &img.intrinsics;
        let origin = img.pose.position;
        let stride = stride.max(1);
        for v in (0..intr.height).step_by(stride) {
            for u in (0..intr.width).step_by(stride) {
                let d = img.get(u, v);
                if d.is_finite() {
                    let p = img.point(u, v).expect("finite depth");
                    self.integrate_ray(&origin, &p, true);
                } else if carve_misses && d == NO_RETURN {
                    let ray = intr.pixel_ray(u, v);
                    let p = img.pose.transform_point(&(ray * intr.max_range));
                    self.integrate_ray(&origin, &p, false);
                }
            }
        }
    }

    /// Marks unknown voxels lying entirely inside `b` free.
    pub fn clear_inside(&mut self, b: &Aabb) {
        let lo = [0, 1, 2].map(|i| ((b.min[i] - self.origin[i]) / self.resolution).ceil() as i64);
        let hi =
            [0, 1, 2].map(|i| ((b.max[i] - self.origin[i]) / self.resolution).floor() as i64 - 1);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    if self.in_grid([x, y, z]) && self.get([x, y, z]) == Cell::Unknown {
                        self.set([x, y, z], Cell::Free);
                    }
                }
            }
        }
    }

    /// True iff no voxel overlapping the cuboid is occupied (and, when
    /// `unknown` is [`UnknownAs::Occupied`], none is unknown). Space outside
    /// the grid counts as unknown.
    pub fn is_cuboid_free(&self, center: &Vec3, half_extents: &Vec3, unknown: UnknownAs) -> bool {
        let (lo, hi) = self.overlap_range(&Aabb::from_center_half_extents(*center, *half_extents));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    match self.get([x, y, z]) {
                        Cell::Occupied => return false,
                        Cell::Unknown if unknown == UnknownAs::Occupied => return false,
                        _ => {}
                    }
                }
            }
        }
        true
    }

    /// One `x y z state` line per observed voxel (voxel centers, meters).
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for z in 0..self.dims[2] as i64 {
            for y in 0..self.dims[1] as i64 {
                for x in 0..self.dims[0] as i64 {
                    let state = match self.get([x, y, z]) {
                        Cell::Unknown => continue,
                        Cell::Free => "free",
                        Cell::Occupied => "occupied",
                    };
                    let c = self.voxel_center([x, y, z]);
                    let _ = writeln!(out, "{:.3} {:.3} {:.3} {state}", c.x, c.y, c.z);
                }
            }
        }
        out
    }
}

/// Liang–Barsky clip of the segment `a -> b` against `bounds`, returning the
/// exit point when `a` is inside.
fn clip_segment(a: &Vec3, b: &Vec3, bounds: &Aabb) -> Option<Vec3> {
    let d = b - a;
    let mut t1: f64 = 1.0;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if a[i] < bounds.min[i] || a[i] > bounds.max[i] {
                return None;
            }
            continue;
        }
        let ta = (bounds.min[i] - a[i]) / d[i];
        let tb = (bounds.max[i] - a[i]) / d[i];
        t1 = t1.min(ta.max(tb));
    }
    // stay a hair inside so the last voxel is in the grid
    let t = (t1 - 1e-9).max(0.0);
    Some(a + d * t)
}

/// Amanatides–Woo traversal: every voxel the segment `from -> to` passes
/// through, in order, starting with the voxel of `from` and ending with the
/// voxel of `to`.
pub fn traverse(grid: &VoxelGrid, from: &Vec3, to: &Vec3) -> Vec<VoxelIndex> {
    let res = grid.resolution;
    let start = grid.voxel_of(from);
    let end = grid.voxel_of(to);
    let d = to - from;
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    let mut remaining = [0i64; 3];
    for i in 0..3 {
        remaining[i] = (end[i] - start[i]).abs();
        if remaining[i] == 0 {
            continue;
        }
        step[i] = (end[i] - start[i]).signum();
        let boundary = grid.origin[i] + (start[i] + i64::from(step[i] > 0)) as f64 * res;
        if d[i].abs() > 0.0 {
            t_max[i] = (boundary - from[i]) / d[i];
            t_delta[i] = res / d[i].abs();
        } else {
            t_max[i] = 0.0;
        }
    }
    let mut out = Vec::with_capacity((remaining.iter().sum::<i64>() + 1) as usize);
    let mut cur = start;
    out.push(cur);
    while remaining.iter().any(|r| *r > 0) {
        let axis = (0..3)
            .filter(|i| remaining[*i] > 0)
            .min_by(|a, b| t_max[*a].total_cmp(&t_max[*b]))
            .expect("an axis has steps left");
        cur[axis] += step[axis];
        t_max[axis] += t_delta[axis];
        remaining[axis] -= 1;
        out.push(cur);
    }
    out
}

/// Summed-volume table over blocked voxels, answering cuboid queries in
/// constant time with the same result as [`VoxelGrid::is_cuboid_free`].
#[derive(Debug, Clone)]
pub struct CollisionIndex {
    origin: Vec3,
    resolution: f64,
    dims: [usize; 3],
    unknown: UnknownAs,
    sums: Vec<u32>,
}

impl CollisionIndex {
    pub fn new(grid: &VoxelGrid, unknown: UnknownAs) -> Self {
        Self::with_clearing(grid, unknown, None)
    }

    /// Like [`CollisionIndex::new`], but unknown voxels overlapping `clear`
    /// count as free.
    pub fn with_clearing(grid: &VoxelGrid, unknown: UnknownAs, clear: Option<Aabb>) -> Self {
        let [nx, ny, nz] = grid.dims;
        let (sx, sy) = (nx + 1, ny + 1);
        let mut sums = vec![0u32; sx * sy * (nz + 1)];
        let cleared = clear.map(|b| grid.overlap_range(&b));
        let in_clear = |idx: VoxelIndex| match cleared {
            Some((lo, hi)) => (0..3).all(|i| idx[i] >= lo[i] && idx[i] <= hi[i]),
            None => false,
        };
        let at = |x: usize, y: usize, z: usize| (z * sy + y) * sx + x;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let idx = [x as i64, y as i64, z as i64];
                    let blocked = match grid.get(idx) {
                        Cell::Occupied => true,
                        Cell::Unknown => unknown == UnknownAs::Occupied && !in_clear(idx),
                        Cell::Free => false,
                    };
                    let v = u32::from(blocked)
                        + sums[at(x, y + 1, z + 1)]
                        + sums[at(x + 1, y, z + 1)]
                        + sums[at(x + 1, y + 1, z)]
                        + sums[at(x, y, z)]
                        - sums[at(x, y, z + 1)]
                        - sums[at(x, y + 1, z)]
                        - sums[at(x + 1, y, z)];
                    sums[at(x + 1, y + 1, z + 1)] = v;
                }
            }
        }
        Self {
            origin: grid.origin,
            resolution: grid.resolution,
            dims: grid.dims,
            unknown,
            sums,
        }
    }

    fn prefix(&self, x: usize, y: usize, z: usize) -> u32 {
        let (sx, sy) = (self.dims[0] + 1, self.dims[1] + 1);
        self.sums[(z * sy + y) * sx + x]
    }

    pub fn is_free(&self, center: &Vec3, half_extents: &Vec3) -> bool {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for i in 0..3 {
            let l =
                ((center[i] - half_extents[i] - self.origin[i]) / self.resolution).floor() as i64;
            let h = ((center[i] + half_extents[i] - self.origin[i]) / self.resolution).ceil()
                as i64
                - 1;
            if (l < 0 || h >= self.dims[i] as i64) && self.unknown == UnknownAs::Occupied {
                return false;
            }
            let l = l.max(0);
            let h = h.min(self.dims[i] as i64 - 1);
            if h < l {
                return true;
            }
            lo[i] = l as usize;
            hi[i] = h as usize + 1;
        }
        let total = self.prefix(hi[0], hi[1], hi[2]) as i64
            - self.prefix(lo[0], hi[1], hi[2]) as i64
            - self.prefix(hi[0], lo[1], hi[2]) as i64
            - self.prefix(hi[0], hi[1], lo[2]) as i64
            + self.prefix(lo[0], lo[1], hi[2]) as i64
            + self.prefix(lo[0], hi[1], lo[2]) as i64
            + self.prefix(hi[0], lo[1], lo[2]) as i64
            - self.prefix(lo[0], lo[1], lo[2]) as i64;
        total == 0
    }

    /// Swept check: the segment is cut into pieces of at most half a voxel
    /// and each piece's cuboid hull must be free, so corners cannot slip
    /// between samples.
    pub fn is_segment_free(&self, a: &Vec3, b: &Vec3, half_extents: &Vec3) -> bool {
        let len = (b - a).norm();
        let n = (len / (0.5 * self.resolution)).ceil().max(1.0) as usize;
        let grow = (b - a).abs() / (2.0 * n as f64);
        let half = half_extents + grow;
        (0..n).all(|i| self.is_free(&a.lerp(b, (i as f64 + 0.5) / n as f64), &half))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn grid() -> VoxelGrid {
        VoxelGrid::new(Vec3::new(-0.05, -0.05, -0.05), [20, 10, 10], 0.1)
    }

    #[test]
    fn fresh_grid_is_unknown() {
        let g = grid();
        assert_eq!(g.count(Cell::Unknown), 2000);
    }

    #[test]
    fn single_axis_ray() {
        let mut g = grid();
        g.integrate_pointcloud(
            &PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0)]),
            &Vec3::zeros(),
        );
        assert_eq!(g.get([10, 0, 0]), Cell::Occupied);
        for x in 1..10 {
            assert_eq!(g.get([x, 0, 0]), Cell::Free, "voxel {x}");
        }
        // the 9 voxels strictly between, plus the sensor's own voxel
        assert_eq!(g.count(Cell::Free), 10);
        assert_eq!(g.count(Cell::Occupied), 1);
    }

    #[test]
    fn empty_cloud_changes_nothing() {
        let mut g = grid();
        let before = g.clone();
        g.integrate_pointcloud(&PointCloud::default(), &Vec3::zeros());
        assert_eq!(g, before);
    }

    #[test]
    fn crossing_rays_occupied_wins_in_both_orders() {
        let stop = PointCloud::new(vec![Vec3::new(0.5, 0.0, 0.0)]);
        let pass = PointCloud::new(vec![Vec3::new(1.2, 0.0, 0.0)]);
        let mut a = grid();
        a.integrate_pointcloud(&stop, &Vec3::zeros());
        a.integrate_pointcloud(&pass, &Vec3::zeros());
        let mut b = grid();
        b.integrate_pointcloud(&pass, &Vec3::zeros());
        b.integrate_pointcloud(&stop, &Vec3::zeros());
        assert_eq!(a.get([5, 0, 0]), Cell::Occupied);
        assert_eq!(a, b);
    }

    #[test]
    fn outside_points_only_carve() {
        let mut g = grid();
        g.integrate_pointcloud(
            &PointCloud::new(vec![Vec3::new(5.0, 0.0, 0.0)]),
            &Vec3::zeros(),
        );
        assert_eq!(g.count(Cell::Occupied), 0);
        assert_eq!(g.get([19, 0, 0]), Cell::Free);
    }

    #[test]
    fn carved_rays_mark_no_endpoint() {
        let mut g = grid();
        g.carve_rays(&[Vec3::new(1.0, 0.0, 0.0)], &Vec3::zeros());
        assert_eq!(g.count(Cell::Occupied), 0);
        assert_eq!(g.get([10, 0, 0]), Cell::Free);
        assert_eq!(g.count(Cell::Free), 11);
    }

    #[test]
    fn depth_image_misses_and_skips() {
        use crate::geometry::Pose;
        use crate::sensors::{CameraIntrinsics, DepthImage, NOT_RENDERED};
        let intr = CameraIntrinsics {
            width: 3,
            height: 1,
            max_range: 1.0,
            ..Default::default()
        };
        let mut img = DepthImage::empty(intr, Pose::new(Vec3::new(0.0, 0.5, 0.5), 0.0));
        img.set(0, 0, NOT_RENDERED);
        img.set(1, 0, 0.8);
        let mut a = grid();
        a.integrate_depth_image(&img, 1, false);
        assert_eq!(a.count(Cell::Occupied), 1);
        let free_hit_only = a.count(Cell::Free);
        let mut b = grid();
        b.integrate_depth_image(&img, 1, true);
        assert_eq!(b.count(Cell::Occupied), 1);
        assert!(b.count(Cell::Free) > free_hit_only);
    }

    #[test]
    fn clear_inside_keeps_partial_and_occupied_voxels() {
        let mut g = grid();
        g.set([3, 3, 3], Cell::Occupied);
        g.clear_inside(&Aabb::new(
            Vec3::new(0.2, 0.2, 0.2),
            Vec3::new(0.45, 0.45, 0.45),
        ));
        // voxels span [k*0.1 - 0.05, k*0.1 + 0.05]; fully inside: k in 3..=4 on each axis
        assert_eq!(g.get([3, 3, 3]), Cell::Occupied);
        assert_eq!(g.get([2, 3, 3]), Cell::Unknown);
        assert_eq!(g.count(Cell::Free), 7);
        g.clear_inside(&Aabb::new(
            Vec3::new(0.05, 0.05, 0.05),
            Vec3::new(0.45, 0.45, 0.45),
        ));
        assert_eq!(g.count(Cell::Free), 4 * 4 * 4 - 1);
    }

    #[test]
    fn cuboid_queries() {
        let mut g = grid();
        assert!(g.is_cuboid_free(
            &Vec3::new(0.5, 0.4, 0.4),
            &Vec3::repeat(0.2),
            UnknownAs::Free
        ));
        assert!(!g.is_cuboid_free(
            &Vec3::new(0.5, 0.4, 0.4),
            &Vec3::repeat(0.2),
            UnknownAs::Occupied
        ));
        for c in g.cells.iter_mut() {
            *c = Cell::Free;
        }
        let (center, half) = (Vec3::new(0.5, 0.4, 0.4), Vec3::repeat(0.2));
        assert!(g.is_cuboid_free(&center, &half, UnknownAs::Occupied));
        // voxel holding the cuboid's min corner
        let corner = g.voxel_of(&(center - half + Vec3::repeat(1e-6)));
        g.set(corner, Cell::Occupied);
        assert!(!g.is_cuboid_free(&center, &half, UnknownAs::Free));
    }

    #[test]
    fn cuboid_past_grid_edge_counts_unknown() {
        let mut g = grid();
        for c in g.cells.iter_mut() {
            *c = Cell::Free;
        }
        let c = Vec3::new(-0.05, 0.4, 0.4);
        assert!(!g.is_cuboid_free(&c, &Vec3::repeat(0.1), UnknownAs::Occupied));
        assert!(g.is_cuboid_free(&c, &Vec3::repeat(0.1), UnknownAs::Free));
        let idx = CollisionIndex::new(&g, UnknownAs::Occupied);
        assert!(!idx.is_free(&c, &Vec3::repeat(0.1)));
    }

    #[test]
    fn dump_lists_observed_voxels() {
        let mut g = grid();
        g.integrate_pointcloud(
            &PointCloud::new(vec![Vec3::new(0.3, 0.0, 0.0)]),
            &Vec3::zeros(),
        );
        let dump = g.debug_dump();
        assert_eq!(dump.lines().count(), 4);
        assert!(dump.lines().last().unwrap().ends_with("occupied"));
    }

    /// Voxels whose box the segment actually touches (closed slab test).
    fn exact_touched(g: &VoxelGrid, a: &Vec3, b: &Vec3) -> BTreeSet<VoxelIndex> {
        let (lo, hi) = g.overlap_range(&Aabb::new(a.inf(b), a.sup(b)));
        let mut out = BTreeSet::new();
        for z in lo[2] - 1..=hi[2] + 1 {
            for y in lo[1] - 1..=hi[1] + 1 {
                for x in lo[0] - 1..=hi[0] + 1 {
                    let bx = g.voxel_aabb([x, y, z]);
                    let (mut t0, mut t1) = (0.0f64, 1.0f64);
                    let d = b - a;
                    let mut hit = true;
                    for i in 0..3 {
                        if d[i].abs() < 1e-15 {
                            if a[i] < bx.min[i] - 1e-9 || a[i] > bx.max[i] + 1e-9 {
                                hit = false;
                            }
                            continue;
                        }
                        let (p, q) = ((bx.min[i] - a[i]) / d[i], (bx.max[i] - a[i]) / d[i]);
                        t0 = t0.max(p.min(q));
                        t1 = t1.min(p.max(q));
                    }
                    if hit && t0 <= t1 + 1e-9 {
                        out.insert([x, y, z]);
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn traversal_matches_dense_sampling(
            ax in 0.0f64..1.9, ay in 0.0f64..0.9, az in 0.0f64..0.9,
            bx in 0.0f64..1.9, by in 0.0f64..0.9, bz in 0.0f64..0.9,
        ) {
            let g = grid();
            let (a, b) = (Vec3::new(ax, ay, az), Vec3::new(bx, by, bz));
            let visited: BTreeSet<_> = traverse(&g, &a, &b).into_iter().collect();
            let len = (b - a).norm();
            let n = (len / (0.01 * g.resolution())).ceil().max(1.0) as usize;
            let sampled: BTreeSet<_> = (0..=n).map(|i| g.voxel_of(&a.lerp(&b, i as f64 / n as f64))).collect();
            prop_assert!(sampled.is_subset(&visited), "dense sampling found voxels the traversal missed");
            let touched = exact_touched(&g, &a, &b);
            prop_assert!(visited.is_subset(&touched), "traversal visited voxels the segment does not touch");
            // traversal is face-connected
            let seq = traverse(&g, &a, &b);
            for w in seq.windows(2) {
                let manhattan: i64 = (0..3).map(|i| (w[0][i] - w[1][i]).abs()).sum();
                prop_assert_eq!(manhattan, 1);
            }
        }

        #[test]
        fn integration_is_idempotent_and_never_clears_occupied(
            pts in proptest::collection::vec((0.0f64..1.9, 0.0f64..0.9, 0.0f64..0.9), 1..30),
            more in proptest::collection::vec((0.0f64..1.9, 0.0f64..0.9, 0.0f64..0.9), 1..30),
        ) {
            let origin = Vec3::new(0.95, 0.45, 0.45);
            let cloud = PointCloud::new(pts.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect());
            let mut once = grid();
            once.integrate_pointcloud(&cloud, &origin);
            let mut twice = once.clone();
            twice.integrate_pointcloud(&cloud, &origin);
            prop_assert_eq!(&once, &twice);

            let occupied: Vec<_> = (0..once.cells.len()).filter(|i| once.cells[*i] == Cell::Occupied).collect();
            let extra = PointCloud::new(more.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect());
            twice.integrate_pointcloud(&extra, &origin);
            for i in occupied {
                prop_assert_eq!(twice.cells[i], Cell::Occupied);
            }
        }

        #[test]
        fn index_agrees_with_direct_query(
            seed_cells in proptest::collection::vec(0u8..3, 2000),
            cx in -0.3f64..2.2, cy in -0.3f64..1.2, cz in -0.3f64..1.2,
            hx in 0.01f64..0.5, hy in 0.01f64..0.5, hz in 0.01f64..0.5,
        ) {
            let mut g = grid();
            for (c, s) in g.cells.iter_mut().zip(&seed_cells) {
                *c = match s { 0 => Cell::Unknown, 1 => Cell::Free, _ => Cell::Free };
            }
            // sparse occupancy so that free answers are common
            for (i, s) in seed_cells.iter().enumerate() {
                if *s == 2 && i % 7 == 0 {
                    g.cells[i] = Cell::Occupied;
                }
            }
            let (c, h) = (Vec3::new(cx, cy, cz), Vec3::new(hx, hy, hz));
            for policy in [UnknownAs::Free, UnknownAs::Occupied] {
                let idx = CollisionIndex::new(&g, policy);
                prop_assert_eq!(idx.is_free(&c, &h), g.is_cuboid_free(&c, &h, policy));
            }
        }
    }
}
