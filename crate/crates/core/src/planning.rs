//! RRT* over 3D positions with an axis-aligned vehicle cuboid, plus random
//! shortcut smoothing.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};
use crate::mapping::{CollisionIndex, UnknownAs, VoxelGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid planner parameters: {0}")]
    InvalidParams(String),
    #[error("start position is in collision")]
    StartInCollision,
    #[error("no path found within {iterations} iterations")]
    NoPath { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub max_iterations: usize,
    pub step_size: f64,
    pub goal_bias: f64,
    /// Upper bound on the rewire radius; the radius also shrinks with tree
    /// size as `gamma * (ln n / n)^(1/3)`.
    pub rewire_radius: f64,
    pub goal_tolerance: f64,
    pub seed: u64,
    /// How [`plan_path`] treats unknown voxels.
    pub unknown_as: UnknownAs,
    /// Unknown voxels within this distance of the start cuboid count as
    /// free in [`plan_path`], so a vehicle sitting in unmapped space can leave.
    pub start_clearance: f64,
    /// When set, samples are drawn only from the box spanned by start and
    /// goal grown by this margin (intersected with the grid).
    pub local_margin: Option<f64>,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            step_size: 0.3,
            goal_bias: 0.1,
            rewire_radius: 1.0,
            goal_tolerance: 0.15,
            seed: 0,
            unknown_as: UnknownAs::Occupied,
            start_clearance: 0.0,
            local_margin: None,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidParams(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return bad("goal_bias must be in [0, 1]");
        }
        if !(self.rewire_radius > 0.0)
            || !(self.goal_tolerance >= 0.0)
            || !(self.start_clearance >= 0.0)
        {
            return bad("radii and tolerances must be non-negative");
        }
        if self.local_margin.is_some_and(|m| !(m >= 0.0)) {
            return bad("local_margin must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Vec3>,
    pub length: f64,
}

impl Path {
    pub fn new(waypoints: Vec<Vec3>) -> Self {
        let length = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        Self { waypoints, length }
    }

    pub fn start(&self) -> Option<&Vec3> {
        self.waypoints.first()
    }

    pub fn end(&self) -> Option<&Vec3> {
        self.waypoints.last()
    }

    /// Dense re-check of every segment against `index`.
    pub fn is_collision_free(&self, index: &CollisionIndex, half_extents: &Vec3) -> bool {
        match self.waypoints.as_slice() {
            [] => true,
            [p] => index.is_free(p, half_extents),
            w => w
                .windows(2)
                .all(|s| index.is_segment_free(&s[0], &s[1], half_extents)),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    pos: Vec3,
    parent: usize,
    cost: f64,
    children: Vec<usize>,
}

/// Uniform bucket grid over node positions. Queries return exactly what a
/// linear scan would, with ties broken by lower node index.
#[derive(Debug, Clone)]
struct Buckets {
    cell: f64,
    map: HashMap<[i64; 3], Vec<usize>>,
}

const BUCKET_LOAD: usize = 16;
const MIN_BUCKET: f64 = 0.02;

impl Buckets {
    fn build(nodes: &[Node], cell: f64) -> Self {
        let mut b = Self {
            cell,
            map: HashMap::new(),
        };
        for (i, n) in nodes.iter().enumerate() {
            b.insert(&n.pos, i);
        }
        b
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|i| (p[i] / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: &Vec3, id: usize) {
        let k = self.key(p);
        self.map.entry(k).or_default().push(id);
    }

    fn within(&self, nodes: &[Node], p: &Vec3, r: f64, out: &mut Vec<usize>) {
        out.clear();
        let reach = (r / self.cell).ceil() as i64;
        let k = self.key(p);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.map.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend(
                            ids.iter()
                                .copied()
                                .filter(|&i| (nodes[i].pos - p).norm() <= r),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
    }

    fn nearest(&self, nodes: &[Node], p: &Vec3) -> usize {
        let k = self.key(p);
        let mut best: Option<(f64, usize)> = None;
        let mut shell = 0i64;
        let mut visited = 0usize;
        loop {
            for dx in -shell..=shell {
                for dy in -shell..=shell {
                    for dz in -shell..=shell {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != shell {
                            continue;
                        }
                        if let Some(ids) = self.map.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            visited += ids.len();
                            for &i in ids {
                                let d = (nodes[i].pos - p).norm();
                                if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                                    best = Some((d, i));
                                }
                            }
                        }
                    }
                }
            }
            // everything outside the searched cube is at least `shell * cell` away
            if let Some((d, i)) = best {
                if d < shell as f64 * self.cell || visited == nodes.len() {
                    return i;
                }
            }
            shell += 1;
        }
    }
}

/// Incremental RRT* planner. [`RrtStar::run`] may be called repeatedly; the
/// result after a total of `N` iterations does not depend on how they were
/// split between calls.
#[derive(Debug, Clone)]
pub struct RrtStar<'a> {
    index: &'a CollisionIndex,
    goal: Vec3,
    half: Vec3,
    params: PlannerParams,
    lo: Vec3,
    hi: Vec3,
    gamma: f64,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    buckets: Buckets,
    goal_nodes: Vec<usize>,
    iterations: usize,
    scratch: Vec<usize>,
}

impl<'a> RrtStar<'a> {
    pub fn new(
        index: &'a CollisionIndex,
        grid_bounds: Aabb,
        start: Vec3,
        goal: Vec3,
        half_extents: Vec3,
        params: PlannerParams,
    ) -> Result<Self, PlanError> {
        params.validate()?;
        if !index.is_free(&start, &half_extents) {
            return Err(PlanError::StartInCollision);
        }
        let mut lo = grid_bounds.min + half_extents;
        let mut hi = grid_bounds.max - half_extents;
        if let Some(m) = params.local_margin {
            let m = Vec3::repeat(m);
            lo = lo.sup(&(start.inf(&goal) - m));
            hi = hi.inf(&(start.sup(&goal) + m));
        }
        let hi = hi.sup(&lo);
        let volume = (hi - lo).iter().product::<f64>().max(1e-9);
        let unit_ball = 4.0 / 3.0 * std::f64::consts::PI;
        let gamma = 2.0 * (4.0f64 / 3.0).cbrt() * (volume / unit_ball).cbrt();
        let mut buckets = Buckets {
            cell: params.rewire_radius.max(params.step_size),
            map: HashMap::new(),
        };
        buckets.insert(&start, 0);
        let mut planner = Self {
            index,
            goal,
            half: half_extents,
            params,
            lo,
            hi,
            gamma,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            nodes: vec![Node {
                pos: start,
                parent: 0,
                cost: 0.0,
                children: Vec::new(),
            }],
            buckets,
            goal_nodes: Vec::new(),
            iterations: 0,
            scratch: Vec::new(),
        };
        planner.note_goal(0);
        Ok(planner)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn note_goal(&mut self, id: usize) {
        if (self.nodes[id].pos - self.goal).norm() <= self.params.goal_tolerance {
            self.goal_nodes.push(id);
        }
    }

    fn radius(&self) -> f64 {
        let n = self.nodes.len() as f64;
        if n < 2.0 {
            return self.params.rewire_radius;
        }
        (self.gamma * (n.ln() / n).cbrt()).min(self.params.rewire_radius)
    }

    fn sample(&mut self) -> Vec3 {
        if self.rng.random::<f64>() < self.params.goal_bias {
            return self.goal;
        }
        let mut s = Vec3::zeros();
        for i in 0..3 {
            s[i] = if self.hi[i] > self.lo[i] {
                self.rng.random_range(self.lo[i]..self.hi[i])
            } else {
                self.lo[i]
            };
        }
        s
    }

    fn propagate(&mut self, root: usize, delta: f64) {
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            self.nodes[i].cost -= delta;
            stack.extend(self.nodes[i].children.iter().copied());
        }
    }

    pub fn step(&mut self) {
        self.iterations += 1;
        let q = self.sample();
        let near = self.buckets.nearest(&self.nodes, &q);
        let from = self.nodes[near].pos;
        let d = (q - from).norm();
        if d < 1e-9 {
            return;
        }
        let new = if d <= self.params.step_size {
            q
        } else {
            from + (q - from) * (self.params.step_size / d)
        };
        if !self.index.is_free(&new, &self.half) {
            return;
        }
        let r = self.radius();
        let mut neigh = std::mem::take(&mut self.scratch);
        self.buckets.within(&self.nodes, &new, r, &mut neigh);
        if !neigh.contains(&near) {
            neigh.push(near);
        }
        let mut cand: Vec<(f64, usize)> = neigh
            .iter()
            .map(|&i| (self.nodes[i].cost + (self.nodes[i].pos - new).norm(), i))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some(&(cost, parent)) = cand.iter().find(|(_, i)| {
            self.index
                .is_segment_free(&self.nodes[*i].pos, &new, &self.half)
        }) else {
            self.scratch = neigh;
            return;
        };
        let id = self.nodes.len();
        self.nodes.push(Node {
            pos: new,
            parent,
            cost,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        self.buckets.insert(&new, id);
        if self.buckets.map.len() * BUCKET_LOAD < self.nodes.len()
            && self.buckets.cell * 0.5 >= self.radius().max(MIN_BUCKET)
        {
            self.buckets = Buckets::build(&self.nodes, self.buckets.cell * 0.5);
        }
        self.note_goal(id);

        for &j in &neigh {
            if j == parent || j == 0 {
                continue;
            }
            let via = cost + (self.nodes[j].pos - new).norm();
            if via + 1e-12 >= self.nodes[j].cost {
                continue;
            }
            if !self
                .index
                .is_segment_free(&new, &self.nodes[j].pos, &self.half)
            {
                continue;
            }
            let old = self.nodes[j].parent;
            self.nodes[old].children.retain(|&c| c != j);
            self.nodes[j].parent = id;
            self.nodes[id].children.push(j);
            let delta = self.nodes[j].cost - via;
            self.propagate(j, delta);
        }
        self.scratch = neigh;
    }

    pub fn run(&mut self, iterations: usize) {
        for _ in 0..iterations {
            self.step();
        }
    }

    fn best_goal_node(&self) -> Option<(usize, f64)> {
        self.goal_nodes
            .iter()
            .map(|&i| {
                (
                    i,
                    self.nodes[i].cost + (self.nodes[i].pos - self.goal).norm(),
                )
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// Cost of the best goal-reaching branch, counting the final hop to the
    /// exact goal.
    pub fn best_cost(&self) -> Option<f64> {
        self.best_goal_node().map(|(_, c)| c)
    }

    pub fn path(&self) -> Option<Path> {
        let (mut i, _) = self.best_goal_node()?;
        let mut rev = vec![self.nodes[i].pos];
        while i != 0 {
            i = self.nodes[i].parent;
            rev.push(self.nodes[i].pos);
        }
        rev.reverse();
        let last = *rev.last().expect("nonempty");
        if (last - self.goal).norm() > 1e-9
            && self.index.is_segment_free(&last, &self.goal, &self.half)
        {
            rev.push(self.goal);
        }
        Some(Path::new(rev))
    }
}

/// Builds the collision index for `grid` per `params` (unknown policy and
/// start clearance).
pub fn planning_index(
    grid: &VoxelGrid,
    start: &Vec3,
    half_extents: &Vec3,
    params: &PlannerParams,
) -> CollisionIndex {
    let clear = (params.start_clearance > 0.0).then(|| {
        Aabb::from_center_half_extents(*start, half_extents + Vec3::repeat(params.start_clearance))
    });
    CollisionIndex::with_clearing(grid, params.unknown_as, clear)
}

pub fn plan_path(
    grid: &VoxelGrid,
    start: Vec3,
    goal: Vec3,
    half_extents: Vec3,
    params: &PlannerParams,
) -> Result<Path, PlanError> {
    params.validate()?;
    let index = planning_index(grid, &start, &half_extents, params);
    plan_with_index(&index, grid.bounds(), start, goal, half_extents, params)
}

pub fn plan_with_index(
    index: &CollisionIndex,
    bounds: Aabb,
    start: Vec3,
    goal: Vec3,
    half_extents: Vec3,
    params: &PlannerParams,
) -> Result<Path, PlanError> {
    let mut rrt = RrtStar::new(index, bounds, start, goal, half_extents, *params)?;
    rrt.run(params.max_iterations);
    rrt.path().ok_or(PlanError::NoPath {
        iterations: params.max_iterations,
    })
}

/// Random shortcutting against `grid` with unknown space treated as occupied.
pub fn simplify_path(
    grid: &VoxelGrid,
    path: &Path,
    half_extents: &Vec3,
    seed: u64,
    attempts: usize,
) -> Path {
    let index = CollisionIndex::new(grid, UnknownAs::Occupied);
    simplify_with_index(&index, path, half_extents, seed, attempts)
}

pub fn simplify_with_index(
    index: &CollisionIndex,
    path: &Path,
    half_extents: &Vec3,
    seed: u64,
    attempts: usize,
) -> Path {
    let mut w = path.waypoints.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..attempts {
        if w.len() < 3 {
            break;
        }
        let i = rng.random_range(0..w.len() - 2);
        let j = rng.random_range(i + 2..w.len());
        if index.is_segment_free(&w[i], &w[j], half_extents) {
            w.drain(i + 1..j);
        }
    }
    Path::new(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::Cell;
    use std::collections::VecDeque;

    const HALF: Vec3 = Vec3::new(0.35, 0.35, 0.15);

    fn fill(g: &mut VoxelGrid, c: Cell) {
        let [nx, ny, nz] = g.dims();
        for z in 0..nz as i64 {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    g.set([x, y, z], c);
                }
            }
        }
    }

    fn block(g: &mut VoxelGrid, b: &Aabb, c: Cell) {
        let (lo, hi) = g.overlap_range(b);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    if g.in_grid([x, y, z]) {
                        g.set([x, y, z], c);
                    }
                }
            }
        }
    }

    /// Hallway-sized empty map with the start at (0,0,1) in local terms.
    fn open_map() -> (VoxelGrid, Vec3) {
        let mut g = VoxelGrid::new(Vec3::new(-1.0, -1.5, 0.0), [100, 30, 20], 0.1);
        fill(&mut g, Cell::Free);
        (g, Vec3::zeros())
    }

    #[test]
    fn empty_map_straight_run() {
        let (g, _) = open_map();
        let mut worst: f64 = 0.0;
        for seed in 0..50 {
            let params = PlannerParams {
                seed,
                ..Default::default()
            };
            let p = plan_path(
                &g,
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(8.0, 0.0, 1.0),
                HALF,
                &params,
            )
            .unwrap();
            assert_eq!(p.waypoints[0], Vec3::new(0.0, 0.0, 1.0));
            assert!((p.end().unwrap() - Vec3::new(8.0, 0.0, 1.0)).norm() <= 0.15);
            assert!(
                p.length >= 8.0 - 1e-9 && p.length <= 9.6,
                "seed {seed}: {}",
                p.length
            );
            worst = worst.max(p.length);
        }
        println!("worst empty-map path length over 50 seeds: {worst:.4}");
    }

    #[test]
    fn occupied_goal_fails() {
        let (mut g, _) = open_map();
        block(
            &mut g,
            &Aabb::new(Vec3::new(6.5, -1.0, 0.3), Vec3::new(7.5, 1.0, 1.7)),
            Cell::Occupied,
        );
        let params = PlannerParams {
            max_iterations: 1500,
            ..Default::default()
        };
        let r = plan_path(
            &g,
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(7.0, 0.0, 1.0),
            HALF,
            &params,
        );
        assert_eq!(r, Err(PlanError::NoPath { iterations: 1500 }));
    }

    #[test]
    fn start_in_collision_is_distinct() {
        let (mut g, _) = open_map();
        block(
            &mut g,
            &Aabb::new(Vec3::new(-0.2, -0.2, 0.8), Vec3::new(0.2, 0.2, 1.2)),
            Cell::Occupied,
        );
        let r = plan_path(
            &g,
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(5.0, 0.0, 1.0),
            HALF,
            &PlannerParams::default(),
        );
        assert_eq!(r, Err(PlanError::StartInCollision));
    }

    #[test]
    fn unknown_start_needs_clearance() {
        let mut g = VoxelGrid::new(Vec3::new(-1.0, -1.5, 0.0), [100, 30, 20], 0.1);
        block(
            &mut g,
            &Aabb::new(Vec3::new(0.6, -1.5, 0.0), Vec3::new(9.0, 1.5, 2.0)),
            Cell::Free,
        );
        let start = Vec3::new(0.0, 0.0, 1.0);
        let goal = Vec3::new(4.0, 0.0, 1.0);
        let strict = PlannerParams::default();
        assert_eq!(
            plan_path(&g, start, goal, HALF, &strict),
            Err(PlanError::StartInCollision)
        );
        let relaxed = PlannerParams {
            start_clearance: 0.5,
            ..Default::default()
        };
        assert!(plan_path(&g, start, goal, HALF, &relaxed).is_ok());
    }

    /// 6-connected BFS over voxels whose centered cuboid is free.
    fn bfs_connected(
        index: &CollisionIndex,
        g: &VoxelGrid,
        half: &Vec3,
        a: [i64; 3],
        b: [i64; 3],
    ) -> Option<Vec<[i64; 3]>> {
        let ok = |v: [i64; 3]| g.in_grid(v) && index.is_free(&g.voxel_center(v), half);
        if !ok(a) || !ok(b) {
            return None;
        }
        let mut prev: HashMap<[i64; 3], [i64; 3]> = HashMap::new();
        prev.insert(a, a);
        let mut q = VecDeque::from([a]);
        while let Some(v) = q.pop_front() {
            if v == b {
                let mut out = vec![b];
                let mut c = b;
                while c != a {
                    c = prev[&c];
                    out.push(c);
                }
                return Some(out);
            }
            for (ax, s) in [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)] {
                let mut n = v;
                n[ax] += s;
                if ok(n) && !prev.contains_key(&n) {
                    prev.insert(n, v);
                    q.push_back(n);
                }
            }
        }
        None
    }

    #[test]
    fn gap_in_wall_is_found() {
        let (mut g, _) = open_map();
        // wall across the hallway at x in [3.0, 3.2] with a 1.2 m wide gap in y
        block(
            &mut g,
            &Aabb::new(Vec3::new(3.0, -1.5, 0.0), Vec3::new(3.2, -0.6, 2.0)),
            Cell::Occupied,
        );
        block(
            &mut g,
            &Aabb::new(Vec3::new(3.0, 0.6, 0.0), Vec3::new(3.2, 1.5, 2.0)),
            Cell::Occupied,
        );
        let index = CollisionIndex::new(&g, UnknownAs::Occupied);
        let start = Vec3::new(0.05, -0.95, 1.05);
        let goal = Vec3::new(6.05, 0.95, 1.05);
        assert!(bfs_connected(&index, &g, &HALF, g.voxel_of(&start), g.voxel_of(&goal)).is_some());
        let p = plan_path(&g, start, goal, HALF, &PlannerParams::default()).unwrap();
        assert!(p.is_collision_free(&index, &HALF));
        let mut crossed = false;
        for w in p.waypoints.windows(2) {
            let n = ((w[1] - w[0]).norm() / 0.01).ceil() as usize;
            for k in 0..=n {
                let q = w[0].lerp(&w[1], k as f64 / n.max(1) as f64);
                if (3.0 - HALF.x..=3.2 + HALF.x).contains(&q.x) {
                    assert!(
                        q.y.abs() + HALF.y <= 0.6 + 1e-9,
                        "{q:?} outside the gap corridor"
                    );
                    crossed = true;
                }
            }
        }
        assert!(crossed);
    }

    #[test]
    fn returned_path_reaches_goal_tolerance() {
        let (g, _) = open_map();
        let params = PlannerParams {
            goal_tolerance: 0.15,
            ..Default::default()
        };
        let goal = Vec3::new(5.0, 0.5, 1.2);
        let p = plan_path(&g, Vec3::new(0.0, 0.0, 1.0), goal, HALF, &params).unwrap();
        for w in p.waypoints.windows(2) {
            assert!((w[1] - w[0]).norm() > 1e-9);
        }
        let sum: f64 = p.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        assert!((sum - p.length).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (g, _) = open_map();
        let params = PlannerParams {
            seed: 7,
            max_iterations: 2000,
            ..Default::default()
        };
        let a = plan_path(
            &g,
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(6.0, 1.0, 0.5),
            HALF,
            &params,
        )
        .unwrap();
        let b = plan_path(
            &g,
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(6.0, 1.0, 0.5),
            HALF,
            &params,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_runs_match_single_run() {
        let (g, _) = open_map();
        let index = CollisionIndex::new(&g, UnknownAs::Occupied);
        let params = PlannerParams {
            seed: 3,
            ..Default::default()
        };
        let (s, e) = (Vec3::new(0.0, 0.0, 1.0), Vec3::new(7.0, -0.5, 1.0));
        let mut a = RrtStar::new(&index, g.bounds(), s, e, HALF, params).unwrap();
        a.run(1200);
        let mut b = RrtStar::new(&index, g.bounds(), s, e, HALF, params).unwrap();
        b.run(500);
        b.run(700);
        assert_eq!(a.path(), b.path());
    }

    /// Brute-force reference queries for the bucket grid.
    #[test]
    fn buckets_agree_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut nodes = Vec::new();
        let mut buckets = Buckets {
            cell: 0.7,
            map: HashMap::new(),
        };
        for i in 0..400 {
            let p = Vec3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..2.0),
            );
            buckets.insert(&p, i);
            nodes.push(Node {
                pos: p,
                parent: 0,
                cost: 0.0,
                children: Vec::new(),
            });
        }
        let mut out = Vec::new();
        for _ in 0..300 {
            let q = Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-1.0..3.0),
            );
            let lin = (0..nodes.len())
                .min_by(|&a, &b| {
                    (nodes[a].pos - q)
                        .norm()
                        .total_cmp(&(nodes[b].pos - q).norm())
                })
                .unwrap();
            assert_eq!(buckets.nearest(&nodes, &q), lin);
            let r = rng.random_range(0.1..1.5);
            buckets.within(&nodes, &q, r, &mut out);
            let lin: Vec<usize> = (0..nodes.len())
                .filter(|&i| (nodes[i].pos - q).norm() <= r)
                .collect();
            assert_eq!(out, lin);
        }
    }

    #[test]
    fn simplify_collinear() {
        let (g, _) = open_map();
        let p = Path::new(vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(2.0, 0.0, 1.0),
        ]);
        let s = simplify_path(&g, &p, &HALF, 0, 10);
        assert_eq!(s.waypoints.len(), 2);
        assert!((s.length - p.length).abs() < 1e-12);
        assert_eq!(simplify_path(&g, &p, &HALF, 0, 0), p);
    }

    #[test]
    fn simplify_detour() {
        let (g, _) = open_map();
        let p = Path::new(vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(2.0, 0.0, 1.0),
            Vec3::new(2.0, 1.0, 1.0),
        ]);
        let s = simplify_path(&g, &p, &Vec3::new(0.1, 0.1, 0.1), 0, 5);
        assert!(s.length < p.length);
        assert_eq!(s.start(), p.start());
        assert_eq!(s.end(), p.end());
    }

    #[test]
    fn params_validation() {
        for p in [
            PlannerParams {
                step_size: 0.0,
                ..Default::default()
            },
            PlannerParams {
                goal_bias: 1.5,
                ..Default::default()
            },
            PlannerParams {
                max_iterations: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(p.validate(), Err(PlanError::InvalidParams(_))));
        }
    }

    pub(crate) struct RandomMap {
        pub grid: VoxelGrid,
        pub start: Vec3,
        pub goal: Vec3,
    }

    /// 20 x 20 x 5 voxel map: a wall across x with 0 to 2 square holes plus
    /// a few random blocks; start and goal on opposite sides.
    pub(crate) fn random_map(seed: u64) -> RandomMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res = 0.1;
        let mut g = VoxelGrid::new(Vec3::zeros(), [20, 20, 5], res);
        fill(&mut g, Cell::Free);
        let wx = rng.random_range(8..12);
        for y in 0..20 {
            for z in 0..5 {
                g.set([wx, y, z], Cell::Occupied);
            }
        }
        for _ in 0..rng.random_range(0..=2) {
            let s = rng.random_range(2..=3);
            let y0 = rng.random_range(0..=20 - s);
            let z0 = rng.random_range(0..=5 - s);
            for y in y0..y0 + s {
                for z in z0..z0 + s {
                    g.set([wx, y as i64, z as i64], Cell::Free);
                }
            }
        }
        for _ in 0..rng.random_range(0..6) {
            let v = [
                rng.random_range(0..20),
                rng.random_range(0..20),
                rng.random_range(0..5),
            ];
            g.set(v, Cell::Occupied);
        }
        let pick = |rng: &mut ChaCha8Rng, xs: std::ops::Range<i64>| loop {
            let v = [
                rng.random_range(xs.clone()),
                rng.random_range(0..20),
                rng.random_range(0..5),
            ];
            if g.get(v) == Cell::Free {
                break g.voxel_center(v);
            }
        };
        let start = pick(&mut rng, 0..wx);
        let goal = pick(&mut rng, wx + 1..20);
        RandomMap {
            grid: g,
            start,
            goal,
        }
    }

    pub(crate) const SMALL: Vec3 = Vec3::new(0.04, 0.04, 0.04);

    #[test]
    fn oracle_equivalence_on_random_maps() {
        let (mut connected, mut found) = (0, 0);
        for seed in 0..50u64 {
            let m = random_map(seed);
            let index = CollisionIndex::new(&m.grid, UnknownAs::Occupied);
            let reach = bfs_connected(
                &index,
                &m.grid,
                &SMALL,
                m.grid.voxel_of(&m.start),
                m.grid.voxel_of(&m.goal),
            );
            let params = PlannerParams {
                max_iterations: 20_000,
                seed,
                ..Default::default()
            };
            let r = plan_path(&m.grid, m.start, m.goal, SMALL, &params);
            if let Ok(p) = &r {
                assert!(p.is_collision_free(&index, &SMALL));
            }
            match reach {
                Some(_) => {
                    connected += 1;
                    found += usize::from(r.is_ok());
                }
                None => assert!(
                    r.is_err(),
                    "map {seed}: planner succeeded through a disconnected map"
                ),
            }
        }
        println!("planner succeeded on {found} of {connected} connected maps");
        assert!(connected > 0);
        assert!(found * 100 >= connected * 95, "{found}/{connected}");
    }

    #[test]
    fn anytime_cost_is_non_increasing() {
        for seed in 0..20u64 {
            let m = random_map(1000 + seed);
            let index = CollisionIndex::new(&m.grid, UnknownAs::Occupied);
            let params = PlannerParams {
                seed,
                ..Default::default()
            };
            let mut rrt =
                RrtStar::new(&index, m.grid.bounds(), m.start, m.goal, SMALL, params).unwrap();
            let mut last = f64::INFINITY;
            for n in [500, 1000, 2000] {
                rrt.run(n - rrt.iterations());
                if let Some(c) = rrt.best_cost() {
                    assert!(c <= last + 1e-12, "seed {seed} at {n}: {c} > {last}");
                    last = c;
                }
            }
        }
    }
}
