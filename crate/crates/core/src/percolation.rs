//! Clusters of the occupied graph and the finite-size threshold proxy.
//!
//! Every trajectory carries an independent uniform level in [0, u_max]; keeping
//! those with level ≤ u is the thinning of the u_max cloud down to u. Per
//! replica we compute the smallest u at which the origin connects to ∂B(0, L),
//! so the crossing indicator at every u ≤ u_max comes from the same randomness
//! and is monotone on each replica.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fri::{occupied_graph, sample_hitting_avoiding, sample_window, HittingOptions, OccupiedGraph};
use crate::lattice_core::{canonical_cmp, sorted_points, Dim, LatticeBox, Point, PointMap, PointSet, Trajectory};
use crate::length_law::{reference_intensity, LengthDistribution};
use crate::rng::RngStream;

/// Disjoint-set forest keyed by points, inserted on first use.
#[derive(Default)]
struct Dsu {
    index: PointMap<usize>,
    points: Vec<Point>,
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl Dsu {
    fn id(&mut self, p: Point) -> usize {
        if let Some(&i) = self.index.get(&p) {
            return i;
        }
        let i = self.points.len();
        self.index.insert(p, i);
        self.points.push(p);
        self.parent.push(i);
        self.rank.push(0);
        i
    }

    fn root(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Returns (new root, absorbed root) when the sets were distinct.
    fn union(&mut self, a: usize, b: usize) -> Option<(usize, usize)> {
        let (ra, rb) = (self.root(a), self.root(b));
        if ra == rb {
            return None;
        }
        let (hi, lo) = if self.rank[ra] >= self.rank[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[lo] = hi;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        Some((hi, lo))
    }
}

/// Connected components of an occupied graph, labelled by their least point.
#[derive(Clone, Debug)]
pub struct ClusterIndex {
    index: PointMap<usize>,
    points: Vec<Point>,
    /// Index of the least (canonical order) point of each vertex's component.
    label: Vec<usize>,
    size: Vec<usize>,
}

impl ClusterIndex {
    /// Representative of p's cluster; a vertex outside the graph is its own cluster.
    pub fn find(&self, p: &Point) -> Point {
        match self.index.get(p) {
            Some(&i) => self.points[self.label[i]],
            None => *p,
        }
    }

    pub fn connected(&self, a: &Point, b: &Point) -> bool {
        self.find(a) == self.find(b)
    }

    pub fn cluster_size(&self, p: &Point) -> usize {
        self.index.get(p).map_or(1, |&i| self.size[self.label[i]])
    }

    pub fn vertex_count(&self) -> usize {
        self.points.len()
    }

    /// Components as sorted point lists, ordered by representative.
    pub fn components(&self) -> Vec<Vec<Point>> {
        let mut by: std::collections::BTreeMap<usize, Vec<Point>> = Default::default();
        for (i, p) in self.points.iter().enumerate() {
            by.entry(self.label[i]).or_default().push(*p);
        }
        let mut out: Vec<Vec<Point>> = by.into_values().collect();
        for c in &mut out {
            c.sort_by(canonical_cmp);
        }
        out.sort_by(|a, b| canonical_cmp(&a[0], &b[0]));
        out
    }

    pub fn cluster_of(&self, p: &Point) -> Vec<Point> {
        let r = self.find(p);
        let mut v: Vec<Point> = self.points.iter().filter(|q| self.find(q) == r).copied().collect();
        if v.is_empty() {
            v.push(*p);
        }
        v.sort_by(canonical_cmp);
        v
    }
}

pub fn build_clusters(graph: &OccupiedGraph) -> ClusterIndex {
    clusters_from_edges(sorted_points(&graph.vertices), graph.sorted_edges().iter().map(|e| (e.lo, e.hi())))
}

/// Components of the graph on `vertices` with the given edges (endpoints are added).
pub fn clusters_from_edges(vertices: Vec<Point>, edges: impl IntoIterator<Item = (Point, Point)>) -> ClusterIndex {
    let mut dsu = Dsu::default();
    for p in vertices {
        dsu.id(p);
    }
    for (a, b) in edges {
        let (i, j) = (dsu.id(a), dsu.id(b));
        dsu.union(i, j);
    }
    let n = dsu.points.len();
    let roots: Vec<usize> = (0..n).map(|i| dsu.root(i)).collect();
    let mut least: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let r = roots[i];
        if canonical_cmp(&dsu.points[i], &dsu.points[least[r]]).is_lt() {
            least[r] = i;
        }
    }
    let label: Vec<usize> = roots.iter().map(|&r| least[r]).collect();
    let mut size = vec![0usize; n];
    for &l in &label {
        size[l] += 1;
    }
    ClusterIndex { index: dsu.index, points: dsu.points, label, size }
}

#[derive(Clone, Debug)]
pub struct InvasionConfig {
    /// Abort once the explored vertex set exceeds this.
    pub max_vertices: usize,
    pub hitting: HittingOptions,
}

impl Default for InvasionConfig {
    fn default() -> Self {
        InvasionConfig { max_vertices: 50_000_000, hitting: HittingOptions::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrossingLevel {
    /// Least level at which 0 ↔ ∂B(0, L); None when no crossing at u_max.
    pub level: Option<f64>,
    pub vertices: usize,
    pub trajectories: usize,
}

fn check_box(l: i64) -> Result<()> {
    if l < 8 {
        return invalid("box radius L must be ≥ 8");
    }
    Ok(())
}

fn max_norm(t: &Trajectory) -> i64 {
    t.points().map(|p| p.norm_inf()).max().unwrap_or(0)
}

/// Invasion of the origin's cluster in B(0, L), cheapest trajectory first.
///
/// Trajectories meeting the explored set are sampled with the rerooted law
/// restricted to avoid everything explored before, so each one is drawn once.
/// The running maximum of invaded levels when a trajectory first reaches
/// norm L is the minimax crossing level.
pub fn crossing_level(
    u_max: f64,
    rho: &LengthDistribution,
    d: Dim,
    l: i64,
    cfg: &InvasionConfig,
    stream: RngStream,
) -> Result<CrossingLevel> {
    check_box(l)?;
    let mut explored: PointSet = PointSet::default();
    let mut pool: Vec<Trajectory> = Vec::new();
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut calls = 0u64;
    let mut add = |new: &PointSet, explored: &PointSet, pool: &mut Vec<Trajectory>, heap: &mut BinaryHeap<_>| -> Result<()> {
        let s = sample_hitting_avoiding(u_max, rho, new, explored, &cfg.hitting, stream.child_str("hit").child(calls))?
            .into_cloud()?;
        let mut rng = stream.child_str("levels").child(calls).into_rng();
        calls += 1;
        for t in s.trajectories() {
            let level: f64 = rng.random::<f64>() * u_max;
            heap.push(Reverse((level.to_bits(), pool.len())));
            pool.push(t.clone());
        }
        Ok(())
    };
    let start: PointSet = [Point::origin(d)].into_iter().collect();
    add(&start, &explored, &mut pool, &mut heap)?;
    explored.extend(start);
    let mut current = 0.0f64;
    let mut invaded = 0usize;
    while let Some(Reverse((bits, i))) = heap.pop() {
        current = current.max(f64::from_bits(bits));
        invaded += 1;
        let t = &pool[i];
        if max_norm(t) >= l {
            return Ok(CrossingLevel { level: Some(current), vertices: explored.len(), trajectories: invaded });
        }
        let new: PointSet = t.points().filter(|p| !explored.contains(p)).collect();
        if new.is_empty() {
            continue;
        }
        let t_new = new.clone();
        add(&t_new, &explored, &mut pool, &mut heap)?;
        explored.extend(new);
        if explored.len() > cfg.max_vertices {
            return Err(Error::Budget(format!("invasion explored more than {} vertices", cfg.max_vertices)));
        }
    }
    Ok(CrossingLevel { level: None, vertices: explored.len(), trajectories: invaded })
}

/// The same minimax level computed from a window cloud on B(0, L + margin),
/// adding trajectories in level order to a union-find restricted to B(0, L).
pub fn crossing_level_window(
    u_max: f64,
    rho: &LengthDistribution,
    d: Dim,
    l: i64,
    margin: u32,
    stream: RngStream,
) -> Result<Option<f64>> {
    check_box(l)?;
    let w = LatticeBox::centered(Point::origin(d), l as u32 + margin);
    let cloud = sample_window(u_max, rho, &w, stream.child_str("cloud"))?;
    let mut rng = stream.child_str("levels").into_rng();
    let mut items: Vec<(f64, &Trajectory)> = cloud.trajectories().map(|t| (rng.random::<f64>() * u_max, t)).collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let inside = LatticeBox::centered(Point::origin(d), l as u32);
    let mut dsu = Dsu::default();
    let o = dsu.id(Point::origin(d));
    let mut touches: Vec<bool> = vec![false];
    for (level, t) in items {
        let pts: Vec<Point> = t.points().collect();
        for w2 in pts.windows(2) {
            if !(inside.contains(&w2[0]) && inside.contains(&w2[1])) {
                continue;
            }
            let (i, j) = (dsu.id(w2[0]), dsu.id(w2[1]));
            touches.resize(dsu.points.len(), false);
            for (k, p) in [(i, w2[0]), (j, w2[1])] {
                if p.norm_inf() == l {
                    let r = dsu.root(k);
                    touches[r] = true;
                }
            }
            let (ri, rj) = (dsu.root(i), dsu.root(j));
            let flag = touches[ri] || touches[rj];
            if let Some((hi, _)) = dsu.union(i, j) {
                touches[hi] = flag;
            }
        }
        let r = dsu.root(o);
        if touches[r] {
            return Ok(Some(level));
        }
    }
    Ok(None)
}

/// Crossing levels of independent replicas at intensity u_max.
pub fn crossing_levels(
    u_max: f64,
    rho: &LengthDistribution,
    d: Dim,
    l: i64,
    replicas: usize,
    cfg: &InvasionConfig,
    stream: &RngStream,
) -> Result<Vec<CrossingLevel>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| crossing_level(u_max, rho, d, l, cfg, stream.child_str("replica").child(r as u64)))
        .collect()
}

/// Fraction of crossing levels at or below u.
pub fn proxy_at(levels: &[CrossingLevel], u: f64) -> f64 {
    if levels.is_empty() {
        return 0.0;
    }
    levels.iter().filter(|c| c.level.is_some_and(|x| x <= u)).count() as f64 / levels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProxyEstimate {
    pub u: f64,
    pub p: f64,
    pub stderr: f64,
    pub replicas: usize,
}

/// P[0 ↔ ∂B(0, L)] at intensity u, estimated over independent replicas.
pub fn crossing_proxy(
    u: f64,
    rho: &LengthDistribution,
    d: Dim,
    l: i64,
    replicas: usize,
    stream: RngStream,
) -> Result<ProxyEstimate> {
    if replicas == 0 {
        return invalid("replicas must be ≥ 1");
    }
    let levels = crossing_levels(u, rho, d, l, replicas, &InvasionConfig::default(), &stream)?;
    let p = proxy_at(&levels, u);
    Ok(ProxyEstimate { u, p, stderr: (p * (1.0 - p) / replicas as f64).sqrt(), replicas })
}

#[derive(Clone, Debug)]
pub struct ThresholdConfig {
    pub eps_d: f64,
    /// Stop once (u_hi − u_lo)/u_hi falls below this.
    pub rel_width: f64,
    pub max_doublings: u32,
    pub invasion: InvasionConfig,
}

impl ThresholdConfig {
    pub fn new(eps_d: f64) -> Self {
        ThresholdConfig { eps_d, rel_width: 0.05, max_doublings: 20, invasion: InvasionConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThresholdEstimate {
    pub u_hat: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub target: f64,
    pub l: i64,
    pub replicas: usize,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterateRow {
    pub iterate: usize,
    pub phase: &'static str,
    pub u: f64,
    pub proxy: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub l: i64,
    pub replicas: usize,
}

#[derive(Clone, Debug)]
pub struct ThresholdRun {
    pub estimate: ThresholdEstimate,
    pub iterates: Vec<IterateRow>,
    pub levels: Vec<CrossingLevel>,
}

/// Spread of the p*-quantile from the order statistics one binomial sd either side.
fn quantile_stderr(levels: &[CrossingLevel], target: f64) -> f64 {
    let n = levels.len();
    let mut xs: Vec<f64> = levels.iter().map(|c| c.level.unwrap_or(f64::INFINITY)).collect();
    xs.sort_by(f64::total_cmp);
    let np = n as f64 * target;
    let sd = (n as f64 * target * (1.0 - target)).sqrt();
    let at = |k: f64| xs[(k.round().max(0.0) as usize).min(n - 1)];
    (at(np + sd) - at(np - sd)) / 2.0
}

/// Doubling from the reference intensity to bracket p*, then bisection on the
/// crossing levels of the final replica set.
pub fn estimate_threshold(
    rho: &LengthDistribution,
    d: Dim,
    l: i64,
    replicas: usize,
    target: f64,
    cfg: &ThresholdConfig,
    stream: RngStream,
) -> Result<ThresholdRun> {
    check_box(l)?;
    if replicas == 0 {
        return invalid("replicas must be ≥ 1");
    }
    if !(0.0..1.0).contains(&target) {
        return invalid("target level must lie in [0, 1)");
    }
    if !(cfg.rel_width > 0.0 && cfg.rel_width < 1.0) {
        return invalid("relative bracket width must lie in (0, 1)");
    }
    let row = |iterate, phase, u, proxy, u_lo, u_hi| IterateRow { iterate, phase, u, proxy, u_lo, u_hi, l, replicas };
    if target == 0.0 {
        let estimate = ThresholdEstimate { u_hat: 0.0, u_lo: 0.0, u_hi: 0.0, target, l, replicas, stderr: 0.0 };
        return Ok(ThresholdRun { estimate, iterates: vec![row(0, "degenerate", 0.0, 0.0, 0.0, 0.0)], levels: vec![] });
    }
    let mut iterates = Vec::new();
    let mut u = reference_intensity(rho, d, cfg.eps_d)?;
    let mut found = None;
    for k in 0..=cfg.max_doublings {
        let levels = crossing_levels(u, rho, d, l, replicas, &cfg.invasion, &stream.child_str("double").child(k as u64))?;
        let p = proxy_at(&levels, u);
        iterates.push(row(iterates.len(), "double", u, p, 0.0, u));
        if p >= target {
            found = Some(levels);
            break;
        }
        u *= 2.0;
    }
    let Some(levels) = found else {
        return Err(Error::Budget(format!("no bracket for p* = {target} within {} doublings", cfg.max_doublings)));
    };
    let mut hi = u;
    let mut lo = if proxy_at(&levels, u / 2.0) < target { u / 2.0 } else { 0.0 };
    while (hi - lo) / hi >= cfg.rel_width {
        let mid = 0.5 * (lo + hi);
        let p = proxy_at(&levels, mid);
        if p >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        iterates.push(row(iterates.len(), "bisect", mid, p, lo, hi));
    }
    let estimate = ThresholdEstimate {
        u_hat: 0.5 * (lo + hi),
        u_lo: lo,
        u_hi: hi,
        target,
        l,
        replicas,
        stderr: quantile_stderr(&levels, target),
    };
    Ok(ThresholdRun { estimate, iterates, levels })
}

pub fn write_iterates<W: Write>(w: W, rows: &[IterateRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Build the occupied graph of a window cloud and its cluster index in one go.
pub fn window_clusters(
    u: f64,
    rho: &LengthDistribution,
    window: &LatticeBox,
    stream: RngStream,
) -> Result<(OccupiedGraph, ClusterIndex)> {
    let cloud = sample_window(u, rho, window, stream)?;
    let g = occupied_graph(&cloud, window);
    let c = build_clusters(&g);
    Ok((g, c))
}

#[cfg(test)]
mod tests;
