//! FRI trajectory clouds: the per-vertex window sampler, the rerooted sampler
//! for trajectories hitting a finite set, restriction operators and the
//! occupied-edge graph.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice_core::{
    concatenate, hitting_time, sample_srw_with, sorted_points, LatticeBox, Point, PointMap, PointSet, Trajectory,
    TrajectoryRecord,
};
use crate::length_law::{Bias, LengthDistribution};
use crate::potential::{point_label, rho_equilibrium, PotentialConfig};
use crate::rng::RngStream;

/// Attempts allowed when conditioning a backward path to avoid A.
pub const REJECTION_BUDGET: usize = 10_000;

/// Vertices per RNG block in the window sampler.
const WINDOW_BLOCK: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// Started at `origin` in the window construction.
    Window { origin: Point },
    /// First hit the target set at `hit` after `m` steps, then ran `l` more.
    Rerooted { hit: Point, m: u64, l: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CloudEntry {
    pub traj: Trajectory,
    pub mult: u64,
    pub tag: Provenance,
}

/// (length, start, steps) order on paths, then the tag.
pub fn canonical_traj_cmp(a: &Trajectory, b: &Trajectory) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.start().cmp(&b.start())).then_with(|| a.steps().cmp(b.steps()))
}

fn entry_cmp(a: &CloudEntry, b: &CloudEntry) -> Ordering {
    canonical_traj_cmp(&a.traj, &b.traj).then_with(|| a.tag.cmp(&b.tag))
}

/// A finite point measure on paths, stored as a multiset in canonical order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrajectoryCloud {
    entries: Vec<CloudEntry>,
}

impl TrajectoryCloud {
    pub fn new() -> Self {
        TrajectoryCloud::default()
    }

    pub fn from_entries(mut entries: Vec<CloudEntry>) -> Self {
        entries.retain(|e| e.mult > 0);
        entries.sort_by(entry_cmp);
        let mut out: Vec<CloudEntry> = Vec::with_capacity(entries.len());
        for e in entries {
            match out.last_mut() {
                Some(last) if last.traj == e.traj && last.tag == e.tag => last.mult += e.mult,
                _ => out.push(e),
            }
        }
        TrajectoryCloud { entries: out }
    }

    pub fn from_trajectories(items: impl IntoIterator<Item = (Trajectory, Provenance)>) -> Self {
        TrajectoryCloud::from_entries(items.into_iter().map(|(traj, tag)| CloudEntry { traj, mult: 1, tag }).collect())
    }

    pub fn entries(&self) -> &[CloudEntry] {
        &self.entries
    }

    /// |𝒮| = Σ multiplicities.
    pub fn len(&self) -> u64 {
        self.entries.iter().map(|e| e.mult).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every trajectory, repeated according to its multiplicity.
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter().flat_map(|e| std::iter::repeat_n(&e.traj, e.mult as usize))
    }

    pub fn union(&self, other: &TrajectoryCloud) -> TrajectoryCloud {
        TrajectoryCloud::from_entries(self.entries.iter().chain(&other.entries).cloned().collect())
    }

    /// Multiplicity of a path, summed over tags.
    pub fn multiplicity(&self, t: &Trajectory) -> u64 {
        self.entries.iter().filter(|e| &e.traj == t).map(|e| e.mult).sum()
    }

    fn path_counts(&self) -> Vec<(&Trajectory, u64)> {
        let mut v: Vec<(&Trajectory, u64)> = Vec::new();
        let mut order: Vec<&CloudEntry> = self.entries.iter().collect();
        order.sort_by(|a, b| canonical_traj_cmp(&a.traj, &b.traj));
        for e in order {
            match v.last_mut() {
                Some(last) if last.0 == &e.traj => last.1 += e.mult,
                _ => v.push((&e.traj, e.mult)),
            }
        }
        v
    }

    /// Multiset difference on paths (tags ignored); copies are removed from the
    /// first matching entries in canonical order.
    pub fn difference(&self, other: &TrajectoryCloud) -> TrajectoryCloud {
        let mut remove: std::collections::HashMap<&Trajectory, u64> = other.path_counts().into_iter().collect();
        let mut out = Vec::new();
        for e in &self.entries {
            let r = remove.get_mut(&e.traj).map(|r| {
                let k = (*r).min(e.mult);
                *r -= k;
                k
            });
            let keep = e.mult - r.unwrap_or(0);
            if keep > 0 {
                out.push(CloudEntry { mult: keep, ..e.clone() });
            }
        }
        TrajectoryCloud { entries: out }
    }

    /// Sub-multiset test on paths (tags ignored).
    pub fn is_submultiset_of(&self, other: &TrajectoryCloud) -> bool {
        let theirs: std::collections::HashMap<&Trajectory, u64> = other.path_counts().into_iter().collect();
        self.path_counts().iter().all(|(t, k)| theirs.get(t).is_some_and(|m| m >= k))
    }

    /// V(ω): union of the ranges.
    pub fn vertex_set(&self) -> PointSet {
        let mut out = PointSet::default();
        for e in &self.entries {
            out.extend(e.traj.points());
        }
        out
    }

    pub fn filter(&self, mut keep: impl FnMut(&CloudEntry) -> bool) -> TrajectoryCloud {
        TrajectoryCloud { entries: self.entries.iter().filter(|e| keep(e)).cloned().collect() }
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            let rec = EntryRecord { traj: TrajectoryRecord::from(&e.traj), mult: e.mult, provenance: e.tag };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<TrajectoryCloud> {
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EntryRecord = serde_json::from_str(&line)?;
            if rec.mult == 0 {
                return invalid("multiplicity must be ≥ 1");
            }
            entries.push(CloudEntry { traj: rec.traj.try_into()?, mult: rec.mult, tag: rec.provenance });
        }
        Ok(TrajectoryCloud::from_entries(entries))
    }
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    traj: TrajectoryRecord,
    mult: u64,
    provenance: Provenance,
}

pub fn meets(t: &Trajectory, a: &PointSet) -> bool {
    !a.is_empty() && t.points().any(|p| a.contains(&p))
}

/// 𝒳[A; B]: trajectories meeting A, minus those meeting B.
pub fn restrict(cloud: &TrajectoryCloud, a: &PointSet, b: &PointSet) -> TrajectoryCloud {
    cloud.filter(|e| meets(&e.traj, a) && !meets(&e.traj, b))
}

/// 𝒳[A, D; B]: as [`restrict`], and the first entrance into A lies in D.
pub fn restrict_hitting(cloud: &TrajectoryCloud, a: &PointSet, d: &PointSet, b: &PointSet) -> Result<TrajectoryCloud> {
    if !d.iter().all(|p| a.contains(p)) {
        return invalid("D must be a subset of A");
    }
    Ok(cloud.filter(|e| {
        !meets(&e.traj, b) && hitting_time(&e.traj, a).is_some_and(|t| d.contains(&e.traj.at(t)))
    }))
}

/// Number of trajectories (with multiplicity) whose first entrance into A is x.
pub fn first_hit_counts(cloud: &TrajectoryCloud, a: &PointSet) -> PointMap<u64> {
    let mut out = PointMap::default();
    for e in &cloud.entries {
        if let Some(t) = hitting_time(&e.traj, a) {
            *out.entry(e.traj.at(t)).or_default() += e.mult;
        }
    }
    out
}

fn check_intensity(u: f64) -> Result<()> {
    if !(u >= 0.0 && u.is_finite()) {
        return invalid("intensity u must be finite and ≥ 0");
    }
    Ok(())
}

/// Default window margin: 4·sqrt of the 0.999 quantile of ρ.
pub fn default_margin(rho: &LengthDistribution) -> u32 {
    (4.0 * (rho.quantile(0.999) as f64).sqrt()).ceil() as u32
}

/// The window grown by `margin` (default: [`default_margin`]).
pub fn padded_window(window: &LatticeBox, rho: &LengthDistribution, margin: Option<u32>) -> LatticeBox {
    window.padded(margin.unwrap_or_else(|| default_margin(rho)))
}

/// Per-vertex construction on a window: N_x ~ Poisson(u/(μ₁+1)) walks from each x.
pub fn sample_window(u: f64, rho: &LengthDistribution, window: &LatticeBox, stream: RngStream) -> Result<TrajectoryCloud> {
    sample_window_where(u, rho, window, &|_, _| true, stream)
}

/// [`sample_window`] that only realizes walks for which `keep(start, T)` holds.
///
/// Each walk runs on its own seed drawn before the filter is consulted, so the
/// kept trajectories are exactly those [`sample_window`] would produce.
pub fn sample_window_where(
    u: f64,
    rho: &LengthDistribution,
    window: &LatticeBox,
    keep: &(dyn Fn(&Point, u64) -> bool + Sync),
    stream: RngStream,
) -> Result<TrajectoryCloud> {
    check_intensity(u)?;
    let vol = window.volume();
    if vol == 0 {
        return invalid("window must be nonempty");
    }
    if u == 0.0 {
        return Ok(TrajectoryCloud::new());
    }
    let per_vertex = u / (rho.moment(1) + 1.0);
    let blocks = vol.div_ceil(WINDOW_BLOCK);
    let stream = stream.child_str("window");
    let entries: Vec<CloudEntry> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let lo = b * WINDOW_BLOCK;
            let size = WINDOW_BLOCK.min(vol - lo);
            let mut rng = stream.child(b).into_rng();
            // A Poisson total with uniform placement is the same point process as
            // independent Poisson counts per vertex.
            let n = Poisson::new(per_vertex * size as f64).unwrap().sample(&mut rng) as u64;
            let mut out = Vec::new();
            for _ in 0..n {
                let x = window.point_at(lo + rng.random_range(0..size));
                let t = rho.sample(&mut rng);
                let seed = rng.next_u64();
                if keep(&x, t) {
                    let mut walk_rng = ChaCha8Rng::seed_from_u64(seed);
                    let traj = sample_srw_with(x, t as usize, &mut walk_rng);
                    out.push(CloudEntry { traj, mult: 1, tag: Provenance::Window { origin: x } });
                }
            }
            out
        })
        .collect();
    Ok(TrajectoryCloud::from_entries(entries))
}

/// Keep each trajectory copy independently with probability p.
pub fn thin(cloud: &TrajectoryCloud, p: f64, stream: RngStream) -> Result<TrajectoryCloud> {
    if !(0.0..=1.0).contains(&p) {
        return invalid("thinning probability must lie in [0, 1]");
    }
    let mut rng = stream.into_rng();
    let entries = cloud
        .entries
        .iter()
        .filter_map(|e| {
            let k = Binomial::new(e.mult, p).unwrap().sample(&mut rng);
            (k > 0).then(|| CloudEntry { mult: k, ..e.clone() })
        })
        .collect();
    Ok(TrajectoryCloud { entries })
}

/// Window clouds at u ≤ u′ with the first a sub-multiset of the second.
pub fn coupled_windows(
    u: f64,
    u_big: f64,
    rho: &LengthDistribution,
    window: &LatticeBox,
    stream: RngStream,
) -> Result<(TrajectoryCloud, TrajectoryCloud)> {
    check_intensity(u)?;
    if u > u_big {
        return invalid("coupling needs u ≤ u′");
    }
    let big = sample_window(u_big, rho, window, stream.child_str("cloud"))?;
    let p = if u_big == 0.0 { 0.0 } else { u / u_big };
    let small = thin(&big, p, stream.child_str("thin"))?;
    if !small.is_submultiset_of(&big) {
        return Err(Error::Invariant("thinned cloud not contained in the larger one".into()));
    }
    Ok((small, big))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HittingRoute {
    /// Poisson(u) candidates per x with m ~ μ₀^{(m)}/(μ₁+1); keep those whose
    /// backward path avoids A. Exact, no intensity estimate needed.
    #[default]
    Thinning,
    /// Counts from Poisson(u·ê_A^{(ρ)}(x)) with ê from the potential module, then
    /// each path drawn by rejection under [`REJECTION_BUDGET`].
    Estimated,
}

#[derive(Clone, Debug)]
pub struct HittingOptions {
    /// Keep only total lengths in [lo, hi].
    pub band: Option<(u64, u64)>,
    pub route: HittingRoute,
    pub budget: usize,
    /// Estimator for ê_A^{(ρ)} under the estimated route.
    pub potential: PotentialConfig,
}

impl Default for HittingOptions {
    fn default() -> Self {
        HittingOptions {
            band: None,
            route: HittingRoute::Thinning,
            budget: REJECTION_BUDGET,
            potential: PotentialConfig::monte_carlo(4096),
        }
    }
}

impl HittingOptions {
    pub fn with_band(mut self, lo: u64, hi: u64) -> Self {
        self.band = Some((lo, hi));
        self
    }

    pub fn with_route(mut self, route: HittingRoute) -> Self {
        self.route = route;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HitDiagnostics {
    pub candidates: u64,
    pub accepted: u64,
    /// Backward path returned to A.
    pub rejected_return: u64,
    pub rejected_band: u64,
    pub rejected_avoid: u64,
    /// Points of A where the rejection budget ran out (estimated route).
    pub exhausted: Vec<Point>,
}

impl HitDiagnostics {
    fn merge(&mut self, o: HitDiagnostics) {
        self.candidates += o.candidates;
        self.accepted += o.accepted;
        self.rejected_return += o.rejected_return;
        self.rejected_band += o.rejected_band;
        self.rejected_avoid += o.rejected_avoid;
        self.exhausted.extend(o.exhausted);
    }
}

#[derive(Clone, Debug)]
pub struct HitSample {
    pub cloud: TrajectoryCloud,
    pub diagnostics: HitDiagnostics,
}

impl HitSample {
    pub fn flagged(&self) -> bool {
        !self.diagnostics.exhausted.is_empty()
    }

    /// The cloud, or a budget error carrying the diagnostics.
    pub fn into_cloud(self) -> Result<TrajectoryCloud> {
        if self.flagged() {
            return Err(Error::Budget(format!(
                "rejection budget exhausted at {} point(s), first {:?}; {:?}",
                self.diagnostics.exhausted.len(),
                self.diagnostics.exhausted[0],
                self.diagnostics
            )));
        }
        Ok(self.cloud)
    }
}

/// Backward walk of m steps from x; None once it returns to A.
pub(crate) fn backward_avoiding<R: Rng + ?Sized>(x: Point, m: u64, a: &PointSet, rng: &mut R) -> Option<Trajectory> {
    let moves = x.dim().moves();
    let mut t = Trajectory::point(x);
    let mut p = x;
    for _ in 0..m {
        let c = rng.random_range(0..moves);
        p.step_in_place(c);
        if a.contains(&p) {
            return None;
        }
        t.push_step(c);
    }
    Some(t)
}

/// Joins a reversed backward path and a forward path at x.
pub(crate) fn reroot<R: Rng + ?Sized>(back: &Trajectory, l: u64, rng: &mut R) -> Trajectory {
    let fwd = sample_srw_with(back.start(), l as usize, rng);
    concatenate(&back.reversed(), &fwd)
}

/// The PPP 𝒳^{u,ρ}[A] of trajectories hitting A, sampled without a window.
pub fn sample_hitting(
    u: f64,
    rho: &LengthDistribution,
    a: &PointSet,
    opts: &HittingOptions,
    stream: RngStream,
) -> Result<HitSample> {
    sample_hitting_avoiding(u, rho, a, &PointSet::default(), opts, stream)
}

/// 𝒳^{u,ρ}[A; B]: the hitting PPP restricted to trajectories that avoid B.
pub fn sample_hitting_avoiding(
    u: f64,
    rho: &LengthDistribution,
    a: &PointSet,
    avoid: &PointSet,
    opts: &HittingOptions,
    stream: RngStream,
) -> Result<HitSample> {
    check_intensity(u)?;
    if a.is_empty() {
        return invalid("target set must be nonempty");
    }
    if opts.budget == 0 {
        return invalid("rejection budget must be ≥ 1");
    }
    let pts = sorted_points(a);
    let estimated: Option<Vec<f64>> = match opts.route {
        HittingRoute::Estimated if u > 0.0 => Some(
            pts.iter()
                .map(|x| rho_equilibrium(a, rho, *x, &opts.potential, stream.child_str("e").child(point_label(x))).map(|e| e.value.max(0.0)))
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };
    if u == 0.0 {
        return Ok(HitSample { cloud: TrajectoryCloud::new(), diagnostics: HitDiagnostics::default() });
    }
    let per_point: Vec<(Vec<CloudEntry>, HitDiagnostics)> = pts
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = stream.child_str("hit").child(point_label(x)).into_rng();
            let mut diag = HitDiagnostics::default();
            let mut out = Vec::new();
            let mut push = |back: Trajectory, t: u64, rng: &mut crate::rng::StreamRng, diag: &mut HitDiagnostics| {
                let m = back.len() as u64;
                // The forward path is drawn even when T is out of band so that the
                // band only thins and never shifts other draws.
                let traj = reroot(&back, t - m, rng);
                if let Some((lo, hi)) = opts.band {
                    if t < lo || t > hi {
                        diag.rejected_band += 1;
                        return;
                    }
                }
                if meets(&traj, avoid) {
                    diag.rejected_avoid += 1;
                    return;
                }
                diag.accepted += 1;
                out.push(CloudEntry { traj, mult: 1, tag: Provenance::Rerooted { hit: *x, m, l: t - m } });
            };
            match &estimated {
                None => {
                    let n = Poisson::new(u).unwrap().sample(&mut rng) as u64;
                    for _ in 0..n {
                        diag.candidates += 1;
                        let t = rho.sample_biased(Bias::PlusOne, &mut rng);
                        let m = rng.random_range(0..=t);
                        match backward_avoiding(*x, m, a, &mut rng) {
                            Some(back) => push(back, t, &mut rng, &mut diag),
                            None => diag.rejected_return += 1,
                        }
                    }
                }
                Some(e) => {
                    let mean = u * e[i];
                    let n = if mean > 0.0 { Poisson::new(mean).unwrap().sample(&mut rng) as u64 } else { 0 };
                    'traj: for _ in 0..n {
                        diag.candidates += 1;
                        for _ in 0..opts.budget {
                            let t = rho.sample_biased(Bias::PlusOne, &mut rng);
                            let m = rng.random_range(0..=t);
                            if let Some(back) = backward_avoiding(*x, m, a, &mut rng) {
                                push(back, t, &mut rng, &mut diag);
                                continue 'traj;
                            }
                            diag.rejected_return += 1;
                        }
                        diag.exhausted.push(*x);
                        break;
                    }
                }
            }
            (out, diag)
        })
        .collect();
    let mut diagnostics = HitDiagnostics::default();
    let mut entries = Vec::new();
    for (e, d) in per_point {
        entries.extend(e);
        diagnostics.merge(d);
    }
    for e in &entries {
        let Provenance::Rerooted { hit, m, .. } = e.tag else { unreachable!() };
        if hitting_time(&e.traj, a) != Some(m as usize) || e.traj.at(m as usize) != hit {
            return Err(Error::Invariant(format!("rerooted path does not first hit A at {hit:?}")));
        }
    }
    Ok(HitSample { cloud: TrajectoryCloud::from_entries(entries), diagnostics })
}

/// An undirected nearest-neighbour edge, stored as (lower endpoint, axis).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub lo: Point,
    pub axis: u8,
}

impl Edge {
    pub fn between(a: &Point, b: &Point) -> Option<Edge> {
        let code = crate::lattice_core::step_code(a, b)?;
        let axis = code / 2;
        let lo = if a < b { *a } else { *b };
        Some(Edge { lo, axis })
    }

    pub fn hi(&self) -> Point {
        self.lo.add(&Point::axis(self.lo.dim(), self.axis as usize, 1))
    }
}

/// G(ω) clipped to a window: vertices V(ω) ∩ window, edges with both ends inside.
#[derive(Clone, Debug)]
pub struct OccupiedGraph {
    pub window: LatticeBox,
    pub vertices: PointSet,
    pub edges: FxHashSet<Edge>,
}

impl OccupiedGraph {
    pub fn sorted_edges(&self) -> Vec<Edge> {
        let mut v: Vec<Edge> = self.edges.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

pub fn occupied_graph(cloud: &TrajectoryCloud, window: &LatticeBox) -> OccupiedGraph {
    let mut vertices = PointSet::default();
    let mut edges = FxHashSet::default();
    for e in cloud.entries() {
        let mut prev: Option<Point> = None;
        for p in e.traj.points() {
            let inside = window.contains(&p);
            if inside {
                vertices.insert(p);
            }
            if let Some(q) = prev {
                if inside && window.contains(&q) && q != p {
                    edges.insert(Edge::between(&q, &p).expect("consecutive points are adjacent"));
                }
            }
            prev = Some(p);
        }
    }
    OccupiedGraph { window: *window, vertices, edges }
}
