use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::good::{check_good_sequence, expand, find_seed, SeedCandidate, Violation};
use super::typical::{proper_part, AlgorithmParams, TrajCache};
use crate::error::{invalid, Error, Result};
use crate::fri::{restrict_hitting, sample_hitting_avoiding, HittingOptions, TrajectoryCloud};
use crate::lattice_core::{Dim, LatticeBox, Point, PointSet, Trajectory};
use crate::length_law::LengthDistribution;
use crate::percolation::clusters_from_edges;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Unexplored,
    Active,
    Surviving,
    Ruined,
}

impl Status {
    fn can_become(self, to: Status) -> bool {
        use Status::*;
        matches!((self, to), (Unexplored, Active) | (Unexplored, Ruined) | (Active, Surviving) | (Active, Ruined) | (Surviving, Ruined))
    }

    fn label(self) -> &'static str {
        match self {
            Status::Unexplored => "unexplored",
            Status::Active => "active",
            Status::Surviving => "surviving",
            Status::Ruined => "ruined",
        }
    }
}

/// Status of every coarse vertex of the window, keyed by coarse coordinates.
pub type StatusMap = BTreeMap<Point, Status>;

/// ℵ_m, with the per-round diagnostics. `position: None` is Δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub m: usize,
    pub position: Option<Vec<i32>>,
    pub fail: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub good: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<bool>,
    /// |𝓛_{x,i}| for i = 1..=α.
    #[serde(default)]
    pub layer_sizes: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
}

impl RoundRecord {
    fn delta(m: usize) -> Self {
        RoundRecord { m, position: None, fail: None, good: None, seed: None, layer_sizes: Vec::new(), violation: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    /// ℵ₀ = Δ.
    NoSeed,
    /// No active vertex left.
    Extinct,
    /// A success activated a neighbour outside the coarse window.
    WindowExhausted,
    /// A sampler ran out of budget; the record up to that round is kept.
    Aborted { reason: String },
}

#[derive(Clone, Debug)]
pub struct AlgorithmRun {
    pub d: Dim,
    /// Coarse window [−window, window]^d.
    pub window: u32,
    pub outcome: Outcome,
    pub statuses: StatusMap,
    pub records: Vec<RoundRecord>,
    /// V_a: surviving coarse vertices, sorted.
    pub survivors: Vec<Point>,
    /// |𝒥| with multiplicity.
    pub trajectories: u64,
}

/// Coarse vertices ordered by (ℓ∞ norm, lexicographic).
fn canonical_key(c: &Point) -> (i64, Point) {
    (c.norm_inf(), *c)
}

fn coarse_window(d: Dim, w: u32) -> LatticeBox {
    LatticeBox::centered(Point::origin(d), w)
}

fn neighbours_of(c: &Point) -> Vec<Point> {
    let mut v: Vec<Point> = c.neighbours().collect();
    v.sort_by_key(canonical_key);
    v
}

/// State-machine bookkeeping shared by the run and its replay.
struct Machine {
    statuses: StatusMap,
    window: LatticeBox,
    /// Coarse ℓ∞ radius of a ruin.
    ruin: i64,
}

impl Machine {
    fn new(d: Dim, w: u32, ruin: i64) -> Self {
        let window = coarse_window(d, w);
        let statuses = window.points().map(|c| (c, Status::Unexplored)).collect();
        Machine { statuses, window, ruin }
    }

    fn set(&mut self, c: &Point, to: Status) -> Result<()> {
        let from = self.statuses[c];
        if from == to {
            return Ok(());
        }
        if !from.can_become(to) {
            return Err(Error::Invariant(format!("illegal transition {from:?} → {to:?} at {c:?}")));
        }
        self.statuses.insert(*c, to);
        Ok(())
    }

    fn next_active(&self) -> Option<Point> {
        self.statuses.iter().filter(|(_, s)| **s == Status::Active).map(|(c, _)| *c).min_by_key(canonical_key)
    }

    /// Step 3 on failure: ruin every window vertex within the ruin radius.
    fn fail(&mut self, x: &Point) -> Result<()> {
        let pts: Vec<Point> = LatticeBox::centered(*x, self.ruin as u32).points().filter(|c| self.window.contains(c)).collect();
        for c in pts {
            if self.statuses[&c] != Status::Ruined {
                self.set(&c, Status::Ruined)?;
            }
        }
        Ok(())
    }

    /// Step 3 on success; returns the newly activated vertices and whether a
    /// neighbour fell outside the window.
    fn succeed(&mut self, x: &Point) -> Result<(Vec<Point>, bool)> {
        self.set(x, Status::Surviving)?;
        let mut out = Vec::new();
        let mut outside = false;
        for y in neighbours_of(x) {
            if !self.window.contains(&y) {
                outside = true;
            } else if self.statuses[&y] == Status::Unexplored {
                self.set(&y, Status::Active)?;
                out.push(y);
            }
        }
        Ok((out, outside))
    }
}

/// Lazily revealed restriction of one realization of 𝒳^{u,ρ}: `known` holds
/// every trajectory meeting `revealed`, and growing `revealed` samples only
/// the trajectories that meet the new points and avoid the old ones.
struct Revealer<'a> {
    u: f64,
    rho: &'a LengthDistribution,
    opts: HittingOptions,
    stream: RngStream,
    known: TrajectoryCloud,
    revealed: PointSet,
    calls: u64,
}

impl Revealer<'_> {
    fn reveal(&mut self, a: &PointSet) -> Result<()> {
        let new: PointSet = a.iter().filter(|p| !self.revealed.contains(*p)).copied().collect();
        if new.is_empty() {
            return Ok(());
        }
        let s = sample_hitting_avoiding(self.u, self.rho, &new, &self.revealed, &self.opts, self.stream.child(self.calls))?;
        self.calls += 1;
        self.known = self.known.union(&s.into_cloud()?);
        self.revealed.extend(new);
        Ok(())
    }

    /// X̄[A; B; D]: typical trajectories meeting A, avoiding B, first entering A in D.
    fn xbar(&mut self, a: &PointSet, d: &PointSet, b: &PointSet, cache: &TrajCache) -> Result<TrajectoryCloud> {
        self.reveal(a)?;
        let c = restrict_hitting(&self.known, a, d, b)?;
        let ts: Vec<&Trajectory> = c.trajectories().collect();
        cache.warm(&ts)?;
        Ok(c.filter(|e| cache.is_typical(&e.traj).unwrap_or(false)))
    }
}

fn to_lattice(c: &Point, r: i64) -> Point {
    c.scale(r as i32)
}

fn check_connected(j: &[TrajectoryCloud]) -> Result<()> {
    let mut verts = Vec::new();
    let mut edges = Vec::new();
    for cloud in j {
        for t in cloud.trajectories() {
            let pts: Vec<Point> = t.points().collect();
            verts.extend(pts.iter().copied());
            edges.extend(pts.windows(2).map(|w| (w[0], w[1])));
        }
    }
    if verts.is_empty() {
        return Ok(());
    }
    let n = clusters_from_edges(verts, edges).components().len();
    if n != 1 {
        return Err(Error::Invariant(format!("G(𝒥) has {n} components")));
    }
    Ok(())
}

struct Seed {
    cloud: TrajectoryCloud,
    parts: Vec<PointSet>,
}

fn seed_from(cands: &[SeedCandidate], idx: &[usize]) -> Seed {
    let trajs: Vec<(Trajectory, crate::fri::Provenance)> =
        idx.iter().map(|&i| (cands[i].traj.clone(), crate::fri::Provenance::Window { origin: cands[i].traj.start() })).collect();
    let cloud = TrajectoryCloud::from_trajectories(trajs);
    // Parts follow the cloud's expanded order.
    let parts = expand(&cloud)
        .iter()
        .map(|t| cands[idx.iter().copied().find(|&i| &cands[i].traj == *t).expect("seed member")].part.clone())
        .collect();
    Seed { cloud, parts }
}

/// Steps 1–4 on the coarse window [−window, window]^d.
pub fn run_algorithm(
    u: f64,
    rho: &LengthDistribution,
    alg: &AlgorithmParams,
    cache: &TrajCache,
    window: u32,
    stream: RngStream,
) -> Result<AlgorithmRun> {
    let p = &cache.params;
    p.validate()?;
    alg.validate(p)?;
    if alg.alpha == 0 || alg.beta == 0 || alg.k1 == 0 {
        return invalid("α, β and k₁ must be at least 1");
    }
    let r = p.r_n();
    let d = p.d;
    let ruin = alg.ruin_radius(p) / r;
    let mut mach = Machine::new(d, window, ruin);
    let mut run = AlgorithmRun {
        d,
        window,
        outcome: Outcome::Extinct,
        statuses: StatusMap::new(),
        records: Vec::new(),
        survivors: Vec::new(),
        trajectories: 0,
    };
    let mut rev = Revealer {
        u,
        rho,
        opts: HittingOptions::default(),
        stream: stream.child_str("reveal"),
        known: TrajectoryCloud::new(),
        revealed: PointSet::default(),
        calls: 0,
    };
    let result = drive(&mut run, &mut mach, &mut rev, alg, cache, rho, &stream);
    match result {
        Ok(outcome) => run.outcome = outcome,
        Err(Error::Budget(reason)) => run.outcome = Outcome::Aborted { reason },
        Err(e) => return Err(e),
    }
    run.statuses = mach.statuses;
    run.survivors = run.statuses.iter().filter(|(_, s)| **s == Status::Surviving).map(|(c, _)| *c).collect();
    Ok(run)
}

fn drive(
    run: &mut AlgorithmRun,
    mach: &mut Machine,
    rev: &mut Revealer,
    alg: &AlgorithmParams,
    cache: &TrajCache,
    rho: &LengthDistribution,
    stream: &RngStream,
) -> Result<Outcome> {
    let p = &cache.params;
    let r = p.r_n();
    let origin = Point::origin(p.d);
    // Step 1.
    let z: PointSet = [p.z_n()].into_iter().collect();
    let l_minus = rev.xbar(&z, &z, &PointSet::default(), cache)?;
    let cands: Vec<SeedCandidate> = expand(&l_minus)
        .into_iter()
        .map(|t| {
            let star = cache.star(t)?;
            Ok(SeedCandidate { traj: t.clone(), part: proper_part(t, &star.points, &z, &PointSet::default(), p) })
        })
        .collect::<Result<_>>()?;
    let Some(idx) = find_seed(&cands, &origin, alg.beta, cache, rho, stream.child_str("seed0"))? else {
        run.records.push(RoundRecord::delta(0));
        return Ok(Outcome::NoSeed);
    };
    let mut seeds: BTreeMap<Point, Seed> = BTreeMap::new();
    seeds.insert(origin, seed_from(&cands, &idx));
    mach.set(&origin, Status::Active)?;
    let mut history: Vec<TrajectoryCloud> = vec![l_minus];
    run.trajectories = history[0].len();
    let mut jset = PointSet::default();
    let mut m = 0usize;
    let mut x = origin;
    loop {
        // Step 2.
        let seed = seeds.remove(&x).ok_or_else(|| Error::Invariant(format!("active vertex {x:?} has no seed")))?;
        let mut layers: Vec<TrajectoryCloud> = Vec::with_capacity(alg.alpha);
        let mut prev = seed.cloud.clone();
        for _ in 0..alg.alpha {
            let a = prev.vertex_set();
            let next = if a.is_empty() {
                TrajectoryCloud::new()
            } else {
                let mut lp = PointSet::default();
                for t in prev.trajectories() {
                    lp.extend(cache.star(t)?.points.iter().copied());
                }
                rev.xbar(&a, &lp, &jset, cache)?.difference(&prev)
            };
            jset.extend(a);
            layers.push(next.clone());
            prev = next;
        }
        // Step 3.
        let mut hist = history.clone();
        hist.push(seed.cloud.clone());
        let good = check_good_sequence(&layers, &hist, &seed.parts, alg.k1, cache, rho, stream.child_str("good").child(m as u64))?;
        let mut rec = RoundRecord {
            m,
            position: Some(x.coords().to_vec()),
            fail: None,
            good: Some(good.good),
            seed: None,
            layer_sizes: layers.iter().map(|l| l.len()).collect(),
            violation: good.violation.clone(),
        };
        let mut found: Vec<(Point, Seed)> = Vec::new();
        if good.good {
            let last = &layers[alg.alpha - 1];
            let parts = &good.parts[alg.alpha - 1];
            let cands: Vec<SeedCandidate> = expand(last)
                .into_iter()
                .zip(parts)
                .map(|(t, part)| SeedCandidate { traj: t.clone(), part: part.clone() })
                .collect();
            for (k, y) in neighbours_of(&x).into_iter().enumerate() {
                let s = stream.child_str("seed").children(&[m as u64, k as u64]);
                match find_seed(&cands, &to_lattice(&y, r), alg.beta, cache, rho, s)? {
                    Some(idx) => found.push((y, seed_from(&cands, &idx))),
                    None => break,
                }
            }
        }
        let success = good.good && found.len() == 2 * p.d.get();
        rec.seed = good.good.then_some(success);
        rec.fail = Some(u8::from(!success));
        for l in &layers {
            run.trajectories += l.len();
        }
        history.extend(layers);
        check_connected(&history)?;
        run.records.push(rec);
        if success {
            let (activated, outside) = mach.succeed(&x)?;
            for (y, s) in found {
                if activated.contains(&y) {
                    seeds.insert(y, s);
                }
            }
            if outside {
                return Ok(Outcome::WindowExhausted);
            }
        } else {
            mach.fail(&x)?;
            let ruined: Vec<Point> = seeds.keys().filter(|c| mach.statuses[*c] == Status::Ruined).copied().collect();
            for c in ruined {
                seeds.remove(&c);
            }
        }
        // Step 4.
        m += 1;
        match mach.next_active() {
            Some(next) => x = next,
            None => {
                run.records.push(RoundRecord::delta(m));
                return Ok(Outcome::Extinct);
            }
        }
    }
}

/// Rebuilds the final status map from positions and fail bits alone.
pub fn replay_statuses(d: Dim, window: u32, alg: &AlgorithmParams, cache: &TrajCache, records: &[RoundRecord]) -> Result<StatusMap> {
    let r = cache.params.r_n();
    let ruin = alg.ruin_radius(&cache.params) / r;
    let mut mach = Machine::new(d, window, ruin);
    let origin = Point::origin(d);
    match records.first() {
        None => return invalid("empty record"),
        Some(rec) if rec.position.is_none() => return Ok(mach.statuses),
        Some(_) => mach.set(&origin, Status::Active)?,
    }
    for rec in records {
        let Some(pos) = &rec.position else { break };
        let x = Point::new(pos)?;
        if mach.next_active() != Some(x) {
            return Err(Error::Invariant(format!("round {} at {x:?} is not the first active vertex", rec.m)));
        }
        match rec.fail {
            Some(0) => {
                if mach.succeed(&x)?.1 {
                    break;
                }
            }
            Some(_) => mach.fail(&x)?,
            None => return Err(Error::Invariant(format!("round {} has no fail bit", rec.m))),
        }
    }
    Ok(mach.statuses)
}

/// CSV: coarse coordinates c0..c{d−1}, then the status.
pub fn write_statuses<W: Write>(mut w: W, statuses: &StatusMap) -> Result<()> {
    let d = statuses.keys().next().map_or(0, |c| c.dim().get());
    let head: Vec<String> = (0..d).map(|i| format!("c{i}")).chain(["status".to_string()]).collect();
    writeln!(w, "{}", head.join(","))?;
    for (c, s) in statuses {
        let cs: Vec<String> = c.coords().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", cs.join(","), s.label())?;
    }
    Ok(())
}

/// NDJSON, one record per line.
pub fn write_round_records<W: Write>(mut w: W, records: &[RoundRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_round_records<R: BufRead>(r: R) -> Result<Vec<RoundRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Inverse of [`write_statuses`].
pub fn read_statuses<R: BufRead>(r: R) -> Result<StatusMap> {
    let mut lines = r.lines();
    let head = lines.next().transpose()?.ok_or_else(|| Error::Validation("empty status file".into()))?;
    let d = head.split(',').count() - 1;
    let mut out = StatusMap::new();
    for line in lines {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return invalid(format!("status row {line:?} has {} fields", fields.len()));
        }
        let coords = fields[..d]
            .iter()
            .map(|f| f.parse::<i32>().map_err(|e| Error::Validation(format!("bad coordinate {f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let status = match fields[d] {
            "unexplored" => Status::Unexplored,
            "active" => Status::Active,
            "surviving" => Status::Surviving,
            "ruined" => Status::Ruined,
            other => return invalid(format!("unknown status {other}")),
        };
        out.insert(Point::new(&coords)?, status);
    }
    Ok(out)
}
