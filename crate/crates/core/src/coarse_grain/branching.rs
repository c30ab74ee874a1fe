use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::good::expand;
use super::typical::{sample_mu, sample_mu_star, BandLaw, StarPart, TrajCache};
use crate::error::{invalid, Error, Result};
use crate::fri::{sample_hitting, CloudEntry, HittingOptions, Provenance, TrajectoryCloud, REJECTION_BUDGET};
use crate::lattice_core::{sorted_points, srw_displacement, Point, PointSet, Trajectory};
use crate::length_law::LengthDistribution;
use crate::potential::{run_walk, Exit, Obstacle, Stop};
use crate::rng::RngStream;

/// Population at which a branching run stops.
pub const POPULATION_CAP: u64 = 1_000_000;

/// Pilot draws per parent for the typical fraction of μ̄*.
const PILOT: usize = 64;

#[derive(Clone, Debug, Default)]
pub struct Generation {
    pub y: TrajectoryCloud,
    /// Ȳ_i, a submultiset of `y` in the coupled construction.
    pub ybar: TrajectoryCloud,
    /// Points of Z_{i−1} that produced the members of Ȳ_i, sorted.
    pub z: Vec<Point>,
}

#[derive(Clone, Debug, Default)]
pub struct BranchingRun {
    pub generations: Vec<Generation>,
    /// Stopped at [`POPULATION_CAP`].
    pub capped: bool,
    /// Parents of Ȳ whose retention probability had to be capped at 1, so
    /// their Ȳ offspring intensity falls short of u(1 − ε/2)e_η.
    pub deficits: u64,
}

impl BranchingRun {
    /// First generation with empty Y.
    pub fn extinct_at(&self) -> Option<usize> {
        self.generations.iter().position(|g| g.y.is_empty())
    }
}

fn check_seed(seed: &TrajectoryCloud, u: f64, eps: f64, cache: &TrajCache) -> Result<()> {
    if !(u >= 0.0 && u.is_finite()) {
        return invalid(format!("intensity must be finite and ≥ 0, got {u}"));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return invalid("ε must lie in (0, 1/2)");
    }
    for t in seed.trajectories() {
        if !cache.is_typical(t)? {
            return invalid("seed trajectories must be typical");
        }
    }
    Ok(())
}

/// Sorted η̂ with its e_η weights.
fn star_weights(star: &StarPart) -> (Vec<Point>, Vec<f64>) {
    let pts = sorted_points(&star.points);
    let w = pts.iter().map(|x| star.e.get(x)).collect();
    (pts, w)
}

fn pick<R: Rng + ?Sized>(pts: &[Point], w: &[f64], rng: &mut R) -> Result<Point> {
    let idx = WeightedIndex::new(w).map_err(|_| Error::Budget("no equilibrium mass to sample from".into()))?;
    Ok(pts[idx.sample(rng)])
}

/// First-return times of one batch of walks from a point of range(η).
struct ReturnBatch {
    escaped: usize,
    returns: Vec<u64>,
}

impl ReturnBatch {
    fn new(range: &PointSet, x: Point, cache: &TrajCache, stream: RngStream) -> Result<Self> {
        let cfg = &cache.params.potential;
        let ob = Obstacle::new(range.clone());
        let (center, r) = cfg.kill_box(range, &ob)?;
        let stop = Stop::kill(center, r);
        let mut rng = stream.into_rng();
        let mut b = ReturnBatch { escaped: 0, returns: Vec::new() };
        for _ in 0..cfg.mc_walks {
            match run_walk(&ob, x, stop, &mut rng) {
                Exit::Hit { time, .. } => b.returns.push(time),
                _ => b.escaped += 1,
            }
        }
        Ok(b)
    }

    /// ê(x) / Ŝ(m), with Ŝ(m) the fraction not back by time m.
    fn ratio(&self, m: u64) -> f64 {
        let later = self.returns.iter().filter(|&&t| t > m).count();
        let s = self.escaped + later;
        if s == 0 {
            0.0
        } else {
            self.escaped as f64 / s as f64
        }
    }
}

/// Y offspring of η: X̄[range(η); ∅; η̂], one entry per copy.
pub(crate) fn y_offspring(
    eta: &Trajectory,
    u: f64,
    rho: &LengthDistribution,
    cache: &TrajCache,
    stream: RngStream,
) -> Result<Vec<CloudEntry>> {
    let star = cache.star(eta)?;
    let hits = sample_hitting(u, rho, &eta.range(), &HittingOptions::default(), stream.child_str("y"))?.into_cloud()?;
    let mut out = Vec::new();
    for e in hits.entries() {
        if let Provenance::Rerooted { hit, .. } = e.tag {
            if star.points.contains(&hit) && cache.is_typical(&e.traj)? {
                for _ in 0..e.mult {
                    out.push(CloudEntry { mult: 1, ..e.clone() });
                }
            }
        }
    }
    Ok(out)
}

struct Offspring {
    y: Vec<CloudEntry>,
    ybar: Vec<CloudEntry>,
    deficit: bool,
}

/// Y offspring X̄[range(η); ∅; η̂] and, for Ȳ parents, the thinned Ȳ children.
#[allow(clippy::too_many_arguments)]
fn offspring(
    eta: &Trajectory,
    in_bar: bool,
    u: f64,
    rho: &LengthDistribution,
    band: &BandLaw,
    eps: f64,
    cache: &TrajCache,
    stream: RngStream,
) -> Result<Offspring> {
    let star = cache.star(eta)?;
    let range = eta.range();
    let mut out = Offspring { y: y_offspring(eta, u, rho, cache, stream.clone())?, ybar: Vec::new(), deficit: false };
    if !in_bar || out.y.is_empty() {
        return Ok(out);
    }
    let (pts, w) = star_weights(&star);
    let mut rng = stream.child_str("pilot").into_rng();
    let mut typical = 0usize;
    for _ in 0..PILOT {
        let x = pick(&pts, &w, &mut rng)?;
        if let Some((z, _)) = sample_mu_star(x, &range, band, REJECTION_BUDGET, &mut rng) {
            typical += cache.is_typical(&z)? as usize;
        }
    }
    let tau = typical as f64 / PILOT as f64;
    let want = 1.0 - eps / 2.0;
    let p2 = if band.mass * tau > want { want / (band.mass * tau) } else { 1.0 };
    out.deficit = band.mass * tau < want;
    let mut batches: rustc_hash::FxHashMap<Point, ReturnBatch> = Default::default();
    let mut rng = stream.child_str("thin").into_rng();
    for (j, c) in out.y.iter().enumerate() {
        let Provenance::Rerooted { hit, m, l } = c.tag else { unreachable!() };
        if !(band.lo..=band.hi).contains(&(m + l)) {
            continue;
        }
        if !batches.contains_key(&hit) {
            let b = ReturnBatch::new(&range, hit, cache, stream.child_str("ret").child(star_index(&pts, &hit)))?;
            batches.insert(hit, b);
        }
        let keep = batches[&hit].ratio(m) * p2;
        if rng.random::<f64>() < keep {
            out.ybar.push(out.y[j].clone());
        }
    }
    Ok(out)
}

fn entry_multiplicity(cloud: &TrajectoryCloud, e: &CloudEntry) -> u64 {
    cloud.entries().iter().filter(|c| c.traj == e.traj && c.tag == e.tag).map(|c| c.mult).sum()
}

fn star_index(pts: &[Point], x: &Point) -> u64 {
    pts.binary_search(x).map_or(u64::MAX, |i| i as u64)
}

/// The coupled (Y_i) and (Ȳ_i) processes from Y_0 = Ȳ_0 = 𝒮.
///
/// Ȳ children are a thinning of the Y children of the same parent: first by
/// ê(x)/Ŝ_x(m), which turns the rerooted intensity at (x, m) into
/// u·ρ(T)/(μ₁+1)·e_η(x) with the backward part conditioned to avoid range(η),
/// then by (1 − ε/2)/(mass of the band × typical fraction), leaving intensity
/// u(1 − ε/2)e_η(x) of μ̄_{x,η} children.
#[allow(clippy::too_many_arguments)]
pub fn simulate_branching(
    seed: &TrajectoryCloud,
    u: f64,
    rho: &LengthDistribution,
    generations: usize,
    eps: f64,
    cache: &TrajCache,
    stream: RngStream,
) -> Result<BranchingRun> {
    check_seed(seed, u, eps, cache)?;
    let band = BandLaw::for_params(rho, &cache.params)?;
    let mut run = BranchingRun {
        generations: vec![Generation { y: seed.clone(), ybar: seed.clone(), z: Vec::new() }],
        ..Default::default()
    };
    for i in 0..generations {
        let g = run.generations.last().expect("nonempty");
        if g.y.is_empty() {
            break;
        }
        let mut parents: Vec<(&Trajectory, bool)> = Vec::new();
        for e in g.y.entries() {
            let bar = entry_multiplicity(&g.ybar, e);
            for c in 0..e.mult {
                parents.push((&e.traj, c < bar));
            }
        }
        let kids: Vec<Offspring> = parents
            .par_iter()
            .enumerate()
            .map(|(j, (eta, bar))| offspring(eta, *bar, u, rho, &band, eps, cache, stream.children(&[i as u64, j as u64])))
            .collect::<Result<_>>()?;
        let mut next = Generation::default();
        let (mut ys, mut bars) = (Vec::new(), Vec::new());
        for k in kids {
            run.deficits += k.deficit as u64;
            next.z.extend(k.ybar.iter().map(|c| match c.tag {
                Provenance::Rerooted { hit, .. } => hit,
                Provenance::Window { origin } => origin,
            }));
            ys.extend(k.y);
            bars.extend(k.ybar);
        }
        next.y = TrajectoryCloud::from_entries(ys);
        next.ybar = TrajectoryCloud::from_entries(bars);
        next.z.sort();
        if !next.ybar.is_submultiset_of(&next.y) {
            return Err(Error::Invariant(format!("Ȳ not contained in Y at generation {}", i + 1)));
        }
        let size = next.y.len();
        run.generations.push(next);
        if size > POPULATION_CAP {
            run.capped = true;
            break;
        }
    }
    Ok(run)
}

/// Ȳ built directly: Z_{i,η} ~ PPP(u(1 − ε/2)e_η) on η̂, each point x with a
/// child ζ ~ μ̄_{x,η}. In the returned generations `y` equals `ybar`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_trimmed_direct(
    seed: &TrajectoryCloud,
    u: f64,
    rho: &LengthDistribution,
    generations: usize,
    eps: f64,
    cache: &TrajCache,
    stream: RngStream,
) -> Result<BranchingRun> {
    check_seed(seed, u, eps, cache)?;
    let band = BandLaw::for_params(rho, &cache.params)?;
    let mut run = BranchingRun {
        generations: vec![Generation { y: seed.clone(), ybar: seed.clone(), z: Vec::new() }],
        ..Default::default()
    };
    let scale = u * (1.0 - eps / 2.0);
    for i in 0..generations {
        let g = run.generations.last().expect("nonempty");
        if g.ybar.is_empty() {
            break;
        }
        let parents = expand(&g.ybar);
        let kids: Vec<Vec<(Point, CloudEntry)>> = parents
            .par_iter()
            .enumerate()
            .map(|(j, eta)| {
                let star = cache.star(eta)?;
                let range = eta.range();
                let mut rng = stream.children(&[i as u64, j as u64]).into_rng();
                let mut out = Vec::new();
                for x in sorted_points(&star.points) {
                    let lam = scale * star.e.get(&x);
                    let n = if lam > 0.0 { Poisson::new(lam).expect("positive mean").sample(&mut rng) as u64 } else { 0 };
                    for _ in 0..n {
                        let (z, m) = cache
                            .sample_mu_bar(x, &range, &band, REJECTION_BUDGET, &mut rng)?
                            .ok_or_else(|| Error::Budget(format!("μ̄ rejection budget exhausted at {x:?}")))?;
                        let l = z.len() as u64 - m;
                        out.push((x, CloudEntry { traj: z, mult: 1, tag: Provenance::Rerooted { hit: x, m, l } }));
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut next = Generation::default();
        let mut entries = Vec::new();
        for (x, e) in kids.into_iter().flatten() {
            next.z.push(x);
            entries.push(e);
        }
        next.z.sort();
        next.ybar = TrajectoryCloud::from_entries(entries);
        next.y = next.ybar.clone();
        let size = next.y.len();
        run.generations.push(next);
        if size > POPULATION_CAP {
            run.capped = true;
            break;
        }
    }
    Ok(run)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainVariant {
    /// K_i ~ ē⁰_{ζ_i} on η̂, ζ_{i+1} ~ μ̄_{K_i, ζ_i}.
    Full,
    /// K_i ~ e⁰_{ζ_i}, ζ_{i+1} ~ μ_{K_i}.
    Diamond,
    /// K_0 ~ e⁰_η, ζ_{i+1} ~ μ_{K_i}, K_{i+1} a uniform point of ζ_{i+1}.
    Square,
}

/// (K_i)_{i<α} for the chosen construction.
pub fn simulate_hit_chain(
    eta: &Trajectory,
    alpha: usize,
    variant: ChainVariant,
    cache: &TrajCache,
    rho: &LengthDistribution,
    stream: RngStream,
) -> Result<Vec<Point>> {
    if alpha == 0 {
        return Ok(Vec::new());
    }
    let band = BandLaw::for_params(rho, &cache.params)?;
    let mut rng = stream.into_rng();
    let full_weights = |z: &Trajectory| -> Result<(Vec<Point>, Vec<f64>)> {
        let star = cache.star(z)?;
        let pts = sorted_points(&z.range());
        let w = pts.iter().map(|x| star.e.get(x)).collect();
        Ok((pts, w))
    };
    let mut out = Vec::with_capacity(alpha);
    match variant {
        ChainVariant::Full => {
            if !cache.is_typical(eta)? {
                return invalid("the full chain needs a typical η");
            }
            let mut zeta = eta.clone();
            loop {
                let (pts, w) = star_weights(&*cache.star(&zeta)?);
                let k = pick(&pts, &w, &mut rng)?;
                out.push(k);
                if out.len() == alpha {
                    break;
                }
                zeta = cache
                    .sample_mu_bar(k, &zeta.range(), &band, REJECTION_BUDGET, &mut rng)?
                    .ok_or_else(|| Error::Budget(format!("μ̄ rejection budget exhausted at {k:?}")))?
                    .0;
            }
        }
        ChainVariant::Diamond => {
            let mut zeta = eta.clone();
            loop {
                let (pts, w) = full_weights(&zeta)?;
                let k = pick(&pts, &w, &mut rng)?;
                out.push(k);
                if out.len() == alpha {
                    break;
                }
                zeta = sample_mu(k, &band, &mut rng);
            }
        }
        ChainVariant::Square => {
            let (pts, w) = full_weights(eta)?;
            let mut k = pick(&pts, &w, &mut rng)?;
            out.push(k);
            while out.len() < alpha {
                let zeta = sample_mu(k, &band, &mut rng);
                k = zeta.at(rng.random_range(0..=zeta.len()));
                out.push(k);
            }
        }
    }
    Ok(out)
}

/// σ: T from the band law, m and ξ uniform on 0..=T, σ = |ξ − m|.
pub fn sample_sigma<R: Rng + ?Sized>(band: &BandLaw, rng: &mut R) -> u64 {
    let (t, m) = band.sample_split(rng);
    let xi = rng.random_range(0..=t);
    xi.abs_diff(m)
}

/// K_i = X_{S_i} for a walk X from K_0 ~ e⁰_η and S_i a sum of i copies of σ.
pub fn x_at_sums(
    eta: &Trajectory,
    alpha: usize,
    cache: &TrajCache,
    rho: &LengthDistribution,
    stream: RngStream,
) -> Result<Vec<Point>> {
    if alpha == 0 {
        return Ok(Vec::new());
    }
    let band = BandLaw::for_params(rho, &cache.params)?;
    let mut rng = stream.into_rng();
    let star = cache.star(eta)?;
    let pts = sorted_points(&eta.range());
    let w: Vec<f64> = pts.iter().map(|x| star.e.get(x)).collect();
    let mut k = pick(&pts, &w, &mut rng)?;
    let mut out = vec![k];
    while out.len() < alpha {
        let s = sample_sigma(&band, &mut rng);
        k = k.add(&srw_displacement(k.dim(), s, &mut rng));
        out.push(k);
    }
    Ok(out)
}
