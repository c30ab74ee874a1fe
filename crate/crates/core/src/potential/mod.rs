//! Potential theory of the simple random walk: Green's function, escape
//! probabilities, capacities (plain, truncated, ρ-weighted), hitting
//! probabilities, the pair functional φ^{(ρ)} and the ε_d estimator.
//!
//! Each quantity has an exact route (Dirichlet relaxation on a finite ball, or
//! exhaustive dynamic programming for short time horizons) and a Monte Carlo
//! route. The exact route is limited to small sets; large traces go through
//! Monte Carlo with uniform subsampling.

pub mod dirichlet;
pub mod walker;

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice_core::{sample_srw, sorted_points, Dim, Point, PointMap, PointSet};
use crate::length_law::{log_factor, LengthDistribution};
use crate::rng::{label_hash, RngStream};
use crate::stats::Summary;
use dirichlet::{CubeSolver, SymmetricSolver};
pub use walker::{run_walk, Exit, Obstacle, Stop};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactDirichlet,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialConfig {
    pub method: Method,
    /// Radius r of the ball on which walks are killed; default 4·diam + 16.
    pub annulus_radius: Option<i64>,
    /// Centre of that ball; default the midpoint of the set's bounding box.
    pub kill_center: Option<Point>,
    /// Walks per point (Monte Carlo).
    pub mc_walks: usize,
    /// Count a walk as escaped once it survives this many steps.
    pub escape_cutoff: Option<u64>,
    /// Points drawn uniformly from large sets.
    pub subsample: usize,
    pub tol: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            method: Method::MonteCarlo,
            annulus_radius: None,
            kill_center: None,
            mc_walks: 256,
            escape_cutoff: None,
            subsample: 4096,
            tol: dirichlet::DEFAULT_TOL,
        }
    }
}

impl PotentialConfig {
    pub fn exact() -> Self {
        PotentialConfig { method: Method::ExactDirichlet, ..Default::default() }
    }

    pub fn monte_carlo(walks: usize) -> Self {
        PotentialConfig { mc_walks: walks, ..Default::default() }
    }

    pub fn with_radius(mut self, r: i64) -> Self {
        self.annulus_radius = Some(r);
        self
    }

    pub fn with_center(mut self, c: Point) -> Self {
        self.kill_center = Some(c);
        self
    }

    fn center_for(&self, ob: &Obstacle) -> Point {
        self.kill_center.unwrap_or_else(|| ob.center())
    }

    fn validate(&self) -> Result<()> {
        if self.mc_walks == 0 && self.method == Method::MonteCarlo {
            return invalid("mc_walks must be positive");
        }
        if self.subsample == 0 {
            return invalid("subsample must be positive");
        }
        if self.escape_cutoff == Some(0) {
            return invalid("escape cutoff must be ≥ 1");
        }
        Ok(())
    }

    /// Kill radius for a set of the given ℓ∞ diameter.
    fn radius_for(&self, diam: i64) -> Result<i64> {
        let r = self.annulus_radius.unwrap_or(4 * diam + 16);
        if r <= diam {
            return invalid(format!("annulus radius {r} must exceed diam {diam}"));
        }
        Ok(r)
    }

    /// Kill box for a set; checks that the set lies inside it.
    pub(crate) fn kill_box(&self, a: &PointSet, ob: &Obstacle) -> Result<(Point, i64)> {
        let r = self.radius_for(set_diam(a))?;
        let c = self.center_for(ob);
        if a.iter().any(|p| p.dist_inf(&c) > r) {
            return invalid("set does not fit inside the kill box");
        }
        Ok((c, r))
    }
}

/// A scalar estimate with its Monte Carlo error and truncation bias bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub bias_bound: f64,
    pub n_samples: u64,
}

impl Estimate {
    pub fn exact(value: f64, bias_bound: f64) -> Self {
        Estimate { value, stderr: 0.0, bias_bound, n_samples: 0 }
    }

    /// Two estimates agree within k combined standard errors plus both bias bounds.
    pub fn agrees(&self, other: &Estimate, k: f64, abs_tol: f64) -> bool {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.value - other.value).abs() <= k * se + self.bias_bound + other.bias_bound + abs_tol
    }

    fn scaled(self, c: f64) -> Self {
        Estimate { value: self.value * c, stderr: self.stderr * c, bias_bound: self.bias_bound * c, ..self }
    }
}

#[derive(Clone, Debug)]
pub struct EquilibriumMeasure {
    pub weights: PointMap<f64>,
    pub stderr: PointMap<f64>,
    /// Bound on |e_A(x) − weight| from killing on the ball, per point.
    pub bias_bound: f64,
}

impl EquilibriumMeasure {
    pub fn total(&self) -> f64 {
        sorted_points(&self.weights.keys().copied().collect()).iter().map(|p| self.weights[p]).sum()
    }

    pub fn get(&self, x: &Point) -> f64 {
        self.weights.get(x).copied().unwrap_or(0.0)
    }

    /// e⁰_A = e_A / cap(A).
    pub fn normalized(&self) -> PointMap<f64> {
        let c = self.total();
        self.weights.iter().map(|(p, w)| (*p, if c > 0.0 { w / c } else { 0.0 })).collect()
    }
}

/// ℓ∞ diameter of a set.
pub fn set_diam(a: &PointSet) -> i64 {
    let Some(first) = a.iter().next() else { return 0 };
    let d = first.dim().get();
    (0..d)
        .map(|i| {
            let lo = a.iter().map(|p| p.coord(i)).min().unwrap();
            let hi = a.iter().map(|p| p.coord(i)).max().unwrap();
            (hi - lo) as i64
        })
        .max()
        .unwrap_or(0)
}

/// Bound on sup_{|z − A| ≥ dist} P^z[H_A < ∞] via |A|·dist^{2−d} (C′ = 1).
fn tail_bias(size: usize, dist: i64, d: Dim) -> f64 {
    if dist <= 0 {
        return 1.0;
    }
    (size as f64 * (dist as f64).powi(2 - d.get() as i32)).min(1.0)
}

fn nonempty(a: &PointSet) -> Result<Dim> {
    match a.iter().next() {
        Some(p) => Ok(p.dim()),
        None => invalid("set must be nonempty"),
    }
}

/// Canonical point list and a uniform subsample of at most k of its indices.
fn subsample(a: &PointSet, k: usize, stream: RngStream) -> (Vec<Point>, bool) {
    let pts = sorted_points(a);
    if pts.len() <= k {
        return (pts, false);
    }
    let mut rng = stream.into_rng();
    let mut idx = sample_indices(&mut rng, pts.len(), k).into_vec();
    idx.sort_unstable();
    (idx.into_iter().map(|i| pts[i]).collect(), true)
}

/// Σ_{x∈A} f(x) from per-point Monte Carlo means, with subsampling if needed.
///
/// `f` returns (mean, variance of one draw) for a point and its stream.
fn sum_over_set<F>(a: &PointSet, cfg: &PotentialConfig, stream: RngStream, f: F) -> Estimate
where
    F: Fn(&Point, RngStream) -> (f64, f64) + Sync,
{
    let (pts, sub) = subsample(a, cfg.subsample, stream.child_str("subsample"));
    let vals: Vec<(f64, f64)> =
        pts.par_iter().enumerate().map(|(i, x)| f(x, stream.child_str("point").child(i as u64))).collect();
    let n = a.len() as f64;
    let k = pts.len() as f64;
    let means: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let total: f64 = means.iter().sum::<f64>() * n / k;
    let stderr = if sub {
        n * Summary::of(&means).stderr()
    } else {
        vals.iter().map(|v| v.1 / cfg.mc_walks as f64).sum::<f64>().sqrt()
    };
    Estimate { value: total, stderr, bias_bound: 0.0, n_samples: pts.len() as u64 * cfg.mc_walks as u64 }
}

const WALK_CHUNK: usize = 4096;

/// Run n independent walks in fixed-size chunks, each chunk on its own stream,
/// so the output is independent of the thread count.
fn par_walks<T: Send, F>(n: usize, stream: &RngStream, f: F) -> Vec<T>
where
    F: Fn(&mut crate::rng::StreamRng) -> T + Sync,
{
    let chunks = n.div_ceil(WALK_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream.child_str("walks").child(c as u64).into_rng();
            let len = WALK_CHUNK.min(n - c * WALK_CHUNK);
            (0..len).map(|_| f(&mut rng)).collect::<Vec<T>>()
        })
        .collect()
}

fn bernoulli_mean(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, p * (1.0 - p))
}

/// g(x, y) = E^x Σ_n 1{X_n = y}.
pub fn green(x: Point, y: Point, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    let d = x.dim();
    let sep = x.dist_inf(&y);
    let r = cfg.annulus_radius.unwrap_or(4 * sep + 16);
    if r <= sep {
        return invalid(format!("annulus radius {r} must exceed |x − y| = {sep}"));
    }
    let bias = tail_bias(1, r, d) * 2.0;
    match cfg.method {
        Method::ExactDirichlet => {
            let s = SymmetricSolver::green_origin(d, r, cfg.tol)?;
            let z = x.sub(&y);
            let c: Vec<i64> = z.coords().iter().map(|&v| v as i64).collect();
            Ok(Estimate::exact(s.value(&c), bias))
        }
        Method::MonteCarlo => {
            let ob = Obstacle::from_points([y]);
            let center = cfg.kill_center.unwrap_or(y);
            let counts: Vec<f64> =
                par_walks(cfg.mc_walks, &stream, |rng| walker::count_visits(&ob, x, Stop::kill(center, r), rng) as f64);
            let s = Summary::of(&counts);
            Ok(Estimate { value: s.mean, stderr: s.stderr(), bias_bound: bias, n_samples: cfg.mc_walks as u64 })
        }
    }
}

/// e_A(x) = P^x[H̃_A = ∞] for every x ∈ A.
pub fn equilibrium_measure(a: &PointSet, cfg: &PotentialConfig, stream: RngStream) -> Result<EquilibriumMeasure> {
    cfg.validate()?;
    let d = nonempty(a)?;
    let diam = set_diam(a);
    let ob = Obstacle::new(a.clone());
    let (center, r) = cfg.kill_box(a, &ob)?;
    let bias = tail_bias(a.len(), r - diam / 2, d);
    match cfg.method {
        Method::ExactDirichlet => {
            let s = CubeSolver::hitting(center, r, a, cfg.tol)?;
            let weights = s.escape_all(a);
            let stderr = weights.keys().map(|p| (*p, 0.0)).collect();
            Ok(EquilibriumMeasure { weights, stderr, bias_bound: bias })
        }
        Method::MonteCarlo => {
            let stop = Stop::kill(center, r).with_cutoff(cfg.escape_cutoff);
            let pts = sorted_points(a);
            let vals: Vec<(Point, f64, f64)> = pts
                .par_iter()
                .enumerate()
                .map(|(i, x)| {
                    let mut rng = stream.child(i as u64).into_rng();
                    let esc = (0..cfg.mc_walks).filter(|_| !matches!(run_walk(&ob, *x, stop, &mut rng), Exit::Hit { .. })).count();
                    let (p, v) = bernoulli_mean(esc, cfg.mc_walks);
                    (*x, p, (v / cfg.mc_walks as f64).sqrt())
                })
                .collect();
            Ok(EquilibriumMeasure {
                weights: vals.iter().map(|v| (v.0, v.1)).collect(),
                stderr: vals.iter().map(|v| (v.0, v.2)).collect(),
                bias_bound: bias,
            })
        }
    }
}

/// cap(A) = Σ_x e_A(x).
pub fn capacity(a: &PointSet, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    let d = nonempty(a)?;
    let diam = set_diam(a);
    let ob = Obstacle::new(a.clone());
    let (center, r) = cfg.kill_box(a, &ob)?;
    let bias = tail_bias(a.len(), r - diam / 2, d) * a.len() as f64;
    match cfg.method {
        Method::ExactDirichlet => {
            let em = equilibrium_measure(a, cfg, stream)?;
            Ok(Estimate::exact(em.total(), bias))
        }
        Method::MonteCarlo => {
            let stop = Stop::kill(center, r).with_cutoff(cfg.escape_cutoff);
            let mut e = sum_over_set(a, cfg, stream, |x, s| {
                let mut rng = s.into_rng();
                let esc = (0..cfg.mc_walks).filter(|_| !matches!(run_walk(&ob, *x, stop, &mut rng), Exit::Hit { .. })).count();
                bernoulli_mean(esc, cfg.mc_walks)
            });
            e.bias_bound = bias;
            Ok(e)
        }
    }
}

/// Exact capacity of the ball B(0, rho) via the symmetric solver on B(0, r).
pub fn ball_capacity_exact(d: Dim, rho: i64, r: i64, tol: f64) -> Result<Estimate> {
    let s = SymmetricSolver::ball_hitting(d, rho, r, tol)?;
    let size = (2 * rho + 1).pow(d.get() as u32) as usize;
    Ok(Estimate::exact(s.fixed_escape_mass(), tail_bias(size, r - rho, d) * size as f64))
}

/// cap(A, s) = Σ_x P^x[H̃_A > s].
pub fn truncated_capacity(a: &PointSet, s: u64, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    nonempty(a)?;
    if s == 0 {
        return Ok(Estimate::exact(a.len() as f64, 0.0));
    }
    let ob = Obstacle::new(a.clone());
    let stop = Stop::cutoff(s);
    Ok(sum_over_set(a, cfg, stream, |x, st| {
        let mut rng = st.into_rng();
        let esc = (0..cfg.mc_walks).filter(|_| !matches!(run_walk(&ob, *x, stop, &mut rng), Exit::Hit { .. })).count();
        bernoulli_mean(esc, cfg.mc_walks)
    }))
}

/// P^x[H̃_A > m] for m = 0..=horizon, exactly, by pushing probability mass.
pub fn survival_profile(a: &PointSet, x: Point, horizon: usize) -> Vec<f64> {
    let moves = x.dim().moves();
    let w = 1.0 / moves as f64;
    let mut out = Vec::with_capacity(horizon + 1);
    let mut mass: PointMap<f64> = PointMap::default();
    mass.insert(x, 1.0);
    out.push(1.0);
    for _ in 0..horizon {
        let mut next: PointMap<f64> = PointMap::default();
        for (p, m) in &mass {
            for c in 0..moves {
                let q = p.step(c);
                if !a.contains(&q) {
                    *next.entry(q).or_default() += m * w;
                }
            }
        }
        mass = next;
        // Sum in canonical order so the value does not depend on hashing.
        let mut v: Vec<(Point, f64)> = mass.iter().map(|(p, m)| (*p, *m)).collect();
        v.sort_by(|l, r| l.0.cmp(&r.0));
        out.push(v.iter().map(|t| t.1).sum());
    }
    out
}

/// e_A^{(ρ)}(x) = Σ_m μ₀^{(m)}/(μ₁ + 1)·P^x[H̃_A > m].
///
/// The weights sum to one, so the estimator draws m from them and runs one
/// walk with cutoff m. With the exact method ρ must have finite support and
/// the survival profile is computed exhaustively.
pub fn rho_equilibrium(a: &PointSet, rho: &LengthDistribution, x: Point, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    nonempty(a)?;
    if !a.contains(&x) {
        return Ok(Estimate::exact(0.0, 0.0));
    }
    match cfg.method {
        Method::ExactDirichlet => {
            let m_max = exact_horizon(rho)?;
            let prof = survival_profile(a, x, m_max as usize);
            let z = rho.moment(1) + 1.0;
            let v: f64 = (0..=m_max).map(|m| rho.tail_moment(0, m) / z * prof[m as usize]).sum();
            Ok(Estimate::exact(v, 0.0))
        }
        Method::MonteCarlo => {
            let ob = Obstacle::new(a.clone());
            let mut rng = stream.into_rng();
            let (p, v) = rho_escape_draws(&ob, &x, cfg.mc_walks, &mut rng, |r| rho.sample_tail_index(r));
            Ok(Estimate { value: p, stderr: (v / cfg.mc_walks as f64).sqrt(), bias_bound: 0.0, n_samples: cfg.mc_walks as u64 })
        }
    }
}

fn exact_horizon(rho: &LengthDistribution) -> Result<u64> {
    match rho.max_support() {
        Some(m) if m <= 24 => Ok(m),
        _ => Err(Error::Validation("exact ρ-quantities need ρ supported on [0, 24]".into())),
    }
}

fn rho_escape_draws<R: Rng>(ob: &Obstacle, x: &Point, n: usize, rng: &mut R, draw: impl Fn(&mut R) -> u64) -> (f64, f64) {
    let mut esc = 0usize;
    for _ in 0..n {
        let m = draw(rng);
        if m == 0 || !matches!(run_walk(ob, *x, Stop::cutoff(m), rng), Exit::Hit { .. }) {
            esc += 1;
        }
    }
    bernoulli_mean(esc, n)
}

/// cap^{(ρ)}(A) = Σ_x e_A^{(ρ)}(x).
pub fn rho_capacity(a: &PointSet, rho: &LengthDistribution, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    nonempty(a)?;
    match cfg.method {
        Method::ExactDirichlet => {
            let mut total = 0.0;
            for x in sorted_points(a) {
                total += rho_equilibrium(a, rho, x, cfg, stream.clone())?.value;
            }
            Ok(Estimate::exact(total, 0.0))
        }
        Method::MonteCarlo => {
            let ob = Obstacle::new(a.clone());
            Ok(sum_over_set(a, cfg, stream, |x, s| {
                let mut rng = s.into_rng();
                rho_escape_draws(&ob, x, cfg.mc_walks, &mut rng, |r| rho.sample_tail_index(r))
            }))
        }
    }
}

/// κ^{(ρ)}(A) = Σ_x Σ_m μ₁^{(m)}/μ₂·P^x[H̃_A > m].
///
/// The weights μ₁^{(m)}/μ₂ sum to (μ₂ + μ₁)/μ₂, so m is drawn from the
/// normalized weights and the sum is rescaled.
pub fn kappa_rho(a: &PointSet, rho: &LengthDistribution, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    nonempty(a)?;
    let m1 = rho.moment(1);
    let m2 = rho.moment(2);
    if m2 <= 0.0 {
        return invalid("κ needs μ₂ > 0");
    }
    let scale = (m2 + m1) / m2;
    match cfg.method {
        Method::ExactDirichlet => {
            let m_max = exact_horizon(rho)?;
            let mut total = 0.0;
            for x in sorted_points(a) {
                let prof = survival_profile(a, x, m_max as usize);
                total += (0..=m_max).map(|m| rho.tail_moment(1, m) / m2 * prof[m as usize]).sum::<f64>();
            }
            Ok(Estimate::exact(total, 0.0))
        }
        Method::MonteCarlo => {
            let ob = Obstacle::new(a.clone());
            let e = sum_over_set(a, cfg, stream, |x, s| {
                let mut rng = s.into_rng();
                rho_escape_draws(&ob, x, cfg.mc_walks, &mut rng, |r| rho.sample_size_tail_index(r))
            });
            Ok(e.scaled(scale))
        }
    }
}

/// κ^{(ρ)} through the size-biased law: (1 + μ₁/μ₂)·cap^{(ρ̂)}(A).
pub fn kappa_via_size_biased(a: &PointSet, rho: &LengthDistribution, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    let hat = rho.size_biased()?;
    let factor = 1.0 + rho.moment(1) / rho.moment(2);
    Ok(rho_capacity(a, &hat, cfg, stream)?.scaled(factor))
}

fn hitting_radius(x: &Point, a: &PointSet, cfg: &PotentialConfig, center: &Point) -> Result<i64> {
    let diam = set_diam(a);
    let far = x.dist_inf(center);
    let r = cfg.annulus_radius.unwrap_or(4 * diam.max(far) + 16);
    if r <= diam.max(far) {
        return invalid(format!("annulus radius {r} must exceed diam {diam} and |x − center| {far}"));
    }
    Ok(r)
}

/// h(x, A) = P^x[H_A < ∞].
pub fn hitting_probability(x: Point, a: &PointSet, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    let d = nonempty(a)?;
    if a.contains(&x) {
        return Ok(Estimate::exact(1.0, 0.0));
    }
    let ob = Obstacle::new(a.clone());
    let center = cfg.center_for(&ob);
    let r = hitting_radius(&x, a, cfg, &center)?;
    let bias = tail_bias(a.len(), r - set_diam(a) / 2, d);
    match cfg.method {
        Method::ExactDirichlet => {
            let s = CubeSolver::hitting(center, r, a, cfg.tol)?;
            Ok(Estimate::exact(s.value(&x), bias))
        }
        Method::MonteCarlo => {
            let stop = Stop::kill(center, r);
            let hits: usize = par_walks(cfg.mc_walks, &stream, |rng| {
                usize::from(matches!(run_walk(&ob, x, stop, rng), Exit::Hit { .. }))
            })
            .into_iter()
            .sum();
            let (p, v) = bernoulli_mean(hits, cfg.mc_walks);
            Ok(Estimate { value: p, stderr: (v / cfg.mc_walks as f64).sqrt(), bias_bound: bias, n_samples: cfg.mc_walks as u64 })
        }
    }
}

/// h(x, A) through the last-exit decomposition Σ_y g(x, y)·e_A(y), with the
/// Green's function and escape probabilities of the walk killed on the same ball.
pub fn hitting_probability_decomposed(x: Point, a: &PointSet, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    let d = nonempty(a)?;
    if a.contains(&x) {
        return Ok(Estimate::exact(1.0, 0.0));
    }
    let ob = Obstacle::new(a.clone());
    let center = cfg.center_for(&ob);
    let r = hitting_radius(&x, a, cfg, &center)?;
    let bias = tail_bias(a.len(), r - set_diam(a) / 2, d);
    let pts = sorted_points(a);
    match cfg.method {
        Method::ExactDirichlet => {
            let h = CubeSolver::hitting(center, r, a, cfg.tol)?;
            let mut total = 0.0;
            for y in &pts {
                let g = CubeSolver::green(center, r, y, cfg.tol)?;
                total += g.value(&x) * h.escape(y);
            }
            Ok(Estimate::exact(total, bias))
        }
        Method::MonteCarlo => {
            let stop = Stop::kill(center, r);
            let mut total = 0.0;
            let mut var = 0.0;
            for (i, y) in pts.iter().enumerate() {
                let mut rng = stream.child(i as u64).into_rng();
                let esc = (0..cfg.mc_walks).filter(|_| !matches!(run_walk(&ob, *y, stop, &mut rng), Exit::Hit { .. })).count();
                let (e, ve) = bernoulli_mean(esc, cfg.mc_walks);
                let single = Obstacle::from_points([*y]);
                let visits: Vec<f64> =
                    (0..cfg.mc_walks).map(|_| walker::count_visits(&single, x, stop, &mut rng) as f64).collect();
                let g = Summary::of(&visits);
                total += g.mean * e;
                // Var of a product of independent means.
                let vg = g.var / cfg.mc_walks as f64;
                let ve = ve / cfg.mc_walks as f64;
                var += vg * e * e + ve * g.mean * g.mean + vg * ve;
            }
            Ok(Estimate { value: total, stderr: var.sqrt(), bias_bound: bias, n_samples: 2 * pts.len() as u64 * cfg.mc_walks as u64 })
        }
    }
}

/// φ^{(ρ)}(A, B) = Σ_{x∈A, y∈B} e_A^{(ρ)}(x)·e_B^{(ρ)}(y)·g(x, y).
///
/// Monte Carlo route: for sampled x ∈ A, ê_A^{(ρ)}(x) times the visits of an
/// independent walk from x to B, each visit weighted by ê_B^{(ρ)} at the visited
/// point. The ê_B values come from streams keyed by the point itself, so the
/// result does not depend on evaluation order.
pub fn phi_rho(a: &PointSet, b: &PointSet, rho: &LengthDistribution, cfg: &PotentialConfig, stream: RngStream) -> Result<Estimate> {
    cfg.validate()?;
    let d = nonempty(a)?;
    nonempty(b)?;
    let mut union = a.clone();
    union.extend(b.iter().copied());
    let diam = set_diam(&union);
    let r = cfg.radius_for(diam)?;
    let bias = tail_bias(a.len() * b.len(), r - diam / 2, d);
    let ob_b = Obstacle::new(b.clone());
    let center = cfg.kill_center.unwrap_or_else(|| Obstacle::new(union).center());
    match cfg.method {
        Method::ExactDirichlet => {
            let g = SymmetricSolver::green_origin(d, r + diam, cfg.tol)?;
            let ea: Vec<(Point, f64)> = sorted_points(a)
                .into_iter()
                .map(|x| rho_equilibrium(a, rho, x, cfg, stream.clone()).map(|e| (x, e.value)))
                .collect::<Result<_>>()?;
            let eb: Vec<(Point, f64)> = sorted_points(b)
                .into_iter()
                .map(|y| rho_equilibrium(b, rho, y, cfg, stream.clone()).map(|e| (y, e.value)))
                .collect::<Result<_>>()?;
            let mut total = 0.0;
            for (x, wx) in &ea {
                for (y, wy) in &eb {
                    let z = x.sub(y);
                    let c: Vec<i64> = z.coords().iter().map(|&v| v as i64).collect();
                    total += wx * wy * g.value(&c);
                }
            }
            Ok(Estimate::exact(total, bias))
        }
        Method::MonteCarlo => {
            let ob_a = Obstacle::new(a.clone());
            let eb_stream = stream.child_str("eb");
            let eb_at = |y: &Point| -> f64 {
                let mut rng = eb_stream.child(point_label(y)).into_rng();
                rho_escape_draws(&ob_b, y, cfg.mc_walks, &mut rng, |r| rho.sample_tail_index(r)).0
            };
            let stop = Stop::kill(center, r);
            let mut e = sum_over_set(a, cfg, stream.child_str("ea"), |x, s| {
                let mut rng = s.into_rng();
                let (ea, _) = rho_escape_draws(&ob_a, x, cfg.mc_walks, &mut rng, |r| rho.sample_tail_index(r));
                if ea == 0.0 {
                    return (0.0, 0.0);
                }
                let mut memo: PointMap<f64> = PointMap::default();
                let mut draws = Vec::with_capacity(cfg.mc_walks);
                for _ in 0..cfg.mc_walks {
                    let mut acc = 0.0;
                    let mut p = *x;
                    if ob_b.contains(&p) {
                        acc += *memo.entry(p).or_insert_with(|| eb_at(&p));
                    }
                    while let Exit::Hit { at, .. } = run_walk(&ob_b, p, stop, &mut rng) {
                        acc += *memo.entry(at).or_insert_with(|| eb_at(&at));
                        p = at;
                    }
                    draws.push(acc);
                }
                let s = Summary::of(&draws);
                (ea * s.mean, ea * ea * s.var)
            });
            e.bias_bound = bias;
            Ok(e)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonStats {
    pub d: usize,
    pub t: usize,
    /// cap(X[0,T])·(1 + log T·1_{d=4})/T per replica.
    pub values: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    pub stderr: f64,
    /// Mean of cap(X[0,T])·log T/T (d = 4 only; equals `mean` otherwise).
    pub mean_log: f64,
    pub stderr_log: f64,
    /// Fraction of replicas with |value/mean − 1| > 0.1.
    pub deviation_frac: f64,
    pub truncated: bool,
}

/// Sample mean and spread of the normalized capacity of independent traces X[0,T].
///
/// With `cfg.escape_cutoff = Some(s)` the truncated capacity cap(·, s) is used,
/// otherwise the capacity of the walk killed at the annulus radius.
pub fn estimate_epsilon(d: Dim, t: usize, replicas: usize, cfg: &PotentialConfig, stream: RngStream) -> Result<EpsilonStats> {
    cfg.validate()?;
    if replicas == 0 {
        return invalid("replicas must be ≥ 1");
    }
    let values: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let s = stream.child(i as u64);
            let walk = sample_srw(Point::origin(d), t, s.child_str("walk"));
            let range = walk.range();
            let cap = match cfg.escape_cutoff {
                Some(cut) => truncated_capacity(&range, cut, cfg, s.child_str("cap"))?,
                None => capacity(&range, cfg, s.child_str("cap"))?,
            };
            Ok(cap.value * log_factor(t as f64, d) / t as f64)
        })
        .collect::<Result<_>>()?;
    let s = Summary::of(&values);
    let conv = if d.get() == 4 { (t as f64).ln() / (1.0 + (t as f64).ln()) } else { 1.0 };
    let logs: Vec<f64> = values.iter().map(|v| v * conv).collect();
    let sl = Summary::of(&logs);
    let dev = values.iter().filter(|v| (*v / s.mean - 1.0).abs() > 0.1).count() as f64 / replicas as f64;
    Ok(EpsilonStats {
        d: d.get(),
        t,
        values,
        mean: s.mean,
        var: s.var,
        stderr: s.stderr(),
        mean_log: sl.mean,
        stderr_log: sl.stderr(),
        deviation_frac: dev,
        truncated: cfg.escape_cutoff.is_some(),
    })
}

/// One CSV row in the estimator output format.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateRow {
    pub quantity: String,
    pub d: usize,
    pub params: String,
    pub estimate: f64,
    pub stderr: f64,
    pub bias_bound: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl EstimateRow {
    pub fn new(quantity: &str, d: Dim, params: String, e: &Estimate, seed: u64) -> Self {
        EstimateRow {
            quantity: quantity.into(),
            d: d.get(),
            params,
            estimate: e.value,
            stderr: e.stderr,
            bias_bound: e.bias_bound,
            n_samples: e.n_samples,
            seed,
        }
    }
}

pub fn write_estimates<W: Write>(w: W, rows: &[EstimateRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Stream label derived from a point's coordinates.
pub fn point_label(p: &Point) -> u64 {
    label_hash(&format!("{:?}", p.coords()))
}
