use std::sync::{Arc, Mutex};

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fri::{backward_avoiding, reroot};
use crate::lattice_core::{
    hitting_time, sample_srw_with, sub_path, trajectory_to_json, Dim, LatticeBox, Point, PointSet, Trajectory,
};
use crate::length_law::{default_eps, LengthDistribution, EPS_4};
use crate::potential::{capacity, equilibrium_measure, truncated_capacity, EquilibriumMeasure, Estimate, PotentialConfig};
use crate::rng::{label_hash, RngStream};

/// The fixed exponent c.
pub const C_EXP: f64 = 0.01;

/// Replacements for the formula values of L_n and I_n.
///
/// With c = 0.01 the sausage bound of 𝓔₃ is below the volume of a single
/// L_n-box for every computable R_n in d = 4 (and for R_n < 190 in d = 5), so
/// desk experiments that need typical trajectories set these explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleOverrides {
    pub l_n: Option<f64>,
    pub i_n: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalityParams {
    pub d: Dim,
    /// μ₁(ρ).
    pub mu1: f64,
    pub eps_d: f64,
    pub k: f64,
    pub big_k: f64,
    pub m: f64,
    pub theta1: f64,
    pub theta2: f64,
    #[serde(default)]
    pub overrides: ScaleOverrides,
    /// Error bars of the Monte Carlo capacity verdicts are ±z standard errors
    /// plus the bias bound.
    pub z: f64,
    pub potential: PotentialConfig,
}

impl TypicalityParams {
    /// Defaults k = 0.25, K = 4, M = 4, θ₁ = θ₂ = 0.1.
    pub fn new(rho: &LengthDistribution, d: Dim) -> Result<Self> {
        let eps_d = default_eps(d)
            .ok_or_else(|| Error::Validation(format!("no default ε_d for d = {}; set eps_d explicitly", d.get())))?;
        let p = TypicalityParams {
            d,
            mu1: rho.moment(1),
            eps_d,
            k: 0.25,
            big_k: 4.0,
            m: 4.0,
            theta1: 0.1,
            theta2: 0.1,
            overrides: ScaleOverrides::default(),
            z: 2.0,
            potential: PotentialConfig::monte_carlo(64),
        };
        p.validate()?;
        Ok(p)
    }

    /// Desk preset: K = 2, θ₁ = 0.9, L_n = 0.99, I_n = 8. The sausage in 𝓔₃
    /// is then the range itself, which fits under the bound for T ≤ 2R_n², the
    /// capacity band is wide enough for walks of a few hundred steps, and the
    /// proper-part window R_n²/I_n stays shorter than the walk.
    pub fn desk(rho: &LengthDistribution, d: Dim) -> Result<Self> {
        let p = TypicalityParams {
            big_k: 2.0,
            theta1: 0.9,
            overrides: ScaleOverrides { l_n: Some(0.99), i_n: Some(8.0) },
            ..TypicalityParams::new(rho, d)?
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_n() < 2 {
            return invalid(format!("R_n = ⌊√μ₁⌋ must be ≥ 2 (μ₁ = {})", self.mu1));
        }
        if !(self.k > 0.0 && self.k < self.big_k) {
            return invalid("need 0 < k < K");
        }
        if self.m <= 0.0 {
            return invalid("M must be positive");
        }
        for (name, t) in [("θ₁", self.theta1), ("θ₂", self.theta2)] {
            if !(t > 0.0 && t < 1.0) {
                return invalid(format!("{name} must lie in (0, 1)"));
            }
        }
        if !(self.eps_d > 0.0) || !(self.z >= 0.0) {
            return invalid("ε_d must be positive and z non-negative");
        }
        if self.overrides.l_n.is_some_and(|v| !(v > 0.0)) || self.overrides.i_n.is_some_and(|v| !(v > 0.0)) {
            return invalid("scale overrides must be positive");
        }
        Ok(())
    }

    pub fn r_n(&self) -> i64 {
        self.mu1.sqrt().floor() as i64
    }

    fn rf(&self) -> f64 {
        self.r_n() as f64
    }

    fn d4(&self) -> bool {
        self.d.get() == 4
    }

    pub fn l_n(&self) -> f64 {
        let r = self.rf();
        self.overrides.l_n.unwrap_or_else(|| {
            if self.d4() {
                r * r.ln().powf(-C_EXP)
            } else {
                r.powf((2.0 + C_EXP) / (self.d.get() as f64 - 2.0))
            }
        })
    }

    pub fn i_n(&self) -> f64 {
        let r = self.rf();
        self.overrides.i_n.unwrap_or_else(|| if self.d4() { r.ln().powf(C_EXP) } else { r.powf(C_EXP) })
    }

    /// Block length T′_n of 𝓔₄.
    pub fn t_prime(&self) -> usize {
        let r = self.rf();
        let t = if self.d4() { (r * r / self.mu1.ln()).floor() } else { r.powf(2.0 - C_EXP / 4.0).floor() };
        (t as usize).max(1)
    }

    /// C̃_n, the capacity of R_n² steps of walk.
    pub fn c_tilde(&self) -> f64 {
        let r2 = self.rf() * self.rf();
        if self.d4() {
            r2 / r2.ln()
        } else {
            r2
        }
    }

    /// z_n = ⌊R_n/2⌋·(1, …, 1).
    pub fn z_n(&self) -> Point {
        Point::diag(self.d, (self.r_n() / 2) as i32)
    }

    /// Capacity per step: ε_d for d ≥ 5, (π²/8)/log μ₁ for d = 4.
    pub fn h_n(&self) -> f64 {
        if self.d4() {
            EPS_4 / self.mu1.ln()
        } else {
            self.eps_d
        }
    }

    /// [kR_n², KR_n²] as integer lengths.
    pub fn duration_band(&self) -> (u64, u64) {
        let r2 = self.rf() * self.rf();
        ((self.k * r2).ceil() as u64, (self.big_k * r2).floor() as u64)
    }

    /// Half-width R_n²/I_n of the time window removed by the proper part.
    pub fn pp_halfwidth(&self) -> f64 {
        self.rf() * self.rf() / self.i_n()
    }

    /// R_n²·L_n^{d−2}·I_n^{1/3}.
    pub fn e3_bound(&self) -> f64 {
        self.rf() * self.rf() * self.l_n().powi(self.d.get() as i32 - 2) * self.i_n().cbrt()
    }

    /// Equilibrium-measure threshold of the *-proper part.
    pub fn star_threshold(&self) -> f64 {
        if self.d4() {
            self.theta2 / self.mu1.ln()
        } else {
            self.theta2
        }
    }

    /// The d = 4 return horizon R_n²·log^{−10} R_n (at least one step).
    pub fn star_horizon_d4(&self) -> u64 {
        let r = self.rf();
        ((r * r * r.ln().powi(-10)).floor() as u64).max(1)
    }

    /// B_x^n = x + [0, R_n)^d.
    pub fn coarse_box(&self, x: &Point) -> LatticeBox {
        LatticeBox::corner(*x, self.r_n() as u32)
    }

    /// B̃_x^n = B(x + z_n, R_n/4).
    pub fn inner_box(&self, x: &Point) -> LatticeBox {
        LatticeBox::centered(x.add(&self.z_n()), (self.rf() / 4.0).floor() as u32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    /// Layers per round.
    pub alpha: usize,
    /// Seed size.
    pub beta: usize,
    /// Maximal offspring per parent in a good round.
    pub k1: usize,
    pub gamma: f64,
    /// Target failure bound per round.
    pub q: f64,
    /// Perturbation ε of u_n^± = (1 ± ε)·u_n.
    pub eps: f64,
}

impl AlgorithmParams {
    /// Defaults α = 3, β = 3, k₁ = 8, γ = 2αM + 2, q = 0.1, ε = 0.25.
    pub fn new(typ: &TypicalityParams) -> Self {
        AlgorithmParams { alpha: 3, beta: 3, k1: 8, gamma: 6.0 * typ.m + 2.0, q: 0.1, eps: 0.25 }
    }

    pub fn with_alpha(mut self, alpha: usize, typ: &TypicalityParams) -> Self {
        self.alpha = alpha;
        self.gamma = 2.0 * alpha as f64 * typ.m + 2.0;
        self
    }

    pub fn validate(&self, typ: &TypicalityParams) -> Result<()> {
        if self.alpha == 0 || self.beta == 0 || self.k1 == 0 {
            return invalid("α, β and k₁ must be ≥ 1");
        }
        let g = 2.0 * self.alpha as f64 * typ.m + 2.0;
        if (self.gamma - g).abs() > 1e-9 {
            return invalid(format!("γ = {} but 2αM + 2 = {g}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return invalid("q must lie in [0, 1]");
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return invalid("ε must lie in (0, 1/2)");
        }
        Ok(())
    }

    /// ℓ∞ radius 2γR_n of the neighbourhood ruined by a failed round.
    pub fn ruin_radius(&self, typ: &TypicalityParams) -> i64 {
        (2.0 * self.gamma * typ.r_n() as f64).floor() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Within error bars of the bound; counted as a failure.
    Uncertain,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    fn and(self, o: Verdict) -> Verdict {
        match (self, o) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Uncertain, _) | (_, Verdict::Uncertain) => Verdict::Uncertain,
            _ => Verdict::Pass,
        }
    }

    fn of(ok: bool) -> Verdict {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

fn slack(e: &Estimate, z: f64) -> f64 {
    z * e.stderr + e.bias_bound
}

/// Three-valued e < bound.
pub(crate) fn lt(e: &Estimate, bound: f64, z: f64) -> Verdict {
    let s = slack(e, z);
    if e.value + s < bound {
        Verdict::Pass
    } else if e.value - s >= bound {
        Verdict::Fail
    } else {
        Verdict::Uncertain
    }
}

fn le(e: &Estimate, bound: f64, z: f64) -> Verdict {
    let s = slack(e, z);
    if e.value + s <= bound {
        Verdict::Pass
    } else if e.value - s > bound {
        Verdict::Fail
    } else {
        Verdict::Uncertain
    }
}

fn gt(e: &Estimate, bound: f64, z: f64) -> Verdict {
    let s = slack(e, z);
    if e.value - s > bound {
        Verdict::Pass
    } else if e.value + s <= bound {
        Verdict::Fail
    } else {
        Verdict::Uncertain
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Event {
    E1,
    E2,
    E3,
    E4,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Typicality {
    /// Verdicts for 𝓔₁..𝓔₄ in order.
    pub verdicts: [Verdict; 4],
}

impl Typicality {
    pub fn typical(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed())
    }

    /// Events that failed or were uncertain.
    pub fn failed(&self) -> Vec<Event> {
        [Event::E1, Event::E2, Event::E3, Event::E4].into_iter().zip(self.verdicts).filter(|(_, v)| !v.passed()).map(|(e, _)| e).collect()
    }
}

fn e1(eta: &Trajectory, p: &TypicalityParams) -> Verdict {
    let (lo, hi) = p.duration_band();
    let t = eta.len() as u64;
    let reach = (p.m * p.rf()).floor() as i64;
    let start = eta.start();
    Verdict::of(t >= lo && t <= hi && eta.points().all(|x| x.dist_inf(&start) <= reach))
}

fn e2(eta: &Trajectory, p: &TypicalityParams, stream: RngStream) -> Result<Verdict> {
    let range = eta.range();
    let t = eta.len() as f64;
    let (lo, hi) = ((1.0 - p.theta1.powi(2)) * p.h_n() * t, (1.0 + p.theta1.powi(2)) * p.h_n() * t);
    let cap = capacity(&range, &p.potential, stream.child_str("cap"))?;
    let upper = if p.d4() {
        let s = (p.rf() * p.rf()) as u64;
        lt(&truncated_capacity(&range, s, &p.potential, stream.child_str("trunc"))?, hi, p.z)
    } else {
        lt(&cap, hi, p.z)
    };
    Ok(gt(&cap, lo, p.z).and(upper))
}

fn e3(eta: &Trajectory, p: &TypicalityParams) -> Verdict {
    let bound = p.e3_bound();
    let r = p.l_n().floor() as u32;
    let mut seen = PointSet::default();
    for x in eta.range() {
        for y in LatticeBox::centered(x, r).points() {
            seen.insert(y);
        }
        if seen.len() as f64 >= bound {
            return Verdict::Fail;
        }
    }
    Verdict::Pass
}

fn e4(eta: &Trajectory, p: &TypicalityParams, stream: RngStream) -> Result<Verdict> {
    let tp = p.t_prime();
    let t = eta.len();
    let bound = (1.0 + p.theta1.powi(2)) * p.h_n() * tp as f64;
    let diam_bound = 0.5 * (t as f64).sqrt() * p.mu1.ln().powf(-C_EXP);
    let mut pieces = Vec::new();
    let mut j = 0;
    while j * tp <= t {
        pieces.push(sub_path(eta, j * tp, ((j + 1) * tp).min(t))?);
        j += 1;
    }
    if p.d4() && pieces.iter().any(|s| s.diam() as f64 >= diam_bound) {
        return Ok(Verdict::Fail);
    }
    let mut v = Verdict::Pass;
    for (j, s) in pieces.iter().enumerate() {
        let cap = capacity(&s.range(), &p.potential, stream.child(j as u64))?;
        v = v.and(le(&cap, bound, p.z));
        if v == Verdict::Fail {
            break;
        }
    }
    Ok(v)
}

/// Verdicts for all four events; every Monte Carlo estimate is keyed to `stream`.
pub fn classify_typical(eta: &Trajectory, p: &TypicalityParams, stream: RngStream) -> Result<Typicality> {
    Ok(Typicality {
        verdicts: [
            e1(eta, p),
            e2(eta, p, stream.child_str("e2"))?,
            e3(eta, p),
            e4(eta, p, stream.child_str("e4"))?,
        ],
    })
}

/// Same answer as `classify_typical(..).typical()`, stopping at the first
/// event that does not pass (cheap events first).
pub fn is_typical(eta: &Trajectory, p: &TypicalityParams, stream: RngStream) -> Result<bool> {
    Ok(e1(eta, p).passed()
        && e3(eta, p).passed()
        && e4(eta, p, stream.child_str("e4"))?.passed()
        && e2(eta, p, stream.child_str("e2"))?.passed())
}

#[derive(Clone, Debug)]
pub struct StarPart {
    pub points: PointSet,
    /// e_η on range(η).
    pub e: EquilibriumMeasure,
}

impl StarPart {
    /// ē_η: e_η restricted to η̂, summed.
    pub fn mass(&self) -> f64 {
        let mut v: Vec<(Point, f64)> = self.points.iter().map(|x| (*x, self.e.get(x))).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v.iter().map(|t| t.1).sum()
    }
}

/// η̂: points of range(η) with e_η ≥ θ₂ (÷ log μ₁ in d = 4, where the
/// return-probability condition is also imposed).
pub fn star_proper_part(eta: &Trajectory, p: &TypicalityParams, stream: RngStream) -> Result<StarPart> {
    let range = eta.range();
    let e = equilibrium_measure(&range, &p.potential, stream.child_str("e"))?;
    let th = p.star_threshold();
    let mut points: PointSet = range.iter().copied().filter(|x| e.get(x) >= th).collect();
    if p.d4() {
        let cfg = PotentialConfig { escape_cutoff: Some(p.star_horizon_d4()), ..p.potential.clone() };
        let trunc = equilibrium_measure(&range, &cfg, stream.child_str("trunc"))?;
        points.retain(|x| trunc.get(x) <= (1.0 + p.theta1) * e.get(x));
    }
    Ok(StarPart { points, e })
}

/// x is within ℓ∞ distance r of D.
fn near(x: &Point, dset: &PointSet, r: u32) -> bool {
    let boxed = LatticeBox::centered(*x, r);
    if boxed.volume() <= dset.len() as u64 {
        boxed.points().any(|y| dset.contains(&y))
    } else {
        dset.iter().any(|y| y.dist_inf(x) <= r as i64)
    }
}

/// pp(η; A, D) = η̂ minus η[τ_A − R_n²/I_n, τ_A + R_n²/I_n] minus B(D, L_n).
/// If η misses A the time-window term is empty.
pub fn proper_part(eta: &Trajectory, star: &PointSet, a: &PointSet, dset: &PointSet, p: &TypicalityParams) -> PointSet {
    let mut out = star.clone();
    if let Some(tau) = hitting_time(eta, a) {
        let w = p.pp_halfwidth();
        for (s, x) in eta.points().enumerate() {
            if (s as f64 - tau as f64).abs() <= w {
                out.remove(&x);
            }
        }
    }
    if !dset.is_empty() {
        let r = p.l_n().floor() as u32;
        out.retain(|x| !near(x, dset, r));
    }
    out
}

/// Stable label of a trajectory for stream derivation.
pub fn traj_label(t: &Trajectory) -> u64 {
    label_hash(&trajectory_to_json(t))
}

/// Length law (T + 1)ρ(T) restricted to [lo, hi], with m uniform on 0..=T.
#[derive(Clone, Debug)]
pub struct BandLaw {
    pub lo: u64,
    pub hi: u64,
    ts: Vec<u64>,
    index: WeightedIndex<f64>,
    /// Σ_{band} (T + 1)ρ(T) / (μ₁ + 1).
    pub mass: f64,
}

impl BandLaw {
    pub fn new(rho: &LengthDistribution, lo: u64, hi: u64) -> Result<Self> {
        if lo > hi {
            return invalid("empty length band");
        }
        let ts: Vec<u64> = (lo..=hi).collect();
        let w: Vec<f64> = ts.iter().map(|&t| (t as f64 + 1.0) * rho.pmf_at(t)).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return invalid(format!("ρ puts no mass on [{lo}, {hi}]"));
        }
        let index = WeightedIndex::new(&w).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(BandLaw { lo, hi, ts, index, mass: total / (rho.moment(1) + 1.0) })
    }

    pub fn for_params(rho: &LengthDistribution, p: &TypicalityParams) -> Result<Self> {
        let (lo, hi) = p.duration_band();
        BandLaw::new(rho, lo, hi)
    }

    /// (T, m).
    pub fn sample_split<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        let t = self.ts[self.index.sample(rng)];
        (t, rng.random_range(0..=t))
    }
}

/// ζ ~ μ_x: T from the band law, the walk X[−m, l] through x at time m.
pub(crate) fn sample_mu<R: Rng + ?Sized>(x: Point, band: &BandLaw, rng: &mut R) -> Trajectory {
    let (t, m) = band.sample_split(rng);
    let back = sample_srw_with(x, m as usize, rng);
    reroot(&back, t - m, rng)
}

/// ζ ~ μ̄*_{x,η}: as μ_x with the backward part conditioned to avoid range(η).
/// Returns the path and m; None when `budget` backward draws all return.
pub(crate) fn sample_mu_star<R: Rng + ?Sized>(
    x: Point,
    range: &PointSet,
    band: &BandLaw,
    budget: usize,
    rng: &mut R,
) -> Option<(Trajectory, u64)> {
    let (t, m) = band.sample_split(rng);
    (0..budget).find_map(|_| backward_avoiding(x, m, range, rng)).map(|back| (reroot(&back, t - m, rng), m))
}

/// Memoized typicality verdicts and *-proper parts, each keyed by the
/// trajectory so results do not depend on evaluation order.
pub struct TrajCache {
    pub params: TypicalityParams,
    stream: RngStream,
    typical: Mutex<FxHashMap<Trajectory, bool>>,
    star: Mutex<FxHashMap<Trajectory, Arc<StarPart>>>,
}

impl TrajCache {
    pub fn new(params: TypicalityParams, stream: RngStream) -> Self {
        TrajCache { params, stream, typical: Mutex::default(), star: Mutex::default() }
    }

    pub fn is_typical(&self, t: &Trajectory) -> Result<bool> {
        if let Some(v) = self.typical.lock().unwrap().get(t) {
            return Ok(*v);
        }
        let v = is_typical(t, &self.params, self.typical_stream(t))?;
        self.typical.lock().unwrap().insert(t.clone(), v);
        Ok(v)
    }

    /// Stream used for the typicality checks of `t`.
    pub fn typical_stream(&self, t: &Trajectory) -> RngStream {
        self.stream.child_str("typical").child(traj_label(t))
    }

    pub fn star(&self, t: &Trajectory) -> Result<Arc<StarPart>> {
        if let Some(v) = self.star.lock().unwrap().get(t) {
            return Ok(v.clone());
        }
        let v = Arc::new(star_proper_part(t, &self.params, self.stream.child_str("star").child(traj_label(t)))?);
        self.star.lock().unwrap().insert(t.clone(), v.clone());
        Ok(v)
    }

    /// Fill the typicality cache for many trajectories in parallel.
    pub fn warm(&self, ts: &[&Trajectory]) -> Result<()> {
        ts.par_iter().try_for_each(|t| self.is_typical(t).map(|_| ()))
    }

    /// ζ ~ μ̄_{x,η}: μ̄*_{x,η} conditioned on typicality, by rejection.
    pub(crate) fn sample_mu_bar<R: Rng + ?Sized>(
        &self,
        x: Point,
        range: &PointSet,
        band: &BandLaw,
        budget: usize,
        rng: &mut R,
    ) -> Result<Option<(Trajectory, u64)>> {
        for _ in 0..budget {
            match sample_mu_star(x, range, band, budget, rng) {
                None => return Ok(None),
                Some(z) if self.is_typical(&z.0)? => return Ok(Some(z)),
                Some(_) => {}
            }
        }
        Ok(None)
    }
}
