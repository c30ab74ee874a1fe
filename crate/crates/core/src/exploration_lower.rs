//! Layer exploration of the origin's cluster, the dominating process built
//! from fresh independent clouds, their coupling, and the (W_k, V_k) tracker.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fri::{meets, restrict, sample_hitting, sample_hitting_avoiding, HittingOptions, TrajectoryCloud};
use crate::lattice_core::{Dim, Point, PointSet};
use crate::length_law::LengthDistribution;
use crate::potential::{kappa_rho, PotentialConfig};
use crate::rng::RngStream;
use crate::stats::Summary;

pub const DEFAULT_MAX_LAYERS: usize = 32;
pub const VERTEX_CAP: usize = 100_000_000;

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub max_layers: usize,
    /// Abort when the cumulative vertex set exceeds this.
    pub vertex_cap: usize,
    pub hitting: HittingOptions,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig { max_layers: DEFAULT_MAX_LAYERS, vertex_cap: VERTEX_CAP, hitting: HittingOptions::default() }
    }
}

impl ExploreConfig {
    pub fn with_max_layers(mut self, k: usize) -> Self {
        self.max_layers = k;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_layers == 0 {
            return invalid("max_layers must be ≥ 1");
        }
        Ok(())
    }
}

/// (𝓛_k, L_k)_{k ≥ 0} with 𝓛₀ = ∅ and L₀ = {0}.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub layers: Vec<TrajectoryCloud>,
    pub vertex_layers: Vec<PointSet>,
    /// The last layer was nonempty when max_layers was reached.
    pub truncated: bool,
}

impl LayerRecord {
    fn start(d: Dim) -> Self {
        LayerRecord {
            layers: vec![TrajectoryCloud::new()],
            vertex_layers: vec![[Point::origin(d)].into_iter().collect()],
            truncated: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// ∪_k 𝓛_k.
    pub fn all_trajectories(&self) -> TrajectoryCloud {
        self.layers.iter().fold(TrajectoryCloud::new(), |acc, l| acc.union(l))
    }

    /// ∪_k L_k.
    pub fn all_vertices(&self) -> PointSet {
        self.vertex_layers.iter().flatten().copied().collect()
    }

    fn push(&mut self, layer: TrajectoryCloud) {
        let v = layer.vertex_set();
        self.layers.push(layer);
        self.vertex_layers.push(v);
    }
}

/// Where layers come from: 𝒳[A; B] for the current A and exclusion B.
pub trait HitSource {
    fn layer(&mut self, k: usize, a: &PointSet, avoid: &PointSet) -> Result<TrajectoryCloud>;
}

/// The rerooted hitting sampler on all of Z^d.
pub struct Rerooted<'a> {
    pub u: f64,
    pub rho: &'a LengthDistribution,
    pub opts: &'a HittingOptions,
    pub stream: RngStream,
}

impl HitSource for Rerooted<'_> {
    fn layer(&mut self, k: usize, a: &PointSet, avoid: &PointSet) -> Result<TrajectoryCloud> {
        // Paths avoiding B that hit A hit A ∖ B, which is a smaller target.
        let target: PointSet = a.iter().filter(|p| !avoid.contains(p)).copied().collect();
        if target.is_empty() {
            return Ok(TrajectoryCloud::new());
        }
        sample_hitting_avoiding(self.u, self.rho, &target, avoid, self.opts, self.stream.child(k as u64))?.into_cloud()
    }
}

/// A fixed cloud, typically a window sample.
pub struct FixedCloud<'a>(pub &'a TrajectoryCloud);

impl HitSource for FixedCloud<'_> {
    fn layer(&mut self, _k: usize, a: &PointSet, avoid: &PointSet) -> Result<TrajectoryCloud> {
        Ok(restrict(self.0, a, avoid))
    }
}

fn check_cap(total: usize, cap: usize) -> Result<()> {
    if total > cap {
        return Err(Error::Budget(format!("cumulative vertex set exceeded {cap} points")));
    }
    Ok(())
}

/// 𝓛_{k+1} = 𝒳[L_k; ∪_{i ≤ k−1} L_i] from any source.
pub fn explore_with(src: &mut dyn HitSource, d: Dim, cfg: &ExploreConfig) -> Result<LayerRecord> {
    cfg.validate()?;
    let mut rec = LayerRecord::start(d);
    let mut before = PointSet::default(); // ∪_{i ≤ k−1} L_i
    for k in 0..cfg.max_layers {
        let layer = src.layer(k, &rec.vertex_layers[k], &before)?;
        if layer.entries().iter().any(|e| meets(&e.traj, &before)) {
            return Err(Error::Invariant(format!("layer {} meets an earlier vertex layer", k + 1)));
        }
        let empty = layer.is_empty();
        before.extend(rec.vertex_layers[k].iter().copied());
        rec.push(layer);
        check_cap(before.len() + rec.vertex_layers[k + 1].len(), cfg.vertex_cap)?;
        if empty {
            return Ok(rec);
        }
    }
    rec.truncated = true;
    Ok(rec)
}

pub fn explore_layers(u: f64, rho: &LengthDistribution, d: Dim, cfg: &ExploreConfig, stream: RngStream) -> Result<LayerRecord> {
    explore_with(&mut Rerooted { u, rho, opts: &cfg.hitting, stream }, d, cfg)
}

/// 𝓛′_{k+1} = 𝒥_{k+1}[L′_k] with fresh independent clouds 𝒥_k.
pub fn explore_dominating(
    u: f64,
    rho: &LengthDistribution,
    d: Dim,
    cfg: &ExploreConfig,
    stream: RngStream,
) -> Result<LayerRecord> {
    Ok(explore_coupled(u, rho, d, cfg, stream)?.1)
}

/// Both processes from the same fresh clouds: 𝓛′_{k+1} = 𝒥_{k+1}[L′_k] and
/// 𝓛_{k+1} = 𝒥_{k+1}[L_k; ∪_{i ≤ k−1} L_i], so 𝓛_k ⊆ 𝓛′_k on every path.
pub fn explore_coupled(
    u: f64,
    rho: &LengthDistribution,
    d: Dim,
    cfg: &ExploreConfig,
    stream: RngStream,
) -> Result<(LayerRecord, LayerRecord)> {
    cfg.validate()?;
    let mut plain = LayerRecord::start(d);
    let mut dom = LayerRecord::start(d);
    let mut before = PointSet::default();
    let mut plain_done = false;
    let mut total_dom = 1usize;
    for k in 0..cfg.max_layers {
        // 𝒥_{k+1}[L′_k]; the unprimed layer is a restriction of it since L_k ⊆ L′_k.
        let fresh = sample_hitting(u, rho, &dom.vertex_layers[k], &cfg.hitting, stream.child(k as u64))?.into_cloud()?;
        let layer = if plain_done { TrajectoryCloud::new() } else { restrict(&fresh, &plain.vertex_layers[k], &before) };
        if !layer.is_submultiset_of(&fresh) {
            return Err(Error::Invariant(format!("coupled layer {} not contained in the dominating layer", k + 1)));
        }
        if !plain_done {
            before.extend(plain.vertex_layers[k].iter().copied());
            plain_done = layer.is_empty();
            plain.push(layer);
        }
        let dom_empty = fresh.is_empty();
        dom.push(fresh);
        total_dom += dom.vertex_layers[k + 1].len();
        check_cap(total_dom, cfg.vertex_cap)?;
        if dom_empty {
            return Ok((plain, dom));
        }
    }
    plain.truncated = !plain_done;
    dom.truncated = true;
    Ok((plain, dom))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecursionRow {
    pub k: usize,
    /// Mean |𝓛′_k| and |L′_k| over replicas.
    pub trajectories: f64,
    pub vertices: f64,
    /// Mean κ^{(ρ)}(L_k) for the unprimed process.
    pub kappa: f64,
    pub w: f64,
    pub w_stderr: f64,
    pub v: f64,
    pub v_stderr: f64,
    /// Ŵ_k / Ŵ_{k−1} and V̂_k / Ŵ_{k−1}; NaN at k = 0 or when Ŵ_{k−1} = 0.
    pub w_ratio: f64,
    pub w_ratio_stderr: f64,
    pub v_over_w: f64,
}

#[derive(Clone, Debug)]
pub struct RecursionTrack {
    pub rows: Vec<RecursionRow>,
    pub truncated_replicas: usize,
}

/// Ratio of means with a delta-method standard error from paired samples.
fn ratio_of_means(num: &[f64], den: &[f64]) -> (f64, f64) {
    let (a, b) = (Summary::of(num), Summary::of(den));
    if b.mean == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let r = a.mean / b.mean;
    let n = num.len() as f64;
    let cov = if num.len() > 1 {
        num.iter().zip(den).map(|(x, y)| (x - a.mean) * (y - b.mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let var = (a.var - 2.0 * r * cov + r * r * b.var).max(0.0) / (n * b.mean * b.mean);
    (r, var.sqrt())
}

/// Monte Carlo W_k = E[κ^{(ρ)}(L′_k)] and V_k over coupled replicas.
pub fn track_recursion(
    u: f64,
    rho: &LengthDistribution,
    d: Dim,
    replicas: usize,
    cfg: &ExploreConfig,
    kappa_cfg: &PotentialConfig,
    stream: RngStream,
) -> Result<RecursionTrack> {
    if replicas == 0 {
        return invalid("replicas must be ≥ 1");
    }
    cfg.validate()?;
    let kmax = cfg.max_layers;
    let origin: PointSet = [Point::origin(d)].into_iter().collect();
    let k0 = kappa_rho(&origin, rho, kappa_cfg, stream.child_str("kappa0"))?.value;
    let kappa = |a: &PointSet, s: RngStream| -> Result<f64> {
        if a.is_empty() {
            Ok(0.0)
        } else if a == &origin {
            Ok(k0)
        } else {
            Ok(kappa_rho(a, rho, kappa_cfg, s)?.value)
        }
    };
    type Rep = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, bool);
    let reps: Vec<Rep> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Rep> {
            let s = stream.child_str("replica").child(r as u64);
            let (plain, dom) = explore_coupled(u, rho, d, cfg, s.child_str("explore"))?;
            let mut w = vec![0.0; kmax + 1];
            let mut kp = vec![0.0; kmax + 1];
            let mut sizes = vec![0.0; kmax + 1];
            let mut trajs = vec![0.0; kmax + 1];
            for k in 0..=kmax {
                if let Some(l) = dom.vertex_layers.get(k) {
                    w[k] = kappa(l, s.child_str("w").child(k as u64))?;
                    sizes[k] = l.len() as f64;
                    trajs[k] = dom.layers[k].len() as f64;
                }
                if let Some(l) = plain.vertex_layers.get(k) {
                    kp[k] = kappa(l, s.child_str("k").child(k as u64))?;
                }
            }
            Ok((w, kp, sizes, trajs, dom.truncated))
        })
        .collect::<Result<_>>()?;
    let log_norm = if d.get() == 4 { 1.0 / rho.moment(1).ln() } else { 1.0 };
    let col = |f: &dyn Fn(&Rep) -> f64| -> Vec<f64> { reps.iter().map(f).collect() };
    let mut rows = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let w = col(&|r| r.0[k]);
        let v: Vec<f64> = col(&|r| r.2[k] * log_norm);
        let (ws, vs) = (Summary::of(&w), Summary::of(&v));
        let (ratio, ratio_se, v_over_w) = if k == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let prev = col(&|r| r.0[k - 1]);
            let (r, se) = ratio_of_means(&w, &prev);
            (r, se, ratio_of_means(&v, &prev).0)
        };
        rows.push(RecursionRow {
            k,
            trajectories: Summary::of(&col(&|r| r.3[k])).mean,
            vertices: Summary::of(&col(&|r| r.2[k])).mean,
            kappa: Summary::of(&col(&|r| r.1[k])).mean,
            w: ws.mean,
            w_stderr: ws.stderr(),
            v: vs.mean,
            v_stderr: vs.stderr(),
            w_ratio: ratio,
            w_ratio_stderr: ratio_se,
            v_over_w,
        });
    }
    Ok(RecursionTrack { rows, truncated_replicas: reps.iter().filter(|r| r.4).count() })
}

pub fn write_recursion<W: Write>(w: W, rows: &[RecursionRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
