//! Per-kind parameter blocks and their dispatch to the owning modules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde::de::DeserializeOwned;

use super::{ExperimentConfig, Kind, OutputFile, ResultRow};
use crate::coarse_grain::{
    run_algorithm, simulate_hit_chain, write_round_records, write_statuses, x_at_sums, AlgorithmParams,
    ChainVariant, Outcome, TrajCache, TypicalityParams,
};
use crate::error::{invalid, Error, Result};
use crate::exploration_lower::{track_recursion, write_recursion, ExploreConfig};
use crate::fri::{padded_window, sample_window};
use crate::lattice_core::{sample_srw, Dim, LatticeBox, Point, PointSet, Trajectory};
use crate::length_law::{default_eps, reference_intensity, LengthDistribution};
use crate::percolation::{estimate_threshold, write_iterates, IterateRow, ThresholdConfig};
use crate::potential::{
    ball_capacity_exact, capacity, estimate_epsilon, kappa_rho, rho_capacity, truncated_capacity, Estimate, Method,
    PotentialConfig,
};
use crate::rng::RngStream;
use crate::stats::{chi2_two_sample, ols_slope, Summary};

/// Tries when drawing a typical base trajectory for chain experiments.
const ETA_TRIES: u64 = 1000;

fn parse<T: DeserializeOwned>(cfg: &ExperimentConfig) -> Result<T> {
    let v = if cfg.params.is_null() { serde_json::json!({}) } else { cfg.params.clone() };
    serde_json::from_value(v).map_err(|e| Error::Validation(format!("{} params: {e}", cfg.kind.label())))
}

fn need_rho(cfg: &ExperimentConfig) -> Result<LengthDistribution> {
    cfg.length_law()?.ok_or_else(|| Error::Validation(format!("{} needs rho", cfg.kind.label())))
}

fn eps_for(d: Dim, eps_d: Option<f64>) -> Result<f64> {
    eps_d
        .or_else(|| default_eps(d))
        .ok_or_else(|| Error::Validation(format!("no default ε_d for d = {}; set eps_d", d.get())))
}

/// Explicit `u`, or `u_factor` times the reference intensity.
fn resolve(u: Option<f64>, u_factor: Option<f64>, rho: &LengthDistribution, d: Dim, eps_d: Option<f64>) -> Result<f64> {
    let u = match (u, u_factor) {
        (Some(u), None) => u,
        (None, Some(f)) => f * reference_intensity(rho, d, eps_for(d, eps_d)?)?,
        _ => return invalid("give exactly one of u and u_factor"),
    };
    if !(u >= 0.0 && u.is_finite()) {
        return invalid("intensity must be finite and ≥ 0");
    }
    Ok(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    Ball { radii: Vec<i64> },
    Walk { lengths: Vec<usize> },
    Points { points: Vec<Vec<i32>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityParams {
    pub shape: Shape,
    #[serde(default)]
    pub potential: PotentialConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonParams {
    pub t: Vec<usize>,
    #[serde(default)]
    pub potential: PotentialConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FriSampleParams {
    #[serde(default)]
    pub u: Option<f64>,
    #[serde(default)]
    pub u_factor: Option<f64>,
    #[serde(default)]
    pub eps_d: Option<f64>,
    /// ℓ∞ radius of the inner box B(0, radius) on which local times are read.
    pub radius: u32,
    #[serde(default)]
    pub margin: Option<u32>,
    /// Also emit replica 0's cloud as NDJSON.
    #[serde(default)]
    pub write_cloud: bool,
}

fn default_target() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    pub l: Vec<i64>,
    #[serde(default = "default_target")]
    pub target: f64,
    #[serde(default)]
    pub eps_d: Option<f64>,
    #[serde(default)]
    pub rel_width: Option<f64>,
    #[serde(default)]
    pub max_vertices: Option<usize>,
}

fn default_layers() -> usize {
    6
}

fn default_walks() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreParams {
    #[serde(default)]
    pub u: Option<f64>,
    #[serde(default)]
    pub u_factor: Option<f64>,
    #[serde(default)]
    pub eps_d: Option<f64>,
    #[serde(default = "default_layers")]
    pub max_layers: usize,
    /// Walks per point for κ^{(ρ)}.
    #[serde(default = "default_walks")]
    pub kappa_walks: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Desk,
    Formula,
}

/// A typicality preset with optional overrides of its constants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypicalitySpec {
    #[serde(default)]
    pub preset: Preset,
    pub mc_walks: Option<usize>,
    pub eps_d: Option<f64>,
    pub k: Option<f64>,
    pub big_k: Option<f64>,
    pub m: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub z: Option<f64>,
    pub l_n: Option<f64>,
    pub i_n: Option<f64>,
}

impl TypicalitySpec {
    pub fn build(&self, rho: &LengthDistribution, d: Dim) -> Result<TypicalityParams> {
        let mut p = match self.preset {
            Preset::Desk => TypicalityParams::desk(rho, d),
            Preset::Formula => TypicalityParams::new(rho, d),
        }?;
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.eps_d, self.eps_d);
        set(&mut p.k, self.k);
        set(&mut p.big_k, self.big_k);
        set(&mut p.m, self.m);
        set(&mut p.theta1, self.theta1);
        set(&mut p.theta2, self.theta2);
        set(&mut p.z, self.z);
        if self.l_n.is_some() {
            p.overrides.l_n = self.l_n;
        }
        if self.i_n.is_some() {
            p.overrides.i_n = self.i_n;
        }
        if let Some(w) = self.mc_walks {
            p.potential = PotentialConfig::monte_carlo(w);
        }
        p.validate()?;
        Ok(p)
    }
}

fn default_window() -> u32 {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    #[serde(default)]
    pub u: Option<f64>,
    #[serde(default)]
    pub u_factor: Option<f64>,
    #[serde(default)]
    pub typicality: TypicalitySpec,
    /// Coarse window [−window, window]^d.
    #[serde(default = "default_window")]
    pub window: u32,
    pub alpha: Option<usize>,
    pub beta: Option<usize>,
    pub k1: Option<usize>,
    pub q: Option<f64>,
    pub eps: Option<f64>,
}

impl AlgorithmSpec {
    /// Defaults with the overrides applied; γ follows α.
    pub fn params(&self, typ: &TypicalityParams) -> Result<AlgorithmParams> {
        let base = AlgorithmParams::new(typ);
        let alpha = self.alpha.unwrap_or(base.alpha);
        let mut a = base.with_alpha(alpha, typ);
        a.beta = self.beta.unwrap_or(a.beta);
        a.k1 = self.k1.unwrap_or(a.k1);
        a.q = self.q.unwrap_or(a.q);
        a.eps = self.eps.unwrap_or(a.eps);
        a.validate(typ)?;
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    pub variant: ChainVariant,
    pub alphas: Vec<usize>,
    #[serde(default)]
    pub typicality: TypicalitySpec,
    /// Length of the base walk η; default the middle of the duration band.
    #[serde(default)]
    pub eta_length: Option<usize>,
}

pub(super) fn check_params(cfg: &ExperimentConfig) -> Result<()> {
    let d = cfg.dim()?;
    match cfg.kind {
        Kind::Capacity => {
            let p: CapacityParams = parse(cfg)?;
            let empty = match &p.shape {
                Shape::Ball { radii } => radii.is_empty() || radii.iter().any(|&r| r < 0),
                Shape::Walk { lengths } => lengths.is_empty(),
                Shape::Points { points } => points.is_empty() || points.iter().any(|x| x.len() != d.get()),
            };
            if empty {
                return invalid("capacity shape needs a nonempty list of valid sizes");
            }
        }
        Kind::Epsilon => {
            let p: EpsilonParams = parse(cfg)?;
            if p.t.is_empty() || p.t.contains(&0) {
                return invalid("epsilon needs lengths t ≥ 1");
            }
        }
        Kind::FriSample => {
            parse::<FriSampleParams>(cfg)?;
            need_rho(cfg)?;
        }
        Kind::Threshold => {
            let p: ThresholdParams = parse(cfg)?;
            need_rho(cfg)?;
            if p.l.is_empty() {
                return invalid("threshold needs at least one box radius");
            }
        }
        Kind::Explore => {
            let p: ExploreParams = parse(cfg)?;
            need_rho(cfg)?;
            if p.kappa_walks == 0 {
                return invalid("kappa_walks must be ≥ 1");
            }
        }
        Kind::Algorithm => {
            algorithm_setup(cfg)?;
        }
        Kind::Chain => {
            let p: ChainParams = parse(cfg)?;
            p.typicality.build(&need_rho(cfg)?, d)?;
            if p.alphas.is_empty() || p.alphas.contains(&0) {
                return invalid("chain needs α values ≥ 1");
            }
        }
    }
    Ok(())
}

pub(super) fn algorithm_setup(cfg: &ExperimentConfig) -> Result<(AlgorithmSpec, TypicalityParams)> {
    let spec: AlgorithmSpec = parse(cfg)?;
    let typ = spec.typicality.build(&need_rho(cfg)?, cfg.dim()?)?;
    spec.params(&typ)?;
    Ok((spec, typ))
}

pub(super) fn rounds_file(r: usize) -> String {
    format!("rounds-{r}.ndjson")
}

pub(super) fn statuses_file(r: usize) -> String {
    format!("statuses-{r}.csv")
}

/// Row factory bound to one cell.
struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    d: Dim,
    cell: usize,
    stream: RngStream,
}

impl Ctx<'_> {
    fn replica(&self, i: usize) -> RngStream {
        self.stream.child_str("replica").child(i as u64)
    }

    fn row(&self, quantity: &str, params: String, estimate: f64, stderr: f64, bias_bound: f64, n: u64) -> ResultRow {
        ResultRow {
            experiment: self.cfg.id(),
            cell: self.cell,
            quantity: quantity.into(),
            d: self.d.get(),
            params,
            estimate,
            stderr,
            bias_bound,
            n_samples: n,
            seed: self.cfg.seed,
        }
    }

    fn est_row(&self, quantity: &str, params: String, e: &Estimate) -> ResultRow {
        self.row(quantity, params, e.value, e.stderr, e.bias_bound, e.n_samples)
    }
}

fn echo(parts: &[(&str, String)]) -> String {
    parts.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

fn csv_file<T: Serialize>(name: &str, rows: &[T]) -> Result<OutputFile> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(OutputFile { name: name.into(), bytes: w.into_inner().map_err(|e| Error::Io(e.into_error()))? })
}

/// Mean of replica estimates; the spread across replicas is the standard error.
fn pool(es: &[Estimate]) -> Estimate {
    let vals: Vec<f64> = es.iter().map(|e| e.value).collect();
    let s = Summary::of(&vals);
    let n = es.len() as f64;
    let inner = (es.iter().map(|e| e.stderr.powi(2)).sum::<f64>()).sqrt() / n;
    Estimate {
        value: s.mean,
        stderr: if es.len() > 1 { s.stderr() } else { inner },
        bias_bound: es.iter().map(|e| e.bias_bound).sum::<f64>() / n,
        n_samples: es.iter().map(|e| e.n_samples).sum(),
    }
}

pub(super) fn dispatch(cfg: &ExperimentConfig, cell: usize) -> Result<(Vec<ResultRow>, Vec<OutputFile>)> {
    let ctx = Ctx { cfg, d: cfg.dim()?, cell, stream: cfg.stream(cell) };
    match cfg.kind {
        Kind::Capacity => run_capacity(&ctx, parse(cfg)?),
        Kind::Epsilon => run_epsilon(&ctx, parse(cfg)?),
        Kind::FriSample => run_fri_sample(&ctx, parse(cfg)?),
        Kind::Threshold => run_threshold(&ctx, parse(cfg)?),
        Kind::Explore => run_explore(&ctx, parse(cfg)?),
        Kind::Algorithm => run_algorithm_kind(&ctx),
        Kind::Chain => run_chain(&ctx, parse(cfg)?),
    }
}

type Produced = (Vec<ResultRow>, Vec<OutputFile>);

fn ball(d: Dim, r: i64) -> PointSet {
    LatticeBox::centered(Point::origin(d), r as u32).points().collect()
}

fn run_capacity(ctx: &Ctx, p: CapacityParams) -> Result<Produced> {
    let (d, n) = (ctx.d, ctx.cfg.replicas);
    let pc = &p.potential;
    let method = if pc.method == Method::ExactDirichlet { "exact" } else { "mc" };
    let cap_of = |a: &PointSet, s: RngStream| match pc.escape_cutoff {
        Some(c) => truncated_capacity(a, c, pc, s),
        None => capacity(a, pc, s),
    };
    let mut rows = Vec::new();
    match &p.shape {
        Shape::Ball { radii } => {
            let mut logs = Vec::new();
            for &r in radii {
                let e = if pc.method == Method::ExactDirichlet && pc.escape_cutoff.is_none() {
                    // 4r + 16 keeps the r = 16 solve in memory; the kill bias goes to bias_bound.
                    let kill = pc.annulus_radius.unwrap_or(4 * r + 16);
                    ball_capacity_exact(d, r, kill, pc.tol)?
                } else {
                    let set = ball(d, r);
                    let es = (0..n)
                        .into_par_iter()
                        .map(|i| cap_of(&set, ctx.replica(i).child(r as u64)))
                        .collect::<Result<Vec<_>>>()?;
                    pool(&es)
                };
                logs.push(((r as f64).ln(), e.value.ln()));
                rows.push(ctx.est_row("cap_ball", echo(&[("r", r.to_string()), ("method", method.into())]), &e));
            }
            if logs.len() >= 2 && radii.iter().all(|&r| r > 0) {
                let (xs, ys): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
                let (b, se) = ols_slope(&xs, &ys);
                let rs: Vec<String> = radii.iter().map(|r| r.to_string()).collect();
                rows.push(ctx.row("cap_ball_slope", echo(&[("r", rs.join("|")), ("method", method.into())]), b, se, 0.0, xs.len() as u64));
            }
        }
        Shape::Walk { lengths } => {
            for &t in lengths {
                let es = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let s = ctx.replica(i).child(t as u64);
                        let walk = sample_srw(Point::origin(d), t, s.child_str("walk"));
                        cap_of(&walk.range(), s.child_str("cap"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let e = pool(&es);
                rows.push(ctx.est_row("cap_walk", echo(&[("t", t.to_string()), ("method", method.into())]), &e));
            }
        }
        Shape::Points { points } => {
            let set: PointSet = points.iter().map(|c| Point::new(c)).collect::<Result<_>>()?;
            let label = echo(&[("points", set.len().to_string()), ("method", method.into())]);
            let es = (0..n).into_par_iter().map(|i| cap_of(&set, ctx.replica(i))).collect::<Result<Vec<_>>>()?;
            rows.push(ctx.est_row("cap", label.clone(), &pool(&es)));
            if let Some(rho) = ctx.cfg.length_law()? {
                let lab = format!("{label};rho={}", rho.label());
                let es = (0..n)
                    .into_par_iter()
                    .map(|i| rho_capacity(&set, &rho, pc, ctx.replica(i).child_str("rho")))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(ctx.est_row("rho_cap", lab.clone(), &pool(&es)));
                let es = (0..n)
                    .into_par_iter()
                    .map(|i| kappa_rho(&set, &rho, pc, ctx.replica(i).child_str("kappa")))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(ctx.est_row("kappa", lab, &pool(&es)));
            }
        }
    }
    Ok((rows, vec![]))
}

#[derive(Serialize)]
struct EpsValue {
    t: usize,
    replica: usize,
    value: f64,
}

fn run_epsilon(ctx: &Ctx, p: EpsilonParams) -> Result<Produced> {
    let n = ctx.cfg.replicas;
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for &t in &p.t {
        let s = estimate_epsilon(ctx.d, t, n, &p.potential, ctx.stream.child_str("t").child(t as u64))?;
        let lab = echo(&[("t", t.to_string()), ("truncated", s.truncated.to_string())]);
        rows.push(ctx.row("eps", lab.clone(), s.mean, s.stderr, 0.0, n as u64));
        if ctx.d.get() == 4 {
            rows.push(ctx.row("eps_log", lab.clone(), s.mean_log, s.stderr_log, 0.0, n as u64));
        }
        rows.push(ctx.row("deviation_frac", lab, s.deviation_frac, 0.0, 0.0, n as u64));
        values.extend(s.values.iter().enumerate().map(|(replica, &value)| EpsValue { t, replica, value }));
    }
    Ok((rows, vec![csv_file("eps_values.csv", &values)?]))
}

fn run_fri_sample(ctx: &Ctx, p: FriSampleParams) -> Result<Produced> {
    let rho = need_rho(ctx.cfg)?;
    let u = resolve(p.u, p.u_factor, &rho, ctx.d, p.eps_d)?;
    let inner = LatticeBox::centered(Point::origin(ctx.d), p.radius);
    let window = padded_window(&inner, &rho, p.margin);
    let n = ctx.cfg.replicas;
    // (Σ local time in the inner box, Σ of squared per-trajectory contributions, trajectories)
    let per: Vec<(f64, f64, u64, Option<Vec<u8>>)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let cloud = sample_window(u, &rho, &window, ctx.replica(i))?;
            let (mut tot, mut sq) = (0.0, 0.0);
            for e in cloud.entries() {
                let k = e.traj.points().filter(|x| inner.contains(x)).count() as f64;
                tot += k * e.mult as f64;
                sq += k * k * e.mult as f64;
            }
            let dump = if i == 0 && p.write_cloud {
                let mut b = Vec::new();
                cloud.write_ndjson(&mut b)?;
                Some(b)
            } else {
                None
            };
            Ok((tot, sq, cloud.len(), dump))
        })
        .collect::<Result<_>>()?;
    let vol = inner.volume() as f64;
    let tot: f64 = per.iter().map(|r| r.0).sum();
    let sq: f64 = per.iter().map(|r| r.1).sum();
    let trajs: Vec<f64> = per.iter().map(|r| r.2 as f64 / window.volume() as f64).collect();
    let lab = echo(&[("u", u.to_string()), ("rho", rho.label()), ("radius", p.radius.to_string())]);
    let ts = Summary::of(&trajs);
    let rows = vec![
        ctx.row("local_time", lab.clone(), tot / (vol * n as f64), sq.sqrt() / (vol * n as f64), 0.0, vol as u64 * n as u64),
        ctx.row("trajectories_per_vertex", lab, ts.mean, ts.stderr(), 0.0, n as u64),
    ];
    let files = per
        .into_iter()
        .find_map(|r| r.3)
        .map(|bytes| OutputFile { name: "cloud.ndjson".into(), bytes })
        .into_iter()
        .collect();
    Ok((rows, files))
}

fn run_threshold(ctx: &Ctx, p: ThresholdParams) -> Result<Produced> {
    let rho = need_rho(ctx.cfg)?;
    let mut tc = ThresholdConfig::new(eps_for(ctx.d, p.eps_d)?);
    if let Some(w) = p.rel_width {
        tc.rel_width = w;
    }
    if let Some(v) = p.max_vertices {
        tc.invasion.max_vertices = v;
    }
    let mut rows = Vec::new();
    let mut iterates: Vec<IterateRow> = Vec::new();
    for &l in &p.l {
        let run = estimate_threshold(&rho, ctx.d, l, ctx.cfg.replicas, p.target, &tc, ctx.stream.child_str("L").child(l as u64))?;
        let e = run.estimate;
        let lab = echo(&[("rho", rho.label()), ("L", l.to_string()), ("target", p.target.to_string())]);
        rows.push(ctx.row("u_hat", lab, e.u_hat, e.stderr, (e.u_hi - e.u_lo) / 2.0, e.replicas as u64));
        iterates.extend(run.iterates);
    }
    let mut b = Vec::new();
    write_iterates(&mut b, &iterates)?;
    Ok((rows, vec![OutputFile { name: "iterates.csv".into(), bytes: b }]))
}

fn run_explore(ctx: &Ctx, p: ExploreParams) -> Result<Produced> {
    let rho = need_rho(ctx.cfg)?;
    let u = resolve(p.u, p.u_factor, &rho, ctx.d, p.eps_d)?;
    let cfg = ExploreConfig::default().with_max_layers(p.max_layers);
    let tr = track_recursion(u, &rho, ctx.d, ctx.cfg.replicas, &cfg, &PotentialConfig::monte_carlo(p.kappa_walks), ctx.stream.clone())?;
    let n = ctx.cfg.replicas as u64;
    let mut rows = Vec::new();
    for r in &tr.rows {
        let lab = echo(&[("u", u.to_string()), ("rho", rho.label()), ("k", r.k.to_string())]);
        rows.push(ctx.row("w", lab.clone(), r.w, r.w_stderr, 0.0, n));
        rows.push(ctx.row("v", lab.clone(), r.v, r.v_stderr, 0.0, n));
        if r.k > 0 {
            rows.push(ctx.row("w_ratio", lab, r.w_ratio, r.w_ratio_stderr, 0.0, n));
        }
    }
    rows.push(ctx.row(
        "truncated_replicas",
        echo(&[("u", u.to_string()), ("rho", rho.label())]),
        tr.truncated_replicas as f64,
        0.0,
        0.0,
        n,
    ));
    let mut b = Vec::new();
    write_recursion(&mut b, &tr.rows)?;
    Ok((rows, vec![OutputFile { name: "recursion.csv".into(), bytes: b }]))
}

#[derive(Serialize)]
struct OutcomeLine<'a> {
    replica: usize,
    outcome: &'a Outcome,
    survivors: usize,
    rounds: usize,
    failed_rounds: usize,
    trajectories: u64,
}

fn run_algorithm_kind(ctx: &Ctx) -> Result<Produced> {
    let (spec, typ) = algorithm_setup(ctx.cfg)?;
    let rho = need_rho(ctx.cfg)?;
    let alg = spec.params(&typ)?;
    let u = resolve(spec.u, spec.u_factor, &rho, ctx.d, spec.typicality.eps_d)?;
    let runs = (0..ctx.cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let s = ctx.replica(i);
            let cache = TrajCache::new(typ.clone(), s.child_str("cache"));
            run_algorithm(u, &rho, &alg, &cache, spec.window, s.child_str("run"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut files = Vec::new();
    let mut lines = Vec::new();
    let (mut rounds, mut failed) = (0usize, 0usize);
    let mut surv = Vec::new();
    let mut exhausted = 0usize;
    let mut aborted = 0usize;
    for (i, run) in runs.iter().enumerate() {
        let mut b = Vec::new();
        write_round_records(&mut b, &run.records)?;
        files.push(OutputFile { name: rounds_file(i), bytes: b });
        let mut b = Vec::new();
        write_statuses(&mut b, &run.statuses)?;
        files.push(OutputFile { name: statuses_file(i), bytes: b });
        let r = run.records.iter().filter(|x| x.position.is_some()).count();
        let f = run.records.iter().filter(|x| x.fail.is_some_and(|b| b != 0)).count();
        rounds += r;
        failed += f;
        surv.push(run.survivors.len() as f64);
        exhausted += matches!(run.outcome, Outcome::WindowExhausted) as usize;
        aborted += matches!(run.outcome, Outcome::Aborted { .. }) as usize;
        lines.push(OutcomeLine {
            replica: i,
            outcome: &run.outcome,
            survivors: run.survivors.len(),
            rounds: r,
            failed_rounds: f,
            trajectories: run.trajectories,
        });
    }
    let mut b = Vec::new();
    for l in &lines {
        serde_json::to_writer(&mut b, l)?;
        b.push(b'\n');
    }
    files.push(OutputFile { name: "outcomes.ndjson".into(), bytes: b });
    let n = ctx.cfg.replicas as f64;
    let lab = echo(&[
        ("u", u.to_string()),
        ("rho", rho.label()),
        ("R", typ.r_n().to_string()),
        ("alpha", alg.alpha.to_string()),
        ("beta", alg.beta.to_string()),
        ("window", spec.window.to_string()),
    ]);
    let frac = |k: usize| {
        let p = k as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    };
    let s = Summary::of(&surv);
    let fail_rate = if rounds > 0 { failed as f64 / rounds as f64 } else { f64::NAN };
    let fail_se = if rounds > 0 { (fail_rate * (1.0 - fail_rate) / rounds as f64).sqrt() } else { f64::NAN };
    let (pe, pe_se) = frac(exhausted);
    let (pa, pa_se) = frac(aborted);
    let rows = vec![
        ctx.row("surviving_vertices", lab.clone(), s.mean, s.stderr(), 0.0, n as u64),
        ctx.row("round_failure_rate", lab.clone(), fail_rate, fail_se, 0.0, rounds as u64),
        ctx.row("window_exhausted", lab.clone(), pe, pe_se, 0.0, n as u64),
        ctx.row("aborted", lab, pa, pa_se, 0.0, n as u64),
    ];
    Ok((rows, files))
}

/// A walk from the origin of the given length that passes the typicality test.
pub(crate) fn typical_eta(cache: &TrajCache, len: usize, stream: &RngStream) -> Result<Trajectory> {
    let d = cache.params.d;
    for i in 0..ETA_TRIES {
        let t = sample_srw(Point::origin(d), len, stream.child(i));
        if cache.is_typical(&t)? {
            return Ok(t);
        }
    }
    Err(Error::Budget(format!("no typical walk of length {len} in {ETA_TRIES} tries")))
}

fn run_chain(ctx: &Ctx, p: ChainParams) -> Result<Produced> {
    let rho = need_rho(ctx.cfg)?;
    let typ = p.typicality.build(&rho, ctx.d)?;
    let (lo, hi) = typ.duration_band();
    let len = p.eta_length.unwrap_or(((lo + hi) / 2) as usize);
    let cache = TrajCache::new(typ.clone(), ctx.stream.child_str("cache"));
    let eta = typical_eta(&cache, len, &ctx.stream.child_str("eta"))?;
    let target = typ.inner_box(&Point::axis(ctx.d, 0, typ.r_n() as i32));
    let amax = *p.alphas.iter().max().expect("nonempty");
    let n = ctx.cfg.replicas;
    let chains = (0..n)
        .into_par_iter()
        .map(|i| simulate_hit_chain(&eta, amax, p.variant, &cache, &rho, ctx.replica(i)))
        .collect::<Result<Vec<_>>>()?;
    let variant = serde_json::to_value(p.variant)?.as_str().unwrap_or_default().to_string();
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for &a in &p.alphas {
        let hits = chains.iter().filter(|c| target.contains(&c[a - 1])).count();
        let f = hits as f64 / n as f64;
        let lab = echo(&[("variant", variant.clone()), ("alpha", a.to_string()), ("R", typ.r_n().to_string())]);
        rows.push(ctx.row("k_in_box", lab, f, (f * (1.0 - f) / n as f64).sqrt(), 0.0, n as u64));
        logs.push(((a as f64).ln(), f.ln()));
    }
    if logs.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
        let (b, se) = if ys.iter().all(|y| y.is_finite()) { ols_slope(&xs, &ys) } else { (f64::NAN, f64::NAN) };
        let al: Vec<String> = p.alphas.iter().map(|a| a.to_string()).collect();
        rows.push(ctx.row("k_in_box_slope", echo(&[("variant", variant.clone()), ("alpha", al.join("|"))]), b, se, 0.0, n as u64));
    }
    if p.variant == ChainVariant::Square && amax >= 2 {
        let sums = (0..n)
            .into_par_iter()
            .map(|i| x_at_sums(&eta, 2, &cache, &rho, ctx.stream.child_str("sums").child(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let a: Vec<i32> = chains.iter().map(|c| c[1].coord(0)).collect();
        let b: Vec<i32> = sums.iter().map(|c| c[1].coord(0)).collect();
        let (_, pval) = chi2_two_sample(&a, &b, 5.0);
        rows.push(ctx.row("square_vs_sums_p", echo(&[("variant", variant), ("coord", "0".into())]), pval, 0.0, 0.0, n as u64));
    }
    Ok((rows, vec![]))
}
