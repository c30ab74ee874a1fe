use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::typical::{classify_typical, lt, proper_part, traj_label, TrajCache};
use crate::error::{invalid, Error, Result};
use crate::fri::{meets, TrajectoryCloud};
use crate::lattice_core::{hitting_time, Point, PointSet, Trajectory};
use crate::length_law::LengthDistribution;
use crate::potential::{phi_rho, rho_capacity};
use crate::rng::RngStream;

/// Nodes the seed search may visit before giving up.
pub const SEED_SEARCH_BUDGET: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bullet {
    /// cap^{(ρ)}(η̂ ∖ η̄) and the pairwise φ^{(ρ)} bounds.
    Capacity,
    /// η hits at most one parent, at a point of the parent's proper part.
    Attachment,
    /// At most k₁ children per parent.
    FanOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based layer index i of A_i.
    pub layer: usize,
    pub bullet: Bullet,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct GoodVerdict {
    pub good: bool,
    /// First violation in (layer, bullet) order.
    pub violation: Option<Violation>,
    /// η̄^i for each trajectory of each checked layer, in expanded entry order.
    pub parts: Vec<Vec<PointSet>>,
}

/// A trajectory together with its proper part η̄.
#[derive(Clone, Debug)]
pub struct SeedCandidate {
    pub traj: Trajectory,
    pub part: PointSet,
}

/// Entries repeated by multiplicity, in canonical order.
pub(crate) fn expand(cloud: &TrajectoryCloud) -> Vec<&Trajectory> {
    cloud.entries().iter().flat_map(|e| std::iter::repeat_n(&e.traj, e.mult as usize)).collect()
}

fn pair_phi(
    a: &PointSet,
    b: &PointSet,
    bound: f64,
    rho: &LengthDistribution,
    cache: &TrajCache,
    stream: RngStream,
) -> Result<bool> {
    if a.is_empty() || b.is_empty() {
        return Ok(0.0 < bound);
    }
    let e = phi_rho(a, b, rho, &cache.params.potential, stream)?;
    Ok(lt(&e, bound, cache.params.z).passed())
}

/// Checks (A_1, …, A_t) against D = `history` (whose last element is A_0).
/// `parent_parts` are the proper parts of A_0's trajectories in expanded order.
pub fn check_good_sequence(
    layers: &[TrajectoryCloud],
    history: &[TrajectoryCloud],
    parent_parts: &[PointSet],
    k1: usize,
    cache: &TrajCache,
    rho: &LengthDistribution,
    stream: RngStream,
) -> Result<GoodVerdict> {
    let p = &cache.params;
    let a0 = history.last().cloned().unwrap_or_default();
    if expand(&a0).len() != parent_parts.len() {
        return invalid("parent_parts must match the expanded last history layer");
    }
    let mut dall: PointSet = history.iter().flat_map(|c| c.vertex_set()).collect();
    let mut prev = a0;
    let mut prev_parts = parent_parts.to_vec();
    let cap_bound = 4.0 * p.c_tilde() / p.i_n().sqrt();
    let phi_bound = p.c_tilde() / p.i_n();
    let mut parts_out = Vec::with_capacity(layers.len());
    let fail = |layer, bullet, detail: String, parts| {
        Ok(GoodVerdict { good: false, violation: Some(Violation { layer, bullet, detail }), parts })
    };
    for (idx, layer) in layers.iter().enumerate() {
        let i = idx + 1;
        let avert = prev.vertex_set();
        let trajs = expand(layer);
        let mut parts = Vec::with_capacity(trajs.len());
        for (j, eta) in trajs.iter().enumerate() {
            let star = cache.star(eta)?;
            let part = proper_part(eta, &star.points, &avert, &dall, p);
            let lost: PointSet = star.points.difference(&part).copied().collect();
            if !lost.is_empty() {
                let s = stream.child_str("cap").children(&[i as u64, traj_label(eta)]);
                let c = rho_capacity(&lost, rho, &p.potential, s)?;
                if !lt(&c, cap_bound, p.z).passed() {
                    parts_out.push(parts);
                    return fail(i, Bullet::Capacity, format!("trajectory {j}: cap {:.4} vs {cap_bound:.4}", c.value), parts_out);
                }
            }
            parts.push(part);
        }
        for j in 0..trajs.len() {
            for k in j + 1..trajs.len() {
                let (lj, lk) = (traj_label(trajs[j]), traj_label(trajs[k]));
                let s = stream.child_str("phi").children(&[i as u64, lj.min(lk), lj.max(lk)]);
                if !pair_phi(&parts[j], &parts[k], phi_bound, rho, cache, s)? {
                    parts_out.push(parts);
                    return fail(i, Bullet::Capacity, format!("pair ({j}, {k}) above {phi_bound:.4}"), parts_out);
                }
            }
        }
        let parents = expand(&prev);
        let mut children = vec![0usize; parents.len()];
        for (j, eta) in trajs.iter().enumerate() {
            let hits: Vec<usize> = (0..parents.len()).filter(|&z| meets(eta, &parents[z].range())).collect();
            if hits.len() > 1 {
                parts_out.push(parts);
                return fail(i, Bullet::Attachment, format!("trajectory {j} hits {} parents", hits.len()), parts_out);
            }
            if let Some(&z) = hits.first() {
                let tau = hitting_time(eta, &parents[z].range()).expect("meets implies a hitting time");
                if !prev_parts[z].contains(&eta.at(tau)) {
                    parts_out.push(parts);
                    return fail(i, Bullet::Attachment, format!("trajectory {j} enters parent {z} outside its proper part"), parts_out);
                }
                children[z] += 1;
            }
        }
        if let Some(z) = children.iter().position(|&c| c > k1) {
            parts_out.push(parts);
            return fail(i, Bullet::FanOut, format!("parent {z} has {} children", children[z]), parts_out);
        }
        dall.extend(avert);
        prev = layer.clone();
        prev_parts = parts.clone();
        parts_out.push(parts);
    }
    Ok(GoodVerdict { good: true, violation: None, parts: parts_out })
}

/// The first β-subset, in lexicographic index order, of typical candidates
/// lying in B_x whose proper parts pairwise have φ^{(ρ)} < C̃_n/I_n.
/// Returns indices into `cands`.
pub fn find_seed(
    cands: &[SeedCandidate],
    x: &Point,
    beta: usize,
    cache: &TrajCache,
    rho: &LengthDistribution,
    stream: RngStream,
) -> Result<Option<Vec<usize>>> {
    if beta == 0 {
        return invalid("β must be positive");
    }
    let p = &cache.params;
    let bx = p.coarse_box(x);
    let mut ok = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        if c.traj.points().all(|y| bx.contains(&y)) && cache.is_typical(&c.traj)? {
            ok.push(i);
        }
    }
    if ok.len() < beta {
        return Ok(None);
    }
    let bound = p.c_tilde() / p.i_n();
    let mut memo: FxHashMap<(usize, usize), bool> = FxHashMap::default();
    let mut compat = |a: usize, b: usize| -> Result<bool> {
        if let Some(v) = memo.get(&(a, b)) {
            return Ok(*v);
        }
        let (la, lb) = (traj_label(&cands[a].traj), traj_label(&cands[b].traj));
        let s = stream.child_str("phi").children(&[la.min(lb), la.max(lb)]);
        let v = pair_phi(&cands[a].part, &cands[b].part, bound, rho, cache, s)?;
        memo.insert((a, b), v);
        Ok(v)
    };
    // Iterative DFS over positions in `ok`.
    let mut chosen: Vec<usize> = Vec::with_capacity(beta);
    let mut next = 0usize;
    let mut nodes = 0usize;
    let found = loop {
        if chosen.len() == beta {
            break true;
        }
        if next + (beta - chosen.len()) > ok.len() {
            match chosen.pop() {
                Some(last) => {
                    next = last + 1;
                    continue;
                }
                None => break false,
            }
        }
        nodes += 1;
        if nodes > SEED_SEARCH_BUDGET {
            return Err(Error::Budget(format!("seed search exceeded {SEED_SEARCH_BUDGET} nodes")));
        }
        let c = ok[next];
        let mut fits = true;
        for &q in &chosen {
            if !compat(ok[q], c)? {
                fits = false;
                break;
            }
        }
        if fits {
            chosen.push(next);
        }
        next += 1;
    };
    if !found {
        return Ok(None);
    }
    let picked: Vec<usize> = chosen.iter().map(|&q| ok[q]).collect();
    // Replay the full event checks on the answer.
    for &i in &picked {
        let t = &cands[i].traj;
        if !classify_typical(t, p, cache.typical_stream(t))?.typical() {
            return Err(Error::Invariant(format!("seed member {i} fails the full typicality check")));
        }
    }
    Ok(Some(picked))
}
