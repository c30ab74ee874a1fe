//! Discrete Dirichlet problems on ℓ∞ balls, solved by red–black SOR.
//!
//! Every problem has the form u(z) = f(z) + (1/2d) Σ_{y~z} u(y) at free nodes,
//! u fixed on a prescribed set, and u = 0 outside the ball. Two layouts exist:
//! the full cube, and the quotient by the hyperoctahedral group for problems
//! that only involve origin-symmetric data.

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::lattice_core::{Dim, Point, PointMap, PointSet};

/// Nodes above which a solve is refused.
pub const MAX_NODES: usize = 40_000_000;
pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    Free,
    Fixed,
}

/// A linear problem on an indexed node set with a fixed neighbour table.
struct Problem {
    moves: usize,
    /// Side length of the enclosing cube, for the relaxation parameter.
    side: f64,
    /// `nbr[i * moves + k]`, `u32::MAX` for nodes outside the ball.
    nbr: Vec<u32>,
    kind: Vec<Node>,
    parity: Vec<u8>,
    src: Vec<f64>,
    u: Vec<f64>,
}

impl Problem {
    fn solve(&mut self, tol: f64) -> Result<usize> {
        let n = self.kind.len();
        // Spectral radius of Jacobi on a box of side L is cos(π/(L+1)).
        let rho = (std::f64::consts::PI / (self.side + 1.0)).cos();
        let omega = 2.0 / (1.0 + (1.0 - rho * rho).sqrt());
        let inv = 1.0 / self.moves as f64;
        for sweep in 0..MAX_SWEEPS {
            for colour in 0..2u8 {
                for i in 0..n {
                    if self.parity[i] != colour || self.kind[i] == Node::Fixed {
                        continue;
                    }
                    let mut s = 0.0;
                    for &j in &self.nbr[i * self.moves..(i + 1) * self.moves] {
                        if j != u32::MAX {
                            s += self.u[j as usize];
                        }
                    }
                    let target = self.src[i] + s * inv;
                    self.u[i] += omega * (target - self.u[i]);
                }
            }
            if sweep % 8 == 7 && self.residual() < tol {
                return Ok(sweep + 1);
            }
        }
        Err(Error::Budget(format!("relaxation did not reach residual {tol}")))
    }

    fn residual(&self) -> f64 {
        let inv = 1.0 / self.moves as f64;
        let mut worst: f64 = 0.0;
        for i in 0..self.kind.len() {
            if self.kind[i] == Node::Fixed {
                continue;
            }
            let s: f64 = self.nbr[i * self.moves..(i + 1) * self.moves]
                .iter()
                .filter(|&&j| j != u32::MAX)
                .map(|&j| self.u[j as usize])
                .sum();
            worst = worst.max((self.src[i] + s * inv - self.u[i]).abs());
        }
        worst
    }

    /// (1/2d) Σ_{y~i} u(y).
    fn neighbour_mean(&self, i: usize) -> f64 {
        let s: f64 = self.nbr[i * self.moves..(i + 1) * self.moves]
            .iter()
            .filter(|&&j| j != u32::MAX)
            .map(|&j| self.u[j as usize])
            .sum();
        s / self.moves as f64
    }
}

/// Full cube B(center, r).
pub struct CubeSolver {
    center: Point,
    r: i64,
    side: usize,
    problem: Problem,
    pub sweeps: usize,
}

impl CubeSolver {
    fn build(center: Point, r: i64) -> Result<Self> {
        let d = center.dim().get();
        let side = (2 * r + 1) as usize;
        let n = side
            .checked_pow(d as u32)
            .filter(|n| *n <= MAX_NODES)
            .ok_or_else(|| Error::Budget(format!("cube of radius {r} in d={d} is too large for the exact solver")))?;
        let moves = 2 * d;
        let mut nbr = vec![u32::MAX; n * moves];
        let mut parity = vec![0u8; n];
        let mut stride = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            stride[i] = stride[i + 1] * side;
        }
        let mut coord = vec![0usize; d];
        for idx in 0..n {
            let mut rem = idx;
            for i in 0..d {
                coord[i] = rem / stride[i];
                rem %= stride[i];
            }
            parity[idx] = (coord.iter().sum::<usize>() % 2) as u8;
            for a in 0..d {
                if coord[a] + 1 < side {
                    nbr[idx * moves + 2 * a] = (idx + stride[a]) as u32;
                }
                if coord[a] > 0 {
                    nbr[idx * moves + 2 * a + 1] = (idx - stride[a]) as u32;
                }
            }
        }
        let problem = Problem { moves, side: (2 * r + 1) as f64, nbr, kind: vec![Node::Free; n], parity, src: vec![0.0; n], u: vec![0.0; n] };
        Ok(CubeSolver { center, r, side, problem, sweeps: 0 })
    }

    fn index(&self, p: &Point) -> Option<usize> {
        let d = self.center.dim().get();
        let mut idx = 0usize;
        for i in 0..d {
            let c = p.coord(i) as i64 - self.center.coord(i) as i64 + self.r;
            if c < 0 || c >= self.side as i64 {
                return None;
            }
            idx = idx * self.side + c as usize;
        }
        Some(idx)
    }

    /// h(z) = P^z[H_A < exit of B(center, r)]; u = 1 on A.
    pub fn hitting(center: Point, r: i64, a: &PointSet, tol: f64) -> Result<Self> {
        let mut s = Self::build(center, r)?;
        for p in a {
            let i = s.index(p).ok_or_else(|| Error::Validation("set does not fit inside the solver ball".into()))?;
            s.problem.kind[i] = Node::Fixed;
            s.problem.u[i] = 1.0;
        }
        s.sweeps = s.problem.solve(tol)?;
        Ok(s)
    }

    /// g_r(·, y), the Green's function of the walk killed on leaving the ball.
    pub fn green(center: Point, r: i64, y: &Point, tol: f64) -> Result<Self> {
        let mut s = Self::build(center, r)?;
        let i = s.index(y).ok_or_else(|| Error::Validation("pole outside the solver ball".into()))?;
        s.problem.src[i] = 1.0;
        s.sweeps = s.problem.solve(tol)?;
        Ok(s)
    }

    pub fn value(&self, p: &Point) -> f64 {
        self.index(p).map(|i| self.problem.u[i]).unwrap_or(0.0)
    }

    /// 1 − (1/2d) Σ_{y~x} h(y): the probability to leave the ball before returning.
    pub fn escape(&self, x: &Point) -> f64 {
        match self.index(x) {
            Some(i) => 1.0 - self.problem.neighbour_mean(i),
            None => 1.0,
        }
    }

    pub fn escape_all(&self, a: &PointSet) -> PointMap<f64> {
        a.iter().map(|x| (*x, self.escape(x))).collect()
    }
}

/// Orbit representatives 0 ≤ a₁ ≤ … ≤ a_d ≤ r of the hyperoctahedral group.
pub struct SymmetricSolver {
    d: usize,
    r: i64,
    index: FxHashMap<Vec<u16>, u32>,
    reps: Vec<Vec<u16>>,
    problem: Problem,
    pub sweeps: usize,
}

fn orbit_key(p: &[i64]) -> Vec<u16> {
    let mut v: Vec<u16> = p.iter().map(|x| x.unsigned_abs() as u16).collect();
    v.sort_unstable();
    v
}

/// Number of lattice points in the orbit of a sorted representative.
pub fn orbit_size(rep: &[u16]) -> f64 {
    let d = rep.len();
    let mut fact = [1.0f64; 17];
    for i in 1..17 {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut size = fact[d];
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && rep[j] == rep[i] {
            j += 1;
        }
        size /= fact[j - i];
        i = j;
    }
    size * 2f64.powi(rep.iter().filter(|&&x| x != 0).count() as i32)
}

impl SymmetricSolver {
    fn build(d: Dim, r: i64) -> Result<Self> {
        let d = d.get();
        let mut reps: Vec<Vec<u16>> = Vec::new();
        fn fill(prefix: &mut Vec<u16>, d: usize, r: u16, out: &mut Vec<Vec<u16>>) {
            if prefix.len() == d {
                out.push(prefix.clone());
                return;
            }
            let lo = prefix.last().copied().unwrap_or(0);
            for v in lo..=r {
                prefix.push(v);
                fill(prefix, d, r, out);
                prefix.pop();
            }
        }
        if r < 0 || r > u16::MAX as i64 {
            return Err(Error::Validation("solver radius out of range".into()));
        }
        fill(&mut Vec::with_capacity(d), d, r as u16, &mut reps);
        if reps.len() > MAX_NODES {
            return Err(Error::Budget("symmetric solver domain too large".into()));
        }
        let index: FxHashMap<Vec<u16>, u32> = reps.iter().enumerate().map(|(i, v)| (v.clone(), i as u32)).collect();
        let n = reps.len();
        let moves = 2 * d;
        let mut nbr = vec![u32::MAX; n * moves];
        let mut parity = vec![0u8; n];
        for (i, rep) in reps.iter().enumerate() {
            parity[i] = (rep.iter().map(|&x| x as u64).sum::<u64>() % 2) as u8;
            let base: Vec<i64> = rep.iter().map(|&x| x as i64).collect();
            for a in 0..d {
                for (k, delta) in [1i64, -1].into_iter().enumerate() {
                    let mut q = base.clone();
                    q[a] += delta;
                    if q[a].abs() > r {
                        continue;
                    }
                    nbr[i * moves + 2 * a + k] = index[&orbit_key(&q)];
                }
            }
        }
        let problem = Problem { moves, side: (2 * r + 1) as f64, nbr, kind: vec![Node::Free; n], parity, src: vec![0.0; n], u: vec![0.0; n] };
        Ok(SymmetricSolver { d, r, index, reps, problem, sweeps: 0 })
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    fn idx(&self, p: &[i64]) -> Option<usize> {
        if p.iter().any(|x| x.abs() > self.r) {
            return None;
        }
        self.index.get(&orbit_key(p)).map(|&i| i as usize)
    }

    /// g_r(·, 0).
    pub fn green_origin(d: Dim, r: i64, tol: f64) -> Result<Self> {
        let mut s = Self::build(d, r)?;
        s.problem.src[0] = 1.0;
        s.sweeps = s.problem.solve(tol)?;
        Ok(s)
    }

    /// Hitting probabilities of the ball B(0, rho), killed outside B(0, r).
    pub fn ball_hitting(d: Dim, rho: i64, r: i64, tol: f64) -> Result<Self> {
        if rho >= r {
            return Err(Error::Validation("ball must lie strictly inside the solver ball".into()));
        }
        let mut s = Self::build(d, r)?;
        for (i, rep) in s.reps.iter().enumerate() {
            if (*rep.last().unwrap() as i64) <= rho {
                s.problem.kind[i] = Node::Fixed;
                s.problem.u[i] = 1.0;
            }
        }
        s.sweeps = s.problem.solve(tol)?;
        Ok(s)
    }

    pub fn value(&self, p: &[i64]) -> f64 {
        self.idx(p).map(|i| self.problem.u[i]).unwrap_or(0.0)
    }

    /// Σ over fixed points of the escape probability, each orbit weighted by its size.
    pub fn fixed_escape_mass(&self) -> f64 {
        let mut total = 0.0;
        for (i, rep) in self.reps.iter().enumerate() {
            if self.problem.kind[i] == Node::Fixed {
                total += orbit_size(rep) * (1.0 - self.problem.neighbour_mean(i));
            }
        }
        total
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}
