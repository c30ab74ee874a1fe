//! Random walks run against a finite obstacle set, with exact skip-ahead.
//!
//! When the walk is at ℓ∞ distance ≥ L from the obstacle it cannot touch it in
//! fewer than L steps, so the next L − 1 steps are replaced by a single draw of
//! the endpoint displacement. The law of the hitting time and hitting point is
//! unchanged.

use rand::Rng;
use rustc_hash::FxHashSet;

use crate::lattice_core::{srw_displacement, Dim, Point, PointSet};

/// Below this lower bound on the distance, single steps are cheaper than a jump.
const MIN_JUMP: i64 = 4;

pub struct Obstacle {
    d: Dim,
    set: PointSet,
    lo: Point,
    hi: Point,
    center: Point,
    /// (cell side s, cells whose 3^d neighbourhood meets the set), finest first.
    levels: Vec<(i32, FxHashSet<u128>)>,
}

#[inline]
fn cell_key(p: &Point, s: i32, d: usize) -> u128 {
    let mut k: u128 = 0;
    for i in 0..d {
        let c = p.coord(i).div_euclid(s) as i16 as u16;
        k = (k << 16) | c as u128;
    }
    k
}

impl Obstacle {
    pub fn new(set: PointSet) -> Self {
        assert!(!set.is_empty(), "obstacle must be nonempty");
        let d = set.iter().next().unwrap().dim();
        let dd = d.get();
        let mut lo = *set.iter().next().unwrap();
        let mut hi = lo;
        for p in &set {
            for i in 0..dd {
                lo.set_coord(i, lo.coord(i).min(p.coord(i)));
                hi.set_coord(i, hi.coord(i).max(p.coord(i)));
            }
        }
        let side = (0..dd).map(|i| hi.coord(i) - lo.coord(i)).max().unwrap_or(0);
        let mut levels = Vec::new();
        // Level grids only pay off for spread-out sets; the bounding box handles the rest.
        let mut s = 8i32;
        while s * 4 <= side && set.len() > 64 {
            let mut occupied: FxHashSet<Point> = FxHashSet::default();
            for p in &set {
                let mut c = *p;
                for i in 0..dd {
                    c.set_coord(i, p.coord(i).div_euclid(s));
                }
                occupied.insert(c);
            }
            let mut dirty: FxHashSet<u128> = FxHashSet::default();
            let offsets = 3usize.pow(dd as u32);
            for c in &occupied {
                for mut o in 0..offsets {
                    let mut n = *c;
                    for i in 0..dd {
                        n.set_coord(i, c.coord(i) + (o % 3) as i32 - 1);
                        o /= 3;
                    }
                    let mut key: u128 = 0;
                    for i in 0..dd {
                        key = (key << 16) | (n.coord(i) as i16 as u16) as u128;
                    }
                    dirty.insert(key);
                }
            }
            levels.push((s, dirty));
            s *= 4;
        }
        let mut center = lo;
        for i in 0..dd {
            center.set_coord(i, (lo.coord(i) + hi.coord(i)).div_euclid(2));
        }
        Obstacle { d, set, lo, hi, center, levels }
    }

    pub fn from_points(points: impl IntoIterator<Item = Point>) -> Self {
        Obstacle::new(points.into_iter().collect())
    }

    #[inline]
    pub fn set(&self) -> &PointSet {
        &self.set
    }

    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        self.set.contains(p)
    }

    pub fn dim(&self) -> Dim {
        self.d
    }

    /// Midpoint of the bounding box (rounded down); kill boxes are centred here.
    pub fn center(&self) -> Point {
        self.center
    }

    /// ℓ∞ side length of the bounding box.
    pub fn diam(&self) -> i64 {
        (0..self.d.get()).map(|i| (self.hi.coord(i) - self.lo.coord(i)) as i64).max().unwrap_or(0)
    }

    /// ℓ∞ distance from p to the bounding box (0 inside).
    #[inline]
    pub fn bbox_dist(&self, p: &Point) -> i64 {
        let mut m = 0i64;
        for i in 0..self.d.get() {
            let c = p.coord(i) as i64;
            let g = (self.lo.coord(i) as i64 - c).max(c - self.hi.coord(i) as i64).max(0);
            m = m.max(g);
        }
        m
    }

    /// A lower bound on the ℓ∞ distance from p to the set (0 when p is in it).
    #[inline]
    pub fn safe_dist(&self, p: &Point) -> i64 {
        let b = self.bbox_dist(p);
        if b >= MIN_JUMP {
            return b;
        }
        let dd = self.d.get();
        let mut best = b;
        for (s, dirty) in self.levels.iter().rev() {
            if (*s as i64) < best {
                break;
            }
            if !dirty.contains(&cell_key(p, *s, dd)) {
                best = best.max(*s as i64 + 1);
                break;
            }
        }
        if best == 0 && !self.set.contains(p) {
            best = 1;
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    /// First arrival in the obstacle at a time ≥ 1.
    Hit { time: u64, at: Point },
    /// Left the kill box B(center, r) before arriving.
    Escaped { time: u64 },
    /// Ran `cutoff` steps without arriving (or can no longer arrive in time).
    Cutoff,
}

/// Stopping rules for [`run_walk`]. At least one of the two must be set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stop {
    /// Kill the walk when it first leaves B(center, r).
    pub kill: Option<(Point, i64)>,
    /// Stop after this many steps.
    pub cutoff: Option<u64>,
}

impl Stop {
    pub fn kill(center: Point, r: i64) -> Self {
        Stop { kill: Some((center, r)), cutoff: None }
    }

    pub fn cutoff(s: u64) -> Self {
        Stop { kill: None, cutoff: Some(s) }
    }

    pub fn with_cutoff(mut self, s: Option<u64>) -> Self {
        self.cutoff = s;
        self
    }
}

/// Walk from `start` until the first time t ≥ 1 it is in the obstacle.
///
/// Jumps never cross the kill box boundary, so killing happens at the true
/// first exit time, exactly as in the Dirichlet problem on the same box.
pub fn run_walk<R: Rng + ?Sized>(ob: &Obstacle, start: Point, stop: Stop, rng: &mut R) -> Exit {
    assert!(stop.kill.is_some() || stop.cutoff.is_some(), "walk needs a stopping rule");
    let m = ob.d.moves();
    let mut p = start;
    let mut t: u64 = 0;
    let limit = stop.cutoff.unwrap_or(u64::MAX);
    let (center, kill) = stop.kill.unwrap_or((ob.center, i64::MAX));
    loop {
        let left = limit - t;
        if left == 0 {
            return Exit::Cutoff;
        }
        let from_center = center.dist_inf(&p);
        if from_center > kill {
            return Exit::Escaped { time: t };
        }
        let safe = if t == 0 { 0 } else { ob.safe_dist(&p) };
        if stop.cutoff.is_some() && safe > left as i64 {
            return Exit::Cutoff;
        }
        // Largest jump that neither reaches the set nor leaves the kill box.
        let room = if kill == i64::MAX { i64::MAX } else { kill - from_center + 1 };
        let jump = (safe - 1).min(room - 1);
        if jump >= MIN_JUMP - 1 {
            let jump = (jump as u64).min(left);
            p = p.add(&srw_displacement(ob.d, jump, rng));
            t += jump;
            continue;
        }
        p.step_in_place(rng.random_range(0..m));
        t += 1;
        if ob.contains(&p) {
            return Exit::Hit { time: t, at: p };
        }
    }
}

/// Number of visits to the obstacle (time 0 included) before the walk is killed.
pub fn count_visits<R: Rng + ?Sized>(ob: &Obstacle, start: Point, stop: Stop, rng: &mut R) -> u64 {
    let mut visits = u64::from(ob.contains(&start));
    let mut p = start;
    while let Exit::Hit { at, .. } = run_walk(ob, p, stop, rng) {
        visits += 1;
        p = at;
    }
    visits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_core::{sample_srw_with, LatticeBox};
    use crate::rng::RngStream;

    fn d4() -> Dim {
        Dim::new(4).unwrap()
    }

    #[test]
    fn safe_dist_is_a_lower_bound() {
        let mut rng = RngStream::new(1).into_rng();
        let walk = sample_srw_with(Point::origin(d4()), 5000, &mut rng);
        let set = walk.range();
        let ob = Obstacle::new(set.clone());
        assert!(!ob.levels.is_empty());
        for _ in 0..300 {
            let mut q = Point::origin(d4());
            for i in 0..4 {
                q.set_coord(i, rng.random_range(-60..60));
            }
            let true_d = set.iter().map(|a| a.dist_inf(&q)).min().unwrap();
            assert!(ob.safe_dist(&q) <= true_d, "{q:?}");
        }
    }

    #[test]
    fn skip_ahead_preserves_hitting_law() {
        // Hitting point distribution on a far box, with and without jumps.
        let d = d4();
        let target: PointSet = LatticeBox::centered(Point::axis(d, 0, 12), 1).points().collect();
        let ob = Obstacle::new(target);
        let mut rng = RngStream::new(2).into_rng();
        let n = 20_000;
        let mut jumped = 0usize;
        for _ in 0..n {
            if let Exit::Hit { .. } = run_walk(&ob, Point::origin(d), Stop::kill(ob.center(), 30), &mut rng) {
                jumped += 1;
            }
        }
        // Plain stepping with the same escape rule.
        let mut plain = 0usize;
        for _ in 0..n {
            let mut p = Point::origin(d);
            loop {
                if ob.center().dist_inf(&p) > 30 {
                    break;
                }
                p.step_in_place(rng.random_range(0..8));
                if ob.contains(&p) {
                    plain += 1;
                    break;
                }
            }
        }
        let (a, b) = (jumped as f64 / n as f64, plain as f64 / n as f64);
        let se = ((a * (1.0 - a) + b * (1.0 - b)) / n as f64).sqrt();
        assert!((a - b).abs() < 4.0 * se, "{a} vs {b}");
    }
}
