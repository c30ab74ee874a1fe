//! Points, boxes and nearest-neighbour trajectories on Z^d.

use std::fmt;

use base64::Engine;
use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Largest supported dimension. Points are stored inline.
pub const MAX_D: usize = 8;
pub const MIN_D: usize = 4;

pub type PointSet = FxHashSet<Point>;
pub type PointMap<V> = FxHashMap<Point, V>;

/// Validated lattice dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dim(u8);

impl Dim {
    pub fn new(d: usize) -> Result<Dim> {
        if !(MIN_D..=MAX_D).contains(&d) {
            return invalid(format!("dimension must lie in {MIN_D}..={MAX_D}, got {d}"));
        }
        Ok(Dim(d as u8))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Number of unit moves, 2d.
    #[inline]
    pub fn moves(self) -> u8 {
        2 * self.0
    }
}

impl TryFrom<usize> for Dim {
    type Error = crate::error::Error;
    fn try_from(d: usize) -> Result<Dim> {
        Dim::new(d)
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.get()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    c: [i32; MAX_D],
    d: u8,
}

impl Point {
    pub fn origin(d: Dim) -> Point {
        Point { c: [0; MAX_D], d: d.0 }
    }

    pub fn new(coords: &[i32]) -> Result<Point> {
        let d = Dim::new(coords.len())?;
        let mut c = [0; MAX_D];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Point { c, d: d.0 })
    }

    /// All coordinates equal to `v`.
    pub fn diag(d: Dim, v: i32) -> Point {
        let mut p = Point::origin(d);
        for i in 0..d.get() {
            p.c[i] = v;
        }
        p
    }

    /// `v` times the i-th unit vector.
    pub fn axis(d: Dim, i: usize, v: i32) -> Point {
        let mut p = Point::origin(d);
        p.c[i] = v;
        p
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        Dim(self.d)
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.c[..self.d as usize]
    }

    #[inline]
    pub fn coord(&self, i: usize) -> i32 {
        self.c[i]
    }

    #[inline]
    pub fn set_coord(&mut self, i: usize, v: i32) {
        self.c[i] = v;
    }

    #[inline]
    pub fn add(&self, o: &Point) -> Point {
        let mut p = *self;
        for i in 0..self.d as usize {
            p.c[i] += o.c[i];
        }
        p
    }

    #[inline]
    pub fn sub(&self, o: &Point) -> Point {
        let mut p = *self;
        for i in 0..self.d as usize {
            p.c[i] -= o.c[i];
        }
        p
    }

    pub fn scale(&self, k: i32) -> Point {
        let mut p = *self;
        for i in 0..self.d as usize {
            p.c[i] *= k;
        }
        p
    }

    #[inline]
    pub fn step(&self, code: u8) -> Point {
        let mut p = *self;
        let axis = (code >> 1) as usize;
        p.c[axis] += if code & 1 == 0 { 1 } else { -1 };
        p
    }

    #[inline]
    pub fn step_in_place(&mut self, code: u8) {
        let axis = (code >> 1) as usize;
        self.c[axis] += if code & 1 == 0 { 1 } else { -1 };
    }

    #[inline]
    pub fn norm_inf(&self) -> i64 {
        self.coords().iter().map(|v| (*v as i64).abs()).max().unwrap_or(0)
    }

    #[inline]
    pub fn norm_l1(&self) -> i64 {
        self.coords().iter().map(|v| (*v as i64).abs()).sum()
    }

    #[inline]
    pub fn dist_inf(&self, o: &Point) -> i64 {
        (0..self.d as usize).map(|i| (self.c[i] as i64 - o.c[i] as i64).abs()).max().unwrap_or(0)
    }

    #[inline]
    pub fn dist_l1(&self, o: &Point) -> i64 {
        (0..self.d as usize).map(|i| (self.c[i] as i64 - o.c[i] as i64).abs()).sum()
    }

    pub fn neighbours(&self) -> impl Iterator<Item = Point> + '_ {
        (0..2 * self.d).map(move |c| self.step(c))
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Point, D::Error> {
        let v: Vec<i32> = Vec::deserialize(de)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

/// Step code between two neighbouring points.
pub fn step_code(from: &Point, to: &Point) -> Option<u8> {
    let diff = to.sub(from);
    if diff.norm_l1() != 1 {
        return None;
    }
    let axis = (0..from.d as usize).find(|&i| diff.c[i] != 0)?;
    Some(2 * axis as u8 + u8::from(diff.c[axis] < 0))
}

/// Canonical order used everywhere a set is iterated: ℓ∞ norm, then lexicographic.
pub fn canonical_cmp(a: &Point, b: &Point) -> std::cmp::Ordering {
    a.norm_inf().cmp(&b.norm_inf()).then_with(|| a.cmp(b))
}

pub fn sorted_points(set: &PointSet) -> Vec<Point> {
    let mut v: Vec<Point> = set.iter().copied().collect();
    v.sort();
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxKind {
    /// B(x, r) = { y : |y − x|∞ ≤ r }.
    Centered,
    /// x + [0, R)^d.
    Corner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatticeBox {
    pub anchor: Point,
    pub size: u32,
    pub kind: BoxKind,
}

impl LatticeBox {
    pub fn centered(x: Point, r: u32) -> Self {
        LatticeBox { anchor: x, size: r, kind: BoxKind::Centered }
    }

    pub fn corner(x: Point, side: u32) -> Self {
        LatticeBox { anchor: x, size: side, kind: BoxKind::Corner }
    }

    pub fn contains(&self, y: &Point) -> bool {
        let d = self.anchor.d as usize;
        match self.kind {
            BoxKind::Centered => self.anchor.dist_inf(y) <= self.size as i64,
            BoxKind::Corner => (0..d).all(|i| {
                let t = y.c[i] as i64 - self.anchor.c[i] as i64;
                t >= 0 && t < self.size as i64
            }),
        }
    }

    /// Lower corner and side length of the box as a cube.
    fn cube(&self) -> (Point, i64) {
        match self.kind {
            BoxKind::Centered => {
                let r = self.size as i32;
                (self.anchor.sub(&Point::diag(self.anchor.dim(), r)), 2 * r as i64 + 1)
            }
            BoxKind::Corner => (self.anchor, self.size as i64),
        }
    }

    pub fn volume(&self) -> u64 {
        let (_, side) = self.cube();
        (side.max(0) as u64).pow(self.anchor.d as u32)
    }

    /// Lowest corner.
    pub fn lo(&self) -> Point {
        self.cube().0
    }

    /// Highest corner.
    pub fn hi(&self) -> Point {
        let (lo, side) = self.cube();
        lo.add(&Point::diag(lo.dim(), side as i32 - 1))
    }

    pub fn side(&self) -> i64 {
        self.cube().1
    }

    /// Inverse of [`LatticeBox::point_at`].
    pub fn index_of(&self, y: &Point) -> Option<u64> {
        if !self.contains(y) {
            return None;
        }
        let (lo, side) = self.cube();
        Some((0..lo.d as usize).fold(0u64, |acc, i| acc * side as u64 + (y.c[i] - lo.c[i]) as u64))
    }

    /// The idx-th point in lexicographic order.
    pub fn point_at(&self, mut idx: u64) -> Point {
        let (mut p, side) = self.cube();
        for i in (0..p.d as usize).rev() {
            p.c[i] += (idx % side as u64) as i32;
            idx /= side as u64;
        }
        p
    }

    /// Iterate points in lexicographic order.
    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.volume()).map(move |idx| self.point_at(idx))
    }

    /// The same box grown by `margin` on every side.
    pub fn padded(&self, margin: u32) -> LatticeBox {
        match self.kind {
            BoxKind::Centered => LatticeBox::centered(self.anchor, self.size + margin),
            BoxKind::Corner => {
                LatticeBox::corner(self.anchor.sub(&Point::diag(self.anchor.dim(), margin as i32)), self.size + 2 * margin)
            }
        }
    }
}

/// B(A, r): union of ℓ∞ balls of radius r around the points of A.
pub fn sausage<'a>(a: impl IntoIterator<Item = &'a Point>, r: u32) -> PointSet {
    let mut out = PointSet::default();
    for x in a {
        out.extend(LatticeBox::centered(*x, r).points());
    }
    out
}

/// Finite nearest-neighbour path stored as a start point plus one byte per step.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trajectory {
    start: Point,
    steps: Vec<u8>,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Trajectory({:?}, T={})", self.start, self.steps.len())
    }
}

impl Trajectory {
    pub fn point(start: Point) -> Self {
        Trajectory { start, steps: Vec::new() }
    }

    pub fn from_steps(start: Point, steps: Vec<u8>) -> Result<Self> {
        let m = start.dim().moves();
        if let Some(bad) = steps.iter().find(|&&c| c >= m) {
            return invalid(format!("step code {bad} out of range for d={}", start.d));
        }
        Ok(Trajectory { start, steps })
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        let Some(first) = points.first() else {
            return invalid("empty point list");
        };
        let mut steps = Vec::with_capacity(points.len() - 1);
        for w in points.windows(2) {
            match step_code(&w[0], &w[1]) {
                Some(c) => steps.push(c),
                None => return invalid("consecutive points are not neighbours"),
            }
        }
        Ok(Trajectory { start: *first, steps })
    }

    #[inline]
    pub fn start(&self) -> Point {
        self.start
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.start.dim()
    }

    /// T(η), the number of steps.
    #[inline]
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    #[inline]
    pub fn steps(&self) -> &[u8] {
        &self.steps
    }

    pub fn end(&self) -> Point {
        let mut p = self.start;
        for &c in &self.steps {
            p.step_in_place(c);
        }
        p
    }

    /// η(t); O(t).
    pub fn at(&self, t: usize) -> Point {
        let mut p = self.start;
        for &c in &self.steps[..t] {
            p.step_in_place(c);
        }
        p
    }

    /// η(0), …, η(T).
    pub fn points(&self) -> Points<'_> {
        Points { cur: self.start, steps: &self.steps, i: 0, done: false }
    }

    pub fn range(&self) -> PointSet {
        let mut s = PointSet::default();
        s.reserve(self.len() + 1);
        s.extend(self.points());
        s
    }

    pub fn translate(&self, by: &Point) -> Trajectory {
        Trajectory { start: self.start.add(by), steps: self.steps.clone() }
    }

    /// ℓ∞ diameter of the range.
    pub fn diam(&self) -> i64 {
        let d = self.start.d as usize;
        let mut lo = self.start.c;
        let mut hi = self.start.c;
        for p in self.points() {
            for i in 0..d {
                lo[i] = lo[i].min(p.c[i]);
                hi[i] = hi[i].max(p.c[i]);
            }
        }
        (0..d).map(|i| (hi[i] - lo[i]) as i64).max().unwrap_or(0)
    }

    /// Time reversal: (η(T − s))_{0≤s≤T}.
    pub fn reversed(&self) -> Trajectory {
        let steps = self.steps.iter().rev().map(|c| c ^ 1).collect();
        Trajectory { start: self.end(), steps }
    }

    pub fn push_step(&mut self, code: u8) {
        self.steps.push(code);
    }
}

pub struct Points<'a> {
    cur: Point,
    steps: &'a [u8],
    i: usize,
    done: bool,
}

impl Iterator for Points<'_> {
    type Item = Point;
    #[inline]
    fn next(&mut self) -> Option<Point> {
        if self.done {
            return None;
        }
        let out = self.cur;
        if self.i < self.steps.len() {
            self.cur.step_in_place(self.steps[self.i]);
            self.i += 1;
        } else {
            self.done = true;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = if self.done { 0 } else { self.steps.len() - self.i + 1 };
        (n, Some(n))
    }
}

impl ExactSizeIterator for Points<'_> {}

/// Simple random walk of `length` steps from `start`.
pub fn sample_srw(start: Point, length: usize, stream: RngStream) -> Trajectory {
    let mut rng = stream.into_rng();
    sample_srw_with(start, length, &mut rng)
}

pub fn sample_srw_with<R: Rng + ?Sized>(start: Point, length: usize, rng: &mut R) -> Trajectory {
    let m = start.dim().moves();
    let steps = (0..length).map(|_| rng.random_range(0..m)).collect();
    Trajectory { start, steps }
}

/// Endpoint displacement of an m-step walk, drawn directly in O(d).
///
/// The step counts per axis are multinomial and the signed displacement on an
/// axis with n steps is 2·Bin(n, ½) − n, which is the exact law of the endpoint.
pub fn srw_displacement<R: Rng + ?Sized>(d: Dim, m: u64, rng: &mut R) -> Point {
    use rand_distr::{Binomial, Distribution};
    let dd = d.get();
    let mut p = Point::origin(d);
    let mut left = m;
    for i in 0..dd {
        let n = if i + 1 == dd {
            left
        } else if left == 0 {
            0
        } else {
            let q = 1.0 / (dd - i) as f64;
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        left -= n;
        let plus = if n == 0 { 0 } else { Binomial::new(n, 0.5).expect("valid binomial").sample(rng) };
        p.c[i] = (2 * plus as i64 - n as i64) as i32;
    }
    p
}

/// η1 followed by η2 translated to start at η1's endpoint.
pub fn concatenate(a: &Trajectory, b: &Trajectory) -> Trajectory {
    let mut steps = Vec::with_capacity(a.len() + b.len());
    steps.extend_from_slice(&a.steps);
    steps.extend_from_slice(&b.steps);
    Trajectory { start: a.start, steps }
}

/// η[a, b].
pub fn sub_path(eta: &Trajectory, a: usize, b: usize) -> Result<Trajectory> {
    if a > b || b > eta.len() {
        return invalid(format!("sub_path [{a},{b}] outside [0,{}]", eta.len()));
    }
    Ok(Trajectory { start: eta.at(a), steps: eta.steps[a..b].to_vec() })
}

/// First time η visits A.
pub fn hitting_time(eta: &Trajectory, a: &PointSet) -> Option<usize> {
    eta.points().position(|p| a.contains(&p))
}

pub fn translation_equivalent(a: &Trajectory, b: &Trajectory) -> bool {
    a.start.d == b.start.d && a.steps == b.steps
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryRecord {
    pub d: usize,
    pub start: Vec<i32>,
    pub steps: String,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            d: t.start.d as usize,
            start: t.start.coords().to_vec(),
            steps: base64::engine::general_purpose::STANDARD.encode(&t.steps),
        }
    }
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = crate::error::Error;
    fn try_from(r: TrajectoryRecord) -> Result<Trajectory> {
        if r.start.len() != r.d {
            return invalid("start length does not match d");
        }
        let start = Point::new(&r.start)?;
        let steps = base64::engine::general_purpose::STANDARD
            .decode(r.steps.as_bytes())
            .map_err(|e| crate::error::Error::Validation(format!("bad base64: {e}")))?;
        Trajectory::from_steps(start, steps)
    }
}

pub fn trajectory_to_json(t: &Trajectory) -> String {
    serde_json::to_string(&TrajectoryRecord::from(t)).expect("record serializes")
}

pub fn trajectory_from_json(line: &str) -> Result<Trajectory> {
    let rec: TrajectoryRecord = serde_json::from_str(line)?;
    rec.try_into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d4() -> Dim {
        Dim::new(4).unwrap()
    }

    #[test]
    fn dim_bounds() {
        assert!(Dim::new(3).is_err());
        assert!(Dim::new(4).is_ok());
        assert!(Dim::new(MAX_D + 1).is_err());
    }

    #[test]
    fn zero_length_walk() {
        let t = sample_srw(Point::origin(d4()), 0, RngStream::new(1));
        assert_eq!(t.len(), 0);
        assert_eq!(t.points().count(), 1);
    }

    #[test]
    fn ten_step_walk_is_nearest_neighbour() {
        let t = sample_srw(Point::origin(d4()), 10, RngStream::new(2));
        let pts: Vec<Point> = t.points().collect();
        assert_eq!(pts.len(), 11);
        for w in pts.windows(2) {
            assert_eq!(w[0].dist_l1(&w[1]), 1);
        }
    }

    #[test]
    fn endpoint_coordinate_variance() {
        // Var of one coordinate after T steps is T/d.
        let n = 10_000;
        let root = RngStream::new(3);
        let xs: Vec<f64> = (0..n)
            .map(|i| sample_srw(Point::origin(d4()), 100, root.child(i)).end().coord(0) as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Standard error of a sample variance of a near-Gaussian: var·sqrt(2/(n−1)).
        let se = 25.0 * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - 25.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn two_step_endpoint_law_matches_enumeration() {
        let d = d4();
        let o = Point::origin(d);
        let mut exact: PointMap<f64> = PointMap::default();
        for a in 0..d.moves() {
            for b in 0..d.moves() {
                *exact.entry(o.step(a).step(b)).or_default() += 1.0 / 64.0;
            }
        }
        assert_eq!(exact.len(), 1 + 8 + 24);
        assert!((exact[&o] - 8.0 / 64.0).abs() < 1e-15);
        let n = 100_000usize;
        let mut rng = RngStream::new(4).into_rng();
        let mut counts: PointMap<f64> = PointMap::default();
        for _ in 0..n {
            *counts.entry(sample_srw_with(o, 2, &mut rng).end()).or_default() += 1.0;
        }
        let mut chi2 = 0.0;
        for (p, q) in &exact {
            let e = q * n as f64;
            let c = counts.get(p).copied().unwrap_or(0.0);
            chi2 += (c - e).powi(2) / e;
        }
        assert_eq!(counts.len(), exact.len());
        let p = crate::stats::chi2_sf(chi2, (exact.len() - 1) as f64);
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn displacement_law_matches_walk() {
        let d = d4();
        let mut rng = RngStream::new(5).into_rng();
        let n = 20_000;
        let mut s2 = 0.0;
        for _ in 0..n {
            s2 += (srw_displacement(d, 64, &mut rng).coord(2) as f64).powi(2);
        }
        let var = s2 / n as f64;
        assert!((var - 16.0).abs() < 3.0 * 16.0 * (2.0 / n as f64).sqrt(), "var {var}");
        // parity: the ℓ1 norm has the parity of m
        for _ in 0..100 {
            assert_eq!(srw_displacement(d, 63, &mut rng).norm_l1() % 2, 1);
        }
    }

    #[test]
    fn concatenate_examples() {
        let d = d4();
        let a = sample_srw(Point::origin(d), 3, RngStream::new(6));
        let b = sample_srw(Point::axis(d, 0, 7), 5, RngStream::new(7));
        assert_eq!(concatenate(&a, &Trajectory::point(Point::axis(d, 1, 9))), a);
        let c = concatenate(&a, &b);
        assert_eq!(c.len(), 8);
        assert_eq!(c.at(4), a.end().add(&b.at(1).sub(&b.start())));
    }

    #[test]
    fn sub_path_examples() {
        let t = sample_srw(Point::origin(d4()), 20, RngStream::new(8));
        assert_eq!(sub_path(&t, 0, 20).unwrap(), t);
        let s = sub_path(&t, 5, 5).unwrap();
        assert_eq!(s.len(), 0);
        assert_eq!(s.start(), t.at(5));
        assert!(sub_path(&t, 5, 21).is_err());
        assert!(sub_path(&t, 6, 5).is_err());
    }

    #[test]
    fn hitting_time_examples() {
        let d = d4();
        let o = Point::origin(d);
        let pts = [o, o.step(0), o.step(0).step(2), o.step(0).step(2).step(4)];
        let t = Trajectory::from_points(&pts).unwrap();
        let a: PointSet = [o].into_iter().collect();
        assert_eq!(hitting_time(&t, &a), Some(0));
        let a: PointSet = [pts[2], pts[3]].into_iter().collect();
        assert_eq!(hitting_time(&t, &a), Some(2));
        let a: PointSet = [Point::axis(d, 3, 5)].into_iter().collect();
        assert_eq!(hitting_time(&t, &a), None);
    }

    #[test]
    fn translation_equivalence_examples() {
        let d = d4();
        let t = Trajectory::from_steps(Point::origin(d), vec![0, 0, 2]).unwrap();
        assert!(translation_equivalent(&t, &t));
        assert!(translation_equivalent(&t, &t.translate(&Point::axis(d, 0, 1))));
        assert!(!translation_equivalent(&t, &t.reversed()));
    }

    #[test]
    fn box_membership() {
        let d = d4();
        let b = LatticeBox::centered(Point::origin(d), 2);
        assert_eq!(b.volume(), 625);
        assert_eq!(b.points().count(), 625);
        assert!(b.points().all(|p| b.contains(&p)));
        assert!(!b.contains(&Point::axis(d, 1, 3)));
        let c = LatticeBox::corner(Point::diag(d, 1), 3);
        assert_eq!(c.points().count(), 81);
        assert!(c.contains(&Point::diag(d, 3)));
        assert!(!c.contains(&Point::diag(d, 4)));
        // B(A, r) is the union of the balls.
        let a = [Point::origin(d), Point::axis(d, 0, 10)];
        assert_eq!(sausage(a.iter(), 1).len(), 2 * 81);
    }

    proptest! {
        #[test]
        fn splice_round_trip(seed in 0u64..10_000, len in 0usize..60, frac in 0.0f64..=1.0) {
            let t = sample_srw(Point::origin(d4()), len, RngStream::new(seed));
            let a = (frac * len as f64) as usize;
            let left = sub_path(&t, 0, a).unwrap();
            let right = sub_path(&t, a, len).unwrap();
            prop_assert_eq!(concatenate(&left, &right), t);
        }

        #[test]
        fn ndjson_round_trip(seed in 0u64..10_000, len in 0usize..200, d in 4usize..=6) {
            let dim = Dim::new(d).unwrap();
            let t = sample_srw(Point::diag(dim, -3), len, RngStream::new(seed));
            let line = trajectory_to_json(&t);
            prop_assert_eq!(trajectory_from_json(&line).unwrap(), t);
        }

        #[test]
        fn reproducible_and_unit_steps(seed in 0u64..10_000, len in 0usize..200) {
            let a = sample_srw(Point::origin(d4()), len, RngStream::new(seed).child(1));
            let b = sample_srw(Point::origin(d4()), len, RngStream::new(seed).child(1));
            prop_assert_eq!(&a, &b);
            let pts: Vec<Point> = a.points().collect();
            for w in pts.windows(2) {
                prop_assert_eq!(w[0].dist_l1(&w[1]), 1);
            }
            prop_assert!(a.range().len() <= len + 1);
        }

        #[test]
        fn reversal_is_involution(seed in 0u64..10_000, len in 0usize..100) {
            let t = sample_srw(Point::origin(d4()), len, RngStream::new(seed));
            prop_assert_eq!(t.reversed().reversed(), t.clone());
            prop_assert_eq!(t.reversed().end(), t.start());
        }
    }
}
