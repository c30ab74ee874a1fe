use std::collections::VecDeque;

use rand_distr::{Distribution, Geometric};

use crate::error::{invalid, Result};
use crate::lattice_core::{Dim, LatticeBox, Point};
use crate::rng::RngStream;

/// ω^q on the coarse box [−radius, radius]^d.
#[derive(Clone, Debug)]
pub struct OmegaSample {
    pub window: LatticeBox,
    /// Indexed by the lexicographic position in `window`.
    pub open: Vec<bool>,
    /// Open cluster of the origin, sorted; empty when the origin is closed.
    pub origin_cluster: Vec<Point>,
}

impl OmegaSample {
    pub fn is_open(&self, x: &Point) -> bool {
        self.window.contains(x) && self.open[index(&self.window, x)]
    }

    pub fn open_fraction(&self) -> f64 {
        self.open.iter().filter(|&&o| o).count() as f64 / self.open.len() as f64
    }

    /// All open clusters, each sorted, largest first.
    pub fn clusters(&self) -> Vec<Vec<Point>> {
        let mut seen = vec![false; self.open.len()];
        let mut out = Vec::new();
        for (i, x) in self.window.points().enumerate() {
            if self.open[i] && !seen[i] {
                out.push(self.flood(x, &mut seen));
            }
        }
        out.sort_by_key(|c| std::cmp::Reverse(c.len()));
        out
    }

    fn flood(&self, x: Point, seen: &mut [bool]) -> Vec<Point> {
        let mut comp = vec![x];
        seen[index(&self.window, &x)] = true;
        let mut queue = VecDeque::from([x]);
        while let Some(p) = queue.pop_front() {
            for y in p.neighbours() {
                if self.window.contains(&y) {
                    let j = index(&self.window, &y);
                    if self.open[j] && !seen[j] {
                        seen[j] = true;
                        comp.push(y);
                        queue.push_back(y);
                    }
                }
            }
        }
        comp.sort();
        comp
    }
}

fn index(b: &LatticeBox, x: &Point) -> usize {
    b.index_of(x).expect("point in window") as usize
}

/// ω^q_x = 1 iff no Ber(q) mark lies in B(x, 2γ). Marks live on the window
/// padded by ⌊2γ⌋ and are drawn by geometric skipping in lexicographic order.
pub fn sample_omega_q(q: f64, gamma: f64, d: Dim, radius: u32, stream: RngStream) -> Result<OmegaSample> {
    if !(0.0..=1.0).contains(&q) {
        return invalid(format!("q = {q} outside [0, 1]"));
    }
    if !(gamma >= 0.0) {
        return invalid("γ must be nonnegative");
    }
    let r = (2.0 * gamma).floor() as u32;
    let window = LatticeBox::centered(Point::origin(d), radius);
    let marks_box = LatticeBox::centered(Point::origin(d), radius + r);
    let mut open = vec![true; window.volume() as usize];
    let mut rng = stream.into_rng();
    let mut close_around = |y: Point| {
        for x in LatticeBox::centered(y, r).points() {
            if window.contains(&x) {
                open[index(&window, &x)] = false;
            }
        }
    };
    if q >= 1.0 {
        open.iter_mut().for_each(|o| *o = false);
    } else if q > 0.0 {
        let skip = Geometric::new(q).expect("q in (0, 1)");
        let n = marks_box.volume();
        let mut i = skip.sample(&mut rng);
        while i < n {
            close_around(marks_box.point_at(i));
            i = i.saturating_add(1).saturating_add(skip.sample(&mut rng));
        }
    }
    let mut s = OmegaSample { window, open, origin_cluster: Vec::new() };
    let o = Point::origin(d);
    if s.is_open(&o) {
        let mut seen = vec![false; s.open.len()];
        s.origin_cluster = s.flood(o, &mut seen);
    }
    Ok(s)
}

/// The largest open cluster meets both opposite faces of the window in every axis.
pub fn spans_box(s: &OmegaSample) -> bool {
    let Some(big) = s.clusters().into_iter().next() else { return false };
    let (lo, hi) = (s.window.lo(), s.window.hi());
    (0..lo.dim().get()).all(|i| big.iter().any(|p| p.coord(i) == lo.coord(i)) && big.iter().any(|p| p.coord(i) == hi.coord(i)))
}
