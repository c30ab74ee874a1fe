//! Length laws ρ on N and the moment functionals built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};
use crate::lattice_core::Dim;

/// ε₄.
pub const EPS_4: f64 = std::f64::consts::PI * std::f64::consts::PI / 8.0;

/// Monte Carlo value of ε₅ from `estimate_epsilon` (20 walks of length 4000,
/// exact capacity, seed 55); stderr about 0.0025, T = 1000 gives 0.4239.
pub const EPS_5_ESTIMATE: f64 = 0.4233;

/// Default ε_d: exact for d = 4, the frozen estimate for d = 5, none above.
pub fn default_eps(d: Dim) -> Option<f64> {
    match d.get() {
        4 => Some(EPS_4),
        5 => Some(EPS_5_ESTIMATE),
        _ => None,
    }
}

/// Reweighting of ρ used by the samplers: l ↦ w(l)ρ(l), normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bias {
    None,
    /// w(l) = l + 1
    PlusOne,
    /// w(l) = l
    Size,
    /// w(l) = l(l + 1)
    SizePlusOne,
}

#[derive(Clone, Debug, PartialEq)]
enum Family {
    Geometric { lambda: f64 },
    Dirac { n: u64 },
    Pmf { support: Vec<u64>, probs: Vec<f64> },
    Scaled { l: f64, values: Vec<f64>, probs: Vec<f64> },
    SizeBiased(Box<LengthDistribution>),
}

/// A probability law on lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "Value")]
pub struct LengthDistribution {
    family: Family,
    /// Finite-support families are materialized as sorted (length, mass) rows.
    table: Option<Table>,
}

#[derive(Clone, Debug, PartialEq)]
struct Table {
    lens: Vec<u64>,
    probs: Vec<f64>,
}

impl Table {
    fn new(mut rows: Vec<(u64, f64)>) -> Result<Table> {
        rows.sort_by_key(|r| r.0);
        let mut lens: Vec<u64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (l, p) in rows {
            if !(p >= 0.0) || !p.is_finite() {
                return invalid(format!("negative or non-finite mass {p}"));
            }
            if lens.last() == Some(&l) {
                *probs.last_mut().unwrap() += p;
            } else {
                lens.push(l);
                probs.push(p);
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("pmf sums to {total}, not 1"));
        }
        Ok(Table { lens, probs })
    }

    fn tail(&self, k: u32, m: u64) -> f64 {
        let start = self.lens.partition_point(|&l| l < m);
        self.lens[start..].iter().zip(&self.probs[start..]).map(|(&l, p)| (l as f64).powi(k as i32) * p).sum()
    }

    fn sample_weighted<R: Rng + ?Sized>(&self, bias: Bias, rng: &mut R) -> u64 {
        let w = |l: u64| -> f64 { bias_weight(bias, l) };
        let total: f64 = self.lens.iter().zip(&self.probs).map(|(&l, p)| w(l) * p).sum();
        let mut u = rng.random::<f64>() * total;
        for (&l, p) in self.lens.iter().zip(&self.probs) {
            let m = w(l) * p;
            if u < m {
                return l;
            }
            u -= m;
        }
        // Floating-point leftovers land on the last positive-weight row.
        *self.lens.iter().zip(&self.probs).rev().find(|(&l, p)| w(l) * **p > 0.0).unwrap().0
    }
}

fn bias_weight(bias: Bias, l: u64) -> f64 {
    let l = l as f64;
    match bias {
        Bias::None => 1.0,
        Bias::PlusOne => l + 1.0,
        Bias::Size => l,
        Bias::SizePlusOne => l * (l + 1.0),
    }
}

/// Geometric variate on {0, 1, …} with success probability λ, by inversion.
fn sample_geo<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda >= 1.0 {
        return 0;
    }
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    (u.ln() / (1.0 - lambda).ln()).floor() as u64
}

impl LengthDistribution {
    /// Geo(λ)(n) = λ(1 − λ)^n.
    pub fn geometric(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return invalid(format!("geometric parameter must lie in (0,1], got {lambda}"));
        }
        Ok(LengthDistribution { family: Family::Geometric { lambda }, table: None })
    }

    /// The geometric law with mean T, i.e. λ = 1/(T + 1).
    pub fn geometric_mean(t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return invalid(format!("geometric mean must be finite and ≥ 0, got {t}"));
        }
        Self::geometric(1.0 / (t + 1.0))
    }

    pub fn dirac(n: u64) -> Self {
        LengthDistribution { family: Family::Dirac { n }, table: Some(Table { lens: vec![n], probs: vec![1.0] }) }
    }

    /// Explicit table: `probs[i]` is the mass of `support[i]`.
    pub fn pmf(support: Vec<u64>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() || support.is_empty() {
            return invalid("pmf support and probabilities must be nonempty and of equal length");
        }
        let table = Table::new(support.iter().copied().zip(probs.iter().copied()).collect())?;
        Ok(LengthDistribution { family: Family::Pmf { support, probs }, table: Some(table) })
    }

    /// Law of ⌊l·ξ⌋ for ξ finitely supported on nonnegative reals.
    pub fn scaled(l: f64, values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return invalid("scaled base law must be nonempty with matching lengths");
        }
        if !(l >= 0.0) || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("scaled family needs l ≥ 0 and ξ ≥ 0");
        }
        let rows = values.iter().zip(&probs).map(|(v, p)| ((l * v).floor() as u64, *p)).collect();
        let table = Table::new(rows)?;
        Ok(LengthDistribution { family: Family::Scaled { l, values, probs }, table: Some(table) })
    }

    /// ρ̂(k) = kρ(k)/μ₁.
    pub fn size_biased(&self) -> Result<Self> {
        let m1 = self.moment(1);
        if m1 <= 0.0 {
            return invalid("size-biasing needs μ₁ > 0");
        }
        let table = match &self.table {
            Some(t) => {
                let rows = t.lens.iter().zip(&t.probs).map(|(&l, p)| (l, l as f64 * p / m1)).collect();
                Some(Table::new(rows)?)
            }
            None => None,
        };
        Ok(LengthDistribution { family: Family::SizeBiased(Box::new(self.clone())), table })
    }

    pub fn is_geometric(&self) -> Option<f64> {
        match self.family {
            Family::Geometric { lambda } => Some(lambda),
            _ => None,
        }
    }

    pub fn pmf_at(&self, n: u64) -> f64 {
        if let Some(t) = &self.table {
            return match t.lens.binary_search(&n) {
                Ok(i) => t.probs[i],
                Err(_) => 0.0,
            };
        }
        match &self.family {
            Family::Geometric { lambda } => lambda * (1.0 - lambda).powf(n as f64),
            Family::SizeBiased(base) => n as f64 * base.pmf_at(n) / base.moment(1),
            _ => unreachable!("finite families carry a table"),
        }
    }

    /// Largest length with positive mass, if finite.
    pub fn max_support(&self) -> Option<u64> {
        self.table.as_ref().map(|t| {
            let i = t.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
            t.lens[i]
        })
    }

    /// μ_k = Σ l^k ρ(l).
    pub fn moment(&self, k: u32) -> f64 {
        self.tail_moment(k, 0)
    }

    /// μ_k^{(m)} = Σ_{l ≥ m} l^k ρ(l).
    pub fn tail_moment(&self, k: u32, m: u64) -> f64 {
        if let Some(t) = &self.table {
            return t.tail(k, m);
        }
        match &self.family {
            Family::Geometric { lambda } => geo_tail_moment(*lambda, k, m),
            Family::SizeBiased(base) => base.tail_moment(k + 1, m) / base.moment(1),
            _ => unreachable!(),
        }
    }

    /// Smallest n with P[T ≤ n] ≥ p.
    pub fn quantile(&self, p: f64) -> u64 {
        let p = p.clamp(0.0, 1.0);
        if let Some(t) = &self.table {
            let mut acc = 0.0;
            for (&l, q) in t.lens.iter().zip(&t.probs) {
                acc += q;
                if acc >= p - 1e-15 {
                    return l;
                }
            }
            return *t.lens.last().unwrap();
        }
        match &self.family {
            Family::Geometric { lambda } => {
                if *lambda >= 1.0 || p <= 0.0 {
                    return 0;
                }
                // P[T > n] = (1 − λ)^{n+1} ≤ 1 − p
                let n = ((1.0 - p).ln() / (1.0 - lambda).ln()).ceil() - 1.0;
                n.max(0.0) as u64
            }
            Family::SizeBiased(_) => {
                let mut acc = 0.0;
                let mut n = 0u64;
                loop {
                    acc += self.pmf_at(n);
                    if acc >= p - 1e-15 || n > 1 << 40 {
                        return n;
                    }
                    n += 1;
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.sample_biased(Bias::None, rng)
    }

    /// Draw from l ↦ w(l)ρ(l) / Σ w ρ.
    pub fn sample_biased<R: Rng + ?Sized>(&self, bias: Bias, rng: &mut R) -> u64 {
        if let Some(t) = &self.table {
            return t.sample_weighted(bias, rng);
        }
        match &self.family {
            Family::Geometric { lambda } => {
                // l^{(j)}-biased geometric laws are shifted negative binomials:
                // (l+1)ρ(l) ∝ law of G₁+G₂, lρ(l) ∝ 1+G₁+G₂, l(l+1)ρ(l) ∝ 1+G₁+G₂+G₃.
                let g = |rng: &mut R| sample_geo(*lambda, rng);
                match bias {
                    Bias::None => g(rng),
                    Bias::PlusOne => g(rng) + g(rng),
                    Bias::Size => 1 + g(rng) + g(rng),
                    Bias::SizePlusOne => 1 + g(rng) + g(rng) + g(rng),
                }
            }
            Family::SizeBiased(base) => match bias {
                Bias::None => base.sample_biased(Bias::Size, rng),
                Bias::PlusOne => base.sample_biased(Bias::SizePlusOne, rng),
                _ => unimplemented!("higher biasing of a size-biased geometric law"),
            },
            _ => unreachable!(),
        }
    }

    /// Draw m with mass μ₀^{(m)}/(μ₁ + 1) (a uniform time in a (T+1)-biased length).
    pub fn sample_tail_index<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let l = self.sample_biased(Bias::PlusOne, rng);
        rng.random_range(0..=l)
    }

    /// Draw m with mass μ₁^{(m)}/(μ₂ + μ₁).
    pub fn sample_size_tail_index<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let l = self.sample_biased(Bias::SizePlusOne, rng);
        rng.random_range(0..=l)
    }

    /// ϑ(ρ, C) = Σ_{L ≥ Cμ₁} ρ(L)L² / μ₂.
    pub fn appropriateness_theta(&self, c: f64) -> Result<f64> {
        if !(c >= 0.0) {
            return invalid("C must be ≥ 0");
        }
        let m2 = self.moment(2);
        if m2 <= 0.0 {
            return invalid("μ₂ = 0");
        }
        let cut = (c * self.moment(1)).ceil();
        if cut > 1e18 {
            return Ok(0.0);
        }
        Ok(self.tail_moment(2, cut as u64) / m2)
    }

    pub fn to_json(&self) -> Value {
        match &self.family {
            Family::Geometric { lambda } => json!({"family": "geometric", "params": {"lambda": lambda}}),
            Family::Dirac { n } => json!({"family": "dirac", "params": {"n": n}}),
            Family::Pmf { support, probs } => json!({"family": "pmf", "params": {"support": support, "probs": probs}}),
            Family::Scaled { l, values, probs } => {
                json!({"family": "scaled", "params": {"l": l, "values": values, "probs": probs}})
            }
            Family::SizeBiased(base) => json!({"family": "size-biased", "params": {"base": base.to_json()}}),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let family = v.get("family").and_then(Value::as_str).ok_or_else(|| Error::Validation("missing family".into()))?;
        let params = v.get("params").cloned().unwrap_or(Value::Null);
        let num = |k: &str| params.get(k).and_then(Value::as_f64);
        let vec_f = |k: &str| -> Result<Vec<f64>> {
            params
                .get(k)
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Validation(format!("missing array {k}")))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Validation(format!("non-numeric entry in {k}"))))
                .collect()
        };
        match family {
            "geometric" => match (num("lambda"), num("T")) {
                (Some(l), _) => Self::geometric(l),
                (None, Some(t)) => Self::geometric_mean(t),
                _ => invalid("geometric needs lambda or T"),
            },
            "dirac" => {
                let n = params.get("n").and_then(Value::as_u64).ok_or_else(|| Error::Validation("dirac needs n".into()))?;
                Ok(Self::dirac(n))
            }
            "pmf" => {
                let probs = vec_f("probs")?;
                let support: Vec<u64> = match params.get("support") {
                    Some(s) => s
                        .as_array()
                        .ok_or_else(|| Error::Validation("support must be an array".into()))?
                        .iter()
                        .map(|x| x.as_u64().ok_or_else(|| Error::Validation("support entries must be naturals".into())))
                        .collect::<Result<_>>()?,
                    None => (0..probs.len() as u64).collect(),
                };
                Self::pmf(support, probs)
            }
            "scaled" => {
                let l = num("l").ok_or_else(|| Error::Validation("scaled needs l".into()))?;
                Self::scaled(l, vec_f("values")?, vec_f("probs")?)
            }
            "size-biased" => {
                let base = params.get("base").ok_or_else(|| Error::Validation("size-biased needs base".into()))?;
                Self::from_json(base)?.size_biased()
            }
            other => invalid(format!("unknown length family {other}")),
        }
    }

    /// Short label for CSV params columns.
    pub fn label(&self) -> String {
        match &self.family {
            Family::Geometric { lambda } => format!("geo(T={})", (1.0 - lambda) / lambda),
            Family::Dirac { n } => format!("dirac({n})"),
            Family::Pmf { .. } => "pmf".into(),
            Family::Scaled { l, .. } => format!("scaled(l={l})"),
            Family::SizeBiased(b) => format!("sizebiased({})", b.label()),
        }
    }
}

impl TryFrom<Value> for LengthDistribution {
    type Error = Error;
    fn try_from(v: Value) -> Result<Self> {
        Self::from_json(&v)
    }
}

impl From<LengthDistribution> for Value {
    fn from(r: LengthDistribution) -> Value {
        r.to_json()
    }
}

/// Σ_{l≥m} l^k λ(1−λ)^l in closed form for k ≤ 2, by series otherwise.
fn geo_tail_moment(lambda: f64, k: u32, m: u64) -> f64 {
    if lambda >= 1.0 {
        return if m == 0 && k == 0 { 1.0 } else if m == 0 { 0.0 } else { 0.0 };
    }
    let q = 1.0 - lambda;
    let mean = q / lambda;
    let second = q * (2.0 - lambda) / (lambda * lambda);
    // Memorylessness: given T ≥ m, T − m is again Geo(λ).
    let pm = q.powf(m as f64);
    let mf = m as f64;
    match k {
        0 => pm,
        1 => pm * (mf + mean),
        2 => pm * (mf * mf + 2.0 * mf * mean + second),
        _ => {
            let mut s = 0.0;
            let mut l = m;
            let mut p = lambda * pm;
            loop {
                let term = (l as f64).powi(k as i32) * p;
                s += term;
                if term < 1e-18 * s.max(1e-300) && l > m + 10 {
                    break;
                }
                l += 1;
                p *= q;
                if p == 0.0 {
                    break;
                }
            }
            s
        }
    }
}

/// u_n = μ₁(1 + log μ₁·1_{d=4}) / (ε_d μ₂).
pub fn reference_intensity(rho: &LengthDistribution, d: Dim, eps_d: f64) -> Result<f64> {
    if !(eps_d > 0.0) {
        return invalid("ε_d must be positive");
    }
    let m1 = rho.moment(1);
    if m1 <= 0.0 {
        return invalid("reference intensity needs μ₁ > 0");
    }
    Ok(m1 * log_factor(m1, d) / (eps_d * rho.moment(2)))
}

/// 1 + log x·1_{d=4}.
pub fn log_factor(x: f64, d: Dim) -> f64 {
    if d.get() == 4 {
        1.0 + x.ln()
    } else {
        1.0
    }
}

/// (u_n^−, u_n^+) = ((1 − ε)u_n, (1 + ε)u_n).
pub fn perturbed(u_n: f64, eps: f64) -> Result<(f64, f64)> {
    if !(0.0..0.5).contains(&eps) {
        return invalid(format!("ε must lie in [0, 1/2), got {eps}"));
    }
    Ok(((1.0 - eps) * u_n, (1.0 + eps) * u_n))
}

/// u·μ₂·ε_d / (μ₁(1 + log μ₁·1_{d=4})), which tends to 1 at criticality.
pub fn asymptotic_ratio(u: f64, rho: &LengthDistribution, d: Dim, eps_d: f64) -> f64 {
    let m1 = rho.moment(1);
    u * rho.moment(2) * eps_d / (m1 * log_factor(m1, d))
}
