//! Exact lattice-point enumeration for positive-definite forms.
//!
//! The search is guided by a floating-point LDL decomposition of the form
//! (Fincke–Pohst style), with the pruning bound widened by a small relative
//! margin so float error can only admit extra candidates, never drop real
//! ones. Every candidate is then checked in exact integer arithmetic, so all
//! reported vectors, counts, and witnesses are exact.

use std::ops::ControlFlow;

use crate::arith::exact_sqrt;
use crate::bitset::Bitset;
use crate::error::{Error, Result};
use crate::form::GramForm;

/// Budget for one enumeration call, counted in visited search-tree nodes.
#[derive(Clone, Copy, Debug)]
pub struct EnumLimits {
    pub max_points: u64,
}

impl Default for EnumLimits {
    fn default() -> Self {
        EnumLimits {
            max_points: 4_000_000_000,
        }
    }
}

impl EnumLimits {
    pub fn with_max_points(max_points: u64) -> Self {
        EnumLimits { max_points }
    }
}

/// Relative widening applied to float pruning bounds.
const WIDEN: f64 = 1.0 + 9.4e-10; // 1 + 2⁻³⁰
/// Absolute slack applied to interval endpoints before rounding.
const END_SLACK: f64 = 1e-9;

struct Ldl {
    d: Vec<f64>,
    u: Vec<f64>,
}

/// LDL decomposition of `Q = A/2` (so `Q(x) = Σ d_i (x_i + Σ_{j>i} u_ij x_j)²`).
fn ldl(form: &GramForm) -> Ldl {
    let n = form.rank();
    let mut q: Vec<f64> = form.matrix().iter().map(|&v| v as f64 / 2.0).collect();
    for i in 0..n {
        let p = q[i * n + i];
        debug_assert!(p > 0.0, "form must be positive definite");
        for j in i + 1..n {
            q[j * n + i] = q[i * n + j];
            q[i * n + j] /= p;
        }
        for k in i + 1..n {
            let saved = q[k * n + i];
            for l in k..n {
                q[k * n + l] -= saved * q[i * n + l];
            }
        }
    }
    let d = (0..n).map(|i| q[i * n + i]).collect();
    Ldl { d, u: q }
}

struct Walker<'a> {
    n: usize,
    a: &'a [i64],
    ldl: Ldl,
    bound: i128,
    visited: u64,
    max_points: u64,
    x: Vec<i64>,
    /// `w[j] = Σ_{k > current level} A[j][k]·x_k`, maintained incrementally.
    w: Vec<i128>,
}

impl<'a> Walker<'a> {
    fn new(form: &'a GramForm, bound: i128, limits: &EnumLimits) -> Self {
        let n = form.rank();
        assert!(n >= 1, "enumeration needs rank ≥ 1");
        Walker {
            n,
            a: form.matrix(),
            ldl: ldl(form),
            bound,
            visited: 0,
            max_points: limits.max_points,
            x: vec![0; n],
            w: vec![0; n],
        }
    }

    fn budget_check(&mut self) -> Result<()> {
        self.visited += 1;
        if self.visited > self.max_points {
            return Err(Error::ResourceLimit(format!(
                "exceeded {} visited nodes (bound {})",
                self.max_points, self.bound
            )));
        }
        Ok(())
    }

    /// Center and half-width of the admissible interval for `x_level`.
    fn interval(&self, level: usize, budget: f64) -> (i64, i64, f64) {
        let n = self.n;
        let mut c = 0.0;
        for j in level + 1..n {
            c += self.ldl.u[level * n + j] * self.x[j] as f64;
        }
        let s = (budget.max(0.0) / self.ldl.d[level]).sqrt();
        let lo = (-c - s - END_SLACK).ceil() as i64;
        let hi = (-c + s + END_SLACK).floor() as i64;
        (lo, hi, c)
    }

    fn assign(&mut self, level: usize, v: i64, val: i128) -> i128 {
        self.x[level] = v;
        let child_val = val
            + (self.a[level * self.n + level] as i128 / 2) * (v as i128) * (v as i128)
            + v as i128 * self.w[level];
        if v != 0 {
            for j in 0..self.n {
                self.w[j] += self.a[j * self.n + level] as i128 * v as i128;
            }
        }
        child_val
    }

    fn unassign(&mut self, level: usize, v: i64) {
        self.x[level] = 0;
        if v != 0 {
            for j in 0..self.n {
                self.w[j] -= self.a[j * self.n + level] as i128 * v as i128;
            }
        }
    }

    /// Visits every nonzero `x` with `Q(x) ≤ bound`, one representative per
    /// `±x` pair (the highest-index nonzero coordinate is positive).
    fn scan<F>(&mut self, level: usize, budget: f64, val: i128, sym: bool, emit: &mut F) -> Result<ControlFlow<()>>
    where
        F: FnMut(&[i64], i128) -> ControlFlow<()>,
    {
        let (mut lo, hi, c) = self.interval(level, budget);
        if sym {
            lo = lo.max(0);
        }
        for v in lo..=hi {
            self.budget_check()?;
            let child_val = self.assign(level, v, val);
            let flow = if level == 0 {
                if (sym && v == 0) || child_val > self.bound {
                    ControlFlow::Continue(())
                } else {
                    emit(&self.x, child_val)
                }
            } else {
                let dv = v as f64 + c;
                let child_budget = budget - self.ldl.d[level] * dv * dv;
                self.scan(level - 1, child_budget, child_val, sym && v == 0, emit)?
            };
            self.unassign(level, v);
            if flow.is_break() {
                return Ok(ControlFlow::Break(()));
            }
        }
        Ok(ControlFlow::Continue(()))
    }

    /// Finds `x` with `Q(x) = target` exactly, solving the final coordinate as
    /// an integer quadratic instead of scanning it.
    fn solve(&mut self, level: usize, budget: f64, val: i128, target: i128) -> Result<Option<Vec<i64>>> {
        if level == 0 {
            // c2·v² + w0·v + (val − target) = 0 with c2 = A[0][0]/2.
            let c2 = self.a[0] as i128 / 2;
            let w0 = self.w[0];
            let c0 = val - target;
            let disc = w0 * w0 - 4 * c2 * c0;
            let Some(r) = exact_sqrt(disc) else {
                return Ok(None);
            };
            for root in [r, -r] {
                let num = -w0 + root;
                if num % (2 * c2) == 0 {
                    let v = num / (2 * c2);
                    if let Ok(vi) = i64::try_from(v) {
                        self.x[0] = vi;
                        debug_assert_eq!(
                            val + c2 * v * v + w0 * v,
                            target
                        );
                        return Ok(Some(self.x.clone()));
                    }
                }
                if r == 0 {
                    break;
                }
            }
            return Ok(None);
        }
        let (lo, hi, c) = self.interval(level, budget);
        for v in lo..=hi {
            self.budget_check()?;
            let child_val = self.assign(level, v, val);
            let dv = v as f64 + c;
            let child_budget = budget - self.ldl.d[level] * dv * dv;
            let found = self.solve(level - 1, child_budget, child_val, target)?;
            self.unassign(level, v);
            if found.is_some() {
                return Ok(found);
            }
        }
        Ok(None)
    }
}

/// Visits one representative of each `±x` pair with `0 < Q(x) ≤ bound`,
/// passing the exact value; stops early if the callback breaks.
pub fn visit_up_to<F>(form: &GramForm, bound: i128, limits: &EnumLimits, mut emit: F) -> Result<()>
where
    F: FnMut(&[i64], i128) -> ControlFlow<()>,
{
    if bound < 1 || form.rank() == 0 {
        return Ok(());
    }
    let mut walker = Walker::new(form, bound, limits);
    let budget = bound as f64 * WIDEN + END_SLACK;
    let _ = walker.scan(form.rank() - 1, budget, 0, true, &mut emit)?;
    Ok(())
}

/// Representation counts `r_Q(n)` for `0 ≤ n ≤ cap` (vectors counted with sign,
/// so entries are even for `n > 0` and `r_Q(0) = 1`).
pub fn theta_counts(form: &GramForm, cap: u64, limits: &EnumLimits) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; cap as usize + 1];
    counts[0] = 1;
    visit_up_to(form, cap as i128, limits, |_, val| {
        counts[val as usize] += 2;
        ControlFlow::Continue(())
    })?;
    Ok(counts)
}

/// Bitset over `0..=cap` marking which values the form represents (bit 0 set).
pub fn representation_bitset(form: &GramForm, cap: u64, limits: &EnumLimits) -> Result<Bitset> {
    let mut bits = Bitset::new(cap as usize + 1);
    bits.set(0);
    visit_up_to(form, cap as i128, limits, |_, val| {
        bits.set(val as usize);
        ControlFlow::Continue(())
    })?;
    Ok(bits)
}

/// All `x` (one per `±` pair) with `0 < Q(x) ≤ bound`, sorted by value then
/// lexicographically — a deterministic ordering for downstream use.
pub fn short_vectors(form: &GramForm, bound: i128, limits: &EnumLimits) -> Result<Vec<(Vec<i64>, i128)>> {
    let mut out = Vec::new();
    visit_up_to(form, bound, limits, |x, val| {
        out.push((x.to_vec(), val));
        ControlFlow::Continue(())
    })?;
    out.sort_unstable_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// The shell of vectors of exact norm `m` (one per `±` pair).
pub fn vectors_of_norm(form: &GramForm, m: i128, limits: &EnumLimits) -> Result<Vec<Vec<i64>>> {
    Ok(short_vectors(form, m, limits)?
        .into_iter()
        .filter(|(_, val)| *val == m)
        .map(|(x, _)| x)
        .collect())
}

/// Exact representation test: a witness `x` with `Q(x) = n`, if one exists.
pub fn represents(form: &GramForm, n: i128, limits: &EnumLimits) -> Result<Option<Vec<i64>>> {
    if n < 0 {
        return Ok(None);
    }
    if n == 0 {
        return Ok(Some(vec![0; form.rank()]));
    }
    if form.rank() == 0 {
        return Ok(None);
    }
    let mut walker = Walker::new(form, n, limits);
    let budget = n as f64 * WIDEN + END_SLACK;
    let witness = walker.solve(form.rank() - 1, budget, 0, n)?;
    if let Some(x) = &witness {
        debug_assert_eq!(form.evaluate(x), n);
    }
    Ok(witness)
}

/// Smallest positive value the form represents.
pub fn min_positive(form: &GramForm, limits: &EnumLimits) -> Result<i128> {
    let diag_min = (0..form.rank())
        .map(|i| form.entry(i, i) as i128 / 2)
        .min()
        .expect("rank ≥ 1");
    let mut best = diag_min;
    visit_up_to(form, diag_min, limits, |_, val| {
        best = best.min(val);
        ControlFlow::Continue(())
    })?;
    Ok(best)
}
