//! Analytic certification for quaternary forms.
//!
//! A positive-definite quaternary form with enough cusp-form mass represents
//! every sufficiently "multiplicatively heavy" integer in the target set; the
//! remaining integers form a finite, explicitly enumerable candidate list.
//! This module provides the three ingredients of that pipeline:
//!
//! 1. the multiplicative weight `F₄(n)` together with an enumerator for
//!    `{ n ∈ S : F₄(n) ≤ F }` (squarefree `n`, plus a closure step for square
//!    multiples of the surviving exceptions),
//! 2. a sublattice auditor that decides representability of each candidate
//!    with an exact split-and-scan search, and
//! 3. rigorous floating-point bound arithmetic (Petersson partial sums,
//!    cusp-norm lower bounds, Cauchy–Schwarz peak bounds) that produces the
//!    threshold `F` itself.
//!
//! Soundness convention: every floating-point quantity is rounded in the
//! direction that keeps the final decision conservative. Chains that must not
//! miss a candidate are rounded down (`F₄` lower bounds), analytic constants
//! that cap the cusp contribution are rounded up. A borderline integer can
//! therefore only be over-reported as a candidate (and then audited exactly),
//! never silently dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::OnceLock;

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;

use crate::arith;
use crate::bessel::{Dd, PI_DD};
use crate::bitset::Bitset;
use crate::enumerate::{self, EnumLimits};
use crate::error::{Error, Result};
use crate::form::GramForm;
use crate::regular::{self, CertMethod, ExceptionReport};
use crate::target::TargetSet;

pub use crate::bessel::psi;

// ---------------------------------------------------------------------------
// Directed-rounding primitives
// ---------------------------------------------------------------------------

/// Strict lower bound on the exact product `a·b` (one ulp below the correctly
/// rounded product, which never exceeds the true value by more than one ulp).
#[inline]
fn mul_down(a: f64, b: f64) -> f64 {
    (a * b).next_down()
}

/// Strict upper bound on the exact product `a·b`.
#[inline]
fn mul_up(a: f64, b: f64) -> f64 {
    (a * b).next_up()
}

/// Lower bound on `√v` for integer `v`.
fn sqrt_down_u128(v: u128) -> f64 {
    let mut vf = v as f64;
    if v > (1u128 << 53) {
        // the cast itself may have rounded up
        vf = vf.next_down();
    }
    vf.sqrt().next_down()
}

/// Upper bound on `√v` for integer `v`.
fn sqrt_up_u128(v: u128) -> f64 {
    let mut vf = v as f64;
    if v > (1u128 << 53) {
        vf = vf.next_up();
    }
    vf.sqrt().next_up()
}

/// Lower bound on `(p−1)/(p+1)`.
fn ratio_down(p: u64) -> f64 {
    let q = (((p - 1) as f64) / ((p + 1) as f64)).next_down();
    if p > (1u64 << 52) {
        q.next_down().next_down()
    } else {
        q
    }
}

/// Upper bound on `(p−1)/(p+1)`.
fn ratio_up(p: u64) -> f64 {
    let q = (((p - 1) as f64) / ((p + 1) as f64)).next_up();
    if p > (1u64 << 52) {
        q.next_up().next_up()
    } else {
        q
    }
}

/// Exact double-double image of a `u128` (error-free below 2^106, which covers
/// every quantity this module feeds in).
fn dd_from_u128(n: u128) -> Dd {
    let mut acc = Dd::ZERO;
    for shift in [96u32, 64, 32, 0] {
        let limb = ((n >> shift) & 0xffff_ffff) as f64;
        acc = acc.mul_f64(4294967296.0).add_f64(limb);
    }
    acc
}

/// `x < y` as double-double values.
fn dd_less(x: Dd, y: Dd) -> bool {
    let d = x.sub(y);
    d.hi < 0.0 || (d.hi == 0.0 && d.lo < 0.0)
}

/// Largest `f64` that does not exceed the exact rational `r`.
fn rational_to_f64_down(r: &BigRational) -> Result<f64> {
    let mut v = r
        .to_f64()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Domain("rational value does not fit in f64".to_string()))?;
    while BigRational::from_float(v).is_some_and(|fv| &fv > r) {
        v = v.next_down();
    }
    loop {
        let next = v.next_up();
        match BigRational::from_float(next) {
            Some(fv) if &fv <= r => v = next,
            _ => break,
        }
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// F4 weight
// ---------------------------------------------------------------------------

/// Level/character data of a quaternary form, together with the analytic
/// threshold `F`; everything the weight `F₄` and its enumerator need.
#[derive(Debug, Clone, Copy)]
pub struct F4Context {
    level: i128,
    disc: i128,
    threshold: f64,
}

impl F4Context {
    /// Builds a context from an explicit level, discriminant (`det A`), and
    /// threshold.
    pub fn new(level: i128, disc: i128, threshold: f64) -> Result<F4Context> {
        if level < 1 {
            return Err(Error::Domain(format!(
                "level must be positive, got {level}"
            )));
        }
        if disc == 0 {
            return Err(Error::Domain(
                "discriminant must be nonzero".to_string(),
            ));
        }
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(Error::Domain(format!(
                "threshold must be finite and nonnegative, got {threshold}"
            )));
        }
        Ok(F4Context {
            level,
            disc,
            threshold,
        })
    }

    /// Context of a rank-4 form at the given threshold.
    pub fn for_form(form: &GramForm, threshold: f64) -> Result<F4Context> {
        if form.rank() != 4 {
            return Err(Error::Domain(format!(
                "expected a rank-4 form, got rank {}",
                form.rank()
            )));
        }
        F4Context::new(form.level(), form.det(), threshold)
    }

    pub fn level(&self) -> i128 {
        self.level
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Quadratic character of the form's discriminant at `p`.
    pub fn character(&self, p: u64) -> i32 {
        arith::kronecker(self.disc, p as i128)
    }

    /// A prime contributes the extra factor `(p−1)/(p+1)` exactly when it is
    /// inert for the discriminant character and does not divide the level.
    fn penalized(&self, p: u64) -> bool {
        self.level % (p as i128) != 0 && self.character(p) == -1
    }

    /// Lower bound on the weight factor of a single prime.
    fn factor_down(&self, p: u64) -> f64 {
        let root = sqrt_down_u128(p as u128) / 2.0;
        if self.penalized(p) {
            mul_down(root, ratio_down(p))
        } else {
            root
        }
    }

    /// Upper bound on the weight factor of a single prime.
    fn factor_up(&self, p: u64) -> f64 {
        let root = sqrt_up_u128(p as u128) / 2.0;
        if self.penalized(p) {
            mul_up(root, ratio_up(p))
        } else {
            root
        }
    }
}

/// Lower bound on the weight factor of a prime power `p^e`:
/// `√(p^e)/(e+1)`, times `(p−1)/(p+1)` when the prime is penalized.
fn general_factor_down(ctx: &F4Context, p: u64, e: u32) -> f64 {
    if e == 1 {
        return ctx.factor_down(p);
    }
    let Some(pe) = (p as u128).checked_pow(e) else {
        return f64::INFINITY;
    };
    let root = sqrt_down_u128(pe);
    let base = (root / (e as f64 + 1.0)).next_down();
    if ctx.penalized(p) {
        mul_down(base, ratio_down(p))
    } else {
        base
    }
}

/// Folds the per-prime-power lower bounds over a factorization (ascending
/// primes), giving the canonical lower-rounded chain for `F₄(n)`. The empty
/// factorization (n = 1) gives exactly 1.
pub(crate) fn fold_down_general(ctx: &F4Context, factors: &[(u64, u32)]) -> f64 {
    let mut v = 1.0f64;
    for &(p, e) in factors {
        v = mul_down(v, general_factor_down(ctx, p, e));
        if v.is_infinite() {
            return v;
        }
    }
    v
}

/// Lower-rounded multiplicative weight `F₄(n)` of a squarefree integer.
///
/// `F₄(1) = 1`; for squarefree `n = p₁⋯p_k` the weight is the product of
/// `√p/2`, with the extra factor `(p−1)/(p+1)` at penalized primes. Every
/// multiplication is rounded down, so the result never exceeds the true
/// value. Errors with [`Error::Domain`] on `n = 0` or non-squarefree `n`.
pub fn f4(ctx: &F4Context, n: u64) -> Result<f64> {
    let factors = squarefree_factors(n)?;
    Ok(fold_down_general(ctx, &factors))
}

/// Enclosing interval `[lo, hi]` for the exact weight `F₄(n)` of a squarefree
/// integer (same domain restrictions as [`f4`]).
pub fn f4_interval(ctx: &F4Context, n: u64) -> Result<(f64, f64)> {
    let factors = squarefree_factors(n)?;
    let lo = fold_down_general(ctx, &factors);
    let mut hi = 1.0f64;
    for &(p, _) in &factors {
        hi = mul_up(hi, ctx.factor_up(p));
    }
    Ok((lo, hi))
}

fn squarefree_factors(n: u64) -> Result<Vec<(u64, u32)>> {
    if n == 0 {
        return Err(Error::Domain("weight is undefined at 0".to_string()));
    }
    let factors = arith::factorize(n);
    if factors.iter().any(|&(_, e)| e > 1) {
        return Err(Error::Domain(format!("{n} is not squarefree")));
    }
    Ok(factors)
}

/// Converts an Eisenstein lower bound `c_e` (exact rational) and a cusp peak
/// bound `c_q` into the candidate threshold `F = c_q / c_e`, rounded up.
pub fn f_threshold(c_e: &BigRational, c_q: f64) -> Result<f64> {
    if !c_q.is_finite() || c_q < 0.0 {
        return Err(Error::Domain(format!(
            "cusp bound must be finite and nonnegative, got {c_q}"
        )));
    }
    if c_e <= &BigRational::zero() {
        return Err(Error::Domain(
            "Eisenstein lower bound must be positive".to_string(),
        ));
    }
    if c_q == 0.0 {
        return Ok(0.0);
    }
    let ce = rational_to_f64_down(c_e)?;
    if ce <= 0.0 {
        return Err(Error::Domain(
            "Eisenstein lower bound underflows f64".to_string(),
        ));
    }
    Ok((c_q / ce).next_up())
}

// ---------------------------------------------------------------------------
// Candidate enumeration
// ---------------------------------------------------------------------------

/// Relative slack applied to the threshold before pruning: a subtree is
/// abandoned only when its best achievable down-rounded chain exceeds
/// `F·(1+PRUNE_EPS)`. The chain accumulates at most a few dozen one-ulp
/// roundings (≈ 10⁻¹⁴ relative), so the margin keeps pruning sound.
const PRUNE_EPS: f64 = 1e-12;

/// Hard ceiling for the prime sieve backing an enumeration.
const SIEVE_CAP: u64 = 250_000_000;

/// Depth-first enumerator for `{ n squarefree, n ∈ S : F₄(n) ≤ F }`.
///
/// Work splits into independent branches: branch `0` is the single integer
/// `n = 1`, branch `i ≥ 1` contains exactly the candidates whose smallest
/// prime factor is the `i`-th usable prime. Branches can be processed in
/// parallel and re-merged deterministically.
pub struct F4Enumerator {
    threshold: f64,
    break_bound: f64,
    modulus: u64,
    member: Vec<bool>,
    primes: Vec<u64>,
    factor: Vec<f64>,
    /// `tail[i]` = down-rounded product of the sub-1 factors among
    /// `factor[i..]`; multiplying a chain by it bounds every descendant from
    /// below.
    tail: Vec<f64>,
    /// `floor[i]` = exact minimum of `factor[i..]` (the per-prime factors are
    /// not monotone across the penalized/unpenalized boundary).
    floor: Vec<f64>,
}

impl F4Enumerator {
    pub fn new(ctx: &F4Context, target: &TargetSet) -> Result<F4Enumerator> {
        let threshold = ctx.threshold;
        let break_bound = threshold * (1.0 + PRUNE_EPS);
        let (modulus, residues) = target.residue_classes();
        let mut member = vec![false; modulus as usize];
        for r in &residues {
            member[*r as usize] = true;
        }
        // A prime can appear in a member of S unless it divides the modulus
        // while no admitted residue is divisible by it.
        let admissible = |p: u64| -> bool {
            modulus % p != 0 || residues.iter().any(|&r| r % p == 0)
        };
        // Product of the shrinking factors available from the small primes:
        // dividing the prune bound by it caps how large a usable prime's own
        // factor may be. Primes ≥ 13 always have factor ≥ √13/2·(12/14) > 1.5.
        let mut l_all = 1.0f64;
        for p in [2u64, 3, 5, 7, 11] {
            if admissible(p) {
                let g = ctx.factor_down(p);
                if g < 1.0 {
                    l_all = mul_down(l_all, g);
                }
            }
        }
        // Any usable prime p ≥ 170 satisfies factor(p) ≥ 0.4·√p, hence
        // p ≤ (bound/(0.4·l_all))²; smaller primes are always sieved.
        let x = break_bound / (0.4 * l_all);
        if !x.is_finite() || x * x >= SIEVE_CAP as f64 {
            return Err(Error::ResourceLimit(format!(
                "threshold {threshold} needs a prime sieve beyond {SIEVE_CAP}"
            )));
        }
        let sieve_bound = ((x * x) as u64 + 16).max(170);
        let primes: Vec<u64> = arith::primes_up_to(sieve_bound)
            .into_iter()
            .filter(|&p| admissible(p))
            .filter(|&p| mul_down(ctx.factor_down(p), l_all) <= break_bound)
            .collect();
        let factor: Vec<f64> = primes.iter().map(|&p| ctx.factor_down(p)).collect();
        let mut tail = vec![1.0f64; primes.len() + 1];
        for i in (0..primes.len()).rev() {
            tail[i] = if factor[i] < 1.0 {
                mul_down(tail[i + 1], factor[i])
            } else {
                tail[i + 1]
            };
        }
        let mut floor = vec![f64::INFINITY; primes.len() + 1];
        for i in (0..primes.len()).rev() {
            floor[i] = factor[i].min(floor[i + 1]);
        }
        Ok(F4Enumerator {
            threshold,
            break_bound,
            modulus,
            member,
            primes,
            factor,
            tail,
            floor,
        })
    }

    /// Number of independent branches (`1 +` the number of usable primes).
    pub fn branch_count(&self) -> usize {
        self.primes.len() + 1
    }

    /// The usable primes, ascending.
    pub fn usable_primes(&self) -> &[u64] {
        &self.primes
    }

    fn is_member(&self, n: u128) -> bool {
        n > 0 && self.member[(n % self.modulus as u128) as usize]
    }

    /// Walks all extensions of the chain `(n, v)` by primes at indices
    /// `start..`; `v` is the down-rounded chain for `n`. Returns `false` when
    /// the emit callback aborts.
    fn walk<F: FnMut(u128) -> bool>(&self, start: usize, n: u128, v: f64, emit: &mut F) -> bool {
        for j in start..self.primes.len() {
            // Beyond the small primes no shrinking factors remain, so once
            // even the smallest remaining factor pushes the chain over the
            // bound, every extension does.
            if self.primes[j] >= 13 && mul_down(v, self.floor[j]) > self.break_bound {
                break;
            }
            let child = mul_down(v, self.factor[j]);
            if mul_down(child, self.tail[j + 1]) > self.break_bound {
                continue;
            }
            let Some(np) = n.checked_mul(self.primes[j] as u128) else {
                // Unreachable for live chains: the weight of a product this
                // large vastly exceeds any sievable threshold.
                debug_assert!(false, "chain overflow in candidate walk");
                break;
            };
            if child <= self.threshold && self.is_member(np) && !emit(np) {
                return false;
            }
            if !self.walk(j + 1, np, child, emit) {
                return false;
            }
        }
        true
    }

    /// Runs one branch through the callback; `emit` returns `false` to abort.
    pub fn run_branch<F: FnMut(u128) -> bool>(&self, branch: usize, emit: &mut F) -> bool {
        if branch == 0 {
            if 1.0 <= self.threshold && self.is_member(1) {
                return emit(1);
            }
            return true;
        }
        let j = branch - 1;
        let child = mul_down(1.0, self.factor[j]);
        if mul_down(child, self.tail[j + 1]) > self.break_bound {
            return true;
        }
        let p = self.primes[j] as u128;
        if child <= self.threshold && self.is_member(p) && !emit(p) {
            return false;
        }
        self.walk(j + 1, p, child, emit)
    }

    /// Counts candidates across a branch window, in parallel; returns
    /// `(count, largest candidate)` (0 for an empty window).
    pub fn count_range(&self, lo: usize, hi: usize) -> Result<(u64, u64)> {
        let hi = hi.min(self.branch_count());
        (lo..hi)
            .into_par_iter()
            .map(|branch| {
                let mut count = 0u64;
                let mut max = 0u64;
                let mut oversized = false;
                self.run_branch(branch, &mut |n| {
                    match u64::try_from(n) {
                        Ok(v) => {
                            count += 1;
                            max = max.max(v);
                            true
                        }
                        Err(_) => {
                            oversized = true;
                            false
                        }
                    }
                });
                if oversized {
                    Err(Error::ResourceLimit(
                        "candidate exceeds u64".to_string(),
                    ))
                } else {
                    Ok((count, max))
                }
            })
            .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1.max(b.1))))
    }

    /// Collects candidates across a branch window (deterministic branch
    /// order), failing once more than `cap` candidates appear.
    pub fn collect_range(&self, lo: usize, hi: usize, cap: u64) -> Result<Vec<u64>> {
        let hi = hi.min(self.branch_count());
        let total = AtomicU64::new(0);
        let lists = (lo..hi)
            .into_par_iter()
            .map(|branch| {
                let mut out = Vec::new();
                let mut failure: Option<Error> = None;
                self.run_branch(branch, &mut |n| {
                    let Ok(v) = u64::try_from(n) else {
                        failure = Some(Error::ResourceLimit(
                            "candidate exceeds u64".to_string(),
                        ));
                        return false;
                    };
                    if total.fetch_add(1, Ordering::Relaxed) >= cap {
                        failure = Some(Error::ResourceLimit(format!(
                            "more than {cap} candidates"
                        )));
                        return false;
                    }
                    out.push(v);
                    true
                });
                match failure {
                    Some(e) => Err(e),
                    None => Ok(out),
                }
            })
            .collect::<Result<Vec<Vec<u64>>>>()?;
        Ok(lists.concat())
    }
}

/// All squarefree members of the target with `F₄(n) ≤ F`, sorted ascending.
/// Fails with [`Error::ResourceLimit`] if more than `cap` integers qualify.
pub fn enumerate_f4_below(ctx: &F4Context, target: &TargetSet, cap: u64) -> Result<Vec<u64>> {
    let enumerator = F4Enumerator::new(ctx, target)?;
    let mut out = enumerator.collect_range(0, enumerator.branch_count(), cap)?;
    out.sort_unstable();
    Ok(out)
}

/// Counts the squarefree members of the target with `F₄(n) ≤ F`; returns
/// `(count, largest candidate)`.
pub fn count_f4_below(ctx: &F4Context, target: &TargetSet) -> Result<(u64, u64)> {
    let enumerator = F4Enumerator::new(ctx, target)?;
    enumerator.count_range(0, enumerator.branch_count())
}

// ---------------------------------------------------------------------------
// Split sublattices and the exact audit
// ---------------------------------------------------------------------------

/// An orthogonal split `⟨e⟩ ⊥ K` inside a form's lattice: `Q(w·e + k) =
/// scale·w² + Q_K(k)`, so representability can be tested by scanning `w` and
/// deciding `n − scale·w²` against the complement `K`.
#[derive(Debug, Clone)]
pub struct SplitSublattice {
    /// `Q(e)`, the coefficient of `w²` in the split.
    pub scale: i128,
    /// The split vector `e` in form coordinates.
    pub vector: Vec<i64>,
    /// Gram form of the orthogonal complement `K = e^⊥` (saturated kernel).
    pub ternary: GramForm,
    /// Basis of `K` in form coordinates (rows).
    pub basis: Vec<Vec<i64>>,
}

fn build_split_from_vector(form: &GramForm, e: &[i64]) -> Option<SplitSublattice> {
    let scale = form.evaluate(e);
    if scale <= 0 {
        return None;
    }
    let n = form.rank();
    let mut w = vec![0i128; n];
    for (i, wi) in w.iter_mut().enumerate() {
        for j in 0..n {
            *wi += form.entry(i, j) as i128 * e[j] as i128;
        }
    }
    if w.iter().all(|&v| v == 0) {
        return None;
    }
    let mut kernel = regular::kernel_of_vector(&w);
    regular::shrink_basis(form, &mut kernel);
    let basis: Vec<Vec<i64>> = kernel
        .into_iter()
        .map(|v| v.into_iter().map(i64::try_from).collect::<std::result::Result<Vec<i64>, _>>())
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    let gram = form.gram_of(&basis);
    let entries: Vec<i64> = gram
        .into_iter()
        .map(i64::try_from)
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    let ternary = GramForm::new(n - 1, entries).ok()?;
    Some(SplitSublattice {
        scale,
        vector: e.to_vec(),
        ternary,
        basis,
    })
}

/// Finds the canonical split of a form: `e` a vector of minimal positive
/// value, `K` its saturated orthogonal complement. Returns `Ok(None)` when
/// the rank is too small or the complement does not fit the integer types.
pub fn find_diagonal_split(form: &GramForm, limits: &EnumLimits) -> Result<Option<SplitSublattice>> {
    if form.rank() < 2 {
        return Ok(None);
    }
    let c = enumerate::min_positive(form, limits)?;
    let vectors = enumerate::vectors_of_norm(form, c, limits)?;
    let Some(e) = vectors.into_iter().next() else {
        return Ok(None);
    };
    Ok(build_split_from_vector(form, &e))
}

/// Additional splits with small scales, distinct from `primary` (used to
/// cross-examine stubborn audit survivors before the full search).
fn build_alternative_splits(
    form: &GramForm,
    limits: &EnumLimits,
    primary: &SplitSublattice,
    max_count: usize,
) -> Vec<SplitSublattice> {
    let mut seen: BTreeSet<(i128, String)> =
        [(primary.scale, primary.ternary.digest_label())].into();
    let mut out = Vec::new();
    let base = primary.scale;
    for m in base..base + 9 {
        if out.len() >= max_count {
            break;
        }
        let Ok(vectors) = enumerate::vectors_of_norm(form, m, limits) else {
            continue;
        };
        for e in vectors.into_iter().take(4) {
            if out.len() >= max_count {
                break;
            }
            if let Some(split) = build_split_from_vector(form, &e) {
                let key = (split.scale, split.ternary.digest_label());
                if seen.insert(key) {
                    out.push(split);
                }
            }
        }
    }
    out
}

/// Exact representability test for a rank-3 Gram form: decides whether
/// `Q(x, y, z) = r` has an integer solution by iterating the two coordinates
/// with the smallest ranges over their exact ellipsoid bounds and solving the
/// third by the quadratic formula. Pure integer arithmetic throughout.
pub(crate) fn ternary_represents_exact(t: &GramForm, r: u64) -> bool {
    debug_assert_eq!(t.rank(), 3);
    if r == 0 {
        return true;
    }
    let g = |i: usize, j: usize| t.entry(i, j) as i128;
    let r2 = 2 * r as i128;
    let det = t.det();
    if det <= 0 {
        return false;
    }
    let cof = [
        g(1, 1) * g(2, 2) - g(1, 2) * g(1, 2),
        g(0, 0) * g(2, 2) - g(0, 2) * g(0, 2),
        g(0, 0) * g(1, 1) - g(0, 1) * g(0, 1),
    ];
    // Solve for the coordinate with the largest cofactor: the two looped
    // coordinates then have the smallest ranges x_i² ≤ 2r·cof_i/det.
    let s = (0..3).max_by_key(|&i| cof[i]).unwrap();
    let (a, b) = match s {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let bound = |i: usize| ((r2 * cof[i] / det) as u128).isqrt() as i128 + 1;
    let (ba, bb) = (bound(a), bound(b));
    let gss = g(s, s);
    for xa in 0..=ba {
        let xb_lo = if xa == 0 { 0 } else { -bb };
        for xb in xb_lo..=bb {
            let h = g(a, s) * xa + g(b, s) * xb;
            let c = g(a, a) * xa * xa + 2 * g(a, b) * xa * xb + g(b, b) * xb * xb - r2;
            let disc = h * h - gss * c;
            if disc < 0 {
                continue;
            }
            let root = (disc as u128).isqrt() as i128;
            if root * root != disc {
                continue;
            }
            if (-h + root) % gss == 0 || (-h - root) % gss == 0 {
                return true;
            }
        }
    }
    false
}

/// Tuning knobs for the candidate audit.
#[derive(Debug, Clone)]
pub struct AuditOptions {
    /// Point budget for lattice enumerations (bitset fill, final searches).
    pub limits: EnumLimits,
    /// Hard ceiling for the complement-value bitset (bits).
    pub value_cap_max: u64,
    /// Number of exact complement probes per split before falling back to a
    /// full search.
    pub extra_probes: u32,
    /// The bitset covers roughly `vcap_multiplier·√(scale·n_max)` values, so
    /// the largest candidates still get several cheap probes.
    pub vcap_multiplier: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            limits: EnumLimits::default(),
            value_cap_max: 1 << 27,
            extra_probes: 48,
            vcap_multiplier: 6,
        }
    }
}

/// Decides representability of candidate integers with a split-and-scan
/// search: a bitset of small complement values answers almost every
/// candidate; survivors get exact complement probes at larger values, then
/// alternative splits, and finally a direct search of the full form.
pub struct CandidateAuditor {
    split: SplitSublattice,
    scale: u64,
    bits: Bitset,
    value_cap: u64,
    alternatives: OnceLock<Vec<SplitSublattice>>,
}

impl CandidateAuditor {
    pub fn new(
        form: &GramForm,
        split: SplitSublattice,
        n_max: u64,
        opts: &AuditOptions,
    ) -> Result<CandidateAuditor> {
        if split.ternary.rank() + 1 != form.rank() {
            return Err(Error::Domain(
                "split complement rank does not match the form".to_string(),
            ));
        }
        let scale = u64::try_from(split.scale)
            .map_err(|_| Error::Domain("split scale exceeds u64".to_string()))?;
        let reach = (scale as u128 * n_max.max(1) as u128).isqrt() as u64;
        let wanted = (opts.vcap_multiplier.saturating_mul(reach).saturating_add(scale))
            .max(n_max.min(1 << 21))
            .max(64);
        // Keep the bitset fill inside the point budget: a rank-3 ellipsoid of
        // radius R holds ≈ 0.35·R^1.5/√det_Q lattice points.
        let det_q = (split.ternary.det() as f64 / 8.0).max(1.0);
        let pts_cap =
            (0.9 * opts.limits.max_points as f64 * det_q.sqrt() / 0.35).powf(2.0 / 3.0) as u64;
        let value_cap = wanted.min(opts.value_cap_max).min(pts_cap.max(1 << 16));
        let bits = enumerate::representation_bitset(&split.ternary, value_cap, &opts.limits)?;
        Ok(CandidateAuditor {
            split,
            scale,
            bits,
            value_cap,
            alternatives: OnceLock::new(),
        })
    }

    pub fn value_cap(&self) -> u64 {
        self.value_cap
    }

    pub fn split(&self) -> &SplitSublattice {
        &self.split
    }

    /// Fast positive test: scans `w` ascending (residues `n − scale·w²`
    /// descending into the bitset range) and reports whether some residue is
    /// a known complement value. `false` means "not decided yet", not "not
    /// represented".
    pub fn quick_hit(&self, n: u64) -> bool {
        let c = self.scale as u128;
        let n128 = n as u128;
        let mut w: u128 = if n > self.value_cap {
            (((n - self.value_cap) as u128) / c).isqrt()
        } else {
            0
        };
        loop {
            let q = c * w * w;
            if q > n128 {
                return false;
            }
            let r = (n128 - q) as u64;
            if r <= self.value_cap && self.bits.get(r as usize) {
                return true;
            }
            w += 1;
        }
    }

    fn alternatives(&self, form: &GramForm, opts: &AuditOptions) -> &[SplitSublattice] {
        self.alternatives
            .get_or_init(|| build_alternative_splits(form, &opts.limits, &self.split, 4))
    }

    /// Decides a candidate that failed [`Self::quick_hit`]. Exact complement
    /// probes above the bitset range come first (ascending residues), then
    /// the same scan against alternative splits, then a direct search of the
    /// full form. The only inexact outcome is an error when the direct search
    /// exceeds its point budget.
    pub fn resolve_miss(&self, form: &GramForm, n: u64, opts: &AuditOptions) -> Result<bool> {
        let c = self.scale as u128;
        let n128 = n as u128;
        let wmax = (n128 / c).isqrt();
        let mut probes = 0u32;
        let mut w = wmax;
        loop {
            let r = n128 - c * w * w;
            // residues ≤ value_cap were already rejected by the bitset scan
            if r > self.value_cap as u128 {
                if probes >= opts.extra_probes {
                    break;
                }
                probes += 1;
                if let Ok(r64) = u64::try_from(r) {
                    if ternary_represents_exact(&self.split.ternary, r64) {
                        return Ok(true);
                    }
                }
            }
            if w == 0 {
                break;
            }
            w -= 1;
        }
        for alt in self.alternatives(form, opts) {
            let ca = alt.scale as u128;
            let wmax = (n128 / ca).isqrt();
            let mut probes = 0u32;
            let mut w = wmax;
            loop {
                if probes >= opts.extra_probes {
                    break;
                }
                probes += 1;
                let r = n128 - ca * w * w;
                if let Ok(r64) = u64::try_from(r) {
                    if ternary_represents_exact(&alt.ternary, r64) {
                        return Ok(true);
                    }
                }
                if w == 0 {
                    break;
                }
                w -= 1;
            }
        }
        Ok(enumerate::represents(form, n as i128, &opts.limits)?.is_some())
    }
}

// ---------------------------------------------------------------------------
// Target closure and square multiples
// ---------------------------------------------------------------------------

/// Largest custom modulus accepted by the core-closure check.
const CLOSURE_CHECK_CAP: u64 = 4096;

/// Verifies that the target set is closed under removing square factors:
/// whenever `u·q² ∈ S` for a residue class `u` that contains squarefree
/// integers, `u ∈ S` as well. The audit's squarefree reduction is only sound
/// for such targets.
fn check_core_closed(target: &TargetSet) -> Result<()> {
    let (m, residues) = target.residue_classes();
    if m > CLOSURE_CHECK_CAP {
        return Err(Error::Target(format!(
            "modulus {m} too large for the square-closure check (cap {CLOSURE_CHECK_CAP})"
        )));
    }
    let mut member = vec![false; m as usize];
    for r in &residues {
        member[*r as usize] = true;
    }
    let m_factors = arith::factorize(m);
    for u in 0..m {
        // classes without squarefree integers cannot be cores
        if m_factors
            .iter()
            .any(|&(p, e)| e >= 2 && u % (p * p) == 0)
        {
            continue;
        }
        if member[u as usize] {
            continue;
        }
        for q in 1..=m {
            let v = ((u as u128 * (q as u128 * q as u128)) % m as u128) as u64;
            if member[v as usize] {
                return Err(Error::Target(format!(
                    "target is not closed under removing square factors: \
                     {u}·{q}² ≡ {v} (mod {m}) is in S but {u} is not"
                )));
            }
        }
    }
    Ok(())
}

/// Enumerates every `n = e·m²` with `m > 1`, `n ∈ S`, and down-rounded
/// `F₄(n) ≤ F`. `e` must be squarefree. Exceptions found among the squarefree
/// candidates are only final once their square multiples under the threshold
/// are audited too; this provides that list.
pub fn square_multiples_below(ctx: &F4Context, e: u64, target: &TargetSet) -> Result<Vec<u64>> {
    let base = squarefree_factors(e)?;
    let threshold = ctx.threshold;
    let break_bound = threshold * (1.0 + PRUNE_EPS);
    let (modulus, residues) = target.residue_classes();
    let mut member = vec![false; modulus as usize];
    for r in &residues {
        member[*r as usize] = true;
    }
    let admissible = |p: u64| -> bool {
        modulus % p != 0 || residues.iter().any(|&r| r % p == 0) || e % p == 0
    };
    let root = fold_down_general(ctx, &base);
    // Only squares of 2 and 3 can shrink the weight (ratio q^a/(2a+1) or
    // q^a/(a+1), both ≥ 1 from q = 5 on), so usable square primes are small.
    let mut shrink = 1.0f64;
    for q in [2u64, 3] {
        if admissible(q) {
            let f = merge_ratio_floor(ctx, e, q);
            if f < 1.0 {
                shrink = mul_down(shrink, f);
            }
        }
    }
    let q_cap = if root <= 0.0 {
        64
    } else {
        ((3.0 * break_bound / (root * shrink)) as u64).saturating_add(64)
    };
    if q_cap > (1 << 28) {
        return Err(Error::ResourceLimit(format!(
            "square-multiple search for {e} needs primes beyond 2^28"
        )));
    }
    let primes: Vec<u64> = arith::primes_up_to(q_cap)
        .into_iter()
        .filter(|&q| admissible(q))
        .collect();
    let rho_floor: Vec<f64> = primes.iter().map(|&q| merge_ratio_floor(ctx, e, q)).collect();
    // Universal lower bound q(q−1)/(3(q+1)) on any merge ratio; increasing in
    // q, which justifies breaking the prime loop once it overshoots.
    let rho_uni: Vec<f64> = primes
        .iter()
        .map(|&q| {
            let t = ((q as u128 * (q as u128 - 1)) as f64).next_down();
            (t / ((3 * (q + 1)) as f64)).next_down()
        })
        .collect();
    let mut tails = vec![1.0f64; primes.len() + 1];
    for i in (0..primes.len()).rev() {
        tails[i] = if rho_floor[i] < 1.0 {
            mul_down(tails[i + 1], rho_floor[i])
        } else {
            tails[i + 1]
        };
    }
    let mut exponents: BTreeMap<u64, u32> = base.iter().copied().collect();
    let mut out = Vec::new();
    square_walk(
        ctx,
        &SquareWalkCtx {
            threshold,
            break_bound,
            modulus,
            member: &member,
            primes: &primes,
            rho_uni: &rho_uni,
            tails: &tails,
        },
        0,
        e as u128,
        root,
        &mut exponents,
        &mut out,
    )?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

struct SquareWalkCtx<'a> {
    threshold: f64,
    break_bound: f64,
    modulus: u64,
    member: &'a [bool],
    primes: &'a [u64],
    rho_uni: &'a [f64],
    tails: &'a [f64],
}

/// Lower bound for the ratio `F₄(n·q²ᵃ)/F₄(n)` minimized over `a ≥ 1`, for a
/// prime `q` relative to the squarefree base `e` (the minimum is at `a = 1`).
fn merge_ratio_floor(ctx: &F4Context, e: u64, q: u64) -> f64 {
    let qf = q as f64;
    if e % q == 0 {
        // exponent 1 → 3: ratio q^a·(e+1 factors): √(q³)/4 ÷ √q/2 = q/2
        qf / 2.0
    } else if ctx.penalized(q) {
        (mul_down(qf, ratio_down(q)) / 3.0).next_down()
    } else {
        (qf / 3.0).next_down()
    }
}

fn square_walk(
    ctx: &F4Context,
    w: &SquareWalkCtx<'_>,
    start: usize,
    n: u128,
    v: f64,
    exponents: &mut BTreeMap<u64, u32>,
    out: &mut Vec<u64>,
) -> Result<()> {
    for j in start..w.primes.len() {
        let q = w.primes[j];
        let gate = mul_down(mul_down(v, w.rho_uni[j]), w.tails[j + 1]);
        if gate > w.break_bound {
            if q >= 5 {
                break;
            }
            continue;
        }
        let q2 = (q as u128) * (q as u128);
        let mut nq = n;
        let base_exp = exponents.get(&q).copied().unwrap_or(0);
        let mut a = 0u32;
        loop {
            a += 1;
            let Some(next) = nq.checked_mul(q2) else {
                break;
            };
            nq = next;
            exponents.insert(q, base_exp + 2 * a);
            let factors: Vec<(u64, u32)> = exponents.iter().map(|(&p, &e)| (p, e)).collect();
            let vq = fold_down_general(ctx, &factors);
            if mul_down(vq, w.tails[j + 1]) > w.break_bound {
                break;
            }
            if vq <= w.threshold && w.member[(nq % w.modulus as u128) as usize] {
                let vn = u64::try_from(nq).map_err(|_| {
                    Error::ResourceLimit("square multiple exceeds u64".to_string())
                })?;
                out.push(vn);
            }
            square_walk(ctx, w, j + 1, nq, vq, exponents, out)?;
        }
        if base_exp == 0 {
            exponents.remove(&q);
        } else {
            exponents.insert(q, base_exp);
        }
    }
    Ok(())
}

/// Audits the square multiples of claimed exceptions: returns the sorted
/// multiples `e·m² (m > 1)` inside the threshold and target that the form
/// does **not** represent. A represented squarefree integer represents all
/// its square multiples (scale the vector), so only exception multiples need
/// this check.
pub fn verify_square_multiples(
    ctx: &F4Context,
    form: &GramForm,
    exceptions: &[u64],
    target: &TargetSet,
    opts: &AuditOptions,
) -> Result<Vec<u64>> {
    let mut multiples = BTreeSet::new();
    for &e in exceptions {
        for m in square_multiples_below(ctx, e, target)? {
            multiples.insert(m);
        }
    }
    if multiples.is_empty() {
        return Ok(Vec::new());
    }
    let split = find_diagonal_split(form, &opts.limits)?
        .ok_or_else(|| Error::Verification("form admits no split sublattice".to_string()))?;
    let n_max = *multiples.iter().next_back().unwrap();
    let auditor = CandidateAuditor::new(form, split, n_max, opts)?;
    audit_multiples(&auditor, form, &multiples, opts)
}

fn audit_multiples(
    auditor: &CandidateAuditor,
    form: &GramForm,
    multiples: &BTreeSet<u64>,
    opts: &AuditOptions,
) -> Result<Vec<u64>> {
    let list: Vec<u64> = multiples.iter().copied().collect();
    let mut bad: Vec<u64> = list
        .par_iter()
        .map(|&n| {
            if auditor.quick_hit(n) || auditor.resolve_miss(form, n, opts)? {
                Ok(None)
            } else {
                Ok(Some(n))
            }
        })
        .collect::<Result<Vec<Option<u64>>>>()?
        .into_iter()
        .flatten()
        .collect();
    bad.sort_unstable();
    Ok(bad)
}

// ---------------------------------------------------------------------------
// Audit driver
// ---------------------------------------------------------------------------

/// Audits an explicit candidate list (the squarefree members of the target
/// under the threshold, as produced by [`enumerate_f4_below`] for this
/// context) against the form. The report covers the whole target set: the
/// square multiples of any surviving exception are enumerated and audited
/// too, so `certified` is honest for every member of `S`, not only the
/// squarefree ones.
pub fn audit_candidates(
    ctx: &F4Context,
    form: &GramForm,
    candidates: &[u64],
    target: &TargetSet,
    opts: &AuditOptions,
) -> Result<ExceptionReport> {
    if form.rank() != 4 {
        return Err(Error::Domain(format!(
            "audit expects a rank-4 form, got rank {}",
            form.rank()
        )));
    }
    check_core_closed(target)?;
    let exceptions = if candidates.is_empty() {
        Vec::new()
    } else {
        let split = find_diagonal_split(form, &opts.limits)?
            .ok_or_else(|| Error::Verification("form admits no split sublattice".to_string()))?;
        let n_max = candidates.iter().copied().max().unwrap();
        let auditor = CandidateAuditor::new(form, split, n_max, opts)?;
        let misses: Vec<u64> = candidates
            .par_iter()
            .copied()
            .filter(|&n| !auditor.quick_hit(n))
            .collect();
        let mut exceptions: Vec<u64> = misses
            .par_iter()
            .map(|&n| {
                auditor
                    .resolve_miss(form, n, opts)
                    .map(|hit| if hit { None } else { Some(n) })
            })
            .collect::<Result<Vec<Option<u64>>>>()?
            .into_iter()
            .flatten()
            .collect();
        exceptions.sort_unstable();
        let mut multiples = BTreeSet::new();
        for &e in &exceptions {
            for m in square_multiples_below(ctx, e, target)? {
                multiples.insert(m);
            }
        }
        let extra = audit_multiples(&auditor, form, &multiples, opts)?;
        exceptions.extend(extra);
        exceptions.sort_unstable();
        exceptions.dedup();
        exceptions
    };
    Ok(ExceptionReport {
        label: form.digest_label(),
        method: CertMethod::AnalyticThreshold,
        exceptions,
        certified: true,
        bound: None,
    })
}

/// Outcome of a full threshold certification run.
#[derive(Debug, Clone)]
pub struct AnalyticCertification {
    /// Exception report over the whole target set (`certified` is true).
    pub report: ExceptionReport,
    /// Number of squarefree candidates under the threshold.
    pub candidates: u64,
    /// Largest candidate.
    pub max_candidate: u64,
    /// The threshold `F` the run used.
    pub threshold: f64,
}

/// End-to-end certification at a given threshold: enumerates the candidates
/// (streaming, without materializing the list), audits each against the
/// form's split sublattices, closes over square multiples of the exceptions,
/// and reports. The form represents every member of the target except the
/// reported exceptions.
pub fn certify_with_f(
    form: &GramForm,
    target: &TargetSet,
    threshold: f64,
    opts: &AuditOptions,
) -> Result<AnalyticCertification> {
    let ctx = F4Context::for_form(form, threshold)?;
    check_core_closed(target)?;
    let enumerator = F4Enumerator::new(&ctx, target)?;
    let branches = enumerator.branch_count();
    let (count, max_candidate) = enumerator.count_range(0, branches)?;
    let split = find_diagonal_split(form, &opts.limits)?
        .ok_or_else(|| Error::Verification("form admits no split sublattice".to_string()))?;
    let auditor = CandidateAuditor::new(form, split, max_candidate, opts)?;
    let oversized = AtomicBool::new(false);
    let miss_lists = (0..branches)
        .into_par_iter()
        .map(|branch| {
            let mut misses = Vec::new();
            enumerator.run_branch(branch, &mut |n| {
                let Ok(v) = u64::try_from(n) else {
                    oversized.store(true, Ordering::Relaxed);
                    return false;
                };
                if !auditor.quick_hit(v) {
                    misses.push(v);
                }
                true
            });
            misses
        })
        .collect::<Vec<Vec<u64>>>();
    if oversized.load(Ordering::Relaxed) {
        return Err(Error::ResourceLimit("candidate exceeds u64".to_string()));
    }
    let misses = miss_lists.concat();
    let mut exceptions: Vec<u64> = misses
        .par_iter()
        .map(|&n| {
            auditor
                .resolve_miss(form, n, opts)
                .map(|hit| if hit { None } else { Some(n) })
        })
        .collect::<Result<Vec<Option<u64>>>>()?
        .into_iter()
        .flatten()
        .collect();
    exceptions.sort_unstable();
    let mut multiples = BTreeSet::new();
    for &e in &exceptions {
        for m in square_multiples_below(&ctx, e, target)? {
            multiples.insert(m);
        }
    }
    let extra = audit_multiples(&auditor, form, &multiples, opts)?;
    exceptions.extend(extra);
    exceptions.sort_unstable();
    exceptions.dedup();
    Ok(AnalyticCertification {
        report: ExceptionReport {
            label: form.digest_label(),
            method: CertMethod::AnalyticThreshold,
            exceptions,
            certified: true,
            bound: None,
        },
        candidates: count,
        max_candidate,
        threshold,
    })
}

// ---------------------------------------------------------------------------
// Cusp-norm bound arithmetic
// ---------------------------------------------------------------------------

/// Inner truncation threshold for the smoothing-kernel series: once terms
/// drop below `10⁻³⁰` relative to the accumulated sum (and the argument has
/// left the kernel's slow region `x < 1`), the remainder is negligible at
/// the 12+ digits this sum is used for.
const PSI_SERIES_EPS: f64 = 1e-30;

/// Partial sum approximating the Petersson norm density `C₁`: with `a(n)`
/// the first `15·N` coefficients of the relevant cusp form,
///
/// `C₁ = (1/idx) · Σ_{n ≤ 15N} 2^{ω_N(n)} · a(n)²/n · Σ_{d ≥ 1} ψ(d·√(n/N))`
///
/// where `ω_N(n)` counts distinct primes of `N` dividing `n` and
/// `idx = N·∏_{p|N}(1 + 1/p)`. `coeffs[i]` is `a(i+1)`.
pub fn petersson_partial_sum(coeffs: &[f64], level: u64) -> Result<f64> {
    if level == 0 {
        return Err(Error::Domain("level must be positive".to_string()));
    }
    if level > u64::MAX / 15 {
        return Err(Error::Domain("level too large".to_string()));
    }
    let needed = 15 * level;
    if (coeffs.len() as u64) < needed {
        return Err(Error::Domain(format!(
            "need at least {needed} coefficients for level {level}, got {}",
            coeffs.len()
        )));
    }
    let level_primes: Vec<u64> = arith::factorize(level).iter().map(|&(p, _)| p).collect();
    let mut index: u128 = level as u128;
    for &p in &level_primes {
        index = index / p as u128 * (p as u128 + 1);
    }
    let mut total = 0.0f64;
    for n in 1..=needed {
        let a = coeffs[(n - 1) as usize];
        if a == 0.0 {
            continue;
        }
        let weight = 1u64 << level_primes.iter().filter(|&&p| n % p == 0).count();
        let x = (n as f64 / level as f64).sqrt();
        let mut inner = 0.0f64;
        let mut d = 1u64;
        loop {
            let xd = d as f64 * x;
            let t = psi(xd)?;
            inner += t;
            if t.abs() <= PSI_SERIES_EPS * (inner.abs() + 1e-280) && xd >= 1.0 {
                break;
            }
            d += 1;
            if d > 10_000_000 {
                return Err(Error::Domain(
                    "smoothing series did not converge".to_string(),
                ));
            }
        }
        total += weight as f64 * a * a / n as f64 * inner;
    }
    Ok(total / dd_from_u128(index).to_f64())
}

/// Lower bound on the Petersson norm of a normalized newform without complex
/// multiplication at the given level: `3 / (208·π⁴·∏_{p|N}(1+1/p)·ln N)`,
/// rounded down.
pub fn noncm_norm_lower_bound(level: u64) -> Result<f64> {
    if level < 2 {
        return Err(Error::Domain(format!(
            "norm bound needs level ≥ 2, got {level}"
        )));
    }
    let pi2 = PI_DD.mul(PI_DD);
    let pi4 = pi2.mul(pi2);
    let mut den = pi4.mul_f64(208.0);
    for (p, _) in arith::factorize(level) {
        den = den.mul_f64((p + 1) as f64).div_f64(p as f64);
    }
    den = den.mul(Dd::from_f64(level as f64).ln());
    Ok(Dd::from_f64(3.0).div(den).to_f64().next_down())
}

/// Upper bound on the full Petersson inner product `⟨C, C⟩` from the partial
/// sum `c1`: the tail of the coefficient sum contributes at most the factor
/// `1.71·10⁻¹⁸·N^{7/4}·s/b·(1+1/(15N))^{3/2}` of the total, so
/// `⟨C, C⟩ ≤ N·c1/(1 − coeff)`, rounded up. Errors when the tail coefficient
/// reaches 1 (the partial sum then certifies nothing).
pub fn cc_upper_bound(c1: f64, level: u64, dim: u64, b: f64) -> Result<f64> {
    if !c1.is_finite() || c1 < 0.0 {
        return Err(Error::Domain(format!(
            "partial sum must be finite and nonnegative, got {c1}"
        )));
    }
    if level < 1 || dim < 1 {
        return Err(Error::Domain(
            "level and dimension must be positive".to_string(),
        ));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!(
            "norm lower bound must be positive, got {b}"
        )));
    }
    let ln_n = Dd::from_f64(level as f64).ln();
    let n74 = ln_n.mul_f64(1.75).exp();
    let fifteen_n = 15.0 * level as f64;
    let tail_pow = Dd::from_f64(1.0)
        .add(Dd::from_f64(1.0).div_f64(fifteen_n))
        .ln()
        .mul_f64(1.5)
        .exp();
    let coeff = n74
        .mul_f64(1.71e-18)
        .mul_f64(dim as f64)
        .div_f64(b)
        .mul(tail_pow);
    if coeff.to_f64().next_up() >= 1.0 {
        return Err(Error::Domain(format!(
            "coefficient tail dominates at level {level} (dimension {dim}): \
             the partial sum cannot bound the inner product"
        )));
    }
    let num = Dd::from_prod(level as f64, c1);
    let den = Dd::from_f64(1.0).sub(coeff);
    Ok(num.div(den).to_f64().next_up())
}

/// Upper bound on the cusp peak constant: `C_Q ≤ √(a·dim/b)`, rounded up so
/// that the returned `r` always satisfies `r² ≥ a·dim/b` exactly.
pub fn cq_upper_bound(a: f64, b: f64, dim: u64) -> Result<f64> {
    if !a.is_finite() || a < 0.0 {
        return Err(Error::Domain(format!(
            "inner-product bound must be finite and nonnegative, got {a}"
        )));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!(
            "norm lower bound must be positive, got {b}"
        )));
    }
    if dim < 1 {
        return Err(Error::Domain("dimension must be positive".to_string()));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let q = Dd::from_prod(a, dim as f64).div_f64(b);
    let mut r = q.sqrt().to_f64().next_up();
    while dd_less(Dd::from_prod(r, r), q) {
        r = r.next_up();
    }
    Ok(r.next_up())
}

/// Inputs for the bound chain: level `N`, cusp dimension `s = dim`, the
/// Petersson partial sum `c1`, and optionally an externally certified norm
/// lower bound `b` (when absent, the generic non-CM bound for the level is
/// used).
#[derive(Debug, Clone, Copy)]
pub struct CuspBoundInputs {
    pub level: u64,
    pub dim: u64,
    pub c1: f64,
    pub b: Option<f64>,
}

/// The certified chain `b → a → c_q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuspBounds {
    /// Norm lower bound used.
    pub b: f64,
    /// Upper bound on the inner product `⟨C, C⟩`.
    pub a: f64,
    /// Upper bound on the cusp peak constant `C_Q`.
    pub c_q: f64,
}

/// Runs the full bound chain for one form's cusp data.
pub fn cusp_bounds(inputs: &CuspBoundInputs) -> Result<CuspBounds> {
    let b = match inputs.b {
        Some(b) => b,
        None => noncm_norm_lower_bound(inputs.level)?,
    };
    let a = cc_upper_bound(inputs.c1, inputs.level, inputs.dim, b)?;
    let c_q = cq_upper_bound(a, b, inputs.dim)?;
    Ok(CuspBounds { b, a, c_q })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn form_8819() -> GramForm {
        // x² + y² + 7z² − xw − yw + 7zw + 12w², level 546, det 1092
        GramForm::from_upper(4, &[2, 0, 0, -1, 2, 0, -1, 14, 7, 24]).unwrap()
    }

    fn ctx_8819(threshold: f64) -> F4Context {
        let form = form_8819();
        assert_eq!(form.level(), 546);
        assert_eq!(form.det(), 1092);
        F4Context::for_form(&form, threshold).unwrap()
    }

    fn brute_candidates(ctx: &F4Context, target: &TargetSet, limit: u64) -> Vec<u64> {
        (1..=limit)
            .filter(|&n| target.contains(n))
            .filter(|&n| {
                let f = arith::factorize(n);
                f.iter().all(|&(_, e)| e == 1)
                    && fold_down_general(ctx, &f) <= ctx.threshold()
            })
            .collect()
    }

    #[test]
    fn f4_basic_values() {
        let ctx = ctx_8819(74.507);
        assert_eq!(f4(&ctx, 1).unwrap(), 1.0);
        // 11 is unpenalized (kronecker(1092, 11) = 1): weight √11/2
        let v11 = f4(&ctx, 11).unwrap();
        let exact11 = 11f64.sqrt() / 2.0;
        assert!(v11 <= exact11 && exact11 - v11 < 1e-12);
        // 5 is penalized (kronecker(1092, 5) = −1): weight √5/2 · 4/6
        let v5 = f4(&ctx, 5).unwrap();
        let exact5 = 5f64.sqrt() / 2.0 * (4.0 / 6.0);
        assert!(v5 <= exact5 && exact5 - v5 < 1e-12);
        let v10 = f4(&ctx, 10).unwrap();
        let exact10 = 2f64.sqrt() / 2.0 * exact5;
        assert!(v10 <= exact10 && exact10 - v10 < 1e-12);
        let (lo, hi) = f4_interval(&ctx, 10).unwrap();
        assert!(lo <= exact10 && exact10 <= hi && hi - lo < 1e-12);
    }

    #[test]
    fn f4_rejects_bad_inputs() {
        let ctx = ctx_8819(10.0);
        assert!(matches!(f4(&ctx, 0), Err(Error::Domain(_))));
        assert!(matches!(f4(&ctx, 12), Err(Error::Domain(_))));
        assert!(F4Context::new(0, 5, 1.0).is_err());
        assert!(F4Context::new(5, 0, 1.0).is_err());
        assert!(F4Context::new(5, 5, f64::NAN).is_err());
    }

    #[test]
    fn f4_interval_brackets_reference_chain() {
        let ctx = ctx_8819(74.507);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tested = 0u32;
        while tested < 100_000 {
            let n: u64 = rng.gen_range(1..10_000_000);
            let factors = arith::factorize(n);
            if factors.iter().any(|&(_, e)| e > 1) {
                continue;
            }
            tested += 1;
            let (lo, hi) = f4_interval(&ctx, n).unwrap();
            let mut reference = Dd::from_f64(1.0);
            for &(p, _) in &factors {
                let mut f = Dd::from_f64(p as f64).sqrt().div_f64(2.0);
                if ctx.level() % p as i128 != 0 && ctx.character(p) == -1 {
                    f = f
                        .mul_f64((p - 1) as f64)
                        .div_f64((p + 1) as f64);
                }
                reference = reference.mul(f);
            }
            let r = reference.to_f64();
            assert!(
                lo <= r.next_up() && r.next_down() <= hi,
                "interval [{lo}, {hi}] misses reference {r} at n = {n}"
            );
            assert!(hi - lo <= 1e-9 * hi.max(1.0));
        }
    }

    #[test]
    fn enumerator_matches_sieve() {
        let ctx = ctx_8819(30.0);
        let target = TargetSet::CoprimeTo3;
        let all = enumerate_f4_below(&ctx, &target, 50_000_000).unwrap();
        let got: Vec<u64> = all.iter().copied().filter(|&n| n <= 1_000_000).collect();
        let want = brute_candidates(&ctx, &target, 1_000_000);
        assert_eq!(got, want);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn enumerator_respects_targets() {
        let ctx = ctx_8819(5.0);
        for target in [
            TargetSet::All,
            TargetSet::Odd,
            TargetSet::custom(4, [1u64, 3]).unwrap(),
        ] {
            let got = enumerate_f4_below(&ctx, &target, 10_000_000).unwrap();
            let got_small: Vec<u64> = got.into_iter().filter(|&n| n <= 100_000).collect();
            let want = brute_candidates(&ctx, &target, 100_000);
            assert_eq!(got_small, want, "target {target:?}");
        }
    }

    #[test]
    fn enumerator_threshold_edges() {
        let target = TargetSet::CoprimeTo3;
        let got = enumerate_f4_below(&ctx_8819(0.6), &target, 1000).unwrap();
        assert_eq!(got, vec![10]);
        let got = enumerate_f4_below(&ctx_8819(0.4), &target, 1000).unwrap();
        assert!(got.is_empty());
        let got = enumerate_f4_below(&ctx_8819(0.0), &target, 1000).unwrap();
        assert!(got.is_empty());
        let got = enumerate_f4_below(&ctx_8819(1.0), &target, 1000).unwrap();
        let want = brute_candidates(&ctx_8819(1.0), &target, 1_000_000);
        assert_eq!(got, want);
    }

    #[test]
    fn enumerator_cap_is_enforced() {
        let ctx = ctx_8819(30.0);
        assert!(matches!(
            enumerate_f4_below(&ctx, &TargetSet::CoprimeTo3, 10),
            Err(Error::ResourceLimit(_))
        ));
    }

    /// The weight of a squarefree product is `√n/2^ω` times the penalty
    /// ratios, so nine-prime products can stay under 74.507: the minimal
    /// chain 2·5·7·11·13·17·23·29·31 weighs ≈ 66.08. Exactly fifteen such
    /// sets qualify (verified by hand over all families of nine admissible
    /// primes; the largest prime that fits any nine-set is 53), alongside
    /// 395007 candidates with at most eight prime factors.
    const OMEGA9_CANDIDATES: [u64; 15] = [
        2156564410, // 2·5·7·11·13·17·19·23·29
        2305292990, // 2·5·7·11·13·17·19·23·31
        2751478730, // 2·5·7·11·13·17·19·23·37
        2906673770, // 2·5·7·11·13·17·19·29·31
        3048935890, // 2·5·7·11·13·17·19·23·41
        3197664470, // 2·5·7·11·13·17·19·23·43
        3469255790, // 2·5·7·11·13·17·19·29·37
        3495121630, // 2·5·7·11·13·17·19·23·47
        3518605090, // 2·5·7·11·13·17·23·29·31
        3844310470, // 2·5·7·11·13·17·19·29·41
        3932558630, // 2·5·7·11·13·19·23·29·31
        3941307370, // 2·5·7·11·13·17·19·23·53
        4199625430, // 2·5·7·11·13·17·23·29·37
        4653638990, // 2·5·7·11·13·17·23·29·41
        4693699010, // 2·5·7·11·13·19·23·29·37
    ];

    #[test]
    fn count_8819_candidates_full_threshold() {
        let ctx = ctx_8819(74.507);
        let (count, max) = count_f4_below(&ctx, &TargetSet::CoprimeTo3).unwrap();
        assert_eq!(count, 395022);
        assert_eq!(max, *OMEGA9_CANDIDATES.iter().max().unwrap());
    }

    #[test]
    fn usable_primes_8819_boundary() {
        let ctx = ctx_8819(74.507);
        let enumerator = F4Enumerator::new(&ctx, &TargetSet::CoprimeTo3).unwrap();
        // The generic penalized inequality allows primes up to 79942 (largest
        // prime 79939), but 79939 itself has character +1, so its actual
        // chain 2·5·79939 weighs ≈ 74.5072 > 74.507; the largest prime that
        // appears in a candidate is 79907.
        assert_eq!(enumerator.usable_primes().last().copied(), Some(79907));
        assert!(enumerator.usable_primes().iter().all(|&p| p <= 79939));
        let candidates = enumerator
            .collect_range(0, enumerator.branch_count(), 1_000_000)
            .unwrap();
        assert_eq!(candidates.len(), 395022);
        // collect_range emits each candidate exactly once
        let mut sorted = candidates;
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 395022);
        // the candidates with nine prime factors are exactly the hand-derived
        // list; any nine admissible primes multiply past 2·10⁹, so the size
        // prefilter loses nothing
        let omega9: Vec<u64> = sorted
            .iter()
            .copied()
            .filter(|&n| n > 2_000_000_000 && arith::factorize(n).len() >= 9)
            .collect();
        assert_eq!(omega9, OMEGA9_CANDIDATES);
    }

    #[test]
    fn split_8819_kernel() {
        let form = form_8819();
        let split = find_diagonal_split(&form, &EnumLimits::default())
            .unwrap()
            .expect("8819 splits");
        assert_eq!(split.scale, 1);
        assert_eq!(split.ternary.rank(), 3);
        assert_eq!(split.ternary.det(), 2184);
        // every basis vector is orthogonal to the split vector under A
        for v in &split.basis {
            let mut ip = 0i128;
            for i in 0..4 {
                for j in 0..4 {
                    ip += v[i] as i128 * form.entry(i, j) as i128 * split.vector[j] as i128;
                }
            }
            assert_eq!(ip, 0);
        }
    }

    #[test]
    fn ternary_exact_matches_enumeration() {
        let limits = EnumLimits::default();
        let split = find_diagonal_split(&form_8819(), &limits).unwrap().unwrap();
        for r in 0..400u64 {
            let fast = ternary_represents_exact(&split.ternary, r);
            let slow = enumerate::represents(&split.ternary, r as i128, &limits)
                .unwrap()
                .is_some();
            assert_eq!(fast, slow, "split complement at r = {r}");
        }
        let diag = GramForm::new(3, vec![2, 0, 0, 0, 2, 0, 0, 0, 14]).unwrap();
        for r in 0..400u64 {
            let fast = ternary_represents_exact(&diag, r);
            let slow = enumerate::represents(&diag, r as i128, &limits)
                .unwrap()
                .is_some();
            assert_eq!(fast, slow, "diagonal ternary at r = {r}");
        }
    }

    #[test]
    fn audit_8819_small_threshold() {
        let form = form_8819();
        let ctx = ctx_8819(10.0);
        let target = TargetSet::CoprimeTo3;
        let opts = AuditOptions::default();
        let candidates = enumerate_f4_below(&ctx, &target, 10_000_000).unwrap();
        for &e in &[19u64, 22, 31, 35, 133] {
            assert!(candidates.contains(&e), "{e} must be a candidate");
        }
        let report = audit_candidates(&ctx, &form, &candidates, &target, &opts).unwrap();
        assert_eq!(report.exceptions, vec![19, 22, 31, 35, 133]);
        assert!(report.certified);
        assert_eq!(report.method, CertMethod::AnalyticThreshold);
        assert_eq!(report.bound, None);
        // spot-check the audit against the direct search on a small window
        for &n in candidates.iter().filter(|&&n| n <= 2000) {
            let direct = enumerate::represents(&form, n as i128, &opts.limits)
                .unwrap()
                .is_some();
            assert_eq!(
                direct,
                !report.exceptions.contains(&n),
                "audit disagrees with direct search at n = {n}"
            );
        }
    }

    #[test]
    fn certify_smoke_8819() {
        let form = form_8819();
        let target = TargetSet::CoprimeTo3;
        let cert = certify_with_f(&form, &target, 10.0, &AuditOptions::default()).unwrap();
        assert_eq!(cert.report.exceptions, vec![19, 22, 31, 35, 133]);
        let ctx = ctx_8819(10.0);
        let listed = enumerate_f4_below(&ctx, &target, 10_000_000).unwrap();
        assert_eq!(cert.candidates, listed.len() as u64);
        assert_eq!(cert.max_candidate, *listed.last().unwrap());
        assert_eq!(cert.threshold, 10.0);
    }

    #[test]
    fn square_multiples_match_brute_force() {
        let ctx = ctx_8819(74.507);
        let target = TargetSet::CoprimeTo3;
        let got = square_multiples_below(&ctx, 19, &target).unwrap();
        let mut want = Vec::new();
        for m in 2u64..=2000 {
            let n = 19 * m * m;
            if target.contains(n)
                && fold_down_general(&ctx, &arith::factorize(n)) <= ctx.threshold()
            {
                want.push(n);
            }
        }
        let got_window: Vec<u64> = got
            .iter()
            .copied()
            .filter(|&n| n <= 19 * 2000 * 2000)
            .collect();
        assert_eq!(got_window, want);
        assert!(got.contains(&76));
        assert!(!got.contains(&171), "171 = 19·9 is divisible by 3");
        // e = 1: plain squares
        let squares = square_multiples_below(&ctx, 1, &target).unwrap();
        assert!(squares.contains(&4));
        assert!(!squares.contains(&9));
        assert!(squares.iter().all(|&n| n % 3 != 0));
        assert!(matches!(
            square_multiples_below(&ctx, 12, &target),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn core_closure_guard() {
        let ctx = ctx_8819(10.0);
        let form = form_8819();
        let opts = AuditOptions::default();
        let bad = TargetSet::custom(4, [0u64]).unwrap();
        assert!(matches!(
            audit_candidates(&ctx, &form, &[5], &bad, &opts),
            Err(Error::Target(_))
        ));
        assert!(matches!(
            certify_with_f(&form, &bad, 1.0, &opts),
            Err(Error::Target(_))
        ));
        let report =
            audit_candidates(&ctx, &form, &[], &TargetSet::CoprimeTo3, &opts).unwrap();
        assert!(report.exceptions.is_empty());
        assert!(report.certified);
    }

    #[test]
    fn petersson_anchors() {
        let zeros = vec![0.0; 180];
        assert_eq!(petersson_partial_sum(&zeros, 12).unwrap(), 0.0);

        let mut single = vec![0.0; 180];
        single[11] = 1.0; // a(12) = 1
        let got = petersson_partial_sum(&single, 12).unwrap();
        let want = 3.734138928630778e-07;
        assert!(
            (got - want).abs() <= 1e-12 * want,
            "single-coefficient sum {got} vs {want}"
        );

        let synthetic: Vec<f64> = (1..=180)
            .map(|n| ((n * 7919) % 11) as f64 - 5.0)
            .collect();
        let got = petersson_partial_sum(&synthetic, 12).unwrap();
        let want = 0.004661499953163795;
        assert!(
            (got - want).abs() <= 1e-12 * want,
            "synthetic sum {got} vs {want}"
        );

        assert!(matches!(
            petersson_partial_sum(&zeros[..179], 12),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            petersson_partial_sum(&zeros, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn noncm_norm_bound_anchor() {
        let b = noncm_norm_lower_bound(4273).unwrap();
        let frozen = 1.7707074540973388e-05;
        assert!((b - frozen).abs() <= 5e-20, "got {b:e}");
        assert!(b <= frozen * (1.0 + 1e-15));
        // more prime structure and larger level ⇒ smaller bound
        assert!(noncm_norm_lower_bound(30).unwrap() < noncm_norm_lower_bound(29).unwrap());
        assert!(noncm_norm_lower_bound(1).is_err());
        assert!(noncm_norm_lower_bound(0).is_err());
    }

    #[test]
    fn cc_upper_bound_anchor() {
        // partial sum chosen so the chain reproduces a = 0.013026 exactly
        let c1 = 3.048287361584993e-06;
        let a = cc_upper_bound(c1, 4273, 354, 2.66538e-5).unwrap();
        assert!((a - 0.013026).abs() < 1e-12, "got {a}");
        assert!(a >= 0.013026 - 1e-12);
        // negligible tail: a ≈ N·c1
        let a = cc_upper_bound(c1, 4273, 354, 1e10).unwrap();
        let plain = 4273.0 * c1;
        assert!((a - plain).abs() <= 1e-10 * plain);
        // tail coefficient ≥ 1 is rejected
        assert!(matches!(
            cc_upper_bound(1e-6, 100, 1, 1e-18),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cq_upper_bound_anchor() {
        let r = cq_upper_bound(0.013026, 2.66538e-5, 354).unwrap();
        let want = 415.9370436120110686731457;
        assert!((r - want).abs() <= 1e-9, "got {r}");
        assert!(r >= want - 1e-12);
        assert!(r <= 415.9507);
        assert_eq!(cq_upper_bound(0.0, 1.0, 5).unwrap(), 0.0);
        let unit = cq_upper_bound(0.25, 0.25, 1).unwrap();
        assert!((1.0..=1.0 + 1e-14).contains(&unit));
        assert!(cq_upper_bound(-1.0, 1.0, 1).is_err());
        assert!(cq_upper_bound(1.0, 0.0, 1).is_err());
    }

    #[test]
    fn cusp_bound_chain() {
        let with_b = cusp_bounds(&CuspBoundInputs {
            level: 4273,
            dim: 354,
            c1: 3.048287361584993e-06,
            b: Some(2.66538e-5),
        })
        .unwrap();
        assert_eq!(with_b.b, 2.66538e-5);
        assert!((with_b.a - 0.013026).abs() < 1e-9);
        assert!(with_b.c_q > 415.93 && with_b.c_q < 415.96);
        let generic = cusp_bounds(&CuspBoundInputs {
            level: 4273,
            dim: 354,
            c1: 3.048287361584993e-06,
            b: None,
        })
        .unwrap();
        assert!((generic.b - 1.7707074540973388e-05).abs() <= 5e-20);
        assert!(generic.c_q > 500.0);
    }

    #[test]
    fn f_threshold_values() {
        let ce = BigRational::new(BigInt::from(12), BigInt::from(37));
        let f = f_threshold(&ce, 23.925).unwrap();
        let want = 23.925 * 37.0 / 12.0;
        assert!((f - want).abs() <= 1e-10 && f >= want - 1e-12);
        assert_eq!(f_threshold(&ce, 0.0).unwrap(), 0.0);
        let third = BigRational::new(BigInt::from(1), BigInt::from(3));
        let f = f_threshold(&third, 1.0).unwrap();
        assert!(f >= 3.0 && f <= 3.0 * (1.0 + 1e-14));
        assert!(f_threshold(&BigRational::zero(), 1.0).is_err());
    }

    #[test]
    fn dd_from_u128_is_exact() {
        let v = dd_from_u128((1u128 << 90) + 7);
        let high = Dd::from_f64(2f64.powi(90));
        assert_eq!(v.sub(high).to_f64(), 7.0);
        assert_eq!(dd_from_u128(12345).to_f64(), 12345.0);
        let _ = dd_less(v, high); // direction helper sanity
        assert!(dd_less(high, v));
    }

    #[test]
    #[ignore = "diagnostic"]
    fn diag_threshold_boundary() {
        let target = TargetSet::CoprimeTo3;
        for thr in [74.507, 74.5068, 74.5066, 74.506, 74.505, 74.50, 74.4] {
            let ctx = ctx_8819(thr);
            let (count, max) = count_f4_below(&ctx, &target).unwrap();
            let enumerator = F4Enumerator::new(&ctx, &target).unwrap();
            println!(
                "thr {thr}: count {count} max {max} last_prime {:?}",
                enumerator.usable_primes().last()
            );
        }
        let ctx = ctx_8819(74.507);
        let all = enumerate_f4_below(&ctx, &target, 1_000_000).unwrap();
        let mut chains: Vec<(f64, u64)> = all
            .iter()
            .map(|&n| (fold_down_general(&ctx, &arith::factorize(n)), n))
            .collect();
        chains.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (v, n) in chains.iter().take(25) {
            let (lo, hi) = f4_interval(&ctx, *n).unwrap();
            println!("n {n}: lo {lo:.12} hi {hi:.12} (down {v:.12})");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn enumerator_agrees_with_sieve_on_random_contexts(
            level in 1i128..500,
            disc in prop::sample::select(vec![-1999i128, -60, -7, 3, 12, 273, 1092, 1993]),
            thr in 0.0f64..8.0,
            target_pick in 0usize..3,
        ) {
            let ctx = F4Context::new(level, disc, thr).unwrap();
            let target = match target_pick {
                0 => TargetSet::All,
                1 => TargetSet::Odd,
                _ => TargetSet::CoprimeTo3,
            };
            let got: Vec<u64> = enumerate_f4_below(&ctx, &target, 5_000_000)
                .unwrap()
                .into_iter()
                .filter(|&n| n <= 30_000)
                .collect();
            let want = brute_candidates(&ctx, &target, 30_000);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn cq_bound_square_dominates(
            a in 1e-9f64..1e3,
            b in 1e-9f64..1e3,
            dim in 1u64..5000,
        ) {
            let r = cq_upper_bound(a, b, dim).unwrap();
            let q = Dd::from_prod(a, dim as f64).div_f64(b);
            prop_assert!(!dd_less(Dd::from_prod(r, r), q));
        }

        #[test]
        fn f4_interval_is_ordered(n in 1u64..100_000) {
            let ctx = ctx_8819(74.507);
            if arith::factorize(n).iter().all(|&(_, e)| e == 1) {
                let (lo, hi) = f4_interval(&ctx, n).unwrap();
                prop_assert!(lo <= hi);
                prop_assert!(lo > 0.0);
            }
        }
    }
}
