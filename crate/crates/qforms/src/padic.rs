//! Local (p-adic) representability, exact local densities, and the
//! Eisenstein lower-bound constant.
//!
//! Everything here is exact. Odd primes use a block diagonalization over the
//! p-adic integers followed by a valuation recursion; the prime 2 uses block
//! value distributions (square, hyperbolic, and elliptic blocks) combined by
//! exact convolution and read off at a stabilized precision. Densities are
//! rationals; the Eisenstein constant is assembled from generalized Bernoulli
//! numbers so that no floating point enters any certified value.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

use crate::arith;
use crate::error::{Error, Result};
use crate::form::GramForm;
use crate::target::TargetSet;

/// Exact local density value.
pub type Density = Ratio<i128>;

/// A local density β_p(n) for one prime and one target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalDensity {
    pub prime: i128,
    pub target: i128,
    pub value: Density,
}

/// The constant C_E with a_E(n) ≥ C_E·n·∏_{p|n, χ(p)=−1} (p−1)/(p+1) for all
/// squarefree members of the target set that are locally represented.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EisensteinConstant {
    pub value: BigRational,
    /// The square-class descriptors (prime, exponent, unit representative)
    /// achieving the minimum in the defining product.
    pub minimizing_class: Vec<(i128, u32, i128)>,
}

// ---------------------------------------------------------------------------
// Block decompositions over the p-adic integers
// ---------------------------------------------------------------------------

/// Diagonal blocks u·p^e·x² of a form over ℤ_p for odd p; units are kept
/// modulo p.
#[derive(Debug, Clone, PartialEq, Eq)]
struct OddBlocks {
    p: i128,
    blocks: Vec<(u32, i128)>,
}

/// Indecomposable 2-adic blocks of an integer-valued form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TwoBlock {
    /// u·2^e·x², u odd (unit kept modulo 2^40, enough for every precision used).
    Unary { e: u32, u: i128 },
    /// 2^e·xy.
    Hyperbolic { e: u32 },
    /// 2^e·(x² + xy + y²).
    Elliptic { e: u32 },
}

fn big_ratio(n: i128, d: i128) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// p-adic valuation of a nonzero rational.
fn ord_p_rat(x: &BigRational, p: i128) -> i64 {
    debug_assert!(!x.is_zero());
    let p = BigInt::from(p);
    let mut v = 0i64;
    let mut num = x.numer().abs();
    while (&num % &p).is_zero() {
        num /= &p;
        v += 1;
    }
    let mut den = x.denom().abs();
    while (&den % &p).is_zero() {
        den /= &p;
        v -= 1;
    }
    v
}

/// Residue of a p-integral rational modulo p^k.
fn rat_mod_pk(x: &BigRational, p: i128, k: u32) -> i128 {
    let pk = p.pow(k);
    let modulus = BigInt::from(pk);
    let num = (x.numer() % &modulus).to_i128().unwrap().rem_euclid(pk);
    let den = (x.denom() % &modulus).to_i128().unwrap().rem_euclid(pk);
    num * modinv(den, pk) % pk
}

fn modinv(a: i128, m: i128) -> i128 {
    let (mut old_r, mut r) = (a.rem_euclid(m), m);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    debug_assert_eq!(old_r, 1, "modinv of non-unit");
    old_s.rem_euclid(m)
}

/// Symmetric congruence step v_k ← v_k − c·v_i on a rational Gram matrix:
/// first the row, then the column, both with the same multiplier.
fn clear_symmetric(m: &mut [Vec<BigRational>], k: usize, i: usize, c: &BigRational) {
    let n = m.len();
    for col in 0..n {
        let sub = c * &m[i][col];
        m[k][col] -= sub;
    }
    for row in 0..n {
        let sub = c * &m[row][i];
        m[row][k] -= sub;
    }
}

/// Diagonalization of B = A/2 over ℤ_p, p odd: returns the blocks u·p^e·x².
/// Pivots are chosen by minimal valuation; when the minimum lies strictly off
/// the diagonal, one symmetric row addition moves it onto the diagonal
/// (possible because 2 is a unit).
fn jordan_odd(form: &GramForm, p: i128) -> OddBlocks {
    let n = form.rank();
    let mut m: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| big_ratio(form.entry(i, j) as i128, 2))
                .collect()
        })
        .collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut blocks = Vec::new();
    while !active.is_empty() {
        let mut best: Option<(i64, usize, usize)> = None;
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai..] {
                if m[i][j].is_zero() {
                    continue;
                }
                let v = ord_p_rat(&m[i][j], p);
                let better = match best {
                    None => true,
                    Some((bv, bi, bj)) => v < bv || (v == bv && bi != bj && i == j),
                };
                if better {
                    best = Some((v, i, j));
                }
            }
        }
        let (_, bi, bj) = best.expect("positive-definite block cannot vanish");
        if bi != bj {
            // v_i ← v_i + v_j brings the minimal valuation onto the diagonal:
            // B_ii + 2B_ij + B_jj has the valuation of 2B_ij for odd p.
            for col in 0..n {
                let add = m[bj][col].clone();
                m[bi][col] += add;
            }
            for row in 0..n {
                let add = m[row][bj].clone();
                m[row][bi] += add;
            }
        }
        let i = bi;
        let piv = m[i][i].clone();
        debug_assert!(!piv.is_zero());
        for k in active.clone() {
            if k != i && !m[k][i].is_zero() {
                let c = &m[k][i] / &piv;
                clear_symmetric(&mut m, k, i, &c);
            }
        }
        let e = ord_p_rat(&piv, p);
        debug_assert!(e >= 0, "form is p-integral at odd p");
        let unit = rat_mod_pk(&(piv / big_ratio(p.pow(e as u32), 1)), p, 1);
        blocks.push((e as u32, unit));
        active.retain(|&k| k != i);
    }
    blocks.sort();
    OddBlocks { p, blocks }
}

/// Block decomposition of the quadratic form over ℤ₂ into unary, hyperbolic,
/// and elliptic constituents. Works on A itself (so the unary block u·2^e·x²
/// corresponds to a diagonal entry u·2^{e+1}) and classifies each binary
/// pivot by its discriminant modulo 8.
fn jordan_two(form: &GramForm) -> Vec<TwoBlock> {
    let n = form.rank();
    let mut m: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| big_ratio(form.entry(i, j) as i128, 1))
                .collect()
        })
        .collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut blocks = Vec::new();
    while !active.is_empty() {
        let mut diag_min: Option<(i64, usize)> = None;
        let mut off_min: Option<(i64, usize, usize)> = None;
        for (ai, &i) in active.iter().enumerate() {
            if !m[i][i].is_zero() {
                let v = ord_p_rat(&m[i][i], 2);
                if diag_min.is_none_or(|(bv, _)| v < bv) {
                    diag_min = Some((v, i));
                }
            }
            for &j in &active[ai + 1..] {
                if !m[i][j].is_zero() {
                    let v = ord_p_rat(&m[i][j], 2);
                    if off_min.is_none_or(|(bv, _, _)| v < bv) {
                        off_min = Some((v, i, j));
                    }
                }
            }
        }
        let use_diagonal = match (diag_min, off_min) {
            (Some((dv, _)), Some((ov, _, _))) => dv <= ov,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => unreachable!("positive-definite block cannot vanish"),
        };
        if use_diagonal {
            let (_, i) = diag_min.unwrap();
            let piv = m[i][i].clone();
            for k in active.clone() {
                if k != i && !m[k][i].is_zero() {
                    let c = &m[k][i] / &piv;
                    clear_symmetric(&mut m, k, i, &c);
                }
            }
            let v = ord_p_rat(&piv, 2);
            debug_assert!(v >= 1, "A has even diagonal");
            let u = rat_mod_pk(&(piv / big_ratio(1i128 << v, 1)), 2, 40);
            blocks.push(TwoBlock::Unary {
                e: (v - 1) as u32,
                u,
            });
            active.retain(|&k| k != i);
        } else {
            let (v, i, j) = off_min.unwrap();
            // Classify before clearing: the block is 2^v(αx² + βxy + γy²)
            // with β odd; its discriminant is 1 mod 8 (hyperbolic plane)
            // unless both α and γ are odd, in which case it is 5 mod 8
            // (elliptic, the norm form of the unramified extension).
            let alpha_odd = !m[i][i].is_zero() && ord_p_rat(&m[i][i], 2) == v + 1;
            let gamma_odd = !m[j][j].is_zero() && ord_p_rat(&m[j][j], 2) == v + 1;
            let elliptic = alpha_odd && gamma_odd;
            let det = &m[i][i] * &m[j][j] - &m[i][j] * &m[i][j];
            debug_assert!(!det.is_zero());
            for k in active.clone() {
                if k == i || k == j || (m[k][i].is_zero() && m[k][j].is_zero()) {
                    continue;
                }
                // Solve the 2×2 system so that v_k ← v_k − ci·v_i − cj·v_j
                // clears both pairings; the solution is 2-integral because
                // the block determinant carries the minimal valuation 2v.
                let ci = (&m[k][i] * &m[j][j] - &m[k][j] * &m[i][j]) / &det;
                let cj = (&m[k][j] * &m[i][i] - &m[k][i] * &m[i][j]) / &det;
                for col in 0..n {
                    let sub = &ci * &m[i][col] + &cj * &m[j][col];
                    m[k][col] -= sub;
                }
                for row in 0..n {
                    let sub = &ci * &m[row][i] + &cj * &m[row][j];
                    m[row][k] -= sub;
                }
            }
            if elliptic {
                blocks.push(TwoBlock::Elliptic { e: v as u32 });
            } else {
                blocks.push(TwoBlock::Hyperbolic { e: v as u32 });
            }
            active.retain(|&k| k != i && k != j);
        }
    }
    blocks.sort_by_key(|b| match *b {
        TwoBlock::Unary { e, u } => (e, 0, u),
        TwoBlock::Hyperbolic { e } => (e, 1, 0),
        TwoBlock::Elliptic { e } => (e, 2, 0),
    });
    blocks
}

// ---------------------------------------------------------------------------
// Odd primes: representability decision and exact density recursion
// ---------------------------------------------------------------------------

fn legendre(a: i128, p: i128) -> i32 {
    arith::kronecker(a.rem_euclid(p), p)
}

/// Does Σ u_i·p^{e_i}·x_i² represent p^ν·w over ℤ_p (p odd, w a unit)?
fn decide_odd(p: i128, blocks: &[(u32, i128)], nu: u32, w: i128) -> bool {
    debug_assert!(!blocks.is_empty());
    let e_min = blocks.iter().map(|&(e, _)| e).min().unwrap();
    if nu < e_min {
        return false;
    }
    let nu = nu - e_min;
    let shifted: Vec<(u32, i128)> = blocks.iter().map(|&(e, u)| (e - e_min, u)).collect();
    let unimod: Vec<i128> = shifted
        .iter()
        .filter(|&&(e, _)| e == 0)
        .map(|&(_, u)| u)
        .collect();
    if nu == 0 {
        // A nondegenerate plane over 𝔽_p represents every unit; a single
        // unimodular variable needs the unit ratio to be a square. Higher
        // blocks vanish mod p, so there is no other way to hit a unit.
        return unimod.len() >= 2 || legendre(w * modinv(unimod[0], p) % p, p) == 1;
    }
    if unimod.len() >= 3 {
        return true; // isotropic over 𝔽_p: splits a hyperbolic plane
    }
    if unimod.len() == 2 && legendre(-unimod[0] * unimod[1], p) == 1 {
        return true; // the unimodular part is the hyperbolic plane
    }
    // Anisotropic unimodular part: every solution has those coordinates
    // divisible by p; substitute x = p·y and recurse with smaller ν.
    let next: Vec<(u32, i128)> = shifted
        .iter()
        .map(|&(e, u)| if e == 0 { (2, u) } else { (e, u) })
        .collect();
    decide_odd(p, &next, nu, w)
}

/// Number of solutions of Σ u_i·x_i² ≡ c (mod p) over (𝔽_p)^r, p odd,
/// by convolving the unary counts 1 + χ(a·u̅).
fn count_fp_diag(p: i128, units: &[i128], c: i128) -> i128 {
    let mut counts = vec![0i128; p as usize];
    counts[0] = 1; // the empty form represents exactly 0
    for &u in units {
        let u_inv = modinv(u, p);
        let unary: Vec<i128> = (0..p)
            .map(|a| {
                if a == 0 {
                    1
                } else {
                    1 + legendre(a * u_inv % p, p) as i128
                }
            })
            .collect();
        let mut next = vec![0i128; p as usize];
        for (a, &ua) in unary.iter().enumerate() {
            if ua == 0 {
                continue;
            }
            for (b, &cb) in counts.iter().enumerate() {
                if cb != 0 {
                    next[(a + b) % p as usize] += ua * cb;
                }
            }
        }
        counts = next;
    }
    counts[c.rem_euclid(p) as usize]
}

/// Exact local density β_p(p^ν·w) for odd p. Solutions split into a
/// Hensel-liftable family (some unimodular coordinate is a unit mod p, and
/// the mod-p count transfers to every precision) and a residual family with
/// all unimodular coordinates divisible by p, which rescales to strictly
/// smaller ν.
fn density_odd(p: i128, blocks: &[(u32, i128)], nu: u32, w: i128) -> Density {
    let r = blocks.len() as u32;
    let e_min = blocks.iter().map(|&(e, _)| e).min().unwrap();
    if nu < e_min {
        return Density::zero();
    }
    if e_min > 0 {
        let shifted: Vec<(u32, i128)> = blocks.iter().map(|&(e, u)| (e - e_min, u)).collect();
        return Density::from_integer(p.pow(e_min)) * density_odd(p, &shifted, nu - e_min, w);
    }
    let unimod: Vec<i128> = blocks
        .iter()
        .filter(|&&(e, _)| e == 0)
        .map(|&(_, u)| u)
        .collect();
    let r0 = unimod.len() as u32;
    let n_bar = if nu == 0 { w.rem_euclid(p) } else { 0 };
    let mut fp_count = count_fp_diag(p, &unimod, n_bar);
    if n_bar == 0 {
        fp_count -= 1; // exclude all-zero unimodular coordinates
    }
    let good = Density::new(fp_count * p.pow(r - r0), p.pow(r - 1));
    if nu == 0 {
        return good;
    }
    let next: Vec<(u32, i128)> = blocks
        .iter()
        .map(|&(e, u)| if e == 0 { (1, u) } else { (e - 1, u) })
        .collect();
    good + Density::new(1, p.pow(r0 - 1)) * density_odd(p, &next, nu - 1, w)
}

// ---------------------------------------------------------------------------
// The prime 2: value distributions and exact counting
// ---------------------------------------------------------------------------

/// Count vectors are indexed by residue modulo 2^k (power-of-two length).
fn convolve_mod_two_power(a: &[u128], b: &[u128]) -> Vec<u128> {
    let len = a.len();
    debug_assert!(len.is_power_of_two());
    let mask = len - 1;
    let mut out = vec![0u128; len];
    for (s, &av) in a.iter().enumerate() {
        if av == 0 {
            continue;
        }
        for (t, &bv) in b.iter().enumerate() {
            if bv != 0 {
                out[(s + t) & mask] += av * bv;
            }
        }
    }
    out
}

/// #{(x,y) mod 2^m : xy ≡ t (mod 2^m)}.
fn hyperbolic_count(t: usize, m: u32) -> u128 {
    if m == 0 {
        return 1;
    }
    if t == 0 {
        return ((m as u128) << (m - 1)) + (1u128 << m);
    }
    let tau = t.trailing_zeros();
    ((tau as u128) + 1) << (m - 1)
}

/// #{(x,y) mod 2^m : x² + xy + y² ≡ t (mod 2^m)}. The form is the norm of
/// the unramified quadratic extension: primitive pairs hit exactly the odd
/// residues, uniformly, and scaling by 2 covers the even 2-adic orders.
fn elliptic_count(t: usize, m: u32) -> u128 {
    if m == 0 {
        return 1;
    }
    if t == 0 {
        return 1u128 << (2 * (m / 2));
    }
    let tau = t.trailing_zeros();
    if tau % 2 == 1 {
        0
    } else {
        3u128 << (m - 1)
    }
}

/// Distribution of one block's values modulo 2^k over block variables
/// modulo 2^k.
fn two_block_distribution(block: &TwoBlock, k: u32) -> Vec<u128> {
    let len = 1usize << k;
    let mut d = vec![0u128; len];
    match *block {
        TwoBlock::Unary { e, u } => {
            if e >= k {
                d[0] = 1 << k;
                return d;
            }
            // u·2^e·x² is determined mod 2^k by x mod 2^{k−e}; each such x
            // has 2^e lifts.
            let m = k - e;
            let md = 1i128 << m;
            for x in 0..md {
                let val = ((u * x % md * x % md) << e) & ((1i128 << k) - 1);
                d[val as usize] += 1 << e;
            }
        }
        TwoBlock::Hyperbolic { e } => {
            if e >= k {
                d[0] = 1 << (2 * k);
                return d;
            }
            let m = k - e;
            for t in 0..(1usize << m) {
                d[t << e] += hyperbolic_count(t, m) << (2 * e);
            }
        }
        TwoBlock::Elliptic { e } => {
            if e >= k {
                d[0] = 1 << (2 * k);
                return d;
            }
            let m = k - e;
            for t in 0..(1usize << m) {
                d[t << e] += elliptic_count(t, m) << (2 * e);
            }
        }
    }
    d
}

/// Hard cap on the 2-adic working precision: the pairwise convolutions cost
/// 4^k, so precisions past this point are refused rather than attempted.
const TWO_ADIC_PRECISION_CAP: u32 = 15;

// ---------------------------------------------------------------------------
// Per-form local analyzer
// ---------------------------------------------------------------------------

/// Cached local data for one form: block decompositions at every ramified
/// prime and memoized 2-adic count vectors.
pub struct LocalForm<'f> {
    form: &'f GramForm,
    det: i128,
    odd: Vec<OddBlocks>,
    two_blocks: Vec<TwoBlock>,
    two_counts: HashMap<u32, Vec<u128>>,
}

impl<'f> LocalForm<'f> {
    pub fn new(form: &'f GramForm) -> Result<Self> {
        if form.rank() < 3 {
            return Err(Error::InvalidForm(
                "local analysis requires rank at least 3".to_string(),
            ));
        }
        let det = form.det();
        let odd = arith::factorize(u64::try_from(det).map_err(|_| {
            Error::ResourceLimit(format!("determinant {det} too large to factor"))
        })?)
        .into_iter()
        .map(|(p, _)| p as i128)
        .filter(|&p| p != 2)
        .map(|p| jordan_odd(form, p))
        .collect();
        Ok(LocalForm {
            form,
            det,
            odd,
            two_blocks: jordan_two(form),
            two_counts: HashMap::new(),
        })
    }

    pub fn form(&self) -> &GramForm {
        self.form
    }

    /// Ramified primes: 2 and every odd prime dividing det(A).
    pub fn ramified_primes(&self) -> Vec<i128> {
        let mut ps = vec![2];
        ps.extend(self.odd.iter().map(|ob| ob.p));
        ps
    }

    fn odd_blocks(&self, p: i128) -> &[(u32, i128)] {
        &self
            .odd
            .iter()
            .find(|ob| ob.p == p)
            .expect("prime must divide the determinant")
            .blocks
    }

    fn two_count_vector(&mut self, k: u32) -> Result<&Vec<u128>> {
        if k > TWO_ADIC_PRECISION_CAP {
            return Err(Error::ResourceLimit(format!(
                "2-adic precision 2^{k} exceeds the working cap 2^{TWO_ADIC_PRECISION_CAP}"
            )));
        }
        if !self.two_counts.contains_key(&k) {
            let mut merged = vec![0u128; 1 << k];
            merged[0] = 1;
            for block in &self.two_blocks {
                let d = two_block_distribution(block, k);
                merged = convolve_mod_two_power(&merged, &d);
            }
            self.two_counts.insert(k, merged);
        }
        Ok(&self.two_counts[&k])
    }

    /// #{x mod 2^k : Q(x) ≡ n (mod 2^k)}.
    pub fn count_mod_two_power(&mut self, n: i128, k: u32) -> Result<u128> {
        if k == 0 {
            return Ok(1);
        }
        let vec = self.two_count_vector(k)?;
        Ok(vec[n.rem_euclid(1 << k) as usize])
    }

    /// Is n > 0 represented over ℤ₂? Counts at the stabilization precision
    /// ord₂(4·n·det A) + 3, where a positive count is equivalent to the
    /// existence of a 2-adic solution.
    pub fn represents_two_adically(&mut self, n: i128) -> Result<bool> {
        debug_assert!(n > 0);
        let k = arith::valuation(4 * n * self.det, 2) + 3;
        Ok(self.count_mod_two_power(n, k)? > 0)
    }

    /// Is n > 0 represented over ℤ_p for every p? Only primes dividing
    /// 2·det(A) need inspection: elsewhere the form is unimodular of rank ≥ 3,
    /// hence universal over ℤ_p.
    pub fn represents(&mut self, n: i128) -> Result<bool> {
        debug_assert!(n > 0);
        for ob in &self.odd {
            let p = ob.p;
            let nu = arith::valuation(n, p);
            let w = (n / p.pow(nu)).rem_euclid(p);
            if !decide_odd(p, &ob.blocks, nu, w) {
                return Ok(false);
            }
        }
        self.represents_two_adically(n)
    }

    /// Is n > 0 represented over ℤ_p at the single prime `p`? For a prime not
    /// dividing 2·det(A) the form is unimodular of rank ≥ 3 there, hence the
    /// answer is always true.
    pub fn represents_at(&mut self, p: i128, n: i128) -> Result<bool> {
        debug_assert!(n > 0);
        if p == 2 {
            return self.represents_two_adically(n);
        }
        match self.odd.iter().find(|ob| ob.p == p) {
            Some(ob) => {
                let nu = arith::valuation(n, p);
                let w = (n / p.pow(nu)).rem_euclid(p);
                Ok(decide_odd(p, &ob.blocks, nu, w))
            }
            None => Ok(true),
        }
    }

    /// β_p(n) for a ramified prime (p = 2 or p | det A).
    pub fn ramified_density(&mut self, p: i128, n: i128) -> Result<Density> {
        if p == 2 {
            let k = arith::valuation(4 * n * self.det, 2) + 3;
            let count = self.count_mod_two_power(n, k)?;
            let rank = self.form.rank() as u32;
            Ok(Density::new(
                i128::try_from(count).map_err(|_| {
                    Error::ResourceLimit("2-adic solution count overflows".to_string())
                })?,
                1i128 << (k * (rank - 1)),
            ))
        } else {
            let nu = arith::valuation(n, p);
            let w = (n / p.pow(nu)).rem_euclid(p);
            Ok(density_odd(p, self.odd_blocks(p), nu, w))
        }
    }
}

// ---------------------------------------------------------------------------
// Square classes over the ramified primes
// ---------------------------------------------------------------------------

/// A square-class descriptor: for each listed prime, the exact exponent e and
/// the unit class (mod p for odd p, mod 8 for p = 2) of its members.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SquareClass {
    /// (prime, exponent, unit representative).
    pub parts: Vec<(i128, u32, i128)>,
}

impl SquareClass {
    /// The descriptor of a positive integer whose valuation at every listed
    /// prime is at most 1, or None if some valuation exceeds 1.
    fn of(n: i128, primes: &[i128]) -> Option<SquareClass> {
        let mut parts = Vec::with_capacity(primes.len());
        for &p in primes {
            let e = arith::valuation(n, p);
            if e > 1 {
                return None;
            }
            let unit_mod = if p == 2 { 8 } else { p };
            parts.push((p, e, (n / p.pow(e)).rem_euclid(unit_mod)));
        }
        Some(SquareClass { parts })
    }
}

fn unit_class_reps(p: i128) -> Vec<i128> {
    if p == 2 {
        vec![1, 3, 5, 7]
    } else {
        let mut nonres = 2;
        while legendre(nonres, p) != -1 {
            nonres += 1;
        }
        vec![1, nonres]
    }
}

/// All squarefree square-class descriptors over the given primes.
fn all_squarefree_classes(primes: &[i128]) -> Vec<SquareClass> {
    let mut combos: Vec<Vec<(i128, u32, i128)>> = vec![Vec::new()];
    for &p in primes {
        let mut next = Vec::new();
        for e in 0..2u32 {
            for &u in &unit_class_reps(p) {
                for c in &combos {
                    let mut c = c.clone();
                    c.push((p, e, u));
                    next.push(c);
                }
            }
        }
        combos = next;
    }
    combos
        .into_iter()
        .map(|parts| SquareClass { parts })
        .collect()
}

/// Largest power of p dividing m.
fn p_part(mut m: i128, p: i128) -> i128 {
    let mut g = 1;
    while m % p == 0 {
        m /= p;
        g *= p;
    }
    g
}

/// Does the class contain a squarefree member of the target set? Exact: the
/// class descriptor is the congruence n ≡ u·p^e (mod p^{e+1}, or 2^{e+3} at
/// p = 2) at each listed prime, to be intersected with one of the target's
/// residue classes. An arithmetic progression contains squarefree integers
/// unless its residue is divisible by the square of a prime dividing its
/// modulus, so squarefreeness only constrains primes whose square divides
/// the target modulus and which the class does not already pin to e ≤ 1.
fn class_inhabited(class: &SquareClass, target: &TargetSet) -> bool {
    let (modulus, residues) = target.residue_classes();
    let m_s = modulus as i128;
    'residues: for &r in &residues {
        let r = r as i128;
        for &(p, e, u) in &class.parts {
            let pk = p.pow(e + if p == 2 { 3 } else { 1 });
            let class_res = (u * p.pow(e)).rem_euclid(pk);
            let target_pow = p_part(m_s, p);
            // Consistency modulo the common power of p.
            let g = target_pow.min(pk);
            if g > 1 && (class_res - r).rem_euclid(g) != 0 {
                continue 'residues;
            }
            // The target may pin n modulo a higher power of p than the class
            // does; the combined constraint must keep ord_p(n) exactly e.
            if target_pow > pk && arith::valuation(r.rem_euclid(target_pow).max(1), p) != e
                || target_pow > pk && r.rem_euclid(target_pow) == 0
            {
                continue 'residues;
            }
        }
        // Squarefree members must avoid q² at primes q with q² dividing the
        // target modulus that the class does not pin.
        for (q, a) in arith::factorize(modulus) {
            if a < 2 {
                continue;
            }
            let q = q as i128;
            if class.parts.iter().any(|&(p, _, _)| p == q) {
                continue; // the class pins ord_q(n) ≤ 1 already
            }
            if r.rem_euclid(q * q) == 0 {
                continue 'residues;
            }
        }
        return true;
    }
    false
}

/// Is the square class represented over ℤ_p for every ramified prime?
fn class_represented(local: &mut LocalForm, class: &SquareClass) -> Result<bool> {
    for &(p, e, u) in &class.parts {
        if p == 2 {
            if !local.represents_two_adically(u << e)? {
                return Ok(false);
            }
        } else {
            let blocks = local.odd_blocks(p).to_vec();
            if !decide_odd(p, &blocks, e, u) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// True iff Q(x) = n has a solution over ℤ_p for every prime p. Requires
/// rank ≥ 3 and n > 0.
pub fn locally_represents(form: &GramForm, n: i128) -> Result<bool> {
    if n <= 0 {
        return Ok(false);
    }
    LocalForm::new(form)?.represents(n)
}

/// Tests local representability of every squarefree square class containing
/// target-set members; returns the least S-member of a missed class, or None
/// when the form is locally universal over S.
pub fn locally_universal(form: &GramForm, target: &TargetSet) -> Result<Option<i128>> {
    let mut local = LocalForm::new(form)?;
    let primes = local.ramified_primes();
    let mut failed: Vec<SquareClass> = Vec::new();
    for class in all_squarefree_classes(&primes) {
        if class_inhabited(&class, target) && !class_represented(&mut local, &class)? {
            failed.push(class);
        }
    }
    if failed.is_empty() {
        return Ok(None);
    }
    // Least S-member lying in a failed class, including non-squarefree
    // members (whose square part at a ramified prime falls outside the
    // squarefree classes and is checked directly).
    const SEARCH_CAP: i128 = 100_000_000;
    for n in 1..=SEARCH_CAP {
        if !target.contains(n as u64) {
            continue;
        }
        match SquareClass::of(n, &primes) {
            Some(desc) => {
                if failed.contains(&desc) {
                    return Ok(Some(n));
                }
            }
            None => {
                if !local.represents(n)? {
                    return Ok(Some(n));
                }
            }
        }
    }
    Err(Error::ResourceLimit(
        "no target-set member found in any locally missed class".to_string(),
    ))
}

// ---------------------------------------------------------------------------
// Local densities: closed formulas off the level, exact counting on it
// ---------------------------------------------------------------------------

/// χ_D(p): the Kronecker symbol ((−1)^{r/2}·det A / p); for rank 4 the sign
/// is +1.
fn character(form: &GramForm, p: i128) -> i128 {
    let sign = if (form.rank() / 2) % 2 == 0 { 1 } else { -1 };
    arith::kronecker(sign * form.det(), p) as i128
}

/// β_p(n) for a rank-4 form and squarefree n > 0. Off the level the closed
/// generic-prime formulas apply; for p | 2N the value is the stabilized
/// normalized solution count.
pub fn local_density(form: &GramForm, p: i128, n: i128) -> Result<LocalDensity> {
    if form.rank() != 4 {
        return Err(Error::InvalidForm(
            "local densities are computed for rank 4".to_string(),
        ));
    }
    let (_, square_part) = arith::squarefree_decomposition(
        u64::try_from(n).map_err(|_| Error::InvalidForm(format!("target {n} out of range")))?,
    );
    if square_part != 1 {
        return Err(Error::InvalidForm(format!("{n} is not squarefree")));
    }
    let level = form.level();
    let value = if p != 2 && level % p != 0 {
        let chi = character(form, p);
        if n % p != 0 {
            Density::new(p * p - chi, p * p)
        } else {
            Density::new((p - 1) * (p * p + (1 + chi) * p + 1), p * p * p)
        }
    } else {
        LocalForm::new(form)?.ramified_density(p, n)?
    };
    Ok(LocalDensity {
        prime: p,
        target: n,
        value,
    })
}

/// Direct counting oracle for squarefree n: diagonalize, build per-block
/// value distributions modulo p^k with k = ord_p(4·det A) + 3 (stabilized for
/// every squarefree target), convolve, and normalize. This is independent of
/// both the closed formulas and the valuation recursion.
pub fn local_density_counting(form: &GramForm, p: i128, n: i128) -> Result<Density> {
    let (_, square_part) = arith::squarefree_decomposition(
        u64::try_from(n).map_err(|_| Error::InvalidForm(format!("target {n} out of range")))?,
    );
    if square_part != 1 {
        return Err(Error::InvalidForm(format!("{n} is not squarefree")));
    }
    let rank = form.rank() as u32;
    let k = arith::valuation(4 * form.det(), p) + 3;
    if p == 2 {
        let mut local = LocalForm::new(form)?;
        let count = local.count_mod_two_power(n, k)?;
        return Ok(Density::new(count as i128, 1i128 << (k * (rank - 1))));
    }
    let pk = p
        .checked_pow(k)
        .filter(|&pk| pk <= 4_000_000)
        .ok_or_else(|| Error::ResourceLimit(format!("counting modulus {p}^{k} is too large")))?;
    // Diagonalize exactly, then keep each block's unit at full precision
    // modulo p^k (the mod-p unit of the decision routines is not enough for
    // counting).
    let n_vars = form.rank();
    let mut m: Vec<Vec<BigRational>> = (0..n_vars)
        .map(|i| {
            (0..n_vars)
                .map(|j| big_ratio(form.entry(i, j) as i128, 2))
                .collect()
        })
        .collect();
    let mut diag: Vec<(u32, i128)> = Vec::new(); // (e, unit mod p^{k})
    {
        let mut active: Vec<usize> = (0..n_vars).collect();
        while !active.is_empty() {
            let mut best: Option<(i64, usize, usize)> = None;
            for (ai, &i) in active.iter().enumerate() {
                for &j in &active[ai..] {
                    if m[i][j].is_zero() {
                        continue;
                    }
                    let v = ord_p_rat(&m[i][j], p);
                    let better = match best {
                        None => true,
                        Some((bv, bi, bj)) => v < bv || (v == bv && bi != bj && i == j),
                    };
                    if better {
                        best = Some((v, i, j));
                    }
                }
            }
            let (_, bi, bj) = best.expect("positive-definite block cannot vanish");
            if bi != bj {
                for col in 0..n_vars {
                    let add = m[bj][col].clone();
                    m[bi][col] += add;
                }
                for row in 0..n_vars {
                    let add = m[row][bj].clone();
                    m[row][bi] += add;
                }
            }
            let i = bi;
            let piv = m[i][i].clone();
            for kk in active.clone() {
                if kk != i && !m[kk][i].is_zero() {
                    let c = &m[kk][i] / &piv;
                    clear_symmetric(&mut m, kk, i, &c);
                }
            }
            let e = ord_p_rat(&piv, p) as u32;
            let unit = rat_mod_pk(&(piv / big_ratio(p.pow(e), 1)), p, k);
            diag.push((e, unit));
            active.retain(|&x| x != i);
        }
    }
    let mut merged = vec![0u128; pk as usize];
    merged[0] = 1;
    for &(e, u) in &diag {
        let mut d = vec![0u128; pk as usize];
        if e >= k {
            d[0] = pk as u128;
        } else {
            let md = p.pow(k - e);
            let scale = p.pow(e);
            // u·p^e·x² is determined mod p^k by x mod p^{k−e}, hit p^e times.
            for x in 0..md {
                let val = (u * x % md * x % md * scale).rem_euclid(pk);
                d[val as usize] += scale as u128;
            }
        }
        let d_nonzero: Vec<(usize, u128)> = d
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v != 0)
            .map(|(i, &v)| (i, v))
            .collect();
        let mut out = vec![0u128; pk as usize];
        let pk_us = pk as usize;
        for (s, &av) in merged.iter().enumerate() {
            if av == 0 {
                continue;
            }
            for &(t, bv) in &d_nonzero {
                let mut idx = s + t;
                if idx >= pk_us {
                    idx -= pk_us;
                }
                out[idx] += av * bv;
            }
        }
        merged = out;
    }
    let count = merged[n.rem_euclid(pk) as usize];
    Ok(Density::new(
        i128::try_from(count)
            .map_err(|_| Error::ResourceLimit("solution count overflows".to_string()))?,
        pk.pow(rank - 1),
    ))
}

// ---------------------------------------------------------------------------
// The Eisenstein constant
// ---------------------------------------------------------------------------

/// Fundamental discriminant D₀ and square conductor f with det = D₀·f².
fn fundamental_discriminant(det: i128) -> (i128, i128) {
    let (core, f) = arith::squarefree_decomposition(det as u64);
    let (core, f) = (core as i128, f as i128);
    if core.rem_euclid(4) == 1 {
        (core, f)
    } else {
        debug_assert_eq!(f % 2, 0, "discriminants are 0 or 1 mod 4");
        (4 * core, f / 2)
    }
}

/// Generalized Bernoulli number B_{2,χ} for the primitive quadratic character
/// of fundamental discriminant q ≥ 1:
/// B_{2,χ} = q·Σ_{a=1}^{q} χ(a)·B₂(a/q) with B₂(x) = x² − x + 1/6.
fn bernoulli2_chi(q: i128) -> BigRational {
    let mut sum = BigRational::zero();
    for a in 1..=q {
        let chi = arith::kronecker(q, a);
        if chi == 0 {
            continue;
        }
        let term = big_ratio(a * a, q) - big_ratio(a, 1) + big_ratio(q, 6);
        sum += BigRational::from_i128(chi as i128).unwrap() * term;
    }
    sum
}

/// L(2, χ_D) as a float, from the exact closed form π²·B_{2,χ}/q^{3/2} for
/// the primitive part, corrected by the Euler factors that the imprimitive
/// Kronecker symbol kills at primes dividing the square conductor.
pub fn l_two_chi(det: i128) -> f64 {
    let (d0, f) = fundamental_discriminant(det);
    let mut value = std::f64::consts::PI.powi(2) * bernoulli2_chi(d0).to_f64().unwrap()
        / (d0 as f64).powf(1.5);
    for (p, _) in arith::factorize(f as u64) {
        let p = p as i128;
        if d0 % p != 0 {
            let chi = arith::kronecker(d0, p) as f64;
            value *= 1.0 - chi / (p * p) as f64;
        }
    }
    value
}

/// The Eisenstein lower-bound constant
/// C_E = (π²/√det)·L(2,χ_D)⁻¹·min ∏_{p|2N} β_p(n)/(1 − χ_D(p)/p²),
/// the minimum over square classes of squarefree target-set members. The π²
/// and √det cancel exactly against the closed form of L(2,χ_D), leaving a
/// rational number.
pub fn eisenstein_constant(form: &GramForm, target: &TargetSet) -> Result<EisensteinConstant> {
    if form.rank() != 4 {
        return Err(Error::InvalidForm(
            "the Eisenstein constant is computed for rank 4".to_string(),
        ));
    }
    if let Some(miss) = locally_universal(form, target)? {
        return Err(Error::InvalidForm(format!(
            "form is not locally universal over the target set (misses {miss})"
        )));
    }
    let det = form.det();
    let level = form.level();
    let mut local = LocalForm::new(form)?;

    let mut bad_primes: Vec<i128> = arith::factorize(2 * level as u64)
        .into_iter()
        .map(|(p, _)| p as i128)
        .collect();
    bad_primes.sort_unstable();
    bad_primes.dedup();

    let mut best: Option<(BigRational, SquareClass)> = None;
    for class in all_squarefree_classes(&bad_primes) {
        if !class_inhabited(&class, target) {
            continue;
        }
        let mut product = BigRational::one();
        for &(p, e, u) in &class.parts {
            let beta = if p == 2 || det % p == 0 {
                local.ramified_density(p, u * p.pow(e))?
            } else {
                // p | N with p ∤ det cannot occur (det divides N^rank);
                // kept for safety.
                let chi = character(form, p);
                if e == 0 {
                    Density::new(p * p - chi, p * p)
                } else {
                    Density::new((p - 1) * (p * p + (1 + chi) * p + 1), p * p * p)
                }
            };
            let chi = character(form, p);
            let euler = big_ratio(p * p - chi, p * p);
            product *= big_ratio(*beta.numer(), *beta.denom()) / euler;
        }
        if best.as_ref().is_none_or(|(b, _)| product < *b) {
            best = Some((product, class));
        }
    }
    let (min_product, min_class) =
        best.ok_or_else(|| Error::Target("target set has no squarefree members".to_string()))?;

    // The archimedean density of a rank-4 shell is 4π²n/√det A, and
    // (4π²/√det)/L(2,χ_D) = 4·D₀/(f·B_{2,χ}·∏_{p|f, p∤D₀}(1 − χ_{D₀}(p)/p²)).
    let (d0, f) = fundamental_discriminant(det);
    let mut head = big_ratio(4 * d0, f) / bernoulli2_chi(d0);
    for (p, _) in arith::factorize(f as u64) {
        let p = p as i128;
        if d0 % p != 0 {
            let chi = arith::kronecker(d0, p) as i128;
            head /= big_ratio(p * p - chi, p * p);
        }
    }
    Ok(EisensteinConstant {
        value: head * min_product,
        minimizing_class: min_class.parts,
    })
}

/// Numeric Eisenstein coefficient a_E(n) for squarefree locally-represented n
/// (rank 4), for consistency checks against the lower bound
/// C_E·n·∏_{p|n, p∤N, χ(p)=−1} (p−1)/(p+1).
pub fn eisenstein_coefficient(form: &GramForm, n: i128) -> Result<f64> {
    let det = form.det();
    let level = form.level();
    let mut local = LocalForm::new(form)?;
    let mut bad_primes: Vec<i128> = arith::factorize(2 * level as u64)
        .into_iter()
        .map(|(p, _)| p as i128)
        .collect();
    bad_primes.sort_unstable();
    bad_primes.dedup();

    let mut value = 4.0 * std::f64::consts::PI.powi(2) * n as f64 / (det as f64).sqrt();
    value /= l_two_chi(det);
    for &p in &bad_primes {
        let beta = if p == 2 || det % p == 0 {
            local.ramified_density(p, n)?
        } else {
            local_density(form, p, n)?.value
        };
        let chi = character(form, p) as f64;
        value *= beta.to_f64().unwrap() / (1.0 - chi / (p * p) as f64);
    }
    for (p, _) in arith::factorize(n as u64) {
        let p = p as i128;
        if bad_primes.contains(&p) {
            continue;
        }
        let chi = character(form, p) as f64;
        let pf = p as f64;
        let factor = (pf - 1.0) * (pf * pf + (1.0 + chi) * pf + 1.0) / pf.powi(3);
        value *= factor / (1.0 - chi / (pf * pf));
    }
    Ok(value)
}

/// Brute-force solution count over (ℤ/p^k)^r; only for small p^{k·r}.
#[cfg(test)]
fn count_solutions_bruteforce(form: &GramForm, p: i128, k: u32, n: i128) -> u128 {
    let r = form.rank();
    let pk = p.pow(k);
    let total = (pk as u128).pow(r as u32);
    assert!(total <= 1 << 26, "brute-force oracle out of range");
    let mut count = 0u128;
    let mut x = vec![0i64; r];
    for idx in 0..total {
        let mut rem = idx;
        for xi in x.iter_mut() {
            *xi = (rem % pk as u128) as i64;
            rem /= pk as u128;
        }
        if (form.evaluate(&x) - n).rem_euclid(pk) == 0 {
            count += 1;
        }
    }
    count
}
