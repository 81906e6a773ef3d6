//! Certification of complete exception lists via ternary sublattices.
//!
//! Two routes prove that a positive-definite quaternary (or quinary) form
//! represents every member of a target set `S`, or pin down the finite list
//! of members it misses:
//!
//! 1. **Ternary containment** ([`method1`]): if the lattice contains a
//!    ternary sublattice whose Gram matrix is equivalent to one of the eleven
//!    built-in ternaries known to represent every positive integer coprime
//!    to 3, then (for `S` inside the coprime-to-3 integers) the form
//!    represents all of `S` — a certificate with an empty exception list.
//!
//! 2. **Regular split** ([`split_search`] + [`method2`]): if the lattice
//!    contains, up to small finite index, an orthogonal splitting `K ⊕ ⟨u⟩`
//!    with `K` equivalent to a *regular* ternary `T` from the catalog and
//!    `Q(u) = d`, then every value of `T(x,y,z) + d·w²` is a value of the
//!    form. Regularity means `T` represents an integer exactly when it does
//!    so over every `ℤ_p`, so membership is decided by congruence conditions
//!    alone. A queue of residue classes then certifies the complete, finite
//!    exception list of `T + d·w²`, and the few leftovers are tested against
//!    the original form directly.
//!
//! Regularity of the catalog entries is trusted input; the congruence tables
//! derived from it are cross-checked against direct enumeration by
//! [`consistency_check`].

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arith;
use crate::enumerate::{self, EnumLimits};
use crate::error::{Error, Result};
use crate::form::GramForm;
use crate::padic::{self, LocalForm};
use crate::reduce;
use crate::target::TargetSet;

/// How one residue class behaves for a regular ternary: every member of the
/// class is represented, none is, or the class pins down too little of the
/// local data to decide (members differ at higher prime powers).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassFlag {
    AllRepresented,
    NoneRepresented,
    Mixed,
}

/// Local representability table at one prime `p` where the ternary has
/// failures: `miss[a][i]` records whether `p^a·u` is missed, with `u` running
/// over the unit classes that determine the answer (all units mod `p` for odd
/// `p`; the odd residues mod 8 for `p = 2`). Beyond `a_max` the pattern
/// repeats with period 2 in `a`; construction verifies the repetition on the
/// last two rows and rejects the entry otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
struct PrimeTable {
    p: i128,
    /// Exponent of `p` in the base congruence modulus `M`.
    k: u32,
    /// Unit precision: classes mod `p^delta` pin the unit's status.
    delta: u32,
    a_max: u32,
    miss: Vec<Vec<bool>>,
}

impl PrimeTable {
    fn unit_count(p: i128) -> usize {
        if p == 2 {
            4
        } else {
            (p - 1) as usize
        }
    }

    fn unit_index(&self, unit: i128) -> usize {
        if self.p == 2 {
            ((unit.rem_euclid(8) - 1) / 2) as usize
        } else {
            (unit.rem_euclid(self.p) - 1) as usize
        }
    }

    /// Fold an exponent beyond the probed range back onto the stable tail.
    fn fold(&self, a: u32) -> u32 {
        if a <= self.a_max {
            a
        } else if (a - self.a_max) % 2 == 0 {
            self.a_max
        } else {
            self.a_max - 1
        }
    }

    fn misses(&self, b: i128) -> bool {
        debug_assert!(b > 0);
        let a = arith::valuation(b, self.p);
        let unit = b / self.p.pow(a);
        self.miss[self.fold(a) as usize][self.unit_index(unit)]
    }
}

/// A provably regular ternary form together with the congruence data that
/// decides which integers it represents: the base modulus `M = ∏ p^{k_p}`
/// over the primes with local failures, a represented/missed/mixed flag per
/// residue class mod `M`, and per-prime tables for arbitrary prime powers.
#[derive(Clone, Debug)]
pub struct RegularTernary {
    label: String,
    gram: GramForm,
    reduced: GramForm,
    modulus: u64,
    class_flags: Vec<ClassFlag>,
    tables: Vec<PrimeTable>,
}

/// Largest base congruence modulus accepted when deriving class flags.
const MAX_CLASS_MODULUS: u64 = 20_000_000;

impl RegularTernary {
    /// Derives the full congruence data for a (trusted) regular ternary.
    pub fn new(label: impl Into<String>, gram: GramForm) -> Result<Self> {
        let label = label.into();
        if gram.rank() != 3 {
            return Err(Error::Catalog(format!(
                "entry {label}: expected rank 3, got {}",
                gram.rank()
            )));
        }
        let tables = derive_prime_tables(&gram, &label)?;
        let mut modulus: u64 = 1;
        for t in &tables {
            let m = (t.p as u64).checked_pow(t.k).and_then(|q| modulus.checked_mul(q));
            modulus = match m {
                Some(v) if v <= MAX_CLASS_MODULUS => v,
                _ => {
                    return Err(Error::ResourceLimit(format!(
                        "entry {label}: congruence modulus exceeds {MAX_CLASS_MODULUS}"
                    )))
                }
            };
        }
        let class_flags = (0..modulus)
            .map(|a| classify_residue(&tables, a))
            .collect();
        let reduced = reduce::normalized_reduced(&gram);
        Ok(RegularTernary {
            label,
            gram,
            reduced,
            modulus,
            class_flags,
            tables,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn gram(&self) -> &GramForm {
        &self.gram
    }

    /// Base congruence modulus `M`.
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Flag of the residue class `a mod M`.
    pub fn class_flag(&self, a: u64) -> ClassFlag {
        self.class_flags[(a % self.modulus) as usize]
    }

    pub fn class_flags(&self) -> &[ClassFlag] {
        &self.class_flags
    }

    /// Primes at which the ternary has local failures, ascending.
    pub fn failure_primes(&self) -> Vec<u64> {
        self.tables.iter().map(|t| t.p as u64).collect()
    }

    /// Whether the ternary represents `b ≥ 0` — by regularity, a pure
    /// congruence lookup.
    pub fn represents(&self, b: i128) -> bool {
        debug_assert!(b >= 0);
        b == 0 || self.tables.iter().all(|t| !t.misses(b))
    }

    /// The modulus pinning the full local behaviour of `b`: members of
    /// `b mod second_modulus(b)` share `b`'s represented/missed status.
    /// `None` when the modulus overflows.
    pub fn second_modulus(&self, b: i128) -> Option<u64> {
        debug_assert!(b > 0);
        let mut m: u64 = 1;
        for t in &self.tables {
            let e = arith::valuation(b, t.p) + t.delta;
            m = (t.p as u64).checked_pow(e).and_then(|q| m.checked_mul(q))?;
        }
        Some(m)
    }
}

/// Probes every ramified prime of the form and keeps tables for the primes
/// with at least one local failure.
fn derive_prime_tables(gram: &GramForm, label: &str) -> Result<Vec<PrimeTable>> {
    let mut lf = LocalForm::new(gram)?;
    let det = gram.det();
    let mut tables = Vec::new();
    for p in lf.ramified_primes() {
        let mut a_max = arith::valuation(4 * det, p) + 5;
        if p == 2 {
            // Probing 2^a·u costs a count at precision a + v₂(det) + 5,
            // which must stay within the 2-adic working cap of 2^15. The
            // tail check below still rejects any entry whose pattern has
            // not stabilized by the clamped depth.
            let clamp = 10u32.saturating_sub(arith::valuation(det, 2));
            if clamp < 3 {
                return Err(Error::Catalog(format!(
                    "entry {label}: 2-adic block depth too large to probe"
                )));
            }
            a_max = a_max.min(clamp);
        }
        let units = PrimeTable::unit_count(p);
        let mut miss = Vec::with_capacity((a_max + 1) as usize);
        for a in 0..=a_max {
            let mut row = Vec::with_capacity(units);
            for i in 0..units {
                let unit: i128 = if p == 2 { 2 * i as i128 + 1 } else { i as i128 + 1 };
                let n = p.pow(a) * unit;
                row.push(!lf.represents_at(p, n)?);
            }
            miss.push(row);
        }
        // The pattern must be 2-periodic past the deepest Jordan block; two
        // matching periods at the tail certify the fold used for lookups.
        let last = a_max as usize;
        if miss[last] != miss[last - 2] || miss[last - 1] != miss[last - 3] {
            return Err(Error::Catalog(format!(
                "entry {label}: local pattern at p={p} did not stabilize"
            )));
        }
        if miss.iter().any(|row| row.iter().any(|&m| m)) {
            let (k, delta) = if p == 2 { (4, 3) } else { (2, 1) };
            tables.push(PrimeTable {
                p,
                k,
                delta,
                a_max,
                miss,
            });
        }
    }
    Ok(tables)
}

/// Flags the residue class `a` modulo the product of the table prime powers.
fn classify_residue(tables: &[PrimeTable], a: u64) -> ClassFlag {
    let mut mixed = false;
    for t in tables {
        let pk = (t.p as u64).pow(t.k);
        let r = (a % pk) as i128;
        if r == 0 || arith::valuation(r, t.p) > t.k - t.delta {
            // The class does not pin the valuation (or the unit) at p.
            mixed = true;
            continue;
        }
        if t.misses(r) {
            // Every member shares r's pinned local data at p, so the whole
            // class is missed regardless of the other primes.
            return ClassFlag::NoneRepresented;
        }
    }
    if mixed {
        ClassFlag::Mixed
    } else {
        ClassFlag::AllRepresented
    }
}

/// Verifies the congruence data against direct enumeration: for every
/// `1 ≤ b ≤ cap`, the table lookup must agree with an exact representation
/// search. A mismatch means the entry is not actually regular (or the tables
/// are wrong) and poisons every certificate built on it.
pub fn consistency_check(entry: &RegularTernary, cap: u64, limits: &EnumLimits) -> Result<()> {
    let bits = enumerate::representation_bitset(&entry.gram, cap, limits)?;
    for b in 1..=cap {
        let table = entry.represents(b as i128);
        let direct = bits.get(b as usize);
        if table != direct {
            return Err(Error::Verification(format!(
                "catalog entry {}: congruence data says {} about {b}, enumeration says {}",
                entry.label,
                if table { "represented" } else { "missed" },
                if direct { "represented" } else { "missed" },
            )));
        }
    }
    Ok(())
}

/// The eleven ternary forms that represent every positive integer coprime
/// to 3, in their canonical published order. The first is x²−xy+y²+z².
pub fn builtin_universal_ternaries() -> Vec<GramForm> {
    const MATRICES: [[i64; 9]; 11] = [
        [2, -1, 0, -1, 2, 0, 0, 0, 2],
        [2, 1, 0, 1, 4, 1, 0, 1, 8],
        [2, 1, -1, 1, 4, -2, -1, -2, 8],
        [2, 1, -1, 1, 4, 0, -1, 0, 4],
        [2, 1, -1, 1, 4, 0, -1, 0, 10],
        [2, 1, 0, 1, 4, 0, 0, 0, 6],
        [2, 0, 1, 0, 2, -1, 1, -1, 4],
        [2, 0, 0, 0, 2, 0, 0, 0, 6],
        [2, 0, -1, 0, 2, 0, -1, 0, 8],
        [2, 0, 0, 0, 2, 0, 0, 0, 12],
        [2, 0, -1, 0, 2, 0, -1, 0, 14],
    ];
    MATRICES
        .iter()
        .map(|m| GramForm::new(3, m.to_vec()).expect("built-in ternaries are valid"))
        .collect()
}

/// The catalog shipped with the library: the eleven built-ins plus the
/// regular ternary x²+y²+yz+2z² (determinant 14), whose congruence data is
/// exercised by the worked index-two splitting example.
pub fn default_catalog() -> Result<Vec<RegularTernary>> {
    let mut out = Vec::new();
    for (i, g) in builtin_universal_ternaries().into_iter().enumerate() {
        out.push(RegularTernary::new(format!("U{:02}", i + 1), g)?);
    }
    let r14 = GramForm::new(3, vec![2, 0, 0, 0, 2, 1, 0, 1, 4])?;
    out.push(RegularTernary::new("R14", r14)?);
    Ok(out)
}

/// Loads a catalog of regular ternaries from a CSV file with columns
/// `label,a11,a22,a33,a12,a13,a23` (integer Gram matrix entries; `a11` etc.
/// are the *matrix* entries, so diagonals are twice the form coefficients).
/// Lines starting with `#`, blank lines, and a `label,...` header are
/// skipped. An empty file yields an empty catalog.
pub fn load_catalog(path: &Path) -> Result<Vec<RegularTernary>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields.first() == Some(&"label") {
            continue;
        }
        if fields.len() != 7 {
            return Err(Error::Catalog(format!(
                "line {}: expected 7 comma-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let label = fields[0].to_string();
        let mut v = [0i64; 6];
        for (slot, field) in v.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| {
                Error::Catalog(format!("line {}: bad integer `{field}`", lineno + 1))
            })?;
        }
        let [a11, a22, a33, a12, a13, a23] = v;
        let gram = GramForm::new(3, vec![a11, a12, a13, a12, a22, a23, a13, a23, a33])
            .map_err(|e| Error::Catalog(format!("line {}: {e}", lineno + 1)))?;
        out.push(RegularTernary::new(label, gram)?);
    }
    Ok(out)
}

/// Which certification route produced an [`ExceptionReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertMethod {
    TernaryContainment,
    RegularSplit,
    AnalyticThreshold,
    BoundedAudit,
}

/// The outcome of certifying one form against the target set: the sorted
/// list of members it fails to represent. `certified = true` promises the
/// list is provably complete; bounded audits only scanned up to `bound` and
/// are never certified.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionReport {
    pub label: String,
    pub method: CertMethod,
    pub exceptions: Vec<u64>,
    pub certified: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bound: Option<u64>,
}

/// A ternary-containment certificate: three explicit lattice vectors whose
/// pairwise inner products reproduce, exactly, the reduced Gram matrix of
/// one of the built-in ternaries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method1Certificate {
    /// Index into [`builtin_universal_ternaries`] (0-based).
    pub builtin_index: usize,
    /// The realized sublattice basis, in ambient coordinates.
    pub vectors: Vec<Vec<i64>>,
    /// Row-major 3×3 Gram matrix the vectors realize (the reduced built-in).
    pub ternary: Vec<i64>,
}

impl Method1Certificate {
    /// Independently re-verifies the certificate against the ambient form:
    /// the vectors' Gram matrix must equal the claimed ternary, which must be
    /// the reduced built-in it names.
    pub fn verify(&self, form: &GramForm) -> Result<()> {
        let builtins = builtin_universal_ternaries();
        let builtin = builtins.get(self.builtin_index).ok_or_else(|| {
            Error::Verification(format!("no built-in ternary #{}", self.builtin_index))
        })?;
        let reduced = reduce::normalized_reduced(builtin);
        if reduced.matrix() != self.ternary.as_slice() {
            return Err(Error::Verification(
                "certificate ternary is not the named built-in".to_string(),
            ));
        }
        if self.vectors.len() != 3 || self.vectors.iter().any(|v| v.len() != form.rank()) {
            return Err(Error::Verification(
                "certificate must carry three ambient vectors".to_string(),
            ));
        }
        let gram = form.gram_of(&self.vectors);
        let expected: Vec<i128> = self.ternary.iter().map(|&x| x as i128).collect();
        if gram != expected {
            return Err(Error::Verification(
                "certificate vectors do not realize the claimed Gram matrix".to_string(),
            ));
        }
        Ok(())
    }
}

/// Is every member of the target coprime to 3? The built-in ternaries only
/// certify such targets.
fn target_within_coprime3(target: &TargetSet) -> bool {
    let (m, residues) = target.residue_classes();
    m % 3 == 0 && residues.iter().all(|r| r % 3 != 0)
}

fn inner_product(form: &GramForm, x: &[i64], y: &[i64]) -> i128 {
    let n = form.rank();
    let mut acc = 0i128;
    for i in 0..n {
        let mut row = 0i128;
        for j in 0..n {
            row += form.entry(i, j) as i128 * y[j] as i128;
        }
        acc += x[i] as i128 * row;
    }
    acc
}

fn negate(v: &[i64]) -> Vec<i64> {
    v.iter().map(|&x| -x).collect()
}

/// Ternary containment: searches for three vectors realizing one of the
/// built-in coprime-to-3-universal ternaries exactly. On success the form
/// represents everything those ternaries do, so (for a target inside the
/// coprime-to-3 integers) the certified exception list is empty.
///
/// Built-ins are tried in their published order and the first match wins.
/// Returns `None` when no built-in embeds or the target is not contained in
/// the coprime-to-3 integers.
pub fn method1(
    form: &GramForm,
    target: &TargetSet,
    limits: &EnumLimits,
) -> Result<Option<(ExceptionReport, Method1Certificate)>> {
    if form.rank() != 4 && form.rank() != 5 {
        return Err(Error::InvalidForm(format!(
            "ternary containment expects rank 4 or 5, got {}",
            form.rank()
        )));
    }
    if !target_within_coprime3(target) {
        return Ok(None);
    }
    let mut shells: BTreeMap<i128, Vec<Vec<i64>>> = BTreeMap::new();
    for (idx, builtin) in builtin_universal_ternaries().iter().enumerate() {
        let t = reduce::normalized_reduced(builtin);
        let mut norms = [0i128; 3];
        for (i, n) in norms.iter_mut().enumerate() {
            *n = t.entry(i, i) as i128 / 2;
        }
        let mut empty = false;
        for &n in &norms {
            if !shells.contains_key(&n) {
                let shell = enumerate::vectors_of_norm(form, n, limits)?;
                empty |= shell.is_empty();
                shells.insert(n, shell);
            } else {
                empty |= shells[&n].is_empty();
            }
        }
        if empty {
            continue;
        }
        let target_gram = t.matrix();
        // One representative per ± pair is enumerated; fixing v1's sign and
        // flipping v2, v3 covers every sign pattern of the Gram matrix.
        for v1 in &shells[&norms[0]] {
            for v2_half in &shells[&norms[1]] {
                for v2 in [v2_half.clone(), negate(v2_half)] {
                    if inner_product(form, v1, &v2) != target_gram[1] as i128 {
                        continue;
                    }
                    for v3_half in &shells[&norms[2]] {
                        for v3 in [v3_half.clone(), negate(v3_half)] {
                            if inner_product(form, v1, &v3) != target_gram[2] as i128
                                || inner_product(form, &v2, &v3) != target_gram[5] as i128
                            {
                                continue;
                            }
                            let cert = Method1Certificate {
                                builtin_index: idx,
                                vectors: vec![v1.clone(), v2.clone(), v3.clone()],
                                ternary: t.matrix().to_vec(),
                            };
                            cert.verify(form)?;
                            let report = ExceptionReport {
                                label: form.digest_label(),
                                method: CertMethod::TernaryContainment,
                                exceptions: Vec::new(),
                                certified: true,
                                bound: None,
                            };
                            return Ok(Some((report, cert)));
                        }
                    }
                }
            }
        }
    }
    Ok(None)
}

/// An orthogonal splitting witness: a rank-3 sublattice `K` (spanned by
/// `basis`, in ambient coordinates) equivalent to the catalog entry at
/// `catalog_index`, and the orthogonal vector `u` with `Q(u) = d`, so that
/// values of `T + d·w²` are values of the ambient form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub basis: Vec<Vec<i64>>,
    pub d: u64,
    pub u: Vec<i64>,
    pub catalog_index: usize,
    /// Row-major Gram matrix of `basis` under the ambient form.
    pub k_gram: Vec<i64>,
}

/// Re-verifies a split candidate from scratch: orthogonality, the norm of
/// `u`, the recorded Gram matrix, and equivalence with the catalog entry.
pub fn verify_split(
    form: &GramForm,
    cand: &SplitCandidate,
    catalog: &[RegularTernary],
    limits: &EnumLimits,
) -> Result<()> {
    let entry = catalog.get(cand.catalog_index).ok_or_else(|| {
        Error::Verification(format!("no catalog entry #{}", cand.catalog_index))
    })?;
    if form.evaluate(&cand.u) != cand.d as i128 {
        return Err(Error::Verification("u does not have norm d".to_string()));
    }
    if cand.basis.len() != 3 {
        return Err(Error::Verification("basis must have three vectors".to_string()));
    }
    for v in &cand.basis {
        if inner_product(form, v, &cand.u) != 0 {
            return Err(Error::Verification("basis is not orthogonal to u".to_string()));
        }
    }
    let gram = form.gram_of(&cand.basis);
    let expected: Vec<i128> = cand.k_gram.iter().map(|&x| x as i128).collect();
    if gram != expected {
        return Err(Error::Verification(
            "recorded Gram matrix does not match the basis".to_string(),
        ));
    }
    let k_form = GramForm::new(3, cand.k_gram.clone())
        .map_err(|e| Error::Verification(format!("sublattice Gram invalid: {e}")))?;
    if reduce::is_equivalent(&k_form, entry.gram(), limits)?.is_none() {
        return Err(Error::Verification(
            "sublattice is not equivalent to the catalog entry".to_string(),
        ));
    }
    Ok(())
}

/// Basis of the integer kernel `{x : g·x = 0}` of a nonzero integer vector,
/// as `n−1` columns of a unimodular matrix (so the kernel lattice is
/// saturated: it is all of the integer kernel, not a finite-index part).
pub(crate) fn kernel_of_vector(g: &[i128]) -> Vec<Vec<i128>> {
    let n = g.len();
    let mut g = g.to_vec();
    let mut u = vec![vec![0i128; n]; n];
    for (i, row) in u.iter_mut().enumerate() {
        row[i] = 1;
    }
    // Columns of `u` track a basis with g·(column j) = g[j]; Euclidean steps
    // shrink entries of g until a single nonzero remains.
    loop {
        let mut nonzero: Vec<usize> = (0..n).filter(|&j| g[j] != 0).collect();
        if nonzero.len() <= 1 {
            break;
        }
        nonzero.sort_by_key(|&j| g[j].unsigned_abs());
        let (i, j) = (nonzero[0], nonzero[1]);
        let q = g[j].div_euclid(g[i]);
        g[j] -= q * g[i];
        for row in 0..n {
            let delta = q * u[row][i];
            u[row][j] -= delta;
        }
    }
    let pivot = (0..n).find(|&j| g[j] != 0).expect("vector must be nonzero");
    (0..n)
        .filter(|&j| j != pivot)
        .map(|j| (0..n).map(|row| u[row][j]).collect())
        .collect()
}

pub(crate) fn inner_product_wide(form: &GramForm, x: &[i128], y: &[i128]) -> i128 {
    let n = form.rank();
    let mut acc = 0i128;
    for i in 0..n {
        let mut row = 0i128;
        for j in 0..n {
            row += form.entry(i, j) as i128 * y[j];
        }
        acc += x[i] * row;
    }
    acc
}

/// Greedy size-reduction of a kernel basis (entries can come out of the
/// Euclidean elimination badly skewed); keeps norms small enough to fit the
/// Gram matrix in i64.
pub(crate) fn shrink_basis(form: &GramForm, basis: &mut [Vec<i128>]) {
    loop {
        let mut improved = false;
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                if i == j {
                    continue;
                }
                let bjj = inner_product_wide(form, &basis[j], &basis[j]);
                let bij = inner_product_wide(form, &basis[i], &basis[j]);
                let c = div_round(bij, bjj);
                if c == 0 {
                    continue;
                }
                let bii = inner_product_wide(form, &basis[i], &basis[i]);
                let candidate: Vec<i128> = basis[i]
                    .iter()
                    .zip(&basis[j])
                    .map(|(&a, &b)| a - c * b)
                    .collect();
                if inner_product_wide(form, &candidate, &candidate) < bii {
                    basis[i] = candidate;
                    improved = true;
                }
            }
        }
        if !improved {
            return;
        }
    }
}

/// Nearest-integer division.
fn div_round(num: i128, den: i128) -> i128 {
    let half = den / 2;
    if (num >= 0) == (den > 0) {
        (num + half) / den
    } else {
        (num - half) / den
    }
}

/// Largest sublattice index `[L : K ⊕ ⟨u⟩]` considered by `split_search`.
const MAX_SPLIT_INDEX: i128 = 4;

/// Finds all orthogonal splittings `K ⊕ ⟨u⟩` of finite index ≤ 4 in the
/// lattice with `K` equivalent to a catalog regular ternary and the split
/// form `T + d·w²` locally representing every target member. Candidates are
/// returned with `d` ascending, deduplicated by `(d, class of K)`.
pub fn split_search(
    form: &GramForm,
    catalog: &[RegularTernary],
    target: &TargetSet,
    limits: &EnumLimits,
) -> Result<Vec<SplitCandidate>> {
    if form.rank() != 4 {
        return Err(Error::InvalidForm(format!(
            "splitting search expects rank 4, got {}",
            form.rank()
        )));
    }
    let det_l = form.det();
    // Admissible d values: 2·d·det(K) = ind²·det(L) for some catalog K and
    // index ind ≤ 4.
    let mut d_values: BTreeSet<i128> = BTreeSet::new();
    for entry in catalog {
        let den = 2 * entry.gram().det();
        for ind in 1..=MAX_SPLIT_INDEX {
            let num = ind * ind * det_l;
            if num % den == 0 && num / den > 0 {
                d_values.insert(num / den);
            }
        }
    }
    let mut out = Vec::new();
    let mut seen: HashSet<(i128, Vec<i64>)> = HashSet::new();
    for &d in &d_values {
        for u in enumerate::vectors_of_norm(form, d, limits)? {
            let content = u.iter().fold(0i128, |acc, &x| arith::gcd(acc, x as i128));
            if content != 1 {
                continue;
            }
            let au: Vec<i128> = (0..4)
                .map(|r| (0..4).map(|c| form.entry(r, c) as i128 * u[c] as i128).sum())
                .collect();
            let mut kernel = kernel_of_vector(&au);
            shrink_basis(form, &mut kernel);
            let basis: Vec<Vec<i64>> = kernel
                .iter()
                .map(|v| {
                    v.iter()
                        .map(|&x| i64::try_from(x))
                        .collect::<std::result::Result<Vec<i64>, _>>()
                })
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    Error::ResourceLimit("orthogonal-complement basis overflowed".to_string())
                })?;
            let gram_wide = form.gram_of(&basis);
            let k_gram: Vec<i64> = gram_wide
                .iter()
                .map(|&x| i64::try_from(x))
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    Error::ResourceLimit("orthogonal-complement Gram overflowed".to_string())
                })?;
            let k_form = GramForm::new(3, k_gram.clone())?;
            let det_k = k_form.det();
            // [L : K ⊕ ⟨u⟩]² = 2d·det(K)/det(L).
            let num = 2 * d * det_k;
            if num % det_l != 0 {
                continue;
            }
            let ind = match arith::exact_sqrt(num / det_l) {
                Some(i) if i <= MAX_SPLIT_INDEX => i,
                _ => continue,
            };
            debug_assert!(ind >= 1);
            let k_reduced = reduce::normalized_reduced(&k_form);
            if !seen.insert((d, k_reduced.matrix().to_vec())) {
                continue;
            }
            let matched = {
                let mut found = None;
                for (ci, entry) in catalog.iter().enumerate() {
                    if entry.gram().det() != det_k {
                        continue;
                    }
                    if entry.reduced.matrix() == k_reduced.matrix()
                        || reduce::is_equivalent(&k_reduced, &entry.reduced, limits)?.is_some()
                    {
                        found = Some(ci);
                        break;
                    }
                }
                found
            };
            let Some(catalog_index) = matched else {
                continue;
            };
            let rank1 = GramForm::new(1, vec![2 * d as i64])?;
            let split_form = k_form.direct_sum(&rank1);
            if padic::locally_universal(&split_form, target)?.is_some() {
                continue;
            }
            out.push(SplitCandidate {
                basis,
                d: d as u64,
                u,
                catalog_index,
                k_gram,
            });
        }
    }
    Ok(out)
}

/// One step in the residue-class queue run, kept as evidence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QueueEvent {
    /// The class `class mod modulus` was settled at member `threshold`
    /// = T-value + d·witness_w², whose T-part `witness_value` lies in a
    /// fully represented progression mod a divisor of `modulus`; every
    /// smaller member was tested directly and `missed` lists the failures.
    ClassClosed {
        class: u64,
        modulus: u64,
        threshold: u64,
        witness_w: u64,
        witness_value: u64,
        missed: Vec<u64>,
    },
    /// Member `at` of `class mod modulus` was represented with T-part
    /// `witness_value` whose progression modulus `witness_modulus` does not
    /// divide `modulus`: members ≡ `at` mod `witness_modulus` are covered
    /// from here up, smaller covered members were tested (`missed`), and the
    /// remaining subclasses were enqueued modulo `new_modulus`.
    ClassRefined {
        class: u64,
        modulus: u64,
        at: u64,
        witness_w: u64,
        witness_value: u64,
        witness_modulus: u64,
        new_modulus: u64,
        enqueued: Vec<u64>,
        missed: Vec<u64>,
    },
    /// Square-scaling closure: `value = prime²·base` for an earlier
    /// exception `base` was itself found unrepresented and joined the list.
    ScaledException { base: u64, prime: u64, value: u64 },
    /// A resource cap was hit; the run is reported non-certified.
    Aborted { class: u64, modulus: u64, reason: String },
}

/// Evidence trail of a residue-class queue run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method2Evidence {
    /// Base modulus M of the split ternary.
    pub split_modulus: u64,
    /// Classes mod M seeding the queue (wholly unrepresented ones).
    pub initial_queue: Vec<u64>,
    pub events: Vec<QueueEvent>,
    /// Complete exception list of T + d·w² (certified runs only).
    pub split_exceptions: Vec<u64>,
}

/// Resource caps for a [`method2`] run. Exceeding any of them aborts with a
/// non-certified report rather than an error.
#[derive(Clone, Copy, Debug)]
pub struct QueueConfig {
    /// Members scanned per class while hunting a usable witness.
    pub max_members: u64,
    /// Largest refined class modulus (caps refinement depth).
    pub max_modulus: u64,
    /// Largest value ever tested (caps the square-scaling closure).
    pub max_value: u64,
    /// Total classes processed across refinements.
    pub max_classes: u32,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            max_members: 20_000,
            max_modulus: 1_000_000_000_000,
            max_value: 1_000_000_000_000,
            max_classes: 10_000,
        }
    }
}

/// Does `T + d·w²` represent `m ≥ 1`? Exact, via the regularity tables.
fn split_represents(entry: &RegularTernary, d: u64, m: u64) -> bool {
    let mut w = 0u64;
    loop {
        let dw2 = match w.checked_mul(w).and_then(|s| s.checked_mul(d)) {
            Some(v) => v,
            None => return false,
        };
        if dw2 > m {
            return false;
        }
        let b = m - dw2;
        if b == 0 || entry.represents(b as i128) {
            return true;
        }
        w += 1;
    }
}

/// Ascending members of the class `a mod m` (positive integers only).
fn class_members(a: u64, m: u64) -> impl Iterator<Item = u64> {
    let start = if a == 0 { m } else { a };
    (0..).map(move |k| start + k * m)
}

/// Regular-split certification: decides exactly which integers
/// `T + d·w²` misses by working a queue of residue classes, then tests the
/// finitely many leftovers (and their square-scalings at the failure primes)
/// against the ambient form. The report lists the target members the ambient
/// form itself fails to represent; `certified = true` means the list is
/// provably complete for the target set.
pub fn method2(
    form: &GramForm,
    cand: &SplitCandidate,
    catalog: &[RegularTernary],
    target: &TargetSet,
    limits: &EnumLimits,
    config: &QueueConfig,
) -> Result<(ExceptionReport, Method2Evidence)> {
    let entry = catalog.get(cand.catalog_index).ok_or_else(|| {
        Error::Verification(format!("no catalog entry #{}", cand.catalog_index))
    })?;
    let d = cand.d;
    let m0 = entry.modulus();
    let mut certified = true;
    let mut events: Vec<QueueEvent> = Vec::new();
    let mut exceptions: BTreeSet<u64> = BTreeSet::new();

    let initial_queue: Vec<u64> = (0..m0)
        .filter(|&a| entry.class_flag(a) == ClassFlag::NoneRepresented)
        .collect();
    let mut queue: VecDeque<(u64, u64)> =
        initial_queue.iter().map(|&a| (a, m0)).collect();

    let mut processed = 0u32;
    'classes: while let Some((a, m)) = queue.pop_front() {
        processed += 1;
        if processed > config.max_classes {
            events.push(QueueEvent::Aborted {
                class: a,
                modulus: m,
                reason: "class budget exhausted".to_string(),
            });
            certified = false;
            break;
        }
        let mut scanned = 0u64;
        for n in class_members(a, m) {
            scanned += 1;
            if scanned > config.max_members || n > config.max_value {
                events.push(QueueEvent::Aborted {
                    class: a,
                    modulus: m,
                    reason: "member scan budget exhausted".to_string(),
                });
                certified = false;
                continue 'classes;
            }
            // Hunt a witness: n = b + d·w² with b > 0 represented by T.
            let mut closing: Option<(u64, u64)> = None;
            let mut refining: Option<(u64, u64, u64)> = None;
            let mut w = 0u64;
            while let Some(dw2) = w
                .checked_mul(w)
                .and_then(|s| s.checked_mul(d))
                .filter(|&v| v <= n)
            {
                let b = n - dw2;
                if b > 0 && entry.represents(b as i128) {
                    match entry.second_modulus(b as i128) {
                        Some(m2) if m % m2 == 0 => {
                            closing = Some((w, b));
                            break;
                        }
                        Some(m2) if refining.is_none() => refining = Some((w, b, m2)),
                        _ => {}
                    }
                }
                w += 1;
            }
            if let Some((w, b)) = closing {
                // Everything ≥ n in the class shares b's represented
                // progression; the smaller members are checked one by one.
                let missed: Vec<u64> = class_members(a, m)
                    .take_while(|&x| x < n)
                    .filter(|&x| !split_represents(entry, d, x))
                    .collect();
                exceptions.extend(&missed);
                events.push(QueueEvent::ClassClosed {
                    class: a,
                    modulus: m,
                    threshold: n,
                    witness_w: w,
                    witness_value: b,
                    missed,
                });
                continue 'classes;
            }
            if let Some((w, b, m2)) = refining {
                let new_m = match checked_lcm(m, m2, config.max_modulus) {
                    Some(v) => v,
                    None => {
                        events.push(QueueEvent::Aborted {
                            class: a,
                            modulus: m,
                            reason: "refined modulus exceeds cap".to_string(),
                        });
                        certified = false;
                        continue 'classes;
                    }
                };
                // Members ≡ n mod m2 are covered from n up; smaller ones get
                // tested now. The other subclasses go back on the queue.
                let missed: Vec<u64> = class_members(a, m)
                    .take_while(|&x| x < n)
                    .filter(|&x| x % m2 == n % m2)
                    .filter(|&x| !split_represents(entry, d, x))
                    .collect();
                exceptions.extend(&missed);
                let enqueued: Vec<u64> = (0..new_m / m)
                    .map(|k| a + k * m)
                    .filter(|&c| c % m2 != n % m2)
                    .collect();
                for &c in &enqueued {
                    queue.push_back((c, new_m));
                }
                events.push(QueueEvent::ClassRefined {
                    class: a,
                    modulus: m,
                    at: n,
                    witness_w: w,
                    witness_value: b,
                    witness_modulus: m2,
                    new_modulus: new_m,
                    enqueued,
                    missed,
                });
                continue 'classes;
            }
            // No usable witness yet (n may be missed, or represented only
            // with b = 0): keep scanning members.
        }
        unreachable!("class member iterator is infinite");
    }

    // Square-scaling closure: p²·(exception) can only be represented via
    // smaller exceptions, so the complete list is closed under testing
    // prime-square multiples at the failure primes.
    if certified {
        let primes = entry.failure_primes();
        let mut worklist: Vec<u64> = exceptions.iter().copied().collect();
        while let Some(e) = worklist.pop() {
            for &p in &primes {
                let scaled = match e.checked_mul(p * p) {
                    Some(v) if v <= config.max_value => v,
                    _ => {
                        events.push(QueueEvent::Aborted {
                            class: e,
                            modulus: p,
                            reason: "square-scaling closure exceeded value cap".to_string(),
                        });
                        certified = false;
                        continue;
                    }
                };
                if !exceptions.contains(&scaled) && !split_represents(entry, d, scaled) {
                    exceptions.insert(scaled);
                    worklist.push(scaled);
                    events.push(QueueEvent::ScaledException {
                        base: e,
                        prime: p,
                        value: scaled,
                    });
                }
            }
        }
    }

    let split_exceptions: Vec<u64> = exceptions.iter().copied().collect();
    // The ambient form contains more vectors than the split sublattice, so
    // each leftover gets an exact representation test against the form.
    let mut final_exceptions = Vec::new();
    for &e in &split_exceptions {
        if target.contains(e) && enumerate::represents(form, e as i128, limits)?.is_none() {
            final_exceptions.push(e);
        }
    }
    let report = ExceptionReport {
        label: form.digest_label(),
        method: CertMethod::RegularSplit,
        exceptions: final_exceptions,
        certified,
        bound: None,
    };
    let evidence = Method2Evidence {
        split_modulus: m0,
        initial_queue,
        events,
        split_exceptions,
    };
    Ok((report, evidence))
}

fn checked_lcm(a: u64, b: u64, cap: u64) -> Option<u64> {
    let g = arith::gcd(a as i128, b as i128) as u64;
    (a / g).checked_mul(b).filter(|&v| v <= cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::TargetSet;

    fn limits() -> EnumLimits {
        EnumLimits::with_max_points(50_000_000)
    }

    /// The worked quaternary example: x² + y² + 2z² + 23w² − xw + yz
    /// rendered as a Gram matrix (determinant 637), which splits of index
    /// two as (x²+y²+yz+2z²) ⊥ 91w².
    fn form238() -> GramForm {
        GramForm::new(
            4,
            vec![2, 0, 0, -1, 0, 2, 1, 0, 0, 1, 4, 0, -1, 0, 0, 46],
        )
        .unwrap()
    }

    /// x² − xz + y² − yz + 2z² + 7w²: certified by containment of the third
    /// built-in ternary.
    fn form8703() -> GramForm {
        GramForm::new(
            4,
            vec![2, 0, -1, 0, 0, 2, -1, 0, -1, -1, 4, 0, 0, 0, 0, 14],
        )
        .unwrap()
    }

    #[test]
    fn builtin_list_is_canonical() {
        let list = builtin_universal_ternaries();
        assert_eq!(list.len(), 11);
        assert_eq!(list[0].matrix(), &[2, -1, 0, -1, 2, 0, 0, 0, 2]);
        assert!(list
            .iter()
            .any(|g| g.matrix() == [2, 0, 0, 0, 2, 0, 0, 0, 6]));
        // All are distinct classes.
        let lim = limits();
        for i in 0..list.len() {
            for j in (i + 1)..list.len() {
                assert!(
                    reduce::is_equivalent(&list[i], &list[j], &lim)
                        .unwrap()
                        .is_none(),
                    "built-ins {i} and {j} are equivalent"
                );
            }
        }
    }

    #[test]
    fn builtins_represent_small_coprime3_range() {
        let lim = limits();
        for g in builtin_universal_ternaries() {
            let bits = enumerate::representation_bitset(&g, 300, &lim).unwrap();
            for n in 1..=300u64 {
                if n % 3 != 0 {
                    assert!(bits.get(n as usize), "{} misses {n}", g.polynomial());
                }
            }
        }
    }

    #[test]
    fn catalog_entry_encodes_seven_adic_misses() {
        let r14 = GramForm::new(3, vec![2, 0, 0, 0, 2, 1, 0, 1, 4]).unwrap();
        let entry = RegularTernary::new("R14", r14).unwrap();
        assert_eq!(entry.modulus(), 49);
        assert_eq!(entry.failure_primes(), vec![7]);
        // Missed exactly at 7^odd · (non-residue mod 7).
        for b in 1..=2500i128 {
            let v = arith::valuation(b, 7);
            let unit = b / 7i128.pow(v);
            let missed = v % 2 == 1 && arith::kronecker(unit, 7) == -1;
            assert_eq!(entry.represents(b), !missed, "value {b}");
        }
        let none: Vec<u64> = (0..49)
            .filter(|&a| entry.class_flag(a) == ClassFlag::NoneRepresented)
            .collect();
        assert_eq!(none, vec![21, 35, 42]);
        let mixed: Vec<u64> = (0..49)
            .filter(|&a| entry.class_flag(a) == ClassFlag::Mixed)
            .collect();
        assert_eq!(mixed, vec![0]);
        assert_eq!(entry.second_modulus(28), Some(49));
        assert_eq!(entry.second_modulus(49), Some(343));
    }

    #[test]
    fn catalog_tables_agree_with_enumeration() {
        let lim = limits();
        for entry in default_catalog().unwrap() {
            consistency_check(&entry, 10_000, &lim).unwrap();
        }
    }

    #[test]
    fn split_search_finds_the_regular_split() {
        let lim = limits();
        let catalog = default_catalog().unwrap();
        let form = form238();
        assert_eq!(form.det(), 637);
        let cands = split_search(&form, &catalog, &TargetSet::CoprimeTo3, &lim).unwrap();
        let c91 = cands
            .iter()
            .find(|c| c.d == 91)
            .expect("an index-two split with d = 91 exists");
        assert_eq!(catalog[c91.catalog_index].label(), "R14");
        for c in &cands {
            verify_split(&form, c, &catalog, &lim).unwrap();
        }
    }

    #[test]
    fn split_search_with_empty_catalog_degrades() {
        let lim = limits();
        let cands = split_search(&form238(), &[], &TargetSet::CoprimeTo3, &lim).unwrap();
        assert!(cands.is_empty());
    }

    #[test]
    fn queue_walkthrough_for_the_index_two_split() {
        let lim = limits();
        let catalog = default_catalog().unwrap();
        let form = form238();
        let cands = split_search(&form, &catalog, &TargetSet::CoprimeTo3, &lim).unwrap();
        let cand = cands.iter().find(|c| c.d == 91).unwrap();
        let (report, evidence) = method2(
            &form,
            cand,
            &catalog,
            &TargetSet::CoprimeTo3,
            &lim,
            &QueueConfig::default(),
        )
        .unwrap();

        assert_eq!(evidence.split_modulus, 49);
        assert_eq!(evidence.initial_queue, vec![21, 35, 42]);
        assert_eq!(
            evidence.split_exceptions,
            vec![21, 35, 42, 70, 84, 133, 182, 231, 280, 329]
        );
        // Two classes close on their first usable witness.
        assert!(evidence.events.iter().any(|e| matches!(
            e,
            QueueEvent::ClassClosed { class: 21, modulus: 49, threshold: 119, witness_value: 28, .. }
        )));
        assert!(evidence.events.iter().any(|e| matches!(
            e,
            QueueEvent::ClassClosed { class: 35, modulus: 49, threshold: 378, witness_value: 14, .. }
        )));
        // The third refines: witness 140 = 91 + 49 has 7-adic valuation 2,
        // lifting the modulus to 343 and enqueueing the six other subclasses.
        let refined = evidence
            .events
            .iter()
            .find_map(|e| match e {
                QueueEvent::ClassRefined {
                    class: 42,
                    modulus: 49,
                    at,
                    new_modulus,
                    enqueued,
                    ..
                } => Some((*at, *new_modulus, enqueued.clone())),
                _ => None,
            })
            .expect("class 42 mod 49 must refine");
        assert_eq!(refined.0, 140);
        assert_eq!(refined.1, 343);
        assert_eq!(refined.2, vec![42, 91, 189, 238, 287, 336]);

        assert!(report.certified);
        assert_eq!(report.method, CertMethod::RegularSplit);
        assert_eq!(report.exceptions, vec![70]);
    }

    #[test]
    fn certified_exceptions_are_sound() {
        let lim = limits();
        let catalog = default_catalog().unwrap();
        let form = form238();
        let target = TargetSet::CoprimeTo3;
        let cands = split_search(&form, &catalog, &target, &lim).unwrap();
        let cand = cands.iter().find(|c| c.d == 91).unwrap();
        let (report, evidence) =
            method2(&form, cand, &catalog, &target, &lim, &QueueConfig::default()).unwrap();
        // Claimed exceptions really fail; everything else small really works.
        let cap = 1_000u64;
        let bits = enumerate::representation_bitset(&form, cap, &lim).unwrap();
        for n in 1..=cap {
            if !target.contains(n) {
                continue;
            }
            let expected = !report.exceptions.contains(&n);
            assert_eq!(bits.get(n as usize), expected, "member {n}");
        }
        // The split exceptions match the split form by direct audit too.
        let entry = &catalog[cand.catalog_index];
        for m in 1..=cap {
            let direct = split_represents(entry, cand.d, m);
            assert_eq!(
                direct,
                !evidence.split_exceptions.contains(&m),
                "split value {m}"
            );
        }
    }

    #[test]
    fn containment_certifies_via_third_builtin() {
        let lim = limits();
        let form = form8703();
        let (report, cert) = method1(&form, &TargetSet::CoprimeTo3, &lim)
            .unwrap()
            .expect("the third built-in embeds");
        assert_eq!(cert.builtin_index, 2);
        cert.verify(&form).unwrap();
        assert!(report.certified);
        assert!(report.exceptions.is_empty());
        assert_eq!(report.method, CertMethod::TernaryContainment);
    }

    #[test]
    fn containment_requires_coprime3_target() {
        let lim = limits();
        assert!(method1(&form8703(), &TargetSet::All, &lim)
            .unwrap()
            .is_none());
        assert!(method1(&form8703(), &TargetSet::Odd, &lim)
            .unwrap()
            .is_none());
        // A custom target inside the coprime-to-3 integers still certifies.
        let sub = TargetSet::custom(6, [1, 5]).unwrap();
        assert!(method1(&form8703(), &sub, &lim).unwrap().is_some());
    }

    #[test]
    fn direct_split_oracle_for_the_containment_example() {
        // Independent oracle: u = e4 has norm 7 and its orthogonal
        // complement is spanned by e1, e2, e3 outright, so a d = 7 split
        // must be found (its ternary is the seventh built-in's class,
        // determinant 12).
        let lim = limits();
        let catalog = default_catalog().unwrap();
        let form = form8703();
        let cands = split_search(&form, &catalog, &TargetSet::CoprimeTo3, &lim).unwrap();
        let c7 = cands.iter().find(|c| c.d == 7).expect("d = 7 split");
        let entry = &catalog[c7.catalog_index];
        assert_eq!(entry.gram().det(), 12);
        let (report, _) = method2(
            &form,
            c7,
            &catalog,
            &TargetSet::CoprimeTo3,
            &lim,
            &QueueConfig::default(),
        )
        .unwrap();
        assert!(report.certified);
        assert!(report.exceptions.is_empty());
    }

    #[test]
    fn catalog_round_trips_through_csv() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("qforms-catalog-test-{}.csv", std::process::id()));
        let text = "label,a11,a22,a33,a12,a13,a23\n\
                    # comment line\n\
                    R14,2,2,4,0,0,1\n\
                    \n\
                    U08,2,2,6,0,0,0\n";
        fs::write(&path, text).unwrap();
        let catalog = load_catalog(&path).unwrap();
        assert_eq!(catalog.len(), 2);
        assert_eq!(catalog[0].label(), "R14");
        assert_eq!(catalog[0].modulus(), 49);
        assert_eq!(catalog[1].gram().matrix(), &[2, 0, 0, 0, 2, 0, 0, 0, 6]);

        fs::write(&path, "bad,1,2,3\n").unwrap();
        assert!(matches!(load_catalog(&path), Err(Error::Catalog(_))));
        fs::write(&path, "neg,-2,2,4,0,0,1\n").unwrap();
        assert!(matches!(load_catalog(&path), Err(Error::Catalog(_))));
        let _ = fs::remove_file(&path);
    }

    #[test]
    fn empty_catalog_file_loads_empty() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("qforms-catalog-empty-{}.csv", std::process::id()));
        fs::write(&path, "").unwrap();
        assert!(load_catalog(&path).unwrap().is_empty());
        let _ = fs::remove_file(&path);
    }

    #[test]
    fn deep_valuations_fold_onto_the_stable_tail() {
        // Queries beyond the probed exponent range fold back onto the stable
        // 2-periodic tail; compare against the exact local machinery, which
        // shares one memoized LocalForm across all calls.
        let r14 = GramForm::new(3, vec![2, 0, 0, 0, 2, 1, 0, 1, 4]).unwrap();
        let entry = RegularTernary::new("R14", r14.clone()).unwrap();
        let mut lf = LocalForm::new(&r14).unwrap();
        for a in 0..=8u32 {
            for u in [1i128, 3, 5, 9, 11, 13] {
                let n = 7i128.pow(a) * u;
                assert_eq!(
                    entry.represents(n),
                    lf.represents(n).unwrap(),
                    "n = 7^{a}·{u}"
                );
            }
        }
        for a in 0..=9u32 {
            for u in [1i128, 3, 5, 7] {
                let n = 2i128.pow(a) * u;
                assert_eq!(
                    entry.represents(n),
                    lf.represents(n).unwrap(),
                    "n = 2^{a}·{u}"
                );
            }
        }
    }

    #[test]
    fn kernel_basis_is_saturated_and_orthogonal() {
        let g = vec![0i128, 0, 0, 91];
        let basis = kernel_of_vector(&g);
        assert_eq!(basis.len(), 3);
        for v in &basis {
            assert_eq!(v.iter().zip(&g).map(|(&a, &b)| a * b).sum::<i128>(), 0);
        }
        let g2 = vec![6i128, 10, 15];
        for v in kernel_of_vector(&g2) {
            assert_eq!(v.iter().zip(&g2).map(|(&a, &b)| a * b).sum::<i128>(), 0);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Values whose 2-adic decision stays within the counting cap.
        fn probe_ok(det: i128, b: i128) -> bool {
            arith::valuation(4 * b * det, 2) + 3 <= 15
        }

        fn small_ternary() -> impl Strategy<Value = GramForm> {
            (
                (1i64..=4, 1i64..=4, 1i64..=4),
                (-2i64..=2, -2i64..=2, -2i64..=2),
            )
                .prop_filter_map("positive definite", |((a, b, c), (p, q, r))| {
                    GramForm::new(3, vec![2 * a, p, q, p, 2 * b, r, q, r, 2 * c]).ok()
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            /// The derived congruence tables must agree with the generic
            /// local machinery on every small value, for arbitrary ternaries
            /// (not just catalog members — the tables encode local data
            /// whether or not the form is regular).
            #[test]
            fn tables_match_local_representability(g in small_ternary()) {
                if let Ok(entry) = RegularTernary::new("t", g.clone()) {
                    for b in 1..=240i128 {
                        if !probe_ok(g.det(), b) {
                            continue;
                        }
                        prop_assert_eq!(
                            entry.represents(b),
                            padic::locally_represents(&g, b).unwrap(),
                            "value {}", b
                        );
                    }
                }
            }

            /// Determined residue classes really are all-or-nothing: every
            /// small member of the class shares the flag's verdict locally.
            #[test]
            fn class_flags_are_exhaustive(g in small_ternary()) {
                if let Ok(entry) = RegularTernary::new("t", g.clone()) {
                    let m = entry.modulus();
                    for a in 0..m.min(60) {
                        let flag = entry.class_flag(a);
                        if flag == ClassFlag::Mixed { continue; }
                        let want = flag == ClassFlag::AllRepresented;
                        let mut n = if a == 0 { m } else { a };
                        while n <= 400 {
                            if probe_ok(g.det(), n as i128) {
                                prop_assert_eq!(
                                    padic::locally_represents(&g, n as i128).unwrap(),
                                    want,
                                    "class {} mod {}, member {}", a, m, n
                                );
                            }
                            n += m;
                        }
                    }
                }
            }
        }
    }
}
