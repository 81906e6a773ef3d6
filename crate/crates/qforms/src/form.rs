//! Positive-definite integral quadratic forms and their basic invariants.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::{arith, mat};

/// A positive-definite quadratic form `Q(x) = ½·xᵀAx`, stored through its even
/// symmetric Gram matrix `A`: the diagonal entry `A[i][i]` is twice the
/// coefficient of `x_i²` and `A[i][j] = A[j][i]` is the coefficient of
/// `x_i·x_j` for `i ≠ j`. Forms whose cross coefficients are all even have an
/// integral matrix `A/2` (the classically integral case); odd cross
/// coefficients are allowed and give the integer-valued case.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GramForm {
    rank: usize,
    /// Row-major `rank × rank` symmetric matrix.
    a: Vec<i64>,
}

impl GramForm {
    /// Builds a form from a full row-major symmetric matrix, validating shape,
    /// symmetry, even diagonal, and positive definiteness.
    pub fn new(rank: usize, a: Vec<i64>) -> Result<Self> {
        if a.len() != rank * rank {
            return Err(Error::InvalidForm(format!(
                "expected {} entries for rank {rank}, got {}",
                rank * rank,
                a.len()
            )));
        }
        if rank == 0 {
            return Ok(Self { rank, a });
        }
        for i in 0..rank {
            if a[i * rank + i] % 2 != 0 {
                return Err(Error::InvalidForm(format!(
                    "diagonal entry A[{i}][{i}] = {} is odd",
                    a[i * rank + i]
                )));
            }
            for j in 0..i {
                if a[i * rank + j] != a[j * rank + i] {
                    return Err(Error::InvalidForm(format!(
                        "A[{i}][{j}] = {} differs from A[{j}][{i}] = {}",
                        a[i * rank + j],
                        a[j * rank + i]
                    )));
                }
            }
        }
        let wide: Vec<i128> = a.iter().map(|&v| v as i128).collect();
        if !mat::is_positive_definite(&wide, rank) {
            return Err(Error::InvalidForm(
                "matrix is not positive definite".to_string(),
            ));
        }
        Ok(Self { rank, a })
    }

    /// Builds a form from the row-major upper triangle (diagonal included):
    /// entries `(0,0), (0,1), …, (0,n−1), (1,1), …, (n−1,n−1)`.
    pub fn from_upper(rank: usize, upper: &[i64]) -> Result<Self> {
        if upper.len() != rank * (rank + 1) / 2 {
            return Err(Error::InvalidForm(format!(
                "expected {} upper-triangle entries for rank {rank}, got {}",
                rank * (rank + 1) / 2,
                upper.len()
            )));
        }
        let mut a = vec![0i64; rank * rank];
        let mut idx = 0;
        for i in 0..rank {
            for j in i..rank {
                a[i * rank + j] = upper[idx];
                a[j * rank + i] = upper[idx];
                idx += 1;
            }
        }
        Self::new(rank, a)
    }

    /// Internal constructor for callers that have already established validity
    /// (e.g. basis changes of a validated form).
    pub(crate) fn new_unchecked(rank: usize, a: Vec<i64>) -> Self {
        debug_assert!(GramForm::new(rank, a.clone()).is_ok());
        Self { rank, a }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn entry(&self, i: usize, j: usize) -> i64 {
        self.a[i * self.rank + j]
    }

    /// Full row-major matrix.
    pub fn matrix(&self) -> &[i64] {
        &self.a
    }

    /// Row-major upper triangle including the diagonal.
    pub fn upper_triangle(&self) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.rank * (self.rank + 1) / 2);
        for i in 0..self.rank {
            for j in i..self.rank {
                out.push(self.a[i * self.rank + j]);
            }
        }
        out
    }

    /// `Q(x)` evaluated exactly.
    pub fn evaluate(&self, x: &[i64]) -> i128 {
        assert_eq!(x.len(), self.rank);
        let mut total = 0i128;
        for i in 0..self.rank {
            let xi = x[i] as i128;
            if xi == 0 {
                continue;
            }
            total += (self.a[i * self.rank + i] as i128 / 2) * xi * xi;
            for j in i + 1..self.rank {
                total += self.a[i * self.rank + j] as i128 * xi * x[j] as i128;
            }
        }
        total
    }

    /// Determinant of the Gram matrix `A`.
    pub fn det(&self) -> i128 {
        let wide: Vec<i128> = self.a.iter().map(|&v| v as i128).collect();
        mat::det(&wide, self.rank)
    }

    /// Adjugate of the Gram matrix `A`.
    pub fn adjugate(&self) -> Vec<i128> {
        let wide: Vec<i128> = self.a.iter().map(|&v| v as i128).collect();
        mat::adjugate(&wide, self.rank)
    }

    /// Level `N`: the least positive integer such that `N·A⁻¹` is again an
    /// even integral matrix.
    pub fn level(&self) -> i128 {
        let d = self.det();
        let adj = self.adjugate();
        let n = self.rank;
        let mut level = 1i128;
        for i in 0..n {
            for j in i..n {
                let needed = if i == j {
                    2 * d / arith::gcd(2 * d, adj[i * n + i])
                } else {
                    d / arith::gcd(d, adj[i * n + j])
                };
                level = arith::lcm(level, needed);
            }
        }
        level
    }

    /// True when every cross coefficient is even, i.e. `A/2` is integral.
    pub fn is_classically_integral(&self) -> bool {
        (0..self.rank)
            .flat_map(|i| (i + 1..self.rank).map(move |j| (i, j)))
            .all(|(i, j)| self.a[i * self.rank + j] % 2 == 0)
    }

    /// Extends the form by a new variable `v` with `Q ← Q + t·v² + Σ cross_i·x_i·v`,
    /// i.e. bordering `A` with the given cross row and corner `2t`.
    pub fn extend(&self, t: i64, cross: &[i64]) -> Result<Self> {
        assert_eq!(cross.len(), self.rank);
        let n = self.rank + 1;
        let mut a = vec![0i64; n * n];
        for i in 0..self.rank {
            for j in 0..self.rank {
                a[i * n + j] = self.a[i * self.rank + j];
            }
            a[i * n + (n - 1)] = cross[i];
            a[(n - 1) * n + i] = cross[i];
        }
        a[n * n - 1] = 2 * t;
        Self::new(n, a)
    }

    /// Orthogonal direct sum `Q ⊕ R`.
    pub fn direct_sum(&self, other: &GramForm) -> GramForm {
        let n = self.rank + other.rank;
        let mut a = vec![0i64; n * n];
        for i in 0..self.rank {
            for j in 0..self.rank {
                a[i * n + j] = self.a[i * self.rank + j];
            }
        }
        for i in 0..other.rank {
            for j in 0..other.rank {
                a[(self.rank + i) * n + (self.rank + j)] = other.a[i * other.rank + j];
            }
        }
        GramForm::new_unchecked(n, a)
    }

    /// Gram matrix of the sublattice spanned by the given vectors (rows of `basis`,
    /// each of length `rank`): entries `B(v_i, v_j) = v_iᵀ A v_j`.
    pub fn gram_of(&self, basis: &[Vec<i64>]) -> Vec<i128> {
        let k = basis.len();
        let mut out = vec![0i128; k * k];
        for (bi, vi) in basis.iter().enumerate() {
            // w = A · v_i
            let mut w = vec![0i128; self.rank];
            for r in 0..self.rank {
                for c in 0..self.rank {
                    w[r] += self.a[r * self.rank + c] as i128 * vi[c] as i128;
                }
            }
            for (bj, vj) in basis.iter().enumerate() {
                let mut dot = 0i128;
                for r in 0..self.rank {
                    dot += w[r] * vj[r] as i128;
                }
                out[bi * k + bj] = dot;
            }
        }
        out
    }

    /// Short content digest of the exact matrix entries (12 hex characters of
    /// SHA-256 over a canonical byte encoding). Forms with equal matrices get
    /// equal digests; use a canonical class representative to label classes.
    pub fn digest_label(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("rank={};upper=", self.rank).as_bytes());
        for (k, v) in self.upper_triangle().iter().enumerate() {
            if k > 0 {
                hasher.update(b",");
            }
            hasher.update(v.to_string().as_bytes());
        }
        let digest = hasher.finalize();
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Polynomial rendering with variables x, y, z, w, v, u.
    pub fn polynomial(&self) -> String {
        const VARS: [&str; 6] = ["x", "y", "z", "w", "v", "u"];
        let var = |i: usize| -> String {
            if self.rank <= VARS.len() {
                VARS[i].to_string()
            } else {
                format!("x{}", i + 1)
            }
        };
        let mut out = String::new();
        let push_term = |coeff: i64, body: String, out: &mut String| {
            if coeff == 0 {
                return;
            }
            if out.is_empty() {
                if coeff < 0 {
                    out.push('-');
                }
            } else if coeff < 0 {
                out.push_str(" - ");
            } else {
                out.push_str(" + ");
            }
            let mag = coeff.unsigned_abs();
            if mag != 1 {
                out.push_str(&mag.to_string());
            }
            out.push_str(&body);
        };
        for i in 0..self.rank {
            push_term(
                self.a[i * self.rank + i] / 2,
                format!("{}^2", var(i)),
                &mut out,
            );
            for j in i + 1..self.rank {
                push_term(
                    self.a[i * self.rank + j],
                    format!("{}{}", var(i), var(j)),
                    &mut out,
                );
            }
        }
        if out.is_empty() {
            out.push('0');
        }
        out
    }
}

impl fmt::Debug for GramForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GramForm[{}]({})", self.rank, self.polynomial())
    }
}

impl fmt::Display for GramForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.polynomial())
    }
}

/// JSONL record for a form: the rank, the row-major upper triangle of the Gram
/// matrix (diagonal included), and an optional class label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormRecord {
    pub rank: usize,
    pub gram_upper: Vec<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl FormRecord {
    pub fn from_form(form: &GramForm, label: Option<String>) -> Self {
        FormRecord {
            rank: form.rank(),
            gram_upper: form.upper_triangle(),
            label,
        }
    }

    pub fn to_form(&self) -> Result<GramForm> {
        GramForm::from_upper(self.rank, &self.gram_upper)
    }
}

/// Reads forms from JSONL (one `FormRecord` per line; blank lines ignored).
pub fn read_forms<R: BufRead>(reader: R) -> Result<Vec<(GramForm, Option<String>)>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record: FormRecord = serde_json::from_str(trimmed).map_err(|e| {
            Error::InvalidForm(format!("line {}: {e}", lineno + 1))
        })?;
        out.push((record.to_form()?, record.label));
    }
    Ok(out)
}

pub fn read_forms_path(path: &Path) -> Result<Vec<(GramForm, Option<String>)>> {
    let file = std::fs::File::open(path)?;
    read_forms(std::io::BufReader::new(file))
}

/// Writes forms as JSONL `FormRecord`s.
pub fn write_forms<'a, W: Write, I>(writer: &mut W, forms: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a GramForm, Option<&'a str>)>,
{
    for (form, label) in forms {
        let record = FormRecord::from_form(form, label.map(str::to_string));
        serde_json::to_writer(&mut *writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn form(rank: usize, upper: &[i64]) -> GramForm {
        GramForm::from_upper(rank, upper).unwrap()
    }

    #[test]
    fn validation_rejects_bad_input() {
        // Odd diagonal.
        assert!(GramForm::new(1, vec![3]).is_err());
        // Asymmetric.
        assert!(GramForm::new(2, vec![2, 1, 0, 2]).is_err());
        // Indefinite.
        assert!(GramForm::from_upper(2, &[2, 3, 2]).is_err());
        // Positive semidefinite but singular.
        assert!(GramForm::from_upper(2, &[2, 2, 2]).is_err());
        // Wrong length.
        assert!(GramForm::from_upper(2, &[2, 0]).is_err());
    }

    #[test]
    fn evaluate_matches_polynomial() {
        // x² + xy + y².
        let q = form(2, &[2, 1, 2]);
        assert_eq!(q.evaluate(&[1, 0]), 1);
        assert_eq!(q.evaluate(&[1, 1]), 3);
        assert_eq!(q.evaluate(&[2, -1]), 3);
        assert_eq!(q.evaluate(&[-3, 5]), 9 - 15 + 25);

        // x² + y² + yz + 2z² − xw + 23w² (all cross terms exercised).
        let q = form(4, &[2, 0, 0, -1, 2, 1, 0, 4, 0, 46]);
        assert_eq!(q.evaluate(&[1, 0, 0, 0]), 1);
        assert_eq!(q.evaluate(&[0, 1, 1, 0]), 1 + 1 + 2);
        assert_eq!(q.evaluate(&[1, 0, 0, 1]), 1 - 1 + 23);
        assert_eq!(q.det(), 637);
    }

    #[test]
    fn levels_of_known_forms() {
        assert_eq!(form(2, &[2, 1, 2]).level(), 3); // x² + xy + y²
        assert_eq!(form(2, &[2, 0, 2]).level(), 4); // x² + y²
        assert_eq!(form(4, &[2, 0, 0, 0, 2, 0, 0, 2, 0, 2]).level(), 4); // sum of four squares
        // x² + y² + 7z² − xw − yw + 7zw + 12w²: determinant 1092, level 546.
        let q = form(4, &[2, 0, 0, -1, 2, 0, -1, 14, 7, 24]);
        assert_eq!(q.det(), 1092);
        assert_eq!(q.level(), 546);
        // x² + 2y² − xz + yz + 5z² − yw + 29w²: prime determinant 4273.
        let q = form(4, &[2, 0, -1, 0, 4, 1, -1, 10, 0, 58]);
        assert_eq!(q.det(), 4273);
        assert_eq!(q.level(), 4273);
    }

    #[test]
    fn classically_integral_detection() {
        assert!(form(2, &[2, 0, 2]).is_classically_integral());
        assert!(form(3, &[2, 0, 0, 2, 0, 14]).is_classically_integral());
        assert!(!form(2, &[2, 1, 2]).is_classically_integral());
    }

    #[test]
    fn extend_and_direct_sum() {
        let q = form(1, &[2]); // x²
        let ext = q.extend(2, &[0]).unwrap(); // x² + 2y²
        assert_eq!(ext.upper_triangle(), vec![2, 0, 4]);
        let bad = q.extend(1, &[3]); // x² + 3xy + y² is indefinite
        assert!(bad.is_err());

        let sum = form(2, &[2, 1, 2]).direct_sum(&form(1, &[6]));
        assert_eq!(sum.rank(), 3);
        assert_eq!(sum.evaluate(&[1, 1, 1]), 3 + 3);
    }

    #[test]
    fn gram_of_sublattice() {
        // x² + y², sublattice spanned by (1,1) and (1,−1): Gram [[4,0],[0,4]] (i.e. 2x²+2y²).
        let q = form(2, &[2, 0, 2]);
        let g = q.gram_of(&[vec![1, 1], vec![1, -1]]);
        assert_eq!(g, vec![4, 0, 0, 4]);
    }

    #[test]
    fn jsonl_roundtrip() {
        let q1 = form(2, &[2, 1, 2]);
        let q2 = form(4, &[2, 0, 0, -1, 2, 1, 0, 4, 0, 46]);
        let mut buf = Vec::new();
        write_forms(&mut buf, [(&q1, None), (&q2, Some("t238"))]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"gram_upper\":[2,1,2]"));
        let back = read_forms(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, q1);
        assert_eq!(back[0].1, None);
        assert_eq!(back[1].0, q2);
        assert_eq!(back[1].1.as_deref(), Some("t238"));
    }

    #[test]
    fn polynomial_rendering() {
        assert_eq!(form(2, &[2, 1, 2]).polynomial(), "x^2 + xy + y^2");
        assert_eq!(
            form(4, &[2, 0, 0, -1, 2, 1, 0, 4, 0, 46]).polynomial(),
            "x^2 - xw + y^2 + yz + 2z^2 + 23w^2"
        );
        assert_eq!(form(1, &[4]).polynomial(), "2x^2");
    }

    #[test]
    fn digest_is_stable_and_entry_sensitive() {
        let q = form(2, &[2, 1, 2]);
        let d = q.digest_label();
        assert_eq!(d.len(), 12);
        assert_eq!(d, q.clone().digest_label());
        assert_ne!(d, form(2, &[2, 0, 2]).digest_label());
    }
}
