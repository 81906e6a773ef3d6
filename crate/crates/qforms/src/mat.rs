//! Exact integer linear algebra on small row-major matrices.
//!
//! Matrices are flat `&[i128]` slices of length `n·n`. Ranks in this crate
//! stay tiny (≤ 6), so fraction-free elimination in `i128` is exact and cheap.

/// Determinant by the Bareiss fraction-free algorithm.
pub fn det(a: &[i128], n: usize) -> i128 {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return 1;
    }
    let mut m = a.to_vec();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k * n + k] == 0 {
            let Some(pivot) = (k + 1..n).find(|&r| m[r * n + k] != 0) else {
                return 0;
            };
            for c in 0..n {
                m.swap(k * n + c, pivot * n + c);
            }
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i * n + j] = (m[i * n + j] * m[k * n + k] - m[i * n + k] * m[k * n + j]) / prev;
            }
        }
        prev = m[k * n + k];
    }
    sign * m[n * n - 1]
}

/// Adjugate (transposed cofactor matrix), satisfying `a · adj(a) = det(a) · I`.
pub fn adjugate(a: &[i128], n: usize) -> Vec<i128> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![1];
    }
    let mut adj = vec![0i128; n * n];
    let mut minor = vec![0i128; (n - 1) * (n - 1)];
    for i in 0..n {
        for j in 0..n {
            let mut idx = 0;
            for r in 0..n {
                if r == i {
                    continue;
                }
                for c in 0..n {
                    if c == j {
                        continue;
                    }
                    minor[idx] = a[r * n + c];
                    idx += 1;
                }
            }
            let cof = det(&minor, n - 1);
            adj[j * n + i] = if (i + j) % 2 == 0 { cof } else { -cof };
        }
    }
    adj
}

/// Product of two `n×n` matrices.
pub fn mul(a: &[i128], b: &[i128], n: usize) -> Vec<i128> {
    let mut out = vec![0i128; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Congruence transform `uᵀ · a · u` for an `n×n` change of basis `u`.
pub fn congruence(a: &[i128], u: &[i128], n: usize) -> Vec<i128> {
    let mut ut = vec![0i128; n * n];
    for i in 0..n {
        for j in 0..n {
            ut[i * n + j] = u[j * n + i];
        }
    }
    mul(&ut, &mul(a, u, n), n)
}

/// True iff the integer row span of `rows` is all of ℤⁿ (index-1 sublattice),
/// decided by Euclidean triangularization of the row lattice.
pub fn rows_span_unimodular(rows: &[&[i64]], n: usize) -> bool {
    let mut m: Vec<Vec<i128>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as i128).collect())
        .collect();
    let mut pivot_row = 0usize;
    let mut det: i128 = 1;
    for col in 0..n {
        loop {
            let Some(best) = (pivot_row..m.len())
                .filter(|&r| m[r][col] != 0)
                .min_by_key(|&r| m[r][col].unsigned_abs())
            else {
                return false; // rank deficient
            };
            m.swap(pivot_row, best);
            let mut finished = true;
            let pivot = m[pivot_row][col];
            for r in pivot_row + 1..m.len() {
                let q = m[r][col].div_euclid(pivot);
                if q != 0 {
                    for c in col..n {
                        let sub = q * m[pivot_row][c];
                        m[r][c] -= sub;
                    }
                }
                if m[r][col] != 0 {
                    finished = false;
                }
            }
            if finished {
                break;
            }
        }
        det *= m[pivot_row][col];
        pivot_row += 1;
    }
    det.abs() == 1
}

/// True iff all leading principal minors are positive (Sylvester's criterion).
pub fn is_positive_definite(a: &[i128], n: usize) -> bool {
    for k in 1..=n {
        let mut sub = vec![0i128; k * k];
        for i in 0..k {
            for j in 0..k {
                sub[i * k + j] = a[i * n + j];
            }
        }
        if det(&sub, k) <= 0 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_small_cases() {
        assert_eq!(det(&[5], 1), 5);
        assert_eq!(det(&[2, 1, 1, 2], 2), 3);
        assert_eq!(det(&[2, 0, 0, 2], 2), 4);
        // Singular matrix.
        assert_eq!(det(&[1, 2, 2, 4], 2), 0);
        // Needs a row swap to find a pivot.
        assert_eq!(det(&[0, 1, 1, 0], 2), -1);
    }

    #[test]
    fn det_matches_cofactor_expansion_random() {
        // Pseudo-random 4×4 integer matrices, checked against naive expansion.
        fn naive(a: &[i128], n: usize) -> i128 {
            if n == 1 {
                return a[0];
            }
            let mut total = 0;
            for j in 0..n {
                let mut minor = Vec::with_capacity((n - 1) * (n - 1));
                for r in 1..n {
                    for c in 0..n {
                        if c != j {
                            minor.push(a[r * n + c]);
                        }
                    }
                }
                let term = a[j] * naive(&minor, n - 1);
                total += if j % 2 == 0 { term } else { -term };
            }
            total
        }
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 19) as i128 - 9
        };
        for _ in 0..50 {
            let a: Vec<i128> = (0..16).map(|_| next()).collect();
            assert_eq!(det(&a, 4), naive(&a, 4));
        }
    }

    #[test]
    fn adjugate_identity() {
        let a = vec![2, 0, 0, -1, 0, 2, 0, -1, 0, 0, 14, 7, -1, -1, 7, 24];
        let n = 4;
        let d = det(&a, n);
        assert_eq!(d, 1092);
        let adj = adjugate(&a, n);
        let prod = mul(&a, &adj, n);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(prod[i * n + j], if i == j { d } else { 0 });
            }
        }
    }

    #[test]
    fn row_span_detection() {
        assert!(rows_span_unimodular(&[&[1, 0], &[0, 1]], 2));
        assert!(rows_span_unimodular(&[&[2, 1], &[1, 1]], 2));
        assert!(rows_span_unimodular(&[&[3, 1], &[5, 2], &[7, 0]], 2));
        // Index-2 sublattice.
        assert!(!rows_span_unimodular(&[&[2, 0], &[0, 1]], 2));
        assert!(!rows_span_unimodular(&[&[1, 1], &[1, -1]], 2));
        // Rank deficient.
        assert!(!rows_span_unimodular(&[&[1, 2], &[2, 4]], 2));
        assert!(!rows_span_unimodular(&[&[1, 0]], 2));
    }

    #[test]
    fn positive_definite_checks() {
        assert!(is_positive_definite(&[2, 1, 1, 2], 2));
        assert!(!is_positive_definite(&[2, 3, 3, 2], 2));
        assert!(!is_positive_definite(&[0, 0, 0, 2], 2));
        assert!(is_positive_definite(
            &[2, 0, 0, -1, 0, 2, 0, -1, 0, 0, 14, 7, -1, -1, 7, 24],
            4
        ));
    }
}
