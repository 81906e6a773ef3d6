//! Elementary number-theoretic helpers shared across the crate.

use num_integer::{Integer, Roots};

/// Kronecker symbol `(a / n)`, extending the Jacobi symbol to all integers.
pub fn kronecker(mut a: i128, mut n: i128) -> i32 {
    if n == 0 {
        return if a == 1 || a == -1 { 1 } else { 0 };
    }
    if a.is_even() && n.is_even() {
        return 0;
    }
    let mut result = 1i32;
    if n < 0 {
        n = -n;
        if a < 0 {
            result = -result;
        }
    }
    // Split off the even part of n; (a/2) depends on a mod 8.
    while n.is_even() {
        n /= 2;
        match a.rem_euclid(8) {
            1 | 7 => {}
            3 | 5 => result = -result,
            _ => return 0, // a even
        }
    }
    // Jacobi symbol for odd n > 0 via quadratic reciprocity.
    a = a.rem_euclid(n);
    while a != 0 {
        while a.is_even() {
            a /= 2;
            if n % 8 == 3 || n % 8 == 5 {
                result = -result;
            }
        }
        std::mem::swap(&mut a, &mut n);
        if a % 4 == 3 && n % 4 == 3 {
            result = -result;
        }
        a %= n;
    }
    if n == 1 {
        result
    } else {
        0
    }
}

/// Exact integer square root test: `Some(r)` with `r ≥ 0` and `r² = n`.
pub fn exact_sqrt(n: i128) -> Option<i128> {
    if n < 0 {
        return None;
    }
    let r = n.sqrt();
    (r * r == n).then_some(r)
}

/// Prime factorization by trial division, smallest prime first.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut push = |p: u64, e: u32| {
        if e > 0 {
            out.push((p, e));
        }
    };
    for p in [2u64, 3, 5] {
        let mut e = 0;
        while n % p == 0 {
            n /= p;
            e += 1;
        }
        push(p, e);
    }
    let mut d = 7u64;
    let steps = [4u64, 2, 4, 2, 4, 6, 2, 6]; // wheel mod 30 starting at 7
    let mut idx = 0;
    while d.saturating_mul(d) <= n {
        let mut e = 0;
        while n % d == 0 {
            n /= d;
            e += 1;
        }
        push(d, e);
        d += steps[idx];
        idx = (idx + 1) % steps.len();
    }
    if n > 1 {
        push(n, 1);
    }
    out
}

/// All primes `≤ limit`, by a sieve of Eratosthenes.
pub fn primes_up_to(limit: u64) -> Vec<u64> {
    if limit < 2 {
        return Vec::new();
    }
    let n = limit as usize;
    let mut composite = vec![false; n + 1];
    let mut primes = Vec::new();
    for p in 2..=n {
        if !composite[p] {
            primes.push(p as u64);
            let mut m = p * p;
            while m <= n {
                composite[m] = true;
                m += p;
            }
        }
    }
    primes
}

/// Number of divisors of `n`, from its factorization.
pub fn divisor_count(n: u64) -> u64 {
    factorize(n).iter().map(|&(_, e)| (e as u64) + 1).product()
}

/// Number of distinct prime divisors of `n`.
pub fn distinct_prime_count(n: u64) -> u32 {
    factorize(n).len() as u32
}

/// Write `n = core · f²` with `core` squarefree; returns `(core, f)`.
pub fn squarefree_decomposition(n: u64) -> (u64, u64) {
    let mut core = 1u64;
    let mut f = 1u64;
    for (p, e) in factorize(n) {
        if e % 2 == 1 {
            core *= p;
        }
        f *= p.pow(e / 2);
    }
    (core, f)
}

/// `gcd` on i128 convenience (non-negative result).
pub fn gcd(a: i128, b: i128) -> i128 {
    a.gcd(&b)
}

/// `lcm` on i128 convenience (non-negative result; lcm(0, x) = 0).
pub fn lcm(a: i128, b: i128) -> i128 {
    a.lcm(&b)
}

/// `p`-adic valuation of `n ≠ 0`.
pub fn valuation(mut n: i128, p: i128) -> u32 {
    assert!(n != 0, "valuation of zero is infinite");
    let mut v = 0;
    while n % p == 0 {
        n /= p;
        v += 1;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronecker_matches_legendre_for_odd_primes() {
        // (-4/p) = +1 iff p ≡ 1 (mod 4); (-4/·) is the nontrivial character mod 4.
        for p in [5i128, 13, 17, 29] {
            assert_eq!(kronecker(-4, p), 1, "p = {p}");
        }
        for p in [3i128, 7, 11, 19, 23] {
            assert_eq!(kronecker(-4, p), -1, "p = {p}");
        }
        // (2/p) = +1 iff p ≡ ±1 (mod 8).
        for p in [7i128, 17, 23, 31] {
            assert_eq!(kronecker(2, p), 1, "p = {p}");
        }
        for p in [3i128, 5, 11, 13] {
            assert_eq!(kronecker(2, p), -1, "p = {p}");
        }
    }

    #[test]
    fn kronecker_brute_force_against_squares() {
        // For odd prime p, (a/p) = 1 iff a is a nonzero square mod p.
        for p in [3i128, 5, 7, 11, 13, 17, 19, 23] {
            let squares: std::collections::HashSet<i128> =
                (1..p).map(|x| (x * x) % p).collect();
            for a in 0..p {
                let expected = if a == 0 {
                    0
                } else if squares.contains(&a) {
                    1
                } else {
                    -1
                };
                assert_eq!(kronecker(a, p), expected, "a = {a}, p = {p}");
            }
        }
    }

    #[test]
    fn kronecker_even_denominator() {
        // (a/2) as used in χ_D evaluations at 2.
        assert_eq!(kronecker(17, 2), 1);
        assert_eq!(kronecker(7, 2), 1);
        assert_eq!(kronecker(3, 2), -1);
        assert_eq!(kronecker(5, 2), -1);
        assert_eq!(kronecker(4, 2), 0);
        // χ_273(2): 273 ≡ 1 (mod 8) so the symbol is +1.
        assert_eq!(kronecker(273, 2), 1);
    }

    #[test]
    fn kronecker_multiplicative_in_numerator() {
        for n in [15i128, 21, 35, 9] {
            for a in -20i128..20 {
                for b in -20i128..20 {
                    assert_eq!(
                        kronecker(a * b, n),
                        kronecker(a, n) * kronecker(b, n),
                        "a = {a}, b = {b}, n = {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn factorization_roundtrip() {
        for n in [1u64, 2, 12, 91, 637, 1092, 4273, 999_983 * 2] {
            let f = factorize(n);
            let back: u64 = f.iter().map(|&(p, e)| p.pow(e)).product();
            assert_eq!(back, n);
            for w in f.windows(2) {
                assert!(w[0].0 < w[1].0);
            }
        }
        assert_eq!(factorize(637), vec![(7, 2), (13, 1)]);
        assert_eq!(factorize(1092), vec![(2, 2), (3, 1), (7, 1), (13, 1)]);
    }

    #[test]
    fn sieve_and_divisors() {
        let ps = primes_up_to(100);
        assert_eq!(ps.len(), 25);
        assert_eq!(ps.first(), Some(&2));
        assert_eq!(ps.last(), Some(&97));
        assert_eq!(divisor_count(12), 6);
        assert_eq!(divisor_count(1), 1);
        assert_eq!(squarefree_decomposition(12), (3, 2));
        assert_eq!(squarefree_decomposition(49), (1, 7));
        assert_eq!(squarefree_decomposition(273), (273, 1));
    }

    #[test]
    fn exact_sqrt_basics() {
        assert_eq!(exact_sqrt(0), Some(0));
        assert_eq!(exact_sqrt(1), Some(1));
        assert_eq!(exact_sqrt(144), Some(12));
        assert_eq!(exact_sqrt(2), None);
        assert_eq!(exact_sqrt(-4), None);
        let big = 1_000_000_007i128;
        assert_eq!(exact_sqrt(big * big), Some(big));
        assert_eq!(exact_sqrt(big * big + 1), None);
    }
}
