//! Modified Bessel kernels `K₀`, `K₁` and the Petersson weight
//! `ψ(x) = −(6/π)·K₁(4πx) + 24x²·K₀(4πx)`.
//!
//! The weight is consumed by partial Petersson-norm sums whose terms span
//! many orders of magnitude, so everything here is evaluated in double-double
//! arithmetic (an unevaluated sum of two `f64`s, ≈106 significant bits) and
//! rounded once at the end. `K_ν` uses the ascending power series for small
//! argument and the divergent asymptotic expansion, truncated at its smallest
//! term, for large argument:
//!
//! * series, `z < 19`: the worst cancellation (between the `ln(z/2)·I_ν`
//!   piece and the ascending sum, about 17 decimal digits at `z = 19`) still
//!   leaves ≈15 good digits of `K_ν`, and the values there are ≥ 1e-9, far
//!   more absolute accuracy than needed;
//! * asymptotic, `z ≥ 19`: the smallest term of the expansion is ≈`e^{−2z}`
//!   relative, i.e. ≤ 3e-17 relative at the crossover and decreasing, while
//!   `K_ν(z) ≤ 2e-9` there, so the absolute error is ≤ 1e-25.
//!
//! Net effect: `ψ` is returned with absolute error far below 1e-14 over the
//! whole working range `x ∈ [1e-4, 50]` (at the low end, where `|ψ| ≈ 1520`,
//! the double-double pipeline keeps enough *relative* accuracy that the
//! result is the correctly rounded `f64`).

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Double-double primitives
// ---------------------------------------------------------------------------

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Dd {
    pub(crate) hi: f64,
    pub(crate) lo: f64,
}

/// Error-free sum: `a + b = s + e` exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Error-free sum assuming `|a| ≥ |b|`.
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let e = b - (s - a);
    (s, e)
}

/// Error-free product: `a·b = p + e` exactly (via fused multiply-add).
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

pub(crate) const PI_DD: Dd = Dd {
    hi: 3.141592653589793,
    lo: 1.2246467991473532e-16,
};
const GAMMA_DD: Dd = Dd {
    hi: 0.5772156649015329,
    lo: -4.942915152430645e-18,
};
const LN2_DD: Dd = Dd {
    hi: 0.6931471805599453,
    lo: 2.3190468138462996e-17,
};

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub(crate) fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    /// The exact product of two `f64`s as a double-double.
    #[inline]
    pub(crate) fn from_prod(a: f64, b: f64) -> Dd {
        let (hi, lo) = two_prod(a, b);
        Dd { hi, lo }
    }

    #[inline]
    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub(crate) fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    #[inline]
    pub(crate) fn add(self, o: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, o.hi);
        let (t1, t2) = two_sum(self.lo, o.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }

    #[inline]
    pub(crate) fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    #[inline]
    pub(crate) fn add_f64(self, v: f64) -> Dd {
        let (s1, s2) = two_sum(self.hi, v);
        let (hi, lo) = quick_two_sum(s1, s2 + self.lo);
        Dd { hi, lo }
    }

    #[inline]
    pub(crate) fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub(crate) fn mul_f64(self, v: f64) -> Dd {
        let (p, e) = two_prod(self.hi, v);
        let (hi, lo) = quick_two_sum(p, e + self.lo * v);
        Dd { hi, lo }
    }

    #[inline]
    pub(crate) fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul_f64(q2));
        let q3 = r.hi / o.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd { hi: s, lo: e }.add_f64(q3)
    }

    #[inline]
    pub(crate) fn div_f64(self, v: f64) -> Dd {
        self.div(Dd::from_f64(v))
    }

    /// Square root by one double-double Newton step from the `f64` seed.
    pub(crate) fn sqrt(self) -> Dd {
        if self.hi == 0.0 {
            return Dd::ZERO;
        }
        debug_assert!(self.hi > 0.0, "sqrt of a negative double-double");
        let y = Dd::from_f64(self.hi.sqrt());
        y.add(self.div(y)).mul_f64(0.5)
    }

    /// `e^self` by argument reduction against ln 2 and a Taylor tail.
    pub(crate) fn exp(self) -> Dd {
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / LN2_DD.hi).round();
        let r = self.sub(LN2_DD.mul_f64(k));
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for j in 1..60 {
            term = term.mul(r).div_f64(j as f64);
            sum = sum.add(term);
            if term.hi.abs() < 1e-35 * sum.hi.abs() {
                break;
            }
        }
        let scale = (k as f64).exp2();
        Dd {
            hi: sum.hi * scale,
            lo: sum.lo * scale,
        }
    }

    /// Natural log by one Newton correction of the `f64` seed.
    pub(crate) fn ln(self) -> Dd {
        debug_assert!(self.hi > 0.0, "ln of a nonpositive double-double");
        let y0 = self.hi.ln();
        // self·e^{−y0} = 1 + u with |u| ≈ 1e-16; ln(1+u) ≈ u − u²/2.
        let u = self.mul(Dd::from_f64(-y0).exp()).sub(Dd::ONE);
        Dd::from_f64(y0).add(u.sub(u.mul(u).mul_f64(0.5)))
    }
}

// ---------------------------------------------------------------------------
// K-Bessel kernels
// ---------------------------------------------------------------------------

/// Crossover between the ascending series and the asymptotic expansion.
const ASYMPTOTIC_CUT: f64 = 19.0;
/// Relative size at which series tails are abandoned.
const TERM_EPS: f64 = 1e-35;

/// `(K₀(z), K₁(z))` by the ascending power series:
/// `K₀ = Σ_{k≥1} H_k t_k − (ln(z/2)+γ)·I₀`,
/// `K₁ = 1/z + (ln(z/2)+γ)·I₁ − (z/4)·Σ_{k≥0} (H_k + H_{k+1}) u_k`,
/// with `t_k = (z²/4)^k/(k!)²`, `u_k = (z²/4)^k/(k!(k+1)!)`,
/// `I₀ = Σ t_k`, `I₁ = (z/2)·Σ u_k`, and `H_k` the harmonic numbers.
fn k_pair_series(z: Dd) -> (Dd, Dd) {
    let w = z.mul(z).mul_f64(0.25);
    let l = z.mul_f64(0.5).ln().add(GAMMA_DD);

    let mut t = Dd::ONE; // t_k
    let mut u = Dd::ONE; // u_k
    let mut h = Dd::ZERO; // H_k
    let mut i0 = Dd::ONE;
    let mut s0 = Dd::ZERO;
    let mut i1 = Dd::ONE;
    let mut s1 = Dd::ONE; // k = 0 term: H_0 + H_1 = 1
    for k in 1..400u32 {
        let kf = k as f64;
        t = t.mul(w).div_f64(kf * kf);
        u = u.mul(w).div_f64(kf * (kf + 1.0));
        h = h.add(Dd::ONE.div_f64(kf));
        let h_next = h.add(Dd::ONE.div_f64(kf + 1.0));
        i0 = i0.add(t);
        s0 = s0.add(t.mul(h));
        i1 = i1.add(u);
        s1 = s1.add(u.mul(h.add(h_next)));
        if t.hi < TERM_EPS * i0.hi && u.hi < TERM_EPS * i1.hi {
            break;
        }
    }
    let k0 = s0.sub(l.mul(i0));
    let k1 = Dd::ONE
        .div(z)
        .add(l.mul(z.mul_f64(0.5)).mul(i1))
        .sub(z.mul_f64(0.25).mul(s1));
    (k0, k1)
}

/// `(K₀(z), K₁(z))` by the asymptotic expansion
/// `K_ν(z) ≈ √(π/(2z))·e^{−z}·Σ_k a_k(ν)/ (8z)^k·k!⁻¹-folded terms`, with the
/// term recurrence `t_k = t_{k−1}·(4ν² − (2k−1)²)/(8zk)`. The expansion
/// diverges; summation stops at the smallest term, whose size bounds the
/// truncation error for real `z > 0`.
fn k_pair_asymptotic(z: Dd) -> (Dd, Dd) {
    let p = PI_DD.div(z.mul_f64(2.0)).sqrt().mul(z.neg().exp());
    let mut s0 = Dd::ONE;
    let mut s1 = Dd::ONE;
    let mut t0 = Dd::ONE;
    let mut t1 = Dd::ONE;
    let mut prev = f64::INFINITY;
    for k in 1..200u32 {
        let odd = 2.0 * k as f64 - 1.0;
        let den = z.mul_f64(8.0 * k as f64);
        t0 = t0.mul_f64(-odd * odd).div(den);
        t1 = t1.mul_f64(4.0 - odd * odd).div(den);
        if t0.hi.abs() >= prev {
            break; // smallest term reached: stop before divergence
        }
        prev = t0.hi.abs();
        s0 = s0.add(t0);
        s1 = s1.add(t1);
        if t0.hi.abs() < TERM_EPS && t1.hi.abs() < TERM_EPS {
            break;
        }
    }
    (p.mul(s0), p.mul(s1))
}

/// `(K₀(z), K₁(z))` for a positive double-double argument.
pub(crate) fn bessel_k_pair(z: Dd) -> (Dd, Dd) {
    if z.hi < ASYMPTOTIC_CUT {
        k_pair_series(z)
    } else {
        k_pair_asymptotic(z)
    }
}

/// `K₀(z)` for `z > 0` (diagnostic single-point surface).
#[cfg(test)]
pub(crate) fn bessel_k0(z: f64) -> f64 {
    bessel_k_pair(Dd::from_f64(z)).0.to_f64()
}

/// `K₁(z)` for `z > 0` (diagnostic single-point surface).
#[cfg(test)]
pub(crate) fn bessel_k1(z: f64) -> f64 {
    bessel_k_pair(Dd::from_f64(z)).1.to_f64()
}

// ---------------------------------------------------------------------------
// The Petersson weight ψ
// ---------------------------------------------------------------------------

/// `ψ(x)` as a double-double, for `x > 0`. The Bessel argument `4πx` is
/// formed in double-double arithmetic (4x is an exact binary scaling), so no
/// accuracy is lost before the kernels are evaluated.
pub(crate) fn psi_dd(x: f64) -> Dd {
    let z = PI_DD.mul_f64(4.0 * x);
    let (k0, k1) = bessel_k_pair(z);
    let quad = Dd::from_prod(x, x).mul_f64(24.0).mul(k0);
    let linear = Dd::from_f64(6.0).div(PI_DD).mul(k1);
    quad.sub(linear)
}

/// The Petersson weight `ψ(x) = −(6/π)·K₁(4πx) + 24x²·K₀(4πx)`.
///
/// Absolute accuracy is far below 1e-14 for `x ∈ [1e-4, 50]`; beyond
/// `x ≈ 59` the value underflows to zero (it is below 1e-320 there).
/// Errors on nonpositive or non-finite `x`.
pub fn psi(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!("psi requires finite x > 0, got {x}")));
    }
    Ok(psi_dd(x).to_f64())
}
