//! Packed bitsets over `0..len`, with the shifted-or used to combine a ternary
//! section's represented set with square multiples of a complementary value.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitset {
    len: usize,
    words: Vec<u64>,
}

impl Bitset {
    pub fn new(len: usize) -> Self {
        Bitset {
            len,
            words: vec![0u64; len.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `self |= other << shift`, truncating bits that fall beyond `self.len`.
    pub fn or_shifted(&mut self, other: &Bitset, shift: usize) {
        if shift >= self.len {
            return;
        }
        let word_off = shift / 64;
        let bit_off = shift % 64;
        let nw = self.words.len();
        for (k, &w) in other.words.iter().enumerate() {
            if w == 0 {
                continue;
            }
            let lo = k + word_off;
            if lo >= nw {
                break;
            }
            self.words[lo] |= w << bit_off;
            if bit_off > 0 && lo + 1 < nw {
                self.words[lo + 1] |= w >> (64 - bit_off);
            }
        }
        self.mask_tail();
    }

    /// `self |= other` (equal lengths).
    pub fn or_assign(&mut self, other: &Bitset) {
        assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    fn mask_tail(&mut self) {
        let extra = self.words.len() * 64 - self.len;
        if extra > 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= u64::MAX >> extra;
            }
        }
    }

    /// Indices in `[lo, len)` whose bit is clear, filtered by `keep`.
    pub fn zeros_where(&self, lo: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        (lo..self.len)
            .filter(|&i| !self.get(i) && keep(i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_get_count() {
        let mut b = Bitset::new(130);
        assert!(!b.get(0));
        b.set(0);
        b.set(63);
        b.set(64);
        b.set(129);
        assert!(b.get(0) && b.get(63) && b.get(64) && b.get(129));
        assert!(!b.get(1) && !b.get(65) && !b.get(128));
        assert_eq!(b.count_ones(), 4);
    }

    #[test]
    fn or_shifted_matches_naive() {
        let mut src = Bitset::new(100);
        for i in [0usize, 1, 5, 63, 64, 97] {
            src.set(i);
        }
        for shift in [0usize, 1, 7, 63, 64, 65, 99, 100, 150] {
            let mut dst = Bitset::new(100);
            dst.or_shifted(&src, shift);
            for i in 0..100 {
                let expected = i >= shift && i - shift < 100 && src.get(i - shift);
                assert_eq!(dst.get(i), expected, "shift {shift}, bit {i}");
            }
        }
    }

    #[test]
    fn zeros_where_filters() {
        let mut b = Bitset::new(10);
        for i in [1usize, 2, 3, 5, 7, 9] {
            b.set(i);
        }
        assert_eq!(b.zeros_where(1, |_| true), vec![4, 6, 8]);
        assert_eq!(b.zeros_where(1, |i| i % 2 == 0), vec![4, 6, 8]);
        assert_eq!(b.zeros_where(5, |_| true), vec![6, 8]);
    }
}
