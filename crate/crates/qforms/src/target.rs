//! Target sets of positive integers, specified by residue classes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::bitset::Bitset;
use crate::enumerate::{self, EnumLimits};
use crate::error::{Error, Result};
use crate::form::GramForm;

/// A set `S` of positive integers cut out by residue classes: the built-in
/// choices are all positive integers, the odd ones, and those coprime to 3;
/// custom sets are a union of residue classes modulo `m`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TargetSet {
    All,
    Odd,
    CoprimeTo3,
    Custom { modulus: u64, residues: BTreeSet<u64> },
}

impl TargetSet {
    /// Builds a custom target from a modulus and residue list (values are
    /// reduced mod `m`; the set must be nonempty).
    pub fn custom(modulus: u64, residues: impl IntoIterator<Item = u64>) -> Result<Self> {
        if modulus == 0 {
            return Err(Error::Target("modulus must be positive".to_string()));
        }
        let residues: BTreeSet<u64> = residues.into_iter().map(|r| r % modulus).collect();
        if residues.is_empty() {
            return Err(Error::Target("at least one residue class required".to_string()));
        }
        Ok(TargetSet::Custom { modulus, residues })
    }

    pub fn contains(&self, n: u64) -> bool {
        if n == 0 {
            return false;
        }
        match self {
            TargetSet::All => true,
            TargetSet::Odd => n % 2 == 1,
            TargetSet::CoprimeTo3 => n % 3 != 0,
            TargetSet::Custom { modulus, residues } => residues.contains(&(n % modulus)),
        }
    }

    /// The defining modulus and the admitted residues mod it.
    pub fn residue_classes(&self) -> (u64, Vec<u64>) {
        match self {
            TargetSet::All => (1, vec![0]),
            TargetSet::Odd => (2, vec![1]),
            TargetSet::CoprimeTo3 => (3, vec![1, 2]),
            TargetSet::Custom { modulus, residues } => {
                (*modulus, residues.iter().copied().collect())
            }
        }
    }

    /// Smallest element of the set.
    pub fn least_element(&self) -> u64 {
        (1..).find(|&n| self.contains(n)).expect("nonempty residue set")
    }

    /// Members of the set in `[lo, hi]`, ascending.
    pub fn members_in(&self, lo: u64, hi: u64) -> impl Iterator<Item = u64> + '_ {
        (lo.max(1)..=hi).filter(move |&n| self.contains(n))
    }
}

impl fmt::Display for TargetSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSet::All => f.write_str("all"),
            TargetSet::Odd => f.write_str("odd"),
            TargetSet::CoprimeTo3 => f.write_str("coprime3"),
            TargetSet::Custom { modulus, residues } => {
                let rs: Vec<String> = residues.iter().map(|r| r.to_string()).collect();
                write!(f, "custom:{}:{}", modulus, rs.join(","))
            }
        }
    }
}

impl FromStr for TargetSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => return Ok(TargetSet::All),
            "odd" => return Ok(TargetSet::Odd),
            "coprime3" => return Ok(TargetSet::CoprimeTo3),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("custom:") {
            let (m_str, rs_str) = rest.split_once(':').ok_or_else(|| {
                Error::Target(format!("expected custom:<modulus>:<r1,r2,…>, got {s:?}"))
            })?;
            let modulus: u64 = m_str
                .parse()
                .map_err(|_| Error::Target(format!("bad modulus {m_str:?}")))?;
            let residues = rs_str
                .split(',')
                .map(|r| {
                    r.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Target(format!("bad residue {r:?}")))
                })
                .collect::<Result<Vec<u64>>>()?;
            return TargetSet::custom(modulus, residues);
        }
        Err(Error::Target(format!(
            "unknown target {s:?} (expected all, odd, coprime3, or custom:<m>:<r,…>)"
        )))
    }
}

impl Serialize for TargetSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TargetSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// The truant of a form with respect to `S`: the smallest element of `S` the
/// form fails to represent, searched up to `cap`. `Ok(None)` means every
/// member of `S` up to `cap` is represented.
pub fn truant(
    form: &GramForm,
    target: &TargetSet,
    cap: u64,
    limits: &EnumLimits,
) -> Result<Option<u64>> {
    if form.rank() == 0 {
        let least = target.least_element();
        return Ok((least <= cap).then_some(least));
    }
    // Progressively widen the sweep; most truants are small.
    let mut window = 64u64.min(cap);
    loop {
        let bits = enumerate::representation_bitset(form, window, limits)?;
        if let Some(n) = target
            .members_in(1, window)
            .find(|&n| !bits.get(n as usize))
        {
            return Ok(Some(n));
        }
        if window == cap {
            return Ok(None);
        }
        window = (window * 4).min(cap);
    }
}

/// Every member of `S` up to `cap` that the form misses, ascending.
pub fn exceptions_up_to(
    form: &GramForm,
    target: &TargetSet,
    cap: u64,
    limits: &EnumLimits,
) -> Result<Vec<u64>> {
    if form.rank() == 0 {
        return Ok(target.members_in(1, cap).collect());
    }
    let bits = enumerate::representation_bitset(form, cap, limits)?;
    Ok(collect_missing(&bits, target, cap))
}

/// Members of `S` up to `cap` whose bit is clear in a represented-set bitmap.
pub fn collect_missing(bits: &Bitset, target: &TargetSet, cap: u64) -> Vec<u64> {
    debug_assert!(bits.len() > cap as usize);
    target
        .members_in(1, cap)
        .filter(|&n| !bits.get(n as usize))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_and_parsing() {
        for (text, yes, no) in [
            ("all", vec![1u64, 2, 3, 97], vec![]),
            ("odd", vec![1, 3, 97], vec![2, 4, 290]),
            ("coprime3", vec![1, 2, 4, 290], vec![3, 6, 297]),
            ("custom:8:1,3,5,7", vec![1, 3, 13], vec![2, 4, 8]),
        ] {
            let t: TargetSet = text.parse().unwrap();
            assert_eq!(t.to_string(), text);
            for n in yes {
                assert!(t.contains(n), "{text} should contain {n}");
            }
            for n in no {
                assert!(!t.contains(n), "{text} should not contain {n}");
            }
            assert!(!t.contains(0));
        }
        assert!("custom:0:1".parse::<TargetSet>().is_err());
        assert!("custom:5".parse::<TargetSet>().is_err());
        assert!("evens".parse::<TargetSet>().is_err());
    }

    #[test]
    fn custom_residues_are_reduced() {
        let t = TargetSet::custom(6, [7, 13, 5]).unwrap();
        assert_eq!(t.to_string(), "custom:6:1,5");
        assert_eq!(t.least_element(), 1);
        let t = TargetSet::custom(4, [0]).unwrap();
        assert_eq!(t.least_element(), 4);
    }

    #[test]
    fn serde_as_string() {
        let t: TargetSet = "custom:8:1,3".parse().unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, "\"custom:8:1,3\"");
        let back: TargetSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn truants_of_small_forms() {
        let limits = EnumLimits::default();
        let x2 = GramForm::from_upper(1, &[2]).unwrap();
        // Squares miss 2 (all / coprime3), 3 (odd misses 3).
        assert_eq!(truant(&x2, &TargetSet::All, 1000, &limits).unwrap(), Some(2));
        assert_eq!(truant(&x2, &TargetSet::CoprimeTo3, 1000, &limits).unwrap(), Some(2));
        assert_eq!(truant(&x2, &TargetSet::Odd, 1000, &limits).unwrap(), Some(3));

        // x² + y² misses 3; odd target also 3; mod-3 units miss... 1,2,4,5 ok? 3∤, first miss 7.
        let q = GramForm::from_upper(2, &[2, 0, 2]).unwrap();
        assert_eq!(truant(&q, &TargetSet::All, 1000, &limits).unwrap(), Some(3));
        assert_eq!(truant(&q, &TargetSet::CoprimeTo3, 1000, &limits).unwrap(), Some(7));

        // Sum of four squares has no truant at any cap.
        let q4 = GramForm::from_upper(4, &[2, 0, 0, 0, 2, 0, 0, 2, 0, 2]).unwrap();
        assert_eq!(truant(&q4, &TargetSet::All, 5000, &limits).unwrap(), None);

        // Rank-0 form misses the least element.
        let zero = GramForm::new(0, vec![]).unwrap();
        assert_eq!(truant(&zero, &TargetSet::CoprimeTo3, 1000, &limits).unwrap(), Some(1));
    }

    #[test]
    fn exception_lists() {
        let limits = EnumLimits::default();
        // x² + 2y² attains {1,2,3,4,6,8,9,11,12,16,17,18,19,22} below 24.
        let q = GramForm::from_upper(2, &[2, 0, 4]).unwrap();
        let misses = exceptions_up_to(&q, &TargetSet::All, 23, &limits).unwrap();
        assert_eq!(misses, vec![5, 7, 10, 13, 14, 15, 20, 21, 23]);
        let misses3 = exceptions_up_to(&q, &TargetSet::CoprimeTo3, 23, &limits).unwrap();
        assert_eq!(misses3, vec![5, 7, 10, 13, 14, 20, 23]);
    }
}
