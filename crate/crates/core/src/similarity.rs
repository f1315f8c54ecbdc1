//! Dice coefficients over Bloom vectors and Levenshtein distance.
//!
//! The Dice denominator uses the set-bit count of each vector. The pooled
//! coefficient sums common bits and weights across all five fields before
//! dividing, so it is not the mean of the per-field values.

use serde::{Deserialize, Serialize};

use crate::encoder::{BloomVector, EncodedProfile, NUM_FIELDS};
use crate::error::{Error, Result};

/// Per-field Dice coefficients plus the pooled coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub d: [f64; NUM_FIELDS],
    pub d_all: f64,
}

impl FeatureVector {
    pub const ONES: FeatureVector = FeatureVector {
        d: [1.0; NUM_FIELDS],
        d_all: 1.0,
    };

    /// Model inputs: the five per-field coefficients.
    pub fn inputs(&self) -> &[f64; NUM_FIELDS] {
        &self.d
    }
}

pub fn common_ones(a: &BloomVector, b: &BloomVector) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok((a.word() & b.word()).count_ones())
}

pub fn dice(a: &BloomVector, b: &BloomVector) -> Result<f64> {
    let common = common_ones(a, b)?;
    dice_from_counts(common, a.weight() + b.weight())
}

fn dice_from_counts(common: u32, total_weight: u32) -> Result<f64> {
    if total_weight == 0 {
        return Err(Error::BothEmpty);
    }
    Ok(2.0 * f64::from(common) / f64::from(total_weight))
}

fn check_m(p0: &EncodedProfile, p1: &EncodedProfile) -> Result<()> {
    if p0.m != p1.m {
        return Err(Error::LengthMismatch {
            left: p0.m,
            right: p1.m,
        });
    }
    Ok(())
}

/// Pooled Dice coefficient over all fields.
pub fn dice_all(p0: &EncodedProfile, p1: &EncodedProfile) -> Result<f64> {
    check_m(p0, p1)?;
    let mut common = 0;
    let mut weight = 0;
    for (a, b) in p0.fields.iter().zip(&p1.fields) {
        common += common_ones(a, b)?;
        weight += a.weight() + b.weight();
    }
    dice_from_counts(common, weight)
}

/// Feature vector of a profile pair plus a bitmask of fields (bit `i` for
/// field `i`, bit 5 for the pooled value) that were both-empty and set to 0.
pub fn features(p0: &EncodedProfile, p1: &EncodedProfile) -> Result<(FeatureVector, u8)> {
    check_m(p0, p1)?;
    let words0: [u64; NUM_FIELDS] = std::array::from_fn(|i| p0.fields[i].word());
    let words1: [u64; NUM_FIELDS] = std::array::from_fn(|i| p1.fields[i].word());
    Ok(features_from_words(&words0, &words1))
}

/// Hot-path variant of [`features`] over raw field words of equal length.
#[inline]
pub(crate) fn features_from_words(
    a: &[u64; NUM_FIELDS],
    b: &[u64; NUM_FIELDS],
) -> (FeatureVector, u8) {
    let mut fv = FeatureVector::default();
    let mut flags = 0u8;
    let mut common_sum = 0u32;
    let mut weight_sum = 0u32;
    for i in 0..NUM_FIELDS {
        let common = (a[i] & b[i]).count_ones();
        let weight = a[i].count_ones() + b[i].count_ones();
        common_sum += common;
        weight_sum += weight;
        match dice_from_counts(common, weight) {
            Ok(d) => fv.d[i] = d,
            Err(_) => flags |= 1 << i,
        }
    }
    match dice_from_counts(common_sum, weight_sum) {
        Ok(d) => fv.d_all = d,
        Err(_) => flags |= 1 << NUM_FIELDS,
    }
    (fv, flags)
}

/// Pooled Dice only, for the pruning pass of the all-pairs join.
#[inline]
pub(crate) fn dice_all_words(a: &[u64; NUM_FIELDS], b: &[u64; NUM_FIELDS], weight_a: u32, weight_b: u32) -> f64 {
    let common: u32 = (0..NUM_FIELDS).map(|i| (a[i] & b[i]).count_ones()).sum();
    let weight = weight_a + weight_b;
    if weight == 0 {
        0.0
    } else {
        2.0 * f64::from(common) / f64::from(weight)
    }
}

/// Levenshtein distance with unit costs, over Unicode scalar values.
pub fn edit_distance(s: &str, t: &str) -> usize {
    let s: Vec<char> = s.chars().collect();
    let t: Vec<char> = t.chars().collect();
    edit_distance_chars(&s, &t)
}

pub(crate) fn edit_distance_chars(s: &[char], t: &[char]) -> usize {
    if s.is_empty() {
        return t.len();
    }
    if t.is_empty() {
        return s.len();
    }
    let mut row: Vec<usize> = (0..=t.len()).collect();
    for (i, sc) in s.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, tc) in t.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(sc != tc);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[t.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v8(bits: u8) -> BloomVector {
        // place the byte in the first 8 bit positions of a 32-bit vector
        BloomVector::from_word(u64::from(bits) << 24, 32)
    }

    fn profile(words: [u64; NUM_FIELDS], m: u32) -> EncodedProfile {
        EncodedProfile {
            profile_id: "x".into(),
            m,
            fields: words.map(|w| BloomVector::from_word(w, m)),
        }
    }

    #[test]
    fn common_ones_examples() {
        assert_eq!(common_ones(&v8(0b1011_0000), &v8(0b1011_0000)).unwrap(), 3);
        assert_eq!(common_ones(&v8(0b1011_0000), &v8(0b1010_0000)).unwrap(), 2);
        assert_eq!(common_ones(&v8(0), &v8(0b1111_1111)).unwrap(), 0);
        let err = common_ones(&v8(1), &BloomVector::zeros(64)).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { left: 32, right: 64 }));
    }

    #[test]
    fn dice_examples() {
        assert_eq!(dice(&v8(0b0110_0100), &v8(0b0110_0100)).unwrap(), 1.0);
        assert_eq!(dice(&v8(0b1011_0000), &v8(0b1010_0000)).unwrap(), 0.8);
        assert_eq!(dice(&v8(0b1100_0000), &v8(0b0011_0000)).unwrap(), 0.0);
        assert!(matches!(dice(&v8(0), &v8(0)), Err(Error::BothEmpty)));
    }

    #[test]
    fn pooled_dice_is_not_mean_of_fields() {
        // field0: w=3 / w=3 with 2 common; field1 identical with w=4
        let p0 = profile([0b111, 0b1111, 0, 0, 0], 32);
        let p1 = profile([0b1101, 0b1111, 0, 0, 0], 32);
        let d_all = dice_all(&p0, &p1).unwrap();
        assert!((d_all - 12.0 / 14.0).abs() < 1e-15);
        let (fv, flags) = features(&p0, &p1).unwrap();
        assert!((fv.d[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fv.d[1], 1.0);
        assert_eq!(flags, 0b11100);
        assert_eq!(fv.d_all, d_all);
        let mean = (fv.d[0] + fv.d[1]) / 2.0;
        assert!((mean - 5.0 / 6.0).abs() < 1e-15);
        assert!((mean - d_all).abs() > 0.02);
    }

    #[test]
    fn identical_profiles_score_one() {
        let p = profile([3, 5, 7, 9, 11], 64);
        let (fv, flags) = features(&p, &p).unwrap();
        assert_eq!(fv, FeatureVector::ONES);
        assert_eq!(flags, 0);
    }

    #[test]
    fn mixed_m_is_rejected() {
        let a = profile([1; 5], 32);
        let b = profile([1; 5], 64);
        assert!(dice_all(&a, &b).is_err());
        assert!(features(&a, &b).is_err());
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance("Geoff", "Jeoff"), 1);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("same", "same"), 0);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("geoffrey", "geoff"), 3);
        assert_eq!(edit_distance("ab", "ba"), 2);
    }
}
