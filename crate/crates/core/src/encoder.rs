//! Keyed Bloom-filter encoding of identifying fields.
//!
//! Each of the five identifying fields (first name, last name, birth day,
//! birth month, birth year) is normalized, split into boundary-padded
//! bigrams, and hashed into its own `m`-bit vector. Bit positions come from
//! double hashing over HMAC-SHA256 digests keyed by the secret key and the
//! field index, so the same string in two fields lands on unrelated bits.

use std::fmt;

use chrono::NaiveDate;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{Error, Result};

/// Number of encoded fields per profile.
pub const NUM_FIELDS: usize = 5;

/// Field order used everywhere downstream: vectors, features and patterns.
pub const FIELD_NAMES: [&str; NUM_FIELDS] = ["first", "last", "day", "month", "year"];

const PAD: char = '_';

/// A plaintext registration record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlainProfile {
    pub profile_id: String,
    pub first_name: String,
    pub last_name: String,
    pub dob_day: u32,
    pub dob_month: u32,
    pub dob_year: i32,
}

impl PlainProfile {
    pub fn validate(&self) -> Result<()> {
        if self.profile_id.is_empty() {
            return Err(Error::InvalidProfile("empty profile_id".into()));
        }
        if !(1000..=9999).contains(&self.dob_year) {
            return Err(Error::InvalidProfile(format!(
                "{}: birth year {} is not a 4-digit year",
                self.profile_id, self.dob_year
            )));
        }
        if NaiveDate::from_ymd_opt(self.dob_year, self.dob_month, self.dob_day).is_none() {
            return Err(Error::InvalidProfile(format!(
                "{}: {}-{}-{} is not a calendar date",
                self.profile_id, self.dob_year, self.dob_month, self.dob_day
            )));
        }
        Ok(())
    }

    /// Normalized field strings in canonical field order.
    pub fn normalized_fields(&self) -> [String; NUM_FIELDS] {
        [
            normalize_field(&self.first_name),
            normalize_field(&self.last_name),
            render_day(self.dob_day),
            render_month(self.dob_month),
            render_year(self.dob_year),
        ]
    }
}

pub fn render_day(day: u32) -> String {
    normalize_field(&format!("{day:02}"))
}

pub fn render_month(month: u32) -> String {
    normalize_field(&format!("{month:02}"))
}

pub fn render_year(year: i32) -> String {
    normalize_field(&format!("{year:04}"))
}

/// Lowercases, trims, and drops every character outside `[a-z0-9]`.
pub fn normalize_field(raw: &str) -> String {
    raw.trim()
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        .collect()
}

/// Boundary-padded bigrams of a normalized string, in order, duplicates kept.
pub fn qgrams(s: &str) -> Vec<String> {
    if s.is_empty() {
        return Vec::new();
    }
    let padded: Vec<char> = std::iter::once(PAD)
        .chain(s.chars())
        .chain(std::iter::once(PAD))
        .collect();
    padded.windows(2).map(|w| w.iter().collect()).collect()
}

/// A Bloom-filter bit vector of `m` bits (`m` is 32 or 64).
///
/// Bit 0 is the most significant bit of the first byte of the big-endian
/// serialization.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BloomVector {
    bits: u64,
    m: u32,
}

impl BloomVector {
    pub fn zeros(m: u32) -> Self {
        debug_assert!(m == 32 || m == 64);
        Self { bits: 0, m }
    }

    /// Builds a vector from its raw word, with bit 0 at position `m - 1` of the word.
    pub fn from_word(bits: u64, m: u32) -> Self {
        let mask = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
        Self { bits: bits & mask, m }
    }

    pub fn word(&self) -> u64 {
        self.bits
    }

    pub fn len(&self) -> u32 {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn set(&mut self, pos: u32) {
        assert!(pos < self.m, "bit {pos} out of range for m={}", self.m);
        self.bits |= 1u64 << (self.m - 1 - pos);
    }

    pub fn get(&self, pos: u32) -> bool {
        assert!(pos < self.m, "bit {pos} out of range for m={}", self.m);
        self.bits >> (self.m - 1 - pos) & 1 == 1
    }

    /// Number of set bits.
    pub fn weight(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn to_hex(&self) -> String {
        let bytes = self.bits.to_be_bytes();
        hex::encode(&bytes[(8 - self.m as usize / 8)..])
    }

    pub fn from_hex(s: &str, m: u32) -> Result<Self> {
        if m != 32 && m != 64 {
            return Err(Error::InvalidConfig(format!("m must be 32 or 64, got {m}")));
        }
        let expected = m as usize / 4;
        if s.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "hex vector has {} digits, expected {expected} for m={m}",
                s.len()
            )));
        }
        let decoded = hex::decode(s).map_err(|e| Error::InvalidConfig(format!("bad hex: {e}")))?;
        let mut buf = [0u8; 8];
        buf[8 - decoded.len()..].copy_from_slice(&decoded);
        Ok(Self {
            bits: u64::from_be_bytes(buf),
            m,
        })
    }
}

impl fmt::Debug for BloomVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BloomVector(m={}, {})", self.m, self.to_hex())
    }
}

#[derive(Clone)]
pub struct EncoderConfig {
    pub m: u32,
    pub q: usize,
    pub k: u32,
    key: Vec<u8>,
}

impl EncoderConfig {
    pub fn new(m: u32, k: u32, key: impl Into<Vec<u8>>) -> Result<Self> {
        let cfg = Self {
            m,
            q: 2,
            k,
            key: key.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m != 32 && self.m != 64 {
            return Err(Error::InvalidConfig(format!("m must be 32 or 64, got {}", self.m)));
        }
        if self.q != 2 {
            return Err(Error::InvalidConfig(format!("q must be 2, got {}", self.q)));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.key.is_empty() {
            return Err(Error::InvalidConfig("encoding key is empty".into()));
        }
        Ok(())
    }
}

impl fmt::Debug for EncoderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncoderConfig")
            .field("m", &self.m)
            .field("q", &self.q)
            .field("k", &self.k)
            .field("key", &"<redacted>")
            .finish()
    }
}

/// The five encoded field vectors of one profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedProfile {
    pub profile_id: String,
    pub m: u32,
    pub fields: [BloomVector; NUM_FIELDS],
}

impl EncodedProfile {
    /// Bitmask of fields whose vector is all-zero (bit `i` for field `i`).
    pub fn empty_mask(&self) -> u8 {
        self.fields
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_empty())
            .fold(0u8, |mask, (i, _)| mask | (1 << i))
    }
}

type HmacSha256 = Hmac<Sha256>;

/// Reusable encoder holding the keyed MAC state.
#[derive(Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    mac: HmacSha256,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mac = HmacSha256::new_from_slice(&cfg.key)
            .map_err(|e| Error::InvalidConfig(format!("bad key: {e}")))?;
        Ok(Self { cfg, mac })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// The `k` bit positions of one q-gram in one field.
    pub fn positions(&self, gram: &str, field_index: usize) -> Vec<u32> {
        let mut mac = self.mac.clone();
        mac.update(&[field_index as u8]);
        mac.update(gram.as_bytes());
        let digest = mac.finalize().into_bytes();
        let h1 = u64::from_be_bytes(digest[0..8].try_into().unwrap());
        let h2 = u64::from_be_bytes(digest[8..16].try_into().unwrap());
        let m = u64::from(self.cfg.m);
        (0..u64::from(self.cfg.k))
            .map(|i| ((h1 % m + i * (h2 % m)) % m) as u32)
            .collect()
    }

    /// Encodes one normalized field string.
    pub fn encode_field(&self, s: &str, field_index: usize) -> Result<BloomVector> {
        assert!(field_index < NUM_FIELDS, "field index {field_index} out of range");
        if s.is_empty() {
            return Err(Error::EmptyField { field: field_index });
        }
        let mut v = BloomVector::zeros(self.cfg.m);
        for gram in qgrams(s) {
            for pos in self.positions(&gram, field_index) {
                v.set(pos);
            }
        }
        Ok(v)
    }

    /// Encodes a profile. Empty fields become all-zero vectors and are
    /// reported through [`EncodedProfile::empty_mask`].
    pub fn encode_profile(&self, p: &PlainProfile) -> EncodedProfile {
        let normalized = p.normalized_fields();
        let fields = std::array::from_fn(|i| {
            self.encode_field(&normalized[i], i)
                .unwrap_or_else(|_| BloomVector::zeros(self.cfg.m))
        });
        EncodedProfile {
            profile_id: p.profile_id.clone(),
            m: self.cfg.m,
            fields,
        }
    }
}
