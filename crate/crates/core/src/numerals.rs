//! Balanced-number-system codec.
//!
//! A scalar in `[-v_max, v_max]` is quantized to an integer and expanded in
//! base `beta` (odd), then each digit is shifted by `(beta-1)/2` so the digit
//! set is symmetric around zero. The resulting signed digits are called
//! numerals. Averaging numerals position-wise across devices and decoding the
//! averages yields exactly the mean of the per-device quantized values, which
//! is the identity the whole aggregation scheme rests on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("base must be an odd integer >= 3, got {0}")]
    InvalidBase(u32),
    #[error("digit count must be >= 1, got {0}")]
    InvalidDigits(u32),
    #[error("v_max must be positive and finite, got {0}")]
    InvalidVmax(f64),
    #[error("beta^digits overflows the integer range")]
    RangeOverflow,
    #[error("input value is not finite")]
    NonFiniteInput,
    #[error("numeral sequence has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("empty numeral cohort")]
    EmptyCohort,
}

/// One balanced quantizer: base `beta`, `digits` numerals, absolute maximum `v_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub beta: u32,
    pub digits: u32,
    pub v_max: f64,
}

impl CodecConfig {
    pub fn new(beta: u32, digits: u32, v_max: f64) -> Result<Self, CodecError> {
        let cfg = Self { beta, digits, v_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.beta < 3 || self.beta % 2 == 0 {
            return Err(CodecError::InvalidBase(self.beta));
        }
        if self.digits < 1 {
            return Err(CodecError::InvalidDigits(self.digits));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(CodecError::InvalidVmax(self.v_max));
        }
        (self.beta as u64)
            .checked_pow(self.digits)
            .ok_or(CodecError::RangeOverflow)?;
        Ok(())
    }

    /// `beta^digits`.
    pub fn levels(&self) -> u64 {
        (self.beta as u64).pow(self.digits)
    }

    /// xi = (beta^digits - 1) / 2, the half-range of the integer representation.
    pub fn xi(&self) -> u64 {
        (self.levels() - 1) / 2
    }

    /// Quantization step 2 v_max / (beta^digits - 1).
    pub fn step(&self) -> f64 {
        2.0 * self.v_max / (self.levels() - 1) as f64
    }

    /// v_max + step/2; quantization error stays below step/2 up to this value.
    pub fn v_max_prime(&self) -> f64 {
        self.v_max + 0.5 * self.step()
    }

    pub fn with_v_max(&self, v_max: f64) -> Result<Self, CodecError> {
        Self::new(self.beta, self.digits, v_max)
    }
}

/// Ordered symbol set `a_0 .. a_{beta-1}`; the last entry is the zero symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSet {
    symbols: Vec<i64>,
}

impl SymbolSet {
    pub fn symbols(&self) -> &[i64] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Index of a nonzero symbol value among the first `beta-1` entries.
    pub fn index_of(&self, value: i64) -> Option<usize> {
        let beta = self.symbols.len();
        self.symbols[..beta - 1].iter().position(|&a| a == value)
    }
}

/// Builds the ordered symbol set for an odd base: alternating
/// `-1, 1, -2, 2, ...` with the zero symbol last.
pub fn symbol_set(beta: u32) -> Result<SymbolSet, CodecError> {
    if beta < 3 || beta % 2 == 0 {
        return Err(CodecError::InvalidBase(beta));
    }
    let symbols = (0..beta as i64)
        .map(|j| {
            if j == beta as i64 - 1 {
                0
            } else if j % 2 == 0 {
                -(j + 2) / 2
            } else {
                (j + 1) / 2
            }
        })
        .collect();
    Ok(SymbolSet { symbols })
}

/// Length-`digits` numeral sequence for one scalar, most significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumeralSeq {
    numerals: Vec<i64>,
}

impl NumeralSeq {
    pub fn from_vec(numerals: Vec<i64>, cfg: &CodecConfig) -> Result<Self, CodecError> {
        if numerals.len() != cfg.digits as usize {
            return Err(CodecError::LengthMismatch {
                got: numerals.len(),
                expected: cfg.digits as usize,
            });
        }
        Ok(Self { numerals })
    }

    /// Numerals most-significant-first: `x_{D-1}, ..., x_0`.
    pub fn numerals(&self) -> &[i64] {
        &self.numerals
    }

    /// Numeral at position `i` (weight `beta^i`).
    pub fn at_position(&self, i: usize) -> i64 {
        self.numerals[self.numerals.len() - 1 - i]
    }

    pub fn len(&self) -> usize {
        self.numerals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerals.is_empty()
    }
}

/// Encodes a real value into balanced numerals.
///
/// The value is clamped to `[-v_max, v_max]`, scaled to an integer in
/// `[0, 2 xi]` with a floor, expanded in base `beta`, and each digit shifted
/// down by `(beta-1)/2`. The integer is clamped after flooring since rounding
/// at `v = v_max` can land exactly on (or just above) `2 xi`.
pub fn encode(v: f64, cfg: &CodecConfig) -> Result<NumeralSeq, CodecError> {
    cfg.validate()?;
    if !v.is_finite() {
        return Err(CodecError::NonFiniteInput);
    }
    let clamped = v.clamp(-cfg.v_max, cfg.v_max);
    let xi = cfg.xi() as f64;
    let scaled = (xi / cfg.v_max * clamped + xi + 0.5).floor();
    let int = (scaled.max(0.0) as u64).min(2 * cfg.xi());

    let beta = cfg.beta as u64;
    let half = (cfg.beta as i64 - 1) / 2;
    let d = cfg.digits as usize;
    let mut numerals = vec![0i64; d];
    let mut rem = int;
    for i in 0..d {
        numerals[d - 1 - i] = (rem % beta) as i64 - half;
        rem /= beta;
    }
    Ok(NumeralSeq { numerals })
}

/// Decodes a (possibly fractional) numeral sequence, most-significant-first,
/// back to a real value: `(v_max / xi) * sum_i x_i beta^i`.
///
/// Fractional entries are accepted because cross-device numeral averages are
/// decoded through the same map.
pub fn decode(numerals: &[f64], cfg: &CodecConfig) -> Result<f64, CodecError> {
    cfg.validate()?;
    if numerals.len() != cfg.digits as usize {
        return Err(CodecError::LengthMismatch {
            got: numerals.len(),
            expected: cfg.digits as usize,
        });
    }
    let d = cfg.digits as usize;
    let mut acc = 0.0;
    // ascending weights keep the small terms from being swallowed
    for i in 0..d {
        acc += numerals[d - 1 - i] * (cfg.beta as f64).powi(i as i32);
    }
    Ok(cfg.v_max / cfg.xi() as f64 * acc)
}

fn to_reals(seq: &NumeralSeq) -> Vec<f64> {
    seq.numerals().iter().map(|&x| x as f64).collect()
}

/// decode(encode(v)): a mid-tread uniform quantizer with step `cfg.step()`.
pub fn quantize(v: f64, cfg: &CodecConfig) -> Result<f64, CodecError> {
    let seq = encode(v, cfg)?;
    decode(&to_reals(&seq), cfg)
}

/// Position-wise arithmetic mean of numeral sequences across devices,
/// most-significant-first. Decoding the result reproduces the mean of the
/// per-device quantized values exactly.
pub fn average_numerals(seqs: &[NumeralSeq]) -> Result<Vec<f64>, CodecError> {
    let first = seqs.first().ok_or(CodecError::EmptyCohort)?;
    let d = first.len();
    let mut sums = vec![0.0f64; d];
    for seq in seqs {
        if seq.len() != d {
            return Err(CodecError::LengthMismatch { got: seq.len(), expected: d });
        }
        for (s, &x) in sums.iter_mut().zip(seq.numerals()) {
            *s += x as f64;
        }
    }
    let k = seqs.len() as f64;
    Ok(sums.into_iter().map(|s| s / k).collect())
}

/// Per-symbol device counts `(K_0, ..., K_{beta-2})` for numeral position `i`.
///
/// The zero symbol is not counted, so the entries sum to at most the cohort
/// size. `(1/K) * sum_l a_l K_l` reproduces the position-`i` numeral mean.
pub fn counts_from_numerals(
    seqs: &[NumeralSeq],
    position: usize,
    symbols: &SymbolSet,
) -> Result<Vec<u32>, CodecError> {
    if seqs.is_empty() {
        return Err(CodecError::EmptyCohort);
    }
    let mut counts = vec![0u32; symbols.len() - 1];
    for seq in seqs {
        if position >= seq.len() {
            return Err(CodecError::LengthMismatch { got: seq.len(), expected: position + 1 });
        }
        let d = seq.at_position(position);
        if d != 0 {
            let l = symbols
                .index_of(d)
                .ok_or(CodecError::InvalidBase(symbols.len() as u32))?;
            counts[l] += 1;
        }
    }
    Ok(counts)
}
