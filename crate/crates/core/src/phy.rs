//! Frequency-domain multi-access channel simulator and non-coherent receiver.
//!
//! Transmitters map each numeral to a group of `beta-1` subcarriers and
//! activate at most one of them. The server estimates, per group, how many
//! devices activated each subcarrier from received energy alone (no CSI),
//! reconstructs the numeral averages from those counts, and decodes them back
//! to a gradient estimate.
//!
//! Channel coefficients are i.i.d. unit-variance complex Gaussian per device,
//! antenna, and resource element. A realization stores only a seed and the
//! per-device timing offsets; coefficients are generated on demand from
//! counter-derived RNG streams, so sparse and full-grid consumers see
//! bit-identical values in any order.

use std::collections::HashMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerals::{CodecConfig, NumeralSeq, SymbolSet};

#[derive(Debug, Error, PartialEq)]
pub enum PhyError {
    #[error("gradient index {index} exceeds grid capacity {capacity}")]
    CapacityExceeded { index: usize, capacity: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ML enumeration space {0} exceeds the supported limit")]
    SearchSpaceTooLarge(u64),
}

/// Multi-access channel and receiver parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhyConfig {
    /// Number of edge devices K.
    pub num_eds: usize,
    /// Number of receive antennas R.
    pub num_antennas: usize,
    /// Noise variance per antenna (linear power; SNR = 1/noise_var).
    pub noise_var: f64,
    /// Per-active-subcarrier energy (beta - 1 by default).
    pub symbol_energy: f64,
    /// Active subcarriers per OFDM symbol.
    pub num_subcarriers: usize,
    /// OFDM symbols per slot.
    pub num_symbols: usize,
    /// Receiver DFT-window offset bound, in samples.
    pub sync_error_samples: u32,
    /// DFT size.
    pub fft_size: usize,
    /// Arrival-time spread across devices, seconds (reciprocal of bandwidth).
    pub sync_spread: f64,
    /// Clip count estimates into [0, K] before decoding (ablation only; the
    /// unclipped estimator is the unbiased one).
    #[serde(default)]
    pub clip_counts: bool,
}

impl PhyConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.num_eds == 0 || self.num_antennas == 0 {
            return Err(PhyError::InvalidConfig("num_eds and num_antennas must be positive".into()));
        }
        if !(self.symbol_energy > 0.0) {
            return Err(PhyError::InvalidConfig("symbol_energy must be positive".into()));
        }
        if self.noise_var < 0.0 {
            return Err(PhyError::InvalidConfig("noise_var must be non-negative".into()));
        }
        if self.num_subcarriers == 0 || self.num_symbols == 0 || self.fft_size == 0 {
            return Err(PhyError::InvalidConfig("grid dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Gradients that fit into one OFDM symbol for the given codec.
    pub fn gradients_per_symbol(&self, codec: &CodecConfig) -> usize {
        self.num_subcarriers / ((codec.beta as usize - 1) * codec.digits as usize)
    }

    /// Gradients that fit into the whole slot.
    pub fn slot_capacity(&self, codec: &CodecConfig) -> usize {
        self.gradients_per_symbol(codec) * self.num_symbols
    }
}

/// The `(beta-1) * digits` time-frequency pairs carrying one gradient.
/// Pair `i * (beta-1) + l` belongs to numeral position `i`, symbol index `l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceSet {
    pairs: Vec<(usize, usize)>,
    per_position: usize,
}

impl ResourceSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Resource element of numeral position `i`, symbol index `l`.
    pub fn pair(&self, position: usize, symbol_index: usize) -> (usize, usize) {
        self.pairs[position * self.per_position + symbol_index]
    }

    pub fn positions(&self) -> usize {
        self.pairs.len() / self.per_position
    }

    pub fn symbols_per_position(&self) -> usize {
        self.per_position
    }
}

/// Deterministic adjacent-subcarrier layout: gradients fill subcarriers first,
/// then OFDM symbols. Disjoint across gradient indices by construction.
pub fn resource_map(q: usize, cfg: &PhyConfig, codec: &CodecConfig) -> Result<ResourceSet, PhyError> {
    let width = (codec.beta as usize - 1) * codec.digits as usize;
    let per_symbol = cfg.num_subcarriers / width;
    let capacity = per_symbol * cfg.num_symbols;
    if q >= capacity {
        return Err(PhyError::CapacityExceeded { index: q, capacity });
    }
    let t = q / per_symbol;
    let f0 = (q % per_symbol) * width;
    let pairs = (0..width).map(|o| (t, f0 + o)).collect();
    Ok(ResourceSet { pairs, per_position: codec.beta as usize - 1 })
}

/// Sparse transmit map for one device: active resource elements and their
/// modulation symbols.
pub type TxMap = Vec<((usize, usize), Complex64)>;

/// Activates one subcarrier per nonzero numeral with energy `E_s` and a random
/// unimodular phase; the zero symbol transmits nothing.
pub fn modulate(
    seq: &NumeralSeq,
    rset: &ResourceSet,
    symbols: &SymbolSet,
    symbol_energy: f64,
    rng: &mut impl Rng,
) -> TxMap {
    let amp = symbol_energy.sqrt();
    let mut out = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        let d = seq.at_position(i);
        if d == 0 {
            continue;
        }
        let l = symbols.index_of(d).expect("numeral outside symbol set");
        let theta = rng.gen_range(0.0..TAU);
        out.push((rset.pair(i, l), amp * Complex64::new(theta.cos(), theta.sin())));
    }
    out
}

/// Per-round fading realization: per-device timing offsets plus a seed from
/// which every coefficient is derived deterministically.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    seed: u64,
    /// Timing offset of each device, in samples.
    delays: Vec<f64>,
    num_antennas: usize,
    fft_size: usize,
}

/// Draws a fresh realization: i.i.d. Rayleigh coefficients (lazily generated)
/// and per-device timing offsets. The receiver window offset is uniform in
/// `[0, sync_error_samples]`; the arrival offset is uniform over the
/// arrival-spread window, which spans `fft_size / num_subcarriers` samples
/// when `sync_spread > 0` (one reciprocal-bandwidth interval at the DFT
/// sampling rate).
pub fn sample_channel(cfg: &PhyConfig, rng: &mut impl Rng) -> ChannelRealization {
    let arrival_span = if cfg.sync_spread > 0.0 {
        cfg.fft_size as f64 / cfg.num_subcarriers as f64
    } else {
        0.0
    };
    let delays = (0..cfg.num_eds)
        .map(|_| {
            let window = cfg.sync_error_samples as f64 * rng.gen::<f64>();
            let arrival = arrival_span * rng.gen::<f64>();
            window + arrival
        })
        .collect();
    ChannelRealization {
        seed: rng.next_u64(),
        delays,
        num_antennas: cfg.num_antennas,
        fft_size: cfg.fft_size,
    }
}

impl ChannelRealization {
    /// Coefficients between device `k` and all antennas at resource element
    /// `(t, f)`, including the sync-error phase rotation.
    pub fn coefficients(&self, k: usize, t: usize, f: usize) -> Vec<Complex64> {
        let mut rng = element_rng(self.seed, k, t, f);
        let phase = -TAU * f as f64 * self.delays[k] / self.fft_size as f64;
        let rot = Complex64::new(phase.cos(), phase.sin());
        (0..self.num_antennas)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im).scale(std::f64::consts::FRAC_1_SQRT_2) * rot
            })
            .collect()
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }
}

fn element_rng(seed: u64, k: usize, t: usize, f: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(k as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(t as u64).to_le_bytes());
    key[24..32].copy_from_slice(&(f as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Received vectors at the listed resource elements.
#[derive(Debug, Clone)]
pub struct RxResourceGrid {
    index: HashMap<(usize, usize), usize>,
    vectors: Vec<Vec<Complex64>>,
}

impl RxResourceGrid {
    pub fn vector(&self, element: (usize, usize)) -> Option<&[Complex64]> {
        self.index.get(&element).map(|&i| self.vectors[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Superposes all devices' transmissions over the fading channel and adds
/// receiver noise on the listed resource elements.
pub fn superpose(
    tx_maps: &[TxMap],
    elements: &[(usize, usize)],
    chan: &ChannelRealization,
    cfg: &PhyConfig,
    rng: &mut impl Rng,
) -> Result<RxResourceGrid, PhyError> {
    cfg.validate()?;
    if tx_maps.len() != cfg.num_eds {
        return Err(PhyError::DimensionMismatch(format!(
            "{} transmit maps for {} devices",
            tx_maps.len(),
            cfg.num_eds
        )));
    }
    let mut index = HashMap::with_capacity(elements.len());
    for (i, &e) in elements.iter().enumerate() {
        if e.0 >= cfg.num_symbols || e.1 >= cfg.num_subcarriers {
            return Err(PhyError::DimensionMismatch(format!("element {:?} outside grid", e)));
        }
        index.insert(e, i);
    }
    let noise_std = (cfg.noise_var / 2.0).sqrt();
    let mut vectors: Vec<Vec<Complex64>> = elements
        .iter()
        .map(|_| {
            (0..cfg.num_antennas)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * noise_std, im * noise_std)
                })
                .collect()
        })
        .collect();
    for (k, tx) in tx_maps.iter().enumerate() {
        for &((t, f), x) in tx {
            let Some(&slot) = index.get(&(t, f)) else {
                return Err(PhyError::DimensionMismatch(format!(
                    "device {} transmits on unlisted element ({}, {})",
                    k, t, f
                )));
            };
            let h = chan.coefficients(k, t, f);
            for (y, hr) in vectors[slot].iter_mut().zip(h) {
                *y += hr * x;
            }
        }
    }
    Ok(RxResourceGrid { index, vectors })
}

/// Relaxed ML count estimate `|y|^2 / (E_s R) - noise_var / E_s`.
/// May be negative or fractional; clipped only when `clip_counts` is set.
pub fn estimate_count(y: &[Complex64], cfg: &PhyConfig) -> f64 {
    let energy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    let raw = energy / (cfg.symbol_energy * cfg.num_antennas as f64)
        - cfg.noise_var / cfg.symbol_energy;
    if cfg.clip_counts {
        raw.clamp(0.0, cfg.num_eds as f64)
    } else {
        raw
    }
}

/// Exhaustive constrained ML count detection over integer count vectors with
/// `sum <= K`. Test oracle for the relaxed estimator; guarded against large
/// search spaces.
pub fn estimate_count_ml(ys: &[Vec<Complex64>], cfg: &PhyConfig) -> Result<Vec<u32>, PhyError> {
    cfg.validate()?;
    let k = cfg.num_eds as u64;
    let slots = ys.len() as u32;
    let space = (k + 1).checked_pow(slots).ok_or(PhyError::SearchSpaceTooLarge(u64::MAX))?;
    if space > 1_000_000 {
        return Err(PhyError::SearchSpaceTooLarge(space));
    }
    let energies: Vec<f64> = ys.iter().map(|y| y.iter().map(|v| v.norm_sqr()).sum()).collect();
    let r = cfg.num_antennas as f64;

    let mut best = vec![0u32; ys.len()];
    let mut best_cost = f64::INFINITY;
    let mut current = vec![0u32; ys.len()];
    search(
        0,
        cfg.num_eds as u32,
        &energies,
        r,
        cfg,
        &mut current,
        0.0,
        &mut best,
        &mut best_cost,
    );
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn search(
    slot: usize,
    budget: u32,
    energies: &[f64],
    r: f64,
    cfg: &PhyConfig,
    current: &mut Vec<u32>,
    cost_so_far: f64,
    best: &mut Vec<u32>,
    best_cost: &mut f64,
) {
    if slot == energies.len() {
        if cost_so_far < *best_cost {
            *best_cost = cost_so_far;
            best.clone_from(current);
        }
        return;
    }
    for n in 0..=budget {
        let var = (cfg.symbol_energy * n as f64 + cfg.noise_var).max(1e-300);
        let cost = 2.0 * r * (var / 2.0).ln() + 2.0 * energies[slot] / var;
        current[slot] = n;
        search(slot + 1, budget - n, energies, r, cfg, current, cost_so_far + cost, best, best_cost);
    }
    current[slot] = 0;
}

/// Decodes the gradient estimates from a received grid: per gradient, count
/// estimates per numeral position feed the symbol-weighted average, which is
/// then decoded through the numeral map.
pub fn estimate_gradient(
    grid: &RxResourceGrid,
    rsets: &[ResourceSet],
    cfg: &PhyConfig,
    codec: &CodecConfig,
    symbols: &SymbolSet,
) -> Result<Vec<f64>, PhyError> {
    let k = cfg.num_eds as f64;
    let d = codec.digits as usize;
    let mut out = Vec::with_capacity(rsets.len());
    for rset in rsets {
        let mut averaged = vec![0.0f64; d];
        for i in 0..d {
            let mut mu = 0.0;
            for (l, &a) in symbols.symbols()[..symbols.len() - 1].iter().enumerate() {
                let y = grid
                    .vector(rset.pair(i, l))
                    .ok_or_else(|| PhyError::DimensionMismatch("resource element missing from grid".into()))?;
                mu += a as f64 * estimate_count(y, cfg);
            }
            averaged[d - 1 - i] = mu / k;
        }
        let g = crate::numerals::decode(&averaged, codec)
            .map_err(|e| PhyError::DimensionMismatch(e.to_string()))?;
        out.push(g);
    }
    Ok(out)
}
