//! Closed-form MSE/BMSE predictors, Monte-Carlo BMSE harness, and error
//! distribution analysis.
//!
//! The closed-form channel term follows the full expectation of the count
//! estimator's conditional variance under binomial symbol counts; it agrees
//! with the pipeline simulation to Monte-Carlo precision.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{fskmv_rx, fskmv_tx, goldenbaum_rx, goldenbaum_tx, GoldenbaumConfig};
use crate::numerals::{self, CodecConfig, SymbolSet};
use crate::phy::{self, PhyConfig, TxMap};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("at least {min} trials required, got {got}")]
    TooFewTrials { min: u64, got: u64 },
    #[error("codec error: {0}")]
    Codec(#[from] numerals::CodecError),
    #[error("phy error: {0}")]
    Phy(#[from] phy::PhyError),
}

/// Aggregation scheme selector shared by the analysis harness and the
/// training loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Scheme {
    /// Balanced-numeral subcarrier activation with the non-coherent receiver.
    Balanced,
    /// Analog energy aggregation over a unimodular sequence.
    Goldenbaum { seq_len: usize },
    /// Sign keying with majority-vote detection.
    Fskmv,
    /// Error-free arithmetic mean (no channel).
    Ideal,
}

/// Per-device gradient distribution for Bayesian MSE evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum GradientDist {
    /// Uniform over the quantizer's full-support interval
    /// `[-v_max', v_max']` (the distribution the closed form assumes).
    Uniform,
    /// Zero-mean Gaussian with the given variance.
    Gaussian { variance: f64 },
}

/// Closed-form Bayesian MSE split into channel and quantization parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BmseBreakdown {
    pub sigma2_channel: f64,
    pub sigma2_quan: f64,
    pub total: f64,
    pub e_channel: f64,
    pub e_quan: f64,
}

/// Monte-Carlo estimate with a 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub trials: u64,
}

/// Error histogram with sample skewness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub skewness: f64,
    pub mean: f64,
    pub trials: u64,
}

/// Pairwise summation; order-insensitive enough to keep parallel reductions
/// reproducible when fed a deterministic slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Independent per-trial RNG stream derived from the master seed.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16..24].copy_from_slice(b"oactrial");
    ChaCha8Rng::from_seed(key)
}

/// Conditional variance of the decoded gradient estimate for fixed symbol
/// counts: `(v_max^2 / (xi^2 R K^2)) sum_i sum_l a_l^2 (K_l + sigma^2/E_s)^2 beta^{2i}`.
pub fn theoretical_var_given_counts(
    counts: &[f64],
    codec: &CodecConfig,
    cfg: &PhyConfig,
) -> Result<f64, StatsError> {
    codec.validate()?;
    let symbols = numerals::symbol_set(codec.beta)?;
    let c = cfg.noise_var / cfg.symbol_energy;
    let mut symbol_term = 0.0;
    for (l, &a) in symbols.symbols()[..symbols.len() - 1].iter().enumerate() {
        let k_l = counts.get(l).copied().unwrap_or(0.0);
        symbol_term += (a * a) as f64 * (k_l + c) * (k_l + c);
    }
    let mut weight = 0.0;
    for i in 0..codec.digits {
        weight += (codec.beta as f64).powi(2 * i as i32);
    }
    let xi = codec.xi() as f64;
    let k = cfg.num_eds as f64;
    Ok(codec.v_max * codec.v_max / (xi * xi * cfg.num_antennas as f64 * k * k)
        * symbol_term
        * weight)
}

/// Closed-form BMSE under uniform gradients on `[-v_max', v_max']`.
///
/// The channel factor is the expectation of the conditional variance over
/// binomial counts with success probability `1/beta`:
/// `E_channel = (1/R) (1/(3 beta) + (1/K)((beta-1)/(3 beta) + 2 c/3) + beta c^2/(3 K^2)) * (beta^D+1)/(beta^D-1)`
/// with `c = sigma_n^2 / E_s`; the quantization factor is
/// `E_quan = 1/(3 K (beta^D - 1)^2)`.
pub fn theoretical_bmse(codec: &CodecConfig, cfg: &PhyConfig) -> Result<BmseBreakdown, StatsError> {
    codec.validate()?;
    let beta = codec.beta as f64;
    let k = cfg.num_eds as f64;
    let r = cfg.num_antennas as f64;
    let c = cfg.noise_var / cfg.symbol_energy;
    let levels = codec.levels() as f64;
    let shape = (levels + 1.0) / (levels - 1.0);

    let e_channel = (1.0 / (3.0 * beta)
        + ((beta - 1.0) / (3.0 * beta) + 2.0 * c / 3.0) / k
        + beta * c * c / (3.0 * k * k))
        / r
        * shape;
    let e_quan = 1.0 / (3.0 * k * (levels - 1.0) * (levels - 1.0));
    let v2 = codec.v_max * codec.v_max;
    Ok(BmseBreakdown {
        sigma2_channel: v2 * e_channel,
        sigma2_quan: v2 * e_quan,
        total: v2 * (e_channel + e_quan),
        e_channel,
        e_quan,
    })
}

fn draw_gradients(
    dist: &GradientDist,
    scheme: &Scheme,
    codec: &CodecConfig,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    match dist {
        GradientDist::Uniform => {
            let half = match scheme {
                Scheme::Balanced => codec.v_max_prime(),
                Scheme::Goldenbaum { .. } => codec.v_max,
                _ => 1.0,
            };
            (0..k).map(|_| rng.gen_range(-half..half)).collect()
        }
        GradientDist::Gaussian { variance } => {
            let normal = Normal::new(0.0, variance.sqrt()).expect("valid variance");
            (0..k).map(|_| normal.sample(rng)).collect()
        }
    }
}

/// One pipeline realization of the aggregation error `ghat - gbar` for a
/// single gradient coordinate.
fn trial_error(
    scheme: &Scheme,
    codec: &CodecConfig,
    cfg: &PhyConfig,
    symbols: &SymbolSet,
    dist: &GradientDist,
    rng: &mut ChaCha8Rng,
) -> Result<f64, StatsError> {
    let grads = draw_gradients(dist, scheme, codec, cfg.num_eds, rng);
    let gbar = pairwise_sum(&grads) / grads.len() as f64;
    let ghat = match scheme {
        Scheme::Ideal => gbar,
        Scheme::Balanced => {
            let rset = phy::resource_map(0, cfg, codec)?;
            let tx: Vec<TxMap> = grads
                .iter()
                .map(|&g| {
                    let seq = numerals::encode(g, codec)?;
                    Ok(phy::modulate(&seq, &rset, symbols, cfg.symbol_energy, rng))
                })
                .collect::<Result<_, StatsError>>()?;
            let chan = phy::sample_channel(cfg, rng);
            let grid = phy::superpose(&tx, rset.pairs(), &chan, cfg, rng)?;
            phy::estimate_gradient(&grid, std::slice::from_ref(&rset), cfg, codec, symbols)?[0]
        }
        Scheme::Goldenbaum { seq_len } => {
            let gcfg = GoldenbaumConfig { seq_len: *seq_len, v_max: codec.v_max };
            let elements: Vec<(usize, usize)> = (0..*seq_len).map(|f| (0, f)).collect();
            let tx: Vec<TxMap> = grads
                .iter()
                .map(|&g| {
                    let seq = goldenbaum_tx(g, &gcfg, rng);
                    elements.iter().copied().zip(seq).collect()
                })
                .collect();
            let chan = phy::sample_channel(cfg, rng);
            let grid = phy::superpose(&tx, &elements, &chan, cfg, rng)?;
            let received: Vec<Vec<Complex64>> = elements
                .iter()
                .map(|&e| grid.vector(e).expect("element present").to_vec())
                .collect();
            goldenbaum_rx(&received, cfg.num_eds, cfg.num_antennas, cfg.noise_var, &gcfg)
        }
        Scheme::Fskmv => {
            let elements = [(0usize, 0usize), (0, 1)];
            let tx: Vec<TxMap> = grads
                .iter()
                .map(|&g| {
                    let sign = if g >= 0.0 { 1i8 } else { -1 };
                    let (p, m) = fskmv_tx(sign);
                    vec![(elements[0], p), (elements[1], m)]
                })
                .collect();
            let chan = phy::sample_channel(cfg, rng);
            let grid = phy::superpose(&tx, &elements, &chan, cfg, rng)?;
            fskmv_rx(
                grid.vector(elements[0]).expect("element present"),
                grid.vector(elements[1]).expect("element present"),
            ) as f64
        }
    };
    Ok(ghat - gbar)
}

fn collect_errors(
    scheme: &Scheme,
    codec: &CodecConfig,
    cfg: &PhyConfig,
    dist: &GradientDist,
    trials: u64,
    seed: u64,
) -> Result<Vec<f64>, StatsError> {
    codec.validate()?;
    cfg.validate()?;
    let symbols = numerals::symbol_set(codec.beta)?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            trial_error(scheme, codec, cfg, &symbols, dist, &mut rng)
        })
        .collect()
}

/// Monte-Carlo BMSE over fresh gradients, channels, and noise per trial.
pub fn mc_bmse(
    scheme: &Scheme,
    codec: &CodecConfig,
    cfg: &PhyConfig,
    dist: &GradientDist,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, StatsError> {
    if trials < 1000 {
        return Err(StatsError::TooFewTrials { min: 1000, got: trials });
    }
    let errors = collect_errors(scheme, codec, cfg, dist, trials, seed)?;
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let n = trials as f64;
    let mean = pairwise_sum(&sq) / n;
    let centered: Vec<f64> = sq.iter().map(|&s| (s - mean) * (s - mean)).collect();
    let var = pairwise_sum(&centered) / (n - 1.0);
    Ok(McEstimate { mean, ci_halfwidth: 1.96 * (var / n).sqrt(), trials })
}

/// Histogram of the aggregation error with sample skewness.
pub fn error_histogram(
    scheme: &Scheme,
    codec: &CodecConfig,
    cfg: &PhyConfig,
    dist: &GradientDist,
    trials: u64,
    bins: usize,
    seed: u64,
) -> Result<ErrorHistogram, StatsError> {
    if trials < 10_000 {
        return Err(StatsError::TooFewTrials { min: 10_000, got: trials });
    }
    let errors = collect_errors(scheme, codec, cfg, dist, trials, seed)?;
    let n = trials as f64;
    let mean = pairwise_sum(&errors) / n;
    let d2: Vec<f64> = errors.iter().map(|&e| (e - mean) * (e - mean)).collect();
    let d3: Vec<f64> = errors.iter().map(|&e| (e - mean).powi(3)).collect();
    let m2 = pairwise_sum(&d2) / n;
    let m3 = pairwise_sum(&d3) / n;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };

    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let edges: Vec<f64> = (0..=bins).map(|b| lo + span * b as f64 / bins as f64).collect();
    let mut counts = vec![0u64; bins];
    for &e in &errors {
        let idx = (((e - lo) / span) * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    Ok(ErrorHistogram { edges, counts, skewness, mean, trials })
}
