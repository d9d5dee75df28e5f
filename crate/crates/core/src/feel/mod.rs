//! Federated training loop driving the over-the-air aggregation schemes on a
//! desk-scale synthetic task.

pub mod data;
pub mod model;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{fskmv_rx, fskmv_tx, goldenbaum_rx, goldenbaum_tx, GoldenbaumConfig};
use crate::numerals::{self, CodecConfig, SymbolSet};
use crate::phy::{self, PhyConfig, ResourceSet, TxMap};
use crate::stats::{pairwise_sum, Scheme};
use data::PartitionMode;
use model::{accuracy, dataset_loss, loss_and_grad, MlpShape, ModelState};

#[derive(Debug, Error)]
pub enum FeelError {
    #[error("partition error: {0}")]
    Partition(#[from] data::PartitionError),
    #[error("codec error: {0}")]
    Codec(#[from] numerals::CodecError),
    #[error("phy error: {0}")]
    Phy(#[from] phy::PhyError),
    #[error("training diverged at round {round} (loss {loss})")]
    Diverged { round: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Federated-training run description. The device count lives in `phy`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeelConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub partition: PartitionMode,
    pub scheme: Scheme,
    pub beta: u32,
    pub digits: u32,
    pub phy: PhyConfig,
    /// Adapt the codec range each round from the previous round's largest
    /// local gradient norm.
    pub aam_enabled: bool,
    /// Scale on the adapted range; `None` selects `5 / sqrt(Q)`.
    pub aam_alpha: Option<f64>,
    /// Range used in the first round, before any gradient norm is known.
    pub aam_v0: f64,
    pub hidden: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub noise_std: f64,
}

impl FeelConfig {
    pub fn shape(&self) -> MlpShape {
        MlpShape { dim: self.dim, hidden: self.hidden, classes: self.num_classes }
    }

    pub fn alpha(&self) -> f64 {
        self.aam_alpha.unwrap_or(5.0 / (self.shape().num_params() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), FeelError> {
        self.phy.validate()?;
        if self.rounds == 0 || self.batch_size == 0 {
            return Err(FeelError::InvalidConfig("rounds and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(FeelError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(FeelError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.aam_enabled && !(self.aam_v0 > 0.0) {
            return Err(FeelError::InvalidConfig("aam_v0 must be positive".into()));
        }
        Ok(())
    }
}

/// Per-round telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundTrace {
    pub round: usize,
    pub v_max: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub grad_norm: f64,
    /// Mean squared aggregation error against the error-free mean, per
    /// parameter.
    pub bmse_proxy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub traces: Vec<RoundTrace>,
    pub final_state: ModelState,
}

/// Codec range for the next round: `alpha * max_k ||g_k||` with a small floor
/// so the codec stays valid when gradients vanish.
pub fn aam_step(max_norm: f64, alpha: f64) -> f64 {
    (alpha * max_norm).max(1e-12)
}

fn l2_norm(xs: &[f64]) -> f64 {
    pairwise_sum(&xs.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt()
}

/// Momentum SGD step applied in place.
pub fn update(state: &mut ModelState, grad: &[f64], learning_rate: f64, momentum: f64) {
    for ((v, w), g) in state.velocity.iter_mut().zip(&mut state.weights).zip(grad) {
        *v = momentum * *v + g;
        *w -= learning_rate * *v;
    }
}

fn ideal_mean(locals: &[Vec<f64>]) -> Vec<f64> {
    let k = locals.len() as f64;
    let q = locals[0].len();
    (0..q)
        .map(|i| {
            let col: Vec<f64> = locals.iter().map(|g| g[i]).collect();
            pairwise_sum(&col) / k
        })
        .collect()
}

/// Element block for coordinate `qi` when each coordinate consumes `width`
/// adjacent subcarriers; same layout the balanced mapper uses.
fn block_elements(qi: usize, width: usize, cfg: &PhyConfig) -> Vec<(usize, usize)> {
    let per_symbol = cfg.num_subcarriers / width;
    let t = qi / per_symbol;
    let f0 = (qi % per_symbol) * width;
    (0..width).map(|o| (t, f0 + o)).collect()
}

fn aggregate_balanced(
    locals: &[Vec<f64>],
    codec: &CodecConfig,
    symbols: &SymbolSet,
    cfg: &PhyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, FeelError> {
    let q = locals[0].len();
    let cap = cfg.slot_capacity(codec);
    if cap == 0 {
        return Err(FeelError::InvalidConfig("slot holds no gradients for this codec".into()));
    }
    let mut out = Vec::with_capacity(q);
    for chunk_start in (0..q).step_by(cap) {
        let n = cap.min(q - chunk_start);
        let rsets: Vec<ResourceSet> =
            (0..n).map(|qi| phy::resource_map(qi, cfg, codec)).collect::<Result<_, _>>()?;
        let elements: Vec<(usize, usize)> =
            rsets.iter().flat_map(|r| r.pairs().iter().copied()).collect();
        let tx: Vec<TxMap> = locals
            .iter()
            .map(|g| {
                let mut map = TxMap::new();
                for (qi, rset) in rsets.iter().enumerate() {
                    let seq = numerals::encode(g[chunk_start + qi], codec)?;
                    map.extend(phy::modulate(&seq, rset, symbols, cfg.symbol_energy, rng));
                }
                Ok(map)
            })
            .collect::<Result<_, FeelError>>()?;
        // each chunk occupies a fresh slot in time: fresh fading
        let chan = phy::sample_channel(cfg, rng);
        let grid = phy::superpose(&tx, &elements, &chan, cfg, rng)?;
        out.extend(phy::estimate_gradient(&grid, &rsets, cfg, codec, symbols)?);
    }
    Ok(out)
}

fn aggregate_goldenbaum(
    locals: &[Vec<f64>],
    v_max: f64,
    seq_len: usize,
    cfg: &PhyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, FeelError> {
    let gcfg = GoldenbaumConfig { seq_len, v_max };
    let q = locals[0].len();
    let per_symbol = cfg.num_subcarriers / seq_len;
    let cap = per_symbol * cfg.num_symbols;
    if cap == 0 {
        return Err(FeelError::InvalidConfig("slot holds no gradients for this sequence".into()));
    }
    let mut out = Vec::with_capacity(q);
    for chunk_start in (0..q).step_by(cap) {
        let n = cap.min(q - chunk_start);
        let blocks: Vec<Vec<(usize, usize)>> =
            (0..n).map(|qi| block_elements(qi, seq_len, cfg)).collect();
        let elements: Vec<(usize, usize)> = blocks.iter().flatten().copied().collect();
        let tx: Vec<TxMap> = locals
            .iter()
            .map(|g| {
                let mut map = TxMap::new();
                for (qi, block) in blocks.iter().enumerate() {
                    let seq = goldenbaum_tx(g[chunk_start + qi], &gcfg, rng);
                    map.extend(block.iter().copied().zip(seq));
                }
                map
            })
            .collect();
        let chan = phy::sample_channel(cfg, rng);
        let grid = phy::superpose(&tx, &elements, &chan, cfg, rng)?;
        for block in &blocks {
            let received: Vec<Vec<Complex64>> = block
                .iter()
                .map(|&e| grid.vector(e).expect("element present").to_vec())
                .collect();
            out.push(goldenbaum_rx(&received, cfg.num_eds, cfg.num_antennas, cfg.noise_var, &gcfg));
        }
    }
    Ok(out)
}

fn aggregate_fskmv(
    locals: &[Vec<f64>],
    cfg: &PhyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, FeelError> {
    let q = locals[0].len();
    let per_symbol = cfg.num_subcarriers / 2;
    let cap = per_symbol * cfg.num_symbols;
    let mut out = Vec::with_capacity(q);
    for chunk_start in (0..q).step_by(cap) {
        let n = cap.min(q - chunk_start);
        let blocks: Vec<Vec<(usize, usize)>> = (0..n).map(|qi| block_elements(qi, 2, cfg)).collect();
        let elements: Vec<(usize, usize)> = blocks.iter().flatten().copied().collect();
        let tx: Vec<TxMap> = locals
            .iter()
            .map(|g| {
                let mut map = TxMap::with_capacity(2 * n);
                for (qi, block) in blocks.iter().enumerate() {
                    let sign = if g[chunk_start + qi] >= 0.0 { 1i8 } else { -1 };
                    let (p, m) = fskmv_tx(sign);
                    map.push((block[0], p));
                    map.push((block[1], m));
                }
                map
            })
            .collect();
        let chan = phy::sample_channel(cfg, rng);
        let grid = phy::superpose(&tx, &elements, &chan, cfg, rng)?;
        for block in &blocks {
            let vote = fskmv_rx(
                grid.vector(block[0]).expect("element present"),
                grid.vector(block[1]).expect("element present"),
            );
            out.push(vote as f64);
        }
    }
    Ok(out)
}

/// One over-the-air aggregation round: returns the server-side gradient
/// estimate and the error-free mean for diagnostics.
pub fn aggregate_round(
    locals: &[Vec<f64>],
    scheme: &Scheme,
    v_max: f64,
    beta: u32,
    digits: u32,
    cfg: &PhyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>), FeelError> {
    let mean = ideal_mean(locals);
    let estimate = match scheme {
        Scheme::Ideal => mean.clone(),
        Scheme::Balanced => {
            let codec = CodecConfig::new(beta, digits, v_max)?;
            let symbols = numerals::symbol_set(beta)?;
            aggregate_balanced(locals, &codec, &symbols, cfg, rng)?
        }
        Scheme::Goldenbaum { seq_len } => {
            aggregate_goldenbaum(locals, v_max, *seq_len, cfg, rng)?
        }
        Scheme::Fskmv => aggregate_fskmv(locals, cfg, rng)?,
    };
    Ok((estimate, mean))
}

/// Mini-batch with replacement; a batch covering the whole shard degenerates
/// to the full local gradient.
fn sample_batch(shard: &[usize], batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
    if batch_size >= shard.len() {
        return shard.to_vec();
    }
    (0..batch_size).map(|_| shard[rng.gen_range(0..shard.len())]).collect()
}

/// Runs federated training end to end; fully deterministic in the seed.
pub fn train(cfg: &FeelConfig, seed: u64) -> Result<TrainResult, FeelError> {
    cfg.validate()?;
    let shape = cfg.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (train_set, test_set) = data::synthetic_blobs(
        cfg.num_classes,
        cfg.dim,
        cfg.per_class_train,
        cfg.per_class_test,
        cfg.noise_std,
        &mut rng,
    );
    let shards = data::partition(&train_set, cfg.partition, cfg.phy.num_eds, &mut rng)?;
    let mut state = ModelState::init(&shape, &mut rng);

    let q = shape.num_params();
    let alpha = cfg.alpha();
    let mut v_max = if cfg.aam_enabled { cfg.aam_v0 } else { 1.0 };
    let mut traces = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let locals: Vec<Vec<f64>> = shards
            .iter()
            .map(|shard| {
                let batch = sample_batch(shard, cfg.batch_size, &mut rng);
                loss_and_grad(&shape, &state.weights, &train_set, &batch).1
            })
            .collect();
        let max_norm = locals.iter().map(|g| l2_norm(g)).fold(0.0, f64::max);

        let (estimate, mean) = aggregate_round(
            &locals,
            &cfg.scheme,
            v_max,
            cfg.beta,
            cfg.digits,
            &cfg.phy,
            &mut rng,
        )?;
        let err: Vec<f64> = estimate.iter().zip(&mean).map(|(e, m)| (e - m) * (e - m)).collect();
        let bmse_proxy = pairwise_sum(&err) / q as f64;

        update(&mut state, &estimate, cfg.learning_rate, cfg.momentum);

        let train_loss = dataset_loss(&shape, &state.weights, &train_set);
        if !train_loss.is_finite() {
            return Err(FeelError::Diverged { round, loss: train_loss });
        }
        let test_accuracy = accuracy(&shape, &state.weights, &test_set);
        traces.push(RoundTrace {
            round,
            v_max,
            train_loss,
            test_accuracy,
            grad_norm: max_norm,
            bmse_proxy,
        });

        if cfg.aam_enabled {
            v_max = aam_step(max_norm, alpha);
        }
    }
    Ok(TrainResult { traces, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(scheme: Scheme) -> FeelConfig {
        FeelConfig {
            rounds: 3,
            learning_rate: 0.05,
            momentum: 0.0,
            batch_size: 8,
            partition: PartitionMode::Homogeneous,
            scheme,
            beta: 5,
            digits: 2,
            phy: PhyConfig {
                num_eds: 5,
                num_antennas: 2,
                noise_var: 0.01,
                symbol_energy: 4.0,
                num_subcarriers: 1200,
                num_symbols: 14,
                sync_error_samples: 0,
                fft_size: 2048,
                sync_spread: 0.0,
                clip_counts: false,
            },
            aam_enabled: true,
            aam_alpha: None,
            aam_v0: 0.2,
            hidden: 6,
            num_classes: 4,
            dim: 8,
            per_class_train: 10,
            per_class_test: 5,
            noise_std: 0.2,
        }
    }

    #[test]
    fn momentum_update_matches_closed_form() {
        let shape = MlpShape { dim: 1, hidden: 1, classes: 1 };
        let mut state = ModelState::zeros(&shape);
        let g = vec![1.0; shape.num_params()];
        update(&mut state, &g, 0.1, 0.9);
        update(&mut state, &g, 0.1, 0.9);
        // v1 = g, v2 = 0.9 g + g -> w = -0.1 (1 + 1.9) g
        for w in &state.weights {
            assert!((w + 0.1 * (1.0 + 1.9)).abs() < 1e-12);
        }
    }

    #[test]
    fn aam_step_scales_and_floors() {
        assert!((aam_step(2.0, 0.25) - 0.5).abs() < 1e-15);
        assert_eq!(aam_step(0.0, 0.25), 1e-12);
    }

    #[test]
    fn ideal_aggregation_is_exact_mean() {
        let locals = vec![vec![1.0, -2.0], vec![3.0, 4.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = small_cfg(Scheme::Ideal);
        let (est, mean) =
            aggregate_round(&locals, &Scheme::Ideal, 1.0, 5, 2, &cfg.phy, &mut rng).unwrap();
        assert_eq!(est, vec![2.0, 1.0]);
        assert_eq!(est, mean);
    }

    #[test]
    fn balanced_aggregation_tracks_mean_at_high_snr() {
        // many antennas, low noise: estimate should sit near the true mean
        let mut cfg = small_cfg(Scheme::Balanced);
        cfg.phy.num_antennas = 64;
        cfg.phy.noise_var = 1e-4;
        let locals: Vec<Vec<f64>> = (0..5)
            .map(|k| (0..40).map(|i| ((k * 40 + i) as f64).sin() * 0.5).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (est, mean) =
            aggregate_round(&locals, &Scheme::Balanced, 1.0, 5, 2, &cfg.phy, &mut rng).unwrap();
        let mse: f64 = est
            .iter()
            .zip(&mean)
            .map(|(e, m)| (e - m) * (e - m))
            .sum::<f64>()
            / est.len() as f64;
        assert!(mse < 5e-3, "mse {}", mse);
    }

    #[test]
    fn chunking_covers_every_coordinate() {
        // grid fits 4 gradients per chunk at beta=3, D=2 on 16 subcarriers;
        // 11 coordinates force three chunks including a partial one
        let mut cfg = small_cfg(Scheme::Balanced);
        cfg.phy.num_subcarriers = 16;
        cfg.phy.num_symbols = 1;
        cfg.phy.num_antennas = 64;
        cfg.phy.noise_var = 1e-4;
        let locals: Vec<Vec<f64>> =
            (0..5).map(|k| (0..11).map(|i| ((k + i) as f64 * 0.7).cos() * 0.4).collect()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (est, mean) =
            aggregate_round(&locals, &Scheme::Balanced, 1.0, 3, 2, &cfg.phy, &mut rng).unwrap();
        assert_eq!(est.len(), 11);
        for (e, m) in est.iter().zip(&mean) {
            assert!((e - m).abs() < 0.3, "{} vs {}", e, m);
        }
    }

    #[test]
    fn fskmv_returns_signs() {
        let cfg = small_cfg(Scheme::Fskmv);
        let locals: Vec<Vec<f64>> =
            (0..5).map(|k| vec![0.5 + k as f64, -(0.5 + k as f64)]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (est, _) =
            aggregate_round(&locals, &Scheme::Fskmv, 1.0, 5, 2, &cfg.phy, &mut rng).unwrap();
        assert!(est.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let cfg = small_cfg(Scheme::Balanced);
        let a = train(&cfg, 9).unwrap();
        let b = train(&cfg, 9).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.traces, b.traces);
        let c = train(&cfg, 10).unwrap();
        assert_ne!(a.final_state, c.final_state);
    }

    #[test]
    fn ideal_training_learns_the_toy_task() {
        let mut cfg = small_cfg(Scheme::Ideal);
        cfg.rounds = 60;
        cfg.learning_rate = 0.3;
        cfg.batch_size = 16;
        let result = train(&cfg, 4).unwrap();
        let last = result.traces.last().unwrap();
        assert!(last.test_accuracy > 0.8, "accuracy {}", last.test_accuracy);
        assert_eq!(last.bmse_proxy, 0.0);
    }

    #[test]
    fn aam_range_follows_gradient_norms() {
        let mut cfg = small_cfg(Scheme::Ideal);
        cfg.rounds = 5;
        let result = train(&cfg, 7).unwrap();
        let alpha = cfg.alpha();
        assert_eq!(result.traces[0].v_max, cfg.aam_v0);
        for w in result.traces.windows(2) {
            let expect = aam_step(w[0].grad_norm, alpha);
            assert!((w[1].v_max - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_momentum_is_rejected() {
        let mut cfg = small_cfg(Scheme::Ideal);
        cfg.momentum = 1.0;
        assert!(matches!(train(&cfg, 1), Err(FeelError::InvalidConfig(_))));
    }
}
