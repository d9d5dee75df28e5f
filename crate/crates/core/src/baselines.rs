//! Non-coherent comparison schemes: Goldenbaum's analog energy aggregation
//! and FSK-based majority vote.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Analog energy scheme: values are shifted into non-negative energies with an
/// affine map and spread over a unimodular sequence of length `seq_len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldenbaumConfig {
    pub seq_len: usize,
    pub v_max: f64,
}

impl GoldenbaumConfig {
    /// Affine pre-processing slope 1/v_max.
    pub fn slope(&self) -> f64 {
        1.0 / self.v_max
    }

    /// Affine pre-processing offset v_max.
    pub fn offset(&self) -> f64 {
        self.v_max
    }

    /// epsilon(v) = v/v_max + v_max after clamping, floored at zero (the
    /// affine map dips below zero near -v_max when v_max < 1).
    pub fn energy_of(&self, v: f64) -> f64 {
        let clamped = v.clamp(-self.v_max, self.v_max);
        (self.slope() * clamped + self.offset()).max(0.0)
    }
}

/// Transmit sequence: constant magnitude `sqrt(epsilon(v))` with phases drawn
/// from the QPSK alphabet `{1, -1, j, -j}`.
pub fn goldenbaum_tx(v: f64, cfg: &GoldenbaumConfig, rng: &mut impl Rng) -> Vec<Complex64> {
    let amp = cfg.energy_of(v).sqrt();
    (0..cfg.seq_len)
        .map(|_| match rng.gen_range(0u8..4) {
            0 => Complex64::new(amp, 0.0),
            1 => Complex64::new(-amp, 0.0),
            2 => Complex64::new(0.0, amp),
            _ => Complex64::new(0.0, -amp),
        })
        .collect()
}

/// Receiver: averages received energy over the sequence elements and antennas,
/// subtracts the noise floor, reverses the affine map, and divides by the
/// device count. The resulting mean is clamped to `[-v_max, v_max]`.
pub fn goldenbaum_rx(
    received: &[Vec<Complex64>],
    num_eds: usize,
    num_antennas: usize,
    noise_var: f64,
    cfg: &GoldenbaumConfig,
) -> f64 {
    let mut energy = 0.0;
    for y in received {
        for v in y {
            energy += v.norm_sqr();
        }
    }
    let avg = energy / (received.len() as f64 * num_antennas as f64);
    let sum = (avg - noise_var - num_eds as f64 * cfg.offset()) / cfg.slope();
    (sum / num_eds as f64).clamp(-cfg.v_max, cfg.v_max)
}

/// Sign keying: `sqrt(2)` on the subcarrier matching the sign, zero on the
/// other. Convention: +1 activates the first subcarrier of the pair.
pub fn fskmv_tx(sign: i8) -> (Complex64, Complex64) {
    let amp = Complex64::new(std::f64::consts::SQRT_2, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    if sign >= 0 {
        (amp, zero)
    } else {
        (zero, amp)
    }
}

/// Majority-vote detection by energy comparison; equal energies detect +1.
pub fn fskmv_rx(y_plus: &[Complex64], y_minus: &[Complex64]) -> i8 {
    let e_plus: f64 = y_plus.iter().map(|v| v.norm_sqr()).sum();
    let e_minus: f64 = y_minus.iter().map(|v| v.norm_sqr()).sum();
    if e_plus >= e_minus {
        1
    } else {
        -1
    }
}

/// Subcarriers consumed per gradient, for resource accounting against the
/// balanced scheme's `(beta-1) * digits`.
pub fn resources_per_gradient_goldenbaum(cfg: &GoldenbaumConfig) -> usize {
    cfg.seq_len
}

pub fn resources_per_gradient_fskmv() -> usize {
    2
}
