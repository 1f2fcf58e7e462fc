//! Terahertz-band channel: spreading loss with molecular absorption, and
//! log-normal fluctuation of received-power samples.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub carrier_freq_hz: f64,
    /// Molecular absorption coefficient, 1/m.
    pub absorption_per_m: f64,
    /// Standard deviation of received-power fluctuation, dB.
    pub fluctuation_db: f64,
    pub propagation_speed_mps: f64,
}

impl ChannelModel {
    /// Path loss at `distance_m`: `(4 pi d f / c)^2 * exp(k d)`, floored at 1
    /// inside the near field where the spreading term drops below unity.
    pub fn path_loss(&self, distance_m: f64) -> Result<f64> {
        if !(distance_m > 0.0) || !distance_m.is_finite() {
            return Err(Error::InvalidInput(format!(
                "distance must be positive, got {distance_m}"
            )));
        }
        let spreading =
            (4.0 * std::f64::consts::PI * distance_m * self.carrier_freq_hz / self.propagation_speed_mps).powi(2);
        let absorption = (self.absorption_per_m * distance_m).exp();
        Ok((spreading * absorption).max(1.0))
    }

    /// A received-power sample: `true_power` perturbed by Gaussian noise in
    /// the dB domain.
    pub fn sample_rssi<R: Rng + ?Sized>(&self, true_power: f64, rng: &mut R) -> f64 {
        if self.fluctuation_db == 0.0 {
            return true_power;
        }
        let n: f64 = StandardNormal.sample(rng);
        true_power * 10f64.powf(n * self.fluctuation_db / 10.0)
    }

    /// One-way propagation delay in seconds.
    pub fn propagation_delay_s(&self, distance_m: f64) -> f64 {
        distance_m / self.propagation_speed_mps
    }
}
