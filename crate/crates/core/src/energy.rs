//! Energy gate for route participation and per-message energy costs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WireSizes;

/// Residual-energy threshold a neighbor must meet to answer discovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGate {
    pub epsilon: f64,
    /// Joules per transmitted bit.
    pub e_bit: f64,
    pub sizes: WireSizes,
}

impl EnergyGate {
    /// The gate whose threshold is `threshold` joules for the given
    /// constant and message sizes; `e_bit` is derived from it.
    pub fn from_threshold(threshold: f64, epsilon: f64, sizes: WireSizes) -> Result<Self> {
        let bits = sizes.establishment_bits();
        if !(threshold > 0.0) || !(epsilon > 0.0) || bits == 0 {
            return Err(Error::InvalidInput(format!(
                "energy gate needs positive threshold, epsilon and sizes (got {threshold}, {epsilon}, {bits} bits)"
            )));
        }
        Ok(Self {
            epsilon,
            e_bit: threshold / (epsilon * bits as f64),
            sizes,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.epsilon * (self.e_bit * self.sizes.establishment_bits() as f64)
    }

    /// Whether a node holding `energy` joules may take part.
    pub fn admits(&self, energy: f64) -> bool {
        energy >= self.threshold()
    }
}

/// Energy charged for a transmission and for its reception.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCosts {
    pub e_bit: f64,
    /// Reception cost as a fraction of the transmission cost.
    pub receive_ratio: f64,
}

impl EnergyCosts {
    pub fn transmit(&self, bits: u32) -> f64 {
        self.e_bit * bits as f64
    }

    pub fn receive(&self, bits: u32) -> f64 {
        self.receive_ratio * self.transmit(bits)
    }
}
