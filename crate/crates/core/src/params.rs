use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retrieval size `k`, kernel temperature and interpolation weight `lambda`
/// (the weight given to the base model distribution).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    k: usize,
    temperature: f64,
    lambda: f64,
}

impl Hyperparams {
    pub const DEFAULT_K: usize = 256;
    pub const DEFAULT_TEMPERATURE: f64 = 1.0;
    pub const DEFAULT_LAMBDA: f64 = 0.5;

    pub fn new(k: usize, temperature: f64, lambda: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(Self {
            k,
            temperature,
            lambda,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: Self::DEFAULT_K,
            temperature: Self::DEFAULT_TEMPERATURE,
            lambda: Self::DEFAULT_LAMBDA,
        }
    }
}
