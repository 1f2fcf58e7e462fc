//! Per-link received-power tracking with a scalar Kalman filter and the
//! sigmoid mapping from the filtered power to a link-quality score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Received power for a transmit power `p_t` (watts) and a dimensionless
/// path loss `pl >= 1`.
pub fn received_power(p_t: f64, pl: f64) -> Result<f64> {
    if !(p_t > 0.0) || !p_t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "transmit power must be positive, got {p_t}"
        )));
    }
    if !(pl >= 1.0) || !pl.is_finite() {
        return Err(Error::InvalidInput(format!("path loss must be >= 1, got {pl}")));
    }
    Ok(p_t / pl)
}

/// Noise and model constants of the scalar filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// State transition constant.
    pub k_transition: f64,
    /// Measurement constant.
    pub h_measure: f64,
    /// Process noise covariance.
    pub q_process: f64,
    /// Measurement noise covariance.
    pub z_measure: f64,
    /// Covariance assigned at initialization.
    pub initial_covariance: f64,
}

impl KalmanParams {
    /// Defaults scaled to a typical received-power magnitude.
    pub fn scaled_to(typical: f64) -> Self {
        let t2 = typical * typical;
        Self {
            k_transition: 1.0,
            h_measure: 1.0,
            q_process: 1e-4 * t2,
            z_measure: 1e-2 * t2,
            initial_covariance: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = [
            self.k_transition,
            self.h_measure,
            self.q_process,
            self.z_measure,
            self.initial_covariance,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.q_process < 0.0 || self.z_measure < 0.0 || self.initial_covariance < 0.0 {
            return Err(Error::InvalidInput(format!("invalid Kalman parameters {self:?}")));
        }
        Ok(())
    }
}

/// Scalar filter state: the corrected estimate, its covariance and the
/// sigmoid center fixed at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub estimate: f64,
    pub covariance: f64,
    pub params: KalmanParams,
    /// Population standard deviation of the initialization batch.
    pub theta: f64,
    pub initialized: bool,
}

impl KalmanState {
    /// A state that has not seen its first batch yet.
    pub fn uninitialized(params: KalmanParams) -> Self {
        Self {
            estimate: 0.0,
            covariance: params.initial_covariance,
            params,
            theta: 0.0,
            initialized: false,
        }
    }
}

/// Starts a filter from its first batch of received-power values.
pub fn kf_init(first_batch: &[f64], params: KalmanParams) -> Result<KalmanState> {
    if first_batch.is_empty() {
        return Err(Error::InvalidInput("initialization batch is empty".into()));
    }
    if first_batch.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initialization batch has non-finite values".into()));
    }
    params.validate()?;
    let n = first_batch.len() as f64;
    let mean = first_batch.iter().sum::<f64>() / n;
    let var = first_batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(KalmanState {
        estimate: mean,
        covariance: params.initial_covariance,
        params,
        theta: var.sqrt(),
        initialized: true,
    })
}

/// Time update. The process noise enters only through `Q`.
pub fn kf_predict(state: &KalmanState) -> Result<KalmanState> {
    if !state.initialized {
        return Err(Error::Uninitialized);
    }
    let k = state.params.k_transition;
    Ok(KalmanState {
        estimate: k * state.estimate,
        covariance: k * state.covariance * k + state.params.q_process,
        ..*state
    })
}

/// Measurement update with the observed received power `measurement`.
pub fn kf_update(prior: &KalmanState, measurement: f64) -> Result<KalmanState> {
    if !prior.initialized {
        return Err(Error::Uninitialized);
    }
    let h = prior.params.h_measure;
    let innovation_var = h * prior.covariance * h + prior.params.z_measure;
    if innovation_var == 0.0 {
        return Err(Error::DegenerateGain);
    }
    let gain = prior.covariance * h / innovation_var;
    let estimate = prior.estimate + gain * (measurement - h * prior.estimate);
    // (1 - MH) can dip below zero by rounding when the gain saturates.
    let covariance = ((1.0 - gain * h) * prior.covariance).max(0.0);
    Ok(KalmanState {
        estimate,
        covariance,
        ..*prior
    })
}

/// Kalman gain the next update would use.
pub fn kf_gain(prior: &KalmanState) -> f64 {
    let h = prior.params.h_measure;
    prior.covariance * h / (h * prior.covariance * h + prior.params.z_measure)
}

/// Link quality in (0, 1): a logistic function of the estimate centered at
/// `theta`.
pub fn link_quality(state: &KalmanState) -> Result<f64> {
    if !state.initialized {
        return Err(Error::Uninitialized);
    }
    Ok(sigmoid(state.estimate - state.theta))
}

fn sigmoid(x: f64) -> f64 {
    // Keep the result strictly inside (0, 1) for any finite argument.
    let x = x.clamp(-700.0, 36.0);
    1.0 / (1.0 + (-x).exp())
}

/// Units the estimator works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PowerScale {
    /// Watts, as measured.
    Linear,
    /// Decibels relative to a reference power.
    #[default]
    Db,
}

/// Configuration of a [`LinkEstimator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub params: KalmanParams,
    pub batch_size: usize,
    pub scale: PowerScale,
    /// Reference power in watts for [`PowerScale::Db`].
    pub reference_w: f64,
}

impl EstimatorConfig {
    /// Converts a received power in watts into the estimator's units.
    pub fn to_units(&self, watts: f64) -> f64 {
        match self.scale {
            PowerScale::Linear => watts,
            PowerScale::Db => 10.0 * (watts / self.reference_w).log10(),
        }
    }
}

/// Tracks one directed link: buffers the first batch of samples, then runs
/// predict/update on every new sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEstimator {
    batch: Vec<f64>,
    state: Option<KalmanState>,
}

impl Default for LinkEstimator {
    fn default() -> Self {
        Self::new()
    }
}

impl LinkEstimator {
    pub fn new() -> Self {
        Self {
            batch: Vec::new(),
            state: None,
        }
    }

    /// Feeds one received-power sample, in watts.
    pub fn observe(&mut self, cfg: &EstimatorConfig, watts: f64) -> Result<()> {
        let value = cfg.to_units(watts);
        match &mut self.state {
            Some(state) => {
                let prior = kf_predict(state)?;
                *state = kf_update(&prior, value)?;
            }
            None => {
                self.batch.push(value);
                if self.batch.len() >= cfg.batch_size.max(1) {
                    self.state = Some(kf_init(&self.batch, cfg.params)?);
                    self.batch = Vec::new();
                }
            }
        }
        Ok(())
    }

    pub fn state(&self) -> Option<&KalmanState> {
        self.state.as_ref()
    }

    /// Link quality, or `None` until the first batch is complete.
    pub fn quality(&self) -> Option<f64> {
        self.state.as_ref().and_then(|s| link_quality(s).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: f64, h: f64, q: f64, z: f64) -> KalmanParams {
        KalmanParams {
            k_transition: k,
            h_measure: h,
            q_process: q,
            z_measure: z,
            initial_covariance: 1.0,
        }
    }

    fn state(est: f64, cov: f64, p: KalmanParams) -> KalmanState {
        KalmanState {
            estimate: est,
            covariance: cov,
            params: p,
            theta: 0.0,
            initialized: true,
        }
    }

    #[test]
    fn received_power_examples() {
        assert_eq!(received_power(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(received_power(2.0, 4.0).unwrap(), 0.5);
        assert!((received_power(1e-3, 1e6).unwrap() - 1e-9).abs() < 1e-24);
        assert!(received_power(0.0, 2.0).is_err());
        assert!(received_power(1.0, 0.5).is_err());
    }

    #[test]
    fn init_examples() {
        let p = params(1.0, 1.0, 0.0, 0.0);
        let s = kf_init(&[3.0, 3.0, 3.0], p).unwrap();
        assert_eq!((s.estimate, s.theta), (3.0, 0.0));
        let s = kf_init(&[1.0, 3.0], p).unwrap();
        assert_eq!((s.estimate, s.theta), (2.0, 1.0));
        // mean 5, population variance (9 + 1 + 1 + 9) / 4 = 5
        let s = kf_init(&[2.0, 4.0, 6.0, 8.0], p).unwrap();
        assert_eq!(s.estimate, 5.0);
        assert!((s.theta - 5f64.sqrt()).abs() < 1e-15);
        assert!(s.initialized);
        assert_eq!(s.covariance, 1.0);
        assert!(kf_init(&[], p).is_err());
    }

    #[test]
    fn predict_examples() {
        let s = kf_predict(&state(5.0, 0.2, params(1.0, 1.0, 0.0, 1.0))).unwrap();
        assert_eq!((s.estimate, s.covariance), (5.0, 0.2));
        let s = kf_predict(&state(2.0, 1.0, params(1.0, 1.0, 0.01, 1.0))).unwrap();
        assert_eq!(s.estimate, 2.0);
        assert!((s.covariance - 1.01).abs() < 1e-15);
        let s = kf_predict(&state(10.0, 1.0, params(0.9, 1.0, 0.0, 1.0))).unwrap();
        assert!((s.estimate - 9.0).abs() < 1e-15);
        assert!((s.covariance - 0.81).abs() < 1e-15);
        let mut u = state(1.0, 1.0, params(1.0, 1.0, 0.0, 1.0));
        u.initialized = false;
        assert!(matches!(kf_predict(&u), Err(Error::Uninitialized)));
    }

    #[test]
    fn update_examples() {
        let s = kf_update(&state(3.0, 0.5, params(1.0, 1.0, 0.0, 0.0)), 7.0).unwrap();
        assert_eq!((s.estimate, s.covariance), (7.0, 0.0));

        let s = kf_update(&state(2.0, 1.01, params(1.0, 1.0, 0.0, 1e12)), 2.5).unwrap();
        assert!((s.estimate - 2.0).abs() < 1e-9);
        assert!((s.covariance - 1.01).abs() < 1e-9);

        let prior = state(2.0, 1.01, params(1.0, 1.0, 0.0, 0.04));
        assert!((kf_gain(&prior) - 0.961_904_761_904_761_8).abs() < 1e-12);
        let s = kf_update(&prior, 2.5).unwrap();
        assert!((s.estimate - 2.480_952_380_952_381).abs() < 1e-6);
        assert!((s.covariance - 0.038_476_190_476_190_57).abs() < 1e-6);

        let degenerate = state(2.0, 0.0, params(1.0, 1.0, 0.0, 0.0));
        assert!(matches!(kf_update(&degenerate, 1.0), Err(Error::DegenerateGain)));
    }

    #[test]
    fn quality_examples() {
        let mut s = state(4.0, 1.0, params(1.0, 1.0, 0.0, 1.0));
        s.theta = 4.0;
        assert_eq!(link_quality(&s).unwrap(), 0.5);
        s.theta = 2.0;
        assert!((link_quality(&s).unwrap() - 0.880_797_077_977_882_3).abs() < 1e-12);
        s.estimate = -1e6;
        let q = link_quality(&s).unwrap();
        assert!(q > 0.0 && q < 1e-300);
        s.estimate = 1e6;
        assert!(link_quality(&s).unwrap() < 1.0);
    }

    #[test]
    fn estimator_batches_then_filters() {
        let cfg = EstimatorConfig {
            params: params(1.0, 1.0, 0.0, 1.0),
            batch_size: 3,
            scale: PowerScale::Linear,
            reference_w: 1.0,
        };
        let mut est = LinkEstimator::new();
        est.observe(&cfg, 1.0).unwrap();
        est.observe(&cfg, 3.0).unwrap();
        assert!(est.quality().is_none());
        est.observe(&cfg, 2.0).unwrap();
        let s = *est.state().unwrap();
        assert_eq!(s.estimate, 2.0);
        est.observe(&cfg, 2.0).unwrap();
        assert_eq!(est.state().unwrap().theta, s.theta);
    }

    #[test]
    fn db_scale_is_relative_to_reference() {
        let cfg = EstimatorConfig {
            params: params(1.0, 1.0, 0.0, 1.0),
            batch_size: 1,
            scale: PowerScale::Db,
            reference_w: 1e-9,
        };
        assert!((cfg.to_units(1e-8) - 10.0).abs() < 1e-12);
        assert!((cfg.to_units(1e-9)).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn covariance_stays_non_negative_and_gain_bounded(
                q in 0.0f64..10.0,
                z in 0.0f64..10.0,
                cov in 0.0f64..10.0,
                xs in proptest::collection::vec(-100.0f64..100.0, 1..40),
            ) {
                prop_assume!(z > 0.0 || cov + q > 0.0);
                let mut s = state(0.0, cov, params(1.0, 1.0, q, z));
                for x in xs {
                    let prior = kf_predict(&s).unwrap();
                    let m = kf_gain(&prior);
                    prop_assert!((0.0..=1.0).contains(&m));
                    s = kf_update(&prior, x).unwrap();
                    prop_assert!(s.covariance >= 0.0);
                }
            }

            #[test]
            fn constant_measurement_converges(x in -50.0f64..50.0, start in -50.0f64..50.0, z in 0.01f64..5.0) {
                let mut s = state(start, 1.0, params(1.0, 1.0, 0.0, z));
                let mut err = (s.estimate - x).abs();
                for _ in 0..200 {
                    s = kf_update(&kf_predict(&s).unwrap(), x).unwrap();
                    let e = (s.estimate - x).abs();
                    prop_assert!(e <= err + 1e-12);
                    err = e;
                }
                prop_assert!(err < 0.05 * (start - x).abs().max(1e-9) + 1e-9);
            }

            #[test]
            fn quality_is_monotone(a in -500.0f64..500.0, d in 1e-3f64..50.0, theta in 0.0f64..10.0) {
                let mut s = state(a, 1.0, params(1.0, 1.0, 0.0, 1.0));
                s.theta = theta;
                let lo = link_quality(&s).unwrap();
                s.estimate = a + d;
                let hi = link_quality(&s).unwrap();
                prop_assert!(lo > 0.0 && hi < 1.0);
                prop_assert!(hi >= lo);
            }
        }
    }
}
